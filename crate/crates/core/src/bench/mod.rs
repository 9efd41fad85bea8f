//! Experiment runner: sensitivity sweeps, estimator MSE, parametrization
//! comparisons and landscape probes, with CSV tables and SVG charts.

pub mod chart;
pub mod config;
pub mod evaluate;
pub mod mse;
pub mod params;
pub mod sweep;

use std::io::Write;
use std::path::Path;

use crate::bench::chart::{emit_chart, ChartKind, Series};
use crate::bench::config::{ExperimentConfig, MethodVariant, Setup};
use crate::bench::mse::{mean_mse_by_method, mse_report, write_mse_csv, MseRow, ESTIMATOR_SECTION};
use crate::bench::params::{parametrization_report, write_params_runs_csv, write_params_summary_csv, ParamsReport};
use crate::envgen::stratified_dataset;
use crate::error::{Error, Result};
use crate::landscape::{
    basin_census, build_adversarial, build_composite_trap, plateau_length, probe_rows, write_plateau_csv,
    AdversarialSpec, CensusReport, PlateauRow,
};
use crate::par::{map_indexed, with_workers, Execution};
use crate::policy::SoftmaxPolicy;
use crate::trainer::{Schedule, TrainConfig};

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn write_csv_file(path: impl AsRef<Path>, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<()> {
    f(std::fs::File::create(path)?)
}

/// MSE table for the configured targets, plus the per-method mean bar chart.
pub fn run_mse(cfg: &ExperimentConfig, out: Option<&Path>, workers: usize) -> Result<Vec<MseRow>> {
    cfg.validate()?;
    let section = cfg.mse.as_ref().ok_or_else(|| Error::config("config has no `mse` section"))?;
    let env = crate::envgen::make_environment(cfg.environment.as_ref().expect("validated"))?;
    let variants = cfg.variants()?;
    let n = section.n.unwrap_or(cfg.n);
    let rows = with_workers(workers, || mse_report(&env, &section.seeds, n, &variants, &section.targets, cfg.seed, Execution::Parallel))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_csv_file(dir.join("mse.csv"), |w| write_mse_csv(&rows, w))?;
        let bars: Vec<Series> = mean_mse_by_method(&rows)
            .into_iter()
            .filter(|(_, s, _)| s == ESTIMATOR_SECTION)
            .map(|(m, _, v)| Series::new(m, vec![(0.0, v)]))
            .collect();
        if !bars.is_empty() {
            emit_chart(&bars, ChartKind::Bar, "mean estimator MSE over targets", dir.join("mse.svg"))?;
        }
    }
    Ok(rows)
}

/// Light versus heavy parametrization for every method, trained with the
/// first point of the train grid.
pub fn run_params(cfg: &ExperimentConfig, out: Option<&Path>, workers: usize) -> Result<ParamsReport> {
    let section = cfg.params.as_ref().ok_or_else(|| Error::config("config has no `params` section"))?;
    let setup = cfg.prepare()?;
    let variants = cfg.variants()?;
    let point = cfg.train.points()[0];
    let tc = cfg.train.train_config(&point, cfg.train.l2);
    let rep = with_workers(workers, || {
        parametrization_report(&setup, &variants, &section.light, &section.heavy, &tc, &section.seeds, Execution::Parallel)
    })?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_csv_file(dir.join("params_runs.csv"), |w| write_params_runs_csv(&rep.runs, w))?;
        write_csv_file(dir.join("params_summary.csv"), |w| write_params_summary_csv(&rep.summary, w))?;
        emit_chart(&rep.mean_curves(), ChartKind::Line, "mean true value by epoch", dir.join("params.svg"))?;
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeOutput {
    pub plateau: Vec<PlateauRow>,
    /// (method label, census) per method.
    pub census: Vec<(String, CensusReport)>,
}

/// Objective for a landscape probe, built against the probe's own setup.
fn probe_objective(v: &MethodVariant, setup: &Setup, seed: u64) -> Result<crate::objective::Objective> {
    if v.kind.needs_clustering() {
        return Err(Error::config(format!("{} needs a clustering; landscape instances have none", v.label)));
    }
    v.objective(setup, seed)
}

/// Plateau lengths across K and basin censuses on the composite trap for
/// every configured method.
pub fn run_landscape(cfg: &ExperimentConfig, out: Option<&Path>, workers: usize) -> Result<LandscapeOutput> {
    let section = cfg.landscape.as_ref().ok_or_else(|| Error::config("config has no `landscape` section"))?;
    if cfg.methods.is_empty() {
        return Err(Error::config("method list is empty"));
    }
    let variants = cfg.variants()?;
    let mut output = LandscapeOutput {
        plateau: Vec::new(),
        census: Vec::new(),
    };
    if let Some(p) = &section.plateau {
        let jobs: Vec<(usize, &MethodVariant)> = p.ks.iter().flat_map(|&k| variants.iter().map(move |v| (k, v))).collect();
        let rows = with_workers(workers, || {
            map_indexed(Execution::Parallel, jobs.len(), |i| -> Result<PlateauRow> {
                let (k, v) = jobs[i];
                let spec = AdversarialSpec {
                    k,
                    epsilon: p.epsilon.unwrap_or(1.0 / k as f64),
                    gap: p.gap,
                    init_bias: p.init_bias,
                };
                let inst = build_adversarial(&spec)?;
                let setup = Setup {
                    ds: stratified_dataset(&inst.env, probe_rows(&inst.env))?,
                    clustering: None,
                    env: Some(inst.env.clone()),
                };
                let obj = probe_objective(v, &setup, cfg.seed)?;
                let tc = TrainConfig {
                    epochs: p.budget,
                    base_rate: p.base_rate,
                    schedule: Schedule::Constant,
                    l2_strength: v.l2,
                    execution: Execution::Sequential,
                    ..Default::default()
                };
                let rep = plateau_length(&inst.env, &inst.initial_policy, &obj, &tc, p.threshold)?;
                Ok(PlateauRow {
                    k,
                    method: v.label.clone(),
                    iterations: rep.iterations,
                    unescaped: rep.unescaped,
                    initial_value: rep.initial_value,
                    final_value: rep.final_value,
                })
            })
        });
        output.plateau = rows.into_iter().collect::<Result<_>>()?;
    }
    if let Some(c) = &section.census {
        let env = build_composite_trap(c.contexts, c.k, c.epsilon, c.gap, c.spread)?;
        let setup = Setup {
            ds: stratified_dataset(&env, probe_rows(&env))?,
            clustering: None,
            env: Some(env.clone()),
        };
        for v in &variants {
            let obj = probe_objective(v, &setup, cfg.seed)?;
            let tc = TrainConfig {
                epochs: c.epochs,
                base_rate: c.base_rate,
                l2_strength: if v.is_pwll() { c.pwll_l2 } else { c.ope_l2 },
                ..Default::default()
            };
            let template = SoftmaxPolicy::linear(obj.output_dim(c.k), c.contexts);
            let rep = with_workers(workers, || {
                basin_census(&env, &setup.ds, &obj, &template, c.restarts, c.sigma, &tc, cfg.seed, Execution::Parallel)
            })?;
            output.census.push((v.label.clone(), rep));
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        if !output.plateau.is_empty() {
            write_csv_file(dir.join("plateau.csv"), |w| write_plateau_csv(&output.plateau, w))?;
            let series: Vec<Series> = variants
                .iter()
                .map(|v| {
                    let pts = output
                        .plateau
                        .iter()
                        .filter(|r| r.method == v.label)
                        .map(|r| (r.k as f64, r.iterations as f64))
                        .collect();
                    Series::new(v.label.clone(), pts)
                })
                .collect();
            emit_chart(&series, ChartKind::Line, "plateau length by K", dir.join("plateau.svg"))?;
        }
        if !output.census.is_empty() {
            write_csv_file(dir.join("census.csv"), |w| write_census_summary(&output.census, w))?;
            for (i, (_, rep)) in output.census.iter().enumerate() {
                rep.save_csv(dir.join(format!("census_{i}.csv")))?;
            }
        }
    }
    Ok(output)
}

/// CSV `method,restarts,converged,basins`.
pub fn write_census_summary<W: Write>(census: &[(String, CensusReport)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "restarts", "converged", "basins"])?;
    for (m, rep) in census {
        w.write_record([m.clone(), rep.restarts.to_string(), rep.converged.to_string(), rep.num_basins().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landscape_runner_writes_tables() {
        let cfg = ExperimentConfig::from_json(
            r#"{"environment": {"m": 1, "K": 2, "d": 1, "seed": 0}, "methods": [{"name": "ips"}, {"name": "lpi", "l2": 0.01}],
                "landscape": {
                  "plateau": {"ks": [4, 8], "gap": 0.5, "init_bias": 2, "base_rate": 5, "budget": 40, "threshold": 0.1},
                  "census": {"contexts": 2, "K": 4, "epsilon": 0.1, "gap": 0.4, "spread": 0.3, "restarts": 4,
                             "sigma": 2, "epochs": 300, "base_rate": 2, "pwll_l2": 0.01, "ope_l2": 0.001}}}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_landscape(&cfg, Some(dir.path()), 1).unwrap();
        assert_eq!(out.plateau.len(), 4);
        assert_eq!(out.census.len(), 2);
        for f in ["plateau.csv", "plateau.svg", "census.csv", "census_0.csv", "census_1.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn clustered_methods_are_refused_by_landscape_probes() {
        let cfg = ExperimentConfig::from_json(
            r#"{"environment": {"m": 1, "K": 2, "d": 1, "seed": 0}, "methods": [{"name": "mips"}],
                "landscape": {"plateau": {"ks": [4], "gap": 0.5, "init_bias": 2, "base_rate": 5, "budget": 10, "threshold": 0.1}}}"#,
        )
        .unwrap();
        assert!(run_landscape(&cfg, None, 1).unwrap_err().is_config());
    }
}
