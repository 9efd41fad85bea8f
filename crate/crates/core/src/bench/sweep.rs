//! Cartesian sensitivity sweeps over methods and train settings.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::config::{ExperimentConfig, GridPoint, MethodVariant, PolicySpec, Setup, TrainGrid};
use crate::bench::{fmt_opt, write_csv_file};
use crate::envgen::{deployed_value, Environment};
use crate::error::Result;
use crate::objective::Objective;
use crate::ope::ClusterPolicy;
use crate::oracle::{matching_oracle_name, trained_agreement};
use crate::par::{map_indexed, with_workers, Execution};
use crate::policy::SoftmaxPolicy;
use crate::trainer::{deployed_true_value, train, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub method: String,
    pub oracle: String,
    pub pwll: bool,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub l2: f64,
    pub reward_model: Option<String>,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub base_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub final_objective: Option<f64>,
    /// Exact value of the trained stochastic policy.
    pub true_value: Option<f64>,
    /// Exact value of its argmax deployment.
    pub deployed_value: Option<f64>,
    pub oracle_agreement: Option<f64>,
    /// (estimate − true value)² of the method's own estimator at the trained policy.
    pub estimator_sq_error: Option<f64>,
    /// Same quantity for a PWLL objective read as a value estimate; not an estimator.
    pub proxy_sq_error: Option<f64>,
    /// Trace CSV relative to the output directory.
    pub trace_path: Option<String>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub oracle: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// min / max of the final true value across the grid.
    pub robustness: Option<f64>,
    pub deployed_mean: Option<f64>,
    pub deployed_min: Option<f64>,
    pub deployed_max: Option<f64>,
    pub deployed_robustness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn summary_for(&self, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method)
    }
}

fn stats(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None, None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio = if max > 0.0 { Some(min / max) } else { None };
    (Some(mean), Some(min), Some(max), ratio)
}

/// Per-method aggregate over a sweep's records, in first-appearance order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut methods: Vec<(&str, &str)> = Vec::new();
    for r in records {
        if !methods.iter().any(|(m, _)| *m == r.method) {
            methods.push((&r.method, &r.oracle));
        }
    }
    methods
        .into_iter()
        .map(|(method, oracle)| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
            let tv: Vec<f64> = rs.iter().filter_map(|r| r.true_value).collect();
            let dv: Vec<f64> = rs.iter().filter_map(|r| r.deployed_value).collect();
            let (mean, min, max, robustness) = stats(&tv);
            let (deployed_mean, deployed_min, deployed_max, deployed_robustness) = stats(&dv);
            SummaryRow {
                method: method.to_string(),
                oracle: oracle.to_string(),
                runs: rs.len(),
                failed: rs.iter().filter(|r| r.failed()).count(),
                mean,
                min,
                max,
                robustness,
                deployed_mean,
                deployed_min,
                deployed_max,
                deployed_robustness,
            }
        })
        .collect()
}

/// Trains one grid point and scores the result.
#[allow(clippy::too_many_arguments)]
fn execute_run(
    index: usize,
    setup: &Setup,
    variant: &MethodVariant,
    objective: &Result<Objective>,
    policy_spec: &PolicySpec,
    grid: &TrainGrid,
    point: &GridPoint,
    trace_dir: Option<&Path>,
) -> (RunRecord, Option<SoftmaxPolicy>) {
    let mut rec = RunRecord {
        index,
        method: variant.label.clone(),
        oracle: String::new(),
        pwll: variant.is_pwll(),
        tau: variant.tau,
        beta: variant.beta,
        l2: variant.l2,
        reward_model: variant.reward_model.as_ref().map(|r| r.label()),
        batch_size: point.batch_size,
        schedule: point.schedule,
        base_rate: point.base_rate,
        epochs: grid.epochs,
        seed: point.seed,
        final_objective: None,
        true_value: None,
        deployed_value: None,
        oracle_agreement: None,
        estimator_sq_error: None,
        proxy_sq_error: None,
        trace_path: None,
        error: None,
    };
    let objective = match objective {
        Ok(o) => o,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.oracle = matching_oracle_name(objective);
    match score_run(&mut rec, setup, objective, policy_spec, grid, point, trace_dir) {
        Ok(p) => (rec, Some(p)),
        Err(e) => {
            rec.error = Some(e.to_string());
            (rec, None)
        }
    }
}

/// One run outside a sweep; returns the trained policy unless the run failed.
#[allow(clippy::too_many_arguments)]
pub fn execute_single(
    index: usize,
    setup: &Setup,
    variant: &MethodVariant,
    model_seed: u64,
    policy_spec: &PolicySpec,
    grid: &TrainGrid,
    point: &GridPoint,
    out: Option<&Path>,
) -> (RunRecord, Option<SoftmaxPolicy>) {
    let objective = variant.objective(setup, model_seed);
    execute_run(index, setup, variant, &objective, policy_spec, grid, point, out)
}

fn score_run(
    rec: &mut RunRecord,
    setup: &Setup,
    objective: &Objective,
    policy_spec: &PolicySpec,
    grid: &TrainGrid,
    point: &GridPoint,
    trace_dir: Option<&Path>,
) -> Result<SoftmaxPolicy> {
    let template = policy_spec.build(setup, objective)?;
    let tc = grid.train_config(point, rec.l2);
    let env = setup.env.as_ref();
    let (policy, trace) = train(objective, &setup.ds, template, &tc, env)?;
    if let Some(dir) = trace_dir {
        let rel = format!("traces/run_{:04}.csv", rec.index);
        trace.save_csv(dir.join(&rel))?;
        rec.trace_path = Some(rel);
    }
    rec.final_objective = trace.last().map(|r| r.objective);
    let Some(env) = env else { return Ok(policy) };
    let tv = deployed_true_value(env, objective, &policy)?;
    rec.true_value = Some(tv);
    rec.deployed_value = Some(deployed_value_of(env, objective, &policy)?);
    rec.oracle_agreement = Some(trained_agreement(env, objective, &policy)?.fraction);
    let estimate = objective.data_value(&setup.ds, &policy, Execution::Sequential)?;
    let sq = (estimate - tv).powi(2);
    if objective.is_pwll() {
        rec.proxy_sq_error = Some(sq);
    } else {
        rec.estimator_sq_error = Some(sq);
    }
    Ok(policy)
}

fn deployed_value_of(env: &Environment, objective: &Objective, policy: &SoftmaxPolicy) -> Result<f64> {
    match objective.selector() {
        Some(sel) => Ok(deployed_value(env, &ClusterPolicy::new(policy.clone(), sel.clone())?)),
        None => Ok(deployed_value(env, policy)),
    }
}

/// Runs every (method variant × grid point) in a pool of `workers` threads.
/// Results are merged in grid order; a failed run is recorded and the sweep
/// continues. With `out` set, writes `runs.csv`, `summary.csv`, per-run traces
/// and a robustness bar chart there.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>, workers: usize) -> Result<SweepResult> {
    let setup = cfg.prepare()?;
    let variants = cfg.variants()?;
    let objectives: Vec<Result<Objective>> = variants.iter().map(|v| v.objective(&setup, cfg.seed)).collect();
    let points = cfg.train.points();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("traces"))?;
    }
    let total = variants.len() * points.len();
    let records = with_workers(workers, || {
        map_indexed(Execution::Parallel, total, |i| {
            let (v, p) = (i / points.len(), i % points.len());
            let (rec, _) = execute_run(i, &setup, &variants[v], &objectives[v], &cfg.policy, &cfg.train, &points[p], out);
            match &rec.error {
                Some(e) => log::warn!("run {i} ({}) failed: {e}", rec.method),
                None => log::info!("run {i}/{total} ({}) done", rec.method),
            }
            rec
        })
    });
    let summary = summarize(&records);
    let result = SweepResult { records, summary };
    if let Some(dir) = out {
        write_csv_file(dir.join("runs.csv"), |w| write_runs_csv(&result.records, w))?;
        write_csv_file(dir.join("summary.csv"), |w| write_summary_csv(&result.summary, w))?;
        let bars: Vec<crate::bench::chart::Series> = result
            .summary
            .iter()
            .filter_map(|s| s.robustness.map(|r| crate::bench::chart::Series::new(s.method.clone(), vec![(0.0, r)])))
            .collect();
        if !bars.is_empty() {
            crate::bench::chart::emit_chart(
                &bars,
                crate::bench::chart::ChartKind::Bar,
                "robustness (min/max final true value)",
                dir.join("robustness.svg"),
            )?;
        }
    }
    Ok(result)
}

pub fn write_runs_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "index",
        "method",
        "oracle",
        "pwll",
        "tau",
        "beta",
        "l2",
        "reward_model",
        "batch_size",
        "schedule",
        "base_rate",
        "epochs",
        "seed",
        "final_objective",
        "true_value",
        "deployed_value",
        "oracle_agreement",
        "estimator_sq_error",
        "proxy_sq_error",
        "trace_path",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.index.to_string(),
            r.method.clone(),
            r.oracle.clone(),
            r.pwll.to_string(),
            fmt_opt(r.tau),
            fmt_opt(r.beta),
            r.l2.to_string(),
            r.reward_model.clone().unwrap_or_default(),
            r.batch_size.to_string(),
            r.schedule.name().to_string(),
            r.base_rate.to_string(),
            r.epochs.to_string(),
            r.seed.to_string(),
            fmt_opt(r.final_objective),
            fmt_opt(r.true_value),
            fmt_opt(r.deployed_value),
            fmt_opt(r.oracle_agreement),
            fmt_opt(r.estimator_sq_error),
            fmt_opt(r.proxy_sq_error),
            r.trace_path.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary CSV. The `oracle` column names the asymptotic oracle each method's
/// agreement is measured against.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "oracle",
        "runs",
        "failed",
        "mean_true_value",
        "min_true_value",
        "max_true_value",
        "robustness",
        "mean_deployed_value",
        "min_deployed_value",
        "max_deployed_value",
        "deployed_robustness",
    ])?;
    for s in rows {
        w.write_record([
            s.method.clone(),
            s.oracle.clone(),
            s.runs.to_string(),
            s.failed.to_string(),
            fmt_opt(s.mean),
            fmt_opt(s.min),
            fmt_opt(s.max),
            fmt_opt(s.robustness),
            fmt_opt(s.deployed_mean),
            fmt_opt(s.deployed_min),
            fmt_opt(s.deployed_max),
            fmt_opt(s.deployed_robustness),
        ])?;
    }
    w.flush()?;
    Ok(())
}
