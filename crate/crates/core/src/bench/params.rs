//! Lightweight versus heavyweight policy parametrizations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::chart::Series;
use crate::bench::config::{MethodVariant, PolicySpec, Setup};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};
use crate::trainer::{deployed_true_value, train, TrainConfig, TrainTrace};

/// Epochs until the true value first gains 90% of its total gain; 0 when the
/// run never improves on its starting value.
pub fn epochs_to_90(trace: &TrainTrace, steps_per_epoch: usize) -> Result<f64> {
    let vals: Vec<(usize, f64)> = trace
        .rows
        .iter()
        .map(|r| r.true_value.map(|v| (r.step, v)))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::config("epochs-to-90% needs true values in the trace"))?;
    let (_, v0) = vals[0];
    let (_, vt) = *vals.last().expect("non-empty trace");
    if vt <= v0 {
        return Ok(0.0);
    }
    let target = v0 + 0.9 * (vt - v0);
    let step = vals.iter().find(|(_, v)| *v >= target).map_or(vals.last().expect("non-empty").0, |(s, _)| *s);
    Ok(step as f64 / steps_per_epoch as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRun {
    pub method: String,
    /// `light` or `heavy`.
    pub variant: String,
    pub policy: String,
    pub num_params: usize,
    pub seed: u64,
    pub epochs_to_90: f64,
    pub final_true_value: f64,
    /// (epoch, true value) along the run.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSummary {
    pub method: String,
    pub variant: String,
    pub policy: String,
    pub num_params: usize,
    pub seeds: usize,
    pub epochs_mean: f64,
    pub epochs_min: f64,
    pub epochs_max: f64,
    pub value_mean: f64,
    pub value_min: f64,
    pub value_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsReport {
    pub runs: Vec<ParamsRun>,
    pub summary: Vec<ParamsSummary>,
}

impl ParamsReport {
    /// Mean learning curve per (method, variant), for charting.
    pub fn mean_curves(&self) -> Vec<Series> {
        self.summary
            .iter()
            .map(|s| {
                let runs: Vec<&ParamsRun> = self.runs.iter().filter(|r| r.method == s.method && r.variant == s.variant).collect();
                let len = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
                let pts = (0..len)
                    .map(|i| {
                        let y = runs.iter().map(|r| r.curve[i].1).sum::<f64>() / runs.len() as f64;
                        (runs[0].curve[i].0, y)
                    })
                    .collect();
                Series::new(format!("{} ({})", s.method, s.variant), pts)
            })
            .collect()
    }
}

/// Trains every method under both parametrizations for every seed and
/// records convergence speed and final true value. `light` must have strictly
/// fewer trainable parameters than `heavy` unless the two specs are identical.
pub fn parametrization_report(
    setup: &Setup,
    variants: &[MethodVariant],
    light: &PolicySpec,
    heavy: &PolicySpec,
    tc: &TrainConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<ParamsReport> {
    let env = setup.env.as_ref().ok_or_else(|| Error::config("the parametrization report needs an environment"))?;
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::config("need at least one seed and one method"));
    }
    let specs = [("light", light), ("heavy", heavy)];
    let mut jobs = Vec::new();
    for v in variants {
        let obj = v.objective(setup, 0)?;
        let sizes: Vec<usize> = specs.iter().map(|(_, s)| s.build(setup, &obj).map(|p| p.num_params())).collect::<Result<_>>()?;
        if light != heavy && sizes[0] >= sizes[1] {
            return Err(Error::config(format!(
                "light policy has {} parameters, heavy has {}; light must be smaller",
                sizes[0], sizes[1]
            )));
        }
        for (si, (name, spec)) in specs.iter().enumerate() {
            for &seed in seeds {
                jobs.push((v, obj.clone(), *name, *spec, sizes[si], seed));
            }
        }
    }
    let runs: Vec<Result<ParamsRun>> = map_indexed(exec, jobs.len(), |i| {
        let (v, obj, name, spec, size, seed) = &jobs[i];
        let run_tc = TrainConfig {
            seed: *seed,
            l2_strength: v.l2,
            record_every: 0,
            execution: Execution::Sequential,
            ..tc.clone()
        };
        let template = spec.build(setup, obj)?;
        let (policy, trace) = train(obj, &setup.ds, template, &run_tc, Some(env))?;
        let spe = run_tc.steps_per_epoch(setup.ds.len());
        Ok(ParamsRun {
            method: v.label.clone(),
            variant: name.to_string(),
            policy: spec.label(),
            num_params: *size,
            seed: *seed,
            epochs_to_90: epochs_to_90(&trace, spe)?,
            final_true_value: deployed_true_value(env, obj, &policy)?,
            curve: trace
                .rows
                .iter()
                .map(|r| (r.step as f64 / spe as f64, r.true_value.expect("environment attached")))
                .collect(),
        })
    });
    let runs: Vec<ParamsRun> = runs.into_iter().collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for chunk in runs.chunks(seeds.len()) {
        let first = &chunk[0];
        let ep: Vec<f64> = chunk.iter().map(|r| r.epochs_to_90).collect();
        let va: Vec<f64> = chunk.iter().map(|r| r.final_true_value).collect();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let min = |x: &[f64]| x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |x: &[f64]| x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        summary.push(ParamsSummary {
            method: first.method.clone(),
            variant: first.variant.clone(),
            policy: first.policy.clone(),
            num_params: first.num_params,
            seeds: chunk.len(),
            epochs_mean: mean(&ep),
            epochs_min: min(&ep),
            epochs_max: max(&ep),
            value_mean: mean(&va),
            value_min: min(&va),
            value_max: max(&va),
        });
    }
    Ok(ParamsReport { runs, summary })
}

pub fn write_params_runs_csv<W: Write>(runs: &[ParamsRun], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "variant", "policy", "num_params", "seed", "epochs_to_90", "final_true_value"])?;
    for r in runs {
        w.write_record([
            r.method.clone(),
            r.variant.clone(),
            r.policy.clone(),
            r.num_params.to_string(),
            r.seed.to_string(),
            r.epochs_to_90.to_string(),
            r.final_true_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_params_summary_csv<W: Write>(rows: &[ParamsSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "variant",
        "policy",
        "num_params",
        "seeds",
        "epochs_to_90_mean",
        "epochs_to_90_min",
        "epochs_to_90_max",
        "true_value_mean",
        "true_value_min",
        "true_value_max",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.variant.clone(),
            r.policy.clone(),
            r.num_params.to_string(),
            r.seeds.to_string(),
            r.epochs_mean.to_string(),
            r.epochs_min.to_string(),
            r.epochs_max.to_string(),
            r.value_mean.to_string(),
            r.value_min.to_string(),
            r.value_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
