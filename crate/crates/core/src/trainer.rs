//! Deterministic mini-batch gradient ascent and the finite-difference check.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LoggedDataset;
use crate::envgen::{true_value, Environment};
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm_sq};
use crate::objective::{Objective, Rows};
use crate::ope::ClusterPolicy;
use crate::par::Execution;
use crate::policy::SoftmaxPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// η₀ / √(1 + t/T₀), T₀ = steps per epoch.
    InverseSqrt,
    /// η₀ · (1 + cos(π t / T)) / 2 over the whole run.
    Cosine,
}

impl Schedule {
    pub const ALL: [Schedule; 3] = [Schedule::Constant, Schedule::InverseSqrt, Schedule::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::InverseSqrt => "inverse-sqrt",
            Schedule::Cosine => "cosine",
        }
    }

    pub fn rate(self, base: f64, step: usize, steps_per_epoch: usize, total_steps: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::InverseSqrt => base / (1.0 + step as f64 / steps_per_epoch.max(1) as f64).sqrt(),
            Schedule::Cosine => {
                base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps.max(1) as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    #[default]
    Zeros,
    /// N(0, σ²) entries seeded by the run seed.
    Gaussian { sigma: f64 },
    /// Start from the parameters the policy already holds.
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub base_rate: f64,
    pub l2_strength: f64,
    pub seed: u64,
    pub init: Init,
    /// Record every this many steps; 0 records once per epoch.
    pub record_every: usize,
    /// Stop once a full-batch gradient norm falls below this.
    pub grad_tol: Option<f64>,
    /// Write elapsed seconds into the trace (otherwise 0, keeping traces reproducible).
    pub wall_clock: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            schedule: Schedule::Constant,
            base_rate: 0.1,
            l2_strength: 0.0,
            seed: 0,
            init: Init::Zeros,
            record_every: 0,
            grad_tol: None,
            wall_clock: false,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::config(format!("batch size must be in [1, {n}], got {}", self.batch_size)));
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(Error::config(format!("base rate must be positive, got {}", self.base_rate)));
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::config("l2 strength must be ≥ 0"));
        }
        if let Init::Gaussian { sigma } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::config("init sigma must be ≥ 0"));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Full-data objective (including the l2 term).
    pub objective: f64,
    pub grad_norm: f64,
    pub true_value: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub steps: usize,
    /// The gradient tolerance was reached before the budget ran out.
    pub converged: bool,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV `step,objective,grad_norm,true_value,seconds`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "objective", "grad_norm", "true_value", "seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.objective.to_string(),
                r.grad_norm.to_string(),
                r.true_value.map(|v| v.to_string()).unwrap_or_default(),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Exact value of the policy a trained objective deploys: POTEC policies are
/// composed with the objective's within-cluster selector first.
pub fn deployed_true_value(env: &Environment, objective: &Objective, policy: &SoftmaxPolicy) -> Result<f64> {
    match objective.selector() {
        Some(sel) => Ok(true_value(env, &ClusterPolicy::new(policy.clone(), sel.clone())?)),
        None => Ok(true_value(env, policy)),
    }
}

/// Plain stochastic gradient ascent θ ← θ + η_t·ĝ on `objective`.
///
/// Each epoch visits a permutation of the data drawn from a ChaCha8 stream
/// keyed by `(tc.seed, epoch)`; runs are bitwise reproducible.
pub fn train(
    objective: &Objective,
    ds: &LoggedDataset,
    mut policy: SoftmaxPolicy,
    tc: &TrainConfig,
    env: Option<&Environment>,
) -> Result<(SoftmaxPolicy, TrainTrace)> {
    let n = ds.len();
    tc.validate(n)?;
    objective.check(ds, &policy)?;
    policy.l2_strength = tc.l2_strength;
    match tc.init {
        Init::Zeros => policy.zero_params(),
        Init::Gaussian { sigma } => policy.gaussian_params(sigma, tc.seed),
        Init::Provided => {}
    }

    let exec = tc.execution;
    let spe = tc.steps_per_epoch(n);
    let total = spe * tc.epochs;
    let full_batch = tc.batch_size >= n;
    let started = Instant::now();
    let mut trace = TrainTrace::default();

    let record = |policy: &SoftmaxPolicy, step: usize, trace: &mut TrainTrace| -> Result<f64> {
        let (v, g) = objective.value_and_gradient_unchecked(ds, Rows::All, policy, exec)?;
        let gn = norm_sq(&g).sqrt();
        if !v.is_finite() || !gn.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "objective or gradient".into(),
            });
        }
        let tv = env.map(|e| deployed_true_value(e, objective, policy)).transpose()?;
        trace.rows.push(TraceRow {
            step,
            objective: v,
            grad_norm: gn,
            true_value: tv,
            seconds: if tc.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        });
        Ok(gn)
    };

    record(&policy, 0, &mut trace)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    'epochs: for epoch in 0..tc.epochs {
        if !full_batch {
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            rng.set_stream(epoch as u64);
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            order.shuffle(&mut rng);
        }
        for b in 0..spe {
            let batch = &order[b * tc.batch_size..((b + 1) * tc.batch_size).min(n)];
            let rows = if full_batch { Rows::All } else { Rows::Subset(batch) };
            let (v, g) = objective.value_and_gradient_unchecked(ds, rows, &policy, exec)?;
            let gn = norm_sq(&g).sqrt();
            if !v.is_finite() || !gn.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    what: "objective or gradient".into(),
                });
            }
            if full_batch && tc.grad_tol.is_some_and(|tol| gn < tol) {
                trace.converged = true;
                break 'epochs;
            }
            let eta = tc.schedule.rate(tc.base_rate, step, spe, total);
            axpy(eta, &g, policy.params_mut());
            step += 1;
            if tc.record_every > 0 && step % tc.record_every == 0 {
                record(&policy, step, &mut trace)?;
            }
        }
        if tc.record_every == 0 {
            record(&policy, step, &mut trace)?;
        }
    }
    if trace.rows.last().is_none_or(|r| r.step != step) {
        record(&policy, step, &mut trace)?;
    }
    trace.steps = step;
    Ok((policy, trace))
}

/// Denominator floor of the relative error, so coordinates whose gradient is
/// numerically zero are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

/// Largest relative error |g − ĝ| / max(|g|, |ĝ|, FD_FLOOR) between the
/// analytic gradient and central differences over `num_coords` random coordinates.
pub fn finite_diff_check(
    objective: &Objective,
    ds: &LoggedDataset,
    policy: &SoftmaxPolicy,
    num_coords: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let exec = Execution::default();
    let grad = objective.gradient(ds, policy, exec)?;
    let np = policy.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = index::sample(&mut rng, np, num_coords.min(np)).into_vec();
    let mut work = policy.clone();
    let mut worst = 0.0f64;
    for c in coords {
        let base = policy.params()[c];
        work.params_mut()[c] = base + step;
        let up = objective.value(ds, Rows::All, &work, exec)?;
        work.params_mut()[c] = base - step;
        let down = objective.value(ds, Rows::All, &work, exec)?;
        work.params_mut()[c] = base;
        let numeric = (up - down) / (2.0 * step);
        let err = (grad[c] - numeric).abs() / grad[c].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
