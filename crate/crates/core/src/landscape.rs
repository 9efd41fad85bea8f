//! Probes of the optimization landscape: plateau length and basin census on
//! constructed trap instances.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LoggedDataset;
use crate::envgen::{deployed_actions, stratified_dataset, Environment, RewardMode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::{Objective, Rows};
use crate::ope::ClusterPolicy;
use crate::par::{map_indexed, Execution};
use crate::policy::SoftmaxPolicy;
use crate::trainer::{deployed_true_value, train, Init, TrainConfig};

/// Single-context trap: one rewarded action that the logging policy rarely
/// plays, and a distractor the initial policy already favors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSpec {
    #[serde(rename = "K")]
    pub k: usize,
    /// Logging probability of the rewarded action.
    pub epsilon: f64,
    /// Reward of every other action is 1 − gap.
    pub gap: f64,
    /// Initial score advantage of the distractor.
    pub init_bias: f64,
}

impl AdversarialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("need K ≥ 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0 / self.k as f64) {
            return Err(Error::config(format!("epsilon must lie in (0, 1/K], got {}", self.epsilon)));
        }
        if !(self.gap > 0.0 && self.gap <= 1.0) {
            return Err(Error::config(format!("gap must lie in (0, 1], got {}", self.gap)));
        }
        if !self.init_bias.is_finite() {
            return Err(Error::config("init_bias must be finite"));
        }
        Ok(())
    }

    /// Index of the rewarded action.
    pub fn rewarded(&self) -> usize {
        self.k - 1
    }

    /// Index of the distractor.
    pub fn distractor(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialInstance {
    pub spec: AdversarialSpec,
    pub env: Environment,
    /// Linear policy on the single context x = (1) with the distractor's score raised.
    pub initial_policy: SoftmaxPolicy,
}

pub fn build_adversarial(spec: &AdversarialSpec) -> Result<AdversarialInstance> {
    spec.validate()?;
    let k = spec.k;
    let mut rewards = vec![1.0 - spec.gap; k];
    rewards[spec.rewarded()] = 1.0;
    let mut logging = vec![(1.0 - spec.epsilon) / (k - 1) as f64; k];
    logging[spec.rewarded()] = spec.epsilon;
    let env = Environment::from_parts(
        Matrix::from_rows(&[vec![1.0]]),
        vec![1.0],
        Matrix::from_rows(&[rewards]),
        Matrix::from_rows(&[logging]),
        RewardMode::Continuous { noise: 0.0 },
        0,
    )?;
    let mut params = vec![0.0; k];
    params[spec.distractor()] = spec.init_bias;
    let initial_policy = SoftmaxPolicy::linear(k, 1).with_params(params)?;
    Ok(AdversarialInstance {
        spec: *spec,
        env,
        initial_policy,
    })
}

/// Several independent traps side by side: `num_contexts` one-hot contexts,
/// each with its own rewarded action (reward 1, logging mass `epsilon`) and
/// distractors with distinct rewards spread over [1 − gap − spread, 1 − gap].
pub fn build_composite_trap(num_contexts: usize, k: usize, epsilon: f64, gap: f64, spread: f64) -> Result<Environment> {
    if num_contexts == 0 || k < 2 {
        return Err(Error::config("need at least one context and two actions"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0 / k as f64) || !(gap > 0.0 && gap + spread <= 1.0 && spread >= 0.0) {
        return Err(Error::config("composite trap parameters out of range"));
    }
    let mut contexts = Matrix::zeros(num_contexts, num_contexts);
    let mut rewards = Matrix::zeros(num_contexts, k);
    let mut logging = Matrix::zeros(num_contexts, k);
    for j in 0..num_contexts {
        contexts.set(j, j, 1.0);
        let target = (j * 5 + k - 1) % k;
        let mut rank = 0;
        for a in 0..k {
            if a == target {
                rewards.set(j, a, 1.0);
                logging.set(j, a, epsilon);
            } else {
                // distinct distractor rewards, rotated per context
                let r = 1.0 - gap - spread * ((rank + j) % (k - 1)) as f64 / (k - 1) as f64;
                rewards.set(j, a, r);
                logging.set(j, a, (1.0 - epsilon) / (k - 1) as f64);
                rank += 1;
            }
        }
    }
    Environment::from_parts(
        contexts,
        vec![1.0 / num_contexts as f64; num_contexts],
        rewards,
        logging,
        RewardMode::Continuous { noise: 0.0 },
        0,
    )
}

/// Rows used for the population-level probes.
pub fn probe_rows(env: &Environment) -> usize {
    (50 * env.num_actions() * env.num_contexts()).max(1000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    /// First step whose value gain exceeds `threshold` × the largest gain; the
    /// full budget when never reached.
    pub iterations: usize,
    pub unescaped: bool,
    pub budget: usize,
    pub initial_value: f64,
    pub final_value: f64,
    /// true_value after each step, starting with the initial policy.
    pub values: Vec<f64>,
}

/// Runs full-batch ascent from `initial` on the noise-free population data of
/// `env` for `tc.epochs` steps and measures how long the true value stalls.
pub fn plateau_length(
    env: &Environment,
    initial: &SoftmaxPolicy,
    objective: &Objective,
    tc: &TrainConfig,
    threshold: f64,
) -> Result<PlateauReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("threshold must lie in [0, 1]"));
    }
    let ds = stratified_dataset(env, probe_rows(env))?;
    let tc = TrainConfig {
        batch_size: ds.len(),
        record_every: 1,
        init: Init::Provided,
        grad_tol: None,
        ..tc.clone()
    };
    let mut start = initial.clone();
    start.l2_strength = tc.l2_strength;
    let (_, trace) = train(objective, &ds, start, &tc, Some(env))?;
    let values: Vec<f64> = trace.rows.iter().map(|r| r.true_value.expect("environment attached")).collect();
    let v0 = values[0];
    let best_gain = values.iter().map(|v| v - v0).fold(f64::NEG_INFINITY, f64::max);
    let budget = trace.steps;
    let escape = if best_gain > 0.0 && threshold < 1.0 {
        values.iter().position(|v| v - v0 > threshold * best_gain)
    } else {
        None
    };
    Ok(PlateauReport {
        iterations: escape.unwrap_or(budget),
        unescaped: escape.is_none(),
        budget,
        initial_value: v0,
        final_value: *values.last().expect("at least one record"),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    /// Deployed choice per environment context.
    pub pattern: Vec<usize>,
    /// Objective of the first restart that landed here.
    pub objective: f64,
    pub true_value: f64,
    pub count: usize,
    pub first_restart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub restarts: usize,
    /// Restarts that reached the gradient tolerance.
    pub converged: usize,
    pub basins: Vec<Basin>,
}

impl CensusReport {
    pub fn num_basins(&self) -> usize {
        self.basins.len()
    }

    /// CSV `basin,pattern,objective,true_value,count,first_restart`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["basin", "pattern", "objective", "true_value", "count", "first_restart"])?;
        for (i, b) in self.basins.iter().enumerate() {
            let pattern = b.pattern.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
            w.write_record([
                i.to_string(),
                pattern,
                b.objective.to_string(),
                b.true_value.to_string(),
                b.count.to_string(),
                b.first_restart.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Objective values closer than this are the same basin (given equal patterns).
pub const BASIN_VALUE_TOL: f64 = 1e-4;
/// Gradient norm at which a restart counts as converged.
pub const BASIN_GRAD_TOL: f64 = 1e-7;

/// Seed of restart `r` in a census seeded by `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(r as u64)
}

/// Full-batch ascent from `restarts` Gaussian initializations (σ = `sigma`)
/// until the gradient norm drops below 1e−7 or `tc.epochs` steps elapse.
/// Restarts run independently (in parallel under `exec`); outcomes are merged
/// in restart order. Two outcomes share a basin when their deployed patterns
/// match and their objectives differ by at most 1e−4.
#[allow(clippy::too_many_arguments)]
pub fn basin_census(
    env: &Environment,
    ds: &LoggedDataset,
    objective: &Objective,
    template: &SoftmaxPolicy,
    restarts: usize,
    sigma: f64,
    tc: &TrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<CensusReport> {
    if restarts == 0 {
        return Err(Error::config("need at least one restart"));
    }
    objective.check(ds, template)?;
    let outcomes = map_indexed(exec, restarts, |r| -> Result<(Vec<usize>, f64, f64, bool)> {
        let run_tc = TrainConfig {
            batch_size: ds.len(),
            init: Init::Gaussian { sigma },
            seed: restart_seed(seed, r),
            grad_tol: Some(BASIN_GRAD_TOL),
            record_every: usize::MAX,
            execution: Execution::Sequential,
            ..tc.clone()
        };
        let (policy, trace) = train(objective, ds, template.clone(), &run_tc, None)?;
        let value = objective.value(ds, Rows::All, &policy, Execution::Sequential)?;
        let pattern = match objective.selector() {
            Some(sel) => deployed_actions(env, &ClusterPolicy::new(policy.clone(), sel.clone())?),
            None => deployed_actions(env, &policy),
        };
        let tv = deployed_true_value(env, objective, &policy)?;
        Ok((pattern, value, tv, trace.converged))
    });
    let mut basins: Vec<Basin> = Vec::new();
    let mut converged = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        let (pattern, value, tv, conv) = out?;
        converged += conv as usize;
        match basins
            .iter_mut()
            .find(|b| b.pattern == pattern && (b.objective - value).abs() <= BASIN_VALUE_TOL)
        {
            Some(b) => b.count += 1,
            None => basins.push(Basin {
                pattern,
                objective: value,
                true_value: tv,
                count: 1,
                first_restart: r,
            }),
        }
    }
    Ok(CensusReport {
        restarts,
        converged,
        basins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub k: usize,
    pub method: String,
    pub iterations: usize,
    pub unescaped: bool,
    pub initial_value: f64,
    pub final_value: f64,
}

/// CSV `K,method,iterations,unescaped,initial_value,final_value`.
pub fn write_plateau_csv<W: Write>(rows: &[PlateauRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["K", "method", "iterations", "unescaped", "initial_value", "final_value"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.method.clone(),
            r.iterations.to_string(),
            r.unescaped.to_string(),
            r.initial_value.to_string(),
            r.final_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
