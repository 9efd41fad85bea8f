//! Closed-form large-sample solutions of every objective on a finite environment.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envgen::{Environment, RewardMode};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::objective::Objective;
use crate::ope::{ClusterPolicy, GreedySelector, OpeConfig, OpeMethod};
use crate::policy::{ActionPolicy, SoftmaxPolicy, TablePolicy};
use crate::pwll::Weighting;
use crate::reward_model::RewardModelMode;

/// What the oracle's choices index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Action,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum OracleTable {
    /// m×K probabilities.
    Stochastic { table: Matrix },
    /// One choice per context.
    Deterministic { choices: Vec<usize> },
}

/// The parameters an oracle was built with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub reward_model: Option<RewardModelMode>,
    pub num_clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePolicy {
    pub method: String,
    pub level: Level,
    /// K for action-level oracles, |C| for cluster-level ones.
    pub num_choices: usize,
    pub table: OracleTable,
    pub params: OracleParams,
}

impl OraclePolicy {
    pub fn num_contexts(&self) -> usize {
        match &self.table {
            OracleTable::Stochastic { table } => table.rows(),
            OracleTable::Deterministic { choices } => choices.len(),
        }
    }

    /// Argmax choice in context `j`, lowest index on ties.
    pub fn deployed(&self, j: usize) -> usize {
        match &self.table {
            OracleTable::Stochastic { table } => argmax(table.row(j)),
            OracleTable::Deterministic { choices } => choices[j],
        }
    }

    pub fn deployed_all(&self) -> Vec<usize> {
        (0..self.num_contexts()).map(|j| self.deployed(j)).collect()
    }

    /// Probability row for context `j`.
    pub fn row(&self, j: usize) -> Vec<f64> {
        match &self.table {
            OracleTable::Stochastic { table } => table.row(j).to_vec(),
            OracleTable::Deterministic { choices } => {
                let mut r = vec![0.0; self.num_choices];
                r[choices[j]] = 1.0;
                r
            }
        }
    }

    /// Action-level oracles as a table policy over context ids.
    pub fn to_action_policy(&self) -> Option<TablePolicy> {
        if self.level != Level::Action {
            return None;
        }
        let rows: Vec<Vec<f64>> = (0..self.num_contexts()).map(|j| self.row(j)).collect();
        Some(TablePolicy {
            table: Matrix::from_rows(&rows),
        })
    }

    /// CSV `context_id,action,prob`; deterministic oracles write one row per
    /// context. Cluster-level oracles put the cluster id in the `action` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["context_id", "action", "prob"])?;
        match &self.table {
            OracleTable::Stochastic { table } => {
                for j in 0..table.rows() {
                    for (a, p) in table.row(j).iter().enumerate() {
                        w.write_record([j.to_string(), a.to_string(), format!("{p:.17e}")])?;
                    }
                }
            }
            OracleTable::Deterministic { choices } => {
                for (j, a) in choices.iter().enumerate() {
                    w.write_record([j.to_string(), a.to_string(), "1".to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn first_argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Per-cluster logging mass and residual mass Σ_{φ(a)=c} π₀(a)(r(a) − r̂(a)).
fn cluster_sums(env: &Environment, j: usize, rhat: &[f64], clustering: &crate::clustering::Clustering) -> (Vec<f64>, Vec<f64>) {
    let nc = clustering.num_clusters();
    let mut mass = vec![0.0; nc];
    let mut resid = vec![0.0; nc];
    for (a, &p) in env.logging_row(j).iter().enumerate() {
        let c = clustering.cluster_of(a);
        mass[c] += p;
        resid[c] += p * (env.reward(j, a) - rhat[a]);
    }
    (mass, resid)
}

/// The limit policy of an OPE objective, per context, ties to the lowest index.
///
/// Where a formula divides by a zero logging probability (an unsupported action
/// or cluster), the correction term is dropped: cIPS scores the action 0, DR and
/// OffCEM fall back to r̂, MIPS skips the cluster.
pub fn asymptotic_ope_policy(env: &Environment, method: OpeMethod, cfg: &OpeConfig) -> Result<OraclePolicy> {
    cfg.validate(method)?;
    let m = env.num_contexts();
    let k = env.num_actions();
    let tau = cfg.tau;
    let mut rhat = vec![0.0; k];
    let fill_rhat = |j: usize, out: &mut Vec<f64>| {
        if let Some(rm) = &cfg.reward_model {
            rm.predict_row(env.ctx(j), out);
        }
    };
    let mut params = OracleParams::default();
    if matches!(method, OpeMethod::Cips | OpeMethod::Dr) {
        params.tau = Some(tau);
    }
    params.reward_model = cfg.reward_model.as_ref().filter(|_| method.needs_reward_model()).map(|rm| rm.mode());
    if method.needs_clustering() {
        let cl = cfg.clustering.as_ref().expect("validated");
        if cl.num_actions() != k {
            return Err(Error::config("clustering does not cover the environment's actions"));
        }
        params.num_clusters = Some(cl.num_clusters());
    }

    let mut choices = Vec::with_capacity(m);
    let mut level = Level::Action;
    for j in 0..m {
        let p0 = env.logging_row(j);
        let r = env.reward_table().row(j);
        let choice = match method {
            OpeMethod::Ips => first_argmax((0..k).filter(|&a| p0[a] > 0.0).map(|a| (a, r[a]))),
            OpeMethod::Cips => first_argmax((0..k).map(|a| {
                let s = if p0[a] > 0.0 { p0[a] * r[a] / p0[a].max(tau) } else { 0.0 };
                (a, s)
            })),
            OpeMethod::Dr => {
                fill_rhat(j, &mut rhat);
                first_argmax((0..k).map(|a| {
                    let corr = if p0[a] > 0.0 { p0[a] * (r[a] - rhat[a]) / p0[a].max(tau) } else { 0.0 };
                    (a, rhat[a] + corr)
                }))
            }
            OpeMethod::Mips => {
                level = Level::Cluster;
                let cl = cfg.clustering.as_ref().expect("validated");
                let zero = vec![0.0; k];
                let (mass, resid) = cluster_sums(env, j, &zero, cl);
                first_argmax((0..cl.num_clusters()).filter(|&c| mass[c] > 0.0).map(|c| (c, resid[c] / mass[c])))
            }
            OpeMethod::Offcem => {
                let cl = cfg.clustering.as_ref().expect("validated");
                fill_rhat(j, &mut rhat);
                let (mass, resid) = cluster_sums(env, j, &rhat, cl);
                first_argmax((0..k).map(|a| {
                    let c = cl.cluster_of(a);
                    let corr = if mass[c] > 0.0 { resid[c] / mass[c] } else { 0.0 };
                    (a, rhat[a] + corr)
                }))
            }
            OpeMethod::Potec => {
                let cl = cfg.clustering.as_ref().expect("validated");
                let sel = GreedySelector::new(cl.clone(), cfg.reward_model.clone().expect("validated"))?;
                fill_rhat(j, &mut rhat);
                let (mass, resid) = cluster_sums(env, j, &rhat, cl);
                let nc = cl.num_clusters();
                let mut best = vec![0; nc];
                let mut rmax = vec![0.0; nc];
                let mut scratch = vec![0.0; k];
                sel.fill(env.ctx(j), &mut scratch, &mut best, &mut rmax);
                let c = first_argmax((0..nc).map(|c| {
                    let corr = if mass[c] > 0.0 { resid[c] / mass[c] } else { 0.0 };
                    (c, rmax[c] + corr)
                }));
                c.map(|c| best[c])
            }
        };
        choices.push(choice.ok_or_else(|| Error::config(format!("context {j} has no admissible choice")))?);
    }
    let num_choices = match level {
        Level::Action => k,
        Level::Cluster => cfg.clustering.as_ref().expect("validated").num_clusters(),
    };
    Ok(OraclePolicy {
        method: method.name().to_string(),
        level,
        num_choices,
        table: OracleTable::Deterministic { choices },
        params,
    })
}

/// E[g(r, p₀)] for one (context, action) under the environment's reward noise.
fn expected_weight(env: &Environment, j: usize, a: usize, w: &Weighting) -> f64 {
    let p0 = env.logging_row(j)[a];
    let mean = env.reward(j, a);
    match w {
        Weighting::Regkl { beta } => env.expected_exp_weight(j, a, *beta),
        // linear in r
        Weighting::Lpi | Weighting::Clpi { .. } => w.weight(mean, p0),
        Weighting::Custom(_) => match env.reward_mode() {
            RewardMode::Binary => mean * w.weight(1.0, p0) + (1.0 - mean) * w.weight(0.0, p0),
            RewardMode::Continuous { noise } => {
                let half = noise.min(mean).min(1.0 - mean);
                if half <= 0.0 {
                    return w.weight(mean, p0);
                }
                // midpoint rule over the uniform noise
                const NODES: usize = 256;
                (0..NODES)
                    .map(|i| w.weight(mean - half + (2.0 * half) * (i as f64 + 0.5) / NODES as f64, p0))
                    .sum::<f64>()
                    / NODES as f64
            }
        },
    }
}

/// The limit distribution of a PWLL objective: π*(a|x) ∝ E[g(r, π₀(a|x))]·π₀(a|x).
pub fn asymptotic_pwll_distribution(env: &Environment, w: &Weighting) -> Result<OraclePolicy> {
    w.validate()?;
    let m = env.num_contexts();
    let k = env.num_actions();
    let mut table = Matrix::zeros(m, k);
    for j in 0..m {
        let p0 = env.logging_row(j);
        let row = table.row_mut(j);
        for a in 0..k {
            row[a] = if p0[a] > 0.0 { expected_weight(env, j, a, w) * p0[a] } else { 0.0 };
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 && total.is_finite() {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            log::warn!("{} limit undefined in context {j} (all weights zero); using uniform", w.name());
            row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    let params = OracleParams {
        tau: match w {
            Weighting::Clpi { tau } => Some(*tau),
            _ => None,
        },
        beta: match w {
            Weighting::Regkl { beta } => Some(*beta),
            _ => None,
        },
        ..Default::default()
    };
    Ok(OraclePolicy {
        method: w.name().to_string(),
        level: Level::Action,
        num_choices: k,
        table: OracleTable::Stochastic { table },
        params,
    })
}

/// The oracle a trained objective is scored against. cLPI maps to the cIPS
/// oracle at the same τ (both deploy argmax r·π₀/max(π₀,τ)); other PWLL
/// objectives map to their own limit distribution.
pub fn matching_oracle(env: &Environment, objective: &Objective) -> Result<OraclePolicy> {
    match objective {
        Objective::Ope { method, cfg, .. } => asymptotic_ope_policy(env, *method, cfg),
        Objective::Pwll(Weighting::Clpi { tau }) => {
            asymptotic_ope_policy(env, OpeMethod::Cips, &OpeConfig::new().with_tau(*tau))
        }
        Objective::Pwll(w) => asymptotic_pwll_distribution(env, w),
    }
}

/// Name of the oracle `matching_oracle` uses for an objective.
pub fn matching_oracle_name(objective: &Objective) -> String {
    match objective {
        Objective::Pwll(Weighting::Clpi { .. }) => "cips".to_string(),
        other => other.name(),
    }
}

/// Fraction of contexts where the two oracles deploy the same choice.
pub fn argmax_agreement(p1: &OraclePolicy, p2: &OraclePolicy) -> Result<f64> {
    if p1.num_contexts() != p2.num_contexts() || p1.level != p2.level || p1.num_choices != p2.num_choices {
        return Err(Error::contract("oracles are over different environments or choice sets"));
    }
    let m = p1.num_contexts();
    if m == 0 {
        return Ok(1.0);
    }
    let same = (0..m).filter(|&j| p1.deployed(j) == p2.deployed(j)).count();
    Ok(same as f64 / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub fraction: f64,
    /// Contexts where the deployed choice differs from the oracle's.
    pub failures: Vec<usize>,
}

/// Agreement between a policy's argmax deployment and an oracle. For
/// cluster-level oracles the deployed action is mapped to its cluster.
pub fn policy_agreement<P: ActionPolicy + ?Sized>(
    env: &Environment,
    policy: &P,
    oracle: &OraclePolicy,
    clustering: Option<&crate::clustering::Clustering>,
) -> Result<AgreementReport> {
    let m = env.num_contexts();
    if oracle.num_contexts() != m || policy.num_actions() != env.num_actions() {
        return Err(Error::contract("policy, oracle and environment shapes differ"));
    }
    let cl = match oracle.level {
        Level::Action => None,
        Level::Cluster => Some(
            clustering
                .or(env.clustering())
                .ok_or_else(|| Error::config("cluster-level oracle needs a clustering"))?,
        ),
    };
    let mut failures = Vec::new();
    for j in 0..m {
        let a = policy.deploy(env.ctx(j));
        let got = cl.map_or(a, |c| c.cluster_of(a));
        if got != oracle.deployed(j) {
            failures.push(j);
        }
    }
    Ok(AgreementReport {
        fraction: (m - failures.len()) as f64 / m.max(1) as f64,
        failures,
    })
}

/// Agreement of a policy trained on `objective` with that objective's oracle.
/// POTEC policies are composed with their selector; MIPS is compared by cluster.
pub fn trained_agreement(env: &Environment, objective: &Objective, policy: &SoftmaxPolicy) -> Result<AgreementReport> {
    let oracle = matching_oracle(env, objective)?;
    match objective {
        Objective::Ope {
            selector: Some(sel), ..
        } => policy_agreement(env, &ClusterPolicy::new(policy.clone(), sel.clone())?, &oracle, None),
        Objective::Ope { cfg, .. } => policy_agreement(env, policy, &oracle, cfg.clustering.as_ref()),
        Objective::Pwll(_) => policy_agreement(env, policy, &oracle, None),
    }
}
