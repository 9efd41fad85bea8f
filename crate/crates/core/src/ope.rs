//! Importance-weighted value estimators and their policy gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::objective::{Objective, Rows};
use crate::par::Execution;
use crate::policy::{ActionPolicy, Ctx, SoftmaxPolicy};
use crate::reward_model::RewardModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpeMethod {
    Ips,
    Cips,
    Dr,
    Mips,
    Offcem,
    Potec,
}

impl OpeMethod {
    pub const ALL: [OpeMethod; 6] = [
        OpeMethod::Ips,
        OpeMethod::Cips,
        OpeMethod::Dr,
        OpeMethod::Mips,
        OpeMethod::Offcem,
        OpeMethod::Potec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpeMethod::Ips => "ips",
            OpeMethod::Cips => "cips",
            OpeMethod::Dr => "dr",
            OpeMethod::Mips => "mips",
            OpeMethod::Offcem => "offcem",
            OpeMethod::Potec => "potec",
        }
    }

    pub fn needs_reward_model(self) -> bool {
        matches!(self, OpeMethod::Dr | OpeMethod::Offcem | OpeMethod::Potec)
    }

    pub fn needs_clustering(self) -> bool {
        matches!(self, OpeMethod::Mips | OpeMethod::Offcem | OpeMethod::Potec)
    }
}

impl fmt::Display for OpeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpeMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpeConfig {
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub reward_model: Option<RewardModel>,
    #[serde(default)]
    pub clustering: Option<Clustering>,
}

impl OpeConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_reward_model(mut self, rm: RewardModel) -> Self {
        self.reward_model = Some(rm);
        self
    }

    pub fn with_clustering(mut self, clustering: Clustering) -> Self {
        self.clustering = Some(clustering);
        self
    }

    /// Checks τ and that `method` has the pieces it needs.
    pub fn validate(&self, method: OpeMethod) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if method.needs_reward_model() && self.reward_model.is_none() {
            return Err(Error::config(format!("{method} needs a reward model")));
        }
        if method.needs_clustering() && self.clustering.is_none() {
            return Err(Error::config(format!("{method} needs a clustering")));
        }
        if let (Some(rm), Some(cl)) = (&self.reward_model, &self.clustering) {
            if rm.num_actions() != cl.num_actions() {
                return Err(Error::config("reward model and clustering disagree on the action count"));
            }
        }
        Ok(())
    }
}

/// The fixed within-cluster selector π^RM: inside each cluster, the action with
/// the largest predicted reward (lowest index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelector {
    clustering: Clustering,
    reward_model: RewardModel,
    /// Per (context id, cluster) choice and r̂_max for tabular reward models.
    cache: Option<(Vec<usize>, Vec<f64>)>,
}

impl GreedySelector {
    pub fn new(clustering: Clustering, reward_model: RewardModel) -> Result<Self> {
        if clustering.num_actions() != reward_model.num_actions() {
            return Err(Error::config("reward model and clustering disagree on the action count"));
        }
        let mut sel = Self {
            clustering,
            reward_model,
            cache: None,
        };
        if let RewardModel::Table { table, .. } = &sel.reward_model {
            let nc = sel.clustering.num_clusters();
            let mut best = vec![0; table.rows() * nc];
            let mut rmax = vec![0.0; table.rows() * nc];
            for j in 0..table.rows() {
                let row = table.row(j);
                greedy(&sel.clustering, row, &mut best[j * nc..(j + 1) * nc], &mut rmax[j * nc..(j + 1) * nc]);
            }
            sel.cache = Some((best, rmax));
        }
        Ok(sel)
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn reward_model(&self) -> &RewardModel {
        &self.reward_model
    }

    pub fn num_clusters(&self) -> usize {
        self.clustering.num_clusters()
    }

    /// Fills the chosen action and r̂_max for every cluster. `rhat` is K-length scratch.
    pub fn fill(&self, ctx: Ctx<'_>, rhat: &mut [f64], best: &mut [usize], rmax: &mut [f64]) {
        let nc = self.num_clusters();
        match (&self.cache, ctx.id) {
            (Some((b, r)), Some(j)) => {
                best.copy_from_slice(&b[j * nc..(j + 1) * nc]);
                rmax.copy_from_slice(&r[j * nc..(j + 1) * nc]);
            }
            _ => {
                self.reward_model.predict_row(ctx, rhat);
                greedy(&self.clustering, rhat, best, rmax);
            }
        }
    }

    /// π^RM(·|x, c) as an action id.
    pub fn choose(&self, ctx: Ctx<'_>, cluster: usize) -> usize {
        let mut rhat = vec![0.0; self.clustering.num_actions()];
        let mut best = vec![0; self.num_clusters()];
        let mut rmax = vec![0.0; self.num_clusters()];
        self.fill(ctx, &mut rhat, &mut best, &mut rmax);
        best[cluster]
    }
}

fn greedy(clustering: &Clustering, rhat: &[f64], best: &mut [usize], rmax: &mut [f64]) {
    for c in 0..clustering.num_clusters() {
        let members = clustering.members(c);
        let mut b = members[0];
        for &a in &members[1..] {
            if rhat[a] > rhat[b] {
                b = a;
            }
        }
        best[c] = b;
        rmax[c] = rhat[b];
    }
}

/// Two-stage policy π(a|x) = Σ_c π^RM(a|x,c)·π^CL(c|x).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPolicy<P = SoftmaxPolicy> {
    /// π^CL, one output per cluster.
    pub cluster_policy: P,
    selector: GreedySelector,
}

impl<P: ActionPolicy> ClusterPolicy<P> {
    pub fn new(cluster_policy: P, selector: GreedySelector) -> Result<Self> {
        if cluster_policy.num_actions() != selector.num_clusters() {
            return Err(Error::contract(format!(
                "cluster policy has {} outputs for {} clusters",
                cluster_policy.num_actions(),
                selector.num_clusters()
            )));
        }
        Ok(Self {
            cluster_policy,
            selector,
        })
    }

    pub fn selector(&self) -> &GreedySelector {
        &self.selector
    }
}

impl<P: ActionPolicy> ActionPolicy for ClusterPolicy<P> {
    fn num_actions(&self) -> usize {
        self.selector.clustering.num_actions()
    }

    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        let nc = self.selector.num_clusters();
        let q = self.cluster_policy.probs(ctx);
        let mut best = vec![0; nc];
        let mut rmax = vec![0.0; nc];
        self.selector.fill(ctx, out, &mut best, &mut rmax);
        out.iter_mut().for_each(|p| *p = 0.0);
        for c in 0..nc {
            out[best[c]] += q[c];
        }
    }
}

fn estimate<P: ActionPolicy>(method: OpeMethod, cfg: OpeConfig, ds: &LoggedDataset, policy: &P) -> Result<f64> {
    let obj = Objective::ope(method, cfg)?;
    obj.data_value(ds, policy, Execution::Sequential)
}

pub fn estimate_ips<P: ActionPolicy>(ds: &LoggedDataset, policy: &P) -> Result<f64> {
    estimate(OpeMethod::Ips, OpeConfig::new(), ds, policy)
}

pub fn estimate_cips<P: ActionPolicy>(ds: &LoggedDataset, policy: &P, tau: f64) -> Result<f64> {
    estimate(OpeMethod::Cips, OpeConfig::new().with_tau(tau), ds, policy)
}

pub fn estimate_dr<P: ActionPolicy>(ds: &LoggedDataset, policy: &P, rm: &RewardModel, tau: f64) -> Result<f64> {
    estimate(
        OpeMethod::Dr,
        OpeConfig::new().with_tau(tau).with_reward_model(rm.clone()),
        ds,
        policy,
    )
}

pub fn estimate_mips<P: ActionPolicy>(ds: &LoggedDataset, policy: &P, clustering: &Clustering) -> Result<f64> {
    estimate(OpeMethod::Mips, OpeConfig::new().with_clustering(clustering.clone()), ds, policy)
}

pub fn estimate_offcem<P: ActionPolicy>(
    ds: &LoggedDataset,
    policy: &P,
    clustering: &Clustering,
    rm: &RewardModel,
) -> Result<f64> {
    estimate(
        OpeMethod::Offcem,
        OpeConfig::new()
            .with_clustering(clustering.clone())
            .with_reward_model(rm.clone()),
        ds,
        policy,
    )
}

pub fn estimate_potec<P: ActionPolicy>(ds: &LoggedDataset, cp: &ClusterPolicy<P>) -> Result<f64> {
    let obj = Objective::potec(cp.selector.clone());
    obj.data_value(ds, &cp.cluster_policy, Execution::Sequential)
}

/// Analytic gradient of the estimate (minus the policy's l2 penalty, if any).
/// For POTEC `policy` is the cluster-level policy.
pub fn ope_gradient(method: OpeMethod, ds: &LoggedDataset, policy: &SoftmaxPolicy, cfg: &OpeConfig) -> Result<Vec<f64>> {
    let obj = Objective::ope(method, cfg.clone())?;
    Ok(obj.value_and_gradient(ds, Rows::All, policy, Execution::default())?.1)
}
