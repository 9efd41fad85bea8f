//! One evaluation engine for every training objective.
//!
//! Each objective is a mean of per-sample terms. Terms are evaluated in index
//! order inside fixed chunks and merged in chunk order (see [`crate::par`]), so
//! values and gradients do not depend on the execution mode.

use std::collections::HashMap;
use std::fmt;

use crate::dataset::{LoggedDataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::ope::{GreedySelector, OpeConfig, OpeMethod};
use crate::par::{chunked_reduce, Execution};
use crate::policy::{ActionPolicy, SoftmaxPolicy, Workspace};
use crate::pwll::Weighting;

#[derive(Debug, Clone)]
pub enum Objective {
    Ope {
        method: OpeMethod,
        cfg: OpeConfig,
        selector: Option<GreedySelector>,
    },
    Pwll(Weighting),
}

/// Which samples a pass runs over.
#[derive(Debug, Clone, Copy)]
pub enum Rows<'a> {
    All,
    Subset(&'a [usize]),
}

impl Rows<'_> {
    fn len(&self, n: usize) -> usize {
        match self {
            Rows::All => n,
            Rows::Subset(idx) => idx.len(),
        }
    }

    #[inline]
    fn get(&self, t: usize) -> usize {
        match self {
            Rows::All => t,
            Rows::Subset(idx) => idx[t],
        }
    }
}

struct Scratch {
    rhat: Vec<f64>,
    best: Vec<usize>,
    rmax: Vec<f64>,
}

impl Objective {
    pub fn ope(method: OpeMethod, cfg: OpeConfig) -> Result<Self> {
        cfg.validate(method)?;
        let selector = if method == OpeMethod::Potec {
            Some(GreedySelector::new(
                cfg.clustering.clone().expect("validated"),
                cfg.reward_model.clone().expect("validated"),
            )?)
        } else {
            None
        };
        Ok(Objective::Ope { method, cfg, selector })
    }

    /// POTEC around an existing selector.
    pub fn potec(selector: GreedySelector) -> Self {
        let cfg = OpeConfig::new()
            .with_clustering(selector.clustering().clone())
            .with_reward_model(selector.reward_model().clone());
        Objective::Ope {
            method: OpeMethod::Potec,
            cfg,
            selector: Some(selector),
        }
    }

    pub fn pwll(w: Weighting) -> Result<Self> {
        w.validate()?;
        Ok(Objective::Pwll(w))
    }

    pub fn name(&self) -> String {
        match self {
            Objective::Ope { method, .. } => method.name().to_string(),
            Objective::Pwll(w) => w.name().to_string(),
        }
    }

    pub fn is_pwll(&self) -> bool {
        matches!(self, Objective::Pwll(_))
    }

    pub fn ope_method(&self) -> Option<OpeMethod> {
        match self {
            Objective::Ope { method, .. } => Some(*method),
            Objective::Pwll(_) => None,
        }
    }

    pub fn selector(&self) -> Option<&GreedySelector> {
        match self {
            Objective::Ope { selector, .. } => selector.as_ref(),
            Objective::Pwll(_) => None,
        }
    }

    /// Number of policy outputs the objective expects: |C| for POTEC, else K.
    pub fn output_dim(&self, num_actions: usize) -> usize {
        self.selector().map_or(num_actions, GreedySelector::num_clusters)
    }

    /// Checks the dataset and policy shape against what the objective needs.
    pub fn validate(&self, ds: &LoggedDataset, policy_outputs: usize) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        let expected = self.output_dim(ds.num_actions());
        if policy_outputs != expected {
            return Err(Error::contract(format!(
                "{} expects a policy with {expected} outputs, got {policy_outputs}",
                self.name()
            )));
        }
        match self {
            Objective::Ope { method, cfg, .. } => {
                if let Some(cl) = &cfg.clustering {
                    if method.needs_clustering() {
                        ds.check_clustering(cl)?;
                    }
                }
                if let Some(rm) = &cfg.reward_model {
                    if rm.num_actions() != ds.num_actions() {
                        return Err(Error::config("reward model action count differs from the dataset"));
                    }
                    if rm.needs_context_ids() && ds.context_ids().is_none() {
                        return Err(Error::config("tabular reward model needs context ids in the dataset"));
                    }
                }
            }
            Objective::Pwll(w) => {
                for i in 0..ds.len() {
                    let g = w.weight(ds.rewards()[i], ds.logging_probs()[i]);
                    if !(g >= 0.0 && g.is_finite()) {
                        return Err(Error::config(format!("weighting gives {g} on sample {i}; must be finite and ≥ 0")));
                    }
                }
            }
        }
        Ok(())
    }

    fn scratch(&self, num_actions: usize) -> Scratch {
        let nc = self.selector().map_or(0, GreedySelector::num_clusters);
        Scratch {
            rhat: vec![0.0; num_actions],
            best: vec![0; nc],
            rmax: vec![0.0; nc],
        }
    }

    /// One sample's contribution. `probs` are the policy outputs for the
    /// sample's context; `dscores`, when given, receives d(term)/d(scores).
    fn term(&self, s: &Sample<'_>, probs: &[f64], log_prob: f64, sc: &mut Scratch, dscores: Option<&mut [f64]>) -> f64 {
        let a = s.action;
        let r = s.reward;
        match self {
            Objective::Pwll(w) => {
                let g = w.weight(r, s.logging_prob);
                if let Some(d) = dscores {
                    for (db, &pb) in d.iter_mut().zip(probs) {
                        *db = -g * pb;
                    }
                    d[a] += g;
                }
                if g == 0.0 {
                    0.0
                } else {
                    g * log_prob
                }
            }
            Objective::Ope { method, cfg, selector } => match method {
                OpeMethod::Ips | OpeMethod::Cips => {
                    let denom = if *method == OpeMethod::Ips {
                        s.logging_prob
                    } else {
                        s.logging_prob.max(cfg.tau)
                    };
                    let wpa = r / denom * probs[a];
                    if let Some(d) = dscores {
                        for (db, &pb) in d.iter_mut().zip(probs) {
                            *db = -wpa * pb;
                        }
                        d[a] += wpa;
                    }
                    wpa
                }
                OpeMethod::Dr => {
                    let rm = cfg.reward_model.as_ref().expect("validated");
                    rm.predict_row(s.ctx, &mut sc.rhat);
                    let e = dot(probs, &sc.rhat);
                    let wpa = (r - sc.rhat[a]) / s.logging_prob.max(cfg.tau) * probs[a];
                    if let Some(d) = dscores {
                        for ((db, &pb), &rb) in d.iter_mut().zip(probs).zip(&sc.rhat) {
                            *db = -wpa * pb + pb * (rb - e);
                        }
                        d[a] += wpa;
                    }
                    wpa + e
                }
                OpeMethod::Mips | OpeMethod::Offcem => {
                    let cl = cfg.clustering.as_ref().expect("validated");
                    let c = s.cluster.expect("validated");
                    let pc = s.cluster_logging_prob.expect("validated");
                    let pic: f64 = cl.members(c).iter().map(|&b| probs[b]).sum();
                    let (resid, e) = if *method == OpeMethod::Offcem {
                        let rm = cfg.reward_model.as_ref().expect("validated");
                        rm.predict_row(s.ctx, &mut sc.rhat);
                        (r - sc.rhat[a], dot(probs, &sc.rhat))
                    } else {
                        (r, 0.0)
                    };
                    let w = resid / pc;
                    if let Some(d) = dscores {
                        for (b, (db, &pb)) in d.iter_mut().zip(probs).enumerate() {
                            let inside = if cl.cluster_of(b) == c { 1.0 } else { 0.0 };
                            *db = w * pb * (inside - pic);
                            if *method == OpeMethod::Offcem {
                                *db += pb * (sc.rhat[b] - e);
                            }
                        }
                    }
                    w * pic + e
                }
                OpeMethod::Potec => {
                    let sel = selector.as_ref().expect("potec carries a selector");
                    let rm = sel.reward_model();
                    let c = s.cluster.expect("validated");
                    let pc = s.cluster_logging_prob.expect("validated");
                    sel.fill(s.ctx, &mut sc.rhat, &mut sc.best, &mut sc.rmax);
                    let e = dot(probs, &sc.rmax);
                    let wq = (r - rm.predict(s.ctx, a)) / pc * probs[c];
                    if let Some(d) = dscores {
                        for ((dk, &qk), &mk) in d.iter_mut().zip(probs).zip(&sc.rmax) {
                            *dk = -wq * qk + qk * (mk - e);
                        }
                        d[c] += wq;
                    }
                    wq + e
                }
            },
        }
    }

    /// Mean of the per-sample terms under any policy (no regularization).
    /// For POTEC `policy` is the cluster-level policy.
    pub fn data_value<P: ActionPolicy + ?Sized>(&self, ds: &LoggedDataset, policy: &P, exec: Execution) -> Result<f64> {
        self.validate(ds, policy.num_actions())?;
        let n = ds.len();
        let out = policy.num_actions();
        let total = chunked_reduce(
            exec,
            n,
            |start, end| {
                let mut probs = vec![0.0; out];
                let mut sc = self.scratch(ds.num_actions());
                let mut acc = 0.0;
                for i in start..end {
                    let s = ds.sample(i);
                    policy.probs_into(s.ctx, &mut probs);
                    let lp = if self.is_pwll() { probs[s.action].ln() } else { 0.0 };
                    acc += self.term(&s, &probs, lp, &mut sc, None);
                }
                acc
            },
            |x, y| x + y,
        )
        .unwrap_or(0.0);
        Ok(total / n as f64)
    }

    /// Objective value on `rows`: mean term minus (l2/2)‖θ‖².
    pub fn value(&self, ds: &LoggedDataset, rows: Rows<'_>, policy: &SoftmaxPolicy, exec: Execution) -> Result<f64> {
        self.check(ds, policy)?;
        self.value_unchecked(ds, rows, policy, exec)
    }

    /// `validate` plus the context-dimension check, for callers that then use
    /// the unchecked passes repeatedly.
    pub fn check(&self, ds: &LoggedDataset, policy: &SoftmaxPolicy) -> Result<()> {
        self.validate(ds, policy.num_actions())?;
        check_dims(ds, policy)
    }

    pub(crate) fn value_unchecked(
        &self,
        ds: &LoggedDataset,
        rows: Rows<'_>,
        policy: &SoftmaxPolicy,
        exec: Execution,
    ) -> Result<f64> {
        let len = rows.len(ds.len());
        if len == 0 {
            return Err(Error::config("empty batch"));
        }
        let total = chunked_reduce(
            exec,
            len,
            |start, end| {
                let mut sc = self.scratch(ds.num_actions());
                let mut acc = 0.0;
                if let Some((slot_of, slots, _)) = context_slots(ds, rows, start, end, policy) {
                    for t in start..end {
                        let s = ds.sample(rows.get(t));
                        let ws = &slots[slot_of[t - start]];
                        let lp = if self.is_pwll() { policy.log_prob(ws, s.action) } else { 0.0 };
                        acc += self.term(&s, &ws.probs, lp, &mut sc, None);
                    }
                    return acc;
                }
                let mut ws = policy.workspace();
                for t in start..end {
                    let s = ds.sample(rows.get(t));
                    policy.forward(s.ctx.x, &mut ws);
                    let lp = if self.is_pwll() { policy.log_prob(&ws, s.action) } else { 0.0 };
                    acc += self.term(&s, &ws.probs, lp, &mut sc, None);
                }
                acc
            },
            |x, y| x + y,
        )
        .unwrap_or(0.0);
        Ok(total / len as f64 - policy.l2_penalty())
    }

    /// Objective value and its gradient with respect to the policy parameters.
    pub fn value_and_gradient(
        &self,
        ds: &LoggedDataset,
        rows: Rows<'_>,
        policy: &SoftmaxPolicy,
        exec: Execution,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(ds, policy)?;
        self.value_and_gradient_unchecked(ds, rows, policy, exec)
    }

    pub(crate) fn value_and_gradient_unchecked(
        &self,
        ds: &LoggedDataset,
        rows: Rows<'_>,
        policy: &SoftmaxPolicy,
        exec: Execution,
    ) -> Result<(f64, Vec<f64>)> {
        let len = rows.len(ds.len());
        if len == 0 {
            return Err(Error::config("empty batch"));
        }
        let np = policy.num_params();
        let (total, mut grad) = chunked_reduce(
            exec,
            len,
            |start, end| {
                let mut sc = self.scratch(ds.num_actions());
                let mut grad = vec![0.0; np];
                let mut acc = 0.0;
                if let Some((slot_of, mut slots, first)) = context_slots(ds, rows, start, end, policy) {
                    // the gradient is linear in d(scores): sum those per context,
                    // then run one backward pass per context
                    let mut d = vec![0.0; policy.num_actions()];
                    slots.iter_mut().for_each(|ws| ws.dscores.iter_mut().for_each(|v| *v = 0.0));
                    for t in start..end {
                        let s = ds.sample(rows.get(t));
                        let ws = &mut slots[slot_of[t - start]];
                        let lp = if self.is_pwll() { policy.log_prob(ws, s.action) } else { 0.0 };
                        acc += self.term(&s, &ws.probs, lp, &mut sc, Some(&mut d));
                        axpy(1.0, &d, &mut ws.dscores);
                    }
                    for (ws, &i) in slots.iter_mut().zip(&first) {
                        policy.backward(ds.context(i), ws, 1.0, &mut grad);
                    }
                    return (acc, grad);
                }
                let mut ws = policy.workspace();
                for t in start..end {
                    let s = ds.sample(rows.get(t));
                    policy.forward(s.ctx.x, &mut ws);
                    let lp = if self.is_pwll() { policy.log_prob(&ws, s.action) } else { 0.0 };
                    let mut dscores = std::mem::take(&mut ws.dscores);
                    acc += self.term(&s, &ws.probs, lp, &mut sc, Some(&mut dscores));
                    ws.dscores = dscores;
                    policy.backward(s.ctx.x, &mut ws, 1.0, &mut grad);
                }
                (acc, grad)
            },
            |(v1, mut g1), (v2, g2)| {
                axpy(1.0, &g2, &mut g1);
                (v1 + v2, g1)
            },
        )
        .unwrap_or((0.0, vec![0.0; np]));
        let inv = 1.0 / len as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        axpy(-policy.l2_strength, policy.params(), &mut grad);
        Ok((total * inv - policy.l2_penalty(), grad))
    }

    pub fn gradient(&self, ds: &LoggedDataset, policy: &SoftmaxPolicy, exec: Execution) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(ds, Rows::All, policy, exec)?.1)
    }
}

/// One forward pass per distinct context id in the chunk. Returns the slot of
/// each row, the slots' workspaces and each slot's first row, or `None` when the dataset has no ids
/// or the chunk has too few repeats for caching to pay off.
fn context_slots(
    ds: &LoggedDataset,
    rows: Rows<'_>,
    start: usize,
    end: usize,
    policy: &SoftmaxPolicy,
) -> Option<(Vec<usize>, Vec<Workspace>, Vec<usize>)> {
    let ids = ds.context_ids()?;
    let len = end - start;
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut first = Vec::new();
    let mut slot_of = Vec::with_capacity(len);
    for t in start..end {
        let i = rows.get(t);
        let next = seen.len();
        let k = *seen.entry(ids[i]).or_insert(next);
        if k == next {
            first.push(i);
            if 4 * first.len() > len {
                return None;
            }
        }
        slot_of.push(k);
    }
    let slots = first
        .iter()
        .map(|&i| {
            let mut ws = policy.workspace();
            policy.forward(ds.context(i), &mut ws);
            ws
        })
        .collect();
    Some((slot_of, slots, first))
}

fn check_dims(ds: &LoggedDataset, policy: &SoftmaxPolicy) -> Result<()> {
    if ds.context_dim() != policy.context_dim() {
        return Err(Error::contract(format!(
            "dataset contexts have dimension {}, policy expects {}",
            ds.context_dim(),
            policy.context_dim()
        )));
    }
    Ok(())
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
