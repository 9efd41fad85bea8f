//! Softmax policies and the generic `ActionPolicy` view used by estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::linalg::{argmax, axpy, dot, norm_sq, softmax_in_place, Matrix};

/// A context as seen by a policy: its feature vector and, for contexts drawn
/// from a finite environment, the context index.
#[derive(Debug, Clone, Copy)]
pub struct Ctx<'a> {
    pub x: &'a [f64],
    pub id: Option<usize>,
}

impl<'a> Ctx<'a> {
    pub fn new(x: &'a [f64], id: Option<usize>) -> Self {
        Self { x, id }
    }
}

/// Anything that maps a context to a distribution over actions.
pub trait ActionPolicy: Sync {
    fn num_actions(&self) -> usize;

    /// Writes π(·|ctx) into `out` (length `num_actions()`).
    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]);

    fn probs(&self, ctx: Ctx<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions()];
        self.probs_into(ctx, &mut out);
        out
    }

    /// Deterministic deployment: most probable action, lowest index on ties.
    fn deploy(&self, ctx: Ctx<'_>) -> usize {
        argmax(&self.probs(ctx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    /// One weight row per action: score_a = θ_a · x.
    LinearPerAction,
    /// score_a = e_a · z(x) with fixed action embeddings `e_a` (K×p) and a
    /// trainable encoder z. `hidden = Some(h)` inserts one tanh layer of width h.
    InnerProduct {
        embeddings: Matrix,
        hidden: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    num_actions: usize,
    context_dim: usize,
    kind: PolicyKind,
    params: Vec<f64>,
    pub l2_strength: f64,
}

/// Per-thread scratch buffers for forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub probs: Vec<f64>,
    pub dscores: Vec<f64>,
    scores: Vec<f64>,
    log_norm: f64,
    z: Vec<f64>,
    h: Vec<f64>,
    dz: Vec<f64>,
    dh: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn linear(num_actions: usize, context_dim: usize) -> Self {
        Self {
            num_actions,
            context_dim,
            kind: PolicyKind::LinearPerAction,
            params: vec![0.0; num_actions * context_dim],
            l2_strength: 0.0,
        }
    }

    /// Inner-product policy over the rows of `embeddings` (one per action).
    pub fn inner_product(embeddings: Matrix, context_dim: usize, hidden: Option<usize>) -> Self {
        let p = embeddings.cols();
        let n_params = match hidden {
            None => p * context_dim,
            Some(h) => h * context_dim + p * h,
        };
        Self {
            num_actions: embeddings.rows(),
            context_dim,
            kind: PolicyKind::InnerProduct { embeddings, hidden },
            params: vec![0.0; n_params],
            l2_strength: 0.0,
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2_strength = l2;
        self
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        self.set_params(params)?;
        Ok(self)
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Scores are linear in the trainable parameters (no hidden layer).
    pub fn is_linear_in_params(&self) -> bool {
        !matches!(
            self.kind,
            PolicyKind::InnerProduct {
                hidden: Some(_),
                ..
            }
        )
    }

    /// (l2/2)·‖θ‖²
    pub fn l2_penalty(&self) -> f64 {
        0.5 * self.l2_strength * norm_sq(&self.params)
    }

    pub fn zero_params(&mut self) {
        self.params.iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn gaussian_params(&mut self, sigma: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        for p in &mut self.params {
            *p = normal.sample(&mut rng);
        }
    }

    pub fn workspace(&self) -> Workspace {
        let (p, h) = match &self.kind {
            PolicyKind::LinearPerAction => (0, 0),
            PolicyKind::InnerProduct { embeddings, hidden } => (embeddings.cols(), hidden.unwrap_or(0)),
        };
        Workspace {
            probs: vec![0.0; self.num_actions],
            dscores: vec![0.0; self.num_actions],
            scores: vec![0.0; self.num_actions],
            log_norm: 0.0,
            z: vec![0.0; p],
            h: vec![0.0; h],
            dz: vec![0.0; p],
            dh: vec![0.0; h],
        }
    }

    pub fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.context_dim {
            return Err(Error::contract(format!(
                "context has dimension {}, policy expects {}",
                x.len(),
                self.context_dim
            )));
        }
        Ok(())
    }

    /// Raw scores into `ws.scores`, caching encoder activations.
    fn scores(&self, x: &[f64], ws: &mut Workspace) {
        let d = self.context_dim;
        match &self.kind {
            PolicyKind::LinearPerAction => {
                for (a, s) in ws.scores.iter_mut().enumerate() {
                    *s = dot(&self.params[a * d..(a + 1) * d], x);
                }
            }
            PolicyKind::InnerProduct { embeddings, hidden } => {
                let p = embeddings.cols();
                match hidden {
                    None => {
                        for (k, zk) in ws.z.iter_mut().enumerate() {
                            *zk = dot(&self.params[k * d..(k + 1) * d], x);
                        }
                    }
                    Some(h) => {
                        let (w1, w2) = self.params.split_at(h * d);
                        for (j, hj) in ws.h.iter_mut().enumerate() {
                            *hj = dot(&w1[j * d..(j + 1) * d], x).tanh();
                        }
                        for (k, zk) in ws.z.iter_mut().enumerate() {
                            *zk = dot(&w2[k * h..(k + 1) * h], &ws.h);
                        }
                    }
                }
                for (a, s) in ws.scores.iter_mut().enumerate() {
                    *s = dot(&embeddings.as_slice()[a * p..(a + 1) * p], &ws.z);
                }
            }
        }
    }

    /// π(·|x) into `ws.probs`.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace) {
        self.scores(x, ws);
        let max = ws.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, &s) in ws.probs.iter_mut().zip(&ws.scores) {
            *p = (s - max).exp();
            total += *p;
        }
        let inv = 1.0 / total;
        ws.probs.iter_mut().for_each(|p| *p *= inv);
        ws.log_norm = max + total.ln();
    }

    /// log π(a|x) from the last `forward`, exact even where π underflows.
    #[inline]
    pub fn log_prob(&self, ws: &Workspace, action: usize) -> f64 {
        ws.scores[action] - ws.log_norm
    }

    /// Accumulates `scale · ∂(dscores · s(x))/∂θ` into `grad`. Must follow a
    /// `forward` on the same `x` and workspace.
    pub fn backward(&self, x: &[f64], ws: &mut Workspace, scale: f64, grad: &mut [f64]) {
        let d = self.context_dim;
        match &self.kind {
            PolicyKind::LinearPerAction => {
                for (a, &g) in ws.dscores.iter().enumerate() {
                    if g != 0.0 {
                        axpy(scale * g, x, &mut grad[a * d..(a + 1) * d]);
                    }
                }
            }
            PolicyKind::InnerProduct { embeddings, hidden } => {
                let p = embeddings.cols();
                ws.dz.iter_mut().for_each(|v| *v = 0.0);
                for (a, &g) in ws.dscores.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, &embeddings.as_slice()[a * p..(a + 1) * p], &mut ws.dz);
                    }
                }
                match hidden {
                    None => {
                        for (k, &g) in ws.dz.iter().enumerate() {
                            axpy(scale * g, x, &mut grad[k * d..(k + 1) * d]);
                        }
                    }
                    Some(h) => {
                        let h = *h;
                        let (g1, g2) = grad.split_at_mut(h * d);
                        let w2 = &self.params[h * d..];
                        ws.dh.iter_mut().for_each(|v| *v = 0.0);
                        for (k, &g) in ws.dz.iter().enumerate() {
                            axpy(scale * g, &ws.h, &mut g2[k * h..(k + 1) * h]);
                            axpy(g, &w2[k * h..(k + 1) * h], &mut ws.dh);
                        }
                        for j in 0..h {
                            let pre = ws.dh[j] * (1.0 - ws.h[j] * ws.h[j]);
                            if pre != 0.0 {
                                axpy(scale * pre, x, &mut g1[j * d..(j + 1) * d]);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Jacobian of the score vector with respect to the parameters (K × P).
    /// Only defined for parametrizations that are linear in θ.
    pub fn score_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let d = self.context_dim;
        let mut jac = Matrix::zeros(self.num_actions, self.params.len());
        match &self.kind {
            PolicyKind::LinearPerAction => {
                for a in 0..self.num_actions {
                    jac.row_mut(a)[a * d..(a + 1) * d].copy_from_slice(x);
                }
            }
            PolicyKind::InnerProduct {
                embeddings,
                hidden: None,
            } => {
                for a in 0..self.num_actions {
                    let row = jac.row_mut(a);
                    for (k, &e) in embeddings.row(a).iter().enumerate() {
                        axpy(e, x, &mut row[k * d..(k + 1) * d]);
                    }
                }
            }
            PolicyKind::InnerProduct { hidden: Some(_), .. } => {
                return Err(Error::contract("score Jacobian is parameter-dependent for hidden-layer encoders"));
            }
        }
        Ok(jac)
    }
}

impl ActionPolicy for SoftmaxPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        if let PolicyKind::LinearPerAction = self.kind {
            let d = self.context_dim;
            for (a, s) in out.iter_mut().enumerate() {
                *s = dot(&self.params[a * d..(a + 1) * d], ctx.x);
            }
            softmax_in_place(out);
            return;
        }
        let mut ws = self.workspace();
        self.forward(ctx.x, &mut ws);
        out.copy_from_slice(&ws.probs);
    }
}

/// Explicit per-context probability table (e.g. a logging policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePolicy {
    pub table: Matrix,
}

impl ActionPolicy for TablePolicy {
    fn num_actions(&self) -> usize {
        self.table.cols()
    }

    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        let id = ctx.id.expect("table policies need context ids");
        out.copy_from_slice(self.table.row(id));
    }
}

/// Point mass on a fixed action per context id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub num_actions: usize,
    pub choices: Vec<usize>,
}

impl ActionPolicy for DeterministicPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        let id = ctx.id.expect("deterministic table policies need context ids");
        out.iter_mut().for_each(|p| *p = 0.0);
        out[self.choices[id]] = 1.0;
    }
}

/// π_θ(·|x) for a single context.
pub fn policy_probs(policy: &SoftmaxPolicy, context: &[f64]) -> Result<Vec<f64>> {
    policy.check_context(context)?;
    Ok(policy.probs(Ctx::new(context, None)))
}

/// π(c|x) = Σ_{a: φ(a)=c} π(a|x).
pub fn cluster_marginal(policy: &SoftmaxPolicy, context: &[f64], clustering: &Clustering) -> Result<Vec<f64>> {
    if clustering.num_actions() != policy.num_actions {
        return Err(Error::contract(format!(
            "clustering covers {} actions, policy has {}",
            clustering.num_actions(),
            policy.num_actions
        )));
    }
    let probs = policy_probs(policy, context)?;
    Ok(clustering.marginalize(&probs))
}

pub fn deploy_argmax(policy: &SoftmaxPolicy, context: &[f64]) -> Result<usize> {
    Ok(argmax(&policy_probs(policy, context)?))
}
