//! Reward models r̂(x, a) used by the doubly-robust family.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::policy::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RewardModelMode {
    ExactOracle,
    /// r̂ = clip(r + U(−δ, δ))
    PerturbedOracle { delta: f64 },
    LeastSquaresFit,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum RewardModel {
    /// One row per discrete context id, one column per action.
    Table { table: Matrix, mode: RewardModelMode },
    /// Per-action linear predictor on `[x, 1]`, clipped to [0, 1].
    Linear { weights: Matrix, mode: RewardModelMode },
    Constant { num_actions: usize, value: f64 },
}

impl RewardModel {
    pub fn exact(reward_table: &Matrix) -> Self {
        RewardModel::Table {
            table: clipped(reward_table.clone()),
            mode: RewardModelMode::ExactOracle,
        }
    }

    pub fn perturbed(reward_table: &Matrix, delta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::config(format!("perturbation amplitude must be ≥ 0, got {delta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = reward_table.clone();
        for v in table.as_mut_slice() {
            if delta > 0.0 {
                *v += rng.random_range(-delta..=delta);
            }
        }
        Ok(RewardModel::Table {
            table: clipped(table),
            mode: RewardModelMode::PerturbedOracle { delta },
        })
    }

    pub fn constant(num_actions: usize, value: f64) -> Self {
        RewardModel::Constant {
            num_actions,
            value: value.clamp(0.0, 1.0),
        }
    }

    /// Per-action ridge regression of rewards on `[x, 1]`. Actions never logged
    /// predict the global mean reward.
    pub fn fit_least_squares(ds: &LoggedDataset, ridge: f64) -> Self {
        let d = ds.context_dim();
        let k = ds.num_actions();
        let mut weights = Matrix::zeros(k, d + 1);
        let mean = ds.rewards().iter().sum::<f64>() / ds.len().max(1) as f64;
        let mut by_action: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &a) in ds.actions().iter().enumerate() {
            by_action[a].push(i);
        }
        for (a, rows) in by_action.iter().enumerate() {
            if rows.is_empty() {
                weights.row_mut(a)[d] = mean;
                continue;
            }
            let mut gram = DMatrix::<f64>::identity(d + 1, d + 1) * ridge.max(1e-9);
            let mut rhs = DVector::<f64>::zeros(d + 1);
            let mut feat = vec![1.0; d + 1];
            for &i in rows {
                feat[..d].copy_from_slice(ds.context(i));
                let r = ds.rewards()[i];
                for p in 0..=d {
                    rhs[p] += feat[p] * r;
                    for q in 0..=d {
                        gram[(p, q)] += feat[p] * feat[q];
                    }
                }
            }
            let sol = gram
                .cholesky()
                .map(|c| c.solve(&rhs))
                .unwrap_or_else(|| DVector::from_element(d + 1, 0.0));
            weights.row_mut(a).copy_from_slice(sol.as_slice());
        }
        RewardModel::Linear {
            weights,
            mode: RewardModelMode::LeastSquaresFit,
        }
    }

    pub fn mode(&self) -> RewardModelMode {
        match self {
            RewardModel::Table { mode, .. } | RewardModel::Linear { mode, .. } => *mode,
            RewardModel::Constant { .. } => RewardModelMode::Constant,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            RewardModel::Table { table, .. } => table.cols(),
            RewardModel::Linear { weights, .. } => weights.rows(),
            RewardModel::Constant { num_actions, .. } => *num_actions,
        }
    }

    /// True when predictions are looked up by context id.
    pub fn needs_context_ids(&self) -> bool {
        matches!(self, RewardModel::Table { .. })
    }

    pub fn predict(&self, ctx: Ctx<'_>, action: usize) -> f64 {
        match self {
            RewardModel::Table { table, .. } => table.get(ctx.id.expect("tabular reward model needs context ids"), action),
            RewardModel::Linear { weights, .. } => {
                let w = weights.row(action);
                let d = ctx.x.len();
                (dot(&w[..d], ctx.x) + w[d]).clamp(0.0, 1.0)
            }
            RewardModel::Constant { value, .. } => *value,
        }
    }

    pub fn predict_row(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        match self {
            RewardModel::Table { table, .. } => {
                out.copy_from_slice(table.row(ctx.id.expect("tabular reward model needs context ids")))
            }
            RewardModel::Constant { value, .. } => out.iter_mut().for_each(|v| *v = *value),
            RewardModel::Linear { .. } => {
                for (a, v) in out.iter_mut().enumerate() {
                    *v = self.predict(ctx, a);
                }
            }
        }
    }
}

fn clipped(mut m: Matrix) -> Matrix {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    m
}
