//! Policy-weighted log-likelihood objectives: mean of g(r, p₀)·log π(a|x).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::{norm_sq, Matrix};
use crate::objective::{Objective, Rows};
use crate::par::Execution;
use crate::policy::SoftmaxPolicy;

/// User-supplied weighting g(r, p₀).
#[derive(Clone)]
pub struct CustomWeight(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomWeight(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weighting {
    /// g = r
    Lpi,
    /// g = r / max(p₀, τ)
    Clpi { tau: f64 },
    /// g = exp(r/β) − 1
    Regkl { beta: f64 },
    #[serde(skip)]
    Custom(CustomWeight),
}

impl Weighting {
    pub fn custom(g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Weighting::Custom(CustomWeight(Arc::new(g)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Lpi => "lpi",
            Weighting::Clpi { .. } => "clpi",
            Weighting::Regkl { .. } => "regkl",
            Weighting::Custom(_) => "custom",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Weighting::Clpi { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(Error::config(format!("tau must lie in [0, 1], got {tau}")))
            }
            Weighting::Regkl { beta } => regkl_weight(0.0, beta).map(|_| ()),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn weight(&self, r: f64, p0: f64) -> f64 {
        match self {
            Weighting::Lpi => r,
            Weighting::Clpi { tau } => r / p0.max(*tau),
            Weighting::Regkl { beta } => (r / beta).exp_m1(),
            Weighting::Custom(g) => (g.0)(r, p0),
        }
    }
}

pub fn regkl_weight(r: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {beta}")));
    }
    Ok((r / beta).exp_m1())
}

/// Mean weighted log-likelihood minus (l2/2)‖θ‖².
pub fn pwll_objective(ds: &LoggedDataset, policy: &SoftmaxPolicy, w: &Weighting) -> Result<f64> {
    Objective::pwll(w.clone())?.value(ds, Rows::All, policy, Execution::default())
}

pub fn pwll_gradient(ds: &LoggedDataset, policy: &SoftmaxPolicy, w: &Weighting) -> Result<Vec<f64>> {
    Objective::pwll(w.clone())?.gradient(ds, policy, Execution::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub trials: usize,
    pub seed: u64,
    /// Standard deviation of the random parameter draws.
    pub sigma: f64,
    /// Midpoint slack, scaled by 1 + |U(θ₁)| + |U(θ₂)|.
    pub tolerance: f64,
    /// Random points at which the Hessian is checked (only when P ≤ 200).
    pub hessian_points: usize,
    pub hessian_tolerance: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            sigma: 1.0,
            tolerance: 1e-10,
            hessian_points: 3,
            hessian_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub passed: bool,
    pub trials: usize,
    pub violations: usize,
    /// Smallest U(mid) − (U₁+U₂)/2 − (l2/8)‖θ₁−θ₂‖² seen; negative means a violation.
    pub worst_margin: f64,
    /// Largest Hessian eigenvalue over the checked points, when checked.
    pub max_hessian_eigenvalue: Option<f64>,
    /// The eigenvalue bound −l2.
    pub hessian_bound: f64,
}

/// Largest number of parameters for which the Hessian is formed.
pub const HESSIAN_MAX_PARAMS: usize = 200;

/// Randomized check that `objective` is l2-strongly concave in the parameters
/// of `policy`. Any objective may be certified; only PWLL ones should pass.
pub fn concavity_certificate(
    ds: &LoggedDataset,
    policy: &SoftmaxPolicy,
    objective: &Objective,
    opts: &CertificateOptions,
) -> Result<CertificateReport> {
    if !policy.is_linear_in_params() {
        return Err(Error::contract(
            "strong concavity is only claimed for softmax policies whose scores are linear in the parameters",
        ));
    }
    let l2 = policy.l2_strength;
    if l2 <= 0.0 {
        return Err(Error::config("the certificate needs l2_strength > 0"));
    }
    let exec = Execution::default();
    let np = policy.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.sigma).map_err(|e| Error::config(e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..np).map(|_| normal.sample(rng)).collect() };

    let mut work = policy.clone();
    let mut eval = |theta: Vec<f64>| -> Result<f64> {
        work.set_params(theta)?;
        objective.value(ds, Rows::All, &work, exec)
    };

    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..opts.trials {
        let t1 = draw(&mut rng);
        let t2 = draw(&mut rng);
        let mid: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a - b).collect();
        let u1 = eval(t1)?;
        let u2 = eval(t2)?;
        let um = eval(mid)?;
        let margin = um - 0.5 * (u1 + u2) - l2 / 8.0 * norm_sq(&diff);
        if margin < -opts.tolerance * (1.0 + u1.abs() + u2.abs()) {
            violations += 1;
        }
        worst = worst.min(margin);
    }

    let mut max_eig = None;
    if np <= HESSIAN_MAX_PARAMS {
        for _ in 0..opts.hessian_points {
            let mut at = policy.clone();
            at.set_params(draw(&mut rng))?;
            let h = hessian_fd(ds, &at, objective, 1e-5)?;
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(np, np, h.as_slice()))
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            max_eig = Some(max_eig.map_or(eig, |m: f64| m.max(eig)));
        }
    }
    let hessian_ok = max_eig.is_none_or(|e| e <= -l2 + opts.hessian_tolerance);
    Ok(CertificateReport {
        passed: violations == 0 && hessian_ok,
        trials: opts.trials,
        violations,
        worst_margin: if opts.trials == 0 { 0.0 } else { worst },
        max_hessian_eigenvalue: max_eig,
        hessian_bound: -l2,
    })
}

/// Symmetrized Hessian by central differences of the analytic gradient.
pub fn hessian_fd(ds: &LoggedDataset, policy: &SoftmaxPolicy, objective: &Objective, step: f64) -> Result<Matrix> {
    let np = policy.num_params();
    let exec = Execution::default();
    let mut h = Matrix::zeros(np, np);
    let mut work = policy.clone();
    for j in 0..np {
        let base = policy.params()[j];
        work.params_mut()[j] = base + step;
        let gp = objective.gradient(ds, &work, exec)?;
        work.params_mut()[j] = base - step;
        let gm = objective.gradient(ds, &work, exec)?;
        work.params_mut()[j] = base;
        for i in 0..np {
            h.set(i, j, (gp[i] - gm[i]) / (2.0 * step));
        }
    }
    for i in 0..np {
        for j in 0..i {
            let s = 0.5 * (h.get(i, j) + h.get(j, i));
            h.set(i, j, s);
            h.set(j, i, s);
        }
    }
    Ok(h)
}
