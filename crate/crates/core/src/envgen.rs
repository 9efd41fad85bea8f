//! Finite synthetic environments with exact ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::policy::{ActionPolicy, Ctx, TablePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardModeSpec {
    #[default]
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringMode {
    #[default]
    Kmeans,
    Random,
}

/// JSON environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    #[serde(default = "default_sharpness")]
    pub reward_sharpness: f64,
    #[serde(default = "default_one")]
    pub logging_temperature: f64,
    #[serde(default = "default_one")]
    pub support_fraction: f64,
    #[serde(default)]
    pub num_clusters: usize,
    #[serde(default)]
    pub reward_mode: RewardModeSpec,
    /// Half-width of the symmetric truncated noise in continuous mode.
    #[serde(default)]
    pub reward_noise: f64,
    /// Std of the Gaussian noise added to affinities before the logging softmax.
    #[serde(default = "default_one")]
    pub logging_noise: f64,
    #[serde(default)]
    pub reward_bias: f64,
    #[serde(default)]
    pub clustering_mode: ClusteringMode,
}

fn default_sharpness() -> f64 {
    2.0
}

fn default_one() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn new(m: usize, k: usize, d: usize, seed: u64) -> Self {
        Self {
            m,
            k,
            d,
            seed,
            reward_sharpness: default_sharpness(),
            logging_temperature: 1.0,
            support_fraction: 1.0,
            num_clusters: 0,
            reward_mode: RewardModeSpec::Binary,
            reward_noise: 0.0,
            logging_noise: 1.0,
            reward_bias: 0.0,
            clustering_mode: ClusteringMode::Kmeans,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 || self.k < 1 || self.d < 1 {
            return Err(Error::config(format!("m, K, d must be ≥ 1 (got {}, {}, {})", self.m, self.k, self.d)));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction <= 1.0) {
            return Err(Error::config(format!("support_fraction {} outside (0, 1]", self.support_fraction)));
        }
        if !(self.logging_temperature > 0.0 && self.logging_temperature.is_finite()) {
            return Err(Error::config("logging_temperature must be positive and finite"));
        }
        if !self.reward_sharpness.is_finite() || !self.reward_bias.is_finite() {
            return Err(Error::config("reward_sharpness and reward_bias must be finite"));
        }
        if !(self.reward_noise >= 0.0 && self.logging_noise >= 0.0) {
            return Err(Error::config("noise levels must be ≥ 0"));
        }
        if self.num_clusters > self.k {
            return Err(Error::config(format!("num_clusters {} exceeds K={}", self.num_clusters, self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardMode {
    /// r ~ Bernoulli(r(x, a))
    Binary,
    /// r = r(x, a) + U(−δ', δ') with δ' = min(noise, r, 1 − r)
    Continuous { noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    contexts: Matrix,
    context_weights: Vec<f64>,
    reward_table: Matrix,
    logging: Matrix,
    action_features: Matrix,
    clustering: Option<Clustering>,
    reward_mode: RewardMode,
    seed: u64,
}

impl Environment {
    /// Assembles and validates an environment from explicit tables.
    pub fn from_parts(
        contexts: Matrix,
        context_weights: Vec<f64>,
        reward_table: Matrix,
        logging: Matrix,
        reward_mode: RewardMode,
        seed: u64,
    ) -> Result<Self> {
        let m = contexts.rows();
        let k = reward_table.cols();
        if context_weights.len() != m || reward_table.rows() != m || logging.rows() != m || logging.cols() != k {
            return Err(Error::contract("environment tables have inconsistent shapes"));
        }
        let wsum: f64 = context_weights.iter().sum();
        if context_weights.iter().any(|w| !(*w >= 0.0)) || (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("context weights must be nonnegative and sum to 1"));
        }
        if reward_table.as_slice().iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::validation("reward table must lie in [0, 1]"));
        }
        for (j, row) in logging.iter_rows().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!("logging row {j} is not a distribution")));
            }
        }
        Ok(Self {
            action_features: Matrix::zeros(k, contexts.cols()),
            contexts,
            context_weights,
            reward_table,
            logging,
            clustering: None,
            reward_mode,
            seed,
        })
    }

    pub fn with_clustering(mut self, clustering: Clustering) -> Result<Self> {
        if clustering.num_actions() != self.num_actions() {
            return Err(Error::config("clustering does not cover the action set"));
        }
        self.clustering = Some(clustering);
        Ok(self)
    }

    pub fn with_action_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_actions() {
            return Err(Error::contract("one feature row per action required"));
        }
        self.action_features = features;
        Ok(self)
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.reward_table.cols()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn contexts(&self) -> &Matrix {
        &self.contexts
    }

    pub fn context_weights(&self) -> &[f64] {
        &self.context_weights
    }

    pub fn ctx(&self, j: usize) -> Ctx<'_> {
        Ctx::new(self.contexts.row(j), Some(j))
    }

    pub fn reward_table(&self) -> &Matrix {
        &self.reward_table
    }

    pub fn reward(&self, j: usize, a: usize) -> f64 {
        self.reward_table.get(j, a)
    }

    pub fn logging_table(&self) -> &Matrix {
        &self.logging
    }

    pub fn logging_row(&self, j: usize) -> &[f64] {
        self.logging.row(j)
    }

    pub fn logging_policy(&self) -> TablePolicy {
        TablePolicy {
            table: self.logging.clone(),
        }
    }

    pub fn action_features(&self) -> &Matrix {
        &self.action_features
    }

    pub fn clustering(&self) -> Option<&Clustering> {
        self.clustering.as_ref()
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    /// E[f(r) | x_j, a] under the environment's reward noise, for smooth `f`
    /// given as its closed form over the two reward modes.
    pub fn expected_exp_weight(&self, j: usize, a: usize, beta: f64) -> f64 {
        let r = self.reward(j, a);
        match self.reward_mode {
            RewardMode::Binary => r * ((1.0 / beta).exp() - 1.0),
            RewardMode::Continuous { noise } => {
                let half = noise.min(r).min(1.0 - r);
                let mean_exp = if half > 0.0 {
                    let u = half / beta;
                    (r / beta).exp() * u.sinh() / u
                } else {
                    (r / beta).exp()
                };
                mean_exp - 1.0
            }
        }
    }

    /// Fixed p-dimensional action embeddings derived from the latent action
    /// features (identity when p matches their width, else a seeded projection).
    pub fn action_embeddings(&self, p: usize, seed: u64) -> Matrix {
        let q = self.action_features.cols();
        if p == q {
            return self.action_features.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0);
        let scale = 1.0 / (p as f64).sqrt();
        let proj: Vec<f64> = (0..q * p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        let k = self.num_actions();
        let mut out = Matrix::zeros(k, p);
        for a in 0..k {
            let f = self.action_features.row(a);
            for c in 0..p {
                out.set(a, c, (0..q).map(|i| f[i] * proj[i * p + c]).sum());
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Builds a seeded synthetic environment.
///
/// Contexts and latent action vectors are Gaussian; affinities are their inner
/// products. Rewards are the sigmoid of `sharpness · affinity + bias`. The
/// logging policy is a softmax over noisy affinities at the given temperature,
/// restricted per context to a random subset of `⌈support_fraction · K⌉` actions.
pub fn make_environment(spec: &EnvSpec) -> Result<Environment> {
    spec.validate()?;
    let EnvSpec { m, k, d, seed, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let contexts = Matrix::from_vec(m, d, (0..m * d).map(|_| gauss(&mut rng) * inv_sqrt_d).collect());
    let features = Matrix::from_vec(k, d, (0..k * d).map(|_| gauss(&mut rng)).collect());

    let mut affinity = Matrix::zeros(m, k);
    for j in 0..m {
        for a in 0..k {
            affinity.set(j, a, dot(contexts.row(j), features.row(a)));
        }
    }

    let mut rewards = Matrix::zeros(m, k);
    for (r, &aff) in rewards.as_mut_slice().iter_mut().zip(affinity.as_slice()) {
        *r = sigmoid(spec.reward_sharpness * aff + spec.reward_bias).clamp(0.0, 1.0);
    }

    let supported = ((spec.support_fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut logging = Matrix::zeros(m, k);
    let mut order: Vec<usize> = (0..k).collect();
    for j in 0..m {
        let mut logits: Vec<f64> = (0..k)
            .map(|a| (affinity.get(j, a) + spec.logging_noise * gauss(&mut rng)) / spec.logging_temperature)
            .collect();
        let mut mask = vec![true; k];
        if supported < k {
            order.shuffle(&mut rng);
            for &a in &order[supported..] {
                mask[a] = false;
            }
        }
        let max = (0..k).filter(|&a| mask[a]).map(|a| logits[a]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..k {
            logits[a] = if mask[a] {
                // floor keeps supported actions strictly positive at any temperature
                (logits[a] - max).max(-700.0).exp()
            } else {
                0.0
            };
            total += logits[a];
        }
        for (p, l) in logging.row_mut(j).iter_mut().zip(&logits) {
            *p = l / total;
        }
    }

    let reward_mode = match spec.reward_mode {
        RewardModeSpec::Binary => RewardMode::Binary,
        RewardModeSpec::Continuous => RewardMode::Continuous {
            noise: spec.reward_noise,
        },
    };

    let mut env = Environment::from_parts(contexts, vec![1.0 / m as f64; m], rewards, logging, reward_mode, seed)?
        .with_action_features(features)?;
    if spec.num_clusters > 0 {
        let clustering = match spec.clustering_mode {
            ClusteringMode::Kmeans => {
                // cluster actions by their affinity profile across contexts
                let mut profiles = Matrix::zeros(k, m);
                for a in 0..k {
                    for j in 0..m {
                        profiles.set(a, j, affinity.get(j, a));
                    }
                }
                Clustering::kmeans(&profiles, spec.num_clusters, seed ^ 0xc1u64, 100)?
            }
            ClusteringMode::Random => Clustering::random(k, spec.num_clusters, seed ^ 0xc1u64)?,
        };
        env = env.with_clustering(clustering)?;
    }
    Ok(env)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().expect("nonempty distribution");
    let u = rng.random::<f64>() * total;
    let idx = cum.partition_point(|&c| c <= u);
    if idx < cum.len() {
        idx
    } else {
        // rounding at the top end: fall back to the last index with mass
        (0..cum.len())
            .rev()
            .find(|&i| i == 0 || cum[i] > cum[i - 1])
            .unwrap_or(0)
    }
}

/// Draws `n` logged tuples: x by weight, a ~ π₀(·|x), r by the reward mode.
pub fn sample_logged(env: &Environment, n: usize, seed: u64) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(Error::config("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx_cum = cumulative(&env.context_weights);
    let act_cum: Vec<Vec<f64>> = (0..env.num_contexts()).map(|j| cumulative(env.logging_row(j))).collect();
    let d = env.context_dim();

    let mut contexts = Vec::with_capacity(n * d);
    let mut ids = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut p0s = Vec::with_capacity(n);
    for _ in 0..n {
        let j = draw(&ctx_cum, &mut rng);
        let a = draw(&act_cum[j], &mut rng);
        let mean = env.reward(j, a);
        let r = match env.reward_mode {
            RewardMode::Binary => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardMode::Continuous { noise } => {
                let half = noise.min(mean).min(1.0 - mean);
                if half > 0.0 {
                    (mean + rng.random_range(-half..=half)).clamp(0.0, 1.0)
                } else {
                    mean
                }
            }
        };
        contexts.extend_from_slice(env.contexts.row(j));
        ids.push(j);
        actions.push(a);
        rewards.push(r);
        p0s.push(env.logging.get(j, a));
    }
    let ds = LoggedDataset::new(Matrix::from_vec(n, d, contexts), actions, rewards, p0s, env.num_actions())?
        .with_context_ids(ids)?;
    attach_clusters(env, ds)
}

fn attach_clusters(env: &Environment, mut ds: LoggedDataset) -> Result<LoggedDataset> {
    if let Some(cl) = &env.clustering {
        let cluster_tables: Vec<Vec<f64>> = (0..env.num_contexts()).map(|j| cl.marginalize(env.logging_row(j))).collect();
        let cids: Vec<usize> = ds.actions().iter().map(|&a| cl.cluster_of(a)).collect();
        let ctx_ids = ds.context_ids().expect("context ids attached").to_vec();
        let cps: Vec<f64> = cids
            .iter()
            .zip(&ctx_ids)
            .zip(ds.logging_probs())
            .map(|((&c, &j), &p)| cluster_tables[j][c].max(p))
            .collect();
        ds = ds.with_clusters(cids, cps, cl.num_clusters())?;
    }
    Ok(ds)
}

/// A noise-free stand-in for the logging population: each supported
/// (context, action) pair gets rows in proportion to w(x)·π₀(a|x)
/// (largest-remainder rounding to `n` rows) and carries its expected reward.
/// Weightings nonlinear in the reward see E[r], not E[f(r)], unless rewards are
/// deterministic.
pub fn stratified_dataset(env: &Environment, n: usize) -> Result<LoggedDataset> {
    let m = env.num_contexts();
    let k = env.num_actions();
    let mut cells = Vec::new();
    for j in 0..m {
        for a in 0..k {
            let mass = env.context_weights[j] * env.logging.get(j, a);
            if mass > 0.0 {
                cells.push((j, a, mass * n as f64));
            }
        }
    }
    if n < cells.len() {
        return Err(Error::config(format!("need at least {} rows to cover every supported pair", cells.len())));
    }
    let mut counts: Vec<usize> = cells.iter().map(|c| c.2.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&x, &y| {
        let fx = cells[x].2 - cells[x].2.floor();
        let fy = cells[y].2 - cells[y].2.floor();
        fy.total_cmp(&fx).then(x.cmp(&y))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    let d = env.context_dim();
    let total: usize = counts.iter().sum();
    let mut contexts = Vec::with_capacity(total * d);
    let (mut ids, mut actions, mut rewards, mut p0s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (&(j, a, _), &c) in cells.iter().zip(&counts) {
        for _ in 0..c {
            contexts.extend_from_slice(env.contexts.row(j));
            ids.push(j);
            actions.push(a);
            rewards.push(env.reward(j, a));
            p0s.push(env.logging.get(j, a));
        }
    }
    let ds = LoggedDataset::new(Matrix::from_vec(total, d, contexts), actions, rewards, p0s, k)?.with_context_ids(ids)?;
    attach_clusters(env, ds)
}

/// V(π) = Σ_x w(x) Σ_a π(a|x) r(x, a), exactly.
pub fn true_value<P: ActionPolicy + ?Sized>(env: &Environment, policy: &P) -> f64 {
    let mut probs = vec![0.0; env.num_actions()];
    let mut v = 0.0;
    for j in 0..env.num_contexts() {
        policy.probs_into(env.ctx(j), &mut probs);
        v += env.context_weights[j] * dot(&probs, env.reward_table.row(j));
    }
    v
}

/// Value of the argmax-deployed version of `policy`.
pub fn deployed_value<P: ActionPolicy + ?Sized>(env: &Environment, policy: &P) -> f64 {
    (0..env.num_contexts())
        .map(|j| env.context_weights[j] * env.reward(j, policy.deploy(env.ctx(j))))
        .sum()
}

/// Value of a fixed per-context action choice.
pub fn choice_value(env: &Environment, choices: &[usize]) -> f64 {
    choices
        .iter()
        .enumerate()
        .map(|(j, &a)| env.context_weights[j] * env.reward(j, a))
        .sum()
}

/// Deployed action per context.
pub fn deployed_actions<P: ActionPolicy + ?Sized>(env: &Environment, policy: &P) -> Vec<usize> {
    (0..env.num_contexts()).map(|j| policy.deploy(env.ctx(j))).collect()
}
