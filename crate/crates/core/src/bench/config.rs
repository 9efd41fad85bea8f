//! JSON experiment configuration and the objects it builds.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::dataset::{ingest_csv, CsvSchema, LoggedDataset};
use crate::envgen::{make_environment, sample_logged, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::Objective;
use crate::ope::{GreedySelector, OpeConfig, OpeMethod};
use crate::policy::SoftmaxPolicy;
use crate::pwll::Weighting;
use crate::reward_model::RewardModel;
use crate::trainer::{Init, Schedule, TrainConfig};

/// Clipping threshold used by cIPS and cLPI when a method leaves it unset.
pub const DEFAULT_TAU: f64 = 0.05;
/// RegKL temperature used when a method leaves it unset.
pub const DEFAULT_BETA: f64 = 1.0;

/// A scalar or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardModelSpec {
    Exact,
    /// clip(r + U(−δ, δ)), seeded by the experiment seed plus `seed`.
    Perturbed {
        delta: f64,
        #[serde(default)]
        seed: u64,
    },
    LeastSquares {
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    Constant {
        value: f64,
    },
}

fn default_ridge() -> f64 {
    1e-3
}

impl RewardModelSpec {
    pub fn label(&self) -> String {
        match self {
            RewardModelSpec::Exact => "exact".into(),
            RewardModelSpec::Perturbed { delta, .. } => format!("perturbed-{delta}"),
            RewardModelSpec::LeastSquares { .. } => "least-squares".into(),
            RewardModelSpec::Constant { value } => format!("constant-{value}"),
        }
    }

    pub fn build(&self, env: Option<&Environment>, ds: &LoggedDataset, seed: u64) -> Result<RewardModel> {
        let need_env = || env.ok_or_else(|| Error::config(format!("reward model `{}` needs an environment", self.label())));
        match self {
            RewardModelSpec::Exact => Ok(RewardModel::exact(need_env()?.reward_table())),
            RewardModelSpec::Perturbed { delta, seed: s } => {
                RewardModel::perturbed(need_env()?.reward_table(), *delta, seed.wrapping_add(*s))
            }
            RewardModelSpec::LeastSquares { ridge } => Ok(RewardModel::fit_least_squares(ds, *ridge)),
            RewardModelSpec::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(Error::config(format!("constant reward model value {value} outside [0, 1]")));
                }
                Ok(RewardModel::constant(ds.num_actions(), *value))
            }
        }
    }
}

/// The nine trainable objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Ips,
    Cips,
    Dr,
    Mips,
    Offcem,
    Potec,
    Lpi,
    Clpi,
    Regkl,
}

impl MethodKind {
    pub const ALL: [MethodKind; 9] = [
        MethodKind::Ips,
        MethodKind::Cips,
        MethodKind::Dr,
        MethodKind::Mips,
        MethodKind::Offcem,
        MethodKind::Potec,
        MethodKind::Lpi,
        MethodKind::Clpi,
        MethodKind::Regkl,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == name.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown method `{name}`")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Lpi => "lpi",
            MethodKind::Clpi => "clpi",
            MethodKind::Regkl => "regkl",
            other => other.ope().expect("OPE kind").name(),
        }
    }

    pub fn ope(self) -> Option<OpeMethod> {
        Some(match self {
            MethodKind::Ips => OpeMethod::Ips,
            MethodKind::Cips => OpeMethod::Cips,
            MethodKind::Dr => OpeMethod::Dr,
            MethodKind::Mips => OpeMethod::Mips,
            MethodKind::Offcem => OpeMethod::Offcem,
            MethodKind::Potec => OpeMethod::Potec,
            _ => return None,
        })
    }

    pub fn is_pwll(self) -> bool {
        self.ope().is_none()
    }

    fn uses_tau(self) -> bool {
        matches!(self, MethodKind::Cips | MethodKind::Dr | MethodKind::Clpi)
    }

    fn uses_reward_model(self) -> bool {
        self.ope().is_some_and(|m| m.needs_reward_model())
    }

    pub fn needs_clustering(self) -> bool {
        self.ope().is_some_and(|m| m.needs_clustering())
    }
}

/// One entry of the method list; list-valued fields expand into variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<OneOrMany<f64>>,
    /// Overrides the train grid's l2 strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_model: Option<OneOrMany<RewardModelSpec>>,
}

impl MethodSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            label: None,
            tau: None,
            beta: None,
            l2: None,
            reward_model: None,
        }
    }

    /// Cartesian product of the hyperparameter lists, τ outermost.
    pub fn expand(&self, default_l2: f64, have_env: bool) -> Result<Vec<MethodVariant>> {
        let kind = MethodKind::parse(&self.name)?;
        let reject = |field: &str, present: bool| {
            if present {
                Err(Error::config(format!("`{field}` does not apply to {}", kind.name())))
            } else {
                Ok(())
            }
        };
        reject("tau", self.tau.is_some() && !kind.uses_tau())?;
        reject("beta", self.beta.is_some() && kind != MethodKind::Regkl)?;
        reject("reward_model", self.reward_model.is_some() && !kind.uses_reward_model())?;

        let taus: Vec<Option<f64>> = if kind.uses_tau() {
            let default = if kind == MethodKind::Dr { 0.0 } else { DEFAULT_TAU };
            self.tau.as_ref().map_or(vec![default], |t| t.values()).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let betas: Vec<Option<f64>> = if kind == MethodKind::Regkl {
            self.beta.as_ref().map_or(vec![DEFAULT_BETA], |b| b.values()).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let l2s = self.l2.as_ref().map_or(vec![default_l2], |l| l.values());
        let rms: Vec<Option<RewardModelSpec>> = if kind.uses_reward_model() {
            let default = if have_env {
                RewardModelSpec::Exact
            } else {
                RewardModelSpec::LeastSquares { ridge: default_ridge() }
            };
            self.reward_model.as_ref().map_or(vec![default], |r| r.values()).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        for (field, n) in [("tau", taus.len()), ("beta", betas.len()), ("l2", l2s.len()), ("reward_model", rms.len())] {
            if n == 0 {
                return Err(Error::config(format!("empty `{field}` list for {}", kind.name())));
            }
        }
        let single = taus.len() * betas.len() * l2s.len() * rms.len() == 1;
        let mut out = Vec::new();
        for &tau in &taus {
            for &beta in &betas {
                for &l2 in &l2s {
                    for rm in &rms {
                        let mut v = MethodVariant {
                            kind,
                            label: String::new(),
                            tau,
                            beta,
                            l2,
                            reward_model: rm.clone(),
                        };
                        v.label = match (&self.label, single) {
                            (Some(l), true) => l.clone(),
                            (Some(l), false) => format!("{l}[{}]", v.params_label()),
                            (None, _) => v.default_label(),
                        };
                        v.validate()?;
                        out.push(v);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A method with every hyperparameter fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodVariant {
    pub kind: MethodKind,
    pub label: String,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub l2: f64,
    pub reward_model: Option<RewardModelSpec>,
}

impl MethodVariant {
    fn params_label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(t) = self.tau {
            parts.push(format!("tau={t}"));
        }
        if let Some(b) = self.beta {
            parts.push(format!("beta={b}"));
        }
        if let Some(rm) = &self.reward_model {
            parts.push(format!("rm={}", rm.label()));
        }
        parts.push(format!("l2={}", self.l2));
        parts.join(";")
    }

    fn default_label(&self) -> String {
        format!("{}[{}]", self.kind.name(), self.params_label())
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("{}: tau {t} outside [0, 1]", self.label)));
            }
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!("{}: beta must be positive", self.label)));
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config(format!("{}: l2 must be ≥ 0", self.label)));
        }
        Ok(())
    }

    pub fn is_pwll(&self) -> bool {
        self.kind.is_pwll()
    }

    /// Builds the objective against a prepared setup. `seed` feeds perturbed
    /// reward models.
    pub fn objective(&self, setup: &Setup, seed: u64) -> Result<Objective> {
        match self.kind {
            MethodKind::Lpi => return Objective::pwll(Weighting::Lpi),
            MethodKind::Clpi => {
                return Objective::pwll(Weighting::Clpi {
                    tau: self.tau.expect("expanded"),
                })
            }
            MethodKind::Regkl => {
                return Objective::pwll(Weighting::Regkl {
                    beta: self.beta.expect("expanded"),
                })
            }
            _ => {}
        }
        let method = self.kind.ope().expect("OPE kind");
        let mut cfg = OpeConfig::new();
        if let Some(t) = self.tau {
            cfg = cfg.with_tau(t);
        }
        if let Some(rm) = &self.reward_model {
            cfg = cfg.with_reward_model(rm.build(setup.env.as_ref(), &setup.ds, seed)?);
        }
        if self.kind.needs_clustering() {
            let cl = setup
                .clustering
                .clone()
                .ok_or_else(|| Error::config(format!("{} needs a clustering", self.label)))?;
            cfg = cfg.with_clustering(cl);
        }
        if method == OpeMethod::Potec {
            let sel = GreedySelector::new(cfg.clustering.clone().expect("set"), cfg.reward_model.clone().expect("set"))?;
            return Ok(Objective::potec(sel));
        }
        Objective::ope(method, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    #[default]
    Linear,
    /// Inner-product policy on fixed p-dimensional action embeddings, with an
    /// optional tanh hidden layer of width `hidden`.
    InnerProduct {
        p: usize,
        #[serde(default)]
        hidden: Option<usize>,
        #[serde(default)]
        embedding_seed: u64,
    },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Linear => "linear".into(),
            PolicySpec::InnerProduct { p, hidden: None, .. } => format!("inner-product-p{p}"),
            PolicySpec::InnerProduct { p, hidden: Some(h), .. } => format!("inner-product-p{p}-h{h}"),
        }
    }

    /// Untrained policy with `objective.output_dim(K)` outputs. POTEC cluster
    /// policies embed each cluster at the mean of its members' embeddings.
    pub fn build(&self, setup: &Setup, objective: &Objective) -> Result<SoftmaxPolicy> {
        let k = setup.ds.num_actions();
        let d = setup.ds.context_dim();
        let outputs = objective.output_dim(k);
        match self {
            PolicySpec::Linear => Ok(SoftmaxPolicy::linear(outputs, d)),
            PolicySpec::InnerProduct { p, hidden, embedding_seed } => {
                if *p == 0 || *hidden == Some(0) {
                    return Err(Error::config("inner-product widths must be ≥ 1"));
                }
                let emb = match &setup.env {
                    Some(env) => env.action_embeddings(*p, *embedding_seed),
                    None => gaussian_embeddings(k, *p, *embedding_seed),
                };
                let emb = match objective.selector() {
                    Some(sel) => cluster_means(&emb, sel.clustering()),
                    None => emb,
                };
                Ok(SoftmaxPolicy::inner_product(emb, d, *hidden))
            }
        }
    }
}

fn gaussian_embeddings(k: usize, p: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (p as f64).sqrt();
    Matrix::from_vec(
        k,
        p,
        (0..k * p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect(),
    )
}

fn cluster_means(emb: &Matrix, clustering: &Clustering) -> Matrix {
    let mut out = Matrix::zeros(clustering.num_clusters(), emb.cols());
    for c in 0..clustering.num_clusters() {
        let members = clustering.members(c);
        for &a in members {
            for (o, &e) in out.row_mut(c).iter_mut().zip(emb.row(a)) {
                *o += e / members.len() as f64;
            }
        }
    }
    out
}

/// The train grid. Runs cover batch_sizes × schedules × base_rates × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainGrid {
    pub batch_sizes: Vec<usize>,
    pub schedules: Vec<Schedule>,
    pub base_rates: Vec<f64>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub l2: f64,
    pub init: Init,
    pub record_every: usize,
    pub wall_clock: bool,
}

impl Default for TrainGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![256],
            schedules: vec![Schedule::Constant],
            base_rates: vec![0.1],
            epochs: 10,
            seeds: vec![0],
            l2: 0.0,
            init: Init::Zeros,
            record_every: 0,
            wall_clock: false,
        }
    }
}

/// One point of the train grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub batch_size: usize,
    pub schedule: Schedule,
    pub base_rate: f64,
    pub seed: u64,
}

impl TrainGrid {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.schedules.is_empty() || self.base_rates.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("every train grid axis needs at least one value"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be ≥ 1"));
        }
        Ok(())
    }

    /// Points in batch → schedule → rate → seed order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &schedule in &self.schedules {
                for &base_rate in &self.base_rates {
                    for &seed in &self.seeds {
                        out.push(GridPoint {
                            batch_size,
                            schedule,
                            base_rate,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn train_config(&self, point: &GridPoint, l2: f64) -> TrainConfig {
        TrainConfig {
            batch_size: point.batch_size,
            epochs: self.epochs,
            schedule: point.schedule,
            base_rate: point.base_rate,
            l2_strength: l2,
            seed: point.seed,
            init: self.init,
            record_every: self.record_every,
            grad_tol: None,
            wall_clock: self.wall_clock,
            // runs are the unit of parallelism
            execution: crate::par::Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Action → cluster map for MIPS-family methods; must match the file's annotations.
    #[serde(default)]
    pub clustering: Option<Vec<usize>>,
}

/// Target policies for the MSE report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    Logging,
    Uniform,
    /// Softmax of the true rewards at the given temperature.
    SoftmaxReward { temperature: f64 },
    /// (1 − ε)·best action + ε·uniform.
    EpsilonGreedy { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSection {
    /// Dataset seeds; one logged dataset of size `n` per seed.
    pub seeds: Vec<u64>,
    pub targets: Vec<TargetSpec>,
    /// Rows per dataset; defaults to the experiment's `n`.
    #[serde(default)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSection {
    pub light: PolicySpec,
    pub heavy: PolicySpec,
    /// Seeds of the repeated runs (at least 3).
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSection {
    pub ks: Vec<usize>,
    /// Logging mass of the rewarded action; 1/K when unset.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub gap: f64,
    pub init_bias: f64,
    pub base_rate: f64,
    pub budget: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusSection {
    pub contexts: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon: f64,
    pub gap: f64,
    pub spread: f64,
    pub restarts: usize,
    pub sigma: f64,
    pub epochs: usize,
    pub base_rate: f64,
    /// l2 strength for PWLL methods, which need it for strict concavity.
    pub pwll_l2: f64,
    /// l2 strength for OPE methods.
    pub ope_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSection {
    #[serde(default)]
    pub plateau: Option<PlateauSection>,
    #[serde(default)]
    pub census: Option<CensusSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub environment: Option<EnvSpec>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    /// Logged rows sampled from the environment.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Seeds dataset sampling and perturbed reward models.
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub train: TrainGrid,
    #[serde(default)]
    pub mse: Option<MseSection>,
    #[serde(default)]
    pub params: Option<ParamsSection>,
    #[serde(default)]
    pub landscape: Option<LandscapeSection>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_n() -> usize {
    50_000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Environment (when synthetic), logged data and clustering shared by all runs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub env: Option<Environment>,
    pub ds: LoggedDataset,
    pub clustering: Option<Clustering>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every method variant, in method-list order.
    pub fn variants(&self) -> Result<Vec<MethodVariant>> {
        let mut out = Vec::new();
        for m in &self.methods {
            out.extend(m.expand(self.train.l2, self.environment.is_some())?);
        }
        Ok(out)
    }

    /// Static checks: one data source, non-empty methods, a valid grid and the
    /// resources each method needs.
    pub fn validate(&self) -> Result<()> {
        match (&self.environment, &self.dataset) {
            (Some(_), Some(_)) => return Err(Error::config("give either `environment` or `dataset`, not both")),
            (None, None) => return Err(Error::config("need an `environment` or a `dataset`")),
            _ => {}
        }
        if self.methods.is_empty() {
            return Err(Error::config("method list is empty"));
        }
        if self.environment.is_some() && self.n == 0 {
            return Err(Error::config("n must be ≥ 1"));
        }
        self.train.validate()?;
        let variants = self.variants()?;
        let has_clustering = match (&self.environment, &self.dataset) {
            (Some(spec), _) => spec.num_clusters > 0,
            (_, Some(src)) => src.clustering.is_some(),
            _ => false,
        };
        if let Some(v) = variants.iter().find(|v| v.kind.needs_clustering()) {
            if !has_clustering {
                return Err(Error::config(format!(
                    "{} needs a clustering: set environment.num_clusters or dataset.clustering",
                    v.label
                )));
            }
        }
        if let Some(p) = &self.params {
            if p.seeds.len() < 3 {
                return Err(Error::config("the parametrization report needs at least 3 seeds"));
            }
        }
        if let Some(m) = &self.mse {
            if m.seeds.is_empty() || m.targets.is_empty() {
                return Err(Error::config("the MSE report needs seeds and targets"));
            }
            if self.environment.is_none() {
                return Err(Error::config("the MSE report needs a synthetic environment"));
            }
        }
        Ok(())
    }

    /// Builds the environment and logged data.
    pub fn prepare(&self) -> Result<Setup> {
        self.validate()?;
        if let Some(spec) = &self.environment {
            let env = make_environment(spec)?;
            let ds = sample_logged(&env, self.n, self.seed)?;
            let clustering = env.clustering().cloned();
            return Ok(Setup {
                env: Some(env),
                ds,
                clustering,
            });
        }
        let src = self.dataset.as_ref().expect("validated");
        let ds = ingest_csv(&src.path, src.schema)?;
        let clustering = match &src.clustering {
            Some(assign) => {
                let nc = assign.iter().max().map_or(0, |m| m + 1);
                let cl = Clustering::new(assign.clone(), nc)?;
                ds.check_clustering(&cl)?;
                Some(cl)
            }
            None => None,
        };
        Ok(Setup {
            env: None,
            ds,
            clustering,
        })
    }
}
