//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (visible without `--nocapture`), then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opl_core::bench::config::ExperimentConfig;
use opl_core::bench::mse::ESTIMATOR_SECTION;
use opl_core::bench::run_mse;
use opl_core::bench::sweep::run_sweep;
use opl_core::clustering::Clustering;
use opl_core::dataset::LoggedDataset;
use opl_core::envgen::{make_environment, sample_logged, stratified_dataset, EnvSpec, Environment, RewardMode, RewardModeSpec};
use opl_core::landscape::{basin_census, build_adversarial, build_composite_trap, plateau_length, probe_rows, AdversarialSpec};
use opl_core::linalg::Matrix;
use opl_core::objective::Objective;
use opl_core::ope::{estimate_cips, estimate_dr, estimate_ips, estimate_mips, estimate_offcem, OpeConfig, OpeMethod};
use opl_core::oracle::{argmax_agreement, asymptotic_ope_policy, asymptotic_pwll_distribution, trained_agreement};
use opl_core::par::Execution;
use opl_core::policy::{ActionPolicy, SoftmaxPolicy};
use opl_core::pwll::{concavity_certificate, CertificateOptions, Weighting};
use opl_core::reward_model::RewardModel;
use opl_core::trainer::{finite_diff_check, train, Schedule, TrainConfig};

// checks run one at a time so their runtimes are not shared
static SERIAL: Mutex<()> = Mutex::new(());

fn check(name: &str, limit: Option<Duration>, body: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let (ok, detail) = body();
    let elapsed = started.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = ok && in_time;
    let budget = limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()));
    let line = format!(
        "{} {name}: {detail} [{:.1}s{budget}]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

/// Small seeded environment of random shape with a clustering and a sample.
fn random_instance(seed: u64, n: usize) -> (Environment, LoggedDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=10);
    let mut spec = EnvSpec::new(rng.random_range(1..=6), k, rng.random_range(1..=5), seed);
    spec.num_clusters = rng.random_range(1..=k);
    spec.logging_temperature = rng.random_range(0.5..2.0);
    if rng.random_bool(0.5) {
        spec.reward_mode = RewardModeSpec::Continuous;
        spec.reward_noise = 0.2;
    }
    let env = make_environment(&spec).unwrap();
    let ds = sample_logged(&env, n, seed ^ 0x5eed).unwrap();
    (env, ds)
}

fn random_policy(outputs: usize, d: usize, sigma: f64, seed: u64) -> SoftmaxPolicy {
    let mut p = SoftmaxPolicy::linear(outputs, d);
    p.gaussian_params(sigma, seed);
    p
}

fn all_objectives(env: &Environment, tau: f64, beta: f64, seed: u64) -> Vec<Objective> {
    let cfg = OpeConfig::new()
        .with_tau(tau)
        .with_reward_model(RewardModel::perturbed(env.reward_table(), 0.2, seed).unwrap())
        .with_clustering(env.clustering().unwrap().clone());
    let mut v: Vec<Objective> = OpeMethod::ALL.iter().map(|&m| Objective::ope(m, cfg.clone()).unwrap()).collect();
    for w in [Weighting::Lpi, Weighting::Clpi { tau }, Weighting::Regkl { beta }] {
        v.push(Objective::pwll(w).unwrap());
    }
    v
}

fn pwll_weightings() -> [Weighting; 3] {
    [Weighting::Lpi, Weighting::Clpi { tau: 0.1 }, Weighting::Regkl { beta: 1.0 }]
}

#[test]
fn reduction_identities() {
    check("reduction identities on 100 random instances", minutes(1), || {
        let mut worst = 0.0f64;
        for i in 0..100u64 {
            let (env, ds) = random_instance(i, 300);
            let k = env.num_actions();
            let pol = random_policy(k, env.context_dim(), 1.0, i);
            let tau = 0.01 + 0.4 * (i as f64 / 100.0);
            let zero = RewardModel::constant(k, 0.0);
            let rm = RewardModel::perturbed(env.reward_table(), 0.3, i).unwrap();
            let cl = env.clustering().unwrap();
            let id = Clustering::identity(k);
            let ds_id = ds.clone().with_identity_clusters();
            let pairs = [
                (estimate_cips(&ds, &pol, 0.0).unwrap(), estimate_ips(&ds, &pol).unwrap()),
                (estimate_dr(&ds, &pol, &zero, tau).unwrap(), estimate_cips(&ds, &pol, tau).unwrap()),
                (estimate_mips(&ds_id, &pol, &id).unwrap(), estimate_ips(&ds, &pol).unwrap()),
                (estimate_offcem(&ds, &pol, cl, &zero).unwrap(), estimate_mips(&ds, &pol, cl).unwrap()),
                (estimate_offcem(&ds_id, &pol, &id, &rm).unwrap(), estimate_dr(&ds, &pol, &rm, 0.0).unwrap()),
            ];
            for (a, b) in pairs {
                worst = worst.max((a - b).abs());
            }
        }
        (worst <= 1e-10, format!("max |difference| {worst:.2e} (tolerance 1e-10)"))
    });
}

#[test]
fn gradients_match_finite_differences() {
    check("finite differences for 9 objectives on 20 instances", minutes(2), || {
        let mut worst = 0.0f64;
        let mut at = String::new();
        for i in 0..20u64 {
            let (env, ds) = random_instance(1000 + i, 400);
            let tau = 0.02 + 0.01 * i as f64;
            let beta = 0.3 + 0.1 * i as f64;
            for obj in all_objectives(&env, tau, beta, i) {
                let pol = random_policy(obj.output_dim(env.num_actions()), env.context_dim(), 0.5, i).with_l2(0.01);
                let err = finite_diff_check(&obj, &ds, &pol, pol.num_params(), 1e-5, i).unwrap();
                if err > worst {
                    worst = err;
                    at = format!("{obj} on instance {i}");
                }
            }
        }
        (worst < 1e-5, format!("max relative error {worst:.2e} ({at}; tolerance 1e-5)"))
    });
}

#[test]
fn pwll_objectives_are_strongly_concave() {
    check("strong concavity certificate and single-basin census", minutes(5), || {
        let mut spec = EnvSpec::new(5, 6, 4, 31);
        spec.logging_temperature = 0.7;
        let env = make_environment(&spec).unwrap();
        let ds = sample_logged(&env, 2000, 1).unwrap();
        let mut ok = true;
        let mut notes = Vec::new();
        for l2 in [0.01, 0.1] {
            for w in pwll_weightings() {
                let obj = Objective::pwll(w).unwrap();
                let pol = SoftmaxPolicy::linear(6, 4).with_l2(l2);
                let cert = concavity_certificate(&ds, &pol, &obj, &CertificateOptions::default()).unwrap();
                let tc = TrainConfig {
                    epochs: 3000,
                    base_rate: 2.0,
                    l2_strength: l2,
                    ..Default::default()
                };
                let census = basin_census(&env, &ds, &obj, &pol, 50, 2.0, &tc, 7, Execution::default()).unwrap();
                let good = cert.passed && cert.trials == 1000 && cert.max_hessian_eigenvalue.is_some() && census.num_basins() == 1;
                ok &= good;
                notes.push(format!(
                    "{obj} l2={l2}: cert {} (max eig {:.3e} vs {:.2}), {} basin(s)",
                    if cert.passed { "ok" } else { "violated" },
                    cert.max_hessian_eigenvalue.unwrap_or(f64::NAN),
                    cert.hessian_bound,
                    census.num_basins()
                ));
            }
        }
        (ok, notes.join("; "))
    });
}

/// Splits `total` rows over a distribution, at least one per action.
fn quantize(p: &[f64], total: usize) -> Vec<usize> {
    let mut c: Vec<usize> = p.iter().map(|&q| ((q * total as f64).floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&x, &y| {
        let rx = p[x] * total as f64 - c[x] as f64;
        let ry = p[y] * total as f64 - c[y] as f64;
        ry.total_cmp(&rx).then(x.cmp(&y))
    });
    let mut i = 0;
    while c.iter().sum::<usize>() < total {
        c[order[i % p.len()]] += 1;
        i += 1;
    }
    while c.iter().sum::<usize>() > total {
        let a = (0..p.len()).max_by_key(|&a| (c[a], std::cmp::Reverse(a))).unwrap();
        c[a] -= 1;
    }
    c
}

/// Environment for the oracle-convergence check. One-hot contexts make the
/// linear policy tabular, and logging probabilities are multiples of the
/// per-context row count, so the stratified sample reproduces them exactly and
/// the oracle is the optimum of the training data itself. Rewards are
/// deterministic so the rows' expected rewards are the realized ones.
fn convergence_env(seed: u64, n: usize) -> Environment {
    let (m, k) = (16, 64);
    let mut spec = EnvSpec::new(m, k, 16, seed);
    spec.num_clusters = 8;
    let base = make_environment(&spec).unwrap();
    let per_context = n / m;
    let mut eye = Matrix::zeros(m, m);
    let mut logging = Matrix::zeros(m, k);
    for j in 0..m {
        eye.set(j, j, 1.0);
        for (a, c) in quantize(base.logging_row(j), per_context).into_iter().enumerate() {
            logging.set(j, a, c as f64 / per_context as f64);
        }
    }
    Environment::from_parts(eye, vec![1.0 / m as f64; m], base.reward_table().clone(), logging, RewardMode::Continuous { noise: 0.0 }, seed)
        .unwrap()
        .with_clustering(base.clustering().unwrap().clone())
        .unwrap()
}

#[test]
fn trained_policies_reach_their_oracles() {
    check("oracle agreement after training (m=16, K=64, n=1e5)", minutes(15), || {
        let n = 100_000;
        let env = convergence_env(CONVERGENCE_SEED, n);
        let ds = stratified_dataset(&env, n).unwrap();
        let mut ok = ds.len() == n;
        let mut notes = Vec::new();
        for obj in all_objectives(&env, 0.05, 1.0, 1) {
            // OPE gradients at a uniform start are O(1/K) per context
            let rate = if obj.is_pwll() { 5.0 } else { 500.0 };
            let tc = TrainConfig {
                batch_size: n,
                epochs: 1000,
                base_rate: rate,
                ..Default::default()
            };
            let template = SoftmaxPolicy::linear(obj.output_dim(env.num_actions()), env.context_dim());
            let (pol, _) = train(&obj, &ds, template, &tc, None).unwrap();
            let rep = trained_agreement(&env, &obj, &pol).unwrap();
            ok &= rep.fraction >= 0.95;
            notes.push(format!("{obj} {:.3}", rep.fraction));
        }
        (ok, format!("agreement {} (need ≥ 0.95 each)", notes.join(", ")))
    });
}

const CONVERGENCE_SEED: u64 = 0;

#[test]
fn clipping_favors_high_propensity_actions() {
    check("cIPS deploys the high-propensity action", None, || {
        let env = Environment::from_parts(
            Matrix::from_rows(&[vec![1.0]]),
            vec![1.0],
            Matrix::from_rows(&[vec![1.0, 0.6, 0.2]]),
            Matrix::from_rows(&[vec![0.05, 0.6, 0.35]]),
            RewardMode::Binary,
            0,
        )
        .unwrap();
        let ds = stratified_dataset(&env, 10_000).unwrap();
        let cips = Objective::ope(OpeMethod::Cips, OpeConfig::new().with_tau(0.1)).unwrap();
        let tc = TrainConfig {
            batch_size: ds.len(),
            epochs: 500,
            base_rate: 1.0,
            ..Default::default()
        };
        let (pol, _) = train(&cips, &ds, SoftmaxPolicy::linear(3, 1), &tc, None).unwrap();
        let trained = pol.deploy(env.ctx(0));
        let ips_oracle = asymptotic_ope_policy(&env, OpeMethod::Ips, &OpeConfig::new()).unwrap().deployed(0);
        (trained == 1 && ips_oracle == 0, format!("trained cIPS deploys {trained} (want 1), IPS oracle deploys {ips_oracle} (want 0)"))
    });
}

/// Smallest gap between the best and second-best cIPS limit score over contexts.
fn cips_margin(env: &Environment, tau: f64) -> f64 {
    (0..env.num_contexts())
        .map(|j| {
            let p0 = env.logging_row(j);
            let mut s: Vec<f64> = (0..env.num_actions()).map(|a| p0[a] * env.reward(j, a) / p0[a].max(tau)).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            if s.len() > 1 {
                s[0] - s[1]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn clpi_deploys_like_cips() {
    check("cLPI and cIPS oracles deploy alike on 50 tie-free environments", None, || {
        let mut worst = 1.0f64;
        let mut used = 0;
        let mut seed = 0u64;
        let mut binding = 0;
        while used < 50 {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spec = EnvSpec::new(rng.random_range(2..=16), rng.random_range(2..=50), rng.random_range(1..=8), seed);
            spec.logging_temperature = rng.random_range(0.3..1.5);
            let env = make_environment(&spec).unwrap();
            let tau = rng.random_range(0.02..0.3);
            if cips_margin(&env, tau) < 1e-9 {
                continue;
            }
            used += 1;
            binding += env.logging_table().as_slice().iter().any(|&p| p < tau) as usize;
            let clpi = asymptotic_pwll_distribution(&env, &Weighting::Clpi { tau }).unwrap();
            let cips = asymptotic_ope_policy(&env, OpeMethod::Cips, &OpeConfig::new().with_tau(tau)).unwrap();
            worst = worst.min(argmax_agreement(&clpi, &cips).unwrap());
        }
        (
            worst == 1.0,
            format!("min agreement {worst} over {used} environments ({binding} with clipping active)"),
        )
    });
}

#[test]
fn potec_recovers_the_offcem_oracle() {
    check("POTEC and OffCEM oracles deploy alike on 20 environments", None, || {
        let mut worst = 1.0f64;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(4..=40);
            let mut spec = EnvSpec::new(rng.random_range(2..=16), k, rng.random_range(1..=6), seed);
            spec.num_clusters = rng.random_range(2..=k / 2);
            let env = make_environment(&spec).unwrap();
            let cfg = OpeConfig::new()
                .with_reward_model(RewardModel::exact(env.reward_table()))
                .with_clustering(env.clustering().unwrap().clone());
            let potec = asymptotic_ope_policy(&env, OpeMethod::Potec, &cfg).unwrap();
            let offcem = asymptotic_ope_policy(&env, OpeMethod::Offcem, &cfg).unwrap();
            worst = worst.min(argmax_agreement(&potec, &offcem).unwrap());
        }
        (worst == 1.0, format!("min deployed-action agreement {worst}"))
    });
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &t in &idx[i..=j] {
                r[t] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn ips_plateau_grows_with_actions() {
    check("plateau length grows with K under IPS and stays short under PWLL", minutes(10), || {
        let ks = [8usize, 16, 32, 64];
        let tc = TrainConfig {
            epochs: 100,
            base_rate: 5.0,
            schedule: Schedule::Constant,
            ..Default::default()
        };
        let ips = Objective::ope(OpeMethod::Ips, OpeConfig::new()).unwrap();
        let mut ips_len = Vec::new();
        let mut pwll_max = 0;
        let mut unescaped = false;
        for &k in &ks {
            let inst = build_adversarial(&AdversarialSpec {
                k,
                epsilon: 1.0 / k as f64,
                gap: 0.5,
                init_bias: 2.0,
            })
            .unwrap();
            let rep = plateau_length(&inst.env, &inst.initial_policy, &ips, &tc, 0.1).unwrap();
            unescaped |= rep.unescaped;
            ips_len.push(rep.iterations as f64);
            for w in pwll_weightings() {
                let rep = plateau_length(&inst.env, &inst.initial_policy, &Objective::pwll(w).unwrap(), &tc, 0.1).unwrap();
                pwll_max = pwll_max.max(rep.iterations);
            }
        }
        let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let rho = spearman(&kf, &ips_len);
        (
            (rho - 1.0).abs() < 1e-12 && pwll_max < 5 && !unescaped,
            format!("IPS plateau {ips_len:?} over K {ks:?} (Spearman {rho}), longest PWLL plateau {pwll_max} (< 5)"),
        )
    });
}

#[test]
fn ips_has_many_basins_pwll_one() {
    check("basin census on the composite trap (50 restarts)", None, || {
        let env = build_composite_trap(4, 8, 0.05, 0.4, 0.3).unwrap();
        let ds = stratified_dataset(&env, probe_rows(&env)).unwrap();
        let template = SoftmaxPolicy::linear(8, 4);
        let ips = Objective::ope(OpeMethod::Ips, OpeConfig::new()).unwrap();
        let tc_ips = TrainConfig {
            epochs: 1000,
            base_rate: 2.0,
            l2_strength: 1e-3,
            ..Default::default()
        };
        let ips_basins = basin_census(&env, &ds, &ips, &template, 50, 3.0, &tc_ips, 1, Execution::default()).unwrap().num_basins();
        let tc_pwll = TrainConfig {
            epochs: 3000,
            l2_strength: 0.01,
            ..tc_ips
        };
        let mut pwll = Vec::new();
        for w in pwll_weightings() {
            let obj = Objective::pwll(w).unwrap();
            let n = basin_census(&env, &ds, &obj, &template, 50, 2.0, &tc_pwll, 1, Execution::default()).unwrap().num_basins();
            pwll.push(n);
        }
        (
            ips_basins >= 2 && pwll.iter().all(|&n| n == 1),
            format!("IPS {ips_basins} basins (need ≥ 2); LPI/cLPI/RegKL {pwll:?} (need 1 each)"),
        )
    });
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// Trained policies are scored as deployed, i.e. by their argmax.
#[test]
fn pwll_is_robust_to_optimization_hyperparameters() {
    check("K=512 sweep: every PWLL robustness ratio above every OPE ratio", None, || {
        let cfg = ExperimentConfig::load(workspace_root().join("configs/sweep_k512.json")).unwrap();
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        let res = run_sweep(&cfg, None, workers).unwrap();
        let failed = res.records.iter().filter(|r| r.failed()).count();
        let ratio = |pwll: bool| -> Vec<(String, f64)> {
            res.summary
                .iter()
                .filter(|s| res.records.iter().any(|r| r.method == s.method && r.pwll == pwll))
                .map(|s| (s.method.clone(), s.deployed_robustness.unwrap_or(f64::NAN)))
                .collect()
        };
        let (ope, pwll) = (ratio(false), ratio(true));
        let ope_max = ope.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let pwll_min = pwll.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let fmt = |v: &[(String, f64)]| v.iter().map(|(m, r)| format!("{m} {r:.3}")).collect::<Vec<_>>().join(", ");
        (
            failed == 0 && pwll_min > ope_max,
            format!("PWLL [{}] vs OPE [{}], {failed} failed runs, {} workers", fmt(&pwll), fmt(&ope), workers),
        )
    });
}

#[test]
fn pwll_value_is_decorrelated_from_estimation_error() {
    check("proxy MSE is large while trained value stays near the best", minutes(10), || {
        let cfg = ExperimentConfig::load(workspace_root().join("configs/decorrelation.json")).unwrap();
        let rows = run_mse(&cfg, None, 1).unwrap();
        let mean_mse = |section_pwll: bool| -> Vec<(String, f64)> {
            let mut out: Vec<(String, f64, usize)> = Vec::new();
            for r in rows.iter().filter(|r| (r.section != ESTIMATOR_SECTION) == section_pwll) {
                match out.iter_mut().find(|o| o.0 == r.method) {
                    Some(o) => {
                        o.1 += r.mse;
                        o.2 += 1;
                    }
                    None => out.push((r.method.clone(), r.mse, 1)),
                }
            }
            out.into_iter().map(|(m, s, c)| (m, s / c as f64)).collect()
        };
        let best_ope = mean_mse(false).iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let pwll_mse = mean_mse(true);
        let proxy_ok = !pwll_mse.is_empty() && pwll_mse.iter().all(|(_, m)| *m >= 10.0 * best_ope);

        let res = run_sweep(&cfg, None, 1).unwrap();
        let values: Vec<(String, bool, f64)> = res
            .summary
            .iter()
            .map(|s| {
                let pwll = res.records.iter().any(|r| r.method == s.method && r.pwll);
                (s.method.clone(), pwll, s.deployed_mean.unwrap_or(f64::NAN))
            })
            .collect();
        let best = values.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
        let best_pwll = values.iter().filter(|v| v.1).map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
        let value_ok = best_pwll >= 0.95 * best;
        let min_ratio = pwll_mse.iter().map(|x| x.1 / best_ope).fold(f64::INFINITY, f64::min);
        (
            proxy_ok && value_ok,
            format!(
                "best OPE MSE {best_ope:.2e}, smallest PWLL proxy MSE ratio {min_ratio:.1}x (need ≥ 10x); best PWLL value {best_pwll:.4} vs best {best:.4} (need ≥ 95%)"
            ),
        )
    });
}

const SMALL: &str = r#"{
  "environment": {"m": 6, "K": 8, "d": 3, "seed": 11, "num_clusters": 3},
  "n": 600,
  "methods": [
    {"name": "ips"}, {"name": "cips", "tau": 0.1},
    {"name": "dr", "reward_model": {"kind": "perturbed", "delta": 0.2}},
    {"name": "mips"}, {"name": "offcem"}, {"name": "potec"},
    {"name": "lpi"}, {"name": "clpi"}, {"name": "regkl", "beta": 0.5}
  ],
  "train": {"epochs": 2, "batch_sizes": [100, 600], "schedules": ["constant", "cosine"], "seeds": [0, 1]},
  "mse": {"seeds": [0, 1], "targets": [{"kind": "uniform"}, {"kind": "logging"}]},
  "params": {"light": {"kind": "linear"}, "heavy": {"kind": "inner-product", "p": 2, "hidden": 8}, "seeds": [0, 1, 2]}
}"#;

const LANDSCAPE: &str = r#"{
  "environment": {"m": 1, "K": 2, "d": 1, "seed": 0},
  "methods": [{"name": "ips"}, {"name": "lpi", "l2": 0.01}, {"name": "regkl", "l2": 0.01}],
  "landscape": {
    "plateau": {"ks": [4, 8], "gap": 0.5, "init_bias": 2, "base_rate": 5, "budget": 30, "threshold": 0.1},
    "census": {"contexts": 2, "K": 4, "epsilon": 0.1, "gap": 0.4, "spread": 0.3, "restarts": 4,
               "sigma": 2, "epochs": 200, "base_rate": 2, "pwll_l2": 0.01, "ope_l2": 0.001}
  }
}"#;

fn opl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_opl")).args(args).output().expect("spawn opl")
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Runs every subcommand into `root`; returns the output directory.
fn run_all_commands(root: &Path) -> Result<PathBuf, String> {
    let small = root.join("small.json");
    let land = root.join("landscape.json");
    std::fs::write(&small, SMALL).unwrap();
    std::fs::write(&land, LANDSCAPE).unwrap();
    let out = root.join("out");
    let o = out.to_str().unwrap();
    let (s, l) = (small.to_str().unwrap(), land.to_str().unwrap());
    let policy = out.join("policies/policy_07.json");
    let runs = out.join("runs.csv");
    let chart = out.join("chart.svg");
    let commands: Vec<Vec<&str>> = vec![
        vec!["generate", "--config", s, "--out", o, "--seed", "5"],
        vec!["train", "--config", s, "--out", o, "--seed", "5"],
        vec!["evaluate", "--config", s, "--out", o, "--seed", "5", "--policy", policy.to_str().unwrap()],
        vec!["sweep", "--config", s, "--out", o, "--seed", "5"],
        vec!["mse", "--config", s, "--out", o, "--seed", "5"],
        vec!["params-report", "--config", s, "--out", o, "--seed", "5"],
        vec!["landscape", "--config", l, "--out", o, "--seed", "5"],
        vec!["chart", "--input", runs.to_str().unwrap(), "--x", "base_rate", "--y", "true_value", "--series", "method", "--kind", "bar", "--output", chart.to_str().unwrap()],
    ];
    for args in commands {
        let r = opl(&args);
        if !r.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&r.stderr)));
        }
    }
    Ok(out)
}

#[test]
fn cli_reruns_are_byte_identical() {
    check("every CLI command reruns byte-identically", None, || {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let outs = match (run_all_commands(a.path()), run_all_commands(b.path())) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) | (_, Err(e)) => return (false, e),
        };
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        collect(&outs.0, &mut fa);
        collect(&outs.1, &mut fb);
        let rel = |v: &mut Vec<PathBuf>, base: &Path| {
            let mut r: Vec<PathBuf> = v.iter().map(|p| p.strip_prefix(base).unwrap().to_path_buf()).collect();
            r.sort();
            r
        };
        let (ra, rb) = (rel(&mut fa, &outs.0), rel(&mut fb, &outs.1));
        if ra != rb {
            return (false, "the two runs wrote different file sets".into());
        }
        let differing: Vec<String> = ra
            .iter()
            .filter(|p| std::fs::read(outs.0.join(p)).unwrap() != std::fs::read(outs.1.join(p)).unwrap())
            .map(|p| p.display().to_string())
            .collect();
        let csvs = ra.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
        (
            differing.is_empty(),
            format!("{} files ({csvs} CSV) compared, {} differ {differing:?}", ra.len(), differing.len()),
        )
    });
}
