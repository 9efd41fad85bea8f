use opl_core::envgen::{make_environment, sample_logged, stratified_dataset, EnvSpec, Environment};
use opl_core::dataset::LoggedDataset;
use opl_core::objective::{Objective, Rows};
use opl_core::ope::{estimate_cips, estimate_dr, estimate_ips, OpeConfig, OpeMethod};
use opl_core::oracle::{asymptotic_pwll_distribution, trained_agreement};
use opl_core::par::Execution;
use opl_core::policy::SoftmaxPolicy;
use opl_core::pwll::Weighting;
use opl_core::reward_model::RewardModel;
use opl_core::trainer::{train, TrainConfig};
use proptest::prelude::*;

fn instance(seed: u64, k: usize, n: usize) -> (Environment, LoggedDataset) {
    let mut spec = EnvSpec::new(5, k, 3, seed);
    spec.num_clusters = (k / 2).max(1);
    let env = make_environment(&spec).unwrap();
    let ds = sample_logged(&env, n, seed + 1).unwrap();
    (env, ds)
}

fn objectives(env: &Environment) -> Vec<Objective> {
    let cfg = OpeConfig::new()
        .with_tau(0.1)
        .with_reward_model(RewardModel::perturbed(env.reward_table(), 0.2, 0).unwrap())
        .with_clustering(env.clustering().unwrap().clone());
    let mut v: Vec<Objective> = OpeMethod::ALL.iter().map(|&m| Objective::ope(m, cfg.clone()).unwrap()).collect();
    for w in [Weighting::Lpi, Weighting::Clpi { tau: 0.1 }, Weighting::Regkl { beta: 2.0 }] {
        v.push(Objective::pwll(w).unwrap());
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn execution_mode_does_not_change_results(seed in 0u64..1000, k in 2usize..12) {
        // spans several reduction chunks
        let (env, ds) = instance(seed, k, 3000);
        for obj in objectives(&env) {
            let mut p = SoftmaxPolicy::linear(obj.output_dim(k), 3);
            p.gaussian_params(0.5, seed);
            let a = obj.value_and_gradient(&ds, Rows::All, &p, Execution::Sequential).unwrap();
            let b = obj.value_and_gradient(&ds, Rows::All, &p, Execution::Parallel).unwrap();
            prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
            prop_assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn clipping_and_zero_baseline_reduce(seed in 0u64..1000, k in 2usize..12, tau in 0.0f64..0.5) {
        let (env, ds) = instance(seed, k, 400);
        let mut p = SoftmaxPolicy::linear(k, 3);
        p.gaussian_params(1.0, seed);
        let ips = estimate_ips(&ds, &p).unwrap();
        prop_assert!((estimate_cips(&ds, &p, 0.0).unwrap() - ips).abs() <= 1e-12);
        let zero = RewardModel::constant(env.num_actions(), 0.0);
        let dr = estimate_dr(&ds, &p, &zero, tau).unwrap();
        prop_assert!((dr - estimate_cips(&ds, &p, tau).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn pwll_objectives_are_strongly_concave_along_segments(seed in 0u64..1000, l2 in 0.01f64..1.0) {
        let (env, ds) = instance(seed, 6, 500);
        for obj in objectives(&env).into_iter().filter(|o| o.is_pwll()) {
            let mut a = SoftmaxPolicy::linear(6, 3).with_l2(l2);
            let mut b = a.clone();
            a.gaussian_params(2.0, seed);
            b.gaussian_params(2.0, seed + 7);
            let mid: Vec<f64> = a.params().iter().zip(b.params()).map(|(x, y)| 0.5 * (x + y)).collect();
            let m = a.clone().with_params(mid).unwrap();
            let f = |p: &SoftmaxPolicy| obj.value(&ds, Rows::All, p, Execution::Sequential).unwrap();
            let dist2: f64 = a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(f(&m) >= 0.5 * (f(&a) + f(&b)) + l2 * dist2 / 8.0 - 1e-9);
        }
    }

    #[test]
    fn lpi_limit_is_logging_times_reward(seed in 0u64..1000, k in 2usize..20) {
        let env = make_environment(&EnvSpec::new(4, k, 2, seed)).unwrap();
        let oracle = asymptotic_pwll_distribution(&env, &Weighting::Lpi).unwrap();
        for j in 0..env.num_contexts() {
            let p0 = env.logging_row(j);
            let mass: Vec<f64> = (0..k).map(|a| p0[a] * env.reward(j, a)).collect();
            let z: f64 = mass.iter().sum();
            let row = oracle.row(j);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if z > 0.0 {
                for a in 0..k {
                    prop_assert!((row[a] - mass[a] / z).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn trained_lpi_matches_its_oracle_on_a_small_environment() {
    let env = make_environment(&EnvSpec::new(4, 6, 4, 2)).unwrap();
    let ds = stratified_dataset(&env, 4000).unwrap();
    let obj = Objective::pwll(Weighting::Lpi).unwrap();
    let tc = TrainConfig {
        batch_size: ds.len(),
        epochs: 2000,
        base_rate: 5.0,
        ..Default::default()
    };
    let (pol, trace) = train(&obj, &ds, SoftmaxPolicy::linear(6, 4), &tc, None).unwrap();
    assert!(!trace.rows.is_empty());
    assert_eq!(trained_agreement(&env, &obj, &pol).unwrap().fraction, 1.0);
}
