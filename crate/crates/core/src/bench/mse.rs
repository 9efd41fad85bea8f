//! Estimator accuracy versus learning quality.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::config::{MethodVariant, Setup, TargetSpec};
use crate::envgen::{sample_logged, true_value, Environment};
use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax_in_place, Matrix};
use crate::objective::Objective;
use crate::ope::ClusterPolicy;
use crate::par::{map_indexed, Execution};
use crate::policy::TablePolicy;

impl TargetSpec {
    pub fn label(&self) -> String {
        match self {
            TargetSpec::Logging => "logging".into(),
            TargetSpec::Uniform => "uniform".into(),
            TargetSpec::SoftmaxReward { temperature } => format!("softmax-reward-{temperature}"),
            TargetSpec::EpsilonGreedy { epsilon } => format!("epsilon-greedy-{epsilon}"),
        }
    }

    /// Per-context action probabilities of the target on `env`.
    pub fn table(&self, env: &Environment) -> Result<Matrix> {
        let (m, k) = (env.num_contexts(), env.num_actions());
        let mut t = Matrix::zeros(m, k);
        for j in 0..m {
            let row = t.row_mut(j);
            match *self {
                TargetSpec::Logging => row.copy_from_slice(env.logging_row(j)),
                TargetSpec::Uniform => row.fill(1.0 / k as f64),
                TargetSpec::SoftmaxReward { temperature } => {
                    if !(temperature > 0.0 && temperature.is_finite()) {
                        return Err(Error::config("softmax-reward temperature must be positive"));
                    }
                    for (p, r) in row.iter_mut().zip(env.reward_table().row(j)) {
                        *p = r / temperature;
                    }
                    softmax_in_place(row);
                }
                TargetSpec::EpsilonGreedy { epsilon } => {
                    if !(0.0..=1.0).contains(&epsilon) {
                        return Err(Error::config("epsilon must lie in [0, 1]"));
                    }
                    row.fill(epsilon / k as f64);
                    row[argmax(env.reward_table().row(j))] += 1.0 - epsilon;
                }
            }
        }
        Ok(t)
    }
}

pub const ESTIMATOR_SECTION: &str = "estimator";
pub const PROXY_SECTION: &str = "not-a-value-estimator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    /// `estimator` for OPE methods, `not-a-value-estimator` for PWLL objectives.
    pub section: String,
    pub method: String,
    pub target: String,
    pub true_value: f64,
    pub seeds: usize,
    /// Mean over seeds of (estimate − true value)².
    pub mse: f64,
    pub bias: f64,
    pub variance: f64,
}

/// The target as evaluated by `objective` and its exact value. POTEC
/// evaluates the cluster marginal of the target composed with its selector,
/// so its truth is that composed policy's value.
fn evaluate(env: &Environment, objective: &Objective, target: &TablePolicy, ds: &crate::dataset::LoggedDataset) -> Result<(f64, f64)> {
    match objective.selector() {
        Some(sel) => {
            let cl = sel.clustering();
            let mut marg = Matrix::zeros(env.num_contexts(), cl.num_clusters());
            for j in 0..env.num_contexts() {
                cl.marginalize_into(target.table.row(j), marg.row_mut(j));
            }
            let cp = ClusterPolicy::new(TablePolicy { table: marg }, sel.clone())?;
            let est = objective.data_value(ds, &cp.cluster_policy, Execution::Sequential)?;
            Ok((est, true_value(env, &cp)))
        }
        None => Ok((objective.data_value(ds, target, Execution::Sequential)?, true_value(env, target))),
    }
}

/// Mean squared error of every method's estimate at every target policy over
/// independently sampled datasets of `n` rows. `model_seed` feeds perturbed
/// reward models, which stay fixed across dataset seeds.
pub fn mse_report(
    env: &Environment,
    seeds: &[u64],
    n: usize,
    variants: &[MethodVariant],
    targets: &[TargetSpec],
    model_seed: u64,
    exec: Execution,
) -> Result<Vec<MseRow>> {
    if seeds.is_empty() || targets.is_empty() || variants.is_empty() {
        return Err(Error::config("the MSE report needs seeds, targets and methods"));
    }
    let tables: Vec<TablePolicy> = targets
        .iter()
        .map(|t| Ok(TablePolicy { table: t.table(env)? }))
        .collect::<Result<_>>()?;
    // per seed: (estimate, truth) for every (variant, target)
    let per_seed: Vec<Result<Vec<(f64, f64)>>> = map_indexed(exec, seeds.len(), |s| {
        let ds = sample_logged(env, n, seeds[s])?;
        let setup = Setup {
            env: Some(env.clone()),
            ds,
            clustering: env.clustering().cloned(),
        };
        let mut out = Vec::with_capacity(variants.len() * tables.len());
        for v in variants {
            let obj = v.objective(&setup, model_seed)?;
            for t in &tables {
                out.push(evaluate(env, &obj, t, &setup.ds)?);
            }
        }
        Ok(out)
    });
    let per_seed: Vec<Vec<(f64, f64)>> = per_seed.into_iter().collect::<Result<_>>()?;
    let ns = seeds.len() as f64;
    let mut rows = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        for (ti, t) in targets.iter().enumerate() {
            let idx = vi * targets.len() + ti;
            let est: Vec<f64> = per_seed.iter().map(|p| p[idx].0).collect();
            // least-squares models refit per seed; the truth may vary for POTEC
            let truth: Vec<f64> = per_seed.iter().map(|p| p[idx].1).collect();
            let mean_est = est.iter().sum::<f64>() / ns;
            let mean_truth = truth.iter().sum::<f64>() / ns;
            let mse = est.iter().zip(&truth).map(|(e, v)| (e - v).powi(2)).sum::<f64>() / ns;
            let variance = est.iter().map(|e| (e - mean_est).powi(2)).sum::<f64>() / ns;
            rows.push(MseRow {
                section: if v.is_pwll() { PROXY_SECTION } else { ESTIMATOR_SECTION }.to_string(),
                method: v.label.clone(),
                target: t.label(),
                true_value: mean_truth,
                seeds: seeds.len(),
                mse,
                bias: mean_est - mean_truth,
                variance,
            });
        }
    }
    // estimators first, flagged proxies after
    rows.sort_by_key(|r| r.section != ESTIMATOR_SECTION);
    Ok(rows)
}

/// Mean MSE over targets per method, in row order.
pub fn mean_mse_by_method(rows: &[MseRow]) -> Vec<(String, String, f64)> {
    let mut out: Vec<(String, String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.0 == r.method) {
            Some(o) => {
                o.2 += r.mse;
                o.3 += 1;
            }
            None => out.push((r.method.clone(), r.section.clone(), r.mse, 1)),
        }
    }
    out.into_iter().map(|(m, s, sum, c)| (m, s, sum / c as f64)).collect()
}

pub fn write_mse_csv<W: Write>(rows: &[MseRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["section", "method", "target", "true_value", "seeds", "mse", "bias", "variance"])?;
    for r in rows {
        w.write_record([
            r.section.clone(),
            r.method.clone(),
            r.target.clone(),
            r.true_value.to_string(),
            r.seeds.to_string(),
            r.mse.to_string(),
            r.bias.to_string(),
            r.variance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::MethodSpec;
    use crate::envgen::RewardMode;

    fn variants(names: &[&str]) -> Vec<MethodVariant> {
        names.iter().flat_map(|n| MethodSpec::new(n).expand(0.0, true).unwrap()).collect()
    }

    fn bernoulli_env() -> Environment {
        Environment::from_parts(
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]),
            vec![0.5, 0.5],
            Matrix::from_rows(&[vec![0.3, 0.7, 0.5], vec![0.6, 0.2, 0.9]]),
            Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]]),
            RewardMode::Binary,
            0,
        )
        .unwrap()
    }

    #[test]
    fn ips_at_the_logging_policy_matches_the_bernoulli_variance() {
        let env = bernoulli_env();
        let n = 200;
        let seeds: Vec<u64> = (0..500).collect();
        let rows = mse_report(&env, &seeds, n, &variants(&["ips"]), &[TargetSpec::Logging], 0, Execution::default()).unwrap();
        // at π = π₀ every weight is 1, so the estimate is the mean reward; the
        // reward is Bernoulli with success probability V(π₀) (a two-stage draw)
        let v = true_value(&env, &env.logging_policy());
        let analytic = v * (1.0 - v) / n as f64;
        assert!((rows[0].mse / analytic - 1.0).abs() < 0.2, "{} vs {analytic}", rows[0].mse);
        assert!((rows[0].true_value - v).abs() < 1e-15);
    }

    #[test]
    fn deterministic_rewards_concentrate() {
        let env = Environment::from_parts(
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]),
            vec![0.5, 0.5],
            Matrix::from_rows(&[vec![0.3, 0.7, 0.5], vec![0.6, 0.2, 0.9]]),
            Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]]),
            RewardMode::Continuous { noise: 0.0 },
            0,
        )
        .unwrap();
        let rows = mse_report(&env, &[1, 2, 3], 100_000, &variants(&["ips"]), &[TargetSpec::Logging], 0, Execution::default()).unwrap();
        assert!(rows[0].mse < 1e-4, "{}", rows[0].mse);
    }

    #[test]
    fn pwll_rows_are_flagged_and_listed_after_estimators() {
        let env = bernoulli_env();
        let rows = mse_report(
            &env,
            &[0, 1],
            300,
            &variants(&["lpi", "ips", "cips"]),
            &[TargetSpec::Uniform, TargetSpec::EpsilonGreedy { epsilon: 0.3 }],
            0,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows[..4].iter().all(|r| r.section == ESTIMATOR_SECTION));
        assert!(rows[4..].iter().all(|r| r.section == PROXY_SECTION && r.method.starts_with("lpi")));
        let by = mean_mse_by_method(&rows);
        assert_eq!(by.len(), 3);
        assert!(by[2].2 > by[0].2);
    }

    #[test]
    fn target_tables_are_distributions() {
        let env = bernoulli_env();
        for t in [
            TargetSpec::Logging,
            TargetSpec::Uniform,
            TargetSpec::SoftmaxReward { temperature: 0.1 },
            TargetSpec::EpsilonGreedy { epsilon: 0.2 },
        ] {
            let tab = t.table(&env).unwrap();
            for j in 0..2 {
                assert!((tab.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(TargetSpec::SoftmaxReward { temperature: 0.0 }.table(&env).is_err());
    }

    #[test]
    fn potec_is_scored_against_the_composed_policy() {
        let mut spec = crate::envgen::EnvSpec::new(5, 8, 3, 4);
        spec.num_clusters = 3;
        let env = crate::envgen::make_environment(&spec).unwrap();
        let rows = mse_report(&env, &[0, 1, 2], 20_000, &variants(&["potec"]), &[TargetSpec::Uniform], 0, Execution::default()).unwrap();
        // exact reward model: the estimate is unbiased for the composed policy
        assert!(rows[0].mse < 1e-3, "{rows:?}");
    }
}
