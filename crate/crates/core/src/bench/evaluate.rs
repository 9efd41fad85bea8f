//! Scoring a fixed policy with every configured estimator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::config::{MethodVariant, Setup};
use crate::bench::fmt_opt;
use crate::clustering::Clustering;
use crate::envgen::true_value;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::ope::ClusterPolicy;
use crate::par::Execution;
use crate::policy::{ActionPolicy, Ctx, SoftmaxPolicy};

/// Cluster marginal π(c|x) of an action-level policy.
pub struct MarginalPolicy<'a> {
    pub policy: &'a SoftmaxPolicy,
    pub clustering: &'a Clustering,
}

impl ActionPolicy for MarginalPolicy<'_> {
    fn num_actions(&self) -> usize {
        self.clustering.num_clusters()
    }

    fn probs_into(&self, ctx: Ctx<'_>, out: &mut [f64]) {
        self.clustering.marginalize_into(&self.policy.probs(ctx), out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub estimate: f64,
    /// Exact value of the policy the estimator scores (for POTEC: the
    /// marginal composed with the greedy selector).
    pub true_value: Option<f64>,
    pub sq_error: Option<f64>,
}

/// Estimates of `policy` under each method (PWLL rows report the objective).
/// A policy with |C| outputs is read as a POTEC cluster policy; an
/// action-level policy is marginalized for POTEC.
pub fn evaluate_policy(setup: &Setup, variants: &[MethodVariant], policy: &SoftmaxPolicy, model_seed: u64) -> Result<Vec<EvalRow>> {
    let k = setup.ds.num_actions();
    let mut rows = Vec::new();
    for v in variants {
        let obj = v.objective(setup, model_seed)?;
        let (estimate, truth) = match &obj {
            Objective::Ope { selector: Some(sel), .. } => {
                if policy.num_actions() == sel.num_clusters() {
                    let est = obj.data_value(&setup.ds, policy, Execution::default())?;
                    let tv = setup.env.as_ref().map(|e| Ok::<_, Error>(true_value(e, &ClusterPolicy::new(policy.clone(), sel.clone())?)));
                    (est, tv.transpose()?)
                } else if policy.num_actions() == k {
                    let marg = MarginalPolicy {
                        policy,
                        clustering: sel.clustering(),
                    };
                    let est = obj.data_value(&setup.ds, &marg, Execution::default())?;
                    let tv = setup.env.as_ref().map(|e| Ok::<_, Error>(true_value(e, &ClusterPolicy::new(marg, sel.clone())?)));
                    (est, tv.transpose()?)
                } else {
                    return Err(Error::config(format!("policy has {} outputs; expected {k} or {}", policy.num_actions(), sel.num_clusters())));
                }
            }
            _ => {
                if policy.num_actions() != k {
                    return Err(Error::config(format!("{} needs a policy over {k} actions", v.label)));
                }
                obj.check(&setup.ds, policy)?;
                let est = obj.data_value(&setup.ds, policy, Execution::default())?;
                (est, setup.env.as_ref().map(|e| true_value(e, policy)))
            }
        };
        rows.push(EvalRow {
            method: v.label.clone(),
            estimate,
            true_value: truth,
            sq_error: truth.map(|t| (estimate - t).powi(2)),
        });
    }
    Ok(rows)
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "estimate", "true_value", "sq_error"])?;
    for r in rows {
        w.write_record([r.method.clone(), r.estimate.to_string(), fmt_opt(r.true_value), fmt_opt(r.sq_error)])?;
    }
    w.flush()?;
    Ok(())
}
