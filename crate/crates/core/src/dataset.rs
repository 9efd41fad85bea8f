//! Logged bandit feedback and its CSV form.
//!
//! CSV layout (header required):
//! `ctx_0,...,ctx_{d-1},action,reward,logging_prob[,cluster,cluster_logging_prob]`

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::Ctx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnnotations {
    pub ids: Vec<usize>,
    /// π₀(cᵢ|xᵢ)
    pub logging_probs: Vec<f64>,
    pub num_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    contexts: Matrix,
    context_ids: Option<Vec<usize>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    logging_probs: Vec<f64>,
    clusters: Option<ClusterAnnotations>,
    num_actions: usize,
}

/// Borrowed view of one logged tuple.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub ctx: Ctx<'a>,
    pub action: usize,
    pub reward: f64,
    pub logging_prob: f64,
    pub cluster: Option<usize>,
    pub cluster_logging_prob: Option<f64>,
}

impl LoggedDataset {
    pub fn new(
        contexts: Matrix,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        logging_probs: Vec<f64>,
        num_actions: usize,
    ) -> Result<Self> {
        let n = contexts.rows();
        if actions.len() != n || rewards.len() != n || logging_probs.len() != n {
            return Err(Error::validation(format!(
                "column lengths differ: {n} contexts, {} actions, {} rewards, {} propensities",
                actions.len(),
                rewards.len(),
                logging_probs.len()
            )));
        }
        for i in 0..n {
            check_row(actions[i], rewards[i], logging_probs[i], num_actions)
                .map_err(|msg| Error::validation(format!("sample {i}: {msg}")))?;
        }
        Ok(Self {
            contexts,
            context_ids: None,
            actions,
            rewards,
            logging_probs,
            clusters: None,
            num_actions,
        })
    }

    pub fn with_context_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::validation("context id column has the wrong length"));
        }
        self.context_ids = Some(ids);
        Ok(self)
    }

    pub fn with_clusters(mut self, ids: Vec<usize>, logging_probs: Vec<f64>, num_clusters: usize) -> Result<Self> {
        if ids.len() != self.len() || logging_probs.len() != self.len() {
            return Err(Error::validation("cluster columns have the wrong length"));
        }
        for i in 0..self.len() {
            check_cluster(ids[i], logging_probs[i], self.logging_probs[i], num_clusters)
                .map_err(|msg| Error::validation(format!("sample {i}: {msg}")))?;
        }
        self.clusters = Some(ClusterAnnotations {
            ids,
            logging_probs,
            num_clusters,
        });
        Ok(self)
    }

    /// Annotates with the identity clustering (π₀(c|x) = π₀(a|x)).
    pub fn with_identity_clusters(self) -> Self {
        let ids = self.actions.clone();
        let probs = self.logging_probs.clone();
        let k = self.num_actions;
        self.with_clusters(ids, probs, k).expect("identity annotations are valid")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn contexts(&self) -> &Matrix {
        &self.contexts
    }

    pub fn context(&self, i: usize) -> &[f64] {
        self.contexts.row(i)
    }

    pub fn context_ids(&self) -> Option<&[usize]> {
        self.context_ids.as_deref()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn logging_probs(&self) -> &[f64] {
        &self.logging_probs
    }

    pub fn clusters(&self) -> Option<&ClusterAnnotations> {
        self.clusters.as_ref()
    }

    /// Checks that the cluster annotations agree with `clustering`.
    pub fn check_clustering(&self, clustering: &Clustering) -> Result<()> {
        let ann = self
            .clusters
            .as_ref()
            .ok_or_else(|| Error::config("dataset carries no cluster annotations"))?;
        if clustering.num_actions() != self.num_actions || clustering.num_clusters() != ann.num_clusters {
            return Err(Error::config("clustering shape does not match the dataset annotations"));
        }
        if let Some(i) = (0..self.len()).find(|&i| clustering.cluster_of(self.actions[i]) != ann.ids[i]) {
            return Err(Error::config(format!("sample {i}: cluster id disagrees with the clustering")));
        }
        Ok(())
    }

    #[inline]
    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            ctx: Ctx::new(self.contexts.row(i), self.context_ids.as_ref().map(|ids| ids[i])),
            action: self.actions[i],
            reward: self.rewards[i],
            logging_prob: self.logging_probs[i],
            cluster: self.clusters.as_ref().map(|c| c.ids[i]),
            cluster_logging_prob: self.clusters.as_ref().map(|c| c.logging_probs[i]),
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }

    /// Copy with every reward replaced.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        if rewards.len() != out.len() {
            return Err(Error::validation("reward column has the wrong length"));
        }
        for (i, &r) in rewards.iter().enumerate() {
            check_row(out.actions[i], r, out.logging_probs[i], out.num_actions)
                .map_err(|msg| Error::validation(format!("sample {i}: {msg}")))?;
        }
        out.rewards = rewards;
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.context_dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("ctx_{j}")).collect();
        header.extend(["action", "reward", "logging_prob"].map(String::from));
        if self.clusters.is_some() {
            header.extend(["cluster", "cluster_logging_prob"].map(String::from));
        }
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            row.extend(self.context(i).iter().map(|v| v.to_string()));
            row.push(self.actions[i].to_string());
            row.push(self.rewards[i].to_string());
            row.push(self.logging_probs[i].to_string());
            if let Some(c) = &self.clusters {
                row.push(c.ids[i].to_string());
                row.push(c.logging_probs[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Optional hints for CSV ingestion. Unset counts are inferred as max id + 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub num_actions: Option<usize>,
    pub num_clusters: Option<usize>,
}

fn check_row(action: usize, reward: f64, p0: f64, k: usize) -> std::result::Result<(), String> {
    if action >= k {
        return Err(format!("action {action} outside [0, {k})"));
    }
    if !(0.0..=1.0).contains(&reward) {
        return Err(format!("reward {reward} outside [0, 1]"));
    }
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(format!("logging propensity {p0} outside (0, 1]"));
    }
    Ok(())
}

fn check_cluster(c: usize, pc: f64, p0: f64, num_clusters: usize) -> std::result::Result<(), String> {
    if c >= num_clusters {
        return Err(format!("cluster {c} outside [0, {num_clusters})"));
    }
    if !(pc > 0.0 && pc <= 1.0 + 1e-12) {
        return Err(format!("cluster propensity {pc} outside (0, 1]"));
    }
    if pc < p0 * (1.0 - 1e-12) {
        return Err(format!("cluster propensity {pc} below action propensity {p0}"));
    }
    Ok(())
}

pub fn read_csv<R: Read>(reader: R, schema: CsvSchema) -> Result<LoggedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let d = names.iter().take_while(|n| n.starts_with("ctx_")).count();
    for (j, name) in names.iter().take(d).enumerate() {
        if *name != format!("ctx_{j}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column ctx_{j}, found {name}"),
            });
        }
    }
    let rest = &names[d..];
    let with_clusters = match rest {
        ["action", "reward", "logging_prob"] => false,
        ["action", "reward", "logging_prob", "cluster", "cluster_logging_prob"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected columns after contexts: {}", rest.join(",")),
            })
        }
    };

    let mut ctx = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut p0s = Vec::new();
    let mut cids = Vec::new();
    let mut cps = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let float = |j: usize| -> Result<f64> {
            record[j].parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("column {}: {e}", names[j]),
            })
        };
        let index = |j: usize| -> Result<usize> {
            record[j].parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("column {}: {e}", names[j]),
            })
        };
        for j in 0..d {
            ctx.push(float(j)?);
        }
        let a = index(d)?;
        let r = float(d + 1)?;
        let p0 = float(d + 2)?;
        let bad = |msg: String| Error::Validation { line: Some(line), msg };
        if !(p0 > 0.0 && p0 <= 1.0) {
            return Err(bad(format!("logging propensity {p0} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(bad(format!("reward {r} outside [0, 1]")));
        }
        if let Some(k) = schema.num_actions.filter(|&k| a >= k) {
            return Err(bad(format!("action {a} outside [0, {k})")));
        }
        actions.push(a);
        rewards.push(r);
        p0s.push(p0);
        if with_clusters {
            let c = index(d + 3)?;
            let pc = float(d + 4)?;
            check_cluster(c, pc, p0, schema.num_clusters.unwrap_or(usize::MAX)).map_err(bad)?;
            cids.push(c);
            cps.push(pc);
        }
    }
    let n = actions.len();
    let k = schema
        .num_actions
        .unwrap_or_else(|| actions.iter().max().map_or(1, |&a| a + 1));
    let ds = LoggedDataset::new(Matrix::from_vec(n, d, ctx), actions, rewards, p0s, k)?;
    if with_clusters {
        let nc = schema
            .num_clusters
            .unwrap_or_else(|| cids.iter().max().map_or(1, |&c| c + 1));
        ds.with_clusters(cids, cps, nc)
    } else {
        Ok(ds)
    }
}

/// Reads a logged dataset from a CSV file.
pub fn ingest_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<LoggedDataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_row() {
        let ds = read_csv("ctx_0,action,reward,logging_prob\n0.5,3,1.0,0.2\n".as_bytes(), CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.context(0), &[0.5]);
        assert_eq!(ds.actions(), &[3]);
        assert_eq!(ds.rewards(), &[1.0]);
        assert_eq!(ds.logging_probs(), &[0.2]);
        assert_eq!(ds.num_actions(), 4);
    }

    #[test]
    fn zero_propensity_is_a_validation_error() {
        let err = read_csv("ctx_0,action,reward,logging_prob\n0.5,3,1.0,0.2\n0.1,0,0.0,0.0\n".as_bytes(), CsvSchema::default())
            .unwrap_err();
        match err {
            Error::Validation { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = read_csv("ctx_0,action,reward,logging_prob\n0.5,3,1.0,0.2\n0.5,x,1.0,0.2\n".as_bytes(), CsvSchema::default())
            .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = read_csv("ctx_0,action,reward,logging_prob\n0.5,3,1.0\n".as_bytes(), CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn cluster_columns_are_populated() {
        let text = "ctx_0,ctx_1,action,reward,logging_prob,cluster,cluster_logging_prob\n1,2,0,1,0.25,1,0.5\n";
        let ds = read_csv(text.as_bytes(), CsvSchema::default()).unwrap();
        let c = ds.clusters().unwrap();
        assert_eq!(c.ids, vec![1]);
        assert_eq!(c.logging_probs, vec![0.5]);
        assert_eq!(c.num_clusters, 2);
    }

    #[test]
    fn cluster_propensity_must_dominate() {
        let text = "ctx_0,action,reward,logging_prob,cluster,cluster_logging_prob\n1,0,1,0.5,0,0.25\n";
        assert!(read_csv(text.as_bytes(), CsvSchema::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = LoggedDataset::new(
            Matrix::from_rows(&[vec![0.1, -2.5], vec![1.0 / 3.0, 4.0]]),
            vec![1, 0],
            vec![0.0, 1.0],
            vec![0.3, 0.7],
            2,
        )
        .unwrap()
        .with_clusters(vec![0, 0], vec![1.0, 1.0], 1)
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(
            buf.as_slice(),
            CsvSchema {
                num_actions: Some(2),
                num_clusters: Some(1),
            },
        )
        .unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn invariants_enforced_on_construction() {
        let m = Matrix::zeros(1, 1);
        assert!(LoggedDataset::new(m.clone(), vec![2], vec![0.5], vec![0.5], 2).is_err());
        assert!(LoggedDataset::new(m.clone(), vec![0], vec![1.5], vec![0.5], 2).is_err());
        assert!(LoggedDataset::new(m, vec![0], vec![0.5], vec![0.0], 2).is_err());
    }
}
