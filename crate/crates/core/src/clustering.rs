//! Action clusterings φ: A → C.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClusteringRepr", into = "ClusteringRepr")]
pub struct Clustering {
    assignment: Vec<usize>,
    num_clusters: usize,
    members: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ClusteringRepr {
    assignment: Vec<usize>,
    num_clusters: usize,
}

impl TryFrom<ClusteringRepr> for Clustering {
    type Error = Error;

    fn try_from(r: ClusteringRepr) -> Result<Self> {
        Clustering::new(r.assignment, r.num_clusters)
    }
}

impl From<Clustering> for ClusteringRepr {
    fn from(c: Clustering) -> Self {
        ClusteringRepr {
            assignment: c.assignment,
            num_clusters: c.num_clusters,
        }
    }
}

impl Clustering {
    /// Validates that every id is in range, every cluster is nonempty and |C| ≤ K.
    pub fn new(assignment: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 || num_clusters > assignment.len() {
            return Err(Error::config(format!(
                "need 1 ≤ |C| ≤ K, got |C|={num_clusters}, K={}",
                assignment.len()
            )));
        }
        let mut members = vec![Vec::new(); num_clusters];
        for (a, &c) in assignment.iter().enumerate() {
            if c >= num_clusters {
                return Err(Error::config(format!("action {a} mapped to cluster {c} ≥ {num_clusters}")));
            }
            members[c].push(a);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::config(format!("cluster {c} is empty")));
        }
        Ok(Self {
            assignment,
            num_clusters,
            members,
        })
    }

    pub fn identity(num_actions: usize) -> Self {
        Self::new((0..num_actions).collect(), num_actions).expect("identity clustering is valid")
    }

    pub fn single(num_actions: usize) -> Self {
        Self::new(vec![0; num_actions], 1).expect("single clustering is valid")
    }

    /// Uniformly random assignment with every cluster nonempty.
    pub fn random(num_actions: usize, num_clusters: usize, seed: u64) -> Result<Self> {
        if num_clusters == 0 || num_clusters > num_actions {
            return Err(Error::config(format!("cannot split {num_actions} actions into {num_clusters} clusters")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..num_actions).collect();
        order.shuffle(&mut rng);
        let mut assignment = vec![0; num_actions];
        for (i, &a) in order.iter().enumerate() {
            assignment[a] = if i < num_clusters {
                i
            } else {
                rng.random_range(0..num_clusters)
            };
        }
        Self::new(assignment, num_clusters)
    }

    /// Lloyd's k-means on the rows of `points` (one row per action), k-means++ seeding.
    /// Empty clusters are refilled with the point farthest from its centroid.
    pub fn kmeans(points: &Matrix, num_clusters: usize, seed: u64, max_iter: usize) -> Result<Self> {
        let n = points.rows();
        if num_clusters == 0 || num_clusters > n {
            return Err(Error::config(format!("cannot split {n} actions into {num_clusters} clusters")));
        }
        let dim = points.cols();
        let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut centroids = Matrix::zeros(num_clusters, dim);
        let first = rng.random_range(0..n);
        centroids.row_mut(0).copy_from_slice(points.row(first));
        let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), centroids.row(0))).collect();
        for c in 1..num_clusters {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &w) in nearest.iter().enumerate() {
                    if u < w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centroids.row_mut(c).copy_from_slice(points.row(pick));
            for (i, d) in nearest.iter_mut().enumerate() {
                *d = d.min(dist2(points.row(i), centroids.row(c)));
            }
        }

        let mut assignment = vec![usize::MAX; n];
        for _ in 0..max_iter.max(1) {
            let mut changed = false;
            for (i, slot) in assignment.iter_mut().enumerate() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..num_clusters {
                    let d = dist2(points.row(i), centroids.row(c));
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                if *slot != best {
                    *slot = best;
                    changed = true;
                }
            }
            // refill empty clusters so the partition stays valid
            let mut counts = vec![0usize; num_clusters];
            assignment.iter().for_each(|&c| counts[c] += 1);
            for c in 0..num_clusters {
                if counts[c] == 0 {
                    let far = (0..n)
                        .filter(|&i| counts[assignment[i]] > 1)
                        .max_by(|&i, &j| {
                            let di = dist2(points.row(i), centroids.row(assignment[i]));
                            let dj = dist2(points.row(j), centroids.row(assignment[j]));
                            di.total_cmp(&dj).then(j.cmp(&i))
                        })
                        .expect("more points than clusters");
                    counts[assignment[far]] -= 1;
                    assignment[far] = c;
                    counts[c] = 1;
                    changed = true;
                }
            }
            centroids = Matrix::zeros(num_clusters, dim);
            for (i, &c) in assignment.iter().enumerate() {
                for (acc, v) in centroids.row_mut(c).iter_mut().zip(points.row(i)) {
                    *acc += v;
                }
            }
            for (c, &count) in counts.iter().enumerate() {
                let inv = 1.0 / count as f64;
                centroids.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            }
            if !changed {
                break;
            }
        }
        Self::new(assignment, num_clusters)
    }

    pub fn num_actions(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    #[inline]
    pub fn cluster_of(&self, action: usize) -> usize {
        self.assignment[action]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Sums an action-indexed vector into cluster totals.
    pub fn marginalize(&self, per_action: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_clusters];
        self.marginalize_into(per_action, &mut out);
        out
    }

    pub fn marginalize_into(&self, per_action: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (a, &v) in per_action.iter().enumerate() {
            out[self.assignment[a]] += v;
        }
    }
}
