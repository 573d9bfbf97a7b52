//! Pseudo-labelling of unlabelled features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    Euclidean,
    /// `1 − cos(a, b)`.
    Cosine,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => squared_distance(a, b).sqrt(),
            DistanceMetric::Cosine => {
                let na = l2_norm(a);
                let nb = l2_norm(b);
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_samples: usize,
    pub metric: DistanceMetric,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 0.6,
            min_samples: 4,
            metric: DistanceMetric::Euclidean,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::validation("dbscan eps must be positive"));
        }
        if self.min_samples < 2 {
            return Err(Error::validation("dbscan min_samples must be >= 2"));
        }
        Ok(())
    }
}

/// Pseudo-label of one unlabelled sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PseudoLabel {
    Cluster(usize),
    /// Unclustered sample; the id is unique per outlier.
    Outlier(usize),
}

impl PseudoLabel {
    /// Clusters map to `0..`, outliers to `-1, -2, ...`.
    pub fn encode(self) -> i64 {
        match self {
            PseudoLabel::Cluster(c) => c as i64,
            PseudoLabel::Outlier(o) => -(o as i64) - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<PseudoLabel>,
    pub n_clusters: usize,
    pub n_outliers: usize,
}

impl ClusterAssignment {
    /// Builds an assignment from raw labels, renumbering clusters by first
    /// appearance and outliers by position.
    pub fn from_raw(raw: &[Option<usize>]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut n_outliers = 0;
        let labels = raw
            .iter()
            .map(|r| match r {
                Some(c) => {
                    let next = remap.len();
                    PseudoLabel::Cluster(*remap.entry(*c).or_insert(next))
                }
                None => {
                    n_outliers += 1;
                    PseudoLabel::Outlier(n_outliers - 1)
                }
            })
            .collect();
        Self {
            labels,
            n_clusters: remap.len(),
            n_outliers,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let PseudoLabel::Cluster(c) = l {
                m[*c].push(i);
            }
        }
        m
    }

    pub fn outlier_indices(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_outliers];
        for (i, l) in self.labels.iter().enumerate() {
            if let PseudoLabel::Outlier(o) = l {
                out[*o] = i;
            }
        }
        out
    }

    /// Share of clustered samples whose cluster's majority class matches
    /// their own; `None` when nothing is clustered.
    pub fn purity(&self, truth: &[String]) -> Option<f64> {
        let mut clustered = 0;
        let mut agree = 0;
        for members in self.members() {
            let mut counts = std::collections::HashMap::new();
            for &i in &members {
                *counts.entry(&truth[i]).or_insert(0usize) += 1;
            }
            agree += counts.values().max().copied().unwrap_or(0);
            clustered += members.len();
        }
        (clustered > 0).then(|| agree as f64 / clustered as f64)
    }
}

fn check_finite(features: &Matrix<f64>) -> Result<()> {
    if features.rows == 0 {
        return Err(Error::validation("clustering needs at least one sample"));
    }
    if !features.is_finite() {
        return Err(Error::validation("non-finite feature passed to clustering"));
    }
    Ok(())
}

/// DBSCAN with inclusive `eps` neighbourhoods that count the point itself.
///
/// Clusters are numbered in order of their lowest-index core point. A border
/// point within reach of several clusters joins the cluster of its
/// lowest-index core neighbour.
pub fn dbscan_cluster(features: &Matrix<f64>, config: &DbscanConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    check_finite(features)?;
    let n = features.rows;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| config.metric.distance(features.row(i), features.row(j)) <= config.eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= config.min_samples).collect();

    let mut cluster: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..n {
        if !core[seed] || cluster[seed].is_some() {
            continue;
        }
        cluster[seed] = Some(n_clusters);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if core[q] && cluster[q].is_none() {
                    cluster[q] = Some(n_clusters);
                    queue.push_back(q);
                }
            }
        }
        n_clusters += 1;
    }
    let mut n_outliers = 0;
    let labels = (0..n)
        .map(|i| {
            if core[i] {
                return PseudoLabel::Cluster(cluster[i].expect("core points are clustered"));
            }
            match neighbours[i].iter().find(|&&j| core[j]) {
                Some(&j) => PseudoLabel::Cluster(cluster[j].expect("core points are clustered")),
                None => {
                    n_outliers += 1;
                    PseudoLabel::Outlier(n_outliers - 1)
                }
            }
        })
        .collect();
    Ok(ClusterAssignment {
        labels,
        n_clusters,
        n_outliers,
    })
}

/// Lloyd's k-means with k-means++ seeding. Produces no outliers; empty
/// clusters are dropped and the rest renumbered.
pub fn kmeans_cluster(features: &Matrix<f64>, k: usize, iterations: usize, seed: u64) -> Result<ClusterAssignment> {
    check_finite(features)?;
    if k == 0 {
        return Err(Error::validation("k-means needs k >= 1"));
    }
    let n = features.rows;
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<Vec<f64>> = vec![features.row(rng.random_range(0..n)).to_vec()];
    let mut best = vec![f64::INFINITY; n];
    while centres.len() < k {
        let last = centres.last().expect("non-empty");
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(squared_distance(features.row(i), last));
        }
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, b) in best.iter().enumerate() {
                if r < *b {
                    pick = i;
                    break;
                }
                r -= b;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(features.row(next).to_vec());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let c = nearest(features.row(i), &centres);
            changed |= c != *a;
            *a = c;
        }
        let mut sums = vec![vec![0.0; features.cols]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        for ((c, s), m) in centres.iter_mut().zip(sums).zip(&counts) {
            if *m > 0 {
                *c = s.into_iter().map(|v| v / *m as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let raw: Vec<Option<usize>> = assign.into_iter().map(Some).collect();
    Ok(ClusterAssignment::from_raw(&raw))
}

fn nearest(x: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centres.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// `quantile` of every point's distance to its `(min_samples − 1)`-th
/// nearest other point. Points at this radius or closer are core at that
/// quantile.
pub fn auto_eps(features: &Matrix<f64>, min_samples: usize, metric: DistanceMetric, quantile: f64) -> Result<f64> {
    check_finite(features)?;
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::validation("eps quantile must be in [0, 1]"));
    }
    let n = features.rows;
    let k = min_samples.saturating_sub(1).clamp(1, n.saturating_sub(1).max(1));
    let mut kth: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| metric.distance(features.row(i), features.row(j)))
                .collect();
            if d.is_empty() {
                return 0.0;
            }
            d.sort_by(f64::total_cmp);
            d[(k - 1).min(d.len() - 1)]
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    let idx = ((kth.len() - 1) as f64 * quantile).round() as usize;
    Ok(kth[idx].max(1e-9))
}
