//! Contrastive baseline: DBSCAN pseudo-labels on target features alternate
//! with training under a unified contrastive loss over a hybrid memory of
//! source class centroids, target cluster centroids and outlier features.

mod cluster;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{apply_update, loss_and_gradients, ImageBatch, OptimizerConfig, TrainState};
use crate::datasets::{DomainDataset, Raster, UnlabelledDataset};
use crate::error::{Error, Result};
use crate::metrics::{to_value, MetricsSink};
use crate::tensor::{dot, normalized, Matrix};

pub use cluster::{
    auto_eps, dbscan_cluster, kmeans_cluster, ClusterAssignment, DbscanConfig, DistanceMetric, PseudoLabel,
};

/// Which memory entry a feature is pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrototypeRef {
    Source(usize),
    Cluster(usize),
    Outlier(usize),
}

impl From<PseudoLabel> for PrototypeRef {
    fn from(l: PseudoLabel) -> Self {
        match l {
            PseudoLabel::Cluster(c) => PrototypeRef::Cluster(c),
            PseudoLabel::Outlier(o) => PrototypeRef::Outlier(o),
        }
    }
}

/// Unit-norm source centroids `w`, cluster centroids `c` and outlier features `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrototypeMemory {
    pub source: Vec<Vec<f64>>,
    pub clusters: Vec<Vec<f64>>,
    pub outliers: Vec<Vec<f64>>,
    pub temperature: f64,
    pub momentum: f64,
}

impl HybridPrototypeMemory {
    pub fn len(&self) -> usize {
        self.source.len() + self.clusters.len() + self.outliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of `r` in the flattened order `w`, `c`, `v`.
    pub fn flat_index(&self, r: PrototypeRef) -> Result<usize> {
        let (bank, i, offset) = match r {
            PrototypeRef::Source(i) => (&self.source, i, 0),
            PrototypeRef::Cluster(i) => (&self.clusters, i, self.source.len()),
            PrototypeRef::Outlier(i) => (&self.outliers, i, self.source.len() + self.clusters.len()),
        };
        if i >= bank.len() {
            return Err(Error::validation(format!("unknown memory entry {r:?}")));
        }
        Ok(offset + i)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.source.iter().chain(&self.clusters).chain(&self.outliers)
    }

    fn entry_mut(&mut self, r: PrototypeRef) -> Result<&mut Vec<f64>> {
        self.flat_index(r)?;
        Ok(match r {
            PrototypeRef::Source(i) => &mut self.source[i],
            PrototypeRef::Cluster(i) => &mut self.clusters[i],
            PrototypeRef::Outlier(i) => &mut self.outliers[i],
        })
    }

    fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::validation("prototype memory is empty"));
        }
        if let Some(e) = self.entries().find(|e| e.len() != f.len()) {
            return Err(Error::validation(format!(
                "feature has {} dims, memory has {}",
                f.len(),
                e.len()
            )));
        }
        Ok(self.entries().map(|z| dot(f, z) / self.temperature).collect())
    }

    /// Softmax over every memory entry.
    pub fn probabilities(&self, f: &[f64]) -> Result<Vec<f64>> {
        Ok(crate::losses::softmax(&self.logits(f)?))
    }
}

fn mean_normalized(rows: impl Iterator<Item = Vec<f64>>, what: &str) -> Result<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for r in rows {
        match &mut sum {
            Some(s) => s.iter_mut().zip(&r).for_each(|(a, b)| *a += b),
            None => sum = Some(r),
        }
        n += 1;
    }
    let s = sum.ok_or_else(|| Error::validation(format!("{what} has no members")))?;
    Ok(normalized(&s.iter().map(|v| v / n as f64).collect::<Vec<_>>()))
}

/// `w_k`, `c_k` are normalised means of their members; `v_k` are normalised outlier features.
pub fn init_memory(
    train_features: &Matrix<f64>,
    train_labels: &[usize],
    n_classes: usize,
    unlabelled_features: &Matrix<f64>,
    assignment: &ClusterAssignment,
    temperature: f64,
    momentum: f64,
) -> Result<HybridPrototypeMemory> {
    if train_labels.len() != train_features.rows {
        return Err(Error::validation("train labels do not match features"));
    }
    if assignment.len() != unlabelled_features.rows {
        return Err(Error::validation("assignment does not match unlabelled features"));
    }
    if !(temperature > 0.0) || !(0.0..=1.0).contains(&momentum) {
        return Err(Error::validation("need temperature > 0 and momentum in [0, 1]"));
    }
    let source = (0..n_classes)
        .map(|k| {
            let rows = (0..train_features.rows)
                .filter(|&i| train_labels[i] == k)
                .map(|i| train_features.row(i).to_vec());
            mean_normalized(rows, &format!("source class {k}"))
        })
        .collect::<Result<_>>()?;
    let clusters = assignment
        .members()
        .iter()
        .enumerate()
        .map(|(k, m)| mean_normalized(m.iter().map(|&i| unlabelled_features.row(i).to_vec()), &format!("cluster {k}")))
        .collect::<Result<_>>()?;
    let outliers = assignment
        .outlier_indices()
        .into_iter()
        .map(|i| normalized(unlabelled_features.row(i)))
        .collect();
    Ok(HybridPrototypeMemory {
        source,
        clusters,
        outliers,
        temperature,
        momentum,
    })
}

/// `p ← normalize(m·p + (1 − m)·u)` for every touched entry, `u` being the
/// mean of the features that map to it.
pub fn update_memory(
    memory: &mut HybridPrototypeMemory,
    features: &Matrix<f64>,
    ids: &[PrototypeRef],
    momentum: f64,
) -> Result<()> {
    if ids.len() != features.rows {
        return Err(Error::validation("identities do not match features"));
    }
    let mut groups: BTreeMap<PrototypeRef, Vec<usize>> = BTreeMap::new();
    for (i, &r) in ids.iter().enumerate() {
        memory.flat_index(r)?;
        groups.entry(r).or_default().push(i);
    }
    for (r, rows) in groups {
        let mut u = vec![0.0; features.cols];
        for &i in &rows {
            u.iter_mut().zip(features.row(i)).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / rows.len() as f64;
        let p = memory.entry_mut(r)?;
        let mixed: Vec<f64> = p
            .iter()
            .zip(&u)
            .map(|(pv, uv)| momentum * pv + (1.0 - momentum) * uv * inv)
            .collect();
        *p = normalized(&mixed);
    }
    Ok(())
}

/// `−log softmax` of `⟨f, z⁺⟩/τ` among all memory entries.
pub fn unified_contrastive_loss(f: &[f64], memory: &HybridPrototypeMemory, positive: PrototypeRef) -> Result<f64> {
    Ok(unified_contrastive_loss_with_grad(f, memory, positive)?.0)
}

/// Loss and its gradient with respect to `f`: `(Σ_j p_j z_j − z⁺) / τ`.
pub fn unified_contrastive_loss_with_grad(
    f: &[f64],
    memory: &HybridPrototypeMemory,
    positive: PrototypeRef,
) -> Result<(f64, Vec<f64>)> {
    let pos = memory.flat_index(positive)?;
    let logits = memory.logits(f)?;
    let lse = crate::losses::log_sum_exp(&logits);
    let loss = (lse - logits[pos]).max(0.0);
    let mut grad = vec![0.0; f.len()];
    for (j, z) in memory.entries().enumerate() {
        let mut w = (logits[j] - lse).exp();
        if j == pos {
            w -= 1.0;
        }
        grad.iter_mut().zip(z).for_each(|(g, zv)| *g += w * zv / memory.temperature);
    }
    Ok((loss, grad))
}

/// How the DBSCAN radius is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EpsRule {
    /// Use `dbscan.eps` as given.
    Fixed,
    /// Re-derive eps as quantile `q` of the `min_samples`-NN distances.
    Quantile { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClusterBackend {
    Dbscan,
    Kmeans { k: usize, iterations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub rounds: usize,
    /// Parameter updates after each clustering.
    pub inner_iterations: usize,
    pub batch_size: usize,
    /// Share of each batch drawn from the source set.
    pub source_fraction: f64,
    pub backend: ClusterBackend,
    pub dbscan: DbscanConfig,
    pub eps_rule: EpsRule,
    pub temperature: f64,
    pub momentum: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            inner_iterations: 100,
            batch_size: 64,
            source_fraction: 0.5,
            backend: ClusterBackend::Dbscan,
            dbscan: DbscanConfig::default(),
            eps_rule: EpsRule::Quantile { q: 0.02 },
            temperature: 0.05,
            momentum: 0.2,
            optimizer: OptimizerConfig::with_lr(0.01),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iterations == 0 {
            return Err(Error::validation("inner_iterations must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("baseline batch_size must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.source_fraction) {
            return Err(Error::validation("source_fraction must be in [0, 1]"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::validation("temperature must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::validation("memory momentum must be in [0, 1]"));
        }
        if let EpsRule::Quantile { q } = self.eps_rule {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::validation("eps_quantile must be in [0, 1]"));
            }
        }
        self.dbscan.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub eps: f64,
    pub n_clusters: usize,
    pub n_outliers: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Majority-class agreement inside clusters, read from hidden labels.
    pub purity_diagnostic: Option<f64>,
}

fn normalize_rows(m: &Matrix<f64>) -> Matrix<f64> {
    let mut out = m.clone();
    for i in 0..m.rows {
        let n = normalized(m.row(i));
        out.row_mut(i).copy_from_slice(&n);
    }
    out
}

fn features_of(state: &TrainState, images: &[&Raster]) -> Result<Matrix<f64>> {
    Ok(normalize_rows(&state.extractor().extract_rasters(images, 256)?.cast()))
}

/// Cluster `unlabelled` features with the configured backend.
pub fn assign_pseudo_labels(features: &Matrix<f64>, config: &BaselineConfig, seed: u64) -> Result<(ClusterAssignment, f64)> {
    match &config.backend {
        ClusterBackend::Dbscan => {
            let mut db = config.dbscan.clone();
            if let EpsRule::Quantile { q } = config.eps_rule {
                db.eps = auto_eps(features, db.min_samples, db.metric, q)?;
            }
            Ok((dbscan_cluster(features, &db)?, db.eps))
        }
        ClusterBackend::Kmeans { k, iterations } => Ok((kmeans_cluster(features, *k, *iterations, seed)?, f64::NAN)),
    }
}

/// Alternates clustering of target features with `inner_iterations` updates
/// under the unified contrastive loss.
pub fn baseline_train(
    state: &mut TrainState,
    train_set: &DomainDataset,
    unlabelled_set: &UnlabelledDataset,
    config: &BaselineConfig,
    sink: &mut dyn MetricsSink,
) -> Result<Vec<RoundMetrics>> {
    config.validate()?;
    if config.rounds == 0 {
        return Ok(Vec::new());
    }
    if train_set.is_empty() || unlabelled_set.is_empty() {
        return Err(Error::validation("baseline needs labelled and unlabelled images"));
    }
    state.reset_optimizer();
    let train_imgs: Vec<&Raster> = (0..train_set.len()).map(|i| train_set.image(i)).collect();
    let unl_imgs: Vec<&Raster> = unlabelled_set.images().iter().collect();
    let n_src = ((config.batch_size as f64 * config.source_fraction).round() as usize).min(train_imgs.len());
    let n_unl = (config.batch_size - n_src.min(config.batch_size)).min(unl_imgs.len());
    let total_steps = (config.rounds * config.inner_iterations) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ 0x6261_7365_6c69_6e65);
    let mut t = 0u64;
    let mut out = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let src_feat = features_of(state, &train_imgs)?;
        let unl_feat = features_of(state, &unl_imgs)?;
        let (assignment, eps) = assign_pseudo_labels(&unl_feat, config, state.seed ^ round as u64)?;
        if assignment.n_clusters == 1 && assignment.n_outliers == 0 && config.eps_rule == EpsRule::Fixed {
            log::warn!("round {round}: every unlabelled sample fell into one cluster; consider a smaller eps");
        }
        let mut memory = init_memory(
            &src_feat,
            train_set.labels(),
            train_set.n_classes(),
            &unl_feat,
            &assignment,
            config.temperature,
            config.momentum,
        )?;

        let mut loss_sum = 0.0;
        for _ in 0..config.inner_iterations {
            let src_idx = sample(&mut rng, train_imgs.len(), n_src).into_vec();
            let unl_idx = sample(&mut rng, unl_imgs.len(), n_unl).into_vec();
            let mut images: Vec<&Raster> = src_idx.iter().map(|&i| train_imgs[i]).collect();
            images.extend(unl_idx.iter().map(|&i| unl_imgs[i]));
            let mut ids: Vec<PrototypeRef> = src_idx.iter().map(|&i| PrototypeRef::Source(train_set.label(i))).collect();
            ids.extend(unl_idx.iter().map(|&i| PrototypeRef::from(assignment.labels[i])));
            let batch = ImageBatch::<f32>::from_rasters(images.iter().copied())?;

            let mut detached = Matrix::zeros(0, 0);
            let (loss, grads) = loss_and_gradients(&state.model, state.step, |bp| {
                let fwd = bp.forward(&batch)?;
                let raw: Matrix<f64> = fwd.features.cast();
                let unit = normalize_rows(&raw);
                let scale = 1.0 / ids.len() as f64;
                let mut d_raw = Matrix::<f64>::zeros(raw.rows, raw.cols);
                let mut total = 0.0;
                for (i, &r) in ids.iter().enumerate() {
                    let f = unit.row(i);
                    let (l, g) = unified_contrastive_loss_with_grad(f, &memory, r)?;
                    total += l * scale;
                    // through f = x / |x|
                    let norm = crate::tensor::l2_norm(raw.row(i));
                    if norm > 0.0 {
                        let proj = dot(f, &g);
                        for ((d, gv), fv) in d_raw.row_mut(i).iter_mut().zip(&g).zip(f) {
                            *d = scale * (gv - fv * proj) / norm;
                        }
                    }
                }
                bp.backward(&fwd, &d_raw.cast())?;
                detached = unit;
                Ok(total)
            })?;
            let opt = config.optimizer.at_step(t, total_steps);
            apply_update(state, &grads, &opt)?;
            update_memory(&mut memory, &detached, &ids, config.momentum)?;
            loss_sum += loss;
            t += 1;
        }

        let purity = unlabelled_set
            .diagnostics()
            .hidden_class_names()
            .and_then(|names| assignment.purity(names));
        let m = RoundMetrics {
            round,
            eps,
            n_clusters: assignment.n_clusters,
            n_outliers: assignment.n_outliers,
            steps: config.inner_iterations,
            mean_loss: loss_sum / config.inner_iterations as f64,
            purity_diagnostic: purity,
        };
        log::info!(
            "baseline round {round}: {} clusters, {} outliers, loss {:.4}, purity {:?}",
            m.n_clusters,
            m.n_outliers,
            m.mean_loss,
            m.purity_diagnostic
        );
        sink.record("baseline_rounds", to_value(&m))?;
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory(source: Vec<Vec<f64>>, clusters: Vec<Vec<f64>>, outliers: Vec<Vec<f64>>, t: f64) -> HybridPrototypeMemory {
        HybridPrototypeMemory {
            source,
            clusters,
            outliers,
            temperature: t,
            momentum: 0.2,
        }
    }

    #[test]
    fn singleton_positive_has_zero_loss() {
        let m = memory(vec![vec![0.6, 0.8]], vec![], vec![], 0.05);
        assert_eq!(unified_contrastive_loss(&[1.0, 0.0], &m, PrototypeRef::Source(0)).unwrap(), 0.0);
    }

    #[test]
    fn two_entry_values() {
        let m = memory(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], vec![], 1.0);
        let e = std::f64::consts::E;
        let a = unified_contrastive_loss(&[1.0, 0.0], &m, PrototypeRef::Source(0)).unwrap();
        assert!((a - -(e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((a - 0.3133).abs() < 1e-4);
        let b = unified_contrastive_loss(&[1.0, 0.0], &m, PrototypeRef::Cluster(0)).unwrap();
        assert!((b - (1.0 + e).ln()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let m = memory(vec![vec![1.0, 0.0]], vec![], vec![], 1.0);
        assert!(unified_contrastive_loss(&[1.0, 0.0], &m, PrototypeRef::Outlier(0)).is_err());
        let empty = memory(vec![], vec![], vec![], 1.0);
        assert!(unified_contrastive_loss(&[1.0, 0.0], &empty, PrototypeRef::Source(0)).is_err());
    }

    #[test]
    fn memory_update_rule() {
        let mut m = memory(vec![vec![1.0, 0.0]], vec![], vec![], 1.0);
        let u = Matrix::from_rows(&[vec![0.0, 1.0]]);
        update_memory(&mut m, &u, &[PrototypeRef::Source(0)], 1.0).unwrap();
        assert_eq!(m.source[0], vec![1.0, 0.0]);
        update_memory(&mut m, &u, &[PrototypeRef::Source(0)], 0.5).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((m.source[0][0] - h).abs() < 1e-12 && (m.source[0][1] - h).abs() < 1e-12);
        update_memory(&mut m, &Matrix::from_rows(&[vec![0.0, 3.0]]), &[PrototypeRef::Source(0)], 0.0).unwrap();
        assert_eq!(m.source[0], vec![0.0, 1.0]);
        assert!(update_memory(&mut m, &u, &[PrototypeRef::Cluster(0)], 0.5).is_err());
    }

    #[test]
    fn init_memory_centroids() {
        let train = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let unl = Matrix::from_rows(&[vec![3.0, 0.0]]);
        let a = ClusterAssignment::from_raw(&[Some(0)]);
        let m = init_memory(&train, &[0, 0], 1, &unl, &a, 0.05, 0.2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((m.source[0][0] - h).abs() < 1e-12 && (m.source[0][1] - h).abs() < 1e-12);
        assert_eq!(m.clusters[0], vec![1.0, 0.0]);
        assert!(m.outliers.is_empty());
        assert!(init_memory(&train, &[0, 0], 2, &unl, &a, 0.05, 0.2).is_err());
    }
}
