//! Mean-centroid classifier and phase-2 episodic training.

use serde::{Deserialize, Serialize};

use crate::backbone::{apply_update, loss_and_gradients, ImageBatch, OptimizerConfig, TrainState};
use crate::datasets::{DomainDataset, Raster};
use crate::error::{Error, Result};
use crate::losses::{argmax_rows, softmax_cross_entropy};
use crate::metrics::{to_value, MetricsSink};
use crate::sampler::{EpisodeSampler, EpisodeSpec, EpisodeTask};
use crate::tensor::{dot, l2_norm, Matrix};

/// Query-to-prototype score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeDistance {
    /// `−‖q − c‖²`.
    #[default]
    SquaredEuclidean,
    /// `COSINE_SCALE · cos(q, c)`.
    Cosine,
}

pub const COSINE_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// `n_way × d`; row `k` is the mean of class `k`'s support features.
    pub centroids: Matrix<f64>,
    pub class_map: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePrediction {
    pub logits: Matrix<f64>,
    pub predicted: Vec<usize>,
    /// Mean correctness; `None` when no labels were given.
    pub accuracy: Option<f64>,
}

/// Per-class arithmetic means of `support`. Every class in `0..n_way` must
/// have the same number of rows.
pub fn compute_prototypes(support: &Matrix<f64>, labels: &[usize], class_map: Vec<String>) -> Result<PrototypeSet> {
    let n_way = class_map.len();
    if labels.len() != support.rows {
        return Err(Error::validation("support labels do not match features"));
    }
    let mut counts = vec![0usize; n_way];
    let mut centroids = Matrix::zeros(n_way, support.cols);
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_way {
            return Err(Error::validation(format!("support label {y} outside {n_way}-way episode")));
        }
        counts[y] += 1;
        centroids.row_mut(y).iter_mut().zip(support.row(i)).for_each(|(c, x)| *c += x);
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!("episode class {k} has no support examples")));
    }
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::validation("support classes have unequal shot counts"));
    }
    for (k, &c) in counts.iter().enumerate() {
        centroids.row_mut(k).iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(PrototypeSet { centroids, class_map })
}

pub fn prototype_logits(query: &Matrix<f64>, centroids: &Matrix<f64>, distance: PrototypeDistance) -> Matrix<f64> {
    let mut logits = Matrix::zeros(query.rows, centroids.rows);
    for q in 0..query.rows {
        for k in 0..centroids.rows {
            let (a, b) = (query.row(q), centroids.row(k));
            logits.data[q * centroids.rows + k] = match distance {
                PrototypeDistance::SquaredEuclidean => -crate::tensor::squared_distance(a, b),
                PrototypeDistance::Cosine => {
                    let n = l2_norm(a) * l2_norm(b);
                    if n > 0.0 {
                        COSINE_SCALE * dot(a, b) / n
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    logits
}

/// Nearest-prototype labels; ties go to the lowest episode class index.
pub fn classify_queries(
    query: &Matrix<f64>,
    prototypes: &PrototypeSet,
    distance: PrototypeDistance,
    labels: Option<&[usize]>,
) -> Result<EpisodePrediction> {
    if query.cols != prototypes.centroids.cols {
        return Err(Error::validation(format!(
            "query features have {} dims, prototypes {}",
            query.cols, prototypes.centroids.cols
        )));
    }
    if !query.is_finite() || !prototypes.centroids.is_finite() {
        return Err(Error::numeric(0, "non-finite features in classification"));
    }
    let logits = prototype_logits(query, &prototypes.centroids, distance);
    let predicted = argmax_rows(&logits);
    let accuracy = match labels {
        Some(y) if y.len() != predicted.len() => {
            return Err(Error::validation("query labels do not match queries"));
        }
        Some(y) if y.is_empty() => Some(0.0),
        Some(y) => Some(predicted.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64),
        None => None,
    };
    Ok(EpisodePrediction {
        logits,
        predicted,
        accuracy,
    })
}

/// Mean softmax cross-entropy of prototype logits.
pub fn episodic_loss(logits: &Matrix<f64>, labels: &[usize]) -> Result<f64> {
    Ok(softmax_cross_entropy(logits, labels)?.0)
}

/// Episodic loss with gradients for the support and query features that
/// produced it, prototypes being support means.
#[derive(Debug, Clone)]
pub struct EpisodicGradient {
    pub loss: f64,
    pub accuracy: f64,
    pub d_support: Matrix<f64>,
    pub d_query: Matrix<f64>,
}

pub fn episodic_loss_with_grad(
    support: &Matrix<f64>,
    support_labels: &[usize],
    query: &Matrix<f64>,
    query_labels: &[usize],
    n_way: usize,
    distance: PrototypeDistance,
) -> Result<EpisodicGradient> {
    let protos = compute_prototypes(support, support_labels, vec![String::new(); n_way])?;
    let c = &protos.centroids;
    let pred = classify_queries(query, &protos, distance, Some(query_labels))?;
    let (loss, g) = softmax_cross_entropy(&pred.logits, query_labels)?;
    let d = query.cols;
    let mut d_query = Matrix::zeros(query.rows, d);
    let mut d_cent = Matrix::<f64>::zeros(n_way, d);
    for q in 0..query.rows {
        let x = query.row(q);
        for k in 0..n_way {
            let gk = g.get(q, k);
            if gk == 0.0 {
                continue;
            }
            let ck = c.row(k);
            match distance {
                PrototypeDistance::SquaredEuclidean => {
                    for j in 0..d {
                        let diff = x[j] - ck[j];
                        d_query.data[q * d + j] -= 2.0 * gk * diff;
                        d_cent.data[k * d + j] += 2.0 * gk * diff;
                    }
                }
                PrototypeDistance::Cosine => {
                    let (nx, nc) = (l2_norm(x), l2_norm(ck));
                    if nx == 0.0 || nc == 0.0 {
                        continue;
                    }
                    let cos = dot(x, ck) / (nx * nc);
                    for j in 0..d {
                        let (xh, ch) = (x[j] / nx, ck[j] / nc);
                        d_query.data[q * d + j] += gk * COSINE_SCALE * (ch - xh * cos) / nx;
                        d_cent.data[k * d + j] += gk * COSINE_SCALE * (xh - ch * cos) / nc;
                    }
                }
            }
        }
    }
    let shots = support_labels.iter().filter(|&&y| y == 0).count() as f64;
    let mut d_support = Matrix::zeros(support.rows, d);
    for (i, &y) in support_labels.iter().enumerate() {
        for j in 0..d {
            d_support.data[i * d + j] = d_cent.get(y, j) / shots;
        }
    }
    Ok(EpisodicGradient {
        loss,
        accuracy: pred.accuracy.unwrap_or(0.0),
        d_support,
        d_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodicConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub n_way: usize,
    /// Training episodes cycle through these shot counts.
    pub shots: Vec<usize>,
    pub n_query: usize,
    pub distance: PrototypeDistance,
    /// Leading conv blocks kept fixed during this phase.
    pub frozen_blocks: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for EpisodicConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            episodes_per_epoch: 1000,
            n_way: 5,
            shots: vec![1, 5],
            n_query: 15,
            distance: PrototypeDistance::SquaredEuclidean,
            frozen_blocks: 0,
            optimizer: OptimizerConfig::with_lr(1e-4),
        }
    }
}

impl EpisodicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() {
            return Err(Error::validation("episodic shots list is empty"));
        }
        for &k in &self.shots {
            EpisodeSpec::new(self.n_way, k, self.n_query, 0).validate()?;
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodicEpoch {
    pub epoch: u64,
    pub mean_episodic_loss: f64,
    pub train_episode_acc: f64,
}

fn task_images<'a>(dataset: &'a DomainDataset, task: &EpisodeTask) -> Vec<&'a Raster> {
    task.support
        .iter()
        .chain(&task.query)
        .map(|it| dataset.image(it.example))
        .collect()
}

/// One parameter update on a single episode.
pub fn episodic_step(
    state: &mut TrainState,
    dataset: &DomainDataset,
    task: &EpisodeTask,
    distance: PrototypeDistance,
    frozen_blocks: usize,
    optimizer: &OptimizerConfig,
) -> Result<(f64, f64)> {
    let batch = ImageBatch::<f32>::from_rasters(task_images(dataset, task))?;
    let ns = task.support.len();
    let (s_lab, q_lab) = (task.support_labels(), task.query_labels());
    let mut acc = 0.0;
    let (loss, mut grads) = loss_and_gradients(&state.model, state.step, |bp| {
        let fwd = bp.forward(&batch)?;
        let all: Matrix<f64> = fwd.features.cast();
        let support = all.select_rows(&(0..ns).collect::<Vec<_>>());
        let query = all.select_rows(&(ns..all.rows).collect::<Vec<_>>());
        let eg = episodic_loss_with_grad(&support, &s_lab, &query, &q_lab, task.n_way(), distance)?;
        acc = eg.accuracy;
        let mut d = eg.d_support.data;
        d.extend(eg.d_query.data);
        bp.backward(&fwd, &Matrix::from_vec(all.rows, all.cols, d).cast())?;
        Ok(eg.loss)
    })?;
    let frozen = 2 * frozen_blocks.min(state.extractor().params().len() / 2);
    if frozen == 0 {
        apply_update(state, &grads, optimizer)?;
    } else {
        grads[..frozen].iter_mut().for_each(|g| g.data.fill(0.0));
        let keep_p: Vec<_> = state.model.extractor.params()[..frozen].to_vec();
        let keep_v: Vec<_> = state.velocity[..frozen].to_vec();
        apply_update(state, &grads, optimizer)?;
        state.model.extractor.params_mut()[..frozen].clone_from_slice(&keep_p);
        state.velocity[..frozen].clone_from_slice(&keep_v);
    }
    Ok((loss, acc))
}

/// `epochs × episodes_per_epoch` single-episode updates on `train_set`,
/// cycling through `config.shots`.
pub fn episodic_train(
    state: &mut TrainState,
    train_set: &DomainDataset,
    config: &EpisodicConfig,
    sink: &mut dyn MetricsSink,
) -> Result<Vec<EpisodicEpoch>> {
    config.validate()?;
    if config.epochs == 0 || config.episodes_per_epoch == 0 {
        return Ok(Vec::new());
    }
    let seed = state.seed ^ 0x6570_6973_6f64_6963;
    let samplers = config
        .shots
        .iter()
        .map(|&k| EpisodeSampler::new(train_set, EpisodeSpec::new(config.n_way, k, config.n_query, seed)))
        .collect::<Result<Vec<_>>>()?;
    state.reset_optimizer();
    let total = (config.epochs * config.episodes_per_epoch) as u64;
    let mut t = 0u64;
    let mut out = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut ls, mut acc) = (0.0, 0.0);
        for _ in 0..config.episodes_per_epoch {
            let sampler = &samplers[(t as usize) % samplers.len()];
            let task = sampler.episode(seed, t);
            let opt = config.optimizer.at_step(t, total);
            let (l, a) = episodic_step(state, train_set, &task, config.distance, config.frozen_blocks, &opt)?;
            ls += l;
            acc += a;
            t += 1;
        }
        state.epoch += 1;
        let e = EpisodicEpoch {
            epoch: state.epoch,
            mean_episodic_loss: ls / config.episodes_per_epoch as f64,
            train_episode_acc: acc / config.episodes_per_epoch as f64,
        };
        log::info!(
            "episodic epoch {}: loss {:.4} acc {:.3}",
            e.epoch,
            e.mean_episodic_loss,
            e.train_episode_acc
        );
        sink.record("episodic_epochs", to_value(&e))?;
        out.push(e);
    }
    Ok(out)
}
