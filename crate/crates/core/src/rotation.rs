//! Phase-1 extractor training: a 4-way rotation pretext on labelled and
//! unlabelled images, trained jointly with supervised classification of the
//! labelled images. Both heads read the same extractor features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    apply_update, loss_and_gradients, save_checkpoint, HeadPurpose, ImageBatch, LinearHead,
    OptimizerConfig, TrainState,
};
use crate::datasets::{DomainDataset, Raster, UnlabelledDataset};
use crate::error::{Error, Result};
use crate::losses::{argmax_rows, softmax_cross_entropy};
use crate::metrics::{to_value, MetricsSink};
use crate::tensor::Matrix;

/// Four rotated copies of every source image. Instance `4·i + k` is source
/// `i` turned by `k·90°` counter-clockwise.
#[derive(Debug, Clone)]
pub struct RotationBatch {
    pub images: Vec<Raster>,
    pub rotation_labels: Vec<usize>,
    pub origin: Vec<usize>,
}

impl RotationBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn expand_with_rotations(images: &[&Raster]) -> Result<RotationBatch> {
    let mut out = RotationBatch {
        images: Vec::with_capacity(4 * images.len()),
        rotation_labels: Vec::with_capacity(4 * images.len()),
        origin: Vec::with_capacity(4 * images.len()),
    };
    for (i, img) in images.iter().enumerate() {
        if img.height() != img.width() {
            return Err(Error::validation(format!(
                "rotation needs square images, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let mut r = (*img).clone();
        for k in 0..4 {
            let next = r.rotate90();
            out.images.push(r);
            out.rotation_labels.push(k);
            out.origin.push(i);
            r = next;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of 4-way rotation logits.
pub fn rotation_loss(logits: &Matrix<f64>, labels: &[usize]) -> Result<f64> {
    Ok(rotation_loss_with_grad(logits, labels)?.0)
}

pub fn rotation_loss_with_grad(logits: &Matrix<f64>, labels: &[usize]) -> Result<(f64, Matrix<f64>)> {
    if logits.cols != 4 {
        return Err(Error::validation(format!(
            "rotation logits need 4 columns, got {}",
            logits.cols
        )));
    }
    softmax_cross_entropy(logits, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Source images per step, before the 4× rotation expansion.
    pub batch_size: usize,
    pub rotation_loss_weight: f64,
    /// Share of each batch drawn from the labelled set; the rest is unlabelled.
    pub labelled_fraction: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            rotation_loss_weight: 1.0,
            labelled_fraction: 0.5,
            optimizer: OptimizerConfig::with_lr(0.05),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_loss_weight >= 0.0 && self.rotation_loss_weight.is_finite()) {
            return Err(Error::validation("rotation_loss_weight must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.labelled_fraction) {
            return Err(Error::validation("labelled_fraction must be in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        self.optimizer.validate()
    }

    /// Labelled and unlabelled images per step. The labelled share is fixed
    /// so runs with and without unlabelled data take the same steps.
    fn split_batch(&self, have_unlabelled: bool) -> (usize, usize) {
        let n_lab = ((self.batch_size as f64 * self.labelled_fraction).round() as usize).max(1);
        let n_unl = if have_unlabelled {
            self.batch_size.saturating_sub(n_lab)
        } else {
            0
        };
        (n_lab, n_unl)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub sup_loss: f64,
    /// `None` when the rotation weight is zero and the term was skipped.
    pub rot_loss: Option<f64>,
    pub total_loss: f64,
    pub sup_correct: usize,
    pub sup_count: usize,
}

/// Adds the supervised and rotation heads if the state does not have them.
pub fn ensure_pretrain_heads(state: &mut TrainState, n_classes: usize) {
    let d = state.extractor().feature_dim();
    let sup_ok = state
        .model
        .head_index(HeadPurpose::SupervisedClasses)
        .map(|i| state.model.heads[i].out_dim() == n_classes)
        .unwrap_or(false);
    if sup_ok && state.model.head_index(HeadPurpose::Rotation4Way).is_some() {
        return;
    }
    state.set_heads(vec![
        LinearHead::new(HeadPurpose::SupervisedClasses, d, n_classes, state.seed ^ 0x5eed_0001),
        LinearHead::new(HeadPurpose::Rotation4Way, d, 4, state.seed ^ 0x5eed_0002),
    ]);
}

/// One update on `sup_CE(labelled) + λ·rot_CE(rotations of labelled ∪ unlabelled)`.
///
/// A single extractor pass over all rotated instances feeds both heads; the
/// supervised head sees the unrotated labelled instances. With `λ = 0` the
/// rotation term is skipped and only the labelled images are processed.
pub fn joint_pretrain_step(
    state: &mut TrainState,
    labelled: &[&Raster],
    labels: &[usize],
    unlabelled: &[&Raster],
    rotation_loss_weight: f64,
    optimizer: &OptimizerConfig,
) -> Result<StepMetrics> {
    if labelled.is_empty() || labelled.len() != labels.len() {
        return Err(Error::validation("labelled batch must be non-empty and labelled"));
    }
    let sup_head = state
        .model
        .head_index(HeadPurpose::SupervisedClasses)
        .ok_or_else(|| Error::validation("state has no supervised head"))?;
    let rot_head = state
        .model
        .head_index(HeadPurpose::Rotation4Way)
        .ok_or_else(|| Error::validation("state has no rotation head"))?;
    let lambda = rotation_loss_weight;
    let use_rotation = lambda > 0.0;

    let (batch, sup_rows, rot_labels) = if use_rotation {
        let all: Vec<&Raster> = labelled.iter().chain(unlabelled).copied().collect();
        let rb = expand_with_rotations(&all)?;
        let sup_rows: Vec<usize> = (0..labelled.len()).map(|i| 4 * i).collect();
        (ImageBatch::<f32>::from_rasters(&rb.images)?, sup_rows, rb.rotation_labels)
    } else {
        (
            ImageBatch::<f32>::from_rasters(labelled.iter().copied())?,
            (0..labelled.len()).collect(),
            Vec::new(),
        )
    };

    let mut sup_loss = 0.0;
    let mut rot_loss = None;
    let mut sup_correct = 0;
    let (total, grads) = loss_and_gradients(&state.model, state.step, |bp| {
        let fwd = bp.forward(&batch)?;
        let sup_feat = fwd.features.select_rows(&sup_rows);
        let logits = bp.head_forward(sup_head, &sup_feat).cast::<f64>();
        let (ls, d_logits) = softmax_cross_entropy(&logits, labels)?;
        sup_loss = ls;
        sup_correct = argmax_rows(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        let d_sup = bp.head_backward(sup_head, &sup_feat, &d_logits.cast());
        let mut d_feat = if use_rotation {
            let rl = bp.head_forward(rot_head, &fwd.features).cast::<f64>();
            let (lr, mut d_rl) = rotation_loss_with_grad(&rl, &rot_labels)?;
            rot_loss = Some(lr);
            d_rl.data.iter_mut().for_each(|g| *g *= lambda);
            bp.head_backward(rot_head, &fwd.features, &d_rl.cast())
        } else {
            Matrix::zeros(fwd.features.rows, fwd.features.cols)
        };
        for (k, &r) in sup_rows.iter().enumerate() {
            for (a, b) in d_feat.row_mut(r).iter_mut().zip(d_sup.row(k)) {
                *a += *b;
            }
        }
        bp.backward(&fwd, &d_feat)?;
        Ok(sup_loss + lambda * rot_loss.unwrap_or(0.0))
    })?;
    let step = state.step;
    apply_update(state, &grads, optimizer)?;
    Ok(StepMetrics {
        step,
        sup_loss,
        rot_loss,
        total_loss: total,
        sup_correct,
        sup_count: labels.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: u64,
    pub mean_sup_loss: f64,
    pub mean_rot_loss: Option<f64>,
    pub mean_total_loss: f64,
    pub train_acc: f64,
}

/// `config.epochs` passes over the labelled set; unlabelled images are drawn
/// from a reshuffled cycle. Writes a checkpoint at the end when asked.
pub fn pretrain(
    state: &mut TrainState,
    train_set: &DomainDataset,
    unlabelled_set: &UnlabelledDataset,
    config: &PretrainConfig,
    sink: &mut dyn MetricsSink,
    checkpoint: Option<&Path>,
) -> Result<Vec<PretrainEpoch>> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    if train_set.is_empty() {
        return Err(Error::validation("empty labelled training set"));
    }
    ensure_pretrain_heads(state, train_set.n_classes());
    state.reset_optimizer();

    let lambda = config.rotation_loss_weight;
    let use_unlabelled = lambda > 0.0 && !unlabelled_set.is_empty();
    let (n_lab, n_unl) = config.split_batch(use_unlabelled);
    let steps_per_epoch = train_set.len().div_ceil(n_lab);
    let total_steps = (steps_per_epoch * config.epochs) as u64;

    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ 0x7072_6574_7261_696e);
    let mut lab_order: Vec<usize> = (0..train_set.len()).collect();
    let mut unl_order: Vec<usize> = (0..unlabelled_set.len()).collect();
    let mut unl_pos = unl_order.len();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut t = 0u64;

    for _ in 0..config.epochs {
        lab_order.shuffle(&mut rng);
        let (mut s_sup, mut s_rot, mut s_tot, mut correct, mut seen, mut n) =
            (0.0, 0.0, 0.0, 0usize, 0usize, 0usize);
        for chunk in lab_order.chunks(n_lab) {
            let imgs: Vec<&Raster> = chunk.iter().map(|&i| train_set.image(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.label(i)).collect();
            let mut unl = Vec::with_capacity(n_unl);
            if use_unlabelled {
                while unl.len() < n_unl {
                    if unl_pos == unl_order.len() {
                        unl_order.shuffle(&mut rng);
                        unl_pos = 0;
                    }
                    unl.push(&unlabelled_set.images()[unl_order[unl_pos]]);
                    unl_pos += 1;
                }
            }
            let opt = config.optimizer.at_step(t, total_steps);
            let m = joint_pretrain_step(state, &imgs, &labels, &unl, lambda, &opt)?;
            sink.record("pretrain_steps", to_value(&m))?;
            s_sup += m.sup_loss;
            s_rot += m.rot_loss.unwrap_or(0.0);
            s_tot += m.total_loss;
            correct += m.sup_correct;
            seen += m.sup_count;
            n += 1;
            t += 1;
        }
        state.epoch += 1;
        let e = PretrainEpoch {
            epoch: state.epoch,
            mean_sup_loss: s_sup / n as f64,
            mean_rot_loss: (lambda > 0.0).then_some(s_rot / n as f64),
            mean_total_loss: s_tot / n as f64,
            train_acc: correct as f64 / seen as f64,
        };
        log::info!(
            "pretrain epoch {}: sup {:.4} rot {:?} acc {:.3}",
            e.epoch,
            e.mean_sup_loss,
            e.mean_rot_loss,
            e.train_acc
        );
        sink.record("pretrain_epochs", to_value(&e))?;
        epochs.push(e);
    }
    if let Some(path) = checkpoint {
        save_checkpoint(state, path)?;
    }
    Ok(epochs)
}

/// Share of rotated instances whose rotation the head predicts correctly.
pub fn rotation_accuracy(state: &TrainState, images: &[&Raster]) -> Result<f64> {
    let head = state
        .model
        .head_index(HeadPurpose::Rotation4Way)
        .ok_or_else(|| Error::validation("state has no rotation head"))?;
    let rb = expand_with_rotations(images)?;
    let refs: Vec<&Raster> = rb.images.iter().collect();
    let f = state.extractor().extract_rasters(&refs, 256)?;
    let logits = state.model.heads[head].forward(&f).cast::<f64>();
    let hits = argmax_rows(&logits)
        .iter()
        .zip(&rb.rotation_labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / rb.len() as f64)
}

/// Supervised-head accuracy on a labelled dataset.
pub fn supervised_accuracy(state: &TrainState, dataset: &DomainDataset) -> Result<f64> {
    let head = state
        .model
        .head_index(HeadPurpose::SupervisedClasses)
        .ok_or_else(|| Error::validation("state has no supervised head"))?;
    let refs: Vec<&Raster> = (0..dataset.len()).map(|i| dataset.image(i)).collect();
    let f = state.extractor().extract_rasters(&refs, 256)?;
    let logits = state.model.heads[head].forward(&f).cast::<f64>();
    let hits = argmax_rows(&logits)
        .iter()
        .zip(dataset.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}
