//! Feature extractor, linear heads, gradients and the parameter-update rule
//! shared by every training stage.
//!
//! Gradients are hand-derived. The network code is generic over [`Scalar`] so
//! the same forward/backward runs in `f32` for training and in `f64` for
//! finite-difference checks.

mod checkpoint;
mod layers;
mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::Raster;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix, Scalar, Tensor};
use layers::{conv_block_backward, conv_block_forward, ConvCache, Dims};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{apply_update, LrSchedule, OptimizerConfig};

/// Backbone architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    /// Stacked conv3×3 → ReLU → 2×2 max-pool blocks followed by global
    /// average pooling; `feature_dim` is the last block's width.
    ConvSmall { channels: Vec<usize> },
    /// Fixed linear map from the flattened raster to `feature_dim` values.
    RandomProjection { feature_dim: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::ConvSmall {
            channels: vec![16, 32, 32, 64],
        }
    }
}

impl Architecture {
    pub fn id(&self) -> &'static str {
        match self {
            Architecture::ConvSmall { .. } => "conv-small",
            Architecture::RandomProjection { .. } => "random-projection",
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Architecture::ConvSmall { channels } => channels.last().copied().unwrap_or(0),
            Architecture::RandomProjection { feature_dim } => *feature_dim,
        }
    }

    fn validate(&self, input: InputShape) -> Result<()> {
        match self {
            Architecture::ConvSmall { channels } => {
                if channels.is_empty() || channels.contains(&0) {
                    return Err(Error::validation("conv-small needs non-zero channel widths"));
                }
                let shrink = 1usize << channels.len();
                if input.height < shrink || input.width < shrink {
                    return Err(Error::validation(format!(
                        "{} pooling stages need at least {shrink}x{shrink} inputs",
                        channels.len()
                    )));
                }
            }
            Architecture::RandomProjection { feature_dim } => {
                if *feature_dim == 0 {
                    return Err(Error::validation("feature_dim must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Images laid out channel-major (`C×N×H×W`), the network's internal layout.
#[derive(Debug, Clone)]
pub struct ImageBatch<T> {
    pub n: usize,
    pub shape: InputShape,
    data: Vec<T>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn from_rasters<'a, I>(rasters: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Raster>,
    {
        let rasters: Vec<&Raster> = rasters.into_iter().collect();
        let Some(first) = rasters.first() else {
            return Err(Error::validation("empty image batch"));
        };
        let (h, w, c) = first.shape();
        let n = rasters.len();
        let plane = h * w;
        let mut data = vec![T::zero(); c * n * plane];
        for (i, r) in rasters.iter().enumerate() {
            if r.shape() != (h, w, c) {
                return Err(Error::validation(format!(
                    "mixed raster shapes in batch: {:?} vs {:?}",
                    r.shape(),
                    (h, w, c)
                )));
            }
            for (p, px) in r.data().chunks(c).enumerate() {
                for (ch, v) in px.iter().enumerate() {
                    data[(ch * n + i) * plane + p] = T::of(*v as f64);
                }
            }
        }
        Ok(Self {
            n,
            shape: InputShape {
                height: h,
                width: w,
                channels: c,
            },
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn dims(&self) -> Dims {
        Dims {
            c: self.shape.channels,
            n: self.n,
            h: self.shape.height,
            w: self.shape.width,
        }
    }

    /// Per-image CHW vectors as an `N×(C·H·W)` matrix.
    fn flat_rows(&self) -> Matrix<T> {
        let d = self.dims();
        let per = d.c * d.plane();
        let mut m = Matrix::zeros(d.n, per);
        for ch in 0..d.c {
            for i in 0..d.n {
                let src = &self.data[(ch * d.n + i) * d.plane()..(ch * d.n + i + 1) * d.plane()];
                m.row_mut(i)[ch * d.plane()..(ch + 1) * d.plane()].copy_from_slice(src);
            }
        }
        m
    }
}

/// The differentiable map from rasters to `feature_dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    architecture: Architecture,
    input: InputShape,
    params: Vec<Tensor<T>>,
}

/// Activations kept by [`FeatureExtractor::forward`] for the backward pass.
pub struct ForwardCache<T> {
    blocks: Vec<ConvCache<T>>,
    last: Dims,
    flat_input: Option<Matrix<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    /// He-initialised weights (Gaussian projection for `random-projection`),
    /// zero biases.
    pub fn new(architecture: Architecture, input: InputShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ex = Self::zeros(architecture, input)?;
        for p in ex.params.iter_mut().filter(|p| p.name.ends_with("weight")) {
            let fan_in: usize = p.shape[1..].iter().product();
            let std = match ex.architecture {
                Architecture::ConvSmall { .. } => (2.0 / fan_in as f64).sqrt(),
                Architecture::RandomProjection { .. } => (1.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in p.data.iter_mut() {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        Ok(ex)
    }

    /// All parameters zero.
    pub fn zeros(architecture: Architecture, input: InputShape) -> Result<Self> {
        architecture.validate(input)?;
        if input.channels != 1 && input.channels != 3 {
            return Err(Error::validation("input must have 1 or 3 channels"));
        }
        let params = match &architecture {
            Architecture::ConvSmall { channels } => {
                let mut c_in = input.channels;
                let mut params = Vec::new();
                for (i, &c_out) in channels.iter().enumerate() {
                    params.push(Tensor::zeros(format!("block{i}.conv.weight"), &[c_out, c_in, 3, 3]));
                    params.push(Tensor::zeros(format!("block{i}.conv.bias"), &[c_out]));
                    c_in = c_out;
                }
                params
            }
            Architecture::RandomProjection { feature_dim } => vec![Tensor::zeros(
                "projection.weight",
                &[*feature_dim, input.channels * input.height * input.width],
            )],
        };
        Ok(Self {
            architecture,
            input,
            params,
        })
    }

    pub fn from_parts(
        architecture: Architecture,
        input: InputShape,
        params: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let template = Self::zeros(architecture, input)?;
        if template.params.len() != params.len()
            || template
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::validation("parameter layout does not match architecture"));
        }
        Ok(Self { params, ..template })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn architecture_id(&self) -> &'static str {
        self.architecture.id()
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture.feature_dim()
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            architecture: self.architecture.clone(),
            input: self.input,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_input(&self, batch: &ImageBatch<T>) -> Result<()> {
        if batch.shape != self.input {
            return Err(Error::validation(format!(
                "batch shape {:?} does not match extractor input {:?}",
                batch.shape, self.input
            )));
        }
        Ok(())
    }

    /// Inference-mode features, `N×feature_dim`.
    pub fn extract(&self, batch: &ImageBatch<T>) -> Result<Matrix<T>> {
        self.check_input(batch)?;
        Ok(self.run(batch, false).0)
    }

    /// Features in chunks of `chunk` images, for large sets.
    pub fn extract_rasters(&self, rasters: &[&Raster], chunk: usize) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(0, self.feature_dim());
        for part in rasters.chunks(chunk.max(1)) {
            let f = self.extract(&ImageBatch::from_rasters(part.iter().copied())?)?;
            out.data.extend_from_slice(&f.data);
            out.rows += f.rows;
        }
        Ok(out)
    }

    /// Features plus the cache needed by [`backward`](Self::backward).
    pub fn forward(&self, batch: &ImageBatch<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(batch)?;
        let (f, cache) = self.run(batch, true);
        Ok((f, cache.expect("cache requested")))
    }

    fn run(&self, batch: &ImageBatch<T>, keep: bool) -> (Matrix<T>, Option<ForwardCache<T>>) {
        match &self.architecture {
            Architecture::RandomProjection { feature_dim } => {
                let x = batch.flat_rows();
                let mut f = Matrix::zeros(batch.n, *feature_dim);
                gemm(
                    false,
                    true,
                    batch.n,
                    *feature_dim,
                    x.cols,
                    T::one(),
                    &x.data,
                    &self.params[0].data,
                    T::zero(),
                    &mut f.data,
                );
                let cache = keep.then(|| ForwardCache {
                    blocks: Vec::new(),
                    last: batch.dims(),
                    flat_input: Some(x),
                });
                (f, cache)
            }
            Architecture::ConvSmall { channels } => {
                let mut x = batch.data.clone();
                let mut d = batch.dims();
                standardize_planes(&mut x, d.plane());
                let mut blocks = Vec::with_capacity(channels.len());
                for (i, &c_out) in channels.iter().enumerate() {
                    let (y, nd, cache) = conv_block_forward(
                        &x,
                        d,
                        &self.params[2 * i].data,
                        &self.params[2 * i + 1].data,
                        c_out,
                        keep,
                    );
                    if let Some(c) = cache {
                        blocks.push(c);
                    }
                    x = y;
                    d = nd;
                }
                // global average pool
                let plane = d.plane();
                let inv = T::one() / T::of(plane as f64);
                let mut f = Matrix::zeros(d.n, d.c);
                for c in 0..d.c {
                    for n in 0..d.n {
                        let s: T = x[(c * d.n + n) * plane..(c * d.n + n + 1) * plane]
                            .iter()
                            .copied()
                            .sum();
                        f.data[n * d.c + c] = s * inv;
                    }
                }
                let cache = keep.then(|| ForwardCache {
                    blocks,
                    last: d,
                    flat_input: None,
                });
                (f, cache)
            }
        }
    }

    /// Parameter gradients (aligned with [`params`](Self::params)) given the
    /// loss gradient with respect to the features.
    pub fn backward(&self, cache: &ForwardCache<T>, d_features: &Matrix<T>) -> Vec<Tensor<T>> {
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(Tensor::zeros_like).collect();
        self.backward_into(cache, d_features, &mut grads);
        grads
    }

    fn backward_into(&self, cache: &ForwardCache<T>, d_features: &Matrix<T>, grads: &mut [Tensor<T>]) {
        match &self.architecture {
            Architecture::RandomProjection { feature_dim } => {
                let x = cache.flat_input.as_ref().expect("projection cache");
                gemm(
                    true,
                    false,
                    *feature_dim,
                    x.cols,
                    x.rows,
                    T::one(),
                    &d_features.data,
                    &x.data,
                    T::one(),
                    &mut grads[0].data,
                );
            }
            Architecture::ConvSmall { channels } => {
                let d = cache.last;
                let plane = d.plane();
                let inv = T::one() / T::of(plane as f64);
                let mut d_out = vec![T::zero(); d.len()];
                for c in 0..d.c {
                    for n in 0..d.n {
                        let g = d_features.data[n * d.c + c] * inv;
                        d_out[(c * d.n + n) * plane..(c * d.n + n + 1) * plane].fill(g);
                    }
                }
                for i in (0..channels.len()).rev() {
                    let (head, tail) = grads.split_at_mut(2 * i + 1);
                    let d_in = conv_block_backward(
                        &cache.blocks[i],
                        &d_out,
                        &self.params[2 * i].data,
                        channels[i],
                        &mut head[2 * i].data,
                        &mut tail[0].data,
                        i > 0,
                    );
                    match d_in {
                        Some(g) => d_out = g,
                        None => break,
                    }
                }
            }
        }
    }
}

/// Zero mean, unit variance per image channel. Constant planes become zero.
fn standardize_planes<T: Scalar>(x: &mut [T], plane: usize) {
    let eps = T::of(1e-4);
    let inv_n = T::one() / T::of(plane as f64);
    for p in x.chunks_mut(plane) {
        let mean = p.iter().copied().sum::<T>() * inv_n;
        let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let scale = T::one() / (var + eps).sqrt();
        p.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPurpose {
    SupervisedClasses,
    Rotation4Way,
}

/// `logits = features · weight + bias`, weight `d×m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T> {
    pub purpose: HeadPurpose,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn new(purpose: HeadPurpose, d: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("finite std");
        let tag = match purpose {
            HeadPurpose::SupervisedClasses => "supervised",
            HeadPurpose::Rotation4Way => "rotation",
        };
        let mut weight = Tensor::zeros(format!("head.{tag}.weight"), &[d, m]);
        for v in weight.data.iter_mut() {
            *v = T::of(normal.sample(&mut rng));
        }
        Self {
            purpose,
            weight,
            bias: Tensor::zeros(format!("head.{tag}.bias"), &[m]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, features: &Matrix<T>) -> Matrix<T> {
        let m = self.out_dim();
        let mut out = Matrix::zeros(features.rows, m);
        for r in 0..features.rows {
            out.row_mut(r).copy_from_slice(&self.bias.data);
        }
        gemm(
            false,
            false,
            features.rows,
            m,
            self.in_dim(),
            T::one(),
            &features.data,
            &self.weight.data,
            T::one(),
            &mut out.data,
        );
        out
    }

    /// Accumulates `d_weight`, `d_bias` and returns the feature gradient.
    pub fn backward(
        &self,
        features: &Matrix<T>,
        d_logits: &Matrix<T>,
        d_weight: &mut [T],
        d_bias: &mut [T],
    ) -> Matrix<T> {
        let (d, m) = (self.in_dim(), self.out_dim());
        gemm(true, false, d, m, features.rows, T::one(), &features.data, &d_logits.data, T::one(), d_weight);
        for r in 0..d_logits.rows {
            for (b, g) in d_bias.iter_mut().zip(d_logits.row(r)) {
                *b += *g;
            }
        }
        let mut d_feat = Matrix::zeros(features.rows, d);
        gemm(false, true, features.rows, d, m, T::one(), &d_logits.data, &self.weight.data, T::zero(), &mut d_feat.data);
        d_feat
    }

    pub fn cast<U: Scalar>(&self) -> LinearHead<U> {
        LinearHead {
            purpose: self.purpose,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Extractor plus output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub extractor: FeatureExtractor<T>,
    pub heads: Vec<LinearHead<T>>,
}

impl<T: Scalar> Model<T> {
    /// All parameters: extractor first, then each head's weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut p: Vec<&Tensor<T>> = self.extractor.params.iter().collect();
        for h in &self.heads {
            p.push(&h.weight);
            p.push(&h.bias);
        }
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p: Vec<&mut Tensor<T>> = self.extractor.params.iter_mut().collect();
        for h in &mut self.heads {
            p.push(&mut h.weight);
            p.push(&mut h.bias);
        }
        p
    }

    pub fn zero_gradients(&self) -> Vec<Tensor<T>> {
        self.parameters().into_iter().map(Tensor::zeros_like).collect()
    }

    pub fn head_index(&self, purpose: HeadPurpose) -> Option<usize> {
        self.heads.iter().position(|h| h.purpose == purpose)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            extractor: self.extractor.cast(),
            heads: self.heads.iter().map(LinearHead::cast).collect(),
        }
    }
}

/// Gradient accumulator handed to loss closures by [`loss_and_gradients`].
pub struct Backprop<'m, T> {
    model: &'m Model<T>,
    grads: Vec<Tensor<T>>,
    forward_passes: usize,
    step: u64,
}

/// Features from one extractor pass, kept for the matching backward call.
pub struct Forward<T> {
    pub features: Matrix<T>,
    cache: ForwardCache<T>,
}

impl<'m, T: Scalar> Backprop<'m, T> {
    pub fn model(&self) -> &'m Model<T> {
        self.model
    }

    /// Number of extractor forward passes so far.
    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }

    /// Extractor pass; non-finite features are a numeric error at the
    /// current step.
    pub fn forward(&mut self, batch: &ImageBatch<T>) -> Result<Forward<T>> {
        let (features, cache) = self.model.extractor.forward(batch)?;
        self.forward_passes += 1;
        if !features.is_finite() {
            return Err(Error::numeric(self.step, "non-finite features"));
        }
        Ok(Forward { features, cache })
    }

    /// Backpropagates `d_features` through the pass that produced `fwd`.
    pub fn backward(&mut self, fwd: &Forward<T>, d_features: &Matrix<T>) -> Result<()> {
        if d_features.rows != fwd.features.rows || d_features.cols != fwd.features.cols {
            return Err(Error::validation("feature gradient shape mismatch"));
        }
        let n = self.model.extractor.params.len();
        self.model
            .extractor
            .backward_into(&fwd.cache, d_features, &mut self.grads[..n]);
        Ok(())
    }

    pub fn head_forward(&self, head: usize, features: &Matrix<T>) -> Matrix<T> {
        self.model.heads[head].forward(features)
    }

    /// Accumulates head gradients and returns the feature gradient.
    pub fn head_backward(&mut self, head: usize, features: &Matrix<T>, d_logits: &Matrix<T>) -> Matrix<T> {
        let base = self.model.extractor.params.len() + 2 * head;
        let (w, b) = self.grads[base..base + 2].split_at_mut(1);
        self.model.heads[head].backward(features, d_logits, &mut w[0].data, &mut b[0].data)
    }

    /// Direct access to the gradient of parameter `index` (see [`Model::parameters`]).
    pub fn grad_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.grads[index]
    }
}

/// Runs `loss_fn` against `model` and returns the loss with gradients
/// aligned to [`Model::parameters`].
pub fn loss_and_gradients<T, F>(model: &Model<T>, step: u64, loss_fn: F) -> Result<(f64, Vec<Tensor<T>>)>
where
    T: Scalar,
    F: FnOnce(&mut Backprop<'_, T>) -> Result<f64>,
{
    let mut bp = Backprop {
        model,
        grads: model.zero_gradients(),
        forward_passes: 0,
        step,
    };
    let loss = loss_fn(&mut bp)?;
    if !loss.is_finite() {
        return Err(Error::numeric(step, format!("loss is {loss}")));
    }
    if let Some(g) = bp.grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::numeric(step, format!("non-finite gradient for {}", g.name)));
    }
    Ok((loss, bp.grads))
}

/// Parameters, optimiser state and counters of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    /// Momentum buffers aligned with [`Model::parameters`].
    pub velocity: Vec<Tensor<f32>>,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(extractor: FeatureExtractor<f32>, seed: u64) -> Self {
        let model = Model {
            extractor,
            heads: Vec::new(),
        };
        let velocity = model.zero_gradients();
        Self {
            model,
            velocity,
            step: 0,
            epoch: 0,
            seed,
        }
    }

    /// Fresh extractor initialised from `seed`.
    pub fn init(architecture: Architecture, input: InputShape, seed: u64) -> Result<Self> {
        Ok(Self::new(FeatureExtractor::new(architecture, input, seed)?, seed))
    }

    pub fn extractor(&self) -> &FeatureExtractor<f32> {
        &self.model.extractor
    }

    /// Replaces the heads and clears momentum.
    pub fn set_heads(&mut self, heads: Vec<LinearHead<f32>>) {
        self.model.heads = heads;
        self.reset_optimizer();
    }

    pub fn reset_optimizer(&mut self) {
        self.velocity = self.model.zero_gradients();
    }

    pub fn is_finite(&self) -> bool {
        self.model.parameters().iter().all(|p| p.is_finite())
    }
}
