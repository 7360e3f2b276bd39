//! Skippability classifier on latents: four 3×3×3 convolutions, the first
//! with spatial stride 2 so each logit lands on one 1×2×2 latent cell.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, LatentTensor};
use crate::error::{invalid, shape_err, Result};
use crate::oracle::{oracle_mask, SkipMask};
use crate::resample::down_up;
use crate::vidio::{VideoTensor, PATCH_SHAPE};
use crate::weights::WeightsFile;

pub const ARCHITECTURE: &str = "skipsr-predictor";
pub const DEFAULT_HIDDEN: usize = 64;
const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Label rule the weights were trained against.
    pub tau: f64,
    pub factor: usize,
    /// Coefficients per channel of the latents the net consumes.
    pub keep: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial stride; temporal stride is always 1.
    pub stride: usize,
    /// `(27·in, out)`; row index is `((kt·3 + ky)·3 + kx)·in + c`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv3d {
    fn zeros(cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            in_channels: cin,
            out_channels: cout,
            stride,
            weight: Array2::zeros((TAPS * cin, cout)),
            bias: Array1::zeros(cout),
        }
    }
}

/// Activations with one row per voxel (row-major `t,h,w`) and one column per
/// channel.
#[derive(Clone, Debug)]
struct Volume {
    dims: [usize; 3],
    data: Array2<f64>,
}

fn tap_source(o: usize, k: usize, stride: usize, n: usize) -> Option<usize> {
    (o * stride + k).checked_sub(1).filter(|&i| i < n)
}

fn im2col(x: &Volume, stride: usize) -> ([usize; 3], Array2<f64>) {
    let [t, h, w] = x.dims;
    let c = x.data.ncols();
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let src = x.data.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((t * oh * ow, TAPS * c));
    cols.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(TAPS * c)
        .enumerate()
        .for_each(|(row, out)| {
            let (ot, oy, ox) = (row / (oh * ow), row / ow % oh, row % ow);
            for kt in 0..KERNEL {
                let Some(it) = tap_source(ot, kt, 1, t) else { continue };
                for ky in 0..KERNEL {
                    let Some(iy) = tap_source(oy, ky, stride, h) else { continue };
                    for kx in 0..KERNEL {
                        let Some(ix) = tap_source(ox, kx, stride, w) else { continue };
                        let k = (kt * KERNEL + ky) * KERNEL + kx;
                        let p = (it * h + iy) * w + ix;
                        out[k * c..(k + 1) * c].copy_from_slice(&src[p * c..(p + 1) * c]);
                    }
                }
            }
        });
    ([t, oh, ow], cols)
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, in_dims: [usize; 3], c: usize, stride: usize) -> Array2<f64> {
    let [t, h, w] = in_dims;
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut dx = Array2::zeros((t * h * w, c));
    let dst = dx.as_slice_mut().expect("standard layout");
    let cols = cols.as_standard_layout();
    for (row, src) in cols.axis_iter(Axis(0)).enumerate() {
        let src = src.to_slice().expect("standard layout");
        let (ot, oy, ox) = (row / (oh * ow), row / ow % oh, row % ow);
        for kt in 0..KERNEL {
            let Some(it) = tap_source(ot, kt, 1, t) else { continue };
            for ky in 0..KERNEL {
                let Some(iy) = tap_source(oy, ky, stride, h) else { continue };
                for kx in 0..KERNEL {
                    let Some(ix) = tap_source(ox, kx, stride, w) else { continue };
                    let k = (kt * KERNEL + ky) * KERNEL + kx;
                    let p = (it * h + iy) * w + ix;
                    for (d, s) in dst[p * c..(p + 1) * c].iter_mut().zip(&src[k * c..(k + 1) * c]) {
                        *d += s;
                    }
                }
            }
        }
    }
    dx
}

/// Channels-last input volume; latents convert into it losslessly.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f64>,
}

impl From<&LatentTensor> for Features {
    fn from(l: &LatentTensor) -> Self {
        Self {
            dims: l.dims(),
            channels: l.channels(),
            data: l.coeffs().iter().map(|&x| x as f64).collect(),
        }
    }
}

/// One logit per latent cell pair, row-major over `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// `(d weight, d bias)` per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    fn zeros_like(net: &PredictorNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.out_channels)))
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(s, ow);
            b.scaled_add(s, ob);
        }
    }

    /// Every gradient value, in the same order as [`PredictorNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

struct LayerCache {
    in_dims: [usize; 3],
    cols: Array2<f64>,
    pre: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorNet {
    pub config: PredictorConfig,
    pub layers: Vec<Conv3d>,
    /// Fixed per-channel standardization applied before the first layer.
    pub input_norm: InputNorm,
}

/// `x ↦ (x − shift)·scale` per channel. Not trained by gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            shift: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Per-channel mean and inverse standard deviation over every voxel.
    pub fn fit(data: &[Features]) -> Result<Self> {
        let c = data.first().ok_or_else(|| invalid!("cannot fit normalization on no data"))?.channels;
        let (mut sum, mut sq, mut n) = (vec![0.0; c], vec![0.0; c], 0usize);
        for x in data {
            if x.channels != c {
                return Err(shape_err!("mixed channel counts {c} and {}", x.channels));
            }
            for voxel in x.data.chunks_exact(c) {
                for (k, &v) in voxel.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            n += x.data.len() / c;
        }
        let n = n.max(1) as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| 1.0 / (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { shift, scale })
    }
}

impl PredictorNet {
    /// He-uniform weights, zero biases.
    pub fn new(config: PredictorConfig) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
        for l in &mut net.layers {
            let bound = (6.0 / (TAPS * l.in_channels) as f64).sqrt();
            l.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(config: PredictorConfig) -> Result<Self> {
        if config.in_channels == 0 || config.hidden == 0 {
            return Err(invalid!("predictor needs positive channel counts"));
        }
        let (c, h) = (config.in_channels, config.hidden);
        let layers = vec![
            Conv3d::zeros(c, h, 2),
            Conv3d::zeros(h, h, 1),
            Conv3d::zeros(h, h, 1),
            Conv3d::zeros(h, 1, 1),
        ];
        let input_norm = InputNorm::identity(c);
        Ok(Self {
            config,
            layers,
            input_norm,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape_err!(
                "predictor has {} parameters, got {}",
                self.param_count(),
                values.len()
            ));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    fn input_volume(&self, x: &Features) -> Result<Volume> {
        if x.channels != self.config.in_channels {
            return Err(shape_err!(
                "input has {} channels, predictor expects {}",
                x.channels,
                self.config.in_channels
            ));
        }
        let [t, h, w] = x.dims;
        let (shift, scale) = (&self.input_norm.shift, &self.input_norm.scale);
        let normalized = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - shift[i % x.channels]) * scale[i % x.channels])
            .collect();
        let data = Array2::from_shape_vec((t * h * w, x.channels), normalized)
            .map_err(|_| shape_err!("feature data does not match {:?}×{}", x.dims, x.channels))?;
        Ok(Volume { dims: x.dims, data })
    }

    fn forward_volume(&self, mut x: Volume) -> (Logits, Vec<LayerCache>) {
        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (dims, cols) = im2col(&x, layer.stride);
            let mut pre = cols.dot(&layer.weight);
            pre += &layer.bias;
            let act = if i == last { pre.clone() } else { pre.mapv(|z| z.max(0.0)) };
            caches.push(LayerCache {
                in_dims: x.dims,
                cols,
                pre,
            });
            x = Volume { dims, data: act };
        }
        let logits = Logits {
            dims: x.dims,
            values: x.data.into_raw_vec_and_offset().0,
        };
        (logits, caches)
    }

    pub fn forward(&self, x: &Features) -> Result<Logits> {
        Ok(self.forward_volume(self.input_volume(x)?).0)
    }

    /// Mean weighted BCE-with-logits against `target` and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x: &Features,
        target: &SkipMask,
        pos_weight: f64,
    ) -> Result<(f64, Gradients)> {
        let (logits, caches) = self.forward_volume(self.input_volume(x)?);
        if target.grid_dims != logits.dims {
            return Err(shape_err!(
                "label grid {:?} does not match logits {:?}",
                target.grid_dims,
                logits.dims
            ));
        }
        let labels: Vec<f64> = target.bits.iter().map(|&b| b as u8 as f64).collect();
        let (loss, dlogits) = bce_with_logits(&logits.values, &labels, pos_weight);
        let mut grads = Gradients::zeros_like(self);
        let mut delta = Array2::from_shape_vec((dlogits.len(), 1), dlogits).expect("one column");
        for i in (0..self.layers.len()).rev() {
            let (layer, cache) = (&self.layers[i], &caches[i]);
            grads.layers[i].0 = cache.cols.t().dot(&delta);
            grads.layers[i].1 = delta.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let dcols = delta.dot(&layer.weight.t());
            let mut dx = col2im(&dcols, cache.in_dims, layer.in_channels, layer.stride);
            dx.zip_mut_with(&caches[i - 1].pre, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            delta = dx;
        }
        Ok((loss, grads))
    }

    /// `sigmoid(logit) >= threshold` marks a patch as skippable.
    pub fn predict_mask(&self, l: &LatentTensor, threshold: f64) -> Result<SkipMask> {
        self.predict_features(&l.into(), threshold)
    }

    pub fn predict_features(&self, x: &Features, threshold: f64) -> Result<SkipMask> {
        let logits = self.forward(x)?;
        let bits = logits.values.iter().map(|&z| sigmoid(z) >= threshold).collect();
        SkipMask::new(logits.dims, bits, self.config.tau, self.config.factor as u32)
    }

    pub fn to_weights(&self) -> Result<WeightsFile> {
        let mut w = WeightsFile::new(ARCHITECTURE, serde_json::to_value(&self.config)?);
        for (i, l) in self.layers.iter().enumerate() {
            w.push(
                &format!("conv{i}.weight"),
                &[KERNEL, KERNEL, KERNEL, l.in_channels, l.out_channels],
                l.weight.iter().map(|&x| x as f32),
            );
            w.push(&format!("conv{i}.bias"), &[l.out_channels], l.bias.iter().map(|&x| x as f32));
        }
        let c = self.config.in_channels;
        w.push("input.shift", &[c], self.input_norm.shift.iter().map(|&x| x as f32));
        w.push("input.scale", &[c], self.input_norm.scale.iter().map(|&x| x as f32));
        Ok(w)
    }

    pub fn from_weights(w: &WeightsFile) -> Result<Self> {
        w.expect_architecture(ARCHITECTURE)?;
        let config: PredictorConfig = serde_json::from_value(w.manifest.config.clone())?;
        let mut net = Self::zeros(config)?;
        for (i, l) in net.layers.iter_mut().enumerate() {
            let shape = [KERNEL, KERNEL, KERNEL, l.in_channels, l.out_channels];
            let weight = w.tensor(&format!("conv{i}.weight"), &shape)?;
            l.weight.iter_mut().zip(weight).for_each(|(d, &s)| *d = s as f64);
            let bias = w.tensor(&format!("conv{i}.bias"), &[l.out_channels])?;
            l.bias.iter_mut().zip(bias).for_each(|(d, &s)| *d = s as f64);
        }
        let c = net.config.in_channels;
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect();
        net.input_norm = InputNorm {
            shift: widen(w.tensor("input.shift", &[c])?),
            scale: widen(w.tensor("input.scale", &[c])?),
        };
        Ok(net)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean of `pw·y·softplus(−z) + (1−y)·softplus(z)` and its gradient.
pub fn bce_with_logits(z: &[f64], y: &[f64], pos_weight: f64) -> (f64, Vec<f64>) {
    let n = z.len().max(1) as f64;
    let loss = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))
        .sum::<f64>()
        / n;
    let grad = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            let s = sigmoid(z);
            (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n
        })
        .collect();
    (loss, grad)
}

/// One training pair: the latent the predictor sees and the oracle labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Features,
    pub labels: SkipMask,
}

impl Sample {
    /// Input `encode(U(D(hr)))`, labels `oracle_mask(hr)`, both on the
    /// reflect-padded clip.
    pub fn from_hr(hr: &VideoTensor, tau: f64, factor: usize, keep: usize) -> Result<Self> {
        let (padded, _) = hr.reflect_pad_to(PATCH_SHAPE);
        let labels = oracle_mask(&padded, tau, factor)?;
        let input = (&encode(&down_up(&padded, factor)?, keep)?).into();
        Ok(Self { input, labels })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Clips per step.
    pub batch: usize,
    pub seed: u64,
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 500,
            batch: 4,
            seed: 0,
            pos_weight: 1.0,
        }
    }
}

/// Adam over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Returns the mean batch loss before each update.
pub fn train(net: &mut PredictorNet, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if !(cfg.lr >= 0.0) || cfg.batch == 0 {
        return Err(invalid!("need lr >= 0 and batch >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(net.param_count());
    let mut params = net.params();
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch)
            .map(|_| {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                cursor += 1;
                order[cursor - 1]
            })
            .collect();
        let results = batch
            .par_iter()
            .map(|&i| net.loss_and_grad(&data[i].input, &data[i].labels, cfg.pos_weight))
            .collect::<Result<Vec<_>>>()?;
        // summed in batch order so the result does not depend on scheduling
        let mut total = Gradients::zeros_like(net);
        let mut loss = 0.0;
        let s = 1.0 / batch.len() as f64;
        for (l, g) in &results {
            loss += l * s;
            total.add_scaled(g, s);
        }
        curve.push(loss);
        adam.step(&mut params, &total.flat(), cfg.lr);
        net.set_params(&params)?;
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskAgreement {
    pub accuracy: f64,
    pub predicted_skipped: f64,
    pub oracle_skipped: f64,
}

/// Patch-level agreement between predicted and oracle masks over a set.
pub fn evaluate(net: &PredictorNet, data: &[Sample], threshold: f64) -> Result<MaskAgreement> {
    let (mut agree, mut pred, mut truth, mut n) = (0usize, 0usize, 0usize, 0usize);
    for s in data {
        let m = net.predict_features(&s.input, threshold)?;
        if m.grid_dims != s.labels.grid_dims {
            return Err(shape_err!("prediction grid differs from labels"));
        }
        agree += m.bits.iter().zip(&s.labels.bits).filter(|(a, b)| a == b).count();
        pred += m.popcount();
        truth += s.labels.popcount();
        n += m.len();
    }
    if n == 0 {
        return Err(invalid!("evaluation set is empty"));
    }
    let n = n as f64;
    Ok(MaskAgreement {
        accuracy: agree as f64 / n,
        predicted_skipped: pred as f64 / n,
        oracle_skipped: truth as f64 / n,
    })
}
