//! End-to-end flows behind the command line, each returning a serializable
//! report.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, latent_swap, LatentTensor};
use crate::error::{invalid, shape_err, Result};
use crate::metrics::{psnr, ssim};
use crate::oracle::{check_ascending, mask_from_errors, oracle_mask, patch_mse_map, SkipMask};
use crate::predictor::{self, evaluate, InputNorm, MaskAgreement, PredictorConfig, PredictorNet, Sample, TrainConfig};
use crate::resample::{bilinear_upsample, down_up};
use crate::skipdit::{
    compose_output, dit_forward, dit_forward_tokens, estimate_cost, gather_patches, DiTConfig, DiTWeights, Variant,
};
use crate::vidio::{VideoTensor, PATCH_SHAPE};

/// Where `analyze` gets its mask from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    Oracle,
    Predictor { net: &'a PredictorNet, threshold: f64 },
}

impl MaskSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            MaskSource::Oracle => "oracle",
            MaskSource::Predictor { .. } => "predictor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeOptions {
    pub tau: f64,
    pub factor: usize,
    /// Coefficients per channel for both latents of the swap.
    pub keep: usize,
    /// Model shape used by the cost estimate.
    pub dit: DiTConfig,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            tau: crate::oracle::DEFAULT_TAU,
            factor: crate::oracle::DEFAULT_FACTOR,
            keep: 256,
            dit: DiTConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: String,
    pub mask_source: String,
    pub tau: f64,
    pub factor: usize,
    pub keep: usize,
    pub videos: Vec<VideoAnalysis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnalysis {
    pub name: String,
    /// `[frames, height, width]` of the source.
    pub dims: [usize; 3],
    pub patches: usize,
    pub skipped_patches: usize,
    pub skipped_fraction: f64,
    pub swap_psnr: f64,
    pub swap_ssim: f64,
    /// Every patch swapped, i.e. the plain `U(D(v))` reconstruction.
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub dense_cost: f64,
    pub sparse_cost: f64,
    /// `dense_cost / sparse_cost`; absent when every patch is skipped.
    pub speedup: Option<f64>,
}

/// Mask the video, swap skipped patches to their `U(D(·))` latents, decode
/// and score against the source.
pub fn analyze_video(
    name: &str,
    v: &VideoTensor,
    opts: &AnalyzeOptions,
    source: MaskSource<'_>,
) -> Result<(VideoAnalysis, SkipMask)> {
    let (padded, _) = v.reflect_pad_to(PATCH_SHAPE);
    let ud = down_up(&padded, opts.factor)?;
    let mask = match source {
        MaskSource::Oracle => oracle_mask(&padded, opts.tau, opts.factor)?,
        MaskSource::Predictor { net, threshold } => {
            let input = if net.config.factor == opts.factor {
                encode(&ud, net.config.keep)?
            } else {
                encode(&down_up(&padded, net.config.factor)?, net.config.keep)?
            };
            net.predict_mask(&input, threshold)?
        }
    };
    let l_hr = encode(&padded, opts.keep)?;
    let l_ud = encode(&ud, opts.keep)?;
    let swapped = reconstruct(&latent_swap(&l_hr, &l_ud, &mask)?, &padded, v)?;
    let baseline = reconstruct(&l_ud, &padded, v)?;

    let grid = mask.grid_dims;
    let dense = estimate_cost(grid, &vec![false; mask.len()], &opts.dit, Variant::Dense).total();
    let sparse = estimate_cost(grid, &mask.bits, &opts.dit, Variant::FullSkip).total();
    let report = VideoAnalysis {
        name: name.to_owned(),
        dims: v.dims(),
        patches: mask.len(),
        skipped_patches: mask.popcount(),
        skipped_fraction: mask.skipped_fraction(),
        swap_psnr: psnr(v, &swapped)?,
        swap_ssim: ssim(v, &swapped)?,
        baseline_psnr: psnr(v, &baseline)?,
        baseline_ssim: ssim(v, &baseline)?,
        dense_cost: dense,
        sparse_cost: sparse,
        speedup: (sparse > 0.0).then(|| dense / sparse),
    };
    Ok((report, mask))
}

fn reconstruct(l: &LatentTensor, padded: &VideoTensor, original: &VideoTensor) -> Result<VideoTensor> {
    decode(l, padded.dims())?.crop(original.dims())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub skipped_fraction: f64,
    pub swap_psnr: f64,
}

/// Oracle skipped fraction and swap PSNR at each threshold. `taus` must be
/// ascending with at least two entries.
pub fn sweep(v: &VideoTensor, taus: &[f64], factor: usize, keep: usize) -> Result<Vec<SweepRow>> {
    if taus.len() < 2 {
        return Err(invalid!("a sweep needs at least two thresholds"));
    }
    check_ascending(taus)?;
    let (padded, _) = v.reflect_pad_to(PATCH_SHAPE);
    let (grid, errs) = patch_mse_map(&padded, factor)?;
    let l_hr = encode(&padded, keep)?;
    let l_ud = encode(&down_up(&padded, factor)?, keep)?;
    taus.iter()
        .map(|&tau| {
            let mask = mask_from_errors(grid, &errs, tau, factor)?;
            let out = reconstruct(&latent_swap(&l_hr, &l_ud, &mask)?, &padded, v)?;
            Ok(SweepRow {
                tau,
                skipped_fraction: mask.skipped_fraction(),
                swap_psnr: psnr(v, &out)?,
            })
        })
        .collect()
}

/// CSV with a header row; works for any flat serializable row type.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub tau: f64,
    pub factor: usize,
    pub keep: usize,
    pub hidden: usize,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tau: crate::oracle::DEFAULT_TAU,
            factor: crate::oracle::DEFAULT_FACTOR,
            keep: crate::codec::DEFAULT_KEEP,
            hidden: predictor::DEFAULT_HIDDEN,
            threshold: 0.5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub clips: usize,
    pub patches: usize,
    pub parameters: usize,
    pub config: PredictorConfig,
    pub train: TrainConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Agreement with the oracle labels on the training clips.
    pub fit: MaskAgreement,
}

#[derive(Clone, Debug, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

/// Build oracle-labelled pairs from high-resolution clips and fit a fresh
/// predictor. Returns the net, its loss curve and a summary.
pub fn train_predictor(clips: &[VideoTensor], opts: &TrainOptions) -> Result<(PredictorNet, Vec<f64>, TrainReport)> {
    if clips.is_empty() {
        return Err(invalid!("no training videos"));
    }
    let samples = clips
        .iter()
        .map(|c| Sample::from_hr(c, opts.tau, opts.factor, opts.keep))
        .collect::<Result<Vec<_>>>()?;
    let config = PredictorConfig {
        in_channels: 3 * opts.keep,
        hidden: opts.hidden,
        seed: opts.train.seed,
        tau: opts.tau,
        factor: opts.factor,
        keep: opts.keep,
    };
    let mut net = PredictorNet::new(config.clone())?;
    let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
    net.input_norm = InputNorm::fit(&inputs)?;
    let curve = predictor::train(&mut net, &samples, &opts.train)?;
    let fit = evaluate(&net, &samples, opts.threshold)?;
    let report = TrainReport {
        clips: clips.len(),
        patches: samples.iter().map(|s| s.labels.len()).sum(),
        parameters: net.param_count(),
        config,
        train: opts.train.clone(),
        initial_loss: curve.first().copied().unwrap_or(f64::NAN),
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
        fit,
    };
    Ok((net, curve, report))
}

pub fn loss_rows(curve: &[f64]) -> Vec<LossRow> {
    curve.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrOptions {
    pub scale: usize,
    pub threshold: f64,
    /// Overrides the variant stored with the transformer weights.
    pub variant: Option<Variant>,
}

impl Default for SrOptions {
    fn default() -> Self {
        Self {
            scale: 4,
            threshold: 0.5,
            variant: None,
        }
    }
}

/// Wall time per stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// Bilinear upsampling and padding.
    pub upsample_ms: f64,
    pub encode_ms: f64,
    pub predictor_ms: f64,
    /// Transformer plus composing its output with the skip path.
    pub dit_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.upsample_ms + self.encode_ms + self.predictor_ms + self.dit_ms + self.decode_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrReport {
    pub input_dims: [usize; 3],
    pub output_dims: [usize; 3],
    pub scale: usize,
    pub variant: Variant,
    pub keep: usize,
    pub threshold: f64,
    pub patches: usize,
    pub skipped_patches: usize,
    pub skipped_fraction: f64,
    pub timings: StageTimings,
}

#[derive(Clone, Debug)]
pub struct SrOutput {
    pub video: VideoTensor,
    pub mask: SkipMask,
    pub report: SrReport,
}

/// Upsample, predict which patches can stay on the bilinear path, refine the
/// rest with the transformer and decode.
pub fn super_resolve(
    lr: &VideoTensor,
    net: &PredictorNet,
    dit_cfg: &DiTConfig,
    dit_w: &DiTWeights,
    opts: &SrOptions,
) -> Result<SrOutput> {
    let keep = net.config.keep;
    if dit_w.patch_dim != 4 * 3 * keep {
        return Err(shape_err!(
            "predictor reads K={keep} latents ({} values per token) but the transformer expects {}",
            12 * keep,
            dit_w.patch_dim
        ));
    }
    let cfg = DiTConfig {
        variant: opts.variant.unwrap_or(dit_cfg.variant),
        ..dit_cfg.clone()
    };
    let start = Instant::now();
    let mut t = StageTimings::default();

    let mark = Instant::now();
    let up = bilinear_upsample(lr, opts.scale)?;
    let (padded, _) = up.reflect_pad_to(PATCH_SHAPE);
    t.upsample_ms = ms(mark);

    let mark = Instant::now();
    let l = encode(&padded, keep)?;
    t.encode_ms = ms(mark);

    let mark = Instant::now();
    let mask = net.predict_mask(&l, opts.threshold)?;
    t.predictor_ms = ms(mark);

    let mark = Instant::now();
    let refined = dit_forward(&l, &mask, &cfg, dit_w)?;
    let out = compose_output(&refined, &l, &mask)?;
    t.dit_ms = ms(mark);

    let mark = Instant::now();
    let video = decode(&out, padded.dims())?.crop(up.dims())?;
    t.decode_ms = ms(mark);
    t.total_ms = ms(start);

    let report = SrReport {
        input_dims: lr.dims(),
        output_dims: video.dims(),
        scale: opts.scale,
        variant: cfg.variant,
        keep,
        threshold: opts.threshold,
        patches: mask.len(),
        skipped_patches: mask.popcount(),
        skipped_fraction: mask.skipped_fraction(),
        timings: t,
    };
    Ok(SrOutput { video, mask, report })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Exactly `round(fraction · N)` skipped cells, placed by a seeded shuffle.
pub fn deterministic_mask(grid: [usize; 3], fraction: f64, seed: u64) -> Result<SkipMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid!("skip fraction {fraction} outside [0, 1]"));
    }
    let n: usize = grid.iter().product();
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut bits = vec![false; n];
    for &i in &order[..k] {
        bits[i] = true;
    }
    SkipMask::new(grid, bits, 0.0, crate::oracle::DEFAULT_FACTOR as u32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileOptions {
    /// Token grid `(t, h, w)`; the latent is twice as large in `h` and `w`.
    pub grid: [usize; 3],
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub repeats: usize,
    /// Untimed runs before each measured series.
    pub warmup: usize,
    pub keep: usize,
    pub seed: u64,
    pub dit: DiTConfig,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            grid: [16, 32, 32],
            fractions: vec![0.0, 0.4],
            variants: Variant::ALL.to_vec(),
            repeats: 5,
            warmup: 1,
            keep: crate::codec::DEFAULT_KEEP,
            seed: 0,
            dit: DiTConfig::default(),
        }
    }
}

pub const MIN_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub variant: Variant,
    pub skip_fraction: f64,
    pub tokens_total: usize,
    pub tokens_unskipped: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Multiply-accumulates under the cost model.
    pub model_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub grid: [usize; 3],
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
    pub rows: Vec<ProfileRow>,
}

/// Time each variant on random latents under deterministic masks.
pub fn profile(opts: &ProfileOptions) -> Result<ProfileReport> {
    if opts.repeats < MIN_REPEATS {
        return Err(invalid!("profiling needs at least {MIN_REPEATS} repeats, got {}", opts.repeats));
    }
    if opts.grid.contains(&0) {
        return Err(invalid!("token grid {:?} has an empty axis", opts.grid));
    }
    opts.dit.validate()?;
    let [gt, gh, gw] = opts.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dims = [gt, 2 * gh, 2 * gw];
    let len = dims.iter().product::<usize>() * 3 * opts.keep;
    let l = LatentTensor::new(dims, opts.keep, (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
    let weights = DiTWeights::init(&DiTConfig { zero_unembed: false, ..opts.dit.clone() }, 12 * opts.keep);
    let tokens = gather_patches(&l, &opts.dit)?;

    let mut rows = Vec::new();
    for &fraction in &opts.fractions {
        let mask = deterministic_mask(opts.grid, fraction, opts.seed)?;
        let configs: Vec<DiTConfig> = opts
            .variants
            .iter()
            .map(|&variant| DiTConfig { variant, ..opts.dit.clone() })
            .collect();
        for cfg in &configs {
            for _ in 0..opts.warmup {
                dit_forward_tokens(&tokens, &mask, cfg, &weights)?;
            }
        }
        // round-robin so slow drift in machine load spreads over every variant
        let mut times = vec![Vec::with_capacity(opts.repeats); configs.len()];
        for _ in 0..opts.repeats {
            for (cfg, series) in configs.iter().zip(&mut times) {
                let mark = Instant::now();
                dit_forward_tokens(&tokens, &mask, cfg, &weights)?;
                series.push(ms(mark));
            }
        }
        for (cfg, series) in configs.iter().zip(&times) {
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            rows.push(ProfileRow {
                variant: cfg.variant,
                skip_fraction: fraction,
                tokens_total: mask.len(),
                tokens_unskipped: mask.len() - mask.popcount(),
                repeats: opts.repeats,
                mean_ms: mean,
                std_ms: var.sqrt(),
                model_cost: estimate_cost(opts.grid, &mask.bits, cfg, cfg.variant).total(),
            });
        }
    }
    Ok(ProfileReport {
        grid: opts.grid,
        repeats: opts.repeats,
        warmup: opts.warmup,
        threads: opts.dit.threads.unwrap_or_else(rayon::current_num_threads),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn constant_video_is_fully_skipped_at_capped_psnr() {
        let v = VideoTensor::constant(8, 32, 32, 0.4).unwrap();
        let (r, m) = analyze_video("flat", &v, &AnalyzeOptions::default(), MaskSource::Oracle).unwrap();
        assert_eq!(r.skipped_fraction, 1.0);
        assert_eq!(m.popcount(), m.len());
        assert_eq!(r.swap_psnr, crate::metrics::PSNR_CAP_DB);
        assert_eq!(r.speedup, None);
    }

    #[test]
    fn noise_video_keeps_everything() {
        let v = synth::noise_video(4, 64, 64, 2);
        let (r, _) = analyze_video("noise", &v, &AnalyzeOptions::default(), MaskSource::Oracle).unwrap();
        assert!(r.skipped_fraction <= 0.02);
        assert!((r.speedup.unwrap() - 1.0).abs() < 0.05, "{:?}", r.speedup);
        assert!(r.swap_psnr > r.baseline_psnr);
    }

    #[test]
    fn half_noise_speedup_is_at_least_two() {
        // halving the tokens halves linear work and at least halves
        // attention, which is superadditive in window occupancy
        let v = synth::half_noise_composite(8, 64, 128, 4);
        let (r, _) = analyze_video("half", &v, &AnalyzeOptions::default(), MaskSource::Oracle).unwrap();
        assert_eq!(r.skipped_fraction, 0.5);
        assert!(r.speedup.unwrap() >= 2.0, "{:?}", r.speedup);
    }

    #[test]
    fn unpadded_dims_survive_analysis() {
        let v = synth::scene_video(5, 40, 50, 1);
        let (r, m) = analyze_video("odd", &v, &AnalyzeOptions::default(), MaskSource::Oracle).unwrap();
        assert_eq!(r.dims, [5, 40, 50]);
        assert_eq!(m.grid_dims, [2, 3, 4]);
    }

    #[test]
    fn sweep_endpoints() {
        let v = synth::graded_composite(4, 64, 64, 3);
        let rows = sweep(&v, &[0.0, 1e9], 4, 256).unwrap();
        let (padded, _) = v.reflect_pad_to(PATCH_SHAPE);
        let full = psnr(&v, &down_up(&padded, 4).unwrap().crop(v.dims()).unwrap()).unwrap();
        assert_eq!(rows[1].skipped_fraction, 1.0);
        assert!((rows[1].swap_psnr - full).abs() < 1e-3, "{} vs {full}", rows[1].swap_psnr);
        assert!(rows[0].swap_psnr > rows[1].swap_psnr);
        assert!(sweep(&v, &[1e-4], 4, 256).is_err());
        assert!(sweep(&v, &[1e-3, 1e-4], 4, 256).is_err());
    }

    #[test]
    fn deterministic_mask_counts_and_repeats() {
        let a = deterministic_mask([4, 8, 8], 0.4, 9).unwrap();
        assert_eq!(a.popcount(), 102);
        assert_eq!(a, deterministic_mask([4, 8, 8], 0.4, 9).unwrap());
        assert_ne!(a, deterministic_mask([4, 8, 8], 0.4, 10).unwrap());
        assert!(deterministic_mask([1, 1, 1], 1.5, 0).is_err());
    }

    #[test]
    fn profile_rejects_few_repeats() {
        let opts = ProfileOptions {
            repeats: 4,
            ..Default::default()
        };
        assert!(profile(&opts).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = [SweepRow {
            tau: 0.5,
            skipped_fraction: 0.25,
            swap_psnr: 40.0,
        }];
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "tau,skipped_fraction,swap_psnr\n0.5,0.25,40.0\n");
    }
}
