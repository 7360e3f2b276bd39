//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skipsr::cli::{self, Cli};
use skipsr::codec::{decode, encode, latent_dims, LatentTensor};
use skipsr::oracle::{oracle_mask, SkipMask, DEFAULT_FACTOR, DEFAULT_TAU};
use skipsr::pipeline::{self, analyze_video, AnalyzeOptions, MaskSource, ProfileOptions, TrainOptions};
use skipsr::predictor::{evaluate, Features, PredictorConfig, PredictorNet, Sample, TrainConfig};
use skipsr::resample::{bilinear_upsample, down_up};
use skipsr::skipdit::{compose_output, dit_forward, DiTConfig, DiTWeights, Variant};
use skipsr::synth;
use skipsr::vidio::{extract_patches, save_video, VideoFormat, VideoTensor, PATCH_SHAPE};

type Outcome = Result<String, String>;

// pinned tolerances and limits
const DENSE_REL_TOL: f64 = 1e-5;
const DENSE_TIME_LIMIT_S: f64 = 10.0;
const GRAD_EPS: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
/// Relative error denominator floor for near-zero gradients.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_TIME_LIMIT_S: f64 = 60.0;
const PRED_MIN_ACCURACY: f64 = 0.95;
const PRED_MAX_GAP_POINTS: f64 = 7.0;
const PRED_MAX_STEPS: usize = 2000;
const PRED_TIME_LIMIT_S: f64 = 600.0;
const SPEED_SKIP: f64 = 0.4;
const SPEED_GRID: [usize; 3] = [16, 32, 32];
const SPEED_REPEATS: usize = 5;
const SPEED_MIN_RATIO: f64 = 1.3;
const SWAP_MIN_PSNR_DB: f64 = 40.0;
const CODEC_ROUNDTRIP_TOL: f64 = 1e-6;
const CODEC_ENERGY_REL_TOL: f64 = 1e-5;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_latent(dims: [usize; 3], keep: usize, seed: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product::<usize>() * 3 * keep;
    LatentTensor::new(dims, keep, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn random_mask(grid: [usize; 3], p: f64, seed: u64) -> SkipMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.iter().product();
    SkipMask::new(grid, (0..n).map(|_| rng.random_bool(p)).collect(), 0.0, 4).unwrap()
}

fn dense_equivalence() -> Outcome {
    let cfg = DiTConfig {
        zero_unembed: false,
        seed: 1,
        ..Default::default()
    };
    let l = random_latent([8, 32, 32], 16, 2);
    let w = DiTWeights::init(&cfg, 12 * 16);
    let m = SkipMask::filled([8, 16, 16], false);
    let start = Instant::now();
    let skip = dit_forward(&l, &m, &DiTConfig { variant: Variant::FullSkip, ..cfg.clone() }, &w).unwrap();
    let dense = dit_forward(&l, &m, &DiTConfig { variant: Variant::Dense, ..cfg }, &w).unwrap();
    let secs = start.elapsed().as_secs_f64();
    if skip.orig_index != dense.orig_index {
        return Err("token order differs".into());
    }
    let scale = dense.patches.iter().fold(0.0f64, |m, &x| m.max(x.abs() as f64));
    let diff = skip
        .patches
        .iter()
        .zip(&dense.patches)
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs() as f64));
    let rel = diff / scale.max(f64::MIN_POSITIVE);
    check(
        rel <= DENSE_REL_TOL && secs < DENSE_TIME_LIMIT_S,
        format!("max rel diff {rel:.2e} (tol {DENSE_REL_TOL:.0e}), {secs:.2}s for both passes"),
    )
}

/// Pixels of `a` and `b` inside every skipped patch footprint, compared bitwise.
fn skipped_footprints_identical(a: &VideoTensor, b: &VideoTensor, m: &SkipMask) -> bool {
    let [pt, ph, pw] = PATCH_SHAPE;
    let [_, gh, gw] = m.grid_dims;
    let [ft, fh, fw] = a.dims();
    for (k, _) in m.bits.iter().enumerate().filter(|(_, &s)| s) {
        let (it, iy, ix) = (k / (gh * gw), (k / gw) % gh, k % gw);
        for t in it * pt..((it + 1) * pt).min(ft) {
            for y in iy * ph..((iy + 1) * ph).min(fh) {
                for x in ix * pw..((ix + 1) * pw).min(fw) {
                    for c in 0..3 {
                        if a.at(t, y, x, c).to_bits() != b.at(t, y, x, c).to_bits() {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

fn skipped_path_identity() -> Outcome {
    // dims chosen so the upsampled video needs padding on every axis
    let lr = synth::scene_video(7, 18, 22, 3);
    let up = bilinear_upsample(&lr, 4).unwrap();
    let (padded, _) = up.reflect_pad_to(PATCH_SHAPE);
    let keep = 16;
    let l = encode(&padded, keep).unwrap();
    let bilinear_path = decode(&l, padded.dims()).unwrap().crop(up.dims()).unwrap();
    let grid = skipsr::vidio::patch_grid_dims(padded.dims());
    let mut checked = 0;
    for (seed, p) in [(0u64, 0.0), (1, 0.3), (2, 0.5), (3, 0.8), (4, 1.0)] {
        let m = random_mask(grid, p, seed);
        for variant in Variant::ALL {
            let cfg = DiTConfig {
                dim: 32,
                heads: 2,
                layers: 2,
                variant,
                zero_unembed: false,
                seed,
                ..Default::default()
            };
            let w = DiTWeights::init(&cfg, 12 * keep);
            let refined = dit_forward(&l, &m, &cfg, &w).unwrap();
            let out = compose_output(&refined, &l, &m).unwrap();
            let video = decode(&out, padded.dims()).unwrap().crop(up.dims()).unwrap();
            if !skipped_footprints_identical(&video, &bilinear_path, &m) {
                return Err(format!("mask seed {seed} p={p} variant {variant}: skipped pixels differ"));
            }
            if p < 1.0 && video == bilinear_path {
                return Err(format!("variant {variant} p={p}: transformer left the video unchanged"));
            }
            checked += 1;
        }
    }
    // the end-to-end pipeline with a predicted mask
    let net = PredictorNet::new(PredictorConfig {
        in_channels: 3 * keep,
        hidden: 8,
        seed: 5,
        tau: DEFAULT_TAU,
        factor: DEFAULT_FACTOR,
        keep,
    })
    .unwrap();
    let cfg = DiTConfig {
        dim: 32,
        heads: 2,
        layers: 2,
        zero_unembed: false,
        ..Default::default()
    };
    let w = DiTWeights::init(&cfg, 12 * keep);
    let opts = pipeline::SrOptions {
        threshold: 0.5,
        ..Default::default()
    };
    let sr = pipeline::super_resolve(&lr, &net, &cfg, &w, &opts).unwrap();
    if !skipped_footprints_identical(&sr.video, &bilinear_path, &sr.mask) {
        return Err("super_resolve: skipped pixels differ from the bilinear path".into());
    }
    Ok(format!(
        "{checked} mask/variant combinations plus one predicted mask ({:.0}% skipped) bit-identical",
        100.0 * sr.mask.skipped_fraction()
    ))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let net = PredictorNet::new(PredictorConfig {
        in_channels: 6,
        hidden: 4,
        seed: 21,
        tau: DEFAULT_TAU,
        factor: DEFAULT_FACTOR,
        keep: 2,
    })
    .unwrap();
    let x = Features::from(&random_latent([3, 6, 8], 2, 22));
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let target = SkipMask::new([3, 3, 4], (0..36).map(|_| rng.random::<bool>()).collect(), 0.0, 4).unwrap();
    let pos_weight = 1.3;
    let (_, grads) = net.loss_and_grad(&x, &target, pos_weight).unwrap();
    let analytic = grads.flat();
    let params = net.params();
    let mut probe = net.clone();
    let loss_at = |probe: &mut PredictorNet, p: &[f64]| {
        probe.set_params(p).unwrap();
        probe.loss_and_grad(&x, &target, pos_weight).unwrap().0
    };
    let mut offset = 0;
    let mut report = Vec::new();
    let mut worst_all = 0.0f64;
    for (i, layer) in net.layers.iter().enumerate() {
        let n = layer.weight.len() + layer.bias.len();
        let mut worst = 0.0f64;
        for j in offset..offset + n {
            let mut p = params.clone();
            p[j] += GRAD_EPS;
            let up = loss_at(&mut probe, &p);
            p[j] -= 2.0 * GRAD_EPS;
            let down = loss_at(&mut probe, &p);
            let numeric = (up - down) / (2.0 * GRAD_EPS);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
        report.push(format!("layer {i}: {worst:.1e}"));
        worst_all = worst_all.max(worst);
        offset += n;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_all <= GRAD_REL_TOL && secs < GRAD_TIME_LIMIT_S && offset == params.len(),
        format!("{} params, worst rel {} (tol {GRAD_REL_TOL:.0e}), {secs:.1}s", params.len(), report.join(", ")),
    )
}

fn oracle_exactness() -> Outcome {
    let v = synth::half_noise_composite(8, 64, 128, 11);
    let m = oracle_mask(&v, DEFAULT_TAU, DEFAULT_FACTOR).unwrap();
    let left_flat = m
        .bits
        .iter()
        .enumerate()
        .all(|(k, &b)| b == (k % m.grid_dims[2] < m.grid_dims[2] / 2));
    check(
        m.skipped_fraction() == 0.5 && left_flat,
        format!("skipped_fraction = {} over {} patches", m.skipped_fraction(), m.len()),
    )
}

fn threshold_monotonicity() -> Outcome {
    let v = synth::graded_composite(8, 128, 128, 5);
    let taus: Vec<f64> = (0..8).map(|i| 1e-5 * 10f64.powf(i as f64 * 3.0 / 7.0)).collect();
    let rows = pipeline::sweep(&v, &taus, DEFAULT_FACTOR, 256).unwrap();
    let skip_up = rows.windows(2).all(|w| w[1].skipped_fraction >= w[0].skipped_fraction);
    let psnr_down = rows.windows(2).all(|w| w[1].swap_psnr <= w[0].swap_psnr);
    let strict = (1..rows.len() - 1).any(|i| {
        rows[i].skipped_fraction > rows[i - 1].skipped_fraction && rows[i].swap_psnr < rows[i - 1].swap_psnr
    });
    let fmt: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1e}:{:.3}/{:.1}dB", r.tau, r.skipped_fraction, r.swap_psnr))
        .collect();
    check(skip_up && psnr_down && strict, fmt.join(" "))
}

fn predictor_quality() -> Outcome {
    let start = Instant::now();
    let clip = |seed: u64| synth::mixed_clip(4, 64, 64, seed);
    let train: Vec<VideoTensor> = (0..1024).map(clip).collect();
    let opts = TrainOptions {
        train: TrainConfig {
            lr: 1e-3,
            steps: 1000,
            batch: 8,
            seed: 0,
            pos_weight: 1.0,
        },
        ..Default::default()
    };
    if opts.train.steps > PRED_MAX_STEPS {
        return Err("step budget exceeded".into());
    }
    let (net, curve, _) = pipeline::train_predictor(&train, &opts).unwrap();
    let held_out: Vec<Sample> = (1_000_000..1_000_256)
        .map(|s| Sample::from_hr(&clip(s), opts.tau, opts.factor, opts.keep).unwrap())
        .collect();
    let a = evaluate(&net, &held_out, opts.threshold).unwrap();
    let gap = 100.0 * (a.predicted_skipped - a.oracle_skipped).abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        a.accuracy >= PRED_MIN_ACCURACY && gap <= PRED_MAX_GAP_POINTS && secs < PRED_TIME_LIMIT_S,
        format!(
            "held-out accuracy {:.4}, skipped predicted {:.1}% vs oracle {:.1}% (gap {gap:.1} pts), \
             {} steps, loss {:.3} -> {:.3}, {secs:.0}s",
            a.accuracy,
            100.0 * a.predicted_skipped,
            100.0 * a.oracle_skipped,
            curve.len(),
            curve[0],
            curve[curve.len() - 1]
        ),
    )
}

fn speed_ordering() -> Outcome {
    let opts = ProfileOptions {
        grid: SPEED_GRID,
        fractions: vec![SPEED_SKIP],
        variants: vec![Variant::FullSkip, Variant::AttentionMaskOnly, Variant::QueryMaskOnly, Variant::Dense],
        repeats: SPEED_REPEATS,
        warmup: 1,
        ..Default::default()
    };
    let report = pipeline::profile(&opts).unwrap();
    let mean = |v: Variant| report.rows.iter().find(|r| r.variant == v).unwrap().mean_ms;
    let (fs, am, qm, d) = (
        mean(Variant::FullSkip),
        mean(Variant::AttentionMaskOnly),
        mean(Variant::QueryMaskOnly),
        mean(Variant::Dense),
    );
    let speedup = d / fs;
    check(
        fs < am && am < d && fs < qm && speedup >= SPEED_MIN_RATIO,
        format!(
            "mean ms full_skip {fs:.0}, attention_mask_only {am:.0}, query_mask_only {qm:.0}, dense {d:.0}; \
             speedup {speedup:.2}x (min {SPEED_MIN_RATIO}x), {} threads",
            report.threads
        ),
    )
}

/// Per-patch MSE between `v` and the whole-video `U(D(v))` it is swapped
/// with. Unlike the skip criterion, patch edges see their neighbours.
fn in_context_patch_mse(v: &VideoTensor) -> Vec<f64> {
    let (padded, _) = v.reflect_pad_to(PATCH_SHAPE);
    let ud = down_up(&padded, DEFAULT_FACTOR).unwrap();
    let (a, b) = (extract_patches(&padded), extract_patches(&ud));
    a.patches
        .iter()
        .zip(&b.patches)
        .map(|(p, q)| p.iter().zip(q).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / p.len() as f64)
        .collect()
}

fn swap_quality() -> Outcome {
    let videos = [
        ("constant", VideoTensor::constant(8, 64, 64, 0.6).unwrap()),
        ("scene", synth::scene_video(8, 96, 128, 1)),
        ("scene_wide", synth::scene_video(12, 128, 256, 7)),
        ("graded", synth::graded_composite(8, 128, 128, 2)),
        ("half_noise", synth::half_noise_composite(8, 64, 128, 3)),
        ("mixed", synth::mixed_clip(8, 128, 128, 4)),
        ("noise", synth::noise_video(8, 64, 64, 5)),
    ];
    let opts = AnalyzeOptions::default();
    let mut ok = true;
    let mut qualifying = 0;
    let mut lines = Vec::new();
    for (name, v) in &videos {
        let (r, m) = analyze_video(name, v, &opts, MaskSource::Oracle).unwrap();
        // the 40 dB bound applies where the skipped region still meets the
        // threshold on average once neighbours bleed in through the upsampler
        let errs = in_context_patch_mse(v);
        let skipped: Vec<f64> = m.bits.iter().zip(&errs).filter(|(&s, _)| s).map(|(_, &e)| e).collect();
        let mean_err = if skipped.is_empty() { 0.0 } else { skipped.iter().sum::<f64>() / skipped.len() as f64 };
        let holds_in_context = mean_err <= DEFAULT_TAU;
        ok &= if r.skipped_patches == r.patches {
            // both reconstructions are the same video
            r.swap_psnr == r.baseline_psnr
        } else {
            r.swap_psnr > r.baseline_psnr
        };
        if holds_in_context {
            qualifying += 1;
            ok &= r.swap_psnr > SWAP_MIN_PSNR_DB;
        }
        lines.push(format!(
            "{name} {:.0}% {:.1}/{:.1}dB ctx {mean_err:.1e}{}",
            100.0 * r.skipped_fraction,
            r.swap_psnr,
            r.baseline_psnr,
            if holds_in_context { " [>40dB]" } else { "" }
        ));
    }
    check(ok && qualifying >= 3, lines.join(", "))
}

fn codec_soundness() -> Outcome {
    let v = synth::noise_video(8, 32, 48, 9);
    let l = encode(&v, 256).unwrap();
    let back = decode(&l, v.dims()).unwrap();
    let roundtrip = v
        .data()
        .iter()
        .zip(back.data())
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs() as f64));
    let pixel_energy: f64 = v.data().iter().map(|&x| (x as f64).powi(2)).sum();
    let coeff_energy: f64 = l.coeffs().iter().map(|&x| (x as f64).powi(2)).sum();
    let energy_rel = (pixel_energy - coeff_energy).abs() / pixel_energy;

    // a pixel change reaches exactly one latent cell, and a cell change
    // decodes into exactly its own block
    let mut bumped = v.data().to_vec();
    let (t, y, x) = (5, 17, 30);
    bumped[v.index(t, y, x, 1)] += 0.25;
    let bumped = VideoTensor::new(8, 32, 48, bumped).unwrap();
    let lb = encode(&bumped, 256).unwrap();
    let [_, lh, lw] = latent_dims(v.dims());
    let changed: Vec<usize> = (0..l.coeffs().len() / l.channels())
        .filter(|&k| {
            let cell = [k / (lh * lw), (k / lw) % lh, k % lw];
            l.cell(cell) != lb.cell(cell)
        })
        .collect();
    let encode_local = changed == vec![(t / 4 * lh + y / 8) * lw + x / 8];
    let mut lc = l.clone();
    lc.cell_mut([0, 1, 2])[0] += 0.5;
    let dc = decode(&lc, v.dims()).unwrap();
    let (mut outside_same, mut inside_changed) = (true, false);
    for tt in 0..8 {
        for yy in 0..32 {
            for xx in 0..48 {
                let inside = tt < 4 && (8..16).contains(&yy) && (16..24).contains(&xx);
                for c in 0..3 {
                    let same = dc.at(tt, yy, xx, c).to_bits() == back.at(tt, yy, xx, c).to_bits();
                    if inside {
                        inside_changed |= !same;
                    } else {
                        outside_same &= same;
                    }
                }
            }
        }
    }
    let decode_local = outside_same && inside_changed;
    check(
        roundtrip <= CODEC_ROUNDTRIP_TOL && energy_rel <= CODEC_ENERGY_REL_TOL && encode_local && decode_local,
        format!(
            "round trip {roundtrip:.1e} (tol {CODEC_ROUNDTRIP_TOL:.0e}), energy rel {energy_rel:.1e} \
             (tol {CODEC_ENERGY_REL_TOL:.0e}), encode locality {encode_local}, decode locality {decode_local}"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let argv = std::iter::once("skipsr").chain(args.iter().copied());
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    cli::run(cli).map_err(|e| e.to_string())
}

fn strip_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    save_video(&synth::graded_composite(8, 64, 96, 1), Path::new(&p("hr.y4m")), VideoFormat::Y4m).unwrap();
    save_video(&synth::scene_video(8, 24, 20, 2), Path::new(&p("lr.rgb")), VideoFormat::RawRgb).unwrap();

    // small models for the sr run
    let clips: Vec<VideoTensor> = (0..8).map(|s| synth::mixed_clip(4, 64, 64, s)).collect();
    let opts = TrainOptions {
        hidden: 8,
        train: TrainConfig {
            steps: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let (net, _, _) = pipeline::train_predictor(&clips, &opts).unwrap();
    net.to_weights().unwrap().save(Path::new(&p("pred.skpw"))).unwrap();
    std::fs::write(p("dit.json"), r#"{"dim": 64, "heads": 4, "layers": 2, "zero_unembed": false}"#).unwrap();
    run_cli(&["init-dit", "--config", &p("dit.json"), "--keep", "16", "--out", &p("dit.skpw")])?;

    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    let mut sr_reports = Vec::new();
    for (run, threads) in ["1", "3", "1"].iter().enumerate() {
        let tag = |s: &str| p(&format!("{s}.{run}"));
        let common = ["--threads", threads];
        let hr = p("hr.y4m");
        let mut args = vec!["analyze", &hr];
        let (report, masks) = (tag("analysis.json"), tag("masks"));
        args.extend(["--report", &report, "--masks", &masks]);
        args.extend(common);
        run_cli(&args)?;
        let sweep_csv = tag("sweep.csv");
        run_cli(&["sweep", &p("hr.y4m"), "--out", &sweep_csv, "--threads", threads])?;
        let (sr_out, sr_mask, sr_report) = (tag("sr.y4m"), tag("sr.skpm"), tag("sr.json"));
        run_cli(&[
            "sr",
            &p("lr.rgb"),
            "--weights-predictor",
            &p("pred.skpw"),
            "--weights-dit",
            &p("dit.skpw"),
            "--out",
            &sr_out,
            "--mask-out",
            &sr_mask,
            "--report",
            &sr_report,
            "--threads",
            threads,
        ])?;
        let read = |f: &str| std::fs::read(f).unwrap();
        outputs.push(vec![
            ("analysis.json".into(), read(&report)),
            ("mask".into(), read(&format!("{masks}/hr.skpm"))),
            ("sweep.csv".into(), read(&sweep_csv)),
            ("sr.y4m".into(), read(&sr_out)),
            ("sr.skpm".into(), read(&sr_mask)),
        ]);
        sr_reports.push(strip_timings(Path::new(&sr_report)));
    }
    for (name, bytes) in &outputs[0] {
        for other in &outputs[1..] {
            let (_, b) = other.iter().find(|(n, _)| n == name).unwrap();
            if b != bytes {
                return Err(format!("{name} differs between runs"));
            }
        }
    }
    if sr_reports.iter().any(|r| *r != sr_reports[0]) {
        return Err("sr report differs outside timings".into());
    }
    Ok(format!(
        "analyze/sweep/sr outputs byte-identical over 3 runs at 1, 3, 1 threads ({} artifacts each)",
        outputs[0].len() + 1
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("dense equivalence", dense_equivalence),
        ("skipped-path identity", skipped_path_identity),
        ("gradient checks", gradient_checks),
        ("oracle exactness", oracle_exactness),
        ("threshold monotonicity", threshold_monotonicity),
        ("predictor quality", predictor_quality),
        ("speed ordering", speed_ordering),
        ("swap-quality ordering", swap_quality),
        ("codec soundness", codec_soundness),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
