//! The whole pipeline on one clip: train a small predictor, then upsample a
//! low-resolution video, refining only the patches it marks as complex.
//!
//! cargo run --release --example super_resolve

use skipsr::metrics::QualityReport;
use skipsr::pipeline::{super_resolve, train_predictor, SrOptions, TrainOptions};
use skipsr::predictor::TrainConfig;
use skipsr::resample::area_downsample;
use skipsr::skipdit::{DiTConfig, DiTWeights, Variant};
use skipsr::synth;

fn main() -> skipsr::Result<()> {
    let clips: Vec<_> = (0..128).map(|s| synth::mixed_clip(4, 64, 64, s)).collect();
    let opts = TrainOptions {
        train: TrainConfig {
            steps: 200,
            batch: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let (net, _, report) = train_predictor(&clips, &opts)?;
    println!("predictor fit accuracy {:.3}", report.fit.accuracy);

    let hr = synth::scene_video(8, 128, 192, 2);
    let lr = area_downsample(&hr, 4)?;
    let cfg = DiTConfig::default();
    let weights = DiTWeights::init(&cfg, 12 * opts.keep);
    for variant in [Variant::FullSkip, Variant::Dense] {
        let out = super_resolve(
            &lr,
            &net,
            &cfg,
            &weights,
            &SrOptions {
                variant: Some(variant),
                ..Default::default()
            },
        )?;
        let q = QualityReport::measure(&hr, &out.video)?;
        let t = out.report.timings;
        println!(
            "{:<10} {:?} -> {:?}, {:.0}% skipped, PSNR {:.2} dB",
            variant.name(),
            out.report.input_dims,
            out.report.output_dims,
            100.0 * out.report.skipped_fraction,
            q.psnr
        );
        println!(
            "           upsample {:.1} ms, encode {:.1} ms, predictor {:.1} ms, transformer {:.1} ms, decode {:.1} ms",
            t.upsample_ms, t.encode_ms, t.predictor_ms, t.dit_ms, t.decode_ms
        );
    }
    Ok(())
}
