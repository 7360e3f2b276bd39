//! Swap skippable patches for their upsampled versions in latent space and
//! measure what that costs in PSNR and SSIM.
//!
//! cargo run --release --example latent_swap

use skipsr::pipeline::{analyze_video, AnalyzeOptions, MaskSource};
use skipsr::synth;
use skipsr::vidio::VideoTensor;

fn main() -> skipsr::Result<()> {
    let videos = [
        ("flat", VideoTensor::constant(8, 64, 64, 0.5)?),
        ("scene", synth::scene_video(8, 96, 128, 1)),
        ("graded", synth::graded_composite(8, 128, 128, 2)),
        ("noise", synth::noise_video(8, 64, 64, 3)),
    ];
    println!(
        "{:<8} {:>8} {:>9} {:>7} {:>13} {:>8}",
        "video", "skipped", "swap dB", "SSIM", "all-U(D) dB", "speedup"
    );
    for keep in [256, 16] {
        let opts = AnalyzeOptions {
            keep,
            ..Default::default()
        };
        println!("codec K = {keep}");
        for (name, v) in &videos {
            let (r, _) = analyze_video(name, v, &opts, MaskSource::Oracle)?;
            let speedup = r.speedup.map_or("all".into(), |s| format!("{s:.2}x"));
            println!(
                "{name:<8} {:>7.1}% {:>9.2} {:>7.4} {:>13.2} {:>8}",
                100.0 * r.skipped_fraction,
                r.swap_psnr,
                r.swap_ssim,
                r.baseline_psnr,
                speedup
            );
        }
    }
    Ok(())
}
