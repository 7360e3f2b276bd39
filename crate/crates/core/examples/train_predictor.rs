//! Train the mask predictor on synthetic clips and compare its masks with
//! the oracle on clips it has not seen.
//!
//! cargo run --release --example train_predictor [clips] [steps]

use skipsr::pipeline::{train_predictor, TrainOptions};
use skipsr::predictor::{evaluate, Sample, TrainConfig};
use skipsr::synth;

fn main() -> skipsr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let clips = args.next().unwrap_or(256);
    let steps = args.next().unwrap_or(400);
    let clip = |seed: u64| synth::mixed_clip(4, 64, 64, seed);

    let train: Vec<_> = (0..clips as u64).map(clip).collect();
    let opts = TrainOptions {
        train: TrainConfig {
            steps,
            batch: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let (net, curve, report) = train_predictor(&train, &opts)?;
    println!(
        "{clips} clips, {} parameters, {steps} steps in {:.1}s",
        report.parameters,
        start.elapsed().as_secs_f64()
    );
    for (i, loss) in curve.iter().enumerate().step_by((steps / 8).max(1)) {
        println!("  step {i:>5}  loss {loss:.4}");
    }

    let held_out: Vec<Sample> = (1_000_000..1_000_128)
        .map(|s| Sample::from_hr(&clip(s), opts.tau, opts.factor, opts.keep))
        .collect::<skipsr::Result<_>>()?;
    let fit = evaluate(&net, &held_out, opts.threshold)?;
    println!(
        "held out: accuracy {:.3}, predicted skip {:.1}% vs oracle {:.1}%",
        fit.accuracy,
        100.0 * fit.predicted_skipped,
        100.0 * fit.oracle_skipped
    );
    Ok(())
}
