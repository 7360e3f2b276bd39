//! Oracle skip masks: which patches survive area downsampling and bilinear
//! upsampling, and how the answer moves with the threshold.
//!
//! cargo run --release --example oracle_mask

use skipsr::oracle::{oracle_mask, patch_mse_map, threshold_sweep, DEFAULT_FACTOR, DEFAULT_TAU};
use skipsr::synth;

fn main() -> skipsr::Result<()> {
    let v = synth::half_noise_composite(8, 64, 128, 3);
    let m = oracle_mask(&v, DEFAULT_TAU, DEFAULT_FACTOR)?;
    let [gt, gh, gw] = m.grid_dims;
    println!("half flat / half noise, grid {:?}: {:.0}% skippable", m.grid_dims, 100.0 * m.skipped_fraction());
    for t in 0..gt {
        println!("frames {}..{}", 4 * t, 4 * t + 4);
        for y in 0..gh {
            let row: String = (0..gw).map(|x| if m.get([t, y, x]) { '.' } else { '#' }).collect();
            println!("  {row}");
        }
    }

    let graded = synth::graded_composite(8, 128, 128, 5);
    let (_, errs) = patch_mse_map(&graded, DEFAULT_FACTOR)?;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    println!("\ngraded composite, largest patch error {max:.2e}");
    let taus = [0.0, 1e-5, 1e-4, 2e-4, 1e-3, 1e-2, 1.0];
    for (tau, frac) in threshold_sweep(&graded, &taus, DEFAULT_FACTOR)? {
        println!("  tau {tau:>8.0e}  skipped {:>5.1}%", 100.0 * frac);
    }
    Ok(())
}
