//! Route a latent through the windowed transformer with a skip mask and
//! check that the skipped cells pass through untouched.
//!
//! cargo run --release --example skip_transformer

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipsr::codec::LatentTensor;
use skipsr::pipeline::deterministic_mask;
use skipsr::skipdit::{compose_output, dit_forward, estimate_cost, DiTConfig, DiTWeights, Variant};

fn main() -> skipsr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let keep = 16;
    let dims = [8, 32, 32];
    let n = dims.iter().product::<usize>() * 3 * keep;
    let l = LatentTensor::new(dims, keep, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
    let grid = [8, 16, 16];
    let m = deterministic_mask(grid, 0.4, 1)?;

    let base = DiTConfig {
        zero_unembed: false,
        ..Default::default()
    };
    let w = DiTWeights::init(&base, 12 * keep);
    let dense_cost = estimate_cost(grid, &m.bits, &base, Variant::Dense).total();
    println!("{} tokens, {} skipped", m.len(), m.popcount());
    for variant in Variant::ALL {
        let cfg = DiTConfig { variant, ..base.clone() };
        let start = std::time::Instant::now();
        let refined = dit_forward(&l, &m, &cfg, &w)?;
        let secs = start.elapsed().as_secs_f64();
        let out = compose_output(&refined, &l, &m)?;
        let untouched = (0..m.len())
            .filter(|&k| m.bits[k])
            .all(|k| {
                let (t, y, x) = (k / 256, (k / 16) % 16, k % 16);
                [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .all(|&(dy, dx)| out.cell([t, 2 * y + dy, 2 * x + dx]) == l.cell([t, 2 * y + dy, 2 * x + dx]))
            });
        let cost = estimate_cost(grid, &m.bits, &cfg, variant).total();
        println!(
            "{:<20} {:>6.0} ms  cost {:>5.1}% of dense  refined {:>4}  skipped untouched: {untouched}",
            variant.name(),
            secs * 1e3,
            100.0 * cost / dense_cost,
            refined.orig_index.len()
        );
    }
    Ok(())
}
