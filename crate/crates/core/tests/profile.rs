//! Wall-clock behaviour of the variants under the profiler.

use skipsr::pipeline::{profile, ProfileOptions};
use skipsr::skipdit::{DiTConfig, Variant};

#[test]
fn without_skipping_every_variant_costs_about_the_same() {
    let opts = ProfileOptions {
        grid: [4, 16, 32],
        fractions: vec![0.0],
        variants: Variant::ALL.to_vec(),
        repeats: 5,
        warmup: 1,
        dit: DiTConfig {
            layers: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = profile(&opts).unwrap();
    let dense = report.rows.iter().find(|r| r.variant == Variant::Dense).unwrap();
    for r in &report.rows {
        assert_eq!(r.tokens_unskipped, r.tokens_total);
        assert_eq!(r.model_cost, dense.model_cost);
        let ratio = r.mean_ms / dense.mean_ms;
        assert!((0.9..=1.1).contains(&ratio), "{} at {ratio:.3} of dense", r.variant);
    }
}
