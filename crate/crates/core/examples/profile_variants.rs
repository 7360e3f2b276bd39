//! Wall-clock comparison of the transformer variants across skip rates,
//! written as CSV to stdout.
//!
//! cargo run --release --example profile_variants

use skipsr::pipeline::{profile, write_csv, ProfileOptions};
use skipsr::skipdit::Variant;

fn main() -> skipsr::Result<()> {
    let opts = ProfileOptions {
        grid: [8, 16, 32],
        fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8],
        variants: Variant::ALL.to_vec(),
        repeats: 5,
        ..Default::default()
    };
    let report = profile(&opts)?;
    write_csv(&report.rows, std::io::stdout())?;
    for &f in &opts.fractions {
        let at = |v: Variant| {
            report
                .rows
                .iter()
                .find(|r| r.variant == v && r.skip_fraction == f)
                .map(|r| r.mean_ms)
                .unwrap()
        };
        eprintln!("skip {f:.1}: full_skip {:.2}x faster than dense", at(Variant::Dense) / at(Variant::FullSkip));
    }
    Ok(())
}
