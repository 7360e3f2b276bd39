//! Multiply-accumulate counts for one forward pass.
//!
//! Per layer: `2·|Q_w|·|K_w|·d` for scores and mixing in every window `w`,
//! `3d²` per projected row, `d²` per query row for the output projection and
//! `8d²` per FFN row. Patch embedding and unembedding are left out.

use serde::{Deserialize, Serialize};

use super::model::{Roles, Rows};
use super::window::{assign_windows, layer_shift};
use super::{DiTConfig, Variant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub attention: f64,
    pub linear: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.attention + self.linear
    }
}

/// Cost of `variant` on a token grid where `skipped` marks routed-around
/// tokens (row-major over `grid`).
pub fn estimate_cost(grid: [usize; 3], skipped: &[bool], cfg: &DiTConfig, variant: Variant) -> CostBreakdown {
    let d = cfg.dim as f64;
    let n = skipped.len();
    debug_assert_eq!(n, grid.iter().product::<usize>());
    let mut cost = CostBreakdown::default();
    for layer in 0..cfg.layers {
        let roles = Roles::of(variant, layer);
        let takes = |rows: Rows, i: usize| rows == Rows::All && variant != Variant::FullSkip || !skipped[i];
        let count = |rows: Rows| (0..n).filter(|&i| takes(rows, i)).count() as f64;
        let queries_of = |i: usize| takes(roles.proj, i) && takes(roles.query, i);
        let keys_of = |i: usize| takes(roles.proj, i) && takes(roles.key, i);
        cost.linear += count(roles.proj) * 3.0 * d * d;
        cost.linear += (0..n).filter(|&i| queries_of(i)).count() as f64 * d * d;
        cost.linear += count(roles.ffn) * 8.0 * d * d;

        let ids = assign_windows(grid, cfg.window, layer_shift(cfg.window, cfg.shift, grid, layer));
        let windows = ids.iter().max().map_or(0, |&m| m as usize + 1);
        let (mut q, mut k) = (vec![0.0f64; windows], vec![0.0f64; windows]);
        for (i, &id) in ids.iter().enumerate() {
            q[id as usize] += queries_of(i) as u8 as f64;
            k[id as usize] += keys_of(i) as u8 as f64;
        }
        cost.attention += q.iter().zip(&k).map(|(a, b)| 2.0 * a * b * d).sum::<f64>();
    }
    cost
}
