//! Skip-aware windowed transformer over 1×2×2 latent tokens.
//!
//! Tokens keep their full-grid coordinate and window membership after
//! routing, so removing skipped tokens leaves every window with fewer
//! (possibly zero) members but never moves a token to another window or
//! changes its rotary phase.

mod cost;
mod model;
mod rope;
mod tokens;
mod window;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use cost::{estimate_cost, CostBreakdown};
pub use model::{compose_output, dit_forward, dit_forward_tokens, DiTWeights, LayerWeights, RefinedTokens};
pub use rope::RopeTable;
pub use tokens::{embed, gather_patches, route, tokenize, TokenSet};
pub use window::{assign_windows, layer_shift, local_position, window_counts};

pub const ARCHITECTURE: &str = "skipsr-dit";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Skipped tokens are removed before the first layer.
    FullSkip,
    /// Every token pays for norms, projections and FFN; attention runs only
    /// among unskipped tokens.
    AttentionMaskOnly,
    /// Skipped tokens serve as keys and values but never as queries.
    QueryMaskOnly,
    /// Even layers run dense over every token, odd layers as `FullSkip`.
    InterleavedDense,
    /// No masking at all.
    Dense,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FullSkip,
        Variant::AttentionMaskOnly,
        Variant::QueryMaskOnly,
        Variant::InterleavedDense,
        Variant::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullSkip => "full_skip",
            Variant::AttentionMaskOnly => "attention_mask_only",
            Variant::QueryMaskOnly => "query_mask_only",
            Variant::InterleavedDense => "interleaved_dense",
            Variant::Dense => "dense",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid!("unknown variant {s:?}"))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiTConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Window size in tokens, `(t, h, w)`.
    pub window: [usize; 3],
    /// Odd layers shift their windows by half a window.
    pub shift: bool,
    pub rope_base: f64,
    pub variant: Variant,
    pub seed: u64,
    /// Worker threads; `None` uses the ambient pool.
    pub threads: Option<usize>,
    /// Start the output projection at zero so an untrained model passes its
    /// input through unchanged.
    pub zero_unembed: bool,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            layers: 4,
            window: [4, 8, 8],
            shift: true,
            rope_base: 10_000.0,
            variant: Variant::FullSkip,
            seed: 0,
            threads: None,
            zero_unembed: true,
        }
    }
}

impl DiTConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(invalid!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.head_dim() % 2 != 0 || self.head_dim() < 6 {
            return Err(invalid!(
                "head dim {} must be even and at least 6 to split across three rotary axes",
                self.head_dim()
            ));
        }
        if self.window.contains(&0) {
            return Err(invalid!("window sizes must be positive"));
        }
        if !(self.rope_base > 1.0) {
            return Err(invalid!("rope_base must exceed 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid!("threads must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
