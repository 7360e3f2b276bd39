//! Latent patches as tokens, and routing by a skip mask.

use ndarray::{Array2, Axis};

use super::model::DiTWeights;
use super::window::{assign_windows, layer_shift};
use super::DiTConfig;
use crate::codec::{check_mask_grid, LatentTensor};
use crate::error::{shape_err, Result};
use crate::oracle::SkipMask;

/// A set of tokens with their full-grid coordinates and the window each one
/// belongs to under the unshifted (`[0]`) and shifted (`[1]`) tilings.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    /// Full token grid `(t, h/2, w/2)`, whether or not every cell is present.
    pub grid: [usize; 3],
    /// One row per token.
    pub vectors: Array2<f32>,
    pub orig_index: Vec<[usize; 3]>,
    pub window_id: Vec<[u32; 2]>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.orig_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orig_index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Row-major position of token `i` in the full grid.
    pub fn linear_index(&self, i: usize) -> usize {
        let [t, y, x] = self.orig_index[i];
        (t * self.grid[1] + y) * self.grid[2] + x
    }

    /// Keep the listed rows, in the order given.
    pub fn select(&self, rows: &[usize]) -> TokenSet {
        TokenSet {
            grid: self.grid,
            vectors: self.vectors.select(Axis(0), rows),
            orig_index: rows.iter().map(|&r| self.orig_index[r]).collect(),
            window_id: rows.iter().map(|&r| self.window_id[r]).collect(),
        }
    }
}

/// Raw `1×2×2×C` patches of `l` as `4C`-wide tokens, with window ids from
/// `cfg`. Each row lists the four cells in `(dy, dx)` row-major order.
pub fn gather_patches(l: &LatentTensor, cfg: &DiTConfig) -> Result<TokenSet> {
    let [t, h, w] = l.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("latent {h}x{w} must have even height and width"));
    }
    let grid = [t, h / 2, w / 2];
    let c = l.channels();
    let n: usize = grid.iter().product();
    let mut vectors = Array2::zeros((n, 4 * c));
    let mut orig_index = Vec::with_capacity(n);
    for (row, mut out) in vectors.axis_iter_mut(Axis(0)).enumerate() {
        let cell = [row / (grid[1] * grid[2]), row / grid[2] % grid[1], row % grid[2]];
        for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let src = l.cell([cell[0], 2 * cell[1] + dy, 2 * cell[2] + dx]);
            out.slice_mut(ndarray::s![k * c..(k + 1) * c])
                .iter_mut()
                .zip(src)
                .for_each(|(d, &s)| *d = s);
        }
        orig_index.push(cell);
    }
    let even = assign_windows(grid, cfg.window, layer_shift(cfg.window, cfg.shift, grid, 0));
    let odd = assign_windows(grid, cfg.window, layer_shift(cfg.window, cfg.shift, grid, 1));
    let window_id = even.into_iter().zip(odd).map(|(a, b)| [a, b]).collect();
    Ok(TokenSet {
        grid,
        vectors,
        orig_index,
        window_id,
    })
}

/// Project raw patches to model width. Coordinates and windows carry over.
pub fn embed(patches: &TokenSet, w: &DiTWeights) -> Result<TokenSet> {
    if patches.dim() != w.patch_dim {
        return Err(shape_err!(
            "tokens are {} wide, embedding expects {}",
            patches.dim(),
            w.patch_dim
        ));
    }
    Ok(TokenSet {
        vectors: w.embed.apply(&patches.vectors),
        ..patches.clone()
    })
}

pub fn tokenize(l: &LatentTensor, cfg: &DiTConfig, w: &DiTWeights) -> Result<TokenSet> {
    embed(&gather_patches(l, cfg)?, w)
}

/// Split `tokens` by `m`: the unskipped tokens keep their storage order,
/// coordinates and window ids; skipped ones are returned by coordinate.
pub fn route(tokens: &TokenSet, m: &SkipMask) -> Result<(TokenSet, Vec<[usize; 3]>)> {
    if m.grid_dims != tokens.grid {
        return Err(shape_err!(
            "mask grid {:?} does not match token grid {:?}",
            m.grid_dims,
            tokens.grid
        ));
    }
    let (keep, skipped): (Vec<usize>, Vec<usize>) =
        (0..tokens.len()).partition(|&i| !m.bits[tokens.linear_index(i)]);
    let skipped = skipped.into_iter().map(|i| tokens.orig_index[i]).collect();
    Ok((tokens.select(&keep), skipped))
}

pub(crate) fn check_latent_mask(l: &LatentTensor, m: &SkipMask) -> Result<()> {
    check_mask_grid(l.dims(), m)
}
