//! Weights, the per-layer forward pass for every variant, and output
//! composition.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rope::RopeTable;
use super::tokens::{check_latent_mask, embed, gather_patches, route, TokenSet};
use super::window::{layer_shift, local_position};
use super::{DiTConfig, Variant, ARCHITECTURE};
use crate::codec::LatentTensor;
use crate::error::{invalid, shape_err, Error, Result};
use crate::oracle::SkipMask;
use crate::weights::WeightsFile;

const LN_EPS: f64 = 1e-5;
/// Rows per parallel matmul chunk. Fixed so results never depend on the
/// number of worker threads.
const ROW_CHUNK: usize = 128;

/// `y = x·w + b` with `w` stored `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Linear {
    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f32).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound)),
            b: Array1::from_shape_simple_fn(cols, || rng.random_range(-0.02f32..0.02)),
        }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: Array2::zeros((rows, cols)),
            b: Array1::zeros(cols),
        }
    }

    pub fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        self.apply_view(x.view())
    }

    fn apply_view(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let n = x.nrows();
        if n == 0 {
            return Array2::zeros((0, self.w.ncols()));
        }
        let parts: Vec<Array2<f32>> = (0..n.div_ceil(ROW_CHUNK))
            .into_par_iter()
            .map(|k| {
                let rows = x.slice(s![k * ROW_CHUNK..((k + 1) * ROW_CHUNK).min(n), ..]);
                let mut y = rows.dot(&self.w);
                y += &self.b;
                y
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).expect("chunks share a width")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f32>,
    pub bias: Array1<f32>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }

    fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = row.len() as f64;
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gain).zip(&self.bias) {
                *v = ((*v as f64 - mean) * inv) as f32 * g + b;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub norm1: LayerNorm,
    /// `(d, 3d)`: queries, keys, values side by side, heads contiguous.
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiTWeights {
    pub dim: usize,
    /// Width of a raw `1×2×2×C` patch, `4C`.
    pub patch_dim: usize,
    pub embed: Linear,
    pub layers: Vec<LayerWeights>,
    pub final_norm: LayerNorm,
    pub unembed: Linear,
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    #[serde(flatten)]
    config: DiTConfig,
    patch_dim: usize,
}

impl DiTWeights {
    /// Seeded random initialization; the unembedding starts at zero when
    /// `cfg.zero_unembed` is set.
    pub fn init(cfg: &DiTConfig, patch_dim: usize) -> Self {
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let embed = Linear::random(patch_dim, d, &mut rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                norm1: LayerNorm::new(d),
                qkv: Linear::random(d, 3 * d, &mut rng),
                proj: Linear::random(d, d, &mut rng),
                norm2: LayerNorm::new(d),
                ff1: Linear::random(d, 4 * d, &mut rng),
                ff2: Linear::random(4 * d, d, &mut rng),
            })
            .collect();
        let unembed = if cfg.zero_unembed {
            Linear::zeros(d, patch_dim)
        } else {
            Linear::random(d, patch_dim, &mut rng)
        };
        Self {
            dim: d,
            patch_dim,
            embed,
            layers,
            final_norm: LayerNorm::new(d),
            unembed,
        }
    }

    pub fn to_weights(&self, cfg: &DiTConfig) -> Result<WeightsFile> {
        let stored = StoredConfig {
            config: cfg.clone(),
            patch_dim: self.patch_dim,
        };
        let mut f = WeightsFile::new(ARCHITECTURE, serde_json::to_value(stored)?);
        let push_linear = |f: &mut WeightsFile, name: &str, l: &Linear| {
            f.push(&format!("{name}.weight"), &[l.w.nrows(), l.w.ncols()], l.w.iter().copied());
            f.push(&format!("{name}.bias"), &[l.b.len()], l.b.iter().copied());
        };
        let push_norm = |f: &mut WeightsFile, name: &str, n: &LayerNorm| {
            f.push(&format!("{name}.gain"), &[n.gain.len()], n.gain.iter().copied());
            f.push(&format!("{name}.bias"), &[n.bias.len()], n.bias.iter().copied());
        };
        push_linear(&mut f, "embed", &self.embed);
        for (i, l) in self.layers.iter().enumerate() {
            push_norm(&mut f, &format!("layer{i}.norm1"), &l.norm1);
            push_linear(&mut f, &format!("layer{i}.qkv"), &l.qkv);
            push_linear(&mut f, &format!("layer{i}.proj"), &l.proj);
            push_norm(&mut f, &format!("layer{i}.norm2"), &l.norm2);
            push_linear(&mut f, &format!("layer{i}.ff1"), &l.ff1);
            push_linear(&mut f, &format!("layer{i}.ff2"), &l.ff2);
        }
        push_norm(&mut f, "final_norm", &self.final_norm);
        push_linear(&mut f, "unembed", &self.unembed);
        Ok(f)
    }

    /// Weights plus the configuration they were saved with.
    pub fn from_weights(f: &WeightsFile) -> Result<(DiTConfig, Self)> {
        f.expect_architecture(ARCHITECTURE)?;
        let stored: StoredConfig = serde_json::from_value(f.manifest.config.clone())?;
        let cfg = stored.config;
        cfg.validate()?;
        let (d, p) = (cfg.dim, stored.patch_dim);
        let linear = |name: &str, rows: usize, cols: usize| -> Result<Linear> {
            Ok(Linear {
                w: Array2::from_shape_vec((rows, cols), f.tensor(&format!("{name}.weight"), &[rows, cols])?.to_vec())
                    .expect("shape checked"),
                b: Array1::from(f.tensor(&format!("{name}.bias"), &[cols])?.to_vec()),
            })
        };
        let norm = |name: &str| -> Result<LayerNorm> {
            Ok(LayerNorm {
                gain: Array1::from(f.tensor(&format!("{name}.gain"), &[d])?.to_vec()),
                bias: Array1::from(f.tensor(&format!("{name}.bias"), &[d])?.to_vec()),
            })
        };
        let layers = (0..cfg.layers)
            .map(|i| {
                Ok(LayerWeights {
                    norm1: norm(&format!("layer{i}.norm1"))?,
                    qkv: linear(&format!("layer{i}.qkv"), d, 3 * d)?,
                    proj: linear(&format!("layer{i}.proj"), d, d)?,
                    norm2: norm(&format!("layer{i}.norm2"))?,
                    ff1: linear(&format!("layer{i}.ff1"), d, 4 * d)?,
                    ff2: linear(&format!("layer{i}.ff2"), 4 * d, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = Self {
            dim: d,
            patch_dim: p,
            embed: linear("embed", p, d)?,
            layers,
            final_norm: norm("final_norm")?,
            unembed: linear("unembed", d, p)?,
        };
        Ok((cfg, weights))
    }

    fn check(&self, cfg: &DiTConfig) -> Result<()> {
        cfg.validate()?;
        if self.dim != cfg.dim || self.layers.len() != cfg.layers {
            return Err(shape_err!(
                "weights are {} wide with {} layers, config wants {} and {}",
                self.dim,
                self.layers.len(),
                cfg.dim,
                cfg.layers
            ));
        }
        Ok(())
    }
}

/// Which rows take part in each step of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Rows {
    All,
    Unskipped,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Roles {
    pub proj: Rows,
    pub query: Rows,
    pub key: Rows,
    pub ffn: Rows,
}

impl Roles {
    const DENSE: Roles = Roles {
        proj: Rows::All,
        query: Rows::All,
        key: Rows::All,
        ffn: Rows::All,
    };
    const SPARSE: Roles = Roles {
        proj: Rows::Unskipped,
        query: Rows::Unskipped,
        key: Rows::Unskipped,
        ffn: Rows::Unskipped,
    };

    /// Roles for a variant at a layer, over a token set that still contains
    /// skipped tokens. `FullSkip` never sees skipped tokens, so any role set
    /// that only touches unskipped rows describes it.
    pub fn of(variant: Variant, layer: usize) -> Roles {
        match variant {
            Variant::Dense => Roles::DENSE,
            Variant::FullSkip => Roles::SPARSE,
            Variant::AttentionMaskOnly => Roles {
                query: Rows::Unskipped,
                key: Rows::Unskipped,
                ..Roles::DENSE
            },
            Variant::QueryMaskOnly => Roles {
                query: Rows::Unskipped,
                ..Roles::DENSE
            },
            Variant::InterleavedDense if layer % 2 == 0 => Roles::DENSE,
            Variant::InterleavedDense => Roles::SPARSE,
        }
    }
}

fn pick(rows: Rows, skipped: &[bool]) -> Vec<usize> {
    (0..skipped.len())
        .filter(|&i| rows == Rows::All || !skipped[i])
        .collect()
}

/// Token rows grouped by window id, each group ordered by coordinate.
pub(crate) fn windows_of(set: &TokenSet, tiling: usize) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, id) in set.window_id.iter().enumerate() {
        groups.entry(id[tiling]).or_default().push(i);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|&i| set.orig_index[i]);
            g
        })
        .collect()
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Softmax attention for one window and all heads. `q`, `k`, `v` hold the
/// already rotated rows of the window's queries and keys.
fn window_attention(q: &Array2<f32>, k: &Array2<f32>, v: &Array2<f32>, heads: usize) -> Array2<f32> {
    let d = q.ncols();
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = Array2::zeros((q.nrows(), d));
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        for mut row in scores.axis_iter_mut(Axis(0)) {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x * scale));
            let mut sum = 0.0f32;
            row.mapv_inplace(|x| {
                let e = (x * scale - max).exp();
                sum += e;
                e
            });
            row.mapv_inplace(|e| e / sum);
        }
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
    }
    out
}

struct LayerContext<'a> {
    cfg: &'a DiTConfig,
    rope: &'a RopeTable,
    set: &'a TokenSet,
    skipped: &'a [bool],
}

fn run_layer(h: &mut Array2<f32>, ctx: &LayerContext, lw: &LayerWeights, layer: usize, windows: &[Vec<usize>]) {
    let roles = Roles::of(ctx.cfg.variant, layer);
    let d = ctx.cfg.dim;
    let hd = ctx.cfg.head_dim();
    let shift = layer_shift(ctx.cfg.window, ctx.cfg.shift, ctx.set.grid, layer);

    let proj_rows = pick(roles.proj, ctx.skipped);
    let mut slot = vec![usize::MAX; h.nrows()];
    for (k, &r) in proj_rows.iter().enumerate() {
        slot[r] = k;
    }
    let qkv = lw.qkv.apply(&lw.norm1.apply(&h.select(Axis(0), &proj_rows)));
    let is_query = |r: usize| slot[r] != usize::MAX && (roles.query == Rows::All || !ctx.skipped[r]);
    let is_key = |r: usize| slot[r] != usize::MAX && (roles.key == Rows::All || !ctx.skipped[r]);

    let per_window: Vec<(Vec<usize>, Array2<f32>)> = windows
        .par_iter()
        .filter_map(|rows| {
            let queries: Vec<usize> = rows.iter().copied().filter(|&r| is_query(r)).collect();
            let keys: Vec<usize> = rows.iter().copied().filter(|&r| is_key(r)).collect();
            if queries.is_empty() || keys.is_empty() {
                return None;
            }
            let gather = |rows: &[usize], offset: usize, rotate: bool| {
                let mut m = Array2::zeros((rows.len(), d));
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = m.row_mut(i);
                    dst.assign(&qkv.slice(s![slot[r], offset..offset + d]));
                    if rotate {
                        let pos = local_position(ctx.set.orig_index[r], ctx.cfg.window, shift);
                        let dst = dst.as_slice_mut().expect("row is contiguous");
                        for head in dst.chunks_exact_mut(hd) {
                            ctx.rope.rotate(head, pos);
                        }
                    }
                }
                m
            };
            let out = window_attention(
                &gather(&queries, 0, true),
                &gather(&keys, d, true),
                &gather(&keys, 2 * d, false),
                ctx.cfg.heads,
            );
            Some((queries, out))
        })
        .collect();

    if !per_window.is_empty() {
        let rows: Vec<usize> = per_window.iter().flat_map(|(r, _)| r.iter().copied()).collect();
        let views: Vec<_> = per_window.iter().map(|(_, o)| o.view()).collect();
        let attended = lw.proj.apply(&concatenate(Axis(0), &views).expect("same width"));
        for (i, &r) in rows.iter().enumerate() {
            let mut dst = h.row_mut(r);
            dst += &attended.row(i);
        }
    }

    let ffn_rows = pick(roles.ffn, ctx.skipped);
    if !ffn_rows.is_empty() {
        let mut hidden = lw.ff1.apply(&lw.norm2.apply(&h.select(Axis(0), &ffn_rows)));
        hidden.mapv_inplace(gelu);
        let update = lw.ff2.apply(&hidden);
        for (i, &r) in ffn_rows.iter().enumerate() {
            let mut dst = h.row_mut(r);
            dst += &update.row(i);
        }
    }
}

/// Refined `1×2×2×C` patches for every unskipped token, in token order.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedTokens {
    pub grid: [usize; 3],
    pub orig_index: Vec<[usize; 3]>,
    pub patches: Array2<f32>,
}

/// Refine every unskipped patch of `l`.
pub fn dit_forward(l: &LatentTensor, m: &SkipMask, cfg: &DiTConfig, w: &DiTWeights) -> Result<RefinedTokens> {
    check_latent_mask(l, m)?;
    dit_forward_tokens(&gather_patches(l, cfg)?, m, cfg, w)
}

/// As [`dit_forward`], starting from raw patches in any storage order.
pub fn dit_forward_tokens(
    patches: &TokenSet,
    m: &SkipMask,
    cfg: &DiTConfig,
    w: &DiTWeights,
) -> Result<RefinedTokens> {
    w.check(cfg)?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid!("cannot start {n} worker threads: {e}"))?
            .install(|| forward_inner(patches, m, cfg, w)),
        None => forward_inner(patches, m, cfg, w),
    }
}

fn forward_inner(patches: &TokenSet, m: &SkipMask, cfg: &DiTConfig, w: &DiTWeights) -> Result<RefinedTokens> {
    if m.grid_dims != patches.grid {
        return Err(shape_err!("mask grid {:?} does not match tokens {:?}", m.grid_dims, patches.grid));
    }
    let set = if cfg.variant == Variant::FullSkip {
        route(patches, m)?.0
    } else {
        patches.clone()
    };
    let skipped: Vec<bool> = (0..set.len()).map(|i| m.bits[set.linear_index(i)]).collect();
    let mut h = embed(&set, w)?.vectors;
    let rope = RopeTable::new(cfg.head_dim(), cfg.rope_base, cfg.window);
    let ctx = LayerContext {
        cfg,
        rope: &rope,
        set: &set,
        skipped: &skipped,
    };
    let tilings = [windows_of(&set, 0), windows_of(&set, 1)];
    for (layer, lw) in w.layers.iter().enumerate() {
        run_layer(&mut h, &ctx, lw, layer, &tilings[layer % 2]);
    }
    let out_rows: Vec<usize> = (0..set.len()).filter(|&i| !skipped[i]).collect();
    let residual = w.unembed.apply(&w.final_norm.apply(&h.select(Axis(0), &out_rows)));
    Ok(RefinedTokens {
        grid: set.grid,
        orig_index: out_rows.iter().map(|&i| set.orig_index[i]).collect(),
        patches: set.vectors.select(Axis(0), &out_rows) + residual,
    })
}

/// Skipped cells come verbatim from `skip_source`; every unskipped cell must
/// have a refined patch.
pub fn compose_output(refined: &RefinedTokens, skip_source: &LatentTensor, m: &SkipMask) -> Result<LatentTensor> {
    check_latent_mask(skip_source, m)?;
    if refined.grid != m.grid_dims {
        return Err(shape_err!("refined grid {:?} does not match mask {:?}", refined.grid, m.grid_dims));
    }
    let c = skip_source.channels();
    if refined.patches.ncols() != 4 * c {
        return Err(shape_err!("refined patches are {} wide, expected {}", refined.patches.ncols(), 4 * c));
    }
    let mut out = skip_source.clone();
    let mut covered = vec![false; m.len()];
    for (i, &[t, y, x]) in refined.orig_index.iter().enumerate() {
        let k = (t * m.grid_dims[1] + y) * m.grid_dims[2] + x;
        if m.bits[k] {
            return Err(invalid!("refined patch at skipped position {:?}", [t, y, x]));
        }
        covered[k] = true;
        let row = refined.patches.row(i);
        for (slot, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let dst = out.cell_mut([t, 2 * y + dy, 2 * x + dx]);
            dst.iter_mut()
                .zip(row.slice(s![slot * c..(slot + 1) * c]))
                .for_each(|(d, &s)| *d = s);
        }
    }
    if let Some(k) = (0..m.len()).find(|&k| !m.bits[k] && !covered[k]) {
        return Err(Error::Shape(format!("unskipped patch {k} has no refined output")));
    }
    Ok(out)
}
