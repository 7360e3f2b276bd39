//! Deterministic stand-in for a video VAE: an orthonormal 3D Haar transform
//! over 4×8×8 pixel blocks with low-frequency coefficient truncation.
//!
//! A latent cell covers one 4×8×8 block and holds `K` coefficients for each of
//! the three color channels (`C = 3K`). Cells are laid out `(t, h, w, C)`,
//! row-major, channel `c·K + j` being the `j`-th retained coefficient of color
//! `c` in the fixed frequency order.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::oracle::SkipMask;
use crate::vidio::{VideoTensor, CHANNELS};

pub const BLOCK: [usize; 3] = [4, 8, 8];
pub const BLOCK_LEN: usize = BLOCK[0] * BLOCK[1] * BLOCK[2];
pub const DEFAULT_KEEP: usize = 16;

const LATENT_MAGIC: &[u8; 4] = b"SKPL";

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    dims: [usize; 3],
    keep: usize,
    coeffs: Vec<f32>,
}

impl LatentTensor {
    pub fn new(dims: [usize; 3], keep: usize, coeffs: Vec<f32>) -> Result<Self> {
        check_keep(keep)?;
        let expected = dims.iter().product::<usize>() * CHANNELS * keep;
        if coeffs.len() != expected {
            return Err(shape_err!(
                "latent {dims:?} with K={keep} needs {expected} coefficients, got {}",
                coeffs.len()
            ));
        }
        Ok(Self { dims, keep, coeffs })
    }

    pub fn zeros(dims: [usize; 3], keep: usize) -> Result<Self> {
        Self::new(dims, keep, vec![0.0; dims.iter().product::<usize>() * CHANNELS * keep])
    }

    /// `(t, h, w)` cell counts.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    pub fn channels(&self) -> usize {
        CHANNELS * self.keep
    }

    pub fn coeffs(&self) -> &[f32] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f32] {
        &mut self.coeffs
    }

    pub fn cell_offset(&self, cell: [usize; 3]) -> usize {
        ((cell[0] * self.dims[1] + cell[1]) * self.dims[2] + cell[2]) * self.channels()
    }

    pub fn cell(&self, cell: [usize; 3]) -> &[f32] {
        let o = self.cell_offset(cell);
        &self.coeffs[o..o + self.channels()]
    }

    pub fn cell_mut(&mut self, cell: [usize; 3]) -> &mut [f32] {
        let o = self.cell_offset(cell);
        let c = self.channels();
        &mut self.coeffs[o..o + c]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.coeffs.len());
        out.extend_from_slice(LATENT_MAGIC);
        for d in self.dims.iter().copied().chain([self.channels()]) {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.keep as u32).to_le_bytes());
        for v in &self.coeffs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..4] != LATENT_MAGIC {
            return Err(Error::Format("not a SKPL latent file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let dims = [u32_at(4), u32_at(8), u32_at(12)];
        let (channels, keep) = (u32_at(16), u32_at(20));
        if channels != CHANNELS * keep {
            return Err(Error::Corrupt(format!("channel count {channels} != 3·K (K={keep})")));
        }
        let body = &bytes[24..];
        if body.len() % 4 != 0 {
            return Err(Error::Corrupt("latent body not a whole number of f32".into()));
        }
        let coeffs = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dims, keep, coeffs).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_keep(keep: usize) -> Result<()> {
    if keep == 0 || keep > BLOCK_LEN {
        return Err(invalid!("keep must be in 1..={BLOCK_LEN}, got {keep}"));
    }
    Ok(())
}

/// Latent cell counts for a `(T, H, W)` video.
pub fn latent_dims(video_dims: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| video_dims[a].div_ceil(BLOCK[a]))
}

fn subband_level(i: usize) -> usize {
    if i == 0 {
        0
    } else {
        usize::BITS as usize - i.leading_zeros() as usize
    }
}

/// Block coefficient indices (flat, `t·64 + h·8 + w`) sorted by total subband
/// level, ties broken lexicographically on `(t, h, w)`.
pub fn frequency_order() -> &'static [usize] {
    static ORDER: OnceLock<Vec<usize>> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut idx: Vec<(usize, usize)> = (0..BLOCK_LEN)
            .map(|i| {
                let (t, h, w) = (i / 64, (i / 8) % 8, i % 8);
                (subband_level(t) + subband_level(h) + subband_level(w), i)
            })
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|(_, i)| i).collect()
    })
}

/// Full dyadic orthonormal Haar analysis, in place, over `n` samples spaced
/// `stride` apart. Output: `[DC, level-1 detail, level-2 details, ...]`.
fn haar_forward(buf: &mut [f64], start: usize, stride: usize, n: usize, tmp: &mut [f64]) {
    let mut len = n;
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let a = buf[start + 2 * i * stride];
            let b = buf[start + (2 * i + 1) * stride];
            tmp[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            tmp[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        for i in 0..len {
            buf[start + i * stride] = tmp[i];
        }
        len = half;
    }
}

fn haar_inverse(buf: &mut [f64], start: usize, stride: usize, n: usize, tmp: &mut [f64]) {
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for i in 0..half {
            let a = buf[start + i * stride];
            let d = buf[start + (half + i) * stride];
            tmp[2 * i] = (a + d) * std::f64::consts::FRAC_1_SQRT_2;
            tmp[2 * i + 1] = (a - d) * std::f64::consts::FRAC_1_SQRT_2;
        }
        for i in 0..len {
            buf[start + i * stride] = tmp[i];
        }
        len *= 2;
    }
}

/// Separable 3D transform of a `4×8×8` block stored `t·64 + h·8 + w`.
fn block_forward(block: &mut [f64; BLOCK_LEN]) {
    let mut tmp = [0.0f64; 8];
    for t in 0..4 {
        for h in 0..8 {
            haar_forward(block, t * 64 + h * 8, 1, 8, &mut tmp);
        }
        for w in 0..8 {
            haar_forward(block, t * 64 + w, 8, 8, &mut tmp);
        }
    }
    for hw in 0..64 {
        haar_forward(block, hw, 64, 4, &mut tmp);
    }
}

fn block_inverse(block: &mut [f64; BLOCK_LEN]) {
    let mut tmp = [0.0f64; 8];
    for hw in 0..64 {
        haar_inverse(block, hw, 64, 4, &mut tmp);
    }
    for t in 0..4 {
        for w in 0..8 {
            haar_inverse(block, t * 64 + w, 8, 8, &mut tmp);
        }
        for h in 0..8 {
            haar_inverse(block, t * 64 + h * 8, 1, 8, &mut tmp);
        }
    }
}

pub fn encode(v: &VideoTensor, keep: usize) -> Result<LatentTensor> {
    check_keep(keep)?;
    let (padded, _) = v.reflect_pad_to(BLOCK);
    let dims = latent_dims(v.dims());
    let [_, lh, lw] = dims;
    let channels = CHANNELS * keep;
    let order = frequency_order();
    let mut coeffs = vec![0.0f32; dims.iter().product::<usize>() * channels];
    coeffs
        .par_chunks_mut(channels)
        .enumerate()
        .for_each(|(k, cell)| {
            let (bt, bh, bw) = (k / (lh * lw), (k / lw) % lh, k % lw);
            let mut block = [0.0f64; BLOCK_LEN];
            for c in 0..CHANNELS {
                for t in 0..4 {
                    for y in 0..8 {
                        for x in 0..8 {
                            block[t * 64 + y * 8 + x] =
                                padded.at(bt * 4 + t, bh * 8 + y, bw * 8 + x, c) as f64;
                        }
                    }
                }
                block_forward(&mut block);
                for (j, &src) in order[..keep].iter().enumerate() {
                    cell[c * keep + j] = block[src] as f32;
                }
            }
        });
    LatentTensor::new(dims, keep, coeffs)
}

/// Inverse transform with zero-filled dropped coefficients, clamped to
/// `[0, 1]` and cropped to `dims`.
pub fn decode(l: &LatentTensor, dims: [usize; 3]) -> Result<VideoTensor> {
    if dims.contains(&0) || latent_dims(dims) != l.dims {
        return Err(shape_err!(
            "latent {:?} cannot decode to video {:?}",
            l.dims,
            dims
        ));
    }
    let [lt, lh, lw] = l.dims;
    let (ph, pw) = (lh * 8, lw * 8);
    let keep = l.keep;
    let order = frequency_order();
    let blocks: Vec<Vec<f32>> = (0..lt * lh * lw)
        .into_par_iter()
        .map(|k| {
            let cell = &l.coeffs[k * l.channels()..(k + 1) * l.channels()];
            let mut pixels = vec![0.0f32; BLOCK_LEN * CHANNELS];
            for c in 0..CHANNELS {
                let mut block = [0.0f64; BLOCK_LEN];
                for (j, &dst) in order[..keep].iter().enumerate() {
                    block[dst] = cell[c * keep + j] as f64;
                }
                block_inverse(&mut block);
                for (i, v) in block.iter().enumerate() {
                    pixels[i * CHANNELS + c] = v.clamp(0.0, 1.0) as f32;
                }
            }
            pixels
        })
        .collect();
    let mut data = vec![0.0f32; lt * 4 * ph * pw * CHANNELS];
    for (k, pixels) in blocks.iter().enumerate() {
        let (bt, bh, bw) = (k / (lh * lw), (k / lw) % lh, k % lw);
        for t in 0..4 {
            for y in 0..8 {
                let dst = (((bt * 4 + t) * ph + bh * 8 + y) * pw + bw * 8) * CHANNELS;
                let src = (t * 64 + y * 8) * CHANNELS;
                data[dst..dst + 8 * CHANNELS].copy_from_slice(&pixels[src..src + 8 * CHANNELS]);
            }
        }
    }
    VideoTensor::from_parts_unchecked(lt * 4, ph, pw, data).crop(dims)
}

/// Replaces the latent cells under every skipped patch with the matching
/// cells of `l_ud`. One 4×16×16 pixel patch owns a 1×2×2 group of cells.
pub fn latent_swap(l_hr: &LatentTensor, l_ud: &LatentTensor, m: &SkipMask) -> Result<LatentTensor> {
    if l_hr.dims != l_ud.dims || l_hr.keep != l_ud.keep {
        return Err(shape_err!(
            "latents differ: {:?}/K={} vs {:?}/K={}",
            l_hr.dims,
            l_hr.keep,
            l_ud.dims,
            l_ud.keep
        ));
    }
    check_mask_grid(l_hr.dims, m)?;
    let mut out = l_hr.clone();
    for_each_masked_cell(m, true, |cell| {
        out.cell_mut(cell).copy_from_slice(l_ud.cell(cell));
    });
    Ok(out)
}

pub(crate) fn check_mask_grid(latent: [usize; 3], m: &SkipMask) -> Result<()> {
    let [t, h, w] = latent;
    if h % 2 != 0 || w % 2 != 0 || m.grid_dims != [t, h / 2, w / 2] {
        return Err(shape_err!(
            "mask grid {:?} does not tile latent {latent:?} in 1x2x2 cells",
            m.grid_dims
        ));
    }
    Ok(())
}

/// Calls `f` for each latent cell whose owning patch has mask bit `value`.
pub(crate) fn for_each_masked_cell(m: &SkipMask, value: bool, mut f: impl FnMut([usize; 3])) {
    let [_, gh, gw] = m.grid_dims;
    for (k, _) in m.bits.iter().enumerate().filter(|(_, &b)| b == value) {
        let (it, ih, iw) = (k / (gh * gw), (k / gw) % gh, k % gw);
        for dh in 0..2 {
            for dw in 0..2 {
                f([it, 2 * ih + dh, 2 * iw + dw]);
            }
        }
    }
}
