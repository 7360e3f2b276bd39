//! Ground-truth skippability: a patch is skippable when its cheap
//! down-then-up reconstruction error is at most `tau`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::resample::{downsample_frame, upsample_frame};
use crate::vidio::{extract_patches, VideoTensor, CHANNELS, PATCH_LEN, PATCH_SHAPE};

pub const DEFAULT_TAU: f64 = 0.0002;
pub const DEFAULT_FACTOR: usize = 4;

const MASK_MAGIC: &[u8; 4] = b"SKPM";
const MASK_VERSION: u8 = 1;

/// Binary grid over patches; `true` marks a patch that bypasses refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipMask {
    pub grid_dims: [usize; 3],
    pub bits: Vec<bool>,
    pub tau: f64,
    pub factor: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub skipped_fraction: f64,
    /// One entry per temporal patch slice (4 frames each).
    pub per_frame_fraction: Vec<f64>,
    pub tau: f64,
    pub factor: u32,
}

impl SkipMask {
    pub fn new(grid_dims: [usize; 3], bits: Vec<bool>, tau: f64, factor: u32) -> Result<Self> {
        let n = grid_dims.iter().product::<usize>();
        if bits.len() != n {
            return Err(shape_err!(
                "mask grid {grid_dims:?} needs {n} bits, got {}",
                bits.len()
            ));
        }
        Ok(Self {
            grid_dims,
            bits,
            tau,
            factor,
        })
    }

    pub fn filled(grid_dims: [usize; 3], value: bool) -> Self {
        let n = grid_dims.iter().product();
        Self {
            grid_dims,
            bits: vec![value; n],
            tau: f64::NAN,
            factor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn skipped_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.popcount() as f64 / self.bits.len() as f64
    }

    pub fn get(&self, cell: [usize; 3]) -> bool {
        let [_, gh, gw] = self.grid_dims;
        self.bits[(cell[0] * gh + cell[1]) * gw + cell[2]]
    }

    pub fn stats(&self) -> MaskStats {
        let slice = self.grid_dims[1] * self.grid_dims[2];
        let per_frame_fraction = self
            .bits
            .chunks(slice.max(1))
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64)
            .collect();
        MaskStats {
            skipped_fraction: self.skipped_fraction(),
            per_frame_fraction,
            tau: self.tau,
            factor: self.factor,
        }
    }

    /// True when every skipped bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &SkipMask) -> bool {
        self.grid_dims == other.grid_dims
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(29 + self.bits.len().div_ceil(8));
        out.extend_from_slice(MASK_MAGIC);
        out.push(MASK_VERSION);
        for d in self.grid_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.tau.to_le_bytes());
        out.extend_from_slice(&self.factor.to_le_bytes());
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (k, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            packed[k / 8] |= 1 << (k % 8);
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 1 + 12 + 8 + 4;
        if bytes.len() < HEADER || &bytes[..4] != MASK_MAGIC {
            return Err(Error::Format("not a SKPM mask file".into()));
        }
        if bytes[4] != MASK_VERSION {
            return Err(Error::Format(format!("mask version {} unsupported", bytes[4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let grid_dims = [u32_at(5) as usize, u32_at(9) as usize, u32_at(13) as usize];
        let tau = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let factor = u32_at(25);
        let n: usize = grid_dims.iter().product();
        let body = &bytes[HEADER..];
        if body.len() != n.div_ceil(8) {
            return Err(Error::Corrupt(format!(
                "mask body has {} bytes, grid {grid_dims:?} needs {}",
                body.len(),
                n.div_ceil(8)
            )));
        }
        let bits = (0..n).map(|k| body[k / 8] >> (k % 8) & 1 == 1).collect();
        Self::new(grid_dims, bits, tau, factor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) fn check_factor(f: usize) -> Result<()> {
    if f < 2 || PATCH_SHAPE[1] % f != 0 {
        return Err(invalid!(
            "downsample factor {f} must be >= 2 and divide the {}-pixel patch",
            PATCH_SHAPE[1]
        ));
    }
    Ok(())
}

/// Mean squared error between a 4×16×16×3 patch and its down/up
/// reconstruction, over every value of the patch.
pub fn patch_mse(patch: &[f32], f: usize) -> Result<f64> {
    check_factor(f)?;
    if patch.len() != PATCH_LEN {
        return Err(shape_err!("patch has {} values, expected {PATCH_LEN}", patch.len()));
    }
    let [pt, ph, pw] = PATCH_SHAPE;
    let frame = ph * pw * CHANNELS;
    let mut coarse = vec![0.0f32; frame / (f * f)];
    let mut recon = vec![0.0f32; frame];
    let mut sum = 0.0f64;
    for t in 0..pt {
        let src = &patch[t * frame..(t + 1) * frame];
        downsample_frame(src, ph, pw, f, &mut coarse);
        upsample_frame(&coarse, ph / f, pw / f, f, &mut recon);
        sum += src
            .iter()
            .zip(&recon)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>();
    }
    Ok(sum / PATCH_LEN as f64)
}

/// Criterion value for every patch of `v` in row-major grid order.
pub fn patch_mse_map(v: &VideoTensor, f: usize) -> Result<([usize; 3], Vec<f64>)> {
    check_factor(f)?;
    let grid = extract_patches(v);
    let errs = grid
        .patches
        .par_iter()
        .map(|p| patch_mse(p, f))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid.grid_dims, errs))
}

pub fn oracle_mask(v: &VideoTensor, tau: f64, f: usize) -> Result<SkipMask> {
    if !(tau >= 0.0) {
        return Err(invalid!("tau must be non-negative, got {tau}"));
    }
    let (grid_dims, errs) = patch_mse_map(v, f)?;
    mask_from_errors(grid_dims, &errs, tau, f)
}

pub(crate) fn mask_from_errors(
    grid_dims: [usize; 3],
    errs: &[f64],
    tau: f64,
    f: usize,
) -> Result<SkipMask> {
    SkipMask::new(
        grid_dims,
        errs.iter().map(|&e| e <= tau).collect(),
        tau,
        f as u32,
    )
}

/// Skipped fraction at each threshold. `taus` must be ascending.
pub fn threshold_sweep(v: &VideoTensor, taus: &[f64], f: usize) -> Result<Vec<(f64, f64)>> {
    check_ascending(taus)?;
    let (grid_dims, errs) = patch_mse_map(v, f)?;
    taus.iter()
        .map(|&tau| Ok((tau, mask_from_errors(grid_dims, &errs, tau, f)?.skipped_fraction())))
        .collect()
}

pub(crate) fn check_ascending(taus: &[f64]) -> Result<()> {
    if taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(invalid!("thresholds must be non-negative"));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid!("thresholds must be sorted ascending"));
    }
    Ok(())
}
