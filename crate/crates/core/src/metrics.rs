//! Full-reference quality metrics on unit-scale video.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::vidio::{VideoTensor, CHANNELS};

/// Reported PSNR when the error vanishes.
pub const PSNR_CAP_DB: f64 = 99.0;
const ZERO_MSE: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl QualityReport {
    pub fn measure(a: &VideoTensor, b: &VideoTensor) -> Result<Self> {
        let mse = mse(a, b)?;
        Ok(Self {
            psnr: psnr_from_mse(mse),
            ssim: ssim(a, b)?,
            mse,
        })
    }
}

fn check_same(a: &VideoTensor, b: &VideoTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err!("videos differ in size: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

pub fn mse(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= ZERO_MSE {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak is 1.0.
pub fn psnr(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Gaussian-weighted mean over every valid 11×11 window of a `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn plane_ssim(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (filter_valid(a, h, w, k), filter_valid(b, h, w, k));
    let (e_aa, e_bb, e_ab) = (
        filter_valid(&aa, h, w, k),
        filter_valid(&bb, h, w, k),
        filter_valid(&ab, h, w, k),
    );
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM over frames and channels, Gaussian 11×11 window (σ = 1.5),
/// evaluated only where the window fits inside the frame.
pub fn ssim(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    check_same(a, b)?;
    let [t, h, w] = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let k = gaussian_kernel();
    let per_plane: Vec<f64> = (0..t * CHANNELS)
        .into_par_iter()
        .map(|i| {
            let (ft, c) = (i / CHANNELS, i % CHANNELS);
            let plane = |v: &VideoTensor| -> Vec<f64> {
                v.frame(ft).chunks_exact(CHANNELS).map(|px| px[c] as f64).collect()
            };
            plane_ssim(&plane(a), &plane(b), h, w, &k)
        })
        .collect();
    Ok(per_plane.iter().sum::<f64>() / per_plane.len() as f64)
}
