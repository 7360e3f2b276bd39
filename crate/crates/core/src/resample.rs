//! Spatial area downsampling (D) and half-pixel bilinear upsampling (U).
//!
//! Both act frame by frame; the temporal axis is never resampled. All
//! arithmetic is done in `f64` so that constants survive `U(D(·))` exactly.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::vidio::{VideoTensor, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    AreaDown,
    BilinearUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResampleSpec {
    pub factor: usize,
    pub mode: ResampleMode,
}

impl ResampleSpec {
    pub fn apply(&self, v: &VideoTensor) -> Result<VideoTensor> {
        match self.mode {
            ResampleMode::AreaDown => area_downsample(v, self.factor),
            ResampleMode::BilinearUp => bilinear_upsample(v, self.factor),
        }
    }
}

/// Block mean of one interleaved `h×w×3` frame.
pub(crate) fn downsample_frame(src: &[f32], h: usize, w: usize, f: usize, out: &mut [f32]) {
    let (oh, ow) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = [0.0f64; CHANNELS];
            for y in oy * f..(oy + 1) * f {
                let row = &src[(y * w + ox * f) * CHANNELS..(y * w + (ox + 1) * f) * CHANNELS];
                for px in row.chunks_exact(CHANNELS) {
                    for c in 0..CHANNELS {
                        acc[c] += px[c] as f64;
                    }
                }
            }
            let dst = (oy * ow + ox) * CHANNELS;
            for c in 0..CHANNELS {
                out[dst + c] = (acc[c] * norm) as f32;
            }
        }
    }
}

/// Interpolation taps `(lo, hi, weight_hi)` for each destination sample.
fn bilinear_taps(src_len: usize, f: usize) -> Vec<(usize, usize, f64)> {
    let last = (src_len - 1) as f64;
    (0..src_len * f)
        .map(|d| {
            let s = ((d as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub(crate) fn upsample_frame(src: &[f32], h: usize, w: usize, f: usize, out: &mut [f32]) {
    let ty = bilinear_taps(h, f);
    let tx = bilinear_taps(w, f);
    let ow = w * f;
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let dst = (oy * ow + ox) * CHANNELS;
            for c in 0..CHANNELS {
                let s = |y: usize, x: usize| src[(y * w + x) * CHANNELS + c] as f64;
                let top = (1.0 - wx) * s(y0, x0) + wx * s(y0, x1);
                let bottom = (1.0 - wx) * s(y1, x0) + wx * s(y1, x1);
                out[dst + c] = ((1.0 - wy) * top + wy * bottom).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

pub fn area_downsample(v: &VideoTensor, f: usize) -> Result<VideoTensor> {
    if f == 0 {
        return Err(invalid!("downsample factor must be positive"));
    }
    let [t, h, w] = v.dims();
    if h % f != 0 || w % f != 0 {
        return Err(invalid!(
            "frame {h}x{w} is not divisible by downsample factor {f}"
        ));
    }
    let (oh, ow) = (h / f, w / f);
    let frame_out = oh * ow * CHANNELS;
    let mut data = vec![0.0f32; t * frame_out];
    data.par_chunks_mut(frame_out)
        .enumerate()
        .for_each(|(ft, out)| downsample_frame(v.frame(ft), h, w, f, out));
    Ok(VideoTensor::from_parts_unchecked(t, oh, ow, data))
}

pub fn bilinear_upsample(v: &VideoTensor, f: usize) -> Result<VideoTensor> {
    if f == 0 {
        return Err(invalid!("upsample factor must be positive"));
    }
    if f == 1 {
        return Ok(v.clone());
    }
    let [t, h, w] = v.dims();
    let frame_out = h * f * w * f * CHANNELS;
    let mut data = vec![0.0f32; t * frame_out];
    data.par_chunks_mut(frame_out)
        .enumerate()
        .for_each(|(ft, out)| upsample_frame(v.frame(ft), h, w, f, out));
    Ok(VideoTensor::from_parts_unchecked(t, h * f, w * f, data))
}

/// `U(D(v))`, the cheap reconstruction used both by the skip criterion and
/// the skip path.
pub fn down_up(v: &VideoTensor, f: usize) -> Result<VideoTensor> {
    bilinear_upsample(&area_downsample(v, f)?, f)
}
