//! Video tensors, Y4M / raw-RGB I/O and spatiotemporal patch extraction.
//!
//! Pixels are stored as `f32` in `[0, 1]`, frame-major, then row-major, with
//! the three color channels interleaved.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};

/// Patch extent in (frames, rows, cols).
pub const PATCH_SHAPE: [usize; 3] = [4, 16, 16];
pub const CHANNELS: usize = 3;
/// Values per patch: 4·16·16·3.
pub const PATCH_LEN: usize = PATCH_SHAPE[0] * PATCH_SHAPE[1] * PATCH_SHAPE[2] * CHANNELS;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(shape_err!("empty video {frames}x{height}x{width}"));
        }
        let expected = frames * height * width * CHANNELS;
        if data.len() != expected {
            return Err(shape_err!(
                "video {frames}x{height}x{width} needs {expected} values, got {}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("pixel value {bad} outside [0, 1]"));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn constant(frames: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            frames,
            height,
            width,
            vec![value; frames * height * width * CHANNELS],
        )
    }

    /// Builds a video by evaluating `f(t, y, x, c)` at every sample. Values are
    /// clamped into `[0, 1]`.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * CHANNELS);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..CHANNELS {
                        data.push(f(t, y, x, c).clamp(0.0, 1.0));
                    }
                }
            }
        }
        Self::new(frames, height, width, data)
    }

    /// Internal constructor for values already known to be in range.
    pub(crate) fn from_parts_unchecked(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), frames * height * width * CHANNELS);
        Self {
            frames,
            height,
            width,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(T, H, W)`.
    pub fn dims(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(t, y, x, c)]
    }

    /// One frame as an interleaved `H·W·3` slice.
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.height * self.width * CHANNELS;
        &self.data[t * len..(t + 1) * len]
    }

    /// Reflect-pads every axis so each extent becomes a multiple of `multiple`.
    /// Returns the padded video and the padding added per axis.
    pub fn reflect_pad_to(&self, multiple: [usize; 3]) -> (VideoTensor, [usize; 3]) {
        let dims = self.dims();
        let pad: [usize; 3] = std::array::from_fn(|a| padding_for(dims[a], multiple[a]));
        if pad == [0, 0, 0] {
            return (self.clone(), pad);
        }
        let [pt, ph, pw] = [dims[0] + pad[0], dims[1] + pad[1], dims[2] + pad[2]];
        let mut data = Vec::with_capacity(pt * ph * pw * CHANNELS);
        for t in 0..pt {
            let st = reflect_index(t, dims[0]);
            for y in 0..ph {
                let sy = reflect_index(y, dims[1]);
                for x in 0..pw {
                    let sx = reflect_index(x, dims[2]);
                    let i = self.index(st, sy, sx, 0);
                    data.extend_from_slice(&self.data[i..i + CHANNELS]);
                }
            }
        }
        (Self::from_parts_unchecked(pt, ph, pw, data), pad)
    }

    /// Keeps the leading `dims` region.
    pub fn crop(&self, dims: [usize; 3]) -> Result<VideoTensor> {
        let [t, h, w] = dims;
        if t == 0 || h == 0 || w == 0 || t > self.frames || h > self.height || w > self.width {
            return Err(shape_err!(
                "cannot crop {:?} to {:?}",
                self.dims(),
                dims
            ));
        }
        if dims == self.dims() {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(t * h * w * CHANNELS);
        for ft in 0..t {
            for y in 0..h {
                let i = self.index(ft, y, 0, 0);
                data.extend_from_slice(&self.data[i..i + w * CHANNELS]);
            }
        }
        Ok(Self::from_parts_unchecked(t, h, w, data))
    }
}

pub(crate) fn padding_for(len: usize, multiple: usize) -> usize {
    len.div_ceil(multiple) * multiple - len
}

/// Mirror index without repeating the edge sample: `n, n+1, ...` map to
/// `n-2, n-3, ...`. Folds repeatedly when the padding exceeds the extent.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// The video cut into non-overlapping 4×16×16×3 patches.
///
/// Each patch is stored as a flat `4·16·16·3` vector in (t, y, x, c) order;
/// patches are listed in row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub patch_shape: [usize; 3],
    pub grid_dims: [usize; 3],
    pub pad: [usize; 3],
    pub patches: Vec<Vec<f32>>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Row-major linear index of grid cell `(it, ih, iw)`.
    pub fn linear(&self, cell: [usize; 3]) -> usize {
        (cell[0] * self.grid_dims[1] + cell[1]) * self.grid_dims[2] + cell[2]
    }
}

pub fn patch_grid_dims(dims: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| dims[a].div_ceil(PATCH_SHAPE[a]))
}

pub fn extract_patches(v: &VideoTensor) -> PatchGrid {
    let (padded, pad) = v.reflect_pad_to(PATCH_SHAPE);
    let grid_dims = patch_grid_dims(v.dims());
    let [gt, gh, gw] = grid_dims;
    let [pt, ph, pw] = PATCH_SHAPE;
    let patches = (0..gt * gh * gw)
        .into_par_iter()
        .map(|k| {
            let (it, ih, iw) = (k / (gh * gw), (k / gw) % gh, k % gw);
            let mut patch = Vec::with_capacity(PATCH_LEN);
            for t in 0..pt {
                for y in 0..ph {
                    let i = padded.index(it * pt + t, ih * ph + y, iw * pw, 0);
                    patch.extend_from_slice(&padded.data[i..i + pw * CHANNELS]);
                }
            }
            patch
        })
        .collect();
    PatchGrid {
        patch_shape: PATCH_SHAPE,
        grid_dims,
        pad,
        patches,
    }
}

/// Reassembles patches and crops the padding away.
pub fn compose_patches(g: &PatchGrid, original_dims: [usize; 3]) -> Result<VideoTensor> {
    if g.patch_shape != PATCH_SHAPE {
        return Err(shape_err!("patch shape {:?} unsupported", g.patch_shape));
    }
    let expected_grid = patch_grid_dims(original_dims);
    let expected_pad: [usize; 3] =
        std::array::from_fn(|a| padding_for(original_dims[a], PATCH_SHAPE[a]));
    if original_dims.contains(&0) || g.grid_dims != expected_grid || g.pad != expected_pad {
        return Err(shape_err!(
            "grid {:?} (pad {:?}) does not match video dims {:?}",
            g.grid_dims,
            g.pad,
            original_dims
        ));
    }
    let count = expected_grid.iter().product::<usize>();
    if g.patches.len() != count || g.patches.iter().any(|p| p.len() != PATCH_LEN) {
        return Err(shape_err!("expected {count} patches of {PATCH_LEN} values"));
    }
    let [t_len, h_len, w_len] = original_dims;
    let [_, gh, gw] = g.grid_dims;
    let [pt, ph, pw] = PATCH_SHAPE;
    let mut data = vec![0.0f32; t_len * h_len * w_len * CHANNELS];
    for (k, patch) in g.patches.iter().enumerate() {
        let (it, ih, iw) = (k / (gh * gw), (k / gw) % gh, k % gw);
        for t in 0..pt {
            let ft = it * pt + t;
            if ft >= t_len {
                break;
            }
            for y in 0..ph {
                let fy = ih * ph + y;
                if fy >= h_len {
                    break;
                }
                let x0 = iw * pw;
                let cols = pw.min(w_len - x0);
                let src = (t * ph + y) * pw * CHANNELS;
                let dst = ((ft * h_len + fy) * w_len + x0) * CHANNELS;
                data[dst..dst + cols * CHANNELS]
                    .copy_from_slice(&patch[src..src + cols * CHANNELS]);
            }
        }
    }
    VideoTensor::new(t_len, h_len, w_len, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoFormat {
    Y4m,
    RawRgb,
}

impl VideoFormat {
    /// `.y4m` selects Y4M, anything else raw RGB with a JSON sidecar.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("y4m") => VideoFormat::Y4m,
            _ => VideoFormat::RawRgb,
        }
    }
}

/// Sidecar describing a raw planar f32 video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

/// `<path>.json`, e.g. `clip.rgb` → `clip.rgb.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_video(path: &Path, format: VideoFormat) -> Result<VideoTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        VideoFormat::Y4m => parse_y4m(&bytes),
        VideoFormat::RawRgb => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: RawSidecar = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", side.display())))?;
            parse_raw_rgb(&bytes, meta)
        }
    }
}

pub fn save_video(v: &VideoTensor, path: &Path, format: VideoFormat) -> Result<()> {
    match format {
        VideoFormat::Y4m => {
            let mut out = Vec::new();
            write_y4m(v, &mut out).map_err(|e| Error::io(path, e))?;
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        VideoFormat::RawRgb => {
            let side = sidecar_path(path);
            let meta = RawSidecar {
                t: v.frames,
                h: v.height,
                w: v.width,
                c: CHANNELS,
            };
            fs::write(path, raw_rgb_bytes(v)).map_err(|e| Error::io(path, e))?;
            fs::write(&side, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&side, e))
        }
    }
}

/// Decodes planar f32 LE samples: per frame, one `H·W` plane per channel.
pub fn parse_raw_rgb(bytes: &[u8], meta: RawSidecar) -> Result<VideoTensor> {
    if meta.c != CHANNELS {
        return Err(Error::Format(format!("raw video must have 3 channels, got {}", meta.c)));
    }
    let RawSidecar { t, h, w, .. } = meta;
    let count = t * h * w * CHANNELS;
    if bytes.len() != count * 4 {
        return Err(Error::Corrupt(format!(
            "raw video {t}x{h}x{w} needs {} bytes, file has {}",
            count * 4,
            bytes.len()
        )));
    }
    let plane = h * w;
    let mut data = vec![0.0f32; count];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let (frame, rest) = (i / (plane * CHANNELS), i % (plane * CHANNELS));
        let (c, pix) = (rest / plane, rest % plane);
        data[(frame * plane + pix) * CHANNELS + c] = value;
    }
    VideoTensor::new(t, h, w, data).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Corrupt(msg),
        other => other,
    })
}

pub fn raw_rgb_bytes(v: &VideoTensor) -> Vec<u8> {
    let plane = v.height * v.width;
    let mut out = Vec::with_capacity(v.data.len() * 4);
    for t in 0..v.frames {
        for c in 0..CHANNELS {
            for pix in 0..plane {
                out.extend_from_slice(&v.data[(t * plane + pix) * CHANNELS + c].to_le_bytes());
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chroma {
    C420,
    C444,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColorRange {
    Full,
    Limited,
}

struct Y4mHeader {
    width: usize,
    height: usize,
    chroma: Chroma,
    range: ColorRange,
}

fn parse_y4m_header(line: &str) -> Result<Y4mHeader> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Error::Format("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height) = (None, None);
    let mut chroma = Chroma::C420;
    let mut range = ColorRange::Full;
    for tok in tokens {
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = val.parse::<usize>().ok(),
            "H" => height = val.parse::<usize>().ok(),
            "C" => {
                chroma = match val {
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                    "444" => Chroma::C444,
                    other => {
                        return Err(Error::Format(format!(
                            "colorspace C{other} not supported (8-bit 420 or 444 only)"
                        )))
                    }
                }
            }
            "X" => {
                if let Some(r) = val.strip_prefix("COLORRANGE=") {
                    range = match r {
                        "FULL" => ColorRange::Full,
                        "LIMITED" => ColorRange::Limited,
                        other => {
                            return Err(Error::Format(format!("unknown color range {other}")))
                        }
                    };
                }
            }
            // frame rate, interlacing and aspect ratio do not affect decoding
            "F" | "I" | "A" => {}
            _ => {}
        }
    }
    match (width, height) {
        (Some(width), Some(height)) if width > 0 && height > 0 => Ok(Y4mHeader {
            width,
            height,
            chroma,
            range,
        }),
        _ => Err(Error::Format("Y4M header lacks valid W/H".into())),
    }
}

fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8, range: ColorRange) -> [f32; 3] {
    let (y, cb, cr) = match range {
        ColorRange::Full => (y as f64, cb as f64 - 128.0, cr as f64 - 128.0),
        ColorRange::Limited => (
            (y as f64 - 16.0) * 255.0 / 219.0,
            (cb as f64 - 128.0) * 255.0 / 224.0,
            (cr as f64 - 128.0) * 255.0 / 224.0,
        ),
    };
    let r = y + 1.402 * cr;
    let g = y - 0.344_136 * cb - 0.714_136 * cr;
    let b = y + 1.772 * cb;
    [r, g, b].map(|v| (v.clamp(0.0, 255.0) / 255.0) as f32)
}

pub fn parse_y4m(bytes: &[u8]) -> Result<VideoTensor> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("Y4M header not terminated".into()))?;
    let header_text = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("Y4M header is not ASCII".into()))?;
    let header = parse_y4m_header(header_text)?;
    let (w, h) = (header.width, header.height);
    let (cw, ch) = match header.chroma {
        Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
        Chroma::C444 => (w, h),
    };
    let frame_len = w * h + 2 * cw * ch;

    let mut pos = nl + 1;
    let mut data = Vec::new();
    let mut frames = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if !rest.starts_with(b"FRAME") {
            return Err(Error::Corrupt(format!("expected FRAME marker at byte {pos}")));
        }
        let marker_end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Corrupt("unterminated FRAME marker".into()))?;
        pos += marker_end + 1;
        if bytes.len() < pos + frame_len {
            return Err(Error::Corrupt(format!(
                "frame {frames} truncated: need {frame_len} bytes, have {}",
                bytes.len() - pos
            )));
        }
        let luma = &bytes[pos..pos + w * h];
        let cb = &bytes[pos + w * h..pos + w * h + cw * ch];
        let cr = &bytes[pos + w * h + cw * ch..pos + frame_len];
        for yy in 0..h {
            for xx in 0..w {
                let ci = match header.chroma {
                    Chroma::C420 => (yy / 2) * cw + xx / 2,
                    Chroma::C444 => yy * cw + xx,
                };
                data.extend_from_slice(&ycbcr_to_rgb(
                    luma[yy * w + xx],
                    cb[ci],
                    cr[ci],
                    header.range,
                ));
            }
        }
        pos += frame_len;
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Corrupt("Y4M stream has no frames".into()));
    }
    VideoTensor::new(frames, h, w, data)
}

/// Writes 8-bit 4:4:4 full-range Y4M.
pub fn write_y4m(v: &VideoTensor, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "YUV4MPEG2 W{} H{} F25:1 Ip A1:1 C444 XCOLORRANGE=FULL",
        v.width, v.height
    )?;
    let plane = v.width * v.height;
    let mut planes = vec![0u8; 3 * plane];
    for t in 0..v.frames {
        out.write_all(b"FRAME\n")?;
        for (pix, rgb) in v.frame(t).chunks_exact(CHANNELS).enumerate() {
            let [r, g, b] = [rgb[0], rgb[1], rgb[2]].map(|x| x as f64 * 255.0);
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            let cb = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
            let cr = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
            for (p, val) in [y, cb, cr].into_iter().enumerate() {
                planes[p * plane + pix] = val.round().clamp(0.0, 255.0) as u8;
            }
        }
        out.write_all(&planes)?;
    }
    Ok(())
}
