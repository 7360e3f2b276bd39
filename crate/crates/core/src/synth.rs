//! Deterministic synthetic videos for demos, tests and profiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vidio::{VideoTensor, PATCH_SHAPE};

/// IID uniform noise everywhere; nothing is skippable.
pub fn noise_video(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VideoTensor::from_fn(frames, height, width, |_, _, _, _| rng.random::<f32>())
        .expect("non-empty dims")
}

/// Left half a flat color, right half IID noise. With `width` a multiple of
/// 32 the split falls on a patch boundary.
pub fn half_noise_composite(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = [0.35f32, 0.55, 0.75];
    let half = width / 2;
    VideoTensor::from_fn(frames, height, width, |_, _, x, c| {
        let n = rng.random::<f32>();
        if x < half {
            flat[c]
        } else {
            n
        }
    })
    .expect("non-empty dims")
}

/// Per-patch detail level, cycling through eight classes from flat to full
/// noise so that the skipped fraction varies smoothly with the threshold.
pub fn graded_composite(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    const AMPLITUDE: [f32; 8] = [0.0, 0.0, 0.01, 0.03, 0.06, 0.15, 0.3, 0.5];
    let [pt, ph, pw] = PATCH_SHAPE;
    let gh = height.div_ceil(ph);
    let gw = width.div_ceil(pw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<[f32; 3]> = (0..frames.div_ceil(pt) * gh * gw)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.25f32..0.75)))
        .collect();
    VideoTensor::from_fn(frames, height, width, |t, y, x, c| {
        let k = ((t / pt) * gh + y / ph) * gw + x / pw;
        let class = (k + seed as usize) % AMPLITUDE.len();
        let n = rng.random::<f32>() * 2.0 - 1.0;
        let b = base[k][c];
        match class {
            0 => b,
            // gentle ramp
            1 => b + 0.002 * ((y % ph) + (x % pw)) as f32,
            _ => b + AMPLITUDE[class] * n,
        }
    })
    .expect("non-empty dims")
}

/// One training clip: every patch is flat, a gentle ramp or noisy texture,
/// drawn at random.
pub fn mixed_clip(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    let [pt, ph, pw] = PATCH_SHAPE;
    let gh = height.div_ceil(ph);
    let gw = width.div_ceil(pw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<(u8, [f32; 3], f32, f32)> = (0..frames.div_ceil(pt) * gh * gw)
        .map(|_| {
            let class = rng.random_range(0u8..3);
            let color = std::array::from_fn(|_| rng.random_range(0.2f32..0.8));
            let slope = rng.random_range(-0.003f32..0.003);
            let amp = rng.random_range(0.1f32..0.4);
            (class, color, slope, amp)
        })
        .collect();
    VideoTensor::from_fn(frames, height, width, |t, y, x, c| {
        let (class, color, slope, amp) = cells[((t / pt) * gh + y / ph) * gw + x / pw];
        let n = rng.random::<f32>() * 2.0 - 1.0;
        match class {
            0 => color[c],
            1 => color[c] + slope * ((y % ph) as f32 - (x % pw) as f32),
            _ => color[c] + amp * n,
        }
    })
    .expect("non-empty dims")
}

/// A small moving scene: smooth sky gradient, a textured block sliding right
/// and a striped region.
pub fn scene_video(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture: Vec<f32> = (0..64 * 64 * 3).map(|_| rng.random::<f32>()).collect();
    let (bw, bh) = (width / 4, height / 3);
    VideoTensor::from_fn(frames, height, width, |t, y, x, c| {
        let sky = [0.45, 0.62, 0.9][c] - 0.25 * y as f32 / height as f32;
        let bx0 = (t * 3) % width.max(1);
        let by0 = height / 2;
        let inside_block = x >= bx0 && x < bx0 + bw && y >= by0 && y < by0 + bh;
        if inside_block {
            let (u, v) = ((x - bx0) % 64, (y - by0) % 64);
            0.3 + 0.6 * texture[(v * 64 + u) * 3 + c]
        } else if y < height / 4 && x > width / 2 {
            let phase = (x as f32 * 0.9 + t as f32).sin();
            0.5 + 0.35 * phase
        } else {
            sky
        }
    })
    .expect("non-empty dims")
}
