//! Three-axis rotary position encoding.
//!
//! A head vector is cut into three consecutive even-length blocks, one per
//! axis `(t, h, w)`. Inside a block of length `n`, pair `(2k, 2k+1)` is
//! rotated by `p · base^(−2k/n)` where `p` is the position on that axis.

/// Per-axis block sizes plus cached `(cos, sin)` for positions inside one
/// window.
#[derive(Clone, Debug)]
pub struct RopeTable {
    axis_dims: [usize; 3],
    freqs: [Vec<f64>; 3],
    cached: [Vec<Vec<(f32, f32)>>; 3],
}

impl RopeTable {
    /// `head_dim` must be even; pairs are shared out evenly across axes with
    /// any remainder going to the leading ones.
    pub fn new(head_dim: usize, base: f64, window: [usize; 3]) -> Self {
        let pairs = head_dim / 2;
        let axis_dims: [usize; 3] = std::array::from_fn(|a| 2 * (pairs / 3 + usize::from(a < pairs % 3)));
        let freqs: [Vec<f64>; 3] = std::array::from_fn(|a| {
            let n = axis_dims[a];
            (0..n / 2).map(|k| base.powf(-2.0 * k as f64 / n as f64)).collect()
        });
        let cached = std::array::from_fn(|a| {
            (0..window[a])
                .map(|p| {
                    freqs[a]
                        .iter()
                        .map(|f| {
                            let angle = p as f64 * f;
                            (angle.cos() as f32, angle.sin() as f32)
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            axis_dims,
            freqs,
            cached,
        }
    }

    pub fn axis_dims(&self) -> [usize; 3] {
        self.axis_dims
    }

    /// Rotate one head vector in place.
    pub fn rotate(&self, v: &mut [f32], pos: [usize; 3]) {
        let mut offset = 0;
        for a in 0..3 {
            let block = &mut v[offset..offset + self.axis_dims[a]];
            match self.cached[a].get(pos[a]) {
                Some(trig) => rotate_block(block, trig.iter().copied()),
                None => rotate_block(
                    block,
                    self.freqs[a].iter().map(|f| {
                        let angle = pos[a] as f64 * f;
                        (angle.cos() as f32, angle.sin() as f32)
                    }),
                ),
            }
            offset += self.axis_dims[a];
        }
    }
}

fn rotate_block(block: &mut [f32], trig: impl Iterator<Item = (f32, f32)>) {
    for (pair, (c, s)) in block.chunks_exact_mut(2).zip(trig) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * c - y * s;
        pair[1] = x * s + y * c;
    }
}
