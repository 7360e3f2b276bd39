//! Window tilings of the token grid.
//!
//! With shift `s` along an axis of window length `w`, cell `c` belongs to
//! window `⌊(c + s)/w⌋`. Boundary windows are partial and nothing wraps
//! around, so a shifted axis of length `g` has `⌈(g + s)/w⌉` windows.

/// Shift used by `layer`: zero on even layers, half a window on odd ones.
/// Axes the window already spans in one piece are never shifted.
pub fn layer_shift(window: [usize; 3], shift: bool, grid: [usize; 3], layer: usize) -> [usize; 3] {
    if !shift || layer % 2 == 0 {
        return [0; 3];
    }
    std::array::from_fn(|a| if grid[a] > window[a] { window[a] / 2 } else { 0 })
}

pub fn window_counts(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| (grid[a] + shift[a]).div_ceil(window[a]))
}

/// Window id of every grid cell, row-major over the grid.
pub fn assign_windows(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<u32> {
    let counts = window_counts(grid, window, shift);
    let mut ids = Vec::with_capacity(grid.iter().product());
    for t in 0..grid[0] {
        for y in 0..grid[1] {
            for x in 0..grid[2] {
                ids.push(window_of([t, y, x], window, shift, counts));
            }
        }
    }
    ids
}

pub(crate) fn window_of(cell: [usize; 3], window: [usize; 3], shift: [usize; 3], counts: [usize; 3]) -> u32 {
    let w: [usize; 3] = std::array::from_fn(|a| (cell[a] + shift[a]) / window[a]);
    ((w[0] * counts[1] + w[1]) * counts[2] + w[2]) as u32
}

/// Coordinate of `cell` inside its window's full-size frame. Cells in a
/// clipped boundary window keep the offsets they would have in a whole one.
pub fn local_position(cell: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| (cell[a] + shift[a]) % window[a])
}
