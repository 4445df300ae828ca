//! Binary PPM export.
//!
//! Output is `P6\n<width> <height>\n255\n` followed by one RGB triple per
//! pixel in row-major order, each channel `floor(255 * count / max_iter)`.

use std::fs;
use std::path::Path;

use crate::fractal::IterationGrid;

pub fn encode_ppm(grid: &IterationGrid) -> Vec<u8> {
    let dims = grid.dims();
    let max = u64::from(grid.max_iter().max(1));
    let header = format!("P6\n{} {}\n255\n", dims.width, dims.height);
    let mut out = Vec::with_capacity(header.len() + 3 * dims.pixels());
    out.extend_from_slice(header.as_bytes());
    for &c in grid.counts() {
        let v = (255 * u64::from(c) / max) as u8;
        out.extend_from_slice(&[v, v, v]);
    }
    out
}

pub fn export_ppm(grid: &IterationGrid, path: &Path) -> std::io::Result<()> {
    fs::write(path, encode_ppm(grid))
}
