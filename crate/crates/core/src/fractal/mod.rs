//! Reference escape-time workload.
//!
//! Everything in here is pure and reentrant. The scalar renderer is the oracle
//! every other backend is compared against.

mod precision;

pub use half::f16 as Half;
pub use precision::{Precision, Real, UnknownPrecision};

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

/// Largest iteration budget a window may request (counts are 32-bit).
pub const MAX_ITER_LIMIT: u32 = i32::MAX as u32;

/// Default render size of the benchmark windows.
pub const PAPER_DIMS: GridDims = GridDims {
    width: 1600,
    height: 1072,
};

/// Reduced size used by the desk profile and most tests.
pub const DESK_DIMS: GridDims = GridDims {
    width: 400,
    height: 268,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FractalError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid grid dimensions {0}")]
    InvalidDims(String),
    #[error("pixel ({col}, {row}) outside a {width}x{height} grid")]
    PixelOutOfRange {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
    #[error("grid dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: GridDims, b: GridDims },
    #[error("unknown window {0} (built-in windows are 1, 2 and 3)")]
    UnknownWindow(usize),
}

/// Rectangle of the complex plane plus an iteration budget.
///
/// `(x1, y1)` is the upper left corner and `(x2, y2)` the lower right one, so
/// `x1 < x2` and `y1 > y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    max_iter: u32,
}

impl Window {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, max_iter: u32) -> Result<Self, FractalError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(FractalError::InvalidWindow("corners must be finite".into()));
        }
        if x2 <= x1 {
            return Err(FractalError::InvalidWindow(format!(
                "x1 ({x1}) must be < x2 ({x2})"
            )));
        }
        if y1 <= y2 {
            return Err(FractalError::InvalidWindow(format!(
                "y1 ({y1}) must be > y2 ({y2})"
            )));
        }
        if max_iter == 0 || max_iter > MAX_ITER_LIMIT {
            return Err(FractalError::InvalidWindow(format!(
                "max_iter must be in 1..={MAX_ITER_LIMIT}, got {max_iter}"
            )));
        }
        Ok(Window {
            x1,
            y1,
            x2,
            y2,
            max_iter,
        })
    }

    /// One of the three benchmark windows, numbered from 1.
    pub fn builtin(index: usize) -> Result<Self, FractalError> {
        match index {
            1 => Window::new(-2.0, 1.0, 1.0, -1.0, 80),
            2 => Window::new(-0.739, 0.1448888, -0.734, 0.1415, 1500),
            3 => Window::new(-0.737, 0.14667, -0.736, 0.146, 3000),
            other => Err(FractalError::UnknownWindow(other)),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn max_iter(&self) -> u32 {
        self.max_iter
    }

    pub fn x_step(&self, dims: GridDims) -> f64 {
        (self.x2 - self.x1) / dims.width as f64
    }

    pub fn y_step(&self, dims: GridDims) -> f64 {
        (self.y1 - self.y2) / dims.height as f64
    }

    /// Real part of column `col`, in f64.
    #[inline]
    pub fn column_re(&self, dims: GridDims, col: usize) -> f64 {
        self.x1 + col as f64 * self.x_step(dims)
    }

    /// Imaginary part of row `row`, in f64.
    #[inline]
    pub fn row_im(&self, dims: GridDims, row: usize) -> f64 {
        self.y1 - row as f64 * self.y_step(dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
}

impl GridDims {
    pub fn new(width: usize, height: usize) -> Result<Self, FractalError> {
        if width == 0 || height == 0 {
            return Err(FractalError::InvalidDims(format!("{width}x{height}")));
        }
        width
            .checked_mul(height)
            .ok_or_else(|| FractalError::InvalidDims(format!("{width}x{height} overflows")))?;
        Ok(GridDims { width, height })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for GridDims {
    type Err = FractalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FractalError::InvalidDims(format!("`{s}` (expected WIDTHxHEIGHT)"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let w = w.trim().parse().map_err(|_| bad())?;
        let h = h.trim().parse().map_err(|_| bad())?;
        GridDims::new(w, h)
    }
}

/// Per-pixel escape counts in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationGrid {
    dims: GridDims,
    max_iter: u32,
    counts: Vec<u32>,
}

impl IterationGrid {
    pub fn zeroed(dims: GridDims, max_iter: u32) -> Self {
        IterationGrid {
            dims,
            max_iter,
            counts: vec![0; dims.pixels()],
        }
    }

    /// Wraps precomputed counts. Fails when the length does not match `dims` or
    /// a count exceeds `max_iter`.
    pub fn from_counts(
        dims: GridDims,
        max_iter: u32,
        counts: Vec<u32>,
    ) -> Result<Self, FractalError> {
        if counts.len() != dims.pixels() {
            return Err(FractalError::InvalidDims(format!(
                "{} counts for a {dims} grid",
                counts.len()
            )));
        }
        if let Some(c) = counts.iter().find(|&&c| c > max_iter) {
            return Err(FractalError::InvalidWindow(format!(
                "count {c} exceeds max_iter {max_iter}"
            )));
        }
        Ok(IterationGrid {
            dims,
            max_iter,
            counts,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }
    pub fn max_iter(&self) -> u32 {
        self.max_iter
    }
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
    pub(crate) fn counts_mut(&mut self) -> &mut [u32] {
        &mut self.counts
    }
    pub fn into_counts(self) -> Vec<u32> {
        self.counts
    }

    pub fn get(&self, col: usize, row: usize) -> Option<u32> {
        (col < self.dims.width && row < self.dims.height)
            .then(|| self.counts[row * self.dims.width + col])
    }

    pub fn row(&self, row: usize) -> &[u32] {
        let w = self.dims.width;
        &self.counts[row * w..(row + 1) * w]
    }

    /// Hex SHA-256 over the dimensions and little-endian counts.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dims.width as u64).to_le_bytes());
        h.update((self.dims.height as u64).to_le_bytes());
        for c in &self.counts {
            h.update(c.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchReport {
    pub total_pixels: usize,
    pub differing_pixels: usize,
    pub max_abs_diff: u32,
    pub differing_fraction: f64,
}

/// Escape-time kernel for one point in type `T`.
///
/// Counts the iterations of `z <- z^2 + c` whose starting `|z|^2` is still
/// `<= 4`, capped at `max_iter`.
#[inline(always)]
pub fn escape_count<T: Real>(cr: T, ci: T, max_iter: u32) -> u32 {
    let mut zr = T::ZERO;
    let mut zi = T::ZERO;
    let mut iter = 0;
    while iter < max_iter {
        let zr2 = zr * zr;
        let zi2 = zi * zi;
        // Negated so a NaN magnitude counts as escaped.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(zr2 + zi2 <= T::FOUR) {
            break;
        }
        let t = zr2 - zi2 + cr;
        zi = T::TWO * zr * zi + ci;
        zr = t;
        iter += 1;
    }
    iter
}

/// Escape count of `c = c_re + i*c_im` computed in `precision`.
///
/// `c` is first rounded to the working precision.
pub fn iterate_point(c_re: f64, c_im: f64, max_iter: u32, precision: Precision) -> u32 {
    crate::dispatch_precision!(precision, T => escape_count(T::from_f64(c_re), T::from_f64(c_im), max_iter))
}

/// Complex coordinate sampled by pixel `(col, row)`.
///
/// Pixel `(0, 0)` sits exactly on the upper left corner and the step is
/// `span / pixels`. Each coordinate is computed by multiplication rather than
/// accumulation so all backends see identical inputs.
pub fn coordinate_of_pixel(
    window: &Window,
    dims: GridDims,
    col: usize,
    row: usize,
) -> Result<(f64, f64), FractalError> {
    if col >= dims.width || row >= dims.height {
        return Err(FractalError::PixelOutOfRange {
            col,
            row,
            width: dims.width,
            height: dims.height,
        });
    }
    Ok((window.column_re(dims, col), window.row_im(dims, row)))
}

/// Real parts of every column, rounded to `T`.
pub(crate) fn column_coords<T: Real>(window: &Window, dims: GridDims) -> Vec<T> {
    (0..dims.width)
        .map(|c| T::from_f64(window.column_re(dims, c)))
        .collect()
}

/// Fills one output row with the scalar kernel.
#[inline]
pub(crate) fn scalar_row<T: Real>(cres: &[T], ci: T, max_iter: u32, out: &mut [u32]) {
    for (o, &cr) in out.iter_mut().zip(cres) {
        *o = escape_count(cr, ci, max_iter);
    }
}

/// Single threaded scalar render; the reference all backends must match.
pub fn render_reference(window: &Window, dims: GridDims, precision: Precision) -> IterationGrid {
    let mut grid = IterationGrid::zeroed(dims, window.max_iter());
    render_reference_into(window, dims, precision, grid.counts_mut());
    grid
}

pub(crate) fn render_reference_into(
    window: &Window,
    dims: GridDims,
    precision: Precision,
    out: &mut [u32],
) {
    crate::dispatch_precision!(precision, T => {
        let cres = column_coords::<T>(window, dims);
        for (row, line) in out.chunks_mut(dims.width).enumerate() {
            let ci = T::from_f64(window.row_im(dims, row));
            scalar_row(&cres, ci, window.max_iter(), line);
        }
    })
}

/// Pixel-wise comparison of two grids of equal size.
pub fn grid_diff(a: &IterationGrid, b: &IterationGrid) -> Result<MismatchReport, FractalError> {
    if a.dims != b.dims {
        return Err(FractalError::DimensionMismatch {
            a: a.dims,
            b: b.dims,
        });
    }
    let mut differing = 0;
    let mut max_abs = 0;
    for (&x, &y) in a.counts.iter().zip(&b.counts) {
        if x != y {
            differing += 1;
            max_abs = max_abs.max(x.abs_diff(y));
        }
    }
    let total = a.counts.len();
    Ok(MismatchReport {
        total_pixels: total,
        differing_pixels: differing,
        max_abs_diff: max_abs,
        differing_fraction: differing as f64 / total as f64,
    })
}
