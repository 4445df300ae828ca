//! Parallel execution paradigms over the reference workload.
//!
//! Every backend must reproduce [`crate::render_reference`] bit for bit. None
//! of them fuse multiplies and adds; Rust never contracts float expressions
//! and the device kernel disables contraction explicitly.

mod chunk;
pub mod device;
mod kernel;
mod lanes;
pub mod virtual_device;

pub use chunk::{Chunk, ChunkQueue, DEFAULT_CHUNK_LINES};
pub use device::{
    render_device, render_device_timed, Access, ComputeApi, DeviceError, DeviceRequest, DeviceRun,
    DeviceTimings, Handle, KernelArg, ObjectKind,
};
pub use kernel::{KernelParams, KernelSource, KERNEL_NAME, KERNEL_TEMPLATE};
pub use lanes::{escape_lanes, LANE_COUNTS};
pub use virtual_device::VirtualDevice;

use std::fmt;
use std::str::FromStr;

use crate::fractal::{
    column_coords, render_reference_into, GridDims, IterationGrid, Precision, Window,
};

/// Vector widths the device kernel can be generated for.
pub const DEVICE_WIDTHS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("could not start worker threads: {0}")]
    Resource(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// How a render is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendKind {
    Scalar,
    Threaded { threads: usize },
    Vector { lanes: usize, threads: usize },
    Device { vector_width: usize },
}

impl BackendKind {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidConfig(m));
        match *self {
            BackendKind::Scalar => Ok(()),
            BackendKind::Threaded { threads } | BackendKind::Vector { threads, .. }
                if threads == 0 =>
            {
                bad("thread count must be >= 1".into())
            }
            BackendKind::Vector { lanes, .. } if !LANE_COUNTS.contains(&lanes) => {
                bad(format!("lane count {lanes} not in {LANE_COUNTS:?}"))
            }
            BackendKind::Device { vector_width } if !DEVICE_WIDTHS.contains(&vector_width) => bad(
                format!("vector width {vector_width} not in {DEVICE_WIDTHS:?}"),
            ),
            _ => Ok(()),
        }
    }

    /// Worker threads used; 1 for scalar and device runs.
    pub fn threads(&self) -> usize {
        match *self {
            BackendKind::Threaded { threads } | BackendKind::Vector { threads, .. } => threads,
            BackendKind::Scalar | BackendKind::Device { .. } => 1,
        }
    }

    /// Method name without the thread count.
    pub fn method(&self) -> String {
        match *self {
            BackendKind::Scalar => "scalar".into(),
            BackendKind::Threaded { .. } => "threaded".into(),
            BackendKind::Vector { lanes, .. } => format!("vector:{lanes}"),
            BackendKind::Device { vector_width } => format!("device:{vector_width}"),
        }
    }

    pub fn is_device(&self) -> bool {
        matches!(self, BackendKind::Device { .. })
    }

    /// Allocating form of [`BackendKind::render_cpu_into`].
    pub fn render_cpu(
        &self,
        window: &Window,
        dims: GridDims,
        precision: Precision,
    ) -> Result<IterationGrid, BackendError> {
        let mut grid = IterationGrid::zeroed(dims, window.max_iter());
        self.render_cpu_into(window, dims, precision, grid.counts_mut())?;
        Ok(grid)
    }

    /// Renders on the CPU. Device kinds are rejected; they go through
    /// [`render_device`].
    pub fn render_cpu_into(
        &self,
        window: &Window,
        dims: GridDims,
        precision: Precision,
        out: &mut [u32],
    ) -> Result<(), BackendError> {
        self.validate()?;
        match *self {
            BackendKind::Scalar => {
                render_reference_into(window, dims, precision, out);
                Ok(())
            }
            BackendKind::Threaded { threads } => threaded_into(
                window,
                dims,
                precision,
                threads,
                DEFAULT_CHUNK_LINES,
                1,
                out,
            ),
            BackendKind::Vector { lanes, threads } => threaded_into(
                window,
                dims,
                precision,
                threads,
                DEFAULT_CHUNK_LINES,
                lanes,
                out,
            ),
            BackendKind::Device { .. } => Err(BackendError::InvalidConfig(
                "device backends need a configured native bridge".into(),
            )),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BackendKind::Scalar => f.write_str("scalar"),
            BackendKind::Threaded { threads } => write!(f, "threaded:{threads}"),
            BackendKind::Vector { lanes, threads: 1 } => write!(f, "vector:{lanes}"),
            BackendKind::Vector { lanes, threads } => write!(f, "vector:{lanes},threads:{threads}"),
            BackendKind::Device { vector_width } => write!(f, "device:{vector_width}"),
        }
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;

    /// Parses `scalar`, `threaded:N`, `vector:L[,threads:N]` or `device:W`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            BackendError::InvalidConfig(format!(
                "`{s}` (expected scalar, threaded:N, vector:L[,threads:N] or device:W)"
            ))
        };
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        let s = s.trim();
        let (head, tail) = match s.split_once(',') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let kind = match head.split_once(':') {
            None if head == "scalar" => BackendKind::Scalar,
            Some(("threaded", n)) => BackendKind::Threaded { threads: num(n)? },
            Some(("vector", l)) => {
                let threads = match tail.map(|t| t.trim().split_once(':')) {
                    None => 1,
                    Some(Some(("threads", n))) => num(n)?,
                    Some(_) => return Err(bad()),
                };
                BackendKind::Vector {
                    lanes: num(l)?,
                    threads,
                }
            }
            Some(("device", w)) => BackendKind::Device {
                vector_width: num(w)?,
            },
            _ => return Err(bad()),
        };
        if tail.is_some() && !matches!(kind, BackendKind::Vector { .. }) {
            return Err(bad());
        }
        kind.validate()?;
        Ok(kind)
    }
}

fn threaded_into(
    window: &Window,
    dims: GridDims,
    precision: Precision,
    n_threads: usize,
    chunk_lines: usize,
    lanes: usize,
    out: &mut [u32],
) -> Result<(), BackendError> {
    let queue = ChunkQueue::build(dims.height, chunk_lines)?;
    crate::dispatch_precision!(precision, T => {
        let kernel = lanes::row_kernel::<T>(lanes)
            .ok_or_else(|| BackendError::InvalidConfig(format!("unsupported lane count {lanes}")))?;
        let cres = column_coords::<T>(window, dims);
        let max_iter = window.max_iter();
        chunk::run_queue(&queue, dims.width, out, n_threads, |row, line| {
            let ci = <T as crate::fractal::Real>::from_f64(window.row_im(dims, row));
            kernel(&cres, ci, max_iter, line)
        })
    })
}

/// Producer-consumer render: `n_threads` workers pull bands of
/// `chunk_lines` rows from a shared FIFO until it is empty.
pub fn render_multithreaded(
    window: &Window,
    dims: GridDims,
    precision: Precision,
    n_threads: usize,
    chunk_lines: usize,
) -> Result<IterationGrid, BackendError> {
    let mut grid = IterationGrid::zeroed(dims, window.max_iter());
    threaded_into(
        window,
        dims,
        precision,
        n_threads,
        chunk_lines,
        1,
        grid.counts_mut(),
    )?;
    Ok(grid)
}

/// Lane-parallel render in strips of `lane_count` pixels, distributed over
/// `n_threads` workers with the default chunking.
pub fn render_vectorized(
    window: &Window,
    dims: GridDims,
    precision: Precision,
    lane_count: usize,
    n_threads: usize,
) -> Result<IterationGrid, BackendError> {
    BackendKind::Vector {
        lanes: lane_count,
        threads: n_threads,
    }
    .validate()?;
    let mut grid = IterationGrid::zeroed(dims, window.max_iter());
    threaded_into(
        window,
        dims,
        precision,
        n_threads,
        DEFAULT_CHUNK_LINES,
        lane_count,
        grid.counts_mut(),
    )?;
    Ok(grid)
}

/// Escape counts for one strip of lanes; equal to [`crate::iterate_point`]
/// applied lane by lane.
pub fn iterate_lanes(
    c_res: &[f64],
    c_ims: &[f64],
    max_iter: u32,
    precision: Precision,
) -> Result<Vec<u32>, BackendError> {
    if c_res.len() != c_ims.len() || !LANE_COUNTS.contains(&c_res.len()) {
        return Err(BackendError::InvalidConfig(format!(
            "need matching lane vectors of length {LANE_COUNTS:?}, got {} and {}",
            c_res.len(),
            c_ims.len()
        )));
    }
    crate::dispatch_precision!(precision, T => {
        let re: Vec<T> = c_res.iter().map(|&v| <T as crate::fractal::Real>::from_f64(v)).collect();
        let im: Vec<T> = c_ims.iter().map(|&v| <T as crate::fractal::Real>::from_f64(v)).collect();
        let mut out = vec![0; re.len()];
        lanes::escape_strip(&re, &im, max_iter, &mut out);
        Ok(out)
    })
}

/// Renders with `queue` dequeued in its given order; for scheduling tests.
#[doc(hidden)]
pub fn render_with_queue(
    window: &Window,
    dims: GridDims,
    precision: Precision,
    queue_order: &[usize],
    chunk_lines: usize,
    n_threads: usize,
) -> Result<IterationGrid, BackendError> {
    let queue = ChunkQueue::build(dims.height, chunk_lines)?.reordered(queue_order);
    let mut grid = IterationGrid::zeroed(dims, window.max_iter());
    crate::dispatch_precision!(precision, T => {
        let cres = column_coords::<T>(window, dims);
        chunk::run_queue(&queue, dims.width, grid.counts_mut(), n_threads, |row, line| {
            let ci = <T as crate::fractal::Real>::from_f64(window.row_im(dims, row));
            crate::fractal::scalar_row(&cres, ci, window.max_iter(), line)
        })?
    });
    Ok(grid)
}
