//! Escape-time benchmark suite.
//!
//! The same workload runs under four execution paradigms (scalar reference,
//! chunked multithreading, lane-parallel blend-mask iteration and offload
//! through a runtime-loaded compute library). Around them sit the two locking
//! protocols that let the compute library be evicted while idle and let
//! device work be aborted on shutdown, the measurement harness, and the
//! statistics used to compare runs.

pub mod backends;
pub mod bridge;
pub mod fractal;
pub mod guard;
pub mod harness;
pub mod report;
pub mod stats;
pub mod sync;

pub use fractal::{
    coordinate_of_pixel, grid_diff, iterate_point, render_reference, FractalError, GridDims,
    IterationGrid, MismatchReport, Precision, Window,
};
