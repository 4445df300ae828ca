//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use mandelbench::backends::{BackendKind, VirtualDevice};
use mandelbench::bridge::NativeBridge;
use mandelbench::fractal::{GridDims, Window};
use mandelbench::guard::LifecycleGuard;

/// Small enough for criterion's sampling, large enough to fill 16 lanes.
pub const BENCH_DIMS: GridDims = GridDims {
    width: 160,
    height: 107,
};

pub fn windows() -> Vec<(&'static str, Window)> {
    ["w1", "w2", "w3"]
        .into_iter()
        .zip(1..=3)
        .map(|(name, i)| (name, Window::builtin(i).expect("built-in window")))
        .collect()
}

/// CPU backends compared in every group.
pub fn cpu_backends() -> Vec<BackendKind> {
    ["scalar", "threaded:2", "vector:4", "vector:8", "vector:16"]
        .iter()
        .map(|s| s.parse().expect("backend"))
        .collect()
}

/// A guard over a fresh bridge pointed at a virtual device.
pub fn virtual_guard() -> (LifecycleGuard, VirtualDevice) {
    let bridge = Arc::new(NativeBridge::new());
    let device = VirtualDevice::new("bench");
    device.install(&bridge).expect("install virtual device");
    (LifecycleGuard::new(bridge), device)
}
