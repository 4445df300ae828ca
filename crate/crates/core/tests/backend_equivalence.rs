//! Every backend against the scalar reference on random windows.

use mandelbench::backends::{
    render_device, render_multithreaded, render_vectorized, render_with_queue, VirtualDevice,
    LANE_COUNTS,
};
use mandelbench::bridge::NativeBridge;
use mandelbench::fractal::{render_reference, GridDims, Precision, Window};
use mandelbench::guard::LifecycleGuard;
use proptest::prelude::*;
use std::sync::Arc;

fn window() -> impl Strategy<Value = Window> {
    (
        -2.2f64..0.9,
        -1.3f64..1.2,
        0.001f64..1.5,
        0.001f64..1.5,
        1u32..300,
    )
        .prop_map(|(x1, y2, w, h, n)| Window::new(x1, y2 + h, x1 + w, y2, n).expect("valid window"))
}

fn dims() -> impl Strategy<Value = GridDims> {
    (1usize..41, 1usize..23).prop_map(|(w, h)| GridDims::new(w, h).unwrap())
}

fn precision() -> impl Strategy<Value = Precision> {
    prop::sample::select(Precision::ALL.to_vec())
}

fn device() -> (LifecycleGuard, VirtualDevice) {
    let bridge = Arc::new(NativeBridge::new());
    let device = VirtualDevice::new("equivalence");
    device.install(&bridge).unwrap();
    (LifecycleGuard::new(bridge), device)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threaded_matches(w in window(), d in dims(), p in precision(), threads in 1usize..6, chunk in 1usize..9) {
        let reference = render_reference(&w, d, p);
        prop_assert_eq!(render_multithreaded(&w, d, p, threads, chunk).unwrap(), reference);
    }

    #[test]
    fn vectorized_matches(w in window(), d in dims(), p in precision(), lanes in prop::sample::select(LANE_COUNTS.to_vec()), threads in 1usize..5) {
        prop_assert_eq!(render_vectorized(&w, d, p, lanes, threads).unwrap(), render_reference(&w, d, p));
    }

    #[test]
    fn any_queue_order_matches(w in window(), d in dims(), chunk in 1usize..6, seed in any::<u64>(), threads in 1usize..4) {
        let n = d.height.div_ceil(chunk);
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let got = render_with_queue(&w, d, Precision::Single, &order, chunk, threads).unwrap();
        prop_assert_eq!(got, render_reference(&w, d, Precision::Single));
    }

    #[test]
    fn virtual_device_matches(w in window(), d in dims(), p in precision(), width in prop::sample::select(vec![1usize, 2, 4, 8, 16])) {
        let (guard, dev) = device();
        prop_assert_eq!(render_device(&guard, &w, d, p, width).unwrap(), render_reference(&w, d, p));
        prop_assert_eq!(dev.live_objects(), 0);
    }
}
