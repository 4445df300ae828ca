//! The bridge over the real OS loader, using the system math library.

#![cfg(target_os = "linux")]

use mandelbench::bridge::{BridgeError, EntryPoint, LoadState, NativeBridge, UnloadOutcome};

const LIBM: &str = "libm.so.6";

fn cos_via(bridge: &NativeBridge, x: f64) -> Result<f64, BridgeError> {
    bridge.invoke_with("cos", |entry| match entry {
        EntryPoint::Native(sym) => {
            // SAFETY: libm's `cos` has exactly this signature.
            let f: extern "C" fn(f64) -> f64 = unsafe { std::mem::transmute(sym.as_ptr()) };
            f(x)
        }
        EntryPoint::Virtual(_) => panic!("expected a native entry"),
    })
}

#[test]
fn calls_resolve_and_reload() {
    let bridge = NativeBridge::new();
    bridge.configure_library_path(LIBM).unwrap();
    assert_eq!(bridge.library_state().state, LoadState::NeverLoaded);
    assert_eq!(cos_via(&bridge, 0.0).unwrap(), 1.0);
    assert!((cos_via(&bridge, std::f64::consts::PI).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(bridge.resolution_count(), 1);
    assert_eq!(bridge.library_state().generation, 1);

    assert_eq!(bridge.unload_library(), UnloadOutcome::Unloaded);
    assert_eq!(bridge.unload_library(), UnloadOutcome::AlreadyUnloaded);
    assert_eq!(cos_via(&bridge, 0.0).unwrap(), 1.0);
    let state = bridge.library_state();
    assert_eq!((state.state, state.generation), (LoadState::Loaded, 2));
    assert_eq!(bridge.resolution_count(), 2);
}

#[test]
fn missing_symbol_and_library() {
    let bridge = NativeBridge::new();
    bridge.configure_library_path(LIBM).unwrap();
    assert_eq!(
        bridge
            .invoke_with("no_such_symbol_here", |_| ())
            .unwrap_err(),
        BridgeError::SymbolUnresolved("no_such_symbol_here".into())
    );
    assert!(bridge.call("cos", &mut 0u8).is_err());

    let absent = NativeBridge::new();
    absent
        .configure_library_path("/nonexistent/libnothing.so")
        .unwrap();
    assert!(matches!(
        absent.invoke_with("cos", |_| ()),
        Err(BridgeError::LoadFailed { .. })
    ));
    assert_eq!(absent.library_state().state, LoadState::NeverLoaded);
}
