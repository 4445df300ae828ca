mod common;

use std::time::Duration;

#[test]
fn eight_callers_against_unload_loop() {
    let r = common::within(Duration::from_secs(60), || common::bridge_stress(8, 1000))
        .expect("no deadlock within 60 s");
    assert_eq!(r.calls_ok, 8000, "{r:?}");
    assert_eq!(r.call_errors, 0);
    assert_eq!(r.total_entries, 8000);
    assert_eq!(r.entries_while_unloaded, 0);
    assert_eq!(r.max_resolutions_per_generation, 1, "{r:?}");
    assert_eq!(r.distinct_resolutions as u64, r.generations, "{r:?}");
    assert!(r.unloads >= 1, "unload loop never got in: {r:?}");
    assert!(
        r.generations == r.unloads || r.generations == r.unloads + 1,
        "{r:?}"
    );
}
