mod common;

use std::time::Duration;

#[test]
fn stop_waits_for_sixteen_holders() {
    let r = common::stop_with_in_flight(16);
    assert!(r.stop_ok);
    assert!(
        r.stop_after_last_leave.is_some(),
        "stop returned before the last holder left: {r:?}"
    );
    assert_eq!(r.outstanding_at_return, 0);
    assert_eq!(r.refused_after_stop, 100);
}

#[test]
fn pipeline_stops_after_stage_two() {
    assert_eq!(common::interrupted_pipeline(), vec![1, 2]);
}

#[test]
fn writer_is_not_starved() {
    let hold = Duration::from_millis(80);
    let r = common::within(Duration::from_secs(30), move || {
        common::stop_under_reader_arrivals(6, hold)
    })
    .expect("stop finished");
    assert!(r.stop_ok);
    assert!(r.stop_took <= hold + Duration::from_secs(1), "{r:?}");
}
