//! Fixtures and concurrency scenarios shared by the integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use mandelbench::bridge::{NativeBridge, UnloadOutcome, VirtualLibrary};
use mandelbench::guard::{Checkpoint, GuardError, LifecycleGuard};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Fixtures {
    pub pairs: Vec<Pair>,
    pub shapiro_sizes: Vec<Single>,
}

#[derive(Deserialize)]
pub struct Single {
    pub x: Vec<f64>,
    pub w: f64,
    pub p: f64,
}

#[derive(Deserialize)]
pub struct Pair {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub shapiro_a: [f64; 2],
    pub shapiro_b: [f64; 2],
    pub levene_p: f64,
    pub student_p: f64,
    pub welch_p: f64,
    pub wmw_p: f64,
    pub mood_p: f64,
    pub ks_centred_p: f64,
    pub method: char,
}

/// SciPy reference values; see fixtures/gen_stat_fixtures.py.
pub fn stat_fixtures() -> Fixtures {
    serde_json::from_str(include_str!("../fixtures/stat_fixtures.json")).expect("fixture json")
}

/// Runs `f` on its own thread, giving up after `limit`.
pub fn within<R: Send + 'static>(
    limit: Duration,
    f: impl FnOnce() -> R + Send + 'static,
) -> Option<R> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(f());
    });
    rx.recv_timeout(limit).ok()
}

#[derive(Debug)]
pub struct BridgeStress {
    pub elapsed: Duration,
    pub calls_ok: u64,
    pub call_errors: u64,
    pub total_entries: u64,
    pub entries_while_unloaded: u64,
    pub unloads: u64,
    pub generations: u64,
    pub max_resolutions_per_generation: u32,
    pub distinct_resolutions: usize,
}

/// `threads` callers each invoke a virtual symbol `calls` times while another
/// thread unloads the library in a loop.
pub fn bridge_stress(threads: usize, calls: usize) -> BridgeStress {
    let lib = VirtualLibrary::builder("stress")
        .entry("work", |args| match args.downcast_mut::<u64>() {
            Some(n) => {
                for _ in 0..64 {
                    *n = std::hint::black_box(n.wrapping_mul(6364136223846793005).wrapping_add(1));
                }
                0
            }
            None => -1,
        })
        .build();
    let bridge = Arc::new(NativeBridge::new());
    bridge.register_virtual(lib.clone());
    bridge
        .configure_library_path("virtual:stress")
        .expect("configure");

    let started = Instant::now();
    let done = Arc::new(AtomicBool::new(false));
    let (ok, errors, unloads) = (
        Arc::new(AtomicU64::new(0)),
        Arc::new(AtomicU64::new(0)),
        Arc::new(AtomicU64::new(0)),
    );
    let unloader = {
        let (bridge, done, unloads) = (bridge.clone(), done.clone(), unloads.clone());
        thread::spawn(move || {
            while !done.load(Ordering::SeqCst) {
                if bridge.unload_library() == UnloadOutcome::Unloaded {
                    unloads.fetch_add(1, Ordering::SeqCst);
                }
                thread::sleep(Duration::from_micros(200));
            }
        })
    };
    let workers: Vec<_> = (0..threads)
        .map(|i| {
            let (bridge, ok, errors) = (bridge.clone(), ok.clone(), errors.clone());
            thread::spawn(move || {
                let mut state = i as u64;
                for n in 0..calls {
                    match bridge.call("work", &mut state) {
                        Ok(()) => ok.fetch_add(1, Ordering::SeqCst),
                        Err(_) => errors.fetch_add(1, Ordering::SeqCst),
                    };
                    if n % 16 == 0 {
                        thread::yield_now();
                    }
                }
            })
        })
        .collect();
    for w in workers {
        w.join().expect("worker");
    }
    done.store(true, Ordering::SeqCst);
    unloader.join().expect("unloader");
    let probe = lib.probe();
    BridgeStress {
        elapsed: started.elapsed(),
        calls_ok: ok.load(Ordering::SeqCst),
        call_errors: errors.load(Ordering::SeqCst),
        total_entries: probe.total_entries(),
        entries_while_unloaded: probe.entries_while_unloaded(),
        unloads: unloads.load(Ordering::SeqCst),
        generations: probe.generation(),
        max_resolutions_per_generation: probe.max_resolutions_per_generation(),
        distinct_resolutions: probe.distinct_resolutions(),
    }
}

pub fn guard() -> LifecycleGuard {
    LifecycleGuard::new(Arc::new(NativeBridge::new()))
}

#[derive(Debug)]
pub struct InFlightStop {
    /// Time from the last holder starting to leave until stop returned.
    /// Negative would mean stop returned first.
    pub stop_after_last_leave: Option<Duration>,
    pub outstanding_at_return: usize,
    pub stop_ok: bool,
    /// Of 100 attempts after the stop.
    pub refused_after_stop: usize,
}

/// `n` threads hold tokens for staggered times while `stop` is called.
pub fn stop_with_in_flight(n: usize) -> InFlightStop {
    let g = guard();
    let barrier = Arc::new(Barrier::new(n + 1));
    let leaving = Arc::new(Mutex::new(Vec::new()));
    let holders: Vec<_> = (0..n)
        .map(|i| {
            let (g, barrier, leaving) = (g.clone(), barrier.clone(), leaving.clone());
            thread::spawn(move || {
                let mut t = g.enter_guarded().expect("enter before stop");
                barrier.wait();
                thread::sleep(Duration::from_millis(20 + 10 * i as u64));
                leaving.lock().unwrap().push(Instant::now());
                t.leave().expect("leave");
            })
        })
        .collect();
    barrier.wait();
    let stop = g.stop();
    let returned = Instant::now();
    let outstanding_at_return = g.outstanding_tokens();
    for h in holders {
        h.join().expect("holder");
    }
    let last = leaving.lock().unwrap().iter().max().copied();
    let refused_after_stop = (0..100)
        .filter(|_| g.enter_guarded().err() == Some(GuardError::Stopped))
        .count();
    InFlightStop {
        stop_after_last_leave: last.and_then(|l| returned.checked_duration_since(l)),
        outstanding_at_return,
        stop_ok: stop.is_ok(),
        refused_after_stop,
    }
}

/// Runs a five-stage checkpointed pipeline and stops the guard while stage
/// 2 is running. Returns the stages that ran.
pub fn interrupted_pipeline() -> Vec<usize> {
    let g = guard();
    let executed = Arc::new(Mutex::new(Vec::new()));
    let (in_stage_two, go) = mpsc::channel();
    let worker = {
        let (g, executed) = (g.clone(), executed.clone());
        thread::spawn(move || {
            let mut t = g.enter_guarded().expect("enter");
            for stage in 1..=5 {
                if g.checkpoint(&t) == Checkpoint::AbortRequested {
                    break;
                }
                executed.lock().unwrap().push(stage);
                if stage == 2 {
                    in_stage_two.send(()).unwrap();
                    thread::sleep(Duration::from_millis(100));
                }
            }
            t.leave().expect("leave");
        })
    };
    go.recv().expect("stage 2 reached");
    g.stop().expect("stop");
    worker.join().expect("worker");
    let stages = executed.lock().unwrap().clone();
    stages
}

#[derive(Debug)]
pub struct WriterPreference {
    pub stop_took: Duration,
    pub longest_hold: Duration,
    pub entries_before_stop: usize,
    pub stop_ok: bool,
}

/// `readers` threads re-enter the guard back to back, each holding up to
/// `longest_hold`, while `stop` runs.
pub fn stop_under_reader_arrivals(readers: usize, longest_hold: Duration) -> WriterPreference {
    let g = guard();
    let entries = Arc::new(AtomicUsize::new(0));
    let threads: Vec<_> = (0..readers)
        .map(|i| {
            let (g, entries) = (g.clone(), entries.clone());
            thread::spawn(move || {
                let mut n = 0u64;
                while let Ok(t) = g.enter_guarded() {
                    entries.fetch_add(1, Ordering::SeqCst);
                    let step = longest_hold.as_millis() as u64 / 4;
                    thread::sleep(Duration::from_millis(step * (1 + (i as u64 + n) % 4)));
                    drop(t);
                    n += 1;
                }
            })
        })
        .collect();
    while entries.load(Ordering::SeqCst) < readers * 3 {
        thread::sleep(Duration::from_millis(5));
    }
    let entries_before_stop = entries.load(Ordering::SeqCst);
    let started = Instant::now();
    let stop = g.stop();
    let stop_took = started.elapsed();
    for t in threads {
        t.join().expect("reader");
    }
    WriterPreference {
        stop_took,
        longest_hold,
        entries_before_stop,
        stop_ok: stop.is_ok(),
    }
}
