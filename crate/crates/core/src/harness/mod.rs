//! Measurement protocol: repeated timed renders with cool-down pauses.

mod samples;

pub use samples::{
    append_samples, load_samples, persist_samples, SampleFile, SampleFileError, SAMPLE_COLUMNS,
};

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::backends::{render_device_timed, BackendError, BackendKind, DeviceError};
use crate::fractal::{GridDims, IterationGrid, Precision, Window, DESK_DIMS, PAPER_DIMS};
use crate::guard::LifecycleGuard;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 10 repetitions, no pauses, 400x268.
    Desk,
    /// 50 repetitions, 10 s pause after every 10, 1600x1072.
    Paper,
}

impl Profile {
    pub fn dims(self) -> GridDims {
        match self {
            Profile::Desk => DESK_DIMS,
            Profile::Paper => PAPER_DIMS,
        }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!(
                "unknown profile `{other}` (expected desk or paper)"
            )),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid bench configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("device backends need a lifecycle guard")]
    NoGuard,
    #[error("no overhead breakdown for CPU backend {0}")]
    NoBreakdown(BackendKind),
    #[error("series aborted after {completed} samples: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: Box<HarnessError>,
    },
}

impl From<DeviceError> for HarnessError {
    fn from(e: DeviceError) -> Self {
        HarnessError::Backend(BackendError::Device(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub backend: BackendKind,
    pub window: Window,
    pub dims: GridDims,
    pub precision: Precision,
    pub repetitions: usize,
    pub pause_every: usize,
    pub pause_seconds: f64,
}

impl BenchConfig {
    pub fn new(
        backend: BackendKind,
        window: Window,
        precision: Precision,
        profile: Profile,
    ) -> Self {
        let (repetitions, pause_every, pause_seconds) = match profile {
            Profile::Desk => (10, 10, 0.0),
            Profile::Paper => (50, 10, 10.0),
        };
        BenchConfig {
            backend,
            window,
            dims: profile.dims(),
            precision,
            repetitions,
            pause_every,
            pause_seconds,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.backend.validate()?;
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidConfig(
                "repetitions must be >= 1".into(),
            ));
        }
        if self.pause_every == 0 {
            return Err(HarnessError::InvalidConfig(
                "pause_every must be >= 1".into(),
            ));
        }
        if !(self.pause_seconds >= 0.0 && self.pause_seconds.is_finite()) {
            return Err(HarnessError::InvalidConfig(format!(
                "pause_seconds must be finite and >= 0, got {}",
                self.pause_seconds
            )));
        }
        Ok(())
    }

    /// Pauses a full series takes: one after every `pause_every`-th
    /// repetition except the last.
    pub fn pause_count(&self) -> usize {
        (self.repetitions - 1) / self.pause_every
    }

    /// Canonical `key=value` pairs; the sample-file header.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let w = &self.window;
        vec![
            ("backend", self.backend.to_string()),
            (
                "window",
                format!("{},{},{},{}", w.x1(), w.y1(), w.x2(), w.y2()),
            ),
            ("max_iter", w.max_iter().to_string()),
            ("dims", self.dims.to_string()),
            ("precision", self.precision.to_string()),
            ("repetitions", self.repetitions.to_string()),
            ("pause_every", self.pause_every.to_string()),
            ("pause_seconds", self.pause_seconds.to_string()),
        ]
    }

    /// First 16 hex digits of the SHA-256 of the canonical pairs.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Decomposition of one device render.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OverheadBreakdown {
    /// Wall time outside the facade's bridge calls.
    pub boundary_ms: f64,
    /// Guard entry and bridge lock acquisition.
    pub lock_ms: f64,
    /// Environment build, transfers and teardown.
    pub setup_ms: f64,
    /// Kernel span.
    pub compute_ms: f64,
}

impl OverheadBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.boundary_ms + self.lock_ms + self.setup_ms + self.compute_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSample {
    pub index: usize,
    pub wall_ms: f64,
    pub breakdown: Option<OverheadBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub samples: Vec<BenchSample>,
    /// Start of each repetition, relative to the start of the series.
    pub started_at: Vec<Duration>,
    pub pauses: usize,
    /// Grid of the first repetition.
    pub verification: IterationGrid,
}

/// What happens between every `pause_every` repetitions.
pub trait Pauser {
    fn pause(&mut self, length: Duration);
}

/// Sleeps for the full pause.
#[derive(Debug, Default, Clone, Copy)]
pub struct SleepPauser;

impl Pauser for SleepPauser {
    fn pause(&mut self, length: Duration) {
        if !length.is_zero() {
            thread::sleep(length);
        }
    }
}

impl<F: FnMut(Duration)> Pauser for F {
    fn pause(&mut self, length: Duration) {
        self(length)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs series one at a time. Device backends go through `guard`.
#[derive(Debug, Clone, Default)]
pub struct Harness {
    guard: Option<LifecycleGuard>,
}

impl Harness {
    pub fn cpu_only() -> Self {
        Harness { guard: None }
    }

    pub fn with_guard(guard: LifecycleGuard) -> Self {
        Harness { guard: Some(guard) }
    }

    pub fn guard(&self) -> Option<&LifecycleGuard> {
        self.guard.as_ref()
    }

    /// One timed repetition. The clock starts after the output is allocated.
    fn repetition(
        &self,
        config: &BenchConfig,
    ) -> Result<(IterationGrid, BenchSample), HarnessError> {
        match config.backend {
            BackendKind::Device { vector_width } => {
                let guard = self.guard.as_ref().ok_or(HarnessError::NoGuard)?;
                let started = Instant::now();
                let run = render_device_timed(
                    guard,
                    &config.window,
                    config.dims,
                    config.precision,
                    vector_width,
                )?;
                let wall = started.elapsed();
                let t = run.timings;
                let breakdown = OverheadBreakdown {
                    boundary_ms: ms(wall.saturating_sub(t.total())),
                    lock_ms: ms(t.lock),
                    setup_ms: ms(t.setup),
                    compute_ms: ms(t.compute),
                };
                Ok((
                    run.grid,
                    BenchSample {
                        index: 0,
                        wall_ms: ms(wall),
                        breakdown: Some(breakdown),
                    },
                ))
            }
            kind => {
                let mut grid = IterationGrid::zeroed(config.dims, config.window.max_iter());
                let started = Instant::now();
                kind.render_cpu_into(
                    &config.window,
                    config.dims,
                    config.precision,
                    grid.counts_mut(),
                )?;
                let wall = started.elapsed();
                Ok((
                    grid,
                    BenchSample {
                        index: 0,
                        wall_ms: ms(wall),
                        breakdown: None,
                    },
                ))
            }
        }
    }

    pub fn run_series(&self, config: &BenchConfig) -> Result<SeriesResult, HarnessError> {
        self.run_series_with(config, &mut SleepPauser)
    }

    /// Runs `config.repetitions` renders, calling `pauser` after every
    /// `pause_every`-th one except the last. Pauses are outside every timed
    /// span.
    pub fn run_series_with(
        &self,
        config: &BenchConfig,
        pauser: &mut dyn Pauser,
    ) -> Result<SeriesResult, HarnessError> {
        config.validate()?;
        let series_start = Instant::now();
        let mut samples = Vec::with_capacity(config.repetitions);
        let mut started_at = Vec::with_capacity(config.repetitions);
        let mut verification = None;
        let mut pauses = 0;
        for index in 0..config.repetitions {
            started_at.push(series_start.elapsed());
            let (grid, mut sample) =
                self.repetition(config).map_err(|e| HarnessError::Aborted {
                    completed: samples.len(),
                    source: Box::new(e),
                })?;
            sample.index = index;
            samples.push(sample);
            if verification.is_none() {
                verification = Some(grid);
            }
            if (index + 1) % config.pause_every == 0 && index + 1 < config.repetitions {
                pauser.pause(Duration::from_secs_f64(config.pause_seconds));
                pauses += 1;
            }
        }
        Ok(SeriesResult {
            samples,
            started_at,
            pauses,
            verification: verification.expect("at least one repetition"),
        })
    }

    /// One device render, decomposed. CPU backends have no breakdown.
    pub fn measure_breakdown(
        &self,
        config: &BenchConfig,
    ) -> Result<OverheadBreakdown, HarnessError> {
        if !config.backend.is_device() {
            return Err(HarnessError::NoBreakdown(config.backend));
        }
        config.validate()?;
        let (_, sample) = self.repetition(config)?;
        Ok(sample.breakdown.expect("device samples carry a breakdown"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::VirtualDevice;
    use crate::bridge::NativeBridge;
    use crate::render_reference;
    use std::sync::Arc;

    fn tiny(backend: BackendKind, repetitions: usize, pause_every: usize) -> BenchConfig {
        BenchConfig {
            backend,
            window: Window::builtin(1).unwrap(),
            dims: GridDims::new(32, 16).unwrap(),
            precision: Precision::Single,
            repetitions,
            pause_every,
            pause_seconds: 0.0,
        }
    }

    #[test]
    fn profiles() {
        let w = Window::builtin(1).unwrap();
        let p = BenchConfig::new(BackendKind::Scalar, w, Precision::Single, Profile::Paper);
        assert_eq!(
            (p.repetitions, p.pause_every, p.pause_seconds, p.dims),
            (50, 10, 10.0, PAPER_DIMS)
        );
        assert_eq!(p.pause_count(), 4);
        let d = BenchConfig::new(BackendKind::Scalar, w, Precision::Single, Profile::Desk);
        assert_eq!(
            (d.repetitions, d.pause_every, d.pause_seconds, d.dims),
            (10, 10, 0.0, DESK_DIMS)
        );
        assert_eq!(d.pause_count(), 0);
    }

    #[test]
    fn pause_schedule() {
        for (reps, every, expected) in
            [(50, 10, 4), (1, 10, 0), (5, 2, 2), (10, 10, 0), (11, 10, 1)]
        {
            let mut seen = Vec::new();
            let r = Harness::cpu_only()
                .run_series_with(
                    &tiny(BackendKind::Scalar, reps, every),
                    &mut |d: Duration| seen.push(d),
                )
                .unwrap();
            assert_eq!(r.samples.len(), reps);
            assert_eq!(r.pauses, expected);
            assert_eq!(seen.len(), expected);
            assert!(r.samples.iter().enumerate().all(|(i, s)| s.index == i));
            assert!(r.started_at.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn pauses_are_not_timed() {
        let mut cfg = tiny(BackendKind::Scalar, 4, 1);
        cfg.pause_seconds = 0.03;
        let r = Harness::cpu_only().run_series(&cfg).unwrap();
        assert_eq!(r.pauses, 3);
        assert!(r.samples.iter().all(|s| s.wall_ms < 30.0));
        assert!(r.started_at[3] >= Duration::from_millis(90));
    }

    #[test]
    fn verification_grid_is_reference() {
        for backend in [
            BackendKind::Scalar,
            BackendKind::Threaded { threads: 3 },
            BackendKind::Vector {
                lanes: 8,
                threads: 2,
            },
        ] {
            let cfg = tiny(backend, 2, 10);
            let r = Harness::cpu_only().run_series(&cfg).unwrap();
            assert_eq!(
                r.verification,
                render_reference(&cfg.window, cfg.dims, cfg.precision)
            );
            assert!(r.samples.iter().all(|s| s.breakdown.is_none()));
        }
    }

    #[test]
    fn device_series_and_breakdown() {
        let dev = VirtualDevice::new("harness-dev");
        let bridge = Arc::new(NativeBridge::new());
        dev.install(&bridge).unwrap();
        let h = Harness::with_guard(LifecycleGuard::new(bridge));
        let cfg = tiny(BackendKind::Device { vector_width: 4 }, 3, 10);
        let r = h.run_series(&cfg).unwrap();
        assert_eq!(
            r.verification,
            render_reference(&cfg.window, cfg.dims, cfg.precision)
        );
        for s in &r.samples {
            let b = s.breakdown.unwrap();
            assert!(s.wall_ms + 1e-9 >= b.parts_sum(), "{s:?}");
            assert!(
                b.lock_ms >= 0.0
                    && b.setup_ms >= 0.0
                    && b.compute_ms >= 0.0
                    && b.boundary_ms >= 0.0
            );
        }
        assert!(h.measure_breakdown(&cfg).unwrap().lock_ms < 1.0);
        assert_eq!(
            h.measure_breakdown(&tiny(BackendKind::Scalar, 1, 1)),
            Err(HarnessError::NoBreakdown(BackendKind::Scalar))
        );
    }

    #[test]
    fn failures_report_progress() {
        let h = Harness::cpu_only();
        match h.run_series(&tiny(BackendKind::Device { vector_width: 1 }, 3, 10)) {
            Err(HarnessError::Aborted {
                completed: 0,
                source,
            }) => assert_eq!(*source, HarnessError::NoGuard),
            other => panic!("{other:?}"),
        }
        assert!(h.run_series(&tiny(BackendKind::Scalar, 0, 10)).is_err());
        assert!(h.run_series(&tiny(BackendKind::Scalar, 1, 0)).is_err());
    }

    #[test]
    fn config_hash_tracks_every_field() {
        let base = tiny(BackendKind::Scalar, 10, 10);
        let mut other = base;
        other.pause_seconds = 0.5;
        assert_ne!(base.config_hash(), other.config_hash());
        other = base;
        other.precision = Precision::Double;
        assert_ne!(base.config_hash(), other.config_hash());
        assert_eq!(
            base.config_hash(),
            tiny(BackendKind::Scalar, 10, 10).config_hash()
        );
        assert_eq!(base.config_hash().len(), 16);
    }
}
