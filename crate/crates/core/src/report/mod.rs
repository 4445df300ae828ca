//! Run matrices, result tables and charts.

mod chart;
mod image;

pub use chart::{chart_csv, chart_svg};
pub use image::{encode_ppm, export_ppm};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::backends::BackendKind;
use crate::fractal::{Precision, Window};
use crate::harness::{BenchConfig, Profile, SampleFile};
use crate::stats::{
    compare_samples, speedup_triple, summarize, ComparisonResult, SampleSummary, SpeedupTriple,
    StatError,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("duplicate configuration: {0}")]
    Duplicate(String),
    #[error("missing baseline series: {}", .0.join(", "))]
    MissingBaselines(Vec<String>),
    #[error("{cell}: {source}")]
    Stats { cell: String, source: StatError },
    #[error("empty run matrix")]
    Empty,
}

/// Short label for a window: `w1`..`w3` for the built-in ones, otherwise the
/// corners and budget.
pub fn window_label(w: &Window) -> String {
    (1..=3)
        .find(|&i| Window::builtin(i).ok().as_ref() == Some(w))
        .map(|i| format!("w{i}"))
        .unwrap_or_else(|| {
            format!(
                "rect({},{},{},{};{})",
                w.x1(),
                w.y1(),
                w.x2(),
                w.y2(),
                w.max_iter()
            )
        })
}

/// File stem for a configuration, unique within a matrix.
pub fn file_stem(c: &BenchConfig) -> String {
    let backend = c.backend.to_string().replace([':', ','], "-");
    let window = match window_label(&c.window) {
        l if l.starts_with('w') => l,
        _ => format!("rect-{}", &c.config_hash()[..8]),
    };
    format!("{window}_{}_{backend}", c.precision)
}

/// Expanded benchmark configurations, without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMatrix {
    configs: Vec<BenchConfig>,
}

impl RunMatrix {
    /// Every combination of `windows x precisions x backends` under `profile`.
    pub fn expand(
        backends: &[BackendKind],
        windows: &[Window],
        precisions: &[Precision],
        profile: Profile,
    ) -> Result<Self, ReportError> {
        let mut configs = Vec::new();
        for w in windows {
            for &p in precisions {
                for &b in backends {
                    configs.push(BenchConfig::new(b, *w, p, profile));
                }
            }
        }
        Self::from_configs(configs)
    }

    pub fn from_configs(configs: Vec<BenchConfig>) -> Result<Self, ReportError> {
        if configs.is_empty() {
            return Err(ReportError::Empty);
        }
        let mut seen = BTreeSet::new();
        for c in &configs {
            c.validate()
                .map_err(|e| ReportError::Duplicate(e.to_string()))?;
            if !seen.insert(c.config_hash()) {
                return Err(ReportError::Duplicate(file_stem(c)));
            }
        }
        Ok(RunMatrix { configs })
    }

    pub fn configs(&self) -> &[BenchConfig] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Where a series sits in the result tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub window: String,
    pub precision: Precision,
    pub method: String,
    pub threads: usize,
}

impl CellKey {
    pub fn of(config: &BenchConfig) -> Self {
        CellKey {
            window: window_label(&config.window),
            precision: config.precision,
            method: config.backend.method(),
            threads: config.backend.threads(),
        }
    }

    fn with(&self, method: &str, threads: usize) -> Self {
        CellKey {
            method: method.to_string(),
            threads,
            ..self.clone()
        }
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}@{}",
            self.window, self.precision, self.method, self.threads
        )
    }
}

/// Series standing in for a baseline, most preferred first. `scalar` and
/// `threaded` at one thread run the same code, so either serves for the
/// other.
fn plain(threads: usize) -> &'static [&'static str] {
    if threads == 1 {
        &["scalar", "threaded"]
    } else {
        &["threaded"]
    }
}

fn candidates(key: &CellKey, methods: &[&str], threads: usize) -> Vec<CellKey> {
    methods.iter().map(|m| key.with(m, threads)).collect()
}

/// The three baselines of `key`: non-vectorized at equal threads, same
/// method at one thread, non-vectorized at one thread.
fn baselines(key: &CellKey) -> [Vec<CellKey>; 3] {
    let same_method: Vec<&str> = match key.method.as_str() {
        "scalar" | "threaded" => plain(1).to_vec(),
        m => vec![m],
    };
    let mut own = candidates(key, &same_method, 1);
    if key.method == "threaded" {
        own.reverse();
    }
    [
        candidates(key, plain(key.threads), key.threads),
        own,
        candidates(key, plain(1), 1),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    pub summary: SampleSummary,
    pub speedups: SpeedupTriple,
    /// Test of this series against the baseline at equal parallelism.
    pub comparison: ComparisonResult,
}

/// Adjacent-window comparison for one method, precision and thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowComparison {
    pub lower: CellKey,
    pub upper: CellKey,
    pub comparison: ComparisonResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cells: BTreeMap<CellKey, Cell>,
    pub window_comparisons: Vec<WindowComparison>,
}

impl Report {
    pub fn build(files: &[SampleFile]) -> Result<Self, ReportError> {
        if files.is_empty() {
            return Err(ReportError::Empty);
        }
        let mut series: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
        for f in files {
            let key = CellKey::of(&f.config);
            let walls = f.samples.iter().map(|s| s.wall_ms).collect();
            if series.insert(key.clone(), walls).is_some() {
                return Err(ReportError::Duplicate(key.to_string()));
            }
        }
        let mut missing = BTreeSet::new();
        let mut resolved = BTreeMap::new();
        for key in series.keys() {
            let found = baselines(key).map(|options| {
                let hit = options.iter().find(|k| series.contains_key(*k)).cloned();
                if hit.is_none() {
                    missing.insert(options[0].to_string());
                }
                hit
            });
            if let [Some(a), Some(b), Some(c)] = found {
                resolved.insert(key.clone(), [a, b, c]);
            }
        }
        if !missing.is_empty() {
            return Err(ReportError::MissingBaselines(missing.into_iter().collect()));
        }

        fn stat(key: &CellKey) -> impl FnOnce(StatError) -> ReportError + '_ {
            move |source| ReportError::Stats {
                cell: key.to_string(),
                source,
            }
        }
        let mut summaries = BTreeMap::new();
        for (key, s) in &series {
            summaries.insert(key.clone(), summarize(s).map_err(stat(key))?);
        }
        let mut cells = BTreeMap::new();
        for (key, s) in &series {
            let [base, own, single] = &resolved[key];
            let speedups = speedup_triple(
                &summaries[key],
                &summaries[base],
                &summaries[own],
                &summaries[single],
            )
            .map_err(stat(key))?;
            let comparison = compare_samples(s, &series[base]).map_err(stat(key))?;
            cells.insert(
                key.clone(),
                Cell {
                    key: key.clone(),
                    summary: summaries[key],
                    speedups,
                    comparison,
                },
            );
        }

        // Windows ordered by label; compare neighbours.
        let mut by_rest: BTreeMap<(Precision, String, usize), Vec<&CellKey>> = BTreeMap::new();
        for key in series.keys() {
            by_rest
                .entry((key.precision, key.method.clone(), key.threads))
                .or_default()
                .push(key);
        }
        let mut window_comparisons = Vec::new();
        for keys in by_rest.values() {
            for pair in keys.windows(2) {
                let comparison =
                    compare_samples(&series[pair[0]], &series[pair[1]]).map_err(stat(pair[1]))?;
                window_comparisons.push(WindowComparison {
                    lower: pair[0].clone(),
                    upper: pair[1].clone(),
                    comparison,
                });
            }
        }
        Ok(Report {
            cells,
            window_comparisons,
        })
    }

    pub fn windows(&self) -> Vec<String> {
        self.cells
            .keys()
            .map(|k| k.window.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Text table for one window: a row per method and precision, a column
    /// per thread count. Each entry shows the center with the test letter,
    /// the confidence interval, and the three speedups.
    pub fn text_table(&self, window: &str) -> String {
        let cells: Vec<&Cell> = self
            .cells
            .values()
            .filter(|c| c.key.window == window)
            .collect();
        let threads: BTreeSet<usize> = cells.iter().map(|c| c.key.threads).collect();
        let rows: BTreeSet<(Precision, &str)> = cells
            .iter()
            .map(|c| (c.key.precision, c.key.method.as_str()))
            .collect();
        let mut out = format!("window {window} (ms; a=Student b=Welch c=WMW d=Mood against the non-vectorized run at equal threads)\n");
        let _ = write!(out, "{:<22}", "method");
        for t in &threads {
            let _ = write!(
                out,
                "{:>26}",
                format!("{t} thread{}", if *t == 1 { "" } else { "s" })
            );
        }
        out.push('\n');
        for (p, m) in rows {
            let label = format!("{m} {p}");
            let mut lines = [
                format!("{label:<22}"),
                format!("{:<22}", ""),
                format!("{:<22}", ""),
            ];
            for &t in &threads {
                let key = CellKey {
                    window: window.to_string(),
                    precision: p,
                    method: m.to_string(),
                    threads: t,
                };
                let (a, b, c) = match self.cells.get(&key) {
                    Some(cell) => {
                        let s = &cell.summary;
                        let ci = match s.ci95 {
                            Some((lo, hi)) => format!("[{lo:.3}, {hi:.3}]"),
                            None => "-".to_string(),
                        };
                        let sp = &cell.speedups;
                        (
                            format!("{:.3} {}", s.center, cell.comparison.method.letter()),
                            ci,
                            format!(
                                "{:.2} {:.2} {:.2}",
                                sp.vs_baseline_same_config,
                                sp.vs_same_method_one_thread,
                                sp.vs_single_thread_baseline
                            ),
                        )
                    }
                    None => (String::new(), String::new(), String::new()),
                };
                let _ = write!(lines[0], "{a:>26}");
                let _ = write!(lines[1], "{b:>26}");
                let _ = write!(lines[2], "{c:>26}");
            }
            for l in lines {
                out.push_str(l.trim_end());
                out.push('\n');
            }
        }
        out
    }

    pub const CSV_HEADER: &'static str = "window,precision,method,threads,n,center_ms,normal,ci_low_ms,ci_high_ms,\
speedup_same_config,speedup_same_method_1t,speedup_single_thread_baseline,test,letter,p_value,significant";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in self.cells.values() {
            let s = &c.summary;
            let (lo, hi) = s
                .ci95
                .map(|(l, h)| (l.to_string(), h.to_string()))
                .unwrap_or_default();
            let sp = &c.speedups;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.key.window,
                c.key.precision,
                c.key.method,
                c.key.threads,
                s.n,
                s.center,
                s.normal,
                lo,
                hi,
                sp.vs_baseline_same_config,
                sp.vs_same_method_one_thread,
                sp.vs_single_thread_baseline,
                c.comparison.method,
                c.comparison.method.letter(),
                c.comparison.p_value,
                c.comparison.significant
            );
        }
        out
    }

    pub fn window_comparison_text(&self) -> String {
        let mut out = String::from("window comparisons (p < 0.05 marked *)\n");
        for w in &self.window_comparisons {
            let c = &w.comparison;
            let _ = writeln!(
                out,
                "{} vs {}: {} p={:.3e}{}",
                w.lower,
                w.upper.window,
                c.method.letter(),
                c.p_value,
                if c.significant { " *" } else { "" }
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{BenchSample, SampleFile};

    fn file(backend: &str, window: usize, walls: &[f64]) -> SampleFile {
        let config = BenchConfig::new(
            backend.parse().unwrap(),
            Window::builtin(window).unwrap(),
            Precision::Single,
            Profile::Desk,
        );
        let samples = walls
            .iter()
            .enumerate()
            .map(|(index, &wall_ms)| BenchSample {
                index,
                wall_ms,
                breakdown: None,
            })
            .collect();
        SampleFile::new(config, samples)
    }

    fn noisy(center: f64, seed: u64) -> Vec<f64> {
        (0..12)
            .map(|i| center * (1.0 + 0.01 * (((i * 7 + seed * 3) % 11) as f64 - 5.0) / 5.0))
            .collect()
    }

    #[test]
    fn matrix_expansion_and_duplicates() {
        let backends: Vec<BackendKind> = ["scalar", "threaded:4", "vector:4"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let windows: Vec<Window> = (1..=3).map(|i| Window::builtin(i).unwrap()).collect();
        let m =
            RunMatrix::expand(&backends, &windows, &[Precision::Single], Profile::Desk).unwrap();
        assert_eq!(m.len(), 9);
        let stems: BTreeSet<String> = m.configs().iter().map(file_stem).collect();
        assert_eq!(stems.len(), 9);
        assert!(stems.contains("w2_single_threaded-4"));
        let dup = [backends[0], backends[0]];
        assert!(matches!(
            RunMatrix::expand(&dup, &windows, &[Precision::Single], Profile::Desk),
            Err(ReportError::Duplicate(_))
        ));
    }

    #[test]
    fn speedup_triples_from_files() {
        let files = vec![
            file("scalar", 1, &noisy(100.0, 1)),
            file("threaded:2", 1, &noisy(50.0, 2)),
            file("threaded:4", 1, &noisy(25.0, 3)),
            file("vector:4", 1, &noisy(25.0, 4)),
            file("vector:4,threads:4", 1, &noisy(12.5, 5)),
        ];
        let r = Report::build(&files).unwrap();
        let key = |m: &str, t| CellKey {
            window: "w1".into(),
            precision: Precision::Single,
            method: m.into(),
            threads: t,
        };
        let own = &r.cells[&key("scalar", 1)].speedups;
        assert_eq!(
            (
                own.vs_baseline_same_config,
                own.vs_same_method_one_thread,
                own.vs_single_thread_baseline
            ),
            (1.0, 1.0, 1.0)
        );
        let t4 = &r.cells[&key("threaded", 4)].speedups;
        assert!((t4.vs_single_thread_baseline - 4.0).abs() < 0.1);
        let v44 = &r.cells[&key("vector:4", 4)].speedups;
        assert!((v44.vs_baseline_same_config - 2.0).abs() < 0.1);
        assert!((v44.vs_same_method_one_thread - 2.0).abs() < 0.1);
        assert!((v44.vs_single_thread_baseline - 8.0).abs() < 0.3);
        let text = r.text_table("w1");
        assert!(text.contains("vector:4 single"));
        assert_eq!(r.csv().lines().count(), 6);
        assert_eq!(Report::build(&files).unwrap().csv(), r.csv());
    }

    #[test]
    fn scalar_and_one_thread_series_coexist() {
        let files = vec![
            file("scalar", 1, &noisy(100.0, 1)),
            file("threaded:1", 1, &noisy(110.0, 2)),
            file("threaded:2", 1, &noisy(55.0, 3)),
            file("threaded:4", 1, &noisy(27.5, 4)),
        ];
        let r = Report::build(&files).unwrap();
        let sp = |m: &str, t| {
            let k = CellKey {
                window: "w1".into(),
                precision: Precision::Single,
                method: m.into(),
                threads: t,
            };
            let s = &r.cells[&k].speedups;
            [
                s.vs_baseline_same_config,
                s.vs_same_method_one_thread,
                s.vs_single_thread_baseline,
            ]
        };
        let t4 = sp("threaded", 4);
        assert_eq!(t4[0], 1.0);
        assert!((t4[1] - 4.0).abs() < 0.1, "{t4:?}");
        assert!((t4[2] - 100.0 / 27.5).abs() < 0.1, "{t4:?}");
        let t1 = sp("threaded", 1);
        assert!((t1[0] - 100.0 / 110.0).abs() < 0.02, "{t1:?}");
        assert_eq!(r.cells.len(), 4);
    }

    #[test]
    fn missing_baselines_named() {
        let err = Report::build(&[file("vector:4,threads:2", 1, &noisy(10.0, 1))]).unwrap_err();
        match err {
            ReportError::MissingBaselines(names) => {
                assert_eq!(
                    names,
                    vec![
                        "w1/single/scalar@1",
                        "w1/single/threaded@2",
                        "w1/single/vector:4@1"
                    ]
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn windows_compared() {
        let files = vec![
            file("scalar", 1, &noisy(10.0, 1)),
            file("scalar", 2, &noisy(200.0, 2)),
        ];
        let r = Report::build(&files).unwrap();
        assert_eq!(r.window_comparisons.len(), 1);
        assert!(r.window_comparisons[0].comparison.significant);
        assert!(r.window_comparison_text().contains(" *"));
    }

    #[test]
    fn rect_windows_labelled() {
        let w = Window::new(-1.0, 1.0, 1.0, -1.0, 100).unwrap();
        assert_eq!(window_label(&w), "rect(-1,1,1,-1;100)");
        assert_eq!(window_label(&Window::builtin(3).unwrap()), "w3");
    }
}
