//! Distribution checks, the two-sample decision tree, summaries and
//! speedups.
//!
//! Two samples are compared with Student's t-test when both pass the
//! Shapiro-Wilk test and Levene's test finds equal variances, with Welch's
//! test when they are normal with unequal variances, with the
//! Wilcoxon-Mann-Whitney test when they are not both normal but have a
//! similar shape, and with Mood's median test otherwise. "Similar shape"
//! means a two-sample Kolmogorov-Smirnov test on the median-centred samples
//! does not reject at 5%.

mod hypothesis;
mod shapiro;

pub use hypothesis::{
    kolmogorov_smirnov, levene, mann_whitney, mood_median, student_t, welch_t, WMW_ASYMPTOTIC_MIN,
};
pub use shapiro::shapiro_wilk;

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Significance level for every decision.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("at most {limit} points supported, got {got}")]
    TooManyPoints { limit: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("center must be positive, got {0}")]
    NonPositiveCenter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    StudentT,
    Welch,
    WilcoxonMannWhitney,
    MoodMedian,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::StudentT,
        Method::Welch,
        Method::WilcoxonMannWhitney,
        Method::MoodMedian,
    ];

    /// Table letter: a to d in decision-tree order.
    pub fn letter(self) -> char {
        match self {
            Method::StudentT => 'a',
            Method::Welch => 'b',
            Method::WilcoxonMannWhitney => 'c',
            Method::MoodMedian => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.letter() == c)
    }

    pub fn run(self, a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
        match self {
            Method::StudentT => student_t(a, b),
            Method::Welch => welch_t(a, b),
            Method::WilcoxonMannWhitney => mann_whitney(a, b),
            Method::MoodMedian => mood_median(a, b),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::StudentT => "Student t",
            Method::Welch => "Welch",
            Method::WilcoxonMannWhitney => "Wilcoxon-Mann-Whitney",
            Method::MoodMedian => "Mood median",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    /// Mean when normal, median otherwise.
    pub center: f64,
    /// Two-sided 95% t-interval around the mean; only for normal samples.
    pub ci95: Option<(f64, f64)>,
    pub normal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupTriple {
    /// Against the baseline method with the same parallelism.
    pub vs_baseline_same_config: f64,
    /// Against the same method on one thread.
    pub vs_same_method_one_thread: f64,
    /// Against the single-threaded baseline.
    pub vs_single_thread_baseline: f64,
}

pub(crate) fn check_finite(s: &[f64]) -> Result<(), StatError> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatError::NonFinite)
    }
}

pub(crate) fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Unbiased sample variance.
pub(crate) fn variance(s: &[f64]) -> f64 {
    let m = mean(s);
    s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0)
}

pub(crate) fn sorted(s: &[f64]) -> Vec<f64> {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median of an already sorted slice.
pub(crate) fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Shapiro-Wilk at 5%. A constant sample counts as not normal.
pub fn is_normal(sample: &[f64]) -> Result<bool, StatError> {
    match shapiro_wilk(sample) {
        Ok((_, p)) => Ok(p >= ALPHA),
        Err(StatError::ZeroVariance) => Ok(false),
        Err(e) => Err(e),
    }
}

/// KS test on the samples shifted to zero median; `p >= 0.05` means the
/// shapes are similar.
pub fn shape_similarity(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    let centre = |s: &[f64]| {
        let m = median(&sorted(s));
        s.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    kolmogorov_smirnov(&centre(a), &centre(b))
}

/// Picks the test per the decision tree.
pub fn choose_method(a: &[f64], b: &[f64]) -> Result<Method, StatError> {
    for s in [a, b] {
        if s.len() < 3 {
            return Err(StatError::TooFewPoints {
                needed: 3,
                got: s.len(),
            });
        }
    }
    if is_normal(a)? && is_normal(b)? {
        if levene(a, b)?.p_value >= ALPHA {
            Ok(Method::StudentT)
        } else {
            Ok(Method::Welch)
        }
    } else if shape_similarity(a, b)?.p_value >= ALPHA {
        Ok(Method::WilcoxonMannWhitney)
    } else {
        Ok(Method::MoodMedian)
    }
}

pub fn compare_samples(a: &[f64], b: &[f64]) -> Result<ComparisonResult, StatError> {
    let method = choose_method(a, b)?;
    let r = method.run(a, b)?;
    Ok(ComparisonResult {
        method,
        statistic: r.statistic,
        p_value: r.p_value,
        significant: r.p_value < ALPHA,
    })
}

pub fn summarize(sample: &[f64]) -> Result<SampleSummary, StatError> {
    let n = sample.len();
    if n < 3 {
        return Err(StatError::TooFewPoints { needed: 3, got: n });
    }
    check_finite(sample)?;
    if is_normal(sample)? {
        let m = mean(sample);
        let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
            .expect("n >= 3")
            .inverse_cdf(0.975);
        let half = t * (variance(sample) / n as f64).sqrt();
        Ok(SampleSummary {
            n,
            center: m,
            ci95: Some((m - half, m + half)),
            normal: true,
        })
    } else {
        Ok(SampleSummary {
            n,
            center: median(&sorted(sample)),
            ci95: None,
            normal: false,
        })
    }
}

/// Ratios `reference.center / subject.center`.
pub fn speedup_triple(
    subject: &SampleSummary,
    baseline_same_config: &SampleSummary,
    same_method_one_thread: &SampleSummary,
    single_thread_baseline: &SampleSummary,
) -> Result<SpeedupTriple, StatError> {
    for s in [
        subject,
        baseline_same_config,
        same_method_one_thread,
        single_thread_baseline,
    ] {
        if !(s.center > 0.0 && s.center.is_finite()) {
            return Err(StatError::NonPositiveCenter(s.center.to_string()));
        }
    }
    Ok(SpeedupTriple {
        vs_baseline_same_config: baseline_same_config.center / subject.center,
        vs_same_method_one_thread: same_method_one_thread.center / subject.center,
        vs_single_thread_baseline: single_thread_baseline.center / subject.center,
    })
}
