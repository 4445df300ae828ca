//! Two-sample tests. All p-values are two-sided.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use super::{check_finite, mean, median, sorted, variance, StatError, TestResult};

fn need(a: &[f64], b: &[f64], n: usize) -> Result<(), StatError> {
    for s in [a, b] {
        if s.len() < n {
            return Err(StatError::TooFewPoints {
                needed: n,
                got: s.len(),
            });
        }
        check_finite(s)?;
    }
    Ok(())
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Levene's test with deviations from the group means.
pub fn levene(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 2)?;
    let dev = |s: &[f64]| {
        let m = mean(s);
        s.iter().map(|v| (v - m).abs()).collect::<Vec<_>>()
    };
    let (za, zb) = (dev(a), dev(b));
    let (ma, mb) = (mean(&za), mean(&zb));
    let n = (a.len() + b.len()) as f64;
    let grand = (za.iter().sum::<f64>() + zb.iter().sum::<f64>()) / n;
    let between = a.len() as f64 * (ma - grand).powi(2) + b.len() as f64 * (mb - grand).powi(2);
    let within: f64 = za.iter().map(|z| (z - ma).powi(2)).sum::<f64>()
        + zb.iter().map(|z| (z - mb).powi(2)).sum::<f64>();
    if within == 0.0 {
        if between == 0.0 {
            return Err(StatError::ZeroVariance);
        }
        return Ok(TestResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
        });
    }
    let statistic = (n - 2.0) * between / within;
    let p = FisherSnedecor::new(1.0, n - 2.0)
        .expect("valid F")
        .sf(statistic);
    Ok(TestResult {
        statistic,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// Student's t-test with pooled variance.
pub fn student_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / df;
    let diff = mean(a) - mean(b);
    if pooled == 0.0 {
        return degenerate_t(diff);
    }
    let t = diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided(t, df),
    })
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    if qa + qb == 0.0 {
        return degenerate_t(diff);
    }
    let t = diff / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided(t, df),
    })
}

/// Both samples constant: equal means are indistinguishable, different
/// means are as far apart as it gets.
fn degenerate_t(diff: f64) -> Result<TestResult, StatError> {
    if diff == 0.0 {
        Err(StatError::ZeroVariance)
    } else {
        Ok(TestResult {
            statistic: diff.signum() * f64::INFINITY,
            p_value: 0.0,
        })
    }
}

/// Midranks of the pooled sample and the tie-group sizes.
fn ranks(a: &[f64], b: &[f64]) -> (f64, Vec<usize>) {
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut ties = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_a += all[i..=j].iter().filter(|e| e.1).count() as f64 * midrank;
        ties.push(j - i + 1);
        i = j + 1;
    }
    (rank_sum_a, ties)
}

/// Samples at least this large use the normal approximation.
pub const WMW_ASYMPTOTIC_MIN: usize = 20;

/// Wilcoxon-Mann-Whitney rank-sum test. The statistic is `max(U_a, U_b)`.
///
/// With both samples of size >= 20, or with ties, the p-value comes from
/// the normal approximation with tie and continuity corrections; otherwise
/// from the exact null distribution of U.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 1)?;
    let (na, nb) = (a.len(), b.len());
    let (r1, ties) = ranks(a, b);
    let (fa, fb) = (na as f64, nb as f64);
    let u1 = r1 - fa * (fa + 1.0) / 2.0;
    let u = u1.max(fa * fb - u1);
    let has_ties = ties.iter().any(|&t| t > 1);
    let p = if na.min(nb) >= WMW_ASYMPTOTIC_MIN || has_ties {
        let n = fa + fb;
        let tie_term: f64 =
            ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
        let sd = (fa * fb / 12.0 * ((n + 1.0) - tie_term)).sqrt();
        if sd == 0.0 {
            1.0
        } else {
            let z = (u - fa * fb / 2.0 - 0.5) / sd;
            2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z)
        }
    } else {
        2.0 * exact_u_sf(na, nb, u.round() as usize)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// `P(U >= u)` under the null for sample sizes `m` and `n`.
fn exact_u_sf(m: usize, n: usize, u: usize) -> f64 {
    // counts[i][j][k]: arrangements of i and j items with U = k, built one
    // sample size at a time; only the (m, n) slice is needed at the end.
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for i in 1..=m {
        let mut cur = vec![vec![0.0; max_u + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            // The largest item belongs to the first sample (adds j to U) or
            // to the second.
            for k in 0..=i * j {
                let from_first = if k >= j { prev[j][k - j] } else { 0.0 };
                cur[j][k] = from_first + cur[j - 1][k];
            }
        }
        prev = cur;
    }
    let dist = &prev[n];
    let total: f64 = dist.iter().sum();
    dist[u.min(max_u + 1)..].iter().sum::<f64>() / total
}

/// Mood's median test: 2x2 table of counts above and at-or-below the grand
/// median, Pearson chi-square with Yates' correction. A table with an empty
/// row (all values on one side) carries no evidence: statistic 0, p = 1.
pub fn mood_median(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 1)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let grand = median(&sorted(&pooled));
    let above = |s: &[f64]| s.iter().filter(|&&v| v > grand).count() as f64;
    let table = [
        [above(a), above(b)],
        [a.len() as f64 - above(a), b.len() as f64 - above(b)],
    ];
    let n = pooled.len() as f64;
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [a.len() as f64, b.len() as f64];
    if rows.contains(&0.0) {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let mut chi2 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let expected = rows[r] * cols[c] / n;
            let diff = expected - table[r][c];
            let observed = table[r][c] + diff.signum() * diff.abs().min(0.5);
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    let p = ChiSquared::new(1.0)
        .expect("one degree of freedom")
        .sf(chi2);
    Ok(TestResult {
        statistic: chi2,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// Two-sample Kolmogorov-Smirnov test. Exact when `m * n <= 10_000`,
/// otherwise the asymptotic Kolmogorov distribution.
pub fn kolmogorov_smirnov(a: &[f64], b: &[f64]) -> Result<TestResult, StatError> {
    need(a, b, 1)?;
    let (xa, xb) = (sorted(a), sorted(b));
    let (m, n) = (xa.len(), xb.len());
    // Largest |i n - j m| over the pooled values, with i, j the counts at or
    // below each value.
    let (mut i, mut j, mut h) = (0usize, 0usize, 0usize);
    while i < m || j < n {
        let v = match (xa.get(i), xb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < m && xa[i] == v {
            i += 1;
        }
        while j < n && xb[j] == v {
            j += 1;
        }
        h = h.max((i * n).abs_diff(j * m));
    }
    let d = h as f64 / (m * n) as f64;
    let p = if m * n <= 10_000 {
        exact_ks_sf(m, n, h)
    } else {
        let en = ((m * n) as f64 / (m + n) as f64).sqrt();
        kolmogorov_sf(en * d)
    };
    Ok(TestResult {
        statistic: d,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// `P(D >= h / (m n))`: one minus the share of lattice paths from (0, 0) to
/// (m, n) that keep `|i n - j m| < h` throughout.
fn exact_ks_sf(m: usize, n: usize, h: usize) -> f64 {
    if h == 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| (i * n).abs_diff(j * m) < h;
    // Path counts scaled by 1 / C(m + n, n) as we go: each step multiplies
    // by the probability of that move in a uniformly random path.
    let mut row = vec![0.0f64; n + 1];
    for i in 0..=m {
        for j in 0..=n {
            if !inside(i, j) {
                row[j] = 0.0;
                continue;
            }
            if i == 0 && j == 0 {
                row[j] = 1.0;
                continue;
            }
            let remaining = (m - i + n - j + 1) as f64;
            let from_up = if i > 0 {
                row[j] * (m - i + 1) as f64 / remaining
            } else {
                0.0
            };
            let from_left = if j > 0 {
                row[j - 1] * (n - j + 1) as f64 / remaining
            } else {
                0.0
            };
            row[j] = from_up + from_left;
        }
    }
    1.0 - row[n]
}

/// Upper tail of the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.5, 3.0, 4.5, 2.0, 3.3];
        let l = levene(&a, &a).unwrap();
        assert_eq!(l.statistic, 0.0);
        assert!(close(l.p_value, 1.0, 1e-12));
        let t = student_t(&a, &a).unwrap();
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        assert_eq!(welch_t(&a, &a).unwrap().p_value, 1.0);
        assert_eq!(mood_median(&a, &a).unwrap().p_value, 1.0);
        assert_eq!(kolmogorov_smirnov(&a, &a).unwrap().statistic, 0.0);
        assert_eq!(kolmogorov_smirnov(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn constant_inputs() {
        assert_eq!(levene(&[2.0; 5], &[3.0; 5]), Err(StatError::ZeroVariance));
        assert_eq!(
            student_t(&[2.0; 5], &[2.0; 5]),
            Err(StatError::ZeroVariance)
        );
        assert_eq!(student_t(&[2.0; 5], &[3.0; 5]).unwrap().p_value, 0.0);
    }

    #[test]
    fn student_hand_computed() {
        // means 2 and 5, pooled variance 1, t = -3 / sqrt(2/3)
        let r = student_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(close(r.statistic, -3.0 / (2.0f64 / 3.0).sqrt(), 1e-12));
        // Two-sided t(4) tail at 3.6742: 0.021311641128756
        assert!(close(r.p_value, 0.021311641128756, 1e-9), "{}", r.p_value);
    }

    #[test]
    fn exact_u_matches_enumeration() {
        // m = n = 3: the 20 arrangements give U counts 1,1,2,3,3,3,3,2,1,1.
        let counts = [1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 2.0, 1.0, 1.0];
        for u in 0..=9 {
            let expect: f64 = counts[u..].iter().sum::<f64>() / 20.0;
            assert!(close(exact_u_sf(3, 3, u), expect, 1e-15), "u={u}");
        }
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 9.0);
        assert!(close(r.p_value, 0.1, 1e-15));
    }

    #[test]
    fn exact_ks_small_case() {
        // m = n = 2, D = 1 occurs for 2 of the 6 paths.
        assert!(close(exact_ks_sf(2, 2, 4), 2.0 / 6.0, 1e-15));
        let r = kolmogorov_smirnov(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(close(r.p_value, 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn mood_counts_ties_below() {
        // Grand median 3.5; a has 0 above, b has 4 above.
        let r = mood_median(&[1.0, 2.0, 3.0, 3.5], &[3.5, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert!(r.statistic > 0.0 && r.p_value < 0.1);
        assert_eq!(mood_median(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!(close(kolmogorov_sf(1.36), 0.0494, 1e-4));
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }
}
