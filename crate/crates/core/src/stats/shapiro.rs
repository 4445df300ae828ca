//! Shapiro-Wilk W test, Royston's AS R94 algorithm (3 <= n <= 5000).

use statrs::distribution::{ContinuousCDF, Normal};

use super::StatError;

const SMALL: f64 = 1e-19;

// Polynomial approximations to the coefficients and to the null
// distribution of log(1 - W).
const G: [f64; 2] = [-2.273, 0.459];
const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

// The published algorithm's rounded constants, kept as printed.
#[allow(clippy::approx_constant)]
const SQRTH: f64 = 0.70711;
/// 6 / pi
const PI6: f64 = 1.90985931710274;
/// asin(sqrt(3/4))
#[allow(clippy::approx_constant)]
const STQR: f64 = 1.04719755119660;

/// `cc[0] + cc[1] x + cc[2] x^2 + ...`
fn poly(cc: &[f64], x: f64) -> f64 {
    cc.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Antisymmetric weights for the lower half of an ordered sample of size `n`.
fn coefficients(n: usize, std_normal: &Normal) -> Vec<f64> {
    let nn2 = n / 2;
    if n == 3 {
        return vec![SQRTH];
    }
    let an25 = n as f64 + 0.25;
    // Approximate expected normal order statistics of the lower half; all
    // negative.
    let m: Vec<f64> = (1..=nn2)
        .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; nn2];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        (
            1,
            ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt(),
        )
    };
    for i in first..nn2 {
        a[i] = -m[i] / fac;
    }
    a
}

/// Returns `(W, p)`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64), StatError> {
    let n = sample.len();
    if n < 3 {
        return Err(StatError::TooFewPoints { needed: 3, got: n });
    }
    if n > 5000 {
        return Err(StatError::TooManyPoints {
            limit: 5000,
            got: n,
        });
    }
    super::check_finite(sample)?;
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(StatError::ZeroVariance);
    }

    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let half = coefficients(n, &std_normal);
    // Full weight vector: -a for the lower half, +a mirrored for the upper.
    let weight = |i: usize| -> f64 {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -half[i],
            std::cmp::Ordering::Greater => half[j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };

    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sx = xs.iter().sum::<f64>() / n as f64;
    let sa = (0..n).map(weight).sum::<f64>() / n as f64;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in xs.iter().enumerate() {
        let asa = weight(i) - sa;
        let xsx = xi - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    // 1 - W, computed this way to keep precision when W is close to 1.
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let p = (PI6 * (w.sqrt().asin() - STQR)).max(0.0);
        return Ok((w, p.min(1.0)));
    }
    let an = n as f64;
    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok((w, SMALL));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let lx = an.ln();
        (poly(&C5, lx), poly(&C6, lx).exp())
    };
    let p = Normal::new(m, s).expect("positive scale").sf(y);
    Ok((w, p.clamp(0.0, 1.0)))
}
