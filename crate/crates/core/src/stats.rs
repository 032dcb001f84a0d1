//! Small statistical helpers shared by the fitting and validation code.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper tail `P(X > stat)` of a chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return f64::NAN;
    }
    ChiSquared::new(df as f64).map(|d| d.sf(stat.max(0.0))).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledChiSquare {
    pub statistic: f64,
    /// `(observed, expected)` per pooled bin.
    pub bins: Vec<(f64, f64)>,
}

/// Pearson statistic after pooling adjacent cells, left to right, until each
/// pooled cell expects at least `min_expected`. A short final cell is merged
/// into its predecessor. The caller folds any tail mass into the last cell.
pub fn pooled_chi_square(observed: &[f64], expected: &[f64], min_expected: f64) -> PooledChiSquare {
    assert_eq!(observed.len(), expected.len());
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= min_expected {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let statistic = bins.iter().filter(|(_, e)| *e > 0.0).map(|(o, e)| (o - e) * (o - e) / e).sum();
    PooledChiSquare { statistic, bins }
}

/// Kolmogorov–Smirnov distance of `samples` from an exponential law with
/// `rate`, and its asymptotic p-value.
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = -(-rate * x.max(0.0)).exp_m1();
        d = d.max((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
    }
    (d, kolmogorov_sf(d, sorted.len()))
}

/// Asymptotic `P(D_n > d)` with the Stephens small-sample correction.
pub fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Variance-to-mean ratio.
pub fn index_of_dispersion(xs: &[f64]) -> f64 {
    variance(xs) / mean(xs)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}
