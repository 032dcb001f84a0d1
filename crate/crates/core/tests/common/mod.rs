//! Reference statistics written independently of the library.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, NegativeBinomial};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// NBD with shape `k` and mean `m`, via statrs' negative binomial.
pub fn nbd_pmf(k: f64, m: f64, n: u64) -> f64 {
    NegativeBinomial::new(k, k / (k + m)).unwrap().pmf(n)
}

pub fn chi_square_upper_tail(stat: f64, df: usize) -> f64 {
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

/// Pearson chi-square p-value after merging adjacent cells (left to right)
/// until each expected count is at least 5; `params` fitted parameters.
pub fn pooled_pearson_p(observed: &[f64], expected: &[f64], params: usize) -> f64 {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (oi, ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        let last = cells.last_mut().unwrap();
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    chi_square_upper_tail(stat, cells.len() - 1 - params)
}

/// Asymptotic Kolmogorov–Smirnov p-value against Exp(`rate`).
pub fn ks_exponential_p(samples: &[f64], rate: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=200)
        .map(|j| {
            let j = j as f64;
            2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}
