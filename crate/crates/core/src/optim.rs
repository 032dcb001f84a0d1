//! Derivative-free minimization (Nelder–Mead simplex).

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Initial simplex edge length along each axis.
    pub step: f64,
    /// Stop when the simplex's function-value spread and diameter both fall below this.
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { step: 0.25, tolerance: 1e-6, max_evaluations: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut evaluations = 0;
        let mut eval = |x: &[f64], count: &mut usize| {
            *count += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((start.to_vec(), eval(start, &mut evaluations)));
        for i in 0..n {
            let mut x = start.to_vec();
            x[i] += self.step;
            let v = eval(&x, &mut evaluations);
            simplex.push((x, v));
        }

        let mut converged = false;
        while evaluations < self.max_evaluations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = (simplex[n].1 - simplex[0].1).abs();
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= self.tolerance && diameter <= self.tolerance {
                converged = true;
                break;
            }

            let centroid: Vec<f64> =
                (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
            let along =
                |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect() };

            let reflected = along(1.0);
            let fr = eval(&reflected, &mut evaluations);
            if fr < simplex[0].1 {
                let expanded = along(2.0);
                let fe = eval(&expanded, &mut evaluations);
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
            } else {
                let (contracted, fc) = if fr < simplex[n].1 {
                    let x = along(0.5);
                    let v = eval(&x, &mut evaluations);
                    (x, v)
                } else {
                    let x = along(-0.5);
                    let v = eval(&x, &mut evaluations);
                    (x, v)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (contracted, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for (x, v) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best) {
                            *xi = bi + 0.5 * (*xi - bi);
                        }
                        *v = eval(x, &mut evaluations);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (point, value) = simplex.swap_remove(0);
        Minimum { point, value, evaluations, converged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead { step: 0.5, tolerance: 1e-10, max_evaluations: 10_000 };
        let r = nm.minimize(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), &[-1.2, 1.0]);
        assert!(r.converged);
        assert!((r.point[0] - 1.0).abs() < 1e-4 && (r.point[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn evaluation_cap() {
        let nm = NelderMead { step: 1.0, tolerance: 0.0, max_evaluations: 50 };
        let r = nm.minimize(|x| x[0].abs().sqrt() + x[1] * x[1], &[3.0, 3.0]);
        assert!(!r.converged);
        assert!(r.evaluations >= 50);
    }
}
