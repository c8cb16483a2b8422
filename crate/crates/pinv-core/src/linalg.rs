//! Small dense least-squares solves for leaf models.

use alloc::vec::Vec;

/// Linear model `intercept + sum(coef[j] * x[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Cholesky factor of a symmetric positive definite matrix, row-major.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Ridge regression on standardized columns with an unpenalized intercept.
///
/// Columns with zero variance get coefficient 0. The damped normal equations
/// are solved once and then refined `refine` times against the undamped
/// residual, which converges to the least-squares solution along
/// well-determined directions while keeping near-collinear ones damped.
pub fn ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64, refine: usize) -> LinearFit {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 {
        return LinearFit { coef: alloc::vec![0.0; d], intercept: 0.0 };
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut mean = alloc::vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut scale = alloc::vec![0.0; d];
    for r in rows {
        for j in 0..d {
            scale[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
        }
    }
    let active: Vec<usize> = (0..d)
        .filter(|&j| {
            scale[j] = (scale[j] / nf).sqrt();
            scale[j] > 1e-12 * (1.0 + mean[j].abs())
        })
        .collect();
    let k = active.len();
    let z = |r: &Vec<f64>, a: usize| (r[active[a]] - mean[active[a]]) / scale[active[a]];
    let mut gram = alloc::vec![0.0; k * k];
    let mut rhs = alloc::vec![0.0; k];
    for (r, &t) in rows.iter().zip(y) {
        let zr: Vec<f64> = (0..k).map(|a| z(r, a)).collect();
        for a in 0..k {
            rhs[a] += zr[a] * (t - y_mean) / nf;
            for b in 0..=a {
                gram[a * k + b] += zr[a] * zr[b] / nf;
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[b * k + a] = gram[a * k + b];
        }
    }
    let mut damp = lambda.max(1e-15);
    let factor = loop {
        let mut m = gram.clone();
        for a in 0..k {
            m[a * k + a] += damp;
        }
        if let Some(l) = cholesky(&m, k) {
            break l;
        }
        damp *= 10.0;
        if damp > 1e6 {
            return LinearFit { coef: alloc::vec![0.0; d], intercept: y_mean };
        }
    };
    let mut beta = cholesky_solve(&factor, k, &rhs);
    for _ in 0..refine {
        let mut resid = rhs.clone();
        for a in 0..k {
            for b in 0..k {
                resid[a] -= gram[a * k + b] * beta[b];
            }
        }
        let delta = cholesky_solve(&factor, k, &resid);
        let mut moved = 0.0;
        for a in 0..k {
            beta[a] += delta[a];
            moved += delta[a].abs();
        }
        if moved < 1e-15 {
            break;
        }
    }
    let mut coef = alloc::vec![0.0; d];
    let mut intercept = y_mean;
    for a in 0..k {
        let j = active[a];
        coef[j] = beta[a] / scale[j];
        intercept -= coef[j] * mean[j];
    }
    LinearFit { coef, intercept }
}

/// Sum of squared residuals of `fit` on the data.
pub fn sse(fit: &LinearFit, rows: &[Vec<f64>], y: &[f64]) -> f64 {
    rows.iter().zip(y).map(|(r, t)| (fit.predict(r) - t).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_exact_linear_target() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| alloc::vec![i as f64, ((i * 7) % 11) as f64, 3.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 0.5 * r[1] + 4.0).collect();
        let fit = ridge(&rows, &y, 1e-6, 50);
        assert!((fit.coef[0] - 2.0).abs() < 1e-9);
        assert!((fit.coef[1] + 0.5).abs() < 1e-9);
        assert_eq!(fit.coef[2], 0.0);
        assert!((fit.intercept - 4.0).abs() < 1e-8);
        assert!(sse(&fit, &rows, &y) < 1e-16);
    }

    #[test]
    fn collinear_columns_stay_finite() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| alloc::vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let fit = ridge(&rows, &y, 1e-6, 5);
        assert!(fit.coef.iter().all(|c| c.is_finite()));
        assert!(sse(&fit, &rows, &y) < 1e-6);
    }

    proptest! {
        #[test]
        fn fit_beats_the_mean(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 3..40)) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|p| alloc::vec![p.0, p.1]).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let fit = ridge(&rows, &y, 1e-6, 10);
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let base: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
            prop_assert!(sse(&fit, &rows, &y) <= base * (1.0 + 1e-9) + 1e-9);
        }
    }
}
