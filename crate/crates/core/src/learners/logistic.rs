use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::scalar::Scalar;

const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Mean log-loss plus `l2/2 * |w|^2` (intercept unpenalized).
fn objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (r, &l) in x.iter().zip(y) {
        let z = dot(r, w) + b;
        // log(1 + e^z) - y z, computed without overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += softplus - f64::from(l) * z;
    }
    loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearModel {
    /// L2-regularized logistic regression by damped Newton iterations, stopping
    /// at gradient norm 1e-8 or `max_iter`.
    pub fn fit(x: &[Vec<f64>], y: &[u8], l2: f64, max_iter: usize) -> Self {
        let n = x.len() as f64;
        let d = x.first().map_or(0, Vec::len);
        let p = d + 1;
        let mut w = vec![0.0; d];
        let pos = y.iter().filter(|&&l| l == 1).count() as f64;
        let mut b = (pos / (n - pos)).ln();
        if !b.is_finite() {
            b = 0.0;
        }
        let mut f = objective(x, y, &w, b, l2);

        for _ in 0..max_iter {
            let mut grad = vec![0.0; p];
            let mut hess = vec![0.0; p * p];
            for (r, &l) in x.iter().zip(y) {
                let mu = (dot(r, &w) + b).sigmoid();
                let g = mu - f64::from(l);
                let h = mu * (1.0 - mu);
                for i in 0..p {
                    let xi = if i < d { r[i] } else { 1.0 };
                    grad[i] += g * xi;
                    for j in i..p {
                        let xj = if j < d { r[j] } else { 1.0 };
                        hess[i * p + j] += h * xi * xj;
                    }
                }
            }
            for i in 0..p {
                grad[i] /= n;
                for j in i..p {
                    hess[i * p + j] /= n;
                    hess[j * p + i] = hess[i * p + j];
                }
            }
            for i in 0..d {
                grad[i] += l2 * w[i];
                hess[i * p + i] += l2;
            }
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm <= GRAD_TOL {
                break;
            }
            for i in 0..p {
                hess[i * p + i] += 1e-12;
            }
            let step = linalg::solve(&hess, &grad).unwrap_or_else(|| grad.clone());

            let mut t = 1.0;
            let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            let mut accepted = false;
            while t > 1e-12 {
                let w_new: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
                let b_new = b - t * step[d];
                let f_new = objective(x, y, &w_new, b_new, l2);
                if f_new <= f - 1e-4 * t * slope.max(0.0) {
                    w = w_new;
                    b = b_new;
                    f = f_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Self {
            weights: w,
            intercept: b,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        (dot(row, &self.weights) + self.intercept).sigmoid()
    }
}
