//! C-SVC trained by SMO with second-order working-set selection, with a
//! sigmoid fitted on training margins for probabilities.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

const SMO_TOL: f64 = 1e-4;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Poly { gamma: f64, degree: u32, coef0: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Poly { gamma, degree, coef0 } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (gamma * dot + coef0).powi(degree as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVectorModel {
    pub kernel: Kernel,
    /// Support vectors, flattened row-major.
    pub support: Vec<f64>,
    pub dim: usize,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Margin sigmoid `p = sigmoid(slope * f + intercept)`.
    pub prob_slope: f64,
    pub prob_intercept: f64,
}

impl SupportVectorModel {
    pub fn fit(x: &[Vec<f64>], y: &[u8], kernel: Kernel, c: f64) -> Self {
        let n = x.len();
        let dim = x.first().map_or(0, Vec::len);
        let ys: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&x[i], &x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let (alpha, rho) = solve_dual(&k, &ys, c);

        let mut support = Vec::new();
        let mut coef = Vec::new();
        for i in 0..n {
            if alpha[i] > 0.0 {
                support.extend_from_slice(&x[i]);
                coef.push(alpha[i] * ys[i]);
            }
        }
        let mut model = Self {
            kernel,
            support,
            dim,
            coef,
            rho,
            prob_slope: 1.0,
            prob_intercept: 0.0,
        };
        let margins: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| alpha[j] > 0.0)
                    .map(|j| alpha[j] * ys[j] * k[j * n + i])
                    .sum::<f64>()
                    - rho
            })
            .collect();
        let (a, b) = margin_sigmoid(&margins, &ys);
        // Keep the probability a strictly increasing map of the margin.
        model.prob_slope = a.max(1e-12);
        model.prob_intercept = b;
        model
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.support
            .chunks(self.dim.max(1))
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, row))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        (self.prob_slope * self.decision(row) + self.prob_intercept).sigmoid()
    }
}

/// Dual coordinate solver over the precomputed kernel; returns (alpha, rho).
fn solve_dual(k: &[f64], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(100_000);

    for _ in 0..max_iter {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !is_upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    gmax_idx = t;
                }
            } else if !is_lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                gmax_idx = t;
            }
        }
        let i = gmax_idx;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for j in 0..n {
            if y[j] > 0.0 {
                if !is_lower(alpha[j]) {
                    let grad_diff = gmax + grad[j];
                    gmax2 = gmax2.max(grad[j]);
                    if grad_diff > 0.0 && i != usize::MAX {
                        let quad = k[i * n + i] + k[j * n + j] - 2.0 * y[i] * q(i, j);
                        let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            gmin_idx = j;
                            obj_min = obj;
                        }
                    }
                }
            } else if !is_upper(alpha[j]) {
                let grad_diff = gmax - grad[j];
                gmax2 = gmax2.max(-grad[j]);
                if grad_diff > 0.0 && i != usize::MAX {
                    let quad = k[i * n + i] + k[j * n + j] + 2.0 * y[i] * q(i, j);
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        gmin_idx = j;
                        obj_min = obj;
                    }
                }
            }
        }
        if i == usize::MAX || gmin_idx == usize::MAX || gmax + gmax2 < SMO_TOL {
            break;
        }
        let j = gmin_idx;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qd_i = k[i * n + i];
        let qd_j = k[j * n + j];
        let qij = q(i, j);
        if y[i] != y[j] {
            let mut quad = qd_i + qd_j + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd_i + qd_j - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    (alpha, rho)
}

/// Sigmoid fit on decision values with prior-corrected targets
/// (Lin, Lin & Weng's Newton method). Returns `(slope, intercept)` for
/// `p = sigmoid(slope * f + intercept)`.
fn margin_sigmoid(dec: &[f64], y: &[f64]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v > 0.0 { hi } else { lo }).collect();

    // libsvm parameterization: p = 1 / (1 + exp(A f + B))
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let fapb = f * a + b;
                if fapb >= 0.0 {
                    ti * fapb + (-fapb).exp().ln_1p()
                } else {
                    (ti - 1.0) * fapb + fapb.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let fapb = f * a + b;
            let (p, q) = if fapb >= 0.0 {
                let e = (-fapb).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fapb.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (-a, -b)
}
