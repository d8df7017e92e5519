use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::seed::SeedStream;

/// One tanh hidden layer feeding a sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    pub inputs: usize,
    pub hidden: usize,
    /// Row-major `hidden × inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Perceptron {
    /// Full-batch gradient descent on mean log-loss with L2 weight decay.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[u8],
        hidden: usize,
        learning_rate: f64,
        epochs: usize,
        l2: f64,
        init: SeedStream,
    ) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut rng = init.rng();
        let limit1 = (6.0 / (d + hidden) as f64).sqrt();
        let limit2 = (6.0 / (hidden + 1) as f64).sqrt();
        let mut net = Self {
            inputs: d,
            hidden,
            w1: (0..hidden * d).map(|_| rng.random_range(-limit1..limit1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.random_range(-limit2..limit2)).collect(),
            b2: 0.0,
        };

        let mut act = vec![0.0; hidden];
        let mut g_w1 = vec![0.0; hidden * d];
        let mut g_b1 = vec![0.0; hidden];
        let mut g_w2 = vec![0.0; hidden];
        for _ in 0..epochs {
            g_w1.iter_mut().for_each(|v| *v = 0.0);
            g_b1.iter_mut().for_each(|v| *v = 0.0);
            g_w2.iter_mut().for_each(|v| *v = 0.0);
            let mut g_b2 = 0.0;
            for (r, &l) in x.iter().zip(y) {
                net.hidden_activations(r, &mut act);
                let out = (dot(&net.w2, &act) + net.b2).sigmoid();
                let delta = (out - f64::from(l)) / n;
                g_b2 += delta;
                for h in 0..hidden {
                    g_w2[h] += delta * act[h];
                    let dh = delta * net.w2[h] * (1.0 - act[h] * act[h]);
                    g_b1[h] += dh;
                    let row = &mut g_w1[h * d..(h + 1) * d];
                    for (g, xi) in row.iter_mut().zip(r) {
                        *g += dh * xi;
                    }
                }
            }
            for (w, g) in net.w1.iter_mut().zip(&g_w1) {
                *w -= learning_rate * (g + l2 * *w);
            }
            for (b, g) in net.b1.iter_mut().zip(&g_b1) {
                *b -= learning_rate * g;
            }
            for (w, g) in net.w2.iter_mut().zip(&g_w2) {
                *w -= learning_rate * (g + l2 * *w);
            }
            net.b2 -= learning_rate * g_b2;
        }
        net
    }

    fn hidden_activations(&self, row: &[f64], out: &mut [f64]) {
        for (h, a) in out.iter_mut().enumerate() {
            let w = &self.w1[h * self.inputs..(h + 1) * self.inputs];
            *a = (dot(w, row) + self.b1[h]).tanh();
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut act = vec![0.0; self.hidden];
        self.hidden_activations(row, &mut act);
        (dot(&self.w2, &act) + self.b2).sigmoid()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_xor() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let x: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 2.0 * v - 1.0).collect()).collect();
        let net = Perceptron::fit(&x, &y, 8, 0.5, 3000, 0.0, SeedStream::new(3));
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(u8::from(net.predict(r) >= 0.5), l);
        }
    }
}
