//! Shapley attributions over meta-features with interventional masking:
//! features outside a coalition take each background row's values and the
//! coalition value is the mean prediction over the background.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{apply, PlattScaler};
use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::scalar::Scalar;
use crate::seed::SeedStream;
use crate::stacking::{MetaBank, MetaFeatureMatrix};

/// Largest feature count for exhaustive coalition enumeration.
pub const MAX_EXACT_FEATURES: usize = 16;
pub const DEFAULT_BACKGROUND: usize = 20;
const MAX_BATCH_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues<T> {
    pub feature_names: Vec<String>,
    /// Cohort index of each explained row.
    pub samples: Vec<usize>,
    pub per_sample: Vec<Vec<T>>,
    pub base_value: T,
    pub predictions: Vec<T>,
    pub global_importance: Vec<T>,
    pub background: Vec<usize>,
}

impl<T: Scalar> ShapValues<T> {
    /// `feature,mean_abs_shap`.
    pub fn global_csv(&self) -> String {
        let mut s = String::from("feature,mean_abs_shap\n");
        for (n, v) in self.feature_names.iter().zip(&self.global_importance) {
            s.push_str(&format!("{n},{v}\n"));
        }
        s
    }
}

fn check_inputs<T: Scalar>(x: &[T], background: &[Vec<T>]) -> Result<usize> {
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    let d = x.len();
    if d == 0 {
        return Err(Error::EmptyInput("sample has no features".into()));
    }
    if let Some(r) = background.iter().find(|r| r.len() != d) {
        return Err(Error::ShapeError(format!("background row has {} features, sample {d}", r.len())));
    }
    Ok(d)
}

/// Mean prediction over the background for each coalition mask.
fn coalition_values<T, F>(f: &F, x: &[T], background: &[Vec<T>], masks: &[u64]) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[Vec<T>]) -> Result<Vec<T>>,
{
    let m = background.len();
    let per_batch = (MAX_BATCH_ROWS / m).max(1);
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(per_batch) {
        let mut rows = Vec::with_capacity(chunk.len() * m);
        for &mask in chunk {
            for b in background {
                rows.push(
                    (0..x.len())
                        .map(|i| if mask >> i & 1 == 1 { x[i] } else { b[i] })
                        .collect::<Vec<T>>(),
                );
            }
        }
        let preds = f(&rows)?;
        if preds.len() != rows.len() {
            return Err(Error::ShapeError(format!(
                "prediction function returned {} values for {} rows",
                preds.len(),
                rows.len()
            )));
        }
        for c in preds.chunks(m) {
            out.push(c.iter().copied().sum::<T>() / T::of_usize(m));
        }
    }
    Ok(out)
}

/// Shapley weight `|S|! (d - |S| - 1)! / d!` for every coalition size.
fn shapley_weights(d: usize) -> Vec<f64> {
    let lf = |k: usize| (1..=k).map(|v| (v as f64).ln()).sum::<f64>();
    (0..d).map(|s| (lf(s) + lf(d - s - 1) - lf(d)).exp()).collect()
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley<T, F>(f: &F, x: &[T], background: &[Vec<T>]) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[Vec<T>]) -> Result<Vec<T>>,
{
    let d = check_inputs(x, background)?;
    if d > MAX_EXACT_FEATURES {
        return Err(Error::InvalidInput(format!(
            "exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
        )));
    }
    let masks: Vec<u64> = (0..1u64 << d).collect();
    let v = coalition_values(f, x, background, &masks)?;
    let w = shapley_weights(d);
    Ok((0..d)
        .map(|i| {
            let bit = 1u64 << i;
            let mut phi = T::zero();
            for s in masks.iter().filter(|&&s| s & bit == 0) {
                let size = s.count_ones() as usize;
                phi += T::of(w[size]) * (v[(s | bit) as usize] - v[*s as usize]);
            }
            phi
        })
        .collect())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn masks_of_size(d: usize, s: usize) -> Vec<u64> {
    (0..1u64 << d).filter(|m| m.count_ones() as usize == s).collect()
}

/// Kernel SHAP: weighted least squares over coalitions under the efficiency
/// constraint. Whole coalition sizes are enumerated from the outside in
/// (sizes `s` and `d - s` together) while the budget allows; singletons are
/// always included; the rest of the budget is sampled with the Shapley
/// kernel. A budget of `2^d - 2` reproduces [`exact_shapley`].
pub fn kernel_shap<T, F>(f: &F, x: &[T], background: &[Vec<T>], n_coalitions: usize, seed: u64) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[Vec<T>]) -> Result<Vec<T>>,
{
    let d = check_inputs(x, background)?;
    if d > 30 {
        return Err(Error::InvalidInput(format!("kernel SHAP supports at most 30 features, got {d}")));
    }
    let minimum = d + 2;
    if n_coalitions < minimum {
        return Err(Error::InsufficientBudget {
            budget: n_coalitions,
            minimum,
        });
    }
    let full = 1u64 << d;
    let ends = coalition_values(f, x, background, &[0, full - 1])?;
    let (v0, vf) = (ends[0].as_f64(), ends[1].as_f64());
    if d == 1 {
        return Ok(vec![T::of(vf - v0)]);
    }

    let kernel = |s: usize| (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64);
    let mut budget = n_coalitions.min((full - 2) as usize);
    let mut chosen: BTreeMap<u64, f64> = BTreeMap::new();
    let mut done = vec![false; d];
    for s in 1..=d / 2 {
        let paired = 2 * s != d;
        let count = binomial(d, s) as usize * if paired { 2 } else { 1 };
        if count > budget {
            break;
        }
        for size in if paired { vec![s, d - s] } else { vec![s] } {
            for m in masks_of_size(d, size) {
                chosen.insert(m, kernel(size));
            }
            done[size] = true;
        }
        budget -= count;
    }
    if !done[1] {
        for i in 0..d {
            chosen.insert(1 << i, kernel(1));
        }
        done[1] = true;
        budget -= d;
    }
    let open: Vec<usize> = (1..d).filter(|&s| !done[s]).collect();
    if budget > 0 && !open.is_empty() {
        let mass: Vec<f64> = open.iter().map(|&s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
        let total: f64 = mass.iter().sum();
        let mut rng = SeedStream::new(seed).child("kernel-shap").rng();
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for _ in 0..budget {
            let mut u = rng.random::<f64>() * total;
            let mut size = *open.last().unwrap();
            for (&s, &w) in open.iter().zip(&mass) {
                if u < w {
                    size = s;
                    break;
                }
                u -= w;
            }
            let mut picks = index::sample(&mut rng, d, size).into_vec();
            picks.shuffle(&mut rng);
            let m = picks.iter().fold(0u64, |acc, &i| acc | 1 << i);
            *counts.entry(m).or_default() += 1;
        }
        for (m, c) in counts {
            *chosen.entry(m).or_default() += total * c as f64 / budget as f64;
        }
    }

    let masks: Vec<u64> = chosen.keys().copied().collect();
    let vals = coalition_values(f, x, background, &masks)?;
    let delta = vf - v0;
    let p = d - 1;
    let mut ata = vec![0.0; p * p];
    let mut atb = vec![0.0; p];
    for ((m, w), v) in chosen.iter().zip(&vals) {
        let z = |i: usize| (m >> i & 1) as f64;
        let zd = z(d - 1);
        let target = v.as_f64() - v0 - zd * delta;
        let a: Vec<f64> = (0..p).map(|i| z(i) - zd).collect();
        for i in 0..p {
            atb[i] += w * a[i] * target;
            for j in 0..p {
                ata[i * p + j] += w * a[i] * a[j];
            }
        }
    }
    let head = solve(&ata, &atb).ok_or_else(|| Error::InvalidInput("singular kernel SHAP system".into()))?;
    let last = delta - head.iter().sum::<f64>();
    Ok(head.into_iter().chain([last]).map(T::of).collect())
}

/// Largest-remainder stratified sample of `size` positions; ties in the
/// remainder go to the larger class, then the lower label.
pub fn stratified_background(y: &[u8], size: usize, seed: u64) -> Result<Vec<usize>> {
    if y.is_empty() || size == 0 {
        return Err(Error::EmptyBackground);
    }
    let size = size.min(y.len());
    let members: [Vec<usize>; 2] = [0u8, 1].map(|c| (0..y.len()).filter(|&i| y[i] == c).collect());
    let n = y.len();
    let mut quota = [0usize; 2];
    let mut rem = [(0usize, 0usize); 2];
    for c in 0..2 {
        let exact = size * members[c].len();
        quota[c] = exact / n;
        rem[c] = (exact % n, members[c].len());
    }
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    let mut left = size - quota[0] - quota[1];
    for c in order {
        if left > 0 && quota[c] < members[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    let root = SeedStream::new(seed);
    let mut out = Vec::with_capacity(size);
    for c in 0..2 {
        let mut idx = members[c].clone();
        idx.shuffle(&mut root.child(&format!("background-{c}")).rng());
        out.extend(idx.into_iter().take(quota[c]));
    }
    out.sort_unstable();
    Ok(out)
}

/// Explains the recalibrated bank average on the outer-test rows, with a
/// stratified background drawn from the OOF rows only.
pub fn explain_ensemble(
    bank: &MetaBank,
    recal: Option<&PlattScaler<f64>>,
    x_test: &MetaFeatureMatrix,
    x_oof: &MetaFeatureMatrix,
    y_oof: &[u8],
    background_size: usize,
    seed: u64,
) -> Result<ShapValues<f64>> {
    if y_oof.len() != x_oof.len() {
        return Err(Error::ShapeError(format!("{} labels for {} OOF rows", y_oof.len(), x_oof.len())));
    }
    if x_oof.provenance.iter().any(|p| p.inner_fold.is_none()) {
        return Err(Error::LeakageDetected("background source contains outer-test rows".into()));
    }
    let mut test_studies = x_test.studies.clone();
    test_studies.sort_unstable();
    if let Some(s) = x_oof.studies.iter().find(|s| test_studies.binary_search(s).is_ok()) {
        return Err(Error::LeakageDetected(format!("background candidate study {s} is an explained test row")));
    }
    let picks = stratified_background(y_oof, background_size, seed)?;
    let background: Vec<Vec<f64>> = picks.iter().map(|&i| x_oof.rows[i].clone()).collect();
    let f = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
        let raw = bank.predict_rows(rows)?;
        Ok(match recal {
            Some(r) => apply(r, &raw),
            None => raw,
        })
    };
    let per_sample = x_test
        .rows
        .par_iter()
        .map(|x| exact_shapley(&f, x, &background))
        .collect::<Result<Vec<_>>>()?;
    let predictions = f(&x_test.rows)?;
    let base = f(&background)?;
    let base_value = base.iter().sum::<f64>() / base.len() as f64;
    let d = x_test.column_semantics.len();
    let n = per_sample.len().max(1) as f64;
    let global_importance = (0..d)
        .map(|i| per_sample.iter().map(|p| p[i].abs()).sum::<f64>() / n)
        .collect();
    Ok(ShapValues {
        feature_names: x_test.column_semantics.iter().map(|c| c.name()).collect(),
        samples: x_test.studies.clone(),
        per_sample,
        base_value,
        predictions,
        global_importance,
        background: picks.iter().map(|&i| x_oof.studies[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn linear(w: Vec<f64>) -> impl Fn(&[Vec<f64>]) -> Result<Vec<f64>> {
        move |rows| Ok(rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect())
    }

    fn rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    /// Lookup-table function: the value depends on which features exceed 0.5.
    fn table_fn(table: Vec<f64>) -> impl Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync {
        move |rows| {
            Ok(rows
                .iter()
                .map(|r| {
                    let key = r.iter().enumerate().fold(0usize, |k, (i, &v)| k | (usize::from(v > 0.5) << i));
                    table[key]
                })
                .collect())
        }
    }

    /// Independent enumerator: builds each coalition as an explicit index
    /// list and recomputes v(S) from scratch.
    fn oracle(f: &dyn Fn(&[Vec<f64>]) -> Result<Vec<f64>>, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
        let d = x.len();
        let fact = |k: usize| (1..=k).product::<usize>() as f64;
        let value = |set: &[usize]| {
            let masked: Vec<Vec<f64>> = bg
                .iter()
                .map(|b| (0..d).map(|j| if set.contains(&j) { x[j] } else { b[j] }).collect())
                .collect();
            f(&masked).unwrap().iter().sum::<f64>() / bg.len() as f64
        };
        (0..d)
            .map(|i| {
                let others: Vec<usize> = (0..d).filter(|&j| j != i).collect();
                let mut phi = 0.0;
                for pick in 0..1usize << others.len() {
                    let set: Vec<usize> = others.iter().enumerate().filter(|(k, _)| pick >> k & 1 == 1).map(|(_, &j)| j).collect();
                    let mut with = set.clone();
                    with.push(i);
                    let w = fact(set.len()) * fact(d - set.len() - 1) / fact(d);
                    phi += w * (value(&with) - value(&set));
                }
                phi
            })
            .collect()
    }

    #[test]
    fn linear_closed_form() {
        let w: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let bg = rows(1, 7, 10);
        let x = rows(2, 1, 10).remove(0);
        let phi = exact_shapley(&linear(w.clone()), &x, &bg).unwrap();
        for i in 0..10 {
            let mean = bg.iter().map(|r| r[i]).sum::<f64>() / 7.0;
            assert!((phi[i] - w[i] * (x[i] - mean)).abs() < 1e-9);
        }
        let k = kernel_shap(&linear(w.clone()), &x, &bg, 12, 3).unwrap();
        for i in 0..10 {
            assert!((k[i] - phi[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_gets_nothing() {
        let f = |rows: &[Vec<f64>]| Ok(vec![3.0; rows.len()]);
        let phi = exact_shapley(&f, &[0.2; 10], &rows(4, 3, 10)).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn matches_independent_enumerator() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let table: Vec<f64> = (0..1024).map(|_| rng.random()).collect();
        let f = table_fn(table);
        let bg = rows(5, 4, 10);
        let x = rows(6, 1, 10).remove(0);
        let a = exact_shapley(&f, &x, &bg).unwrap();
        let b = oracle(&f, &x, &bg);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9);
        }
        let k = kernel_shap(&f, &x, &bg, 1022, 0).unwrap();
        for (p, q) in a.iter().zip(&k) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn guards() {
        let f = linear(vec![1.0; 10]);
        assert!(matches!(exact_shapley(&f, &[0.0; 10], &[]), Err(Error::EmptyBackground)));
        assert!(matches!(
            kernel_shap(&f, &[0.0; 10], &rows(0, 2, 10), 11, 0),
            Err(Error::InsufficientBudget { budget: 11, minimum: 12 })
        ));
    }

    #[test]
    fn kernel_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let f = table_fn((0..1024).map(|_| rng.random()).collect());
        let bg = rows(7, 3, 10);
        let x = rows(8, 1, 10).remove(0);
        assert_eq!(kernel_shap(&f, &x, &bg, 200, 4).unwrap(), kernel_shap(&f, &x, &bg, 200, 4).unwrap());
    }

    #[test]
    fn apportionment_example() {
        let y: Vec<u8> = (0..60).map(|i| u8::from(i < 32)).collect();
        let bg = stratified_background(&y, 20, 1).unwrap();
        let pos = bg.iter().filter(|&&i| y[i] == 1).count();
        assert_eq!((pos, bg.len() - pos), (11, 9));
        // Equal remainders: the larger class takes the extra slot.
        let y: Vec<u8> = (0..4).map(|i| u8::from(i < 2)).collect();
        let bg = stratified_background(&y, 3, 0).unwrap();
        assert_eq!(bg.iter().filter(|&&i| y[i] == 0).count(), 2);
    }

    #[test]
    fn f32_exact() {
        let f = |rows: &[Vec<f32>]| Ok(rows.iter().map(|r| 2.0 * r[0] + r[1] * r[2]).collect());
        let bg = vec![vec![0.0f32, 0.0, 0.0]];
        let phi = exact_shapley(&f, &[1.0, 1.0, 1.0], &bg).unwrap();
        assert_eq!(phi, vec![2.0, 0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn efficiency_symmetry_null(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            // Features 0 and 1 play symmetric roles; feature 9 is never read.
            let f = move |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
                Ok(rows.iter().map(|r| c[0] * r[0] * r[1] + c[1] * (r[2] - r[3]).powi(2) + c[2] * r[4].sin() + c[3] * (r[0] + r[1])).collect())
            };
            let mut bg = rows(seed + 1, 5, 10);
            for r in &mut bg {
                r[1] = r[0];
            }
            let mut x = rows(seed + 2, 1, 10).remove(0);
            x[1] = x[0];
            let phi = exact_shapley(&f, &x, &bg).unwrap();
            let fx = f(&[x.clone()]).unwrap()[0];
            let base = f(&bg).unwrap().iter().sum::<f64>() / bg.len() as f64;
            prop_assert!((phi.iter().sum::<f64>() + base - fx).abs() < 1e-9);
            prop_assert!((phi[0] - phi[1]).abs() < 1e-9);
            prop_assert!(phi[9].abs() < 1e-12);
        }
    }
}
