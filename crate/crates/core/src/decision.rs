//! Threshold selection, point and rank metrics, Brier score and decision
//! curves. BAV (label 1) is the positive class throughout, and a sample is
//! predicted positive when `p >= tau`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at_threshold<T: Scalar>(probs: &[T], y: &[u8], tau: T) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in probs.iter().zip(y) {
            match (p >= tau, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Counts for hard 0/1 predictions.
    pub fn from_predictions(pred: &[u8], y: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in pred.iter().zip(y) {
            match (p == 1, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Positive-class F1; zero when nothing is predicted positive.
    pub fn f1(&self) -> f64 {
        f1_from(self.tp, self.fp, self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub macro_f1: T,
    pub auroc: Option<T>,
    pub average_precision: Option<T>,
    pub brier: Option<T>,
    pub confusion: Confusion,
}

/// Threshold-dependent metrics. Rank and probability metrics are left unset;
/// see [`evaluate`] for the full bundle.
pub fn point_metrics<T: Scalar>(probs: &[T], y: &[u8], tau: T) -> Metrics<T> {
    confusion_metrics(Confusion::at_threshold(probs, y, tau))
}

/// Threshold-dependent metrics from a confusion matrix.
pub fn confusion_metrics<T: Scalar>(c: Confusion) -> Metrics<T> {
    let pos_f1 = c.f1();
    let neg_f1 = f1_from(c.tn, c.fn_, c.fp);
    Metrics {
        accuracy: T::of(ratio(c.tp + c.tn, c.total())),
        precision: T::of(ratio(c.tp, c.tp + c.fp)),
        recall: T::of(ratio(c.tp, c.tp + c.fn_)),
        f1: T::of(pos_f1),
        macro_f1: T::of((pos_f1 + neg_f1) / 2.0),
        auroc: None,
        average_precision: None,
        brier: None,
        confusion: c,
    }
}

/// Point metrics plus AUROC and AP (when defined for the labels) and Brier.
pub fn evaluate<T: Scalar>(probs: &[T], y: &[u8], tau: T) -> Metrics<T> {
    let mut m = point_metrics(probs, y, tau);
    m.auroc = auroc(probs, y).ok();
    m.average_precision = average_precision(probs, y).ok();
    m.brier = brier(probs, y).ok();
    m
}

/// Mean of per-class F1 for hard predictions.
pub fn macro_f1(pred: &[u8], y: &[u8]) -> f64 {
    let c = Confusion::from_predictions(pred, y);
    (f1_from(c.tp, c.fp, c.fn_) + f1_from(c.tn, c.fn_, c.fp)) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice<T> {
    pub tau_star: T,
    pub grid_step: T,
    pub achieved_f1: T,
    pub tie_count: usize,
}

/// Grid points `i / n` for `i = 0..=n`, with `n = round(1 / step)`.
pub fn threshold_grid<T: Scalar>(grid_step: T) -> Result<Vec<T>> {
    let steps = (T::one() / grid_step).round();
    if !(grid_step > T::zero()) || !steps.is_finite() || steps < T::one() {
        return Err(Error::InvalidInput(format!("grid step {grid_step}")));
    }
    let n = steps.to_usize().unwrap();
    Ok((0..=n)
        .map(|i| T::of_usize(i) / T::of_usize(n))
        .collect())
}

/// Picks the smallest grid threshold attaining the maximum positive-class F1.
pub fn select_threshold<T: Scalar>(probs: &[T], y: &[u8], grid_step: T) -> Result<ThresholdChoice<T>> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("threshold selection".into()));
    }
    check_len(probs, y)?;
    let grid = threshold_grid(grid_step)?;

    // Sort once; each threshold then reduces to two partition points.
    let mut pos: Vec<T> = Vec::new();
    let mut neg: Vec<T> = Vec::new();
    for (&p, &l) in probs.iter().zip(y) {
        if l == 1 {
            pos.push(p)
        } else {
            neg.push(p)
        }
    }
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    neg.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));

    let mut best = f64::NEG_INFINITY;
    let mut best_tau = T::zero();
    let mut ties = 0usize;
    for &tau in &grid {
        let tp = pos.len() - pos.partition_point(|&p| p < tau);
        let fp = neg.len() - neg.partition_point(|&p| p < tau);
        let fn_ = pos.len() - tp;
        let f1 = f1_from(tp, fp, fn_);
        if f1 > best {
            best = f1;
            best_tau = tau;
            ties = 1;
        } else if f1 == best {
            ties += 1;
        }
    }
    Ok(ThresholdChoice {
        tau_star: best_tau,
        grid_step,
        achieved_f1: T::of(best),
        tie_count: ties,
    })
}

fn check_len<T>(a: &[T], y: &[u8]) -> Result<()> {
    if a.len() != y.len() {
        return Err(Error::ShapeError(format!(
            "{} scores for {} labels",
            a.len(),
            y.len()
        )));
    }
    Ok(())
}

fn total_cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Tie-aware AUROC, identical to the Mann-Whitney pair statistic.
pub fn auroc<T: Scalar>(scores: &[T], y: &[u8]) -> Result<T> {
    check_len(scores, y)?;
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&scores[a], &scores[b]));

    // Walk tie groups in ascending order; each positive beats every negative
    // strictly below its group and half-beats negatives inside it.
    let mut wins2: u128 = 0; // doubled to keep ties exact
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if y[order[j]] == 1 {
                gp += 1
            } else {
                gn += 1
            }
            j += 1;
        }
        wins2 += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    let pairs = (n_pos as u128) * (n_neg as u128);
    Ok(T::of(wins2 as f64 / (2.0 * pairs as f64)))
}

/// Step-interpolated average precision over descending unique thresholds.
pub fn average_precision<T: Scalar>(scores: &[T], y: &[u8]) -> Result<T> {
    check_len(scores, y)?;
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::DegenerateLabels("AP needs at least one positive".into()));
    }
    let mut ap = 0.0f64;
    let mut prev_recall = 0.0f64;
    for pt in pr_points(scores, y) {
        ap += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    Ok(T::of(ap))
}

pub fn brier<T: Scalar>(probs: &[T], y: &[u8]) -> Result<T> {
    check_len(probs, y)?;
    if probs.is_empty() {
        return Err(Error::EmptyInput("Brier score".into()));
    }
    let sum: T = probs
        .iter()
        .zip(y)
        .map(|(&p, &l)| {
            let d = p - T::of(f64::from(l));
            d * d
        })
        .sum();
    Ok(sum / T::of_usize(probs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// Groups of (threshold, tp, fp) in descending threshold order, cumulative.
fn cumulative_counts<T: Scalar>(scores: &[T], y: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&scores[b], &scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if y[order[i]] == 1 {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        out.push((t.as_f64(), tp, fp));
    }
    out
}

/// ROC points at every unique score, starting from (0, 0) at +inf.
pub fn roc_curve<T: Scalar>(scores: &[T], y: &[u8]) -> Vec<RocPoint> {
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = y.len() - n_pos;
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    pts.extend(
        cumulative_counts(scores, y)
            .into_iter()
            .map(|(t, tp, fp)| RocPoint {
                fpr: ratio(fp, n_neg),
                tpr: ratio(tp, n_pos),
                threshold: t,
            }),
    );
    pts
}

/// Precision-recall points at every unique score, descending threshold.
pub fn pr_points<T: Scalar>(scores: &[T], y: &[u8]) -> Vec<PrPoint> {
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    cumulative_counts(scores, y)
        .into_iter()
        .map(|(t, tp, fp)| PrPoint {
            recall: ratio(tp, n_pos),
            precision: ratio(tp, tp + fp),
            threshold: t,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaPoint<T> {
    pub p_t: T,
    pub nb_model: T,
    pub nb_treat_all: T,
    pub nb_treat_none: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve<T> {
    pub points: Vec<DcaPoint<T>>,
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_dca_grid<T: Scalar>() -> Vec<T> {
    (1..100).map(|i| T::of_usize(i) / T::of(100.0)).collect()
}

pub fn dca_curve<T: Scalar>(probs: &[T], y: &[u8], p_t_grid: &[T]) -> Result<DecisionCurve<T>> {
    check_len(probs, y)?;
    if probs.is_empty() {
        return Err(Error::EmptyInput("decision curve".into()));
    }
    let n = T::of_usize(y.len());
    let prevalence = T::of_usize(y.iter().filter(|&&l| l == 1).count()) / n;
    let mut points = Vec::with_capacity(p_t_grid.len());
    for &p_t in p_t_grid {
        if !(p_t > T::zero() && p_t < T::one()) {
            return Err(Error::InvalidThresholdProbability(p_t.as_f64()));
        }
        let odds = p_t / (T::one() - p_t);
        let c = Confusion::at_threshold(probs, y, p_t);
        let nb_model = T::of_usize(c.tp) / n - T::of_usize(c.fp) / n * odds;
        let nb_treat_all = prevalence - (T::one() - prevalence) * odds;
        points.push(DcaPoint {
            p_t,
            nb_model,
            nb_treat_all,
            nb_treat_none: T::zero(),
        });
    }
    Ok(DecisionCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
        let mut acc = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    acc += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        acc / pairs
    }

    #[test]
    fn threshold_examples() {
        let c = select_threshold(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 1, 1], 0.001).unwrap();
        assert_eq!(c.tau_star, 0.201);
        assert_eq!(c.achieved_f1, 1.0);
        assert_eq!(c.tie_count, 200);

        let all_pos = select_threshold(&[0.3, 0.9], &[1, 1], 0.001).unwrap();
        assert_eq!(all_pos.tau_star, 0.0);

        let exact = select_threshold(&[0.0, 1.0, 0.0, 1.0], &[0, 1, 0, 1], 0.001).unwrap();
        assert_eq!(exact.tau_star, 0.001);
        assert_eq!(exact.achieved_f1, 1.0);

        assert!(matches!(
            select_threshold::<f64>(&[], &[], 0.001),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn grid_is_exact() {
        let g: Vec<f64> = threshold_grid(0.001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1000], 1.0);
        assert_eq!(g[201], 0.201);
    }

    #[test]
    fn point_metric_examples() {
        let m = point_metrics(&[0.9, 0.8, 0.3], &[1, 0, 1], 0.5);
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 0,
                fn_: 1
            }
        );
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
        assert!((m.accuracy - 1.0f64 / 3.0).abs() < 1e-15);

        let perfect = point_metrics(&[1.0, 0.0, 1.0], &[1, 0, 1], 0.5);
        for v in [perfect.accuracy, perfect.precision, perfect.recall, perfect.f1, perfect.macro_f1] {
            assert_eq!(v, 1.0);
        }

        let none = point_metrics(&[0.1, 0.2], &[1, 0], 0.5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rank_metric_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.0, 1.0, 1.0], &[0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels(_))));

        let ap = average_precision(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0f64 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert!(average_precision(&[0.9], &[0]).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 4], &[1, 0, 0, 1]).unwrap(), 0.25);
        assert!((brier(&[0.8, 0.3], &[1, 0]).unwrap() - 0.065f64).abs() < 1e-15);
    }

    #[test]
    fn brier_constant_closed_form() {
        let y: Vec<u8> = (0..37).map(|i| u8::from(i % 3 == 0)).collect();
        let pi = y.iter().filter(|&&l| l == 1).count() as f64 / y.len() as f64;
        for q in [0.0, 0.2, 0.5, 0.9] {
            let b = brier(&vec![q; y.len()], &y).unwrap();
            let closed = q * q * (1.0 - pi) + (1.0 - q) * (1.0 - q) * pi;
            assert!((b - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn dca_examples() {
        let mut y = vec![1u8; 48];
        y.extend(vec![0u8; 42]);
        let probs = vec![0.0; 90];
        let curve = dca_curve(&probs, &y, &[0.2]).unwrap();
        let p = curve.points[0];
        assert!((p.nb_treat_all - (48.0f64 / 90.0 - 42.0 / 90.0 * 0.25)).abs() < 1e-12);
        assert!((p.nb_treat_all - 0.416_666_666_666_666_7f64).abs() < 1e-12);
        assert_eq!(p.nb_model, 0.0);
        assert_eq!(p.nb_treat_none, 0.0);

        let perfect: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
        for pt in dca_curve(&perfect, &y, &default_dca_grid::<f64>()).unwrap().points {
            assert!((pt.nb_model - 48.0 / 90.0).abs() < 1e-12);
            assert!(pt.nb_model >= pt.nb_treat_all);
        }
        assert!(matches!(
            dca_curve(&probs, &y, &[1.0]),
            Err(Error::InvalidThresholdProbability(_))
        ));
    }

    #[test]
    fn works_in_f32() {
        let a: f32 = auroc(&[0.1f32, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(a, 0.75);
        let t = select_threshold(&[0.2f32, 0.4, 0.6, 0.8], &[0, 1, 1, 1], 0.001).unwrap();
        assert_eq!(t.tau_star, 0.201f32);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u32..20, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 19.0).collect()),
                proptest::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pairs((s, y) in instance()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert_eq!(auroc(&s, &y).unwrap(), brute_auroc(&s, &y));
        }

        #[test]
        fn monotone_map_invariance((s, y) in instance(), k in 0.5f64..4.0) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (k * v).exp() + v.powi(3)).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
            prop_assert!((average_precision(&s, &y).unwrap() - average_precision(&t, &y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn macro_f1_is_mean_of_class_f1(pred in proptest::collection::vec(0u8..2, 1..50), seed in 0u8..2) {
            let y: Vec<u8> = pred.iter().enumerate().map(|(i, &p)| if i % 3 == 0 { 1 - p } else { p ^ seed }).collect();
            let f = |cls: u8| {
                let tp = pred.iter().zip(&y).filter(|(&p, &l)| p == cls && l == cls).count() as f64;
                let fp = pred.iter().zip(&y).filter(|(&p, &l)| p == cls && l != cls).count() as f64;
                let fn_ = pred.iter().zip(&y).filter(|(&p, &l)| p != cls && l == cls).count() as f64;
                if tp + fp == 0.0 || tp + fn_ == 0.0 { 0.0 } else {
                    let pr = tp / (tp + fp);
                    let rc = tp / (tp + fn_);
                    if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) }
                }
            };
            prop_assert!((macro_f1(&pred, &y) - (f(0) + f(1)) / 2.0).abs() < 1e-12);
        }

        #[test]
        fn dca_nonnegative_when_benefit_dominates((s, y) in instance()) {
            for pt in dca_curve(&s, &y, &default_dca_grid::<f64>()).unwrap().points {
                let c = Confusion::at_threshold(&s, &y, pt.p_t);
                if c.tp as f64 * (1.0 - pt.p_t) >= c.fp as f64 * pt.p_t {
                    prop_assert!(pt.nb_model >= -1e-12);
                }
            }
        }
    }
}
