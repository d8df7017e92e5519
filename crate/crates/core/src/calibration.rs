//! Meta-level calibration: cross-fitted meta-OOF ensemble scores, Platt
//! recalibration and reliability/ECE diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{stratified_kfold, FoldLevel, FoldPlan};
use crate::error::{Error, Result};
use crate::learners::{fit, LearnerSpec};
use crate::scalar::Scalar;
use crate::stacking::{FitRecord, MetaFeatureMatrix, Stage};

/// Newton stops once the log-loss gradient norm is at or below this.
pub const PLATT_GRAD_TOL: f64 = 1e-10;
pub const PLATT_MAX_ITER: usize = 100;
/// Clamp applied to raw scores when their log-loss is reported.
pub const LOGLOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattFitLog<T> {
    pub log_loss: T,
    pub iterations: usize,
    pub gradient_norm: T,
}

/// `p = sigmoid(a * s + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler<T> {
    pub a: T,
    pub b: T,
    pub fit_log: PlattFitLog<T>,
}

impl<T: Scalar> PlattScaler<T> {
    pub fn new(a: T, b: T) -> Self {
        Self {
            a,
            b,
            fit_log: PlattFitLog {
                log_loss: T::nan(),
                iterations: 0,
                gradient_norm: T::nan(),
            },
        }
    }

    /// Whether the map preserves score order.
    pub fn is_monotone_increasing(&self) -> bool {
        self.a > T::zero()
    }

    pub fn apply_one(&self, s: T) -> T {
        (self.a * s + self.b).sigmoid()
    }
}

/// Mean log-loss of `sigmoid(a s + b)`.
pub fn platt_log_loss<T: Scalar>(scores: &[T], y: &[u8], a: T, b: T) -> T {
    let n = T::of_usize(scores.len());
    let total: T = scores
        .iter()
        .zip(y)
        .map(|(&s, &l)| {
            let z = a * s + b;
            let softplus = if z > T::zero() {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - if l == 1 { z } else { T::zero() }
        })
        .sum();
    total / n
}

/// Mean log-loss of probabilities taken as-is, clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn clamped_log_loss<T: Scalar>(probs: &[T], y: &[u8]) -> T {
    let lo = T::of(LOGLOSS_CLAMP);
    let hi = T::one() - lo;
    let total: T = probs
        .iter()
        .zip(y)
        .map(|(&p, &l)| {
            let p = p.max(lo).min(hi);
            if l == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    total / T::of_usize(probs.len())
}

/// Minimizes mean log-loss of `sigmoid(a s + b)` by damped Newton.
pub fn fit_platt<T: Scalar>(scores: &[T], y: &[u8]) -> Result<PlattScaler<T>> {
    if scores.len() != y.len() {
        return Err(Error::ShapeError(format!("{} scores for {} labels", scores.len(), y.len())));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("Platt fit".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(**s >= T::zero() && **s <= T::one())) {
        return Err(Error::InvalidInput(format!("score {s} outside [0, 1]")));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateLabels("Platt scaling needs both classes".into()));
    }

    let n = T::of_usize(y.len());
    let mut a = T::zero();
    let mut b = (T::of_usize(pos) / T::of_usize(y.len() - pos)).ln();
    let mut f = platt_log_loss(scores, y, a, b);
    let mut iterations = 0;
    let mut gnorm;
    loop {
        let (mut ga, mut gb) = (T::zero(), T::zero());
        let (mut haa, mut hab, mut hbb) = (T::zero(), T::zero(), T::zero());
        for (&s, &l) in scores.iter().zip(y) {
            let p = (a * s + b).sigmoid();
            let r = p - if l == 1 { T::one() } else { T::zero() };
            let w = p * (T::one() - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        ga /= n;
        gb /= n;
        haa /= n;
        hab /= n;
        hbb /= n;
        gnorm = (ga * ga + gb * gb).sqrt();
        if gnorm.as_f64() <= PLATT_GRAD_TOL || iterations >= PLATT_MAX_ITER {
            break;
        }
        iterations += 1;

        let det = haa * hbb - hab * hab;
        let (da, db) = if det > T::of(1e-300) && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else if hbb > T::zero() {
            (T::zero(), gb / hbb)
        } else {
            (ga, gb)
        };
        let slope = ga * da + gb * db;
        let mut t = T::one();
        let mut moved = false;
        while t > T::of(1e-12) {
            let (na, nb) = (a - t * da, b - t * db);
            let nf = platt_log_loss(scores, y, na, nb);
            if nf <= f - T::of(1e-4) * t * slope.max(T::zero()) {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            t = t * T::of(0.5);
        }
        if !moved {
            break;
        }
    }
    Ok(PlattScaler {
        a,
        b,
        fit_log: PlattFitLog {
            log_loss: f,
            iterations,
            gradient_norm: gnorm,
        },
    })
}

pub fn apply<T: Scalar>(recal: &PlattScaler<T>, scores: &[T]) -> Vec<T> {
    scores.iter().map(|&s| recal.apply_one(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin<T> {
    pub lower: T,
    pub upper: T,
    pub count: usize,
    /// `NaN`-free: empty bins report 0 and carry no ECE weight.
    pub mean_predicted: T,
    pub observed_fraction: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability<T> {
    pub bins: Vec<ReliabilityBin<T>>,
    pub ece: T,
}

impl<T: Scalar> Reliability<T> {
    /// CSV `bin_lower,bin_upper,count,mean_pred,obs_frac`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count,mean_pred,obs_frac\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lower, b.upper, b.count, b.mean_predicted, b.observed_fraction
            ));
        }
        out
    }
}

/// Index of the equal-width bin holding `p`; interior edges belong to the
/// upper bin and `p = 1` to the last.
pub fn bin_index<T: Scalar>(p: T, bins: usize) -> usize {
    (1..bins)
        .filter(|&j| p >= T::of_usize(j) / T::of_usize(bins))
        .count()
}

pub fn ece_reliability<T: Scalar>(probs: &[T], y: &[u8], bins: usize) -> Result<Reliability<T>> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("reliability table".into()));
    }
    if probs.len() != y.len() {
        return Err(Error::ShapeError(format!("{} probabilities for {} labels", probs.len(), y.len())));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("bin count must be positive".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut sum_p = vec![T::zero(); bins];
    let mut sum_y = vec![T::zero(); bins];
    for (&p, &l) in probs.iter().zip(y) {
        let b = bin_index(p, bins);
        count[b] += 1;
        sum_p[b] += p;
        if l == 1 {
            sum_y[b] += T::one();
        }
    }
    let n = T::of_usize(probs.len());
    let mut ece = T::zero();
    let table = (0..bins)
        .map(|b| {
            let (mean_predicted, observed_fraction) = if count[b] > 0 {
                let c = T::of_usize(count[b]);
                (sum_p[b] / c, sum_y[b] / c)
            } else {
                (T::zero(), T::zero())
            };
            if count[b] > 0 {
                ece += T::of_usize(count[b]) / n * (mean_predicted - observed_fraction).abs();
            }
            ReliabilityBin {
                lower: T::of_usize(b) / T::of_usize(bins),
                upper: T::of_usize(b + 1) / T::of_usize(bins),
                count: count[b],
                mean_predicted,
                observed_fraction,
            }
        })
        .collect();
    Ok(Reliability { bins: table, ece })
}

/// Which meta models produced a meta-OOF score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub study: usize,
    pub cal_fold: usize,
    pub trainer_index_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaOofScores {
    pub scores: Vec<f64>,
    pub provenance: Vec<CalibrationRow>,
    pub plan: FoldPlan,
    pub fits: Vec<FitRecord>,
}

/// Cross-fits the selected meta specs over `k_cal` stratified splits of the
/// OOF matrix; each row's score is the mean positive probability of models
/// that never saw it.
pub fn meta_oof_scores(
    x_oof: &MetaFeatureMatrix,
    y_train: &[u8],
    specs: &[LearnerSpec],
    k_cal: usize,
    seed: u64,
) -> Result<MetaOofScores> {
    if specs.is_empty() {
        return Err(Error::InvalidBank("no meta families to cross-fit".into()));
    }
    x_oof.check_complete()?;
    if y_train.len() != x_oof.len() {
        return Err(Error::ShapeError(format!(
            "{} labels for {} OOF rows",
            y_train.len(),
            x_oof.len()
        )));
    }
    let plan = stratified_kfold(y_train, k_cal, seed)?.with_level(FoldLevel::Calibration);
    let rows = &x_oof.rows;

    let per_fold: Vec<Result<(Vec<usize>, Vec<f64>, Vec<usize>, Vec<FitRecord>)>> = (0..k_cal)
        .into_par_iter()
        .map(|f| {
            let train = plan.train_positions(f);
            let held = plan.test_positions(f);
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
            let yt: Vec<u8> = train.iter().map(|&i| y_train[i]).collect();
            let studies: Vec<usize> = train.iter().map(|&i| x_oof.studies[i]).collect();
            let xh: Vec<Vec<f64>> = held.iter().map(|&i| rows[i].clone()).collect();
            let mut sum = vec![0.0; held.len()];
            let mut fits = Vec::with_capacity(specs.len());
            for spec in specs {
                let m = fit(spec, &xt, &yt, &studies)?;
                fits.push(FitRecord::from_model(Stage::Calibration, spec.family.name(), Some(f), &m));
                for (s, p) in sum.iter_mut().zip(m.predict_positive(&xh)?) {
                    *s += p;
                }
            }
            let mut trainer = studies;
            trainer.sort_unstable();
            Ok((held, sum.into_iter().map(|s| s / specs.len() as f64).collect(), trainer, fits))
        })
        .collect();

    let mut scores = vec![f64::NAN; rows.len()];
    let mut provenance: Vec<Option<CalibrationRow>> = vec![None; rows.len()];
    let mut fits = Vec::new();
    for (f, res) in per_fold.into_iter().enumerate() {
        let (held, s, trainer, fold_fits) = res?;
        fits.extend(fold_fits);
        for (pos, v) in held.into_iter().zip(s) {
            let study = x_oof.studies[pos];
            if trainer.binary_search(&study).is_ok() {
                return Err(Error::LeakageDetected(format!(
                    "meta-OOF score for study {study} produced by a model trained on it"
                )));
            }
            scores[pos] = v;
            provenance[pos] = Some(CalibrationRow {
                study,
                cal_fold: f,
                trainer_index_set: trainer.clone(),
            });
        }
    }
    let provenance = provenance
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::IncompleteOof(format!("meta-OOF row {i} unscored"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetaOofScores {
        scores,
        provenance,
        plan,
        fits,
    })
}
