//! Base and meta learners behind one fit/predict interface.
//!
//! Every learner is a pure function of its inputs and `LearnerSpec::seed`.
//! Standardizing families (logistic regression, SVM, MLP) fit their scaler on
//! the training rows passed to [`fit`] and nowhere else.

mod boost;
mod logistic;
mod mlp;
mod search;
mod svm;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::SeedStream;

pub use boost::TreeEnsemble;
pub use logistic::LinearModel;
pub use mlp::Perceptron;
pub use search::{default_space, random_search, Distribution, SearchSpace};
pub use svm::{Kernel, SupportVectorModel};

/// Version tag written into persisted models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LogisticRegression,
    SvmRbf,
    MlpShallow,
    GbStumps,
    SimulatedBackbone,
}

impl Family {
    pub const META_BANK: [Family; 4] = [
        Family::LogisticRegression,
        Family::SvmRbf,
        Family::MlpShallow,
        Family::GbStumps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LogisticRegression => "logistic_regression",
            Family::SvmRbf => "svm_rbf",
            Family::MlpShallow => "mlp_shallow",
            Family::GbStumps => "gb_stumps",
            Family::SimulatedBackbone => "simulated_backbone",
        }
    }

    /// Whether inputs are standardized before fitting.
    pub fn standardizes(self) -> bool {
        matches!(
            self,
            Family::LogisticRegression | Family::SvmRbf | Family::MlpShallow
        )
    }

    fn schema(self) -> &'static [(&'static str, ParamKind)] {
        use ParamKind::*;
        match self {
            Family::LogisticRegression => &[("l2", NonNeg), ("max_iter", Count)],
            Family::SvmRbf => &[
                ("kernel", Text(&["rbf", "poly"])),
                ("c", Positive),
                ("gamma", Positive),
                ("degree", Count),
                ("coef0", Real),
            ],
            Family::MlpShallow => &[
                ("hidden", Count),
                ("learning_rate", Positive),
                ("epochs", Count),
                ("l2", NonNeg),
            ],
            Family::GbStumps => &[
                ("rounds", Count),
                ("learning_rate", Positive),
                ("max_depth", Count),
                ("lambda", NonNeg),
                ("min_child_weight", NonNeg),
            ],
            Family::SimulatedBackbone => &[("slot", Count), ("jitter_sd", NonNeg)],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
enum ParamKind {
    Real,
    NonNeg,
    Positive,
    Count,
    Text(&'static [&'static str]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Num(f64),
    Text(String),
}

impl From<f64> for HyperValue {
    fn from(v: f64) -> Self {
        HyperValue::Num(v)
    }
}

impl From<&str> for HyperValue {
    fn from(v: &str) -> Self {
        HyperValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, HyperValue>,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            hyperparams: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<HyperValue>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }

    /// A simulated backbone replaying the emitted probabilities of `slot`.
    pub fn simulated(slot: usize, seed: u64) -> Self {
        Self::new(Family::SimulatedBackbone, seed).with("slot", slot as f64)
    }

    /// Checks every key against the family schema.
    pub fn validate(&self) -> Result<()> {
        let schema = self.family.schema();
        for (key, value) in &self.hyperparams {
            let Some((_, kind)) = schema.iter().find(|(k, _)| k == key) else {
                return Err(Error::InvalidInput(format!(
                    "unknown hyperparameter {key:?} for {}",
                    self.family
                )));
            };
            let ok = match (kind, value) {
                (ParamKind::Real, HyperValue::Num(v)) => v.is_finite(),
                (ParamKind::NonNeg, HyperValue::Num(v)) => v.is_finite() && *v >= 0.0,
                (ParamKind::Positive, HyperValue::Num(v)) => v.is_finite() && *v > 0.0,
                (ParamKind::Count, HyperValue::Num(v)) => *v >= 0.0 && v.fract() == 0.0 && *v < 1e9,
                (ParamKind::Text(allowed), HyperValue::Text(s)) => allowed.contains(&s.as_str()),
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "hyperparameter {key}={value:?} invalid for {}",
                    self.family
                )));
            }
        }
        if self.family == Family::SimulatedBackbone {
            let slot = self.num("slot", 0.0);
            if !(1.0..=5.0).contains(&slot) {
                return Err(Error::InvalidInput(
                    "simulated_backbone needs a noise profile slot in 1..=5".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn num(&self, key: &str, default: f64) -> f64 {
        match self.hyperparams.get(key) {
            Some(HyperValue::Num(v)) => *v,
            _ => default,
        }
    }

    pub(crate) fn count(&self, key: &str, default: usize) -> usize {
        self.num(key, default as f64) as usize
    }

    pub(crate) fn text<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        match self.hyperparams.get(key) {
            Some(HyperValue::Text(s)) => s,
            _ => default,
        }
    }
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// Replays the probabilities a simulated backbone emitted for each study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub slot: usize,
    pub jitter_sd: f64,
    /// Hash of (seed, training set); keys the jitter noise.
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    Svm(SupportVectorModel),
    Mlp(Perceptron),
    Trees(TreeEnsemble),
    Replay(Replay),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub spec: LearnerSpec,
    pub n_features: usize,
    pub training_index_set: Vec<usize>,
    pub scaler: Option<Scaler>,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "model format version {} not supported (expected {MODEL_FORMAT_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    /// Positive-class probability per row.
    pub fn predict_positive(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        for r in x {
            if r.len() != self.n_features {
                return Err(Error::ShapeError(format!(
                    "model trained on {} features, got a row of {}",
                    self.n_features,
                    r.len()
                )));
            }
        }
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                scaled = s.transform(x);
                &scaled[..]
            }
            None => x,
        };
        let p: Vec<f64> = match &self.params {
            ModelParams::Linear(m) => x.iter().map(|r| m.predict(r)).collect(),
            ModelParams::Svm(m) => x.iter().map(|r| m.predict(r)).collect(),
            ModelParams::Mlp(m) => x.iter().map(|r| m.predict(r)).collect(),
            ModelParams::Trees(m) => x.iter().map(|r| m.predict(r)).collect(),
            ModelParams::Replay(m) => x.iter().map(|r| replay(m, r)).collect::<Result<_>>()?,
        };
        Ok(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Raw signed score for margin-based models (SVM decision value); other
    /// families return the log-odds of their positive probability.
    pub fn decision_values(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let ModelParams::Svm(m) = &self.params {
            let scaled = match &self.scaler {
                Some(s) => s.transform(x),
                None => x.to_vec(),
            };
            return Ok(scaled.iter().map(|r| m.decision(r)).collect());
        }
        Ok(self
            .predict_positive(x)?
            .into_iter()
            .map(|p| (p / (1.0 - p)).ln())
            .collect())
    }
}

fn hash_row(seed: u64, row: &[f64]) -> u64 {
    let mut s = SeedStream::new(seed);
    for v in row {
        s = s.index(v.to_bits());
    }
    s.seed()
}

fn replay(m: &Replay, row: &[f64]) -> Result<f64> {
    let col = 2 * (m.slot - 1) + 1;
    let p = *row.get(col).ok_or_else(|| {
        Error::ShapeError(format!(
            "simulated backbone slot {} needs column {col}, row has {}",
            m.slot,
            row.len()
        ))
    })?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "slot {} emitted probability {p} outside [0, 1]",
            m.slot
        )));
    }
    if m.jitter_sd == 0.0 {
        return Ok(p);
    }
    use rand_distr::{Distribution as _, StandardNormal};
    let eps: f64 = StandardNormal.sample(&mut SeedStream::new(hash_row(m.fingerprint, row)).rng());
    let logit = (p.clamp(1e-12, 1.0 - 1e-12) / (1.0 - p.clamp(1e-12, 1.0 - 1e-12))).ln();
    Ok((logit + m.jitter_sd * eps).sigmoid())
}

/// `[p_TAV, p_BAV]` rows; every row sums to one.
pub fn predict_proba(model: &TrainedModel, x: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    Ok(model
        .predict_positive(x)?
        .into_iter()
        .map(|p| [1.0 - p, p])
        .collect())
}

fn check_training_input(x: &[Vec<f64>], y: &[u8], indices: &[usize]) -> Result<usize> {
    if x.len() != y.len() || x.len() != indices.len() {
        return Err(Error::ShapeError(format!(
            "{} rows, {} labels, {} indices",
            x.len(),
            y.len(),
            indices.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let d = x[0].len();
    for (i, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(Error::ShapeError(format!("row {i} has {} features, expected {d}", r.len())));
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite feature {v} in row {i}")));
        }
    }
    if let Some(l) = y.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("label {l} is not 0/1")));
    }
    Ok(d)
}

/// Fits `spec` on `(x, y)`; `indices` are the study indices of the rows and
/// are recorded verbatim (sorted) for provenance audits.
pub fn fit(spec: &LearnerSpec, x: &[Vec<f64>], y: &[u8], indices: &[usize]) -> Result<TrainedModel> {
    spec.validate()?;
    let d = check_training_input(x, y, indices)?;
    let mut training_index_set = indices.to_vec();
    training_index_set.sort_unstable();

    if spec.family != Family::SimulatedBackbone {
        let pos = y.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::DegenerateLabels(format!(
                "{} needs both classes in its training set",
                spec.family
            )));
        }
    }

    let scaler = spec.family.standardizes().then(|| Scaler::fit(x));
    let scaled;
    let xs = match &scaler {
        Some(s) => {
            scaled = s.transform(x);
            &scaled[..]
        }
        None => x,
    };

    let params = match spec.family {
        Family::LogisticRegression => ModelParams::Linear(LinearModel::fit(
            xs,
            y,
            spec.num("l2", 1e-2),
            spec.count("max_iter", 500),
        )),
        Family::MlpShallow => {
            let hidden = spec.count("hidden", 8);
            let l2 = spec.num("l2", 1e-4);
            if hidden == 0 {
                // No hidden layer: the network is exactly logistic regression.
                ModelParams::Linear(LinearModel::fit(xs, y, l2, 500))
            } else {
                ModelParams::Mlp(Perceptron::fit(
                    xs,
                    y,
                    hidden,
                    spec.num("learning_rate", 0.1),
                    spec.count("epochs", 500),
                    l2,
                    SeedStream::new(spec.seed).child("mlp-init"),
                ))
            }
        }
        Family::SvmRbf => {
            let kernel = match spec.text("kernel", "rbf") {
                "poly" => Kernel::Poly {
                    gamma: spec.num("gamma", 0.1),
                    degree: spec.count("degree", 3) as u32,
                    coef0: spec.num("coef0", 1.0),
                },
                _ => Kernel::Rbf {
                    gamma: spec.num("gamma", 0.1),
                },
            };
            ModelParams::Svm(SupportVectorModel::fit(xs, y, kernel, spec.num("c", 1.0)))
        }
        Family::GbStumps => ModelParams::Trees(TreeEnsemble::fit(
            xs,
            y,
            spec.count("rounds", 50),
            spec.num("learning_rate", 0.1),
            spec.count("max_depth", 2),
            spec.num("lambda", 1.0),
            spec.num("min_child_weight", 1e-3),
        )),
        Family::SimulatedBackbone => {
            let slot = spec.count("slot", 1);
            if d < 2 * slot {
                return Err(Error::ShapeError(format!(
                    "simulated backbone slot {slot} needs {} feature columns, have {d}",
                    2 * slot
                )));
            }
            let mut s = SeedStream::new(spec.seed).child("replay");
            for &i in &training_index_set {
                s = s.index(i as u64);
            }
            ModelParams::Replay(Replay {
                slot,
                jitter_sd: spec.num("jitter_sd", 0.0),
                fingerprint: s.seed(),
            })
        }
    };

    Ok(TrainedModel {
        version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        n_features: d,
        training_index_set,
        scaler,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<u8>) {
        (
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![2.0, 3.0]],
            vec![0, 0, 1, 1],
        )
    }

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        use rand::Rng;
        let mut rng = SeedStream::new(seed).rng();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            let c = if l == 1 { 1.0 } else { -1.0 };
            x.push(vec![c + rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), c * 0.5 + rng.random_range(-2.0..2.0)]);
            y.push(l);
        }
        (x, y)
    }

    fn idx(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn logistic_separates_toy() {
        let (x, y) = toy();
        // Closed-form separator x0 + x1 = 2.5 splits the classes; a converged
        // fit must agree on every point.
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(u8::from(r[0] + r[1] > 2.5), l);
        }
        let m = fit(&LearnerSpec::new(Family::LogisticRegression, 0), &x, &y, &idx(4)).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        for (row, &l) in p.iter().zip(&y) {
            assert_eq!(u8::from(row[1] >= 0.5), l);
        }
    }

    #[test]
    fn zero_round_boosting_returns_prior() {
        let (x, y) = blobs(30, 1);
        let y: Vec<u8> = y.iter().enumerate().map(|(i, &l)| if i < 4 { 1 } else { l }).collect();
        let prior = y.iter().filter(|&&l| l == 1).count() as f64 / y.len() as f64;
        let spec = LearnerSpec::new(Family::GbStumps, 0).with("rounds", 0.0);
        let m = fit(&spec, &x, &y, &idx(30)).unwrap();
        for p in m.predict_positive(&[vec![9.0, -9.0, 0.0], vec![0.0; 3]]).unwrap() {
            assert!((p - prior).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_zero_mlp_is_logistic() {
        let (x, y) = blobs(40, 2);
        let lr = fit(&LearnerSpec::new(Family::LogisticRegression, 3).with("l2", 0.01), &x, &y, &idx(40)).unwrap();
        let mlp = fit(
            &LearnerSpec::new(Family::MlpShallow, 3).with("hidden", 0.0).with("l2", 0.01),
            &x,
            &y,
            &idx(40),
        )
        .unwrap();
        let (a, b) = (lr.predict_positive(&x).unwrap(), mlp.predict_positive(&x).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weight_logistic_is_half() {
        let m = TrainedModel {
            version: MODEL_FORMAT_VERSION,
            spec: LearnerSpec::new(Family::LogisticRegression, 0),
            n_features: 3,
            training_index_set: vec![],
            scaler: None,
            params: ModelParams::Linear(LinearModel {
                weights: vec![0.0; 3],
                intercept: 0.0,
            }),
        };
        for row in predict_proba(&m, &[vec![1.0, -2.0, 3.0], vec![0.0; 3]]).unwrap() {
            assert_eq!(row, [0.5, 0.5]);
        }
    }

    #[test]
    fn svm_probability_is_monotone_in_margin() {
        let (x, y) = blobs(40, 4);
        for kernel in ["rbf", "poly"] {
            let spec = LearnerSpec::new(Family::SvmRbf, 0).with("kernel", kernel).with("c", 1.0).with("gamma", 0.3);
            let m = fit(&spec, &x, &y, &idx(40)).unwrap();
            let (probe, _) = blobs(50, 5);
            let p = m.predict_positive(&probe).unwrap();
            let f = m.decision_values(&probe).unwrap();
            let mut by_p: Vec<usize> = (0..50).collect();
            let mut by_f = by_p.clone();
            by_p.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            by_f.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
            assert_eq!(by_p, by_f, "{kernel}");
        }
    }

    #[test]
    fn error_paths() {
        let (x, y) = toy();
        let bad = vec![vec![f64::NAN, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert!(matches!(
            fit(&LearnerSpec::new(Family::LogisticRegression, 0), &bad, &y, &idx(4)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            fit(&LearnerSpec::new(Family::SvmRbf, 0), &x, &[1, 1, 1, 1], &idx(4)),
            Err(Error::DegenerateLabels(_))
        ));
        let m = fit(&LearnerSpec::new(Family::LogisticRegression, 0), &x, &y, &idx(4)).unwrap();
        assert!(matches!(predict_proba(&m, &[vec![1.0]]), Err(Error::ShapeError(_))));
        let unknown = LearnerSpec::new(Family::LogisticRegression, 0).with("depth", 3.0);
        assert!(unknown.validate().is_err());
        assert!(LearnerSpec::new(Family::SimulatedBackbone, 0).validate().is_err());
        assert!(LearnerSpec::new(Family::SvmRbf, 0).with("kernel", "sigmoid").validate().is_err());
    }

    #[test]
    fn training_set_is_recorded_sorted() {
        let (x, y) = toy();
        let m = fit(&LearnerSpec::new(Family::GbStumps, 0), &x, &y, &[9, 3, 7, 1]).unwrap();
        assert_eq!(m.training_index_set, vec![1, 3, 7, 9]);
        assert!(m.scaler.is_none());
    }

    #[test]
    fn persistence_round_trip() {
        let (x, y) = blobs(30, 6);
        for fam in Family::META_BANK {
            let m = fit(&LearnerSpec::new(fam, 9), &x, &y, &idx(30)).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict_positive(&x).unwrap(), m.predict_positive(&x).unwrap());
        }
        let mut v: serde_json::Value = serde_json::from_str(
            &fit(&LearnerSpec::new(Family::LogisticRegression, 0), &x, &y, &idx(30)).unwrap().to_json().unwrap(),
        )
        .unwrap();
        v["version"] = 99.into();
        assert!(TrainedModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn replay_reads_slot_columns() {
        let x = vec![vec![0.7, 0.3, 0.1, 0.9], vec![0.4, 0.6, 0.8, 0.2]];
        let m = fit(&LearnerSpec::simulated(2, 0), &x, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.predict_positive(&x).unwrap(), vec![0.9, 0.2]);
        let jittered = fit(&LearnerSpec::simulated(1, 0).with("jitter_sd", 0.5), &x, &[0, 1], &[0, 1]).unwrap();
        let a = jittered.predict_positive(&x).unwrap();
        assert_ne!(a, vec![0.3, 0.6]);
        assert_eq!(a, jittered.predict_positive(&x).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn probabilities_are_valid(seed in 0u64..1000, fam_i in 0usize..4) {
            let (x, y) = blobs(24, seed);
            let m = fit(&LearnerSpec::new(Family::META_BANK[fam_i], seed), &x, &y, &idx(24)).unwrap();
            let (probe, _) = blobs(16, seed + 1);
            for row in predict_proba(&m, &probe).unwrap() {
                prop_assert!(row[0] >= 0.0 && row[1] >= 0.0 && row[0] <= 1.0 && row[1] <= 1.0);
                prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn scaler_depends_only_on_training_rows(seed in 0u64..1000, fam_i in 0usize..3) {
            let (x, y) = blobs(24, seed);
            let m = fit(&LearnerSpec::new(Family::META_BANK[fam_i], seed), &x, &y, &idx(24)).unwrap();
            let (val, _) = blobs(8, seed + 7);
            let base = m.predict_positive(&val).unwrap();
            let mut shuffled: Vec<Vec<f64>> = val.iter().rev().cloned().collect();
            shuffled.extend(val.iter().cloned());
            let again = m.predict_positive(&shuffled).unwrap();
            for i in 0..8 {
                prop_assert_eq!(base[i], again[7 - i]);
                prop_assert_eq!(base[i], again[8 + i]);
            }
        }

        #[test]
        fn fitting_is_deterministic(seed in 0u64..1000, fam_i in 0usize..4) {
            let (x, y) = blobs(20, seed);
            let spec = LearnerSpec::new(Family::META_BANK[fam_i], seed);
            let a = fit(&spec, &x, &y, &idx(20)).unwrap().to_json().unwrap();
            let b = fit(&spec, &x, &y, &idx(20)).unwrap().to_json().unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
