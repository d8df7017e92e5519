//! Randomized hyperparameter search scored by mean macro-F1 over stratified
//! folds.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, Family, HyperValue, LearnerSpec};
use crate::cohort::{stratified_kfold, FoldLevel};
use crate::decision::macro_f1;
use crate::error::{Error, Result};
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Fixed { value: HyperValue },
    Choice { values: Vec<HyperValue> },
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
}

impl Distribution {
    fn validate(&self, key: &str) -> Result<()> {
        let ok = match self {
            Distribution::Fixed { .. } => true,
            Distribution::Choice { values } => !values.is_empty(),
            Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Distribution::LogUniform { low, high } => *low > 0.0 && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSearchSpace(format!("distribution for {key:?} is empty or malformed")))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> HyperValue {
        match self {
            Distribution::Fixed { value } => value.clone(),
            Distribution::Choice { values } => values[rng.random_range(0..values.len())].clone(),
            Distribution::Uniform { low, high } => {
                HyperValue::Num(if low == high { *low } else { rng.random_range(*low..*high) })
            }
            Distribution::LogUniform { low, high } => HyperValue::Num(if low == high {
                *low
            } else {
                rng.random_range(low.ln()..high.ln()).exp()
            }),
        }
    }
}

fn choice<const N: usize>(values: [f64; N]) -> Distribution {
    Distribution::Choice {
        values: values.into_iter().map(HyperValue::Num).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: Family,
    #[serde(default)]
    pub params: BTreeMap<String, Distribution>,
}

impl SearchSpace {
    pub fn fixed(spec: &LearnerSpec) -> Self {
        Self {
            family: spec.family,
            params: spec
                .hyperparams
                .iter()
                .map(|(k, v)| (k.clone(), Distribution::Fixed { value: v.clone() }))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, d) in &self.params {
            d.validate(k)?;
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R, seed: u64) -> LearnerSpec {
        LearnerSpec {
            family: self.family,
            hyperparams: self
                .params
                .iter()
                .map(|(k, d)| (k.clone(), d.draw(rng)))
                .collect(),
            seed,
        }
    }
}

/// Engine default search distributions per meta family.
pub fn default_space(family: Family) -> SearchSpace {
    let mut params = BTreeMap::new();
    match family {
        Family::LogisticRegression => {
            params.insert("l2".into(), Distribution::LogUniform { low: 1e-4, high: 10.0 });
        }
        Family::SvmRbf => {
            params.insert(
                "kernel".into(),
                Distribution::Choice {
                    values: vec!["rbf".into(), "poly".into()],
                },
            );
            params.insert("c".into(), Distribution::LogUniform { low: 1e-2, high: 1e2 });
            params.insert("gamma".into(), Distribution::LogUniform { low: 1e-3, high: 1.0 });
            params.insert("degree".into(), choice([2.0, 3.0]));
            params.insert("coef0".into(), Distribution::Fixed { value: 1.0.into() });
        }
        Family::MlpShallow => {
            params.insert("hidden".into(), choice([4.0, 8.0, 16.0]));
            params.insert("learning_rate".into(), choice([0.05, 0.1, 0.3, 1.0]));
            params.insert("epochs".into(), Distribution::Fixed { value: 500.0.into() });
            params.insert("l2".into(), Distribution::LogUniform { low: 1e-5, high: 1e-2 });
        }
        Family::GbStumps => {
            params.insert("rounds".into(), choice([25.0, 50.0, 100.0]));
            params.insert("learning_rate".into(), choice([0.1, 0.3]));
            params.insert("max_depth".into(), Distribution::Fixed { value: 2.0.into() });
        }
        Family::SimulatedBackbone => {}
    }
    SearchSpace { family, params }
}

/// Draws `n_iter` candidates from `space` and returns the one with the highest
/// mean macro-F1 (threshold 0.5) across `k` stratified folds of `(x, y)`.
/// Ties keep the earliest draw.
pub fn random_search(
    space: &SearchSpace,
    x: &[Vec<f64>],
    y: &[u8],
    k: usize,
    n_iter: usize,
    seed: u64,
) -> Result<LearnerSpec> {
    space.validate()?;
    if n_iter == 0 {
        return Err(Error::InvalidSearchSpace("n_iter must be at least 1".into()));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeError(format!("{} rows for {} labels", x.len(), y.len())));
    }
    if x.len() < 2 * k {
        return Err(Error::InvalidInput(format!(
            "random search over {k} folds needs at least {} rows, have {}",
            2 * k,
            x.len()
        )));
    }
    let root = SeedStream::new(seed);
    let model_seed = root.child("model").seed();
    let mut rng = root.child("draws").rng();
    let candidates: Vec<LearnerSpec> = (0..n_iter).map(|_| space.draw(&mut rng, model_seed)).collect();
    for c in &candidates {
        c.validate().map_err(|e| Error::InvalidSearchSpace(e.to_string()))?;
    }
    if candidates.len() == 1 {
        return Ok(candidates.into_iter().next().unwrap());
    }

    let plan = stratified_kfold(y, k, root.child("folds").seed())?.with_level(FoldLevel::Search);
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| (plan.train_positions(f), plan.test_positions(f)))
        .collect();

    let scores: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|spec| {
            let mut total = 0.0;
            for (train, val) in &folds {
                let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
                let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
                let model = fit(spec, &xt, &yt, train)?;
                let xv: Vec<Vec<f64>> = val.iter().map(|&i| x[i].clone()).collect();
                let yv: Vec<u8> = val.iter().map(|&i| y[i]).collect();
                let pred: Vec<u8> = model
                    .predict_positive(&xv)?
                    .into_iter()
                    .map(|p| u8::from(p >= 0.5))
                    .collect();
                total += macro_f1(&pred, &yv);
            }
            Ok(total / k as f64)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = s?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Ok(candidates.into_iter().nth(best.unwrap().0).unwrap())
}
