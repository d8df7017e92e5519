//! Two-level stacking: out-of-fold base predictions, full outer-train refits,
//! the meta bank and its averaged ensemble score.

mod audit;
mod config;
mod run;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FoldPlan};
use crate::error::{Error, Result};
use crate::learners::{default_space, fit, random_search, Family, HyperValue, LearnerSpec, SearchSpace, TrainedModel};
use crate::seed::SeedStream;

pub use audit::{audit_leakage, AuditLog, AuditReport, FitRecord, FoldAudit, Stage, Violation, ViolationKind};
pub use config::{
    BasesConfig, CalibrationConfig, CohortConfig, MetaConfig, RunConfig, SeedsConfig,
    SplitConfig, ThresholdConfig,
};
pub use run::{
    aggregate_runs, load_audit_log, run_experiment_with, Execution, load_fold_models, load_predictions, predictions_csv, run_experiment, write_curves,
    CohortSummary, ExperimentReport, FoldModels, FoldResult, FoldSummary, MeanSd, PredictionRow,
    ProvenanceRecord, RunArtifacts, SeedAveraged, SeedSummary, StudyProbability,
};

/// Number of base slots feeding the meta level.
pub const N_SLOTS: usize = 5;
/// Meta-feature width: `[p_TAV, p_BAV]` per slot.
pub const META_WIDTH: usize = 2 * N_SLOTS;

/// A named, fixed-position base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSlot {
    pub name: String,
    pub family: Family,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, HyperValue>,
    /// Feature columns this slot consumes; all columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<usize>>,
}

impl BaseSlot {
    pub fn new(name: impl Into<String>, family: Family) -> Self {
        Self {
            name: name.into(),
            family,
            hyperparams: BTreeMap::new(),
            columns: None,
        }
    }

    /// The five default slots, each replaying one simulated backbone.
    pub fn simulated_defaults() -> Vec<BaseSlot> {
        (1..=N_SLOTS)
            .map(|s| {
                let mut slot = BaseSlot::new(format!("backbone{s}"), Family::SimulatedBackbone);
                slot.hyperparams.insert("slot".into(), HyperValue::Num(s as f64));
                slot
            })
            .collect()
    }

    /// Spec with a seed derived from the stage seed and the slot name.
    pub fn spec(&self, stage_seed: u64) -> LearnerSpec {
        LearnerSpec {
            family: self.family,
            hyperparams: self.hyperparams.clone(),
            seed: SeedStream::new(stage_seed).child(&self.name).seed(),
        }
    }

    fn select(&self, rows: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        let Some(cols) = &self.columns else {
            return Ok(rows);
        };
        rows.into_iter()
            .map(|r| {
                cols.iter()
                    .map(|&c| {
                        r.get(c).copied().ok_or_else(|| {
                            Error::ShapeError(format!(
                                "slot {} reads column {c} of a {}-column row",
                                self.name,
                                r.len()
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn check_slots(slots: &[BaseSlot]) -> Result<()> {
    if slots.len() != N_SLOTS {
        return Err(Error::Config(format!("exactly {N_SLOTS} base slots required, got {}", slots.len())));
    }
    for (i, s) in slots.iter().enumerate() {
        if slots[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::Config(format!("duplicate base slot name {:?}", s.name)));
        }
        s.spec(0).validate()?;
    }
    Ok(())
}

/// `(slot name, class)` label of one meta-feature column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaColumn {
    pub slot: String,
    pub class: String,
}

impl MetaColumn {
    pub fn name(&self) -> String {
        format!("{}_{}", self.slot, self.class)
    }
}

pub fn column_semantics(slots: &[BaseSlot]) -> Vec<MetaColumn> {
    slots
        .iter()
        .flat_map(|s| {
            ["TAV", "BAV"].map(|c| MetaColumn {
                slot: s.name.clone(),
                class: c.into(),
            })
        })
        .collect()
}

/// Which models produced one meta-feature row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowProvenance {
    pub study: usize,
    /// Inner fold that held the row out; `None` for outer-test rows scored by
    /// the full outer-train refit.
    pub inner_fold: Option<usize>,
    pub producing_bases: Vec<String>,
    pub trainer_index_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    /// Cohort index of each row.
    pub studies: Vec<usize>,
    pub column_semantics: Vec<MetaColumn>,
    pub provenance: Vec<RowProvenance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitRecord>,
}

impl MetaFeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Shape, finiteness, per-slot pair sums and row/provenance alignment.
    pub fn check_complete(&self) -> Result<()> {
        if self.studies.len() != self.rows.len() || self.provenance.len() != self.rows.len() {
            return Err(Error::IncompleteOof(format!(
                "{} rows, {} study indices, {} provenance records",
                self.rows.len(),
                self.studies.len(),
                self.provenance.len()
            )));
        }
        if self.rows.is_empty() {
            return Err(Error::IncompleteOof("no rows".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != META_WIDTH {
                return Err(Error::ShapeError(format!("meta row {i} has {} columns", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::IncompleteOof(format!("meta row {i} has unfilled entries")));
            }
            for pair in r.chunks(2) {
                if (pair[0] + pair[1] - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!("meta row {i} has a slot pair not summing to 1")));
                }
            }
        }
        Ok(())
    }

    /// Fails if any row was produced by a model that trained on it.
    pub fn check_leakage(&self) -> Result<()> {
        for (r, p) in self.provenance.iter().enumerate() {
            if p.trainer_index_set.binary_search(&p.study).is_ok() {
                return Err(Error::LeakageDetected(format!(
                    "meta row {r} (study {}) produced by a model trained on it",
                    p.study
                )));
            }
        }
        Ok(())
    }
}

fn slot_rows(cohort: &Cohort, slot: &BaseSlot, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    slot.select(cohort.feature_rows(indices)?)
}

/// Scores `held` with each slot trained on `trainers`; returns per-row meta
/// features and the fits.
fn score_slots(
    cohort: &Cohort,
    slots: &[BaseSlot],
    trainers: &[usize],
    held: &[usize],
    seed: u64,
    stage: Stage,
    fold: Option<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<FitRecord>)> {
    let labels = cohort.labels();
    let y: Vec<u8> = trainers.iter().map(|&i| labels[i]).collect();
    let mut out = vec![vec![f64::NAN; META_WIDTH]; held.len()];
    let mut fits = Vec::with_capacity(slots.len());
    for (b, slot) in slots.iter().enumerate() {
        let model = fit(&slot.spec(seed), &slot_rows(cohort, slot, trainers)?, &y, trainers)?;
        let p = model.predict_positive(&slot_rows(cohort, slot, held)?)?;
        for (row, p) in out.iter_mut().zip(p) {
            row[2 * b] = 1.0 - p;
            row[2 * b + 1] = p;
        }
        fits.push(FitRecord::from_model(stage, &slot.name, fold, &model));
    }
    Ok((out, fits))
}

/// Out-of-fold meta-features for the outer-train studies `train` (cohort
/// indices). `inner_plan` partitions positions of `train`.
pub fn build_oof(
    cohort: &Cohort,
    train: &[usize],
    slots: &[BaseSlot],
    inner_plan: &FoldPlan,
    seed: u64,
) -> Result<MetaFeatureMatrix> {
    check_slots(slots)?;
    if inner_plan.len() != train.len() {
        return Err(Error::ShapeError(format!(
            "inner plan covers {} rows, outer train has {}",
            inner_plan.len(),
            train.len()
        )));
    }
    let names: Vec<String> = slots.iter().map(|s| s.name.clone()).collect();
    let per_fold: Vec<Result<(Vec<usize>, Vec<Vec<f64>>, Vec<usize>, Vec<FitRecord>)>> = (0..inner_plan.k)
        .into_par_iter()
        .map(|f| {
            let held = inner_plan.test_positions(f);
            let mut trainers: Vec<usize> = inner_plan.train_positions(f).iter().map(|&p| train[p]).collect();
            let held_studies: Vec<usize> = held.iter().map(|&p| train[p]).collect();
            let (rows, fits) = score_slots(cohort, slots, &trainers, &held_studies, seed, Stage::BaseInner, Some(f))?;
            trainers.sort_unstable();
            Ok((held, rows, trainers, fits))
        })
        .collect();

    let mut rows = vec![vec![f64::NAN; META_WIDTH]; train.len()];
    let mut provenance: Vec<Option<RowProvenance>> = vec![None; train.len()];
    let mut fits = Vec::new();
    for (f, res) in per_fold.into_iter().enumerate() {
        let (held, scored, trainers, fold_fits) = res?;
        for (pos, r) in held.into_iter().zip(scored) {
            if provenance[pos].is_some() {
                return Err(Error::IncompleteOof(format!("row {pos} scored by more than one inner fold")));
            }
            rows[pos] = r;
            provenance[pos] = Some(RowProvenance {
                study: train[pos],
                inner_fold: Some(f),
                producing_bases: names.clone(),
                trainer_index_set: trainers.clone(),
            });
        }
        fits.extend(fold_fits);
    }
    let provenance = provenance
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::IncompleteOof(format!("row {i} held out by no inner fold"))))
        .collect::<Result<Vec<_>>>()?;
    let m = MetaFeatureMatrix {
        rows,
        studies: train.to_vec(),
        column_semantics: column_semantics(slots),
        provenance,
        fits,
    };
    m.check_complete()?;
    m.check_leakage()?;
    Ok(m)
}

/// Refits every slot on all of `train` and scores `test`.
pub fn refit_and_score(
    cohort: &Cohort,
    slots: &[BaseSlot],
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<MetaFeatureMatrix> {
    check_slots(slots)?;
    let mut trainers = train.to_vec();
    trainers.sort_unstable();
    if let Some(t) = test.iter().find(|t| trainers.binary_search(t).is_ok()) {
        return Err(Error::LeakageDetected(format!("study {t} is in both outer train and outer test")));
    }
    let (rows, fits) = score_slots(cohort, slots, train, test, seed, Stage::BaseRefit, None)?;
    let names: Vec<String> = slots.iter().map(|s| s.name.clone()).collect();
    let m = MetaFeatureMatrix {
        rows,
        studies: test.to_vec(),
        column_semantics: column_semantics(slots),
        provenance: test
            .iter()
            .map(|&s| RowProvenance {
                study: s,
                inner_fold: None,
                producing_bases: names.clone(),
                trainer_index_set: trainers.clone(),
            })
            .collect(),
        fits,
    };
    m.check_complete()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaBank {
    pub members: Vec<TrainedModel>,
    pub selected_specs: Vec<LearnerSpec>,
}

impl MetaBank {
    /// Mean positive probability of the members per row.
    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.members.is_empty() {
            return Err(Error::InvalidBank("bank has no members".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != META_WIDTH) {
            return Err(Error::ShapeError(format!("meta row has {} columns, expected {META_WIDTH}", r.len())));
        }
        let mut sum = vec![0.0; rows.len()];
        for m in &self.members {
            for (s, p) in sum.iter_mut().zip(m.predict_positive(rows)?) {
                *s += p;
            }
        }
        let k = self.members.len() as f64;
        Ok(sum.into_iter().map(|s| s / k).collect())
    }
}

/// Search space for `family` after applying config overrides.
pub fn resolve_space(cfg: &MetaConfig, family: Family) -> SearchSpace {
    let mut space = default_space(family);
    if let Some(over) = cfg.spaces.get(family.name()) {
        for (k, d) in over {
            space.params.insert(k.clone(), d.clone());
        }
    }
    space
}

/// Per family: randomized search over `(x_oof, y_train)`, then a refit of the
/// winner on all rows.
pub fn train_meta_bank(x_oof: &MetaFeatureMatrix, y_train: &[u8], cfg: &MetaConfig, seed: u64) -> Result<MetaBank> {
    if cfg.families.is_empty() {
        return Err(Error::InvalidSearchSpace("meta bank lists no families".into()));
    }
    x_oof.check_complete()?;
    if y_train.len() != x_oof.len() {
        return Err(Error::ShapeError(format!("{} labels for {} OOF rows", y_train.len(), x_oof.len())));
    }
    let root = SeedStream::new(seed);
    let fitted: Vec<Result<(LearnerSpec, TrainedModel)>> = cfg
        .families
        .par_iter()
        .map(|&family| {
            let space = resolve_space(cfg, family);
            let spec = random_search(
                &space,
                &x_oof.rows,
                y_train,
                cfg.search_folds,
                cfg.n_iter,
                root.child(family.name()).seed(),
            )?;
            let model = fit(&spec, &x_oof.rows, y_train, &x_oof.studies)?;
            Ok((spec, model))
        })
        .collect();
    let mut bank = MetaBank {
        members: Vec::with_capacity(fitted.len()),
        selected_specs: Vec::with_capacity(fitted.len()),
    };
    for r in fitted {
        let (spec, model) = r?;
        bank.selected_specs.push(spec);
        bank.members.push(model);
    }
    Ok(bank)
}

/// Arithmetic mean of the members' BAV probabilities per row.
pub fn ensemble_predict(bank: &MetaBank, x: &MetaFeatureMatrix) -> Result<Vec<f64>> {
    bank.predict_rows(&x.rows)
}
