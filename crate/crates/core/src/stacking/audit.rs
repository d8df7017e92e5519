//! Mechanical leakage audit over the provenance a run records.

use serde::{Deserialize, Serialize};

use super::RowProvenance;
use crate::calibration::CalibrationRow;
use crate::learners::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BaseInner,
    BaseRefit,
    MetaSearch,
    Meta,
    Calibration,
}

/// Index sets one fitted model (and its scaler) consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitRecord {
    pub stage: Stage,
    pub name: String,
    pub fold: Option<usize>,
    pub trainer_index_set: Vec<usize>,
    pub scaler_index_set: Option<Vec<usize>>,
}

impl FitRecord {
    pub fn from_model(stage: Stage, name: &str, fold: Option<usize>, model: &TrainedModel) -> Self {
        Self {
            stage,
            name: name.to_string(),
            fold,
            trainer_index_set: model.training_index_set.clone(),
            scaler_index_set: model.scaler.as_ref().map(|_| model.training_index_set.clone()),
        }
    }
}

/// Everything one (seed, outer fold) cell touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub seed: u64,
    pub fold: usize,
    pub outer_train: Vec<usize>,
    pub outer_test: Vec<usize>,
    /// OOF row provenance; persisted separately as `provenance.jsonl`.
    #[serde(skip)]
    pub oof: Vec<RowProvenance>,
    pub test_provenance: Vec<RowProvenance>,
    pub fits: Vec<FitRecord>,
    pub calibration: Vec<CalibrationRow>,
    pub platt_index_set: Vec<usize>,
    pub threshold_index_set: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub folds: Vec<FoldAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// An OOF or meta-OOF row produced by a model that trained on it.
    SelfTrained,
    /// An outer-test study inside some training set.
    TestInTraining,
    /// Scaler statistics drawn from outside the fit's training rows.
    ScalerContamination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub seed: u64,
    pub fold: usize,
    pub record: String,
    /// Study the offending record describes, when it describes one.
    pub row: Option<usize>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub checked_folds: usize,
    pub checked_records: usize,
    pub violations: Vec<Violation>,
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn hits(set: &[usize], sorted_test: &[usize]) -> Vec<usize> {
    sorted(&set.iter().copied().filter(|i| sorted_test.binary_search(i).is_ok()).collect::<Vec<_>>())
}

/// Checks every recorded index set; never fails, only reports.
pub fn audit_leakage(log: &AuditLog) -> AuditReport {
    let mut violations = Vec::new();
    let mut records = 0;
    for fa in &log.folds {
        let test = sorted(&fa.outer_test);
        let mut flag = |kind, record: String, row: Option<usize>, indices: Vec<usize>| {
            violations.push(Violation {
                kind,
                seed: fa.seed,
                fold: fa.fold,
                record,
                row,
                indices,
            })
        };

        let rows = fa
            .oof
            .iter()
            .map(|p| ("oof", p))
            .chain(fa.test_provenance.iter().map(|p| ("test_row", p)));
        for (what, p) in rows {
            records += 1;
            let name = format!("{what}[study {}]", p.study);
            if p.trainer_index_set.contains(&p.study) {
                flag(ViolationKind::SelfTrained, name.clone(), Some(p.study), vec![p.study]);
            }
            let mut bad = hits(&p.trainer_index_set, &test);
            if what == "oof" && test.binary_search(&p.study).is_ok() {
                bad.push(p.study);
                bad = sorted(&bad);
            }
            if !bad.is_empty() {
                flag(ViolationKind::TestInTraining, name, Some(p.study), bad);
            }
        }

        for c in &fa.calibration {
            records += 1;
            let name = format!("calibration[study {}]", c.study);
            if c.trainer_index_set.contains(&c.study) {
                flag(ViolationKind::SelfTrained, name.clone(), Some(c.study), vec![c.study]);
            }
            let mut bad = hits(&c.trainer_index_set, &test);
            if test.binary_search(&c.study).is_ok() {
                bad.push(c.study);
                bad = sorted(&bad);
            }
            if !bad.is_empty() {
                flag(ViolationKind::TestInTraining, name, Some(c.study), bad);
            }
        }

        for f in &fa.fits {
            records += 1;
            let name = match f.fold {
                Some(k) => format!("fit {:?}/{} fold {k}", f.stage, f.name),
                None => format!("fit {:?}/{}", f.stage, f.name),
            };
            let bad = hits(&f.trainer_index_set, &test);
            if !bad.is_empty() {
                flag(ViolationKind::TestInTraining, name.clone(), None, bad);
            }
            if let Some(sc) = &f.scaler_index_set {
                let trainers = sorted(&f.trainer_index_set);
                let outside = sorted(
                    &sc.iter()
                        .copied()
                        .filter(|i| trainers.binary_search(i).is_err() || test.binary_search(i).is_ok())
                        .collect::<Vec<_>>(),
                );
                if !outside.is_empty() {
                    flag(ViolationKind::ScalerContamination, name, None, outside);
                }
            }
        }

        for (name, set) in [("platt", &fa.platt_index_set), ("threshold", &fa.threshold_index_set)] {
            records += 1;
            let bad = hits(set, &test);
            if !bad.is_empty() {
                flag(ViolationKind::TestInTraining, name.to_string(), None, bad);
            }
        }
    }
    AuditReport {
        passed: violations.is_empty(),
        checked_folds: log.folds.len(),
        checked_records: records,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> AuditLog {
        let train = vec![0, 1, 2, 3, 4, 5];
        let test = vec![6, 7, 8];
        let oof = train
            .iter()
            .map(|&s| RowProvenance {
                study: s,
                inner_fold: Some(s % 3),
                producing_bases: vec!["b".into()],
                trainer_index_set: train.iter().copied().filter(|&t| t % 3 != s % 3).collect(),
            })
            .collect();
        AuditLog {
            folds: vec![FoldAudit {
                seed: 1,
                fold: 0,
                outer_train: train.clone(),
                outer_test: test.clone(),
                oof,
                test_provenance: test
                    .iter()
                    .map(|&s| RowProvenance {
                        study: s,
                        inner_fold: None,
                        producing_bases: vec!["b".into()],
                        trainer_index_set: train.clone(),
                    })
                    .collect(),
                fits: vec![FitRecord {
                    stage: Stage::Meta,
                    name: "logistic_regression".into(),
                    fold: None,
                    trainer_index_set: train.clone(),
                    scaler_index_set: Some(train.clone()),
                }],
                calibration: train
                    .iter()
                    .map(|&s| CalibrationRow {
                        study: s,
                        cal_fold: s % 2,
                        trainer_index_set: train.iter().copied().filter(|&t| t % 2 != s % 2).collect(),
                    })
                    .collect(),
                platt_index_set: train.clone(),
                threshold_index_set: train,
            }],
        }
    }

    #[test]
    fn clean_log_passes() {
        let r = audit_leakage(&clean());
        assert!(r.passed, "{:?}", r.violations);
    }

    #[test]
    fn self_trained_row_is_named() {
        let mut log = clean();
        log.folds[0].oof[2].trainer_index_set.push(2);
        let r = audit_leakage(&log);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::SelfTrained);
        assert_eq!(r.violations[0].row, Some(2));
    }

    #[test]
    fn test_index_in_calibration() {
        let mut log = clean();
        log.folds[0].calibration[0].trainer_index_set.push(7);
        let r = audit_leakage(&log);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::TestInTraining);
        assert_eq!(r.violations[0].indices, vec![7]);
    }

    #[test]
    fn scaler_and_threshold_faults() {
        let mut log = clean();
        log.folds[0].fits[0].scaler_index_set.as_mut().unwrap().push(8);
        log.folds[0].threshold_index_set.push(6);
        let r = audit_leakage(&log);
        let kinds: Vec<ViolationKind> = r.violations.iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::ScalerContamination, ViolationKind::TestInTraining]);
    }
}
