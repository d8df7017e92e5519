//! Labeled studies and stratified fold construction.
//!
//! Studies are addressed by position; ids are carried only for reporting.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Class label of the negative (tricuspid) class.
pub const TAV: u8 = 0;
/// Class label of the positive (bicuspid) class.
pub const BAV: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<PathBuf>,
}

impl Study {
    pub fn with_features(id: impl Into<String>, label: u8, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            label,
            features: Some(features),
            clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    studies: Vec<Study>,
}

impl Cohort {
    pub fn new(studies: Vec<Study>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(studies.len());
        for s in &studies {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate study id {:?}", s.id)));
            }
            if s.label > 1 {
                return Err(Error::InvalidInput(format!(
                    "study {:?} has label {} (expected 0 or 1)",
                    s.id, s.label
                )));
            }
            if s.features.is_none() && s.clip.is_none() {
                return Err(Error::InvalidInput(format!(
                    "study {:?} carries neither features nor a clip",
                    s.id
                )));
            }
        }
        Ok(Self { studies })
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.studies.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.studies.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.labels())
    }

    /// Feature rows for the given study indices.
    pub fn feature_rows(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&i| {
                let s = self.studies.get(i).ok_or_else(|| {
                    Error::InvalidInput(format!("study index {i} out of range"))
                })?;
                s.features.clone().ok_or_else(|| {
                    Error::InvalidInput(format!("study {:?} has no feature vector", s.id))
                })
            })
            .collect()
    }

    /// Refuses cohorts that cannot support stratified folds at any level.
    pub fn check_foldable(&self) -> Result<()> {
        let [neg, pos] = self.class_counts();
        if neg < 2 || pos < 2 {
            return Err(Error::DegenerateLabels(format!(
                "need at least 2 studies per class, have {neg} TAV / {pos} BAV"
            )));
        }
        Ok(())
    }

    /// Parses `id,label,f0,f1,...`. Every row must have the same width.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
            return Err(Error::InvalidInput(
                "cohort CSV header must start with `id,label`".into(),
            ));
        }
        let width = header.len() - 2;
        let mut studies = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::InvalidInput(format!(
                    "row {} has {} fields, header has {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            let label = match rec[1].trim() {
                "0" => TAV,
                "1" => BAV,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: label {other:?} is not 0/1",
                        line + 2
                    )))
                }
            };
            let features = (0..width)
                .map(|j| {
                    rec[j + 2].trim().parse::<f64>().map_err(|e| {
                        Error::InvalidInput(format!("row {}, column f{j}: {e}", line + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            studies.push(Study::with_features(rec[0].to_string(), label, features));
        }
        Self::new(studies)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let width = self
            .studies
            .iter()
            .filter_map(|s| s.features.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..width).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for s in &self.studies {
            let feats = s.features.as_deref().unwrap_or(&[]);
            if feats.len() != width {
                return Err(Error::ShapeError(format!(
                    "study {:?} has {} features, expected {width}",
                    s.id,
                    feats.len()
                )));
            }
            let mut rec = vec![s.id.clone(), s.label.to_string()];
            rec.extend(feats.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn class_counts(labels: &[u8]) -> [usize; 2] {
    let pos = labels.iter().filter(|&&l| l == BAV).count();
    [labels.len() - pos, pos]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldLevel {
    Outer,
    Inner,
    Calibration,
    Search,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub level: FoldLevel,
    pub seed: u64,
}

impl FoldPlan {
    pub fn with_level(mut self, level: FoldLevel) -> Self {
        self.level = level;
        self
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Positions (within the labelled vector) held out by `fold`, ascending.
    pub fn test_positions(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == fold).then_some(i))
            .collect()
    }

    /// Positions used for training when `fold` is held out, ascending.
    pub fn train_positions(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f != fold).then_some(i))
            .collect()
    }

    /// `[fold][class]` member counts.
    pub fn class_counts(&self, labels: &[u8]) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.k];
        for (&f, &y) in self.assignment.iter().zip(labels) {
            counts[f][usize::from(y)] += 1;
        }
        counts
    }

    /// JSON export `[{"id": ..., "fold": ...}, ...]`.
    pub fn to_json(&self, ids: &[&str]) -> Result<String> {
        #[derive(Serialize)]
        struct Entry<'a> {
            id: &'a str,
            fold: usize,
        }
        if ids.len() != self.assignment.len() {
            return Err(Error::ShapeError(format!(
                "{} ids for a plan over {} studies",
                ids.len(),
                self.assignment.len()
            )));
        }
        let entries: Vec<Entry> = ids
            .iter()
            .zip(&self.assignment)
            .map(|(id, &fold)| Entry { id, fold })
            .collect();
        Ok(serde_json::to_string(&entries)?)
    }
}

/// Stratified k-fold assignment.
///
/// Each class is shuffled with a seeded RNG (class 0 first, then class 1) and
/// dealt round-robin starting at fold 0, so any remainder lands on the
/// lowest-indexed folds.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidFoldCount(k));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("label {bad} is not 0/1")));
    }
    let [neg, pos] = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::DegenerateLabels(format!(
            "stratification needs both classes, have {neg} TAV / {pos} BAV"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![usize::MAX; labels.len()];
    for class in [TAV, BAV] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        members.shuffle(&mut rng);
        for (j, idx) in members.into_iter().enumerate() {
            assignment[idx] = j % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignment,
        level: FoldLevel::Outer,
        seed,
    })
}
