//! End-to-end experiment: fixed outer folds, per-seed stacking, calibration,
//! thresholding, metrics and seed averaging.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{audit_leakage, AuditLog, AuditReport, FitRecord, FoldAudit, Stage};
use super::config::RunConfig;
use super::{build_oof, ensemble_predict, refit_and_score, train_meta_bank, MetaBank, MetaFeatureMatrix, RowProvenance};
use crate::calibration::{apply, ece_reliability, fit_platt, meta_oof_scores, PlattScaler, ReliabilityBin};
use crate::cohort::{stratified_kfold, Cohort, FoldLevel, FoldPlan};
use crate::decision::{
    auroc, average_precision, brier, confusion_metrics, dca_curve, default_dca_grid, evaluate, pr_points,
    roc_curve, select_threshold, Confusion, DcaPoint, Metrics, ThresholdChoice,
};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::learners::LearnerSpec;
use crate::seed::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub selected_specs: Vec<LearnerSpec>,
    pub recalibrator: Option<PlattScaler<f64>>,
    pub threshold: ThresholdChoice<f64>,
    pub metrics: Metrics<f64>,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin<f64>>,
    pub dca: Vec<DcaPoint<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Pooled over the outer folds; each study is thresholded at its own
    /// fold's tau*.
    pub metrics: Metrics<f64>,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub tau_star: MeanSd,
    pub tune_f1: MeanSd,
    pub test_precision: MeanSd,
    pub test_recall: MeanSd,
    pub test_f1: MeanSd,
    pub test_auroc: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyProbability {
    pub id: String,
    pub study: usize,
    pub label: u8,
    pub fold: usize,
    pub raw_score: f64,
    pub probability: f64,
    /// Mean over seeds of the study's fold threshold.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAveraged {
    pub probabilities: Vec<StudyProbability>,
    pub metrics: Metrics<f64>,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin<f64>>,
    pub dca: Vec<DcaPoint<f64>>,
}

impl SeedAveraged {
    /// Metrics over one probability per study, thresholded per study.
    pub fn from_probabilities(probabilities: Vec<StudyProbability>, bins: usize) -> Result<Self> {
        let p: Vec<f64> = probabilities.iter().map(|s| s.probability).collect();
        let y: Vec<u8> = probabilities.iter().map(|s| s.label).collect();
        let pred: Vec<u8> = probabilities.iter().map(|s| u8::from(s.probability >= s.tau)).collect();
        let mut metrics: Metrics<f64> = confusion_metrics(Confusion::from_predictions(&pred, &y));
        metrics.auroc = auroc(&p, &y).ok();
        metrics.average_precision = average_precision(&p, &y).ok();
        metrics.brier = brier(&p, &y).ok();
        let rel = ece_reliability(&p, &y, bins)?;
        let dca = dca_curve(&p, &y, &default_dca_grid())?;
        Ok(Self {
            probabilities,
            metrics,
            ece: rel.ece,
            reliability: rel.bins,
            dca: dca.points,
        })
    }

    fn probs_labels(&self) -> (Vec<f64>, Vec<u8>) {
        (
            self.probabilities.iter().map(|s| s.probability).collect(),
            self.probabilities.iter().map(|s| s.label).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub cohort: CohortSummary,
    pub outer_folds: Vec<usize>,
    pub per_fold: Vec<FoldResult>,
    pub per_seed: Vec<SeedSummary>,
    pub fold_summary: Vec<FoldSummary>,
    /// Mean and SD over seeds of the pooled per-seed metrics.
    pub summary: BTreeMap<String, MeanSd>,
    pub seed_averaged: SeedAveraged,
    pub provenance_audit: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub study: usize,
    pub fold: usize,
    pub seed: u64,
    pub raw_score: f64,
    pub calibrated_prob: f64,
    pub label: u8,
}

/// Fitted state of one (seed, fold) cell, enough to re-score or explain it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModels {
    pub seed: u64,
    pub fold: usize,
    pub bank: MetaBank,
    pub recalibrator: Option<PlattScaler<f64>>,
    pub tau_star: f64,
    pub x_oof: MetaFeatureMatrix,
    pub y_train: Vec<u8>,
    pub x_test: MetaFeatureMatrix,
    pub y_test: Vec<u8>,
}

impl FoldModels {
    /// Final probability: recalibrated mean of the bank's BAV probabilities.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let raw = self.bank.predict_rows(rows)?;
        Ok(match &self.recalibrator {
            Some(r) => apply(r, &raw),
            None => raw,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: ExperimentReport,
    pub predictions: Vec<PredictionRow>,
    pub audit: AuditLog,
    pub models: Vec<FoldModels>,
}

struct Cell {
    result: FoldResult,
    predictions: Vec<PredictionRow>,
    audit: FoldAudit,
    models: FoldModels,
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

fn run_cell(cohort: &Cohort, cfg: &RunConfig, outer: &FoldPlan, seed: u64, fold: usize) -> Result<Cell> {
    let labels = cohort.labels();
    let ids = cohort.ids();
    let train = outer.train_positions(fold);
    let test = outer.test_positions(fold);
    let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    let slots = &cfg.bases.slots;

    let stream = SeedStream::new(seed).index(fold as u64);
    let inner = stratified_kfold(&y_train, cfg.splits.k_in, stream.child("inner-folds").seed())?
        .with_level(FoldLevel::Inner);
    let base_seed = stream.child("bases").seed();
    let mut x_oof = build_oof(cohort, &train, slots, &inner, base_seed)?;
    let bank = train_meta_bank(&x_oof, &y_train, &cfg.meta, stream.child("meta-search").seed())?;

    let cal = meta_oof_scores(
        &x_oof,
        &y_train,
        &bank.selected_specs,
        cfg.splits.k_cal,
        stream.child("calibration-folds").seed(),
    )?;
    let recal = if cfg.calibration.enabled {
        Some(fit_platt(&cal.scores, &y_train)?)
    } else {
        None
    };
    let tuning = match &recal {
        Some(r) => apply(r, &cal.scores),
        None => cal.scores.clone(),
    };
    let threshold = select_threshold(&tuning, &y_train, cfg.threshold.grid_step)?;

    let mut x_test = refit_and_score(cohort, slots, &train, &test, base_seed)?;
    let raw = ensemble_predict(&bank, &x_test)?;
    let calibrated = match &recal {
        Some(r) => apply(r, &raw),
        None => raw.clone(),
    };
    let metrics = evaluate(&calibrated, &y_test, threshold.tau_star);
    let rel = ece_reliability(&calibrated, &y_test, cfg.calibration.bins)?;
    let dca = dca_curve(&calibrated, &y_test, &default_dca_grid())?;

    let trainers = sorted(&x_oof.studies);
    let mut fits = std::mem::take(&mut x_oof.fits);
    fits.append(&mut x_test.fits);
    for spec in &bank.selected_specs {
        fits.push(FitRecord {
            stage: Stage::MetaSearch,
            name: spec.family.name().to_string(),
            fold: None,
            trainer_index_set: trainers.clone(),
            scaler_index_set: spec.family.standardizes().then(|| trainers.clone()),
        });
    }
    for m in &bank.members {
        fits.push(FitRecord::from_model(Stage::Meta, m.spec.family.name(), None, m));
    }
    fits.extend(cal.fits);

    let audit = FoldAudit {
        seed,
        fold,
        outer_train: train.clone(),
        outer_test: test.clone(),
        oof: x_oof.provenance.clone(),
        test_provenance: x_test.provenance.clone(),
        fits,
        calibration: cal.provenance,
        platt_index_set: if recal.is_some() { trainers.clone() } else { vec![] },
        threshold_index_set: trainers,
    };
    let predictions = test
        .iter()
        .zip(raw.iter().zip(&calibrated))
        .map(|(&s, (&r, &c))| PredictionRow {
            id: ids[s].to_string(),
            study: s,
            fold,
            seed,
            raw_score: r,
            calibrated_prob: c,
            label: labels[s],
        })
        .collect();
    Ok(Cell {
        result: FoldResult {
            seed,
            fold,
            n_train: train.len(),
            n_test: test.len(),
            selected_specs: bank.selected_specs.clone(),
            recalibrator: recal,
            threshold: threshold.clone(),
            metrics,
            ece: rel.ece,
            reliability: rel.bins,
            dca: dca.points,
        },
        predictions,
        audit,
        models: FoldModels {
            seed,
            fold,
            bank,
            recalibrator: recal,
            tau_star: threshold.tau_star,
            x_oof,
            y_train,
            x_test,
            y_test,
        },
    })
}

/// Scheduling of the (seed, fold) cells. Outputs do not depend on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Runs every (seed, outer fold) cell and assembles the report. The outer
/// split depends only on `splits.outer_split_seed`.
pub fn run_experiment(cohort: &Cohort, cfg: &RunConfig) -> Result<RunArtifacts> {
    run_experiment_with(cohort, cfg, Execution::Parallel)
}

pub fn run_experiment_with(cohort: &Cohort, cfg: &RunConfig, execution: Execution) -> Result<RunArtifacts> {
    cfg.validate()?;
    cohort.check_foldable()?;
    if execution == Execution::Parallel {
        run_inner(cohort, cfg)
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_inner(cohort, cfg))
    }
}

fn run_inner(cohort: &Cohort, cfg: &RunConfig) -> Result<RunArtifacts> {
    let labels = cohort.labels();
    let outer = stratified_kfold(&labels, cfg.splits.k_out, cfg.splits.outer_split_seed)?.with_level(FoldLevel::Outer);
    let k = outer.k;
    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .values
        .iter()
        .flat_map(|&s| (0..k).map(move |f| (s, f)))
        .collect();
    let cells: Vec<Result<Cell>> = jobs
        .par_iter()
        .map(|&(s, f)| run_cell(cohort, cfg, &outer, s, f))
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;

    let mut per_fold = Vec::with_capacity(cells.len());
    let mut predictions = Vec::new();
    let mut audit = AuditLog::default();
    let mut models = Vec::with_capacity(cells.len());
    for c in cells {
        per_fold.push(c.result);
        predictions.extend(c.predictions);
        audit.folds.push(c.audit);
        models.push(c.models);
    }

    let provenance_audit = audit_leakage(&audit);
    if let Some(v) = provenance_audit.violations.first() {
        return Err(Error::LeakageDetected(format!(
            "{} audit violation(s); first: {:?} in {} (seed {}, fold {}, indices {:?})",
            provenance_audit.violations.len(),
            v.kind,
            v.record,
            v.seed,
            v.fold,
            v.indices
        )));
    }

    let n = cohort.len();
    let bins = cfg.calibration.bins;
    let per_seed = cfg
        .seeds
        .values
        .iter()
        .map(|&s| seed_summary(s, &predictions, &per_fold, n, bins))
        .collect::<Result<Vec<_>>>()?;
    let fold_summary = (0..k).map(|f| fold_summary(f, &per_fold)).collect();
    let summary = summarize(&per_seed);
    let seed_averaged = seed_average(cohort, &outer, &predictions, &per_fold, bins)?;
    let [negatives, positives] = cohort.class_counts();

    Ok(RunArtifacts {
        report: ExperimentReport {
            config: cfg.clone(),
            cohort: CohortSummary { n, positives, negatives },
            outer_folds: outer.assignment.clone(),
            per_fold,
            per_seed,
            fold_summary,
            summary,
            seed_averaged,
            provenance_audit,
        },
        predictions,
        audit,
        models,
    })
}

fn tau_of(per_fold: &[FoldResult], seed: u64, fold: usize) -> f64 {
    per_fold
        .iter()
        .find(|r| r.seed == seed && r.fold == fold)
        .map(|r| r.threshold.tau_star)
        .unwrap_or(0.5)
}

fn seed_summary(seed: u64, preds: &[PredictionRow], per_fold: &[FoldResult], n: usize, bins: usize) -> Result<SeedSummary> {
    let rows: Vec<&PredictionRow> = preds.iter().filter(|p| p.seed == seed).collect();
    if rows.len() != n {
        return Err(Error::IncompleteOof(format!(
            "seed {seed} scored {} of {n} studies",
            rows.len()
        )));
    }
    let p: Vec<f64> = rows.iter().map(|r| r.calibrated_prob).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let pred: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r.calibrated_prob >= tau_of(per_fold, seed, r.fold)))
        .collect();
    let mut metrics: Metrics<f64> = confusion_metrics(Confusion::from_predictions(&pred, &y));
    metrics.auroc = auroc(&p, &y).ok();
    metrics.average_precision = average_precision(&p, &y).ok();
    metrics.brier = brier(&p, &y).ok();
    let ece = ece_reliability(&p, &y, bins)?.ece;
    Ok(SeedSummary { seed, metrics, ece })
}

fn fold_summary(fold: usize, per_fold: &[FoldResult]) -> FoldSummary {
    let rs: Vec<&FoldResult> = per_fold.iter().filter(|r| r.fold == fold).collect();
    let of = |f: &dyn Fn(&FoldResult) -> f64| MeanSd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let aurocs: Option<Vec<f64>> = rs.iter().map(|r| r.metrics.auroc).collect();
    FoldSummary {
        fold,
        tau_star: of(&|r| r.threshold.tau_star),
        tune_f1: of(&|r| r.threshold.achieved_f1),
        test_precision: of(&|r| r.metrics.precision),
        test_recall: of(&|r| r.metrics.recall),
        test_f1: of(&|r| r.metrics.f1),
        test_auroc: aurocs.map(|v| MeanSd::of(&v)),
    }
}

fn summarize(per_seed: &[SeedSummary]) -> BTreeMap<String, MeanSd> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, v: Option<Vec<f64>>| {
        if let Some(v) = v {
            out.insert(name.to_string(), MeanSd::of(&v));
        }
    };
    let all = |f: &dyn Fn(&SeedSummary) -> f64| Some(per_seed.iter().map(f).collect::<Vec<_>>());
    let opt = |f: &dyn Fn(&SeedSummary) -> Option<f64>| per_seed.iter().map(f).collect::<Option<Vec<_>>>();
    put("accuracy", all(&|s| s.metrics.accuracy));
    put("precision", all(&|s| s.metrics.precision));
    put("recall", all(&|s| s.metrics.recall));
    put("f1", all(&|s| s.metrics.f1));
    put("macro_f1", all(&|s| s.metrics.macro_f1));
    put("ece", all(&|s| s.ece));
    put("auroc", opt(&|s| s.metrics.auroc));
    put("average_precision", opt(&|s| s.metrics.average_precision));
    put("brier", opt(&|s| s.metrics.brier));
    out
}

fn seed_average(
    cohort: &Cohort,
    outer: &FoldPlan,
    preds: &[PredictionRow],
    per_fold: &[FoldResult],
    bins: usize,
) -> Result<SeedAveraged> {
    let n = cohort.len();
    let mut sum_p = vec![0.0; n];
    let mut sum_raw = vec![0.0; n];
    let mut sum_tau = vec![0.0; n];
    let mut count = vec![0usize; n];
    for r in preds {
        sum_p[r.study] += r.calibrated_prob;
        sum_raw[r.study] += r.raw_score;
        sum_tau[r.study] += tau_of(per_fold, r.seed, r.fold);
        count[r.study] += 1;
    }
    let labels = cohort.labels();
    let ids = cohort.ids();
    let probabilities = (0..n)
        .map(|i| {
            if count[i] == 0 {
                return Err(Error::IncompleteOof(format!("study {} never scored", ids[i])));
            }
            let c = count[i] as f64;
            Ok(StudyProbability {
                id: ids[i].to_string(),
                study: i,
                label: labels[i],
                fold: outer.assignment[i],
                raw_score: sum_raw[i] / c,
                probability: sum_p[i] / c,
                tau: sum_tau[i] / c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SeedAveraged::from_probabilities(probabilities, bins)
}

/// Pools the predictions of several runs over the same cohort into one
/// probability per study; each row is thresholded at its own cell's tau*.
pub fn aggregate_runs(runs: &[(ExperimentReport, Vec<PredictionRow>)], bins: usize) -> Result<SeedAveraged> {
    let (first, _) = runs.first().ok_or_else(|| Error::EmptyInput("no runs to aggregate".into()))?;
    let template = &first.seed_averaged.probabilities;
    let index: BTreeMap<&str, usize> = template.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let n = template.len();
    let mut sum_p = vec![0.0; n];
    let mut sum_raw = vec![0.0; n];
    let mut sum_tau = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut seen = std::collections::BTreeSet::new();
    for (report, preds) in runs {
        if report.seed_averaged.probabilities.len() != n {
            return Err(Error::InvalidInput("runs cover different cohorts".into()));
        }
        for r in preds {
            let &i = index
                .get(r.id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("study {:?} missing from the first run", r.id)))?;
            if template[i].label != r.label {
                return Err(Error::InvalidInput(format!("study {:?} changes label between runs", r.id)));
            }
            if !seen.insert((r.seed, i)) {
                return Err(Error::InvalidInput(format!("seed {} scores study {:?} twice", r.seed, r.id)));
            }
            sum_p[i] += r.calibrated_prob;
            sum_raw[i] += r.raw_score;
            sum_tau[i] += report
                .per_fold
                .iter()
                .find(|f| f.seed == r.seed && f.fold == r.fold)
                .map(|f| f.threshold.tau_star)
                .ok_or_else(|| Error::InvalidInput(format!("no threshold for seed {} fold {}", r.seed, r.fold)))?;
            count[i] += 1;
        }
    }
    let probabilities = template
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if count[i] == 0 {
                return Err(Error::IncompleteOof(format!("study {} never scored", s.id)));
            }
            let c = count[i] as f64;
            Ok(StudyProbability {
                raw_score: sum_raw[i] / c,
                probability: sum_p[i] / c,
                tau: sum_tau[i] / c,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SeedAveraged::from_probabilities(probabilities, bins)
}

/// One `provenance.jsonl` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub seed: u64,
    pub fold: usize,
    pub row: usize,
    pub id: String,
    #[serde(flatten)]
    pub provenance: RowProvenance,
}

fn csv_from<W: FnMut(&mut String)>(header: &str, mut body: W) -> String {
    let mut s = String::from(header);
    s.push('\n');
    body(&mut s);
    s
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    csv_from("id,fold,seed,raw_score,calibrated_prob,label", |s| {
        for r in rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.id, r.fold, r.seed, r.raw_score, r.calibrated_prob, r.label
            ));
        }
    })
}

/// Writes `roc.csv`, `pr.csv`, `dca.csv`, `reliability.csv` and `ece.json`
/// for one probability per study.
pub fn write_curves(dir: &Path, avg: &SeedAveraged) -> Result<()> {
    let (p, y) = avg.probs_labels();
    let roc = csv_from("fpr,tpr,threshold", |s| {
        for pt in roc_curve(&p, &y) {
            s.push_str(&format!("{},{},{}\n", pt.fpr, pt.tpr, pt.threshold));
        }
    });
    let pr = csv_from("recall,precision,threshold", |s| {
        for pt in pr_points(&p, &y) {
            s.push_str(&format!("{},{},{}\n", pt.recall, pt.precision, pt.threshold));
        }
    });
    let dca = csv_from("p_t,nb_model,nb_all,nb_none", |s| {
        for pt in &avg.dca {
            s.push_str(&format!("{},{},{},{}\n", pt.p_t, pt.nb_model, pt.nb_treat_all, pt.nb_treat_none));
        }
    });
    let rel = crate::calibration::Reliability {
        bins: avg.reliability.clone(),
        ece: avg.ece,
    };
    write_atomic(&dir.join("roc.csv"), roc.as_bytes())?;
    write_atomic(&dir.join("pr.csv"), pr.as_bytes())?;
    write_atomic(&dir.join("dca.csv"), dca.as_bytes())?;
    write_atomic(&dir.join("reliability.csv"), rel.to_csv().as_bytes())?;
    write_atomic(&dir.join("ece.json"), serde_json::json!({ "ece": avg.ece }).to_string().as_bytes())?;
    Ok(())
}

impl RunArtifacts {
    /// Writes every run artifact under `dir`; each file is written atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&self.report)?.as_bytes())?;
        write_atomic(&dir.join("predictions.csv"), predictions_csv(&self.predictions).as_bytes())?;

        let mut prov = String::new();
        for fa in &self.audit.folds {
            for (row, p) in fa.oof.iter().enumerate() {
                let id = self.report.seed_averaged.probabilities[p.study].id.clone();
                let rec = ProvenanceRecord {
                    seed: fa.seed,
                    fold: fa.fold,
                    row,
                    id,
                    provenance: p.clone(),
                };
                prov.push_str(&serde_json::to_string(&rec)?);
                prov.push('\n');
            }
        }
        write_atomic(&dir.join("provenance.jsonl"), prov.as_bytes())?;
        write_atomic(&dir.join("audit_log.json"), serde_json::to_string(&self.audit)?.as_bytes())?;
        write_curves(dir, &self.report.seed_averaged)?;
        for m in &self.models {
            let path = dir.join("models").join(format!("seed{}_fold{}.json", m.seed, m.fold));
            write_atomic(&path, serde_json::to_string(m)?.as_bytes())?;
        }
        Ok(())
    }
}

/// Reads `audit_log.json` and merges the OOF rows from `provenance.jsonl`.
pub fn load_audit_log(dir: &Path) -> Result<AuditLog> {
    let mut log: AuditLog = serde_json::from_str(&read_to_string(&dir.join("audit_log.json"))?)?;
    let text = read_to_string(&dir.join("provenance.jsonl"))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ProvenanceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Serde(format!("provenance.jsonl line {}: {e}", i + 1)))?;
        let fa = log
            .folds
            .iter_mut()
            .find(|f| f.seed == rec.seed && f.fold == rec.fold)
            .ok_or_else(|| Error::Serde(format!("provenance for unknown cell seed {} fold {}", rec.seed, rec.fold)))?;
        fa.oof.push(rec.provenance);
    }
    Ok(log)
}

/// Loads every `models/seed*_fold*.json` in a stable order.
pub fn load_fold_models(dir: &Path) -> Result<Vec<FoldModels>> {
    let mdir = dir.join("models");
    let mut paths: Vec<_> = std::fs::read_dir(&mdir)
        .map_err(|e| Error::io(&mdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = paths
        .iter()
        .map(|p| Ok(serde_json::from_str::<FoldModels>(&read_to_string(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|m| (m.seed, m.fold));
    Ok(out)
}

/// Parses a `predictions.csv`.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        fold: usize,
        seed: u64,
        raw_score: f64,
        calibrated_prob: f64,
        label: u8,
    }
    let text = read_to_string(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r?;
            Ok(PredictionRow {
                id: r.id,
                study: usize::MAX,
                fold: r.fold,
                seed: r.seed,
                raw_score: r.raw_score,
                calibrated_prob: r.calibrated_prob,
                label: r.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seeds.values = vec![1, 2];
        cfg.meta.n_iter = 2;
        cfg
    }

    #[test]
    fn end_to_end_is_complete_and_clean() {
        let cfg = small_config();
        let c = generate(&SynthConfig::default()).unwrap().cohort;
        let run = run_experiment(&c, &cfg).unwrap();
        assert!(run.report.provenance_audit.passed);
        assert_eq!(run.predictions.len(), 2 * 90);
        for seed in [1, 2] {
            let mut seen: Vec<usize> = run.predictions.iter().filter(|p| p.seed == seed).map(|p| p.study).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..90).collect::<Vec<_>>());
        }
        assert_eq!(run.report.seed_averaged.probabilities.len(), 90);
        for f in &run.report.per_fold {
            assert_eq!((f.n_train, f.n_test), (60, 30));
        }
    }

    #[test]
    fn serial_matches_parallel() {
        let mut cfg = small_config();
        cfg.seeds.values = vec![5];
        let c = generate(&SynthConfig::default()).unwrap().cohort;
        let a = run_experiment(&c, &cfg).unwrap();
        let b = run_experiment_with(&c, &cfg, Execution::Serial).unwrap();
        assert_eq!(predictions_csv(&a.predictions), predictions_csv(&b.predictions));
        assert_eq!(a.report.per_fold, b.report.per_fold);
    }

    #[test]
    fn aggregating_split_runs_matches_joint_run() {
        let c = generate(&SynthConfig::default()).unwrap().cohort;
        let joint = run_experiment(&c, &small_config()).unwrap();
        let parts: Vec<_> = [1, 2]
            .iter()
            .map(|&s| {
                let mut cfg = small_config();
                cfg.seeds.values = vec![s];
                let r = run_experiment(&c, &cfg).unwrap();
                (r.report, r.predictions)
            })
            .collect();
        let agg = aggregate_runs(&parts, 5).unwrap();
        for (a, b) in agg.probabilities.iter().zip(&joint.report.seed_averaged.probabilities) {
            assert_eq!(a.id, b.id);
            assert!((a.probability - b.probability).abs() < 1e-12);
            assert!((a.tau - b.tau).abs() < 1e-12);
        }
        let twice = vec![parts[0].clone(), parts[0].clone()];
        assert!(matches!(aggregate_runs(&twice, 5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_study_refused() {
        let c = Cohort::new(vec![crate::cohort::Study::with_features("a", 1, vec![0.5; 10])]).unwrap();
        assert!(run_experiment(&c, &small_config()).is_err());
    }
}
