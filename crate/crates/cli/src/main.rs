use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use oofstack::explain::{explain_ensemble, DEFAULT_BACKGROUND};
use oofstack::io::{read_to_string, write_atomic};
use oofstack::preprocess::{preprocess_study, write_clip, RoiRect, TARGET_FRAMES};
use oofstack::seed::SeedStream;
use oofstack::stacking::{
    aggregate_runs, audit_leakage, load_audit_log, load_fold_models, load_predictions, run_experiment_with,
    write_curves, Execution, ExperimentReport,
};
use oofstack::synth::{generate, SynthConfig};
use oofstack::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "oofstack", version, about = "Leakage-aware stacked-ensemble evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (`cohort.csv`, `generator.json`).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a directory of `frame_*.pgm` files into a `.clip` tensor.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Crop as `x,y,w,h`.
        #[arg(long, default_value = "420,275,240,240")]
        roi: RoiRect,
        #[arg(long, default_value_t = TARGET_FRAMES)]
        frames: usize,
    },
    /// Run the full nested evaluation and write all run artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate all cells on one thread; outputs are identical.
        #[arg(long)]
        serial: bool,
    },
    /// Re-check a run's provenance records for leakage.
    Audit {
        #[arg(long)]
        run: PathBuf,
    },
    /// Shapley attributions of the final ensemble on every outer-test row.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BACKGROUND)]
        background: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seed-average several runs into one probability per study.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    /// Already reported; only the exit status remains.
    Exit(u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth { config, out } => synth(&config, &out),
        Command::Preprocess {
            input,
            out,
            roi,
            frames,
        } => preprocess(&input, &out, roi, frames),
        Command::Run { config, out, serial } => run(&config, &out, serial),
        Command::Audit { run } => audit(&run),
        Command::Explain { run, background, out } => explain(&run, background, &out),
        Command::Report { runs, out } => report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Exit(code)) => ExitCode::from(code),
        Err(Failure::Usage(e)) => emit(&e, 2),
        Err(Failure::Runtime(e)) => emit(&e, 1),
    }
}

fn emit(e: &Error, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "kind": e.kind(), "detail": e.to_string() }));
    ExitCode::from(code)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn read_config_text(path: &Path) -> Result<String, Failure> {
    read_to_string(path).map_err(Failure::Usage)
}

fn synth(config: &Path, out: &Path) -> CmdResult {
    let cfg = SynthConfig::from_toml_str(&read_config_text(config)?).map_err(Failure::Usage)?;
    let cohort = generate(&cfg)?;
    create_dir(out)?;
    let mut csv = Vec::new();
    cohort.cohort.to_csv_writer(&mut csv)?;
    write_atomic(&out.join("cohort.csv"), &csv)?;
    write_atomic(&out.join("generator.json"), cohort.generator_json()?.as_bytes())?;
    println!(
        "{}",
        json!({
            "studies": cohort.cohort.len(),
            "positives": cohort.generator_record.positives,
            "analytic_bayes_auroc": cohort.analytic_bayes_auroc,
        })
    );
    Ok(())
}

fn preprocess(input: &Path, out: &Path, roi: RoiRect, frames: usize) -> CmdResult {
    if frames == 0 {
        return Err(Failure::Usage(Error::Config("--frames must be positive".into())));
    }
    let clip = preprocess_study(input, roi, frames)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let sidecar = write_clip(&clip, out)?;
    println!("{}", serde_json::to_string(&sidecar).map_err(Error::from)?);
    Ok(())
}

fn run(config: &Path, out: &Path, serial: bool) -> CmdResult {
    read_config_text(config)?;
    let cfg = RunConfig::from_path(config).map_err(Failure::Usage)?;
    let cohort = cfg.load_cohort()?;
    let execution = if serial { Execution::Serial } else { Execution::Parallel };
    let artifacts = run_experiment_with(&cohort, &cfg, execution)?;
    create_dir(out)?;
    artifacts.write(out)?;
    let summary: serde_json::Map<String, serde_json::Value> = artifacts
        .report
        .summary
        .iter()
        .map(|(k, v)| (k.clone(), json!({ "mean": v.mean, "sd": v.sd })))
        .collect();
    println!("{}", json!({ "out": out, "violations": 0, "summary": summary }));
    Ok(())
}

fn audit(dir: &Path) -> CmdResult {
    let log = load_audit_log(dir)?;
    let report = audit_leakage(&log);
    println!(
        "{}",
        json!({
            "violations": report.violations.len(),
            "passed": report.passed,
            "checked_folds": report.checked_folds,
            "checked_records": report.checked_records,
            "details": report.violations,
        })
    );
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Exit(1))
    }
}

fn load_report(dir: &Path) -> Result<ExperimentReport, Error> {
    Ok(serde_json::from_str(&read_to_string(&dir.join("report.json"))?)?)
}

fn explain(dir: &Path, background: usize, out: &Path) -> CmdResult {
    let report = load_report(dir)?;
    let ids: Vec<&str> = report.seed_averaged.probabilities.iter().map(|s| s.id.as_str()).collect();
    let models = load_fold_models(dir)?;
    let mut names: Vec<String> = Vec::new();
    let mut rows = String::new();
    let mut abs_sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for m in &models {
        let seed = SeedStream::new(m.seed).index(m.fold as u64).child("background").seed();
        let shap = explain_ensemble(&m.bank, m.recalibrator.as_ref(), &m.x_test, &m.x_oof, &m.y_train, background, seed)?;
        if names.is_empty() {
            names = shap.feature_names.clone();
            abs_sum = vec![0.0; names.len()];
        }
        for ((&study, phi), pred) in shap.samples.iter().zip(&shap.per_sample).zip(&shap.predictions) {
            let id = ids
                .get(study)
                .ok_or_else(|| Error::InvalidInput(format!("study index {study} not in report")))?;
            rows.push_str(&format!("{id},{},{}", m.seed, m.fold));
            for (a, v) in abs_sum.iter_mut().zip(phi) {
                rows.push_str(&format!(",{v}"));
                *a += v.abs();
            }
            rows.push_str(&format!(",{},{pred}\n", shap.base_value));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Failure::Runtime(Error::EmptyInput("run has no fold models to explain".into())));
    }
    create_dir(out)?;
    let header = format!("sample_id,seed,fold,{},base_value,prediction\n", names.join(","));
    write_atomic(&out.join("shap.csv"), format!("{header}{rows}").as_bytes())?;
    let mut global = String::from("feature,mean_abs_shap\n");
    for (n, a) in names.iter().zip(&abs_sum) {
        global.push_str(&format!("{n},{}\n", a / count as f64));
    }
    write_atomic(&out.join("shap_global.csv"), global.as_bytes())?;
    println!("{}", json!({ "explained": count, "cells": models.len() }));
    Ok(())
}

fn report(dirs: &[PathBuf], out: &Path) -> CmdResult {
    let runs = dirs
        .iter()
        .map(|d| Ok((load_report(d)?, load_predictions(&d.join("predictions.csv"))?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let bins = runs[0].0.config.calibration.bins;
    let avg = aggregate_runs(&runs, bins)?;
    create_dir(out)?;
    let mut probs = String::from("id,label,fold,raw_score,probability,tau\n");
    for s in &avg.probabilities {
        probs.push_str(&format!("{},{},{},{},{},{}\n", s.id, s.label, s.fold, s.raw_score, s.probability, s.tau));
    }
    write_atomic(&out.join("probabilities.csv"), probs.as_bytes())?;
    write_curves(out, &avg)?;
    let mut seeds: Vec<u64> = runs.iter().flat_map(|(r, _)| r.config.seeds.values.clone()).collect();
    seeds.sort_unstable();
    let summary = json!({
        "runs": dirs,
        "seeds": seeds,
        "studies": avg.probabilities.len(),
        "metrics": avg.metrics,
        "ece": avg.ece,
    });
    write_atomic(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(Error::from)?.as_bytes(),
    )?;
    println!("{summary}");
    Ok(())
}
