//! Synthetic cohorts from simulated backbones with a closed-form Bayes AUROC.
//!
//! Slot `b` draws a latent score `z_b = (y - 1/2) s_b + sd_b (sqrt(rho_b) u +
//! sqrt(1 - rho_b) e_b)` with `u` shared across slots, and emits
//! `p_b = sigmoid(z_b)^gamma_b`. With equal class covariance `Sigma`, the
//! optimal combiner reaches AUROC `Phi(Delta / sqrt 2)` where
//! `Delta^2 = s^T Sigma^-1 s`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{Cohort, Study};
use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::scalar::Scalar;
use crate::seed::SeedStream;
use crate::stacking::N_SLOTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneProfile {
    pub slot: usize,
    pub signal_strength: f64,
    pub noise_sd: f64,
    #[serde(default = "one")]
    pub miscalibration_exponent: f64,
    #[serde(default)]
    pub correlation: f64,
}

fn one() -> f64 {
    1.0
}

impl BackboneProfile {
    pub fn new(slot: usize, signal_strength: f64, noise_sd: f64) -> Self {
        Self {
            slot,
            signal_strength,
            noise_sd,
            miscalibration_exponent: 1.0,
            correlation: 0.0,
        }
    }

    pub fn with_exponent(mut self, gamma: f64) -> Self {
        self.miscalibration_exponent = gamma;
        self
    }

    pub fn with_correlation(mut self, rho: f64) -> Self {
        self.correlation = rho;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = (1..=N_SLOTS).contains(&self.slot)
            && self.signal_strength.is_finite()
            && self.signal_strength >= 0.0
            && self.noise_sd.is_finite()
            && self.noise_sd > 0.0
            && self.miscalibration_exponent.is_finite()
            && self.miscalibration_exponent > 0.0
            && (0.0..1.0).contains(&self.correlation);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid backbone profile {self:?}")))
        }
    }
}

/// Five slots of equal strength whose optimal combination has Bayes AUROC
/// `target`. Each slot has `signal = noise_sd^2`, so its latent is the exact
/// log-likelihood ratio.
pub fn independent_profiles(target_auroc: f64, gamma: f64) -> Result<Vec<BackboneProfile>> {
    if !(0.5..1.0).contains(&target_auroc) {
        return Err(Error::InvalidInput(format!("target AUROC {target_auroc} outside [0.5, 1)")));
    }
    let normal = Normal::standard();
    let delta = normal.inverse_cdf(target_auroc) * std::f64::consts::SQRT_2;
    let ratio = delta / (N_SLOTS as f64).sqrt();
    if ratio == 0.0 {
        return Ok((1..=N_SLOTS)
            .map(|s| BackboneProfile::new(s, 0.0, 1.0).with_exponent(gamma))
            .collect());
    }
    Ok((1..=N_SLOTS)
        .map(|s| BackboneProfile::new(s, ratio * ratio, ratio).with_exponent(gamma))
        .collect())
}

fn check_profiles(profiles: &[BackboneProfile]) -> Result<()> {
    if profiles.len() != N_SLOTS {
        return Err(Error::InvalidInput(format!("{N_SLOTS} profiles required, got {}", profiles.len())));
    }
    for (i, p) in profiles.iter().enumerate() {
        p.validate()?;
        if profiles[..i].iter().any(|q| q.slot == p.slot) {
            return Err(Error::InvalidInput(format!("slot {} profiled twice", p.slot)));
        }
    }
    Ok(())
}

/// Mahalanobis class separation `Delta` of the latent score vector.
pub fn separation(profiles: &[BackboneProfile]) -> Result<f64> {
    check_profiles(profiles)?;
    let d = profiles.len();
    let delta: Vec<f64> = profiles.iter().map(|p| p.signal_strength).collect();
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut cov = vec![0.0; d * d];
    for (i, a) in profiles.iter().enumerate() {
        for (j, b) in profiles.iter().enumerate() {
            let shared = (a.correlation * b.correlation).sqrt();
            let own = if i == j { 1.0 - a.correlation } else { 0.0 };
            cov[i * d + j] = a.noise_sd * b.noise_sd * (shared + own);
        }
    }
    let w = solve(&cov, &delta).ok_or_else(|| Error::InvalidInput("singular latent covariance".into()))?;
    Ok(delta.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
}

/// `Phi(Delta / sqrt 2)`.
pub fn analytic_bayes_auroc(profiles: &[BackboneProfile]) -> Result<f64> {
    let delta = separation(profiles)?;
    Ok(Normal::standard().cdf(delta / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub prevalence: f64,
    pub seed: u64,
    pub profiles: Vec<BackboneProfile>,
    /// Gaussian tabular features appended after the emitted probabilities.
    pub extra_features: usize,
    pub extra_signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 90,
            prevalence: 48.0 / 90.0,
            seed: 0,
            profiles: (1..=N_SLOTS).map(|s| BackboneProfile::new(s, 1.0, 1.0)).collect(),
            extra_features: 0,
            extra_signal: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub config: SynthConfig,
    pub positives: usize,
    pub negatives: usize,
    pub separation: f64,
    pub analytic_bayes_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub generator_record: GeneratorRecord,
    pub analytic_bayes_auroc: f64,
}

impl SyntheticCohort {
    pub fn generator_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.generator_record)?)
    }
}

impl SynthConfig {
    /// Accepts a bare generator table or a run config carrying `[cohort.synth]`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let table = match value.get("cohort") {
            Some(cohort) => cohort
                .get("synth")
                .cloned()
                .ok_or_else(|| Error::Config("[cohort] has no synth table".into()))?,
            None => toml::Value::Table(value),
        };
        table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }
}

pub fn generate_cohort(n: usize, prevalence: f64, profiles: &[BackboneProfile], seed: u64) -> Result<SyntheticCohort> {
    generate(&SynthConfig {
        n,
        prevalence,
        seed,
        profiles: profiles.to_vec(),
        ..SynthConfig::default()
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    if cfg.n < 4 {
        return Err(Error::InvalidInput(format!("cohort size {} below 4", cfg.n)));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(Error::InvalidInput(format!("prevalence {} outside (0, 1)", cfg.prevalence)));
    }
    check_profiles(&cfg.profiles)?;
    if !cfg.extra_signal.is_finite() {
        return Err(Error::InvalidInput("extra_signal must be finite".into()));
    }
    let positives = (cfg.n as f64 * cfg.prevalence).round() as usize;
    if positives == 0 || positives == cfg.n {
        return Err(Error::DegenerateLabels(format!(
            "n = {} at prevalence {} leaves a class empty",
            cfg.n, cfg.prevalence
        )));
    }

    let root = SeedStream::new(cfg.seed);
    let mut labels: Vec<u8> = (0..cfg.n).map(|i| u8::from(i < positives)).collect();
    labels.shuffle(&mut root.child("labels").rng());

    let mut profiles = cfg.profiles.clone();
    profiles.sort_by_key(|p| p.slot);
    let mut rng = root.child("latent").rng();
    let studies = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let centred = f64::from(y) - 0.5;
            let shared: f64 = StandardNormal.sample(&mut rng);
            let mut features = Vec::with_capacity(2 * N_SLOTS + cfg.extra_features);
            for p in &profiles {
                let own: f64 = StandardNormal.sample(&mut rng);
                let noise = p.correlation.sqrt() * shared + (1.0 - p.correlation).sqrt() * own;
                let z = centred * p.signal_strength + p.noise_sd * noise;
                let prob = z.sigmoid().powf(p.miscalibration_exponent);
                features.push(1.0 - prob);
                features.push(prob);
            }
            for _ in 0..cfg.extra_features {
                let e: f64 = StandardNormal.sample(&mut rng);
                features.push(centred * cfg.extra_signal + e);
            }
            Study::with_features(format!("syn{i:05}"), y, features)
        })
        .collect();

    let sep = separation(&profiles)?;
    let auroc = Normal::standard().cdf(sep / std::f64::consts::SQRT_2);
    Ok(SyntheticCohort {
        cohort: Cohort::new(studies)?,
        generator_record: GeneratorRecord {
            config: cfg.clone(),
            positives,
            negatives: cfg.n - positives,
            separation: sep,
            analytic_bayes_auroc: auroc,
        },
        analytic_bayes_auroc: auroc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn config_from_either_toml_shape() {
        let bare = SynthConfig::from_toml_str("n = 40\nseed = 3").unwrap();
        let nested = SynthConfig::from_toml_str("[cohort.synth]\nn = 40\nseed = 3").unwrap();
        assert_eq!(bare, nested);
        assert_eq!((bare.n, bare.profiles.len()), (40, 5));
        assert!(matches!(SynthConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn zero_signal_is_chance() {
        let p: Vec<_> = (1..=5).map(|s| BackboneProfile::new(s, 0.0, 1.0)).collect();
        assert_eq!(analytic_bayes_auroc(&p).unwrap(), 0.5);
    }

    #[test]
    fn label_counts_exact() {
        let c = generate(&SynthConfig::default()).unwrap();
        assert_eq!(c.cohort.class_counts(), [42, 48]);
        assert_eq!(c.cohort.studies()[0].features.as_ref().unwrap().len(), 10);
        let again = generate(&SynthConfig::default()).unwrap();
        assert_eq!(c.cohort, again.cohort);
        assert!(matches!(generate_cohort(10, 0.01, &c.generator_record.config.profiles, 0), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn single_slot_closed_form() {
        // One informative slot: Delta = s / sd.
        let mut p: Vec<_> = (1..=5).map(|s| BackboneProfile::new(s, 0.0, 1.0)).collect();
        p[2] = BackboneProfile::new(3, 2.0, 1.0);
        let want = Normal::standard().cdf(2.0 / std::f64::consts::SQRT_2);
        assert!((analytic_bayes_auroc(&p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn profiles_hit_target() {
        let p = independent_profiles(0.85, 1.0).unwrap();
        assert!((analytic_bayes_auroc(&p).unwrap() - 0.85).abs() < 1e-9);
        assert!((p[0].noise_sd - 0.6555).abs() < 1e-3);
    }

    #[test]
    fn slots_independent_without_correlation() {
        let cfg = SynthConfig {
            n: 5000,
            prevalence: 0.5,
            seed: 3,
            ..SynthConfig::default()
        };
        let c = generate(&cfg).unwrap();
        let y = c.cohort.labels();
        // Latent recovered from the emitted probability (gamma = 1), centred
        // per class.
        let latent: Vec<Vec<f64>> = c
            .cohort
            .studies()
            .iter()
            .map(|s| {
                let f = s.features.as_ref().unwrap();
                (0..5).map(|b| (f[2 * b + 1] / f[2 * b]).ln()).collect()
            })
            .collect();
        let mut centred = latent.clone();
        for class in 0..2u8 {
            for b in 0..5 {
                let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
                let m = idx.iter().map(|&i| latent[i][b]).sum::<f64>() / idx.len() as f64;
                for &i in &idx {
                    centred[i][b] = latent[i][b] - m;
                }
            }
        }
        for a in 0..5 {
            for b in a + 1..5 {
                let sab: f64 = centred.iter().map(|r| r[a] * r[b]).sum();
                let saa: f64 = centred.iter().map(|r| r[a] * r[a]).sum();
                let sbb: f64 = centred.iter().map(|r| r[b] * r[b]).sum();
                assert!((sab / (saa * sbb).sqrt()).abs() < 0.05);
            }
        }
    }

    proptest! {
        #[test]
        fn uniform_signal_increase_is_monotone(
            base in proptest::collection::vec((0.0f64..2.0, 0.2f64..2.0, 0.0f64..0.9), 5),
            k in 1.0f64..3.0,
        ) {
            let p: Vec<_> = base.iter().enumerate()
                .map(|(i, &(s, sd, r))| BackboneProfile::new(i + 1, s, sd).with_correlation(r))
                .collect();
            let q: Vec<_> = p.iter().map(|b| BackboneProfile { signal_strength: b.signal_strength * k, ..b.clone() }).collect();
            prop_assert!(analytic_bayes_auroc(&q).unwrap() >= analytic_bayes_auroc(&p).unwrap() - 1e-12);
        }

        #[test]
        fn single_slot_increase_is_monotone(
            base in proptest::collection::vec((0.0f64..2.0, 0.2f64..2.0), 5),
            slot in 0usize..5,
            bump in 0.0f64..2.0,
        ) {
            let p: Vec<_> = base.iter().enumerate().map(|(i, &(s, sd))| BackboneProfile::new(i + 1, s, sd)).collect();
            let mut q = p.clone();
            q[slot].signal_strength += bump;
            prop_assert!(analytic_bayes_auroc(&q).unwrap() >= analytic_bayes_auroc(&p).unwrap() - 1e-12);
        }
    }
}
