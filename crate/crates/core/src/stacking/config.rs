//! Run configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_slots, resolve_space, BaseSlot};
use crate::error::{Error, Result};
use crate::learners::{Distribution, Family};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    /// Cohort CSV (`id,label,f0,...`); relative paths resolve against the
    /// config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            csv: None,
            synth: Some(SynthConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub k_out: usize,
    pub k_in: usize,
    pub k_cal: usize,
    pub outer_split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k_out: 3,
            k_in: 3,
            k_cal: 3,
            outer_split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    pub values: Vec<u64>,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        Self {
            values: (1..=10).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasesConfig {
    pub slots: Vec<BaseSlot>,
}

impl Default for BasesConfig {
    fn default() -> Self {
        Self {
            slots: BaseSlot::simulated_defaults(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub families: Vec<Family>,
    /// Random-search draws per family.
    pub n_iter: usize,
    pub search_folds: usize,
    /// Per-family overrides of the default search distributions, keyed by
    /// family name.
    pub spaces: BTreeMap<String, BTreeMap<String, Distribution>>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            families: Family::META_BANK.to_vec(),
            n_iter: 20,
            search_folds: 3,
            spaces: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub enabled: bool,
    pub bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { enabled: true, bins: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub grid_step: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { grid_step: 0.001 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub splits: SplitConfig,
    pub seeds: SeedsConfig,
    pub bases: BasesConfig,
    pub meta: MetaConfig,
    pub calibration: CalibrationConfig,
    pub threshold: ThresholdConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates `path`, resolving a relative cohort CSV against
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(csv) = &cfg.cohort.csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.cohort.csv = Some(base.join(csv));
            }
        }
        Ok(cfg)
    }

    /// Reads the cohort CSV or generates the synthetic cohort.
    pub fn load_cohort(&self) -> Result<crate::cohort::Cohort> {
        match (&self.cohort.csv, &self.cohort.synth) {
            (Some(path), None) => {
                let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                crate::cohort::Cohort::from_csv_reader(std::io::BufReader::new(f))
            }
            (None, Some(synth)) => Ok(crate::synth::generate(synth)?.cohort),
            _ => Err(Error::Config("cohort needs exactly one of csv or synth".into())),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.splits;
        for (name, k) in [("k_out", s.k_out), ("k_in", s.k_in), ("k_cal", s.k_cal)] {
            if k < 2 {
                return Err(Error::Config(format!("splits.{name} must be at least 2, got {k}")));
            }
        }
        if self.seeds.values.is_empty() {
            return Err(Error::Config("seeds.values is empty".into()));
        }
        let mut seen = self.seeds.values.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds.values must be distinct".into()));
        }
        check_slots(&self.bases.slots).map_err(|e| Error::Config(e.to_string()))?;

        let m = &self.meta;
        if m.families.is_empty() {
            return Err(Error::Config("meta.families is empty".into()));
        }
        if m.families.contains(&Family::SimulatedBackbone) {
            return Err(Error::Config("simulated_backbone cannot be a meta learner".into()));
        }
        if m.n_iter == 0 {
            return Err(Error::Config("meta.n_iter must be at least 1".into()));
        }
        if m.search_folds < 2 {
            return Err(Error::Config("meta.search_folds must be at least 2".into()));
        }
        for key in m.spaces.keys() {
            let Some(&family) = m.families.iter().find(|f| f.name() == key) else {
                return Err(Error::Config(format!("meta.spaces.{key} names no configured family")));
            };
            resolve_space(m, family)
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.calibration.bins == 0 {
            return Err(Error::Config("calibration.bins must be positive".into()));
        }
        let g = self.threshold.grid_step;
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::Config(format!("threshold.grid_step {g} outside (0, 1]")));
        }
        match (&self.cohort.csv, &self.cohort.synth) {
            (Some(_), Some(_)) => Err(Error::Config("cohort takes either csv or synth, not both".into())),
            (None, None) => Err(Error::Config("cohort needs csv or synth".into())),
            _ => Ok(()),
        }
    }
}
