//! Run configuration: one TOML file per run. Unknown keys are rejected at
//! every level, and the resolved form is written next to each run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boost::TrainConfig;
use crate::data::{PlausibilityRule, Schema};
use crate::error::{Error, Result};
use crate::logreg::LogregConfig;
use crate::metrics::Binning;
use crate::robustness::XScaling;
use crate::splits::{GroupInfo, SplitConfig};
use crate::synth::SyntheticSpec;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training (or only) dataset.
    pub data: Option<PathBuf>,
    /// Held-out dataset for `evaluate`.
    pub test_data: Option<PathBuf>,
    /// Schema file; `[schema]` inline takes precedence.
    pub schema: Option<PathBuf>,
    /// Additive model document for `evaluate` and `explain`.
    pub model: Option<PathBuf>,
    /// Logistic baseline document evaluated beside the additive model.
    pub baseline: Option<PathBuf>,
    /// Group roster CSV (`id,level[,n_samples]`) for `splits`.
    pub groups: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            test_data: None,
            schema: None,
            model: None,
            baseline: None,
            groups: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSettings {
    pub resamples: usize,
    pub alpha: f64,
    pub calibration_bins: usize,
    pub binning: Binning,
    /// Bins with fewer rows are left out of the reported maximum gap.
    pub min_bin_count: usize,
    pub seed: u64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            resamples: 1000,
            alpha: 0.05,
            calibration_bins: 10,
            binning: Binning::UniformWidth,
            min_bin_count: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    /// Fit the logistic baseline during `train`.
    pub enabled: bool,
    /// Reference level per categorical column.
    pub reference: std::collections::BTreeMap<String, i64>,
    #[serde(flatten)]
    pub fit: LogregConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            reference: Default::default(),
            fit: LogregConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub sizes: Vec<usize>,
    /// Empty means every continuous feature.
    pub features: Vec<String>,
    pub seeds: Vec<u64>,
    pub scaling: XScaling,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000, 10_000, 25_000, 50_000],
            features: Vec::new(),
            seeds: vec![0],
            scaling: XScaling::UnitInterval,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    #[serde(flatten)]
    pub search: SplitConfig,
    /// Inline roster; alternative to `paths.groups`.
    pub groups: Vec<GroupInfo>,
    /// Write train/test CSVs for this many leading plans when data is given.
    pub materialize: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    /// Full generator description; the built-in standard layout otherwise.
    pub spec: Option<SyntheticSpec>,
    pub n_rows: usize,
    pub seed: u64,
    /// Rows of an independent held-out file; 0 writes none.
    pub holdout_rows: usize,
    /// Drop the interaction term from the generator.
    pub no_interaction: bool,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            spec: None,
            n_rows: 50_000,
            seed: 0,
            holdout_rows: 0,
            no_interaction: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSettings {
    /// Row indices to break down; empty means the first `max_rows`.
    pub rows: Vec<usize>,
    pub max_rows: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            max_rows: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every section's own seed.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub schema: Option<Schema>,
    pub filters: Vec<PlausibilityRule>,
    pub train: TrainConfig,
    pub metrics: MetricsSettings,
    pub baseline: BaselineSettings,
    pub sweep: SweepSettings,
    pub splits: SplitSettings,
    pub synth: SynthSettings,
    pub explain: ExplainSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        cfg.resolve();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Pushes the global seed into every section.
    fn resolve(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.metrics.seed = seed;
            self.splits.search.seed = seed;
            self.synth.seed = seed;
            if let Some(spec) = self.synth.spec.as_mut() {
                spec.seed = seed;
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(one_line(&e.to_string())))
    }

    /// Schema from `[schema]`, else from `paths.schema`.
    pub fn schema(&self) -> Result<Schema> {
        if let Some(s) = &self.schema {
            return Ok(s.clone());
        }
        let path = self
            .paths
            .schema
            .as_ref()
            .ok_or_else(|| Error::Config("no schema: set [schema] or paths.schema".into()))?;
        load_schema(path)
    }
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema: Schema = toml::from_str(&text).map_err(|e| Error::Schema(one_line(&e.to_string())))?;
    schema.validate()?;
    Ok(schema)
}

/// TOML errors span several lines with a source excerpt; diagnostics are
/// one line.
fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
