//! The declarative run configuration.
//!
//! A run config is one TOML file describing the whole study: where the data
//! lives, which unit was treated and when, how the donor pool is filtered,
//! which estimator is the main specification, and the inference and analysis
//! knobs. Each subcommand reads the sections it needs and rejects a config
//! missing them, so one annotated file can drive the complete pipeline.
//!
//! Relative paths inside the config resolve against the config file's own
//! directory, so a config can be invoked from anywhere. The raw config bytes
//! are fingerprinted (SHA-256) and the fingerprint is stamped into every
//! output manifest, tying artifacts back to the exact configuration that
//! produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use scm_core::analysis::SdBasisMode;
use scm_core::panel::AttrValue;
use scm_core::simgen::DgpSpec;
use scm_core::{Error, Result};

/// The parsed config plus the fingerprint of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Lowercase hex SHA-256 of the config file's bytes.
    pub fingerprint: String,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

/// Everything a run can declare. Sections a given subcommand does not use
/// may be omitted; unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    pub study: Option<StudySection>,
    pub donor_filter: Option<FilterSection>,
    pub estimator: Option<EstimatorSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Data-generating process for the `simulate` subcommand.
    pub simulate: Option<DgpSpec>,
}

/// Input files and how to read them.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Long-form panel: `unit_id,unit_name,year,<outcomes...>,<covariates...>`.
    pub schools: PathBuf,
    /// Static per-unit attributes (wide, one row per unit).
    pub attributes: Option<PathBuf>,
    /// Mean income by `postcode,year`, joined on each unit's postcode.
    pub income: Option<PathBuf>,
    /// Outcome columns, in reporting order.
    pub outcomes: Vec<String>,
    /// Time-varying covariate columns present in the schools file.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Years dropped at ingestion (never enter the period index).
    #[serde(default)]
    pub exclude_years: Vec<i32>,
}

/// Which unit was treated and when.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub treated: String,
    pub treatment_year: i32,
}

/// Donor-pool predicates over static attributes.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Attribute must be present and exactly equal.
    #[serde(default)]
    pub equal: BTreeMap<String, FilterValue>,
    /// Attribute must be numeric and inside the inclusive range.
    #[serde(default)]
    pub range: Vec<RangeSection>,
}

/// A literal an equality predicate compares against.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FilterValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl FilterValue {
    pub fn to_attr(&self) -> AttrValue {
        match self {
            FilterValue::Bool(b) => AttrValue::Bool(*b),
            FilterValue::Int(i) => AttrValue::Real(*i as f64),
            FilterValue::Float(x) => AttrValue::Real(*x),
            FilterValue::Text(s) => AttrValue::Text(s.clone()),
        }
    }
}

/// One inclusive numeric range predicate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSection {
    pub key: String,
    pub min: f64,
    pub max: f64,
}

/// The main specification: estimator, matching covariates, hyperparameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// One of `abadie_nested`, `abadie_nocov`, `ferman_demeaned`,
    /// `hsiao_ols`, `chern_l1`.
    pub name: String,
    /// Covariates the nested estimator balances (panel columns, attribute
    /// names, or derived pool features such as `radial_distance_km`).
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Donor-count cap for the OLS estimator (default `T0 - 2`).
    pub hsiao_max_regressors: Option<usize>,
    /// l1-ball radius for the constrained-regression estimator.
    pub chern_l1_bound: Option<f64>,
}

/// Optimizer overrides; anything unset keeps the library default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: Option<usize>,
    pub objective_tolerance: Option<f64>,
    pub power_iterations: Option<usize>,
    pub support_tolerance: Option<f64>,
    pub v_search_budget: Option<usize>,
    pub rank_tolerance: Option<f64>,
}

/// Placebo-study knobs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    /// Estimator refit for every placebo unit; defaults to the main
    /// specification's estimator.
    pub estimator: Option<String>,
    /// Significance level for the sharp-null test (default 0.1).
    pub alpha: Option<f64>,
}

/// Effect-summary and robustness knobs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Which spread converts point effects to s.d. units
    /// (`donor_pool_pre`, `donor_pool_all`, or `treated_pre`).
    pub sd_basis: Option<SdBasisMode>,
    /// How many top-weight donors the leave-one-out study excludes in turn
    /// (default 8).
    pub loo_k: Option<usize>,
    /// Units ranked in the percentile table; defaults to the treated unit
    /// plus the donors shown in the weights table.
    pub percentile_units: Option<Vec<String>>,
}

/// Where outputs land and the simulation seed, both flag-overridable.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn config_error(path: &Path, message: String) -> Error {
    Error::InvalidSpec {
        message: format!("{}: {message}", path.display()),
    }
}

impl LoadedConfig {
    /// Reads, fingerprints, and parses a config file.
    pub fn read(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| config_error(path, format!("cannot read config: {e}")))?;
        let fingerprint = format!("{:x}", Sha256::digest(&bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| config_error(path, "config is not valid UTF-8".to_string()))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(path, e.to_string()))?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig {
            config,
            fingerprint,
            base_dir,
        })
    }

    /// Resolves a config-relative path against the config's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

fn missing(section: &str, command_hint: &str) -> Error {
    Error::InvalidSpec {
        message: format!("config has no [{section}] section, required {command_hint}"),
    }
}

impl RunConfig {
    pub fn data(&self) -> Result<&DataSection> {
        self.data
            .as_ref()
            .ok_or_else(|| missing("data", "to locate the panel files"))
    }

    pub fn study(&self) -> Result<&StudySection> {
        self.study
            .as_ref()
            .ok_or_else(|| missing("study", "to name the treated unit and treatment year"))
    }

    pub fn estimator(&self) -> Result<&EstimatorSection> {
        self.estimator
            .as_ref()
            .ok_or_else(|| missing("estimator", "to choose the main specification"))
    }

    pub fn simulate(&self) -> Result<&DgpSpec> {
        self.simulate
            .as_ref()
            .ok_or_else(|| missing("simulate", "to describe the data-generating process"))
    }
}
