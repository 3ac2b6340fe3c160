//! Turning a parsed config into a ready-to-run study.
//!
//! [`load_study`] performs every ingestion and validation step shared by the
//! estimation commands: read the panel and its companions, join income,
//! build the donor pool, and materialize one [`ProblemSpec`] per configured
//! outcome. Anything wrong with the configuration — a missing file, an
//! unknown column, a filter that empties the pool — surfaces here, before
//! any fitting starts.

use scm_core::analysis::SdBasisMode;
use scm_core::estimators::{EstimatorOptions, EstimatorTag, ProblemSpec};
use scm_core::panel::{join_income, load_income, load_panel, IngestConfig, PanelDataset};
use scm_core::pool::{build_pool, DonorFilterSpec, DonorPool, RangePredicate};
use scm_core::solver::SolverSettings;
use scm_core::{Error, Result};

use crate::config::LoadedConfig;

/// A validated study: the data, the pool, and the per-outcome problem specs,
/// plus every knob the commands read.
#[derive(Debug, Clone)]
pub struct Study {
    pub panel: PanelDataset,
    pub pool: DonorPool,
    /// Outcome keys in reporting order; `specs` runs parallel to this.
    pub outcomes: Vec<String>,
    pub specs: Vec<ProblemSpec>,
    pub treatment_year: i32,
    pub estimator: EstimatorTag,
    pub placebo_estimator: EstimatorTag,
    pub options: EstimatorOptions,
    pub alpha: f64,
    pub sd_mode: SdBasisMode,
    pub loo_k: usize,
    pub percentile_units: Option<Vec<String>>,
}

fn solver_settings(loaded: &LoadedConfig) -> SolverSettings {
    let section = &loaded.config.solver;
    let mut settings = SolverSettings::default();
    if let Some(x) = section.max_iterations {
        settings.max_iterations = x;
    }
    if let Some(x) = section.objective_tolerance {
        settings.objective_tolerance = x;
    }
    if let Some(x) = section.power_iterations {
        settings.power_iterations = x;
    }
    if let Some(x) = section.support_tolerance {
        settings.support_tolerance = x;
    }
    if let Some(x) = section.v_search_budget {
        settings.v_search_budget = x;
    }
    if let Some(x) = section.rank_tolerance {
        settings.rank_tolerance = x;
    }
    settings
}

/// Loads and validates everything the estimation commands share.
pub fn load_study(loaded: &LoadedConfig) -> Result<Study> {
    let config = &loaded.config;
    let data = config.data()?;
    let study = config.study()?;
    let estimator_section = config.estimator()?;

    if data.outcomes.is_empty() {
        return Err(Error::InvalidSpec {
            message: "[data] lists no outcomes".to_string(),
        });
    }

    let ingest = IngestConfig {
        outcome_keys: data.outcomes.clone(),
        covariate_keys: data.covariates.clone(),
        attributes_path: data.attributes.as_deref().map(|p| loaded.resolve(p)),
        exclude_years: data.exclude_years.clone(),
    };
    let mut panel = load_panel(&loaded.resolve(&data.schools), &ingest)?;
    if let Some(income) = &data.income {
        let table = load_income(&loaded.resolve(income))?;
        panel = join_income(&panel, &table);
    }

    let filter = config.donor_filter.clone().unwrap_or_default();
    let filter_spec = DonorFilterSpec {
        treated_id: study.treated.clone(),
        equality: filter
            .equal
            .iter()
            .map(|(k, v)| (k.clone(), v.to_attr()))
            .collect(),
        ranges: filter
            .range
            .iter()
            .map(|r| RangePredicate {
                key: r.key.clone(),
                min: r.min,
                max: r.max,
            })
            .collect(),
    };
    let pool = build_pool(&panel, &filter_spec)?;

    let estimator: EstimatorTag = estimator_section.name.parse()?;
    let placebo_estimator = match &config.inference.estimator {
        Some(name) => name.parse()?,
        None => estimator,
    };
    let mut options = EstimatorOptions {
        hsiao_max_regressors: estimator_section.hsiao_max_regressors,
        ..EstimatorOptions::default()
    };
    if let Some(bound) = estimator_section.chern_l1_bound {
        options.chern_l1_bound = bound;
    }

    let settings = solver_settings(loaded);
    let specs = data
        .outcomes
        .iter()
        .map(|key| ProblemSpec {
            outcome_key: key.clone(),
            treatment_year: study.treatment_year,
            covariate_keys: estimator_section.covariates.clone(),
            settings: settings.clone(),
        })
        .collect();

    Ok(Study {
        panel,
        pool,
        outcomes: data.outcomes.clone(),
        specs,
        treatment_year: study.treatment_year,
        estimator,
        placebo_estimator,
        options,
        alpha: config.inference.alpha.unwrap_or(0.1),
        sd_mode: config.analysis.sd_basis.unwrap_or_default(),
        loo_k: config.analysis.loo_k.unwrap_or(8),
        percentile_units: config.analysis.percentile_units.clone(),
    })
}
