//! Placebo permutation inference: RMSPE ratios and exact p-values.
//!
//! The question a placebo study answers is whether the treated unit's
//! post-treatment divergence is unusual, by re-running the chosen estimator
//! with every donor in turn cast as a pseudo-treated unit (the genuinely
//! treated unit never serves as a donor in these runs). Each successful run
//! yields an [`PlaceboEntry`] with its ratio of post- to pre-treatment mean
//! squared prediction error; the exact p-value is the share of entries —
//! treated included — whose ratio is at least the treated unit's.
//!
//! Units whose placebo fit fails (a perfect pre-period fit makes the ratio
//! undefined, a degenerate pool leaves no donors) are recorded with their
//! reason and omitted from both sides of the p-value count, so the
//! denominator is always auditable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit, EstimatorOptions, EstimatorTag, ProblemSpec, ScmFit};
use crate::panel::PanelDataset;
use crate::parallel::*;
use crate::pool::DonorPool;

/// Ratios within this distance of the treated unit's count as "at least as
/// extreme", so the p-value does not depend on platform rounding.
const RATIO_TIE_TOLERANCE: f64 = 1e-12;

/// Pre-period mean squared errors below this make the ratio undefined.
const ZERO_PRE_FIT_TOLERANCE: f64 = 1e-12;

/// One unit's placebo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboEntry {
    pub unit: String,
    pub pre_mspe: f64,
    pub post_mspe: f64,
    pub rmspe_ratio: f64,
    /// Gap series over the study's periods.
    pub gaps: Vec<f64>,
}

/// A unit that could not enter the p-value counts, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedUnit {
    pub unit: String,
    pub reason: String,
}

/// The full permutation study for one outcome and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboStudy {
    pub outcome_key: String,
    pub estimator: EstimatorTag,
    /// Pre ∪ post years shared by every entry's gap series.
    pub periods: Vec<i32>,
    /// Leading entries of each gap series that are pre-treatment.
    pub pre_len: usize,
    /// Successful runs: the treated unit first, then donors in pool order.
    pub entries: Vec<PlaceboEntry>,
    /// Index of the treated unit's entry in `entries`.
    pub treated_entry: usize,
    /// Exact permutation p-value in (0, 1].
    pub p_value: f64,
    pub excluded: Vec<ExcludedUnit>,
}

impl PlaceboStudy {
    pub fn treated(&self) -> &PlaceboEntry {
        &self.entries[self.treated_entry]
    }
}

/// Outcome of testing the sharp null of no effect at a given level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTestRecord {
    pub p_value: f64,
    pub alpha: f64,
    /// True iff `p_value <= alpha` (boundary rejects).
    pub reject: bool,
}

fn mspe(gaps: &[f64]) -> f64 {
    gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64
}

/// Ratio of post- to pre-treatment mean squared prediction error.
///
/// Despite the customary name, no square root is applied: the statistic is a
/// ratio of MSPEs. A pre-period MSPE below 1e-12 is a perfect pre-fit and
/// makes the ratio undefined ([`Error::ZeroPreFit`], with the unit left for
/// the caller to fill in).
pub fn rmspe_ratio(pre_gaps: &[f64], post_gaps: &[f64]) -> Result<f64> {
    if pre_gaps.is_empty() || post_gaps.is_empty() {
        return Err(Error::InvalidSpec {
            message: "rmspe ratio needs non-empty pre and post gap series".to_string(),
        });
    }
    let pre = mspe(pre_gaps);
    if pre < ZERO_PRE_FIT_TOLERANCE {
        return Err(Error::ZeroPreFit {
            unit: String::new(),
            mspe: pre,
        });
    }
    Ok(mspe(post_gaps) / pre)
}

/// [`rmspe_ratio`] for a fitted model, attributing any zero-pre-fit error to
/// the fit's treated unit.
pub fn fit_rmspe_ratio(fit: &ScmFit) -> Result<f64> {
    rmspe_ratio(fit.pre_gaps(), fit.post_gaps()).map_err(|e| match e {
        Error::ZeroPreFit { mspe, .. } => Error::ZeroPreFit {
            unit: fit.treated_id.clone(),
            mspe,
        },
        other => other,
    })
}

/// Exact permutation p-value: the share of `ratios` (treated's own included)
/// at least as large as `treated_ratio`, with ties granted within 1e-12.
pub fn exact_p_value(treated_ratio: f64, ratios: &[f64]) -> f64 {
    let hits = ratios
        .iter()
        .filter(|&&r| r >= treated_ratio - RATIO_TIE_TOLERANCE)
        .count();
    hits as f64 / ratios.len() as f64
}

/// Runs the full placebo permutation study: the configured estimator is fit
/// once with the true treated unit and once per donor cast as
/// pseudo-treated, each against the pool with that unit (and always the true
/// treated unit) removed from the donors.
///
/// The per-unit fits are independent and run in a parallel map; entries come
/// back in member order (treated first, then donors in pool order) whatever
/// the scheduling. Fails with [`Error::InferenceImpossible`] when the
/// treated unit itself cannot be fit or fewer than two units survive.
pub fn run_placebo(
    panel: &PanelDataset,
    pool: &DonorPool,
    spec: &ProblemSpec,
    estimator: EstimatorTag,
    options: &EstimatorOptions,
) -> Result<PlaceboStudy> {
    let members: Vec<String> = pool.members().map(str::to_string).collect();
    let runs: Vec<(String, Result<(ScmFit, f64)>)> = members
        .into_par_iter()
        .map(|unit| {
            let outcome = placebo_fit(panel, pool, spec, estimator, options, &unit);
            (unit, outcome)
        })
        .collect();

    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    let mut treated_failure = None;
    let mut periods: Option<(Vec<i32>, usize)> = None;
    for (unit, outcome) in runs {
        match outcome {
            Ok((fit, ratio)) => {
                if periods.is_none() {
                    periods = Some((fit.periods.clone(), fit.pre_len));
                }
                entries.push(PlaceboEntry {
                    unit,
                    pre_mspe: fit.pre_mspe,
                    post_mspe: fit.post_mspe().unwrap_or(0.0),
                    rmspe_ratio: ratio,
                    gaps: fit.gaps,
                });
            }
            Err(error) => {
                if unit == pool.treated {
                    treated_failure = Some(error.to_string());
                }
                excluded.push(ExcludedUnit {
                    unit,
                    reason: error.to_string(),
                });
            }
        }
    }

    if let Some(reason) = treated_failure {
        return Err(Error::InferenceImpossible {
            reason: format!("the treated unit's own fit failed: {reason}"),
        });
    }
    if entries.len() < 2 {
        return Err(Error::InferenceImpossible {
            reason: format!(
                "only {} unit(s) produced a usable ratio; at least 2 are needed",
                entries.len()
            ),
        });
    }

    let treated_entry = entries
        .iter()
        .position(|e| e.unit == pool.treated)
        .expect("treated success was verified above");
    let ratios: Vec<f64> = entries.iter().map(|e| e.rmspe_ratio).collect();
    let p_value = exact_p_value(ratios[treated_entry], &ratios);
    let (periods, pre_len) = periods.expect("at least one entry succeeded");

    Ok(PlaceboStudy {
        outcome_key: spec.outcome_key.clone(),
        estimator,
        periods,
        pre_len,
        entries,
        treated_entry,
        p_value,
        excluded,
    })
}

fn placebo_fit(
    panel: &PanelDataset,
    pool: &DonorPool,
    spec: &ProblemSpec,
    estimator: EstimatorTag,
    options: &EstimatorOptions,
    unit: &str,
) -> Result<(ScmFit, f64)> {
    let variant = pool.placebo_variant(unit);
    let problem = spec.build(panel, &variant)?;
    let fitted = fit(&problem, estimator, options)?;
    let ratio = fit_rmspe_ratio(&fitted)?;
    Ok((fitted, ratio))
}

/// Tests the sharp null of no treatment effect at level `alpha`
/// (0 < alpha < 1): reject iff the study's p-value is at most alpha, the
/// boundary included.
pub fn test_sharp_null(study: &PlaceboStudy, alpha: f64) -> Result<NullTestRecord> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec {
            message: format!("significance level must lie strictly between 0 and 1, got {alpha}"),
        });
    }
    Ok(NullTestRecord {
        p_value: study.p_value,
        alpha,
        reject: study.p_value <= alpha,
    })
}
