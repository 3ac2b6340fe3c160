//! Effect summaries and robustness drivers.
//!
//! Everything downstream of a fitted synthetic control lives here:
//!
//! * [`summarize_effect`] — the average treatment effect on the treated over
//!   a year window, in outcome points and in standard-deviation units
//!   against a configurable, always-echoed dispersion basis.
//! * [`default_windows`] — the two canonical windows: everything from the
//!   treatment year on, and everything from three years after it.
//! * [`leave_one_out`] — drop each of the top-weighted donors in turn and
//!   refit, aggregating how much the effect moves.
//! * [`sensitivity_sweep`] — every non-nested estimator on every outcome,
//!   failures recorded per cell rather than aborting the sweep.
//! * [`percentile_table`] — integer percentile ranks of unit means before
//!   and after a split year, against the donor-pool population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit, EstimatorOptions, EstimatorTag, ProblemSpec, ScmFit, ScmProblem};
use crate::panel::{PanelDataset, PeriodWindow};
use crate::parallel::*;
use crate::pool::DonorPool;

/// Which dispersion the point effect is divided by to express it in
/// standard-deviation units. The basis is always echoed in the summary, so
/// readers never have to guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SdBasisMode {
    /// Sample standard deviation of donor unit-year outcomes over the
    /// pre-treatment periods (the default).
    #[serde(rename = "donor_pool_pre")]
    #[default]
    DonorPoolPre,
    /// Sample standard deviation of donor unit-year outcomes over all
    /// periods.
    #[serde(rename = "donor_pool_all")]
    DonorPoolAll,
    /// Sample standard deviation of the treated unit's own pre-treatment
    /// outcomes.
    #[serde(rename = "treated_pre")]
    TreatedPre,
}

impl SdBasisMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdBasisMode::DonorPoolPre => "donor_pool_pre",
            SdBasisMode::DonorPoolAll => "donor_pool_all",
            SdBasisMode::TreatedPre => "treated_pre",
        }
    }
}

/// The average effect over a window, in points and standard-deviation units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub outcome_key: String,
    pub window: PeriodWindow,
    /// Mean gap over the window years present in the index.
    pub att_points: f64,
    /// `att_points / sd_basis`.
    pub att_sd_units: f64,
    /// The divisor actually used.
    pub sd_basis: f64,
    pub sd_basis_mode: SdBasisMode,
    /// The (year, gap) pairs the mean was taken over.
    pub per_year_gaps: Vec<(i32, f64)>,
}

/// The two canonical summary windows derived from a treatment year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultWindows {
    /// All index years at or after the treatment year.
    pub full_post: PeriodWindow,
    /// All index years at or after treatment + 3.
    pub strict_3yr: PeriodWindow,
    /// True when no index year falls in the strict window.
    pub strict_3yr_empty: bool,
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// The dispersion divisor for a problem under the given mode.
fn sd_basis(problem: &ScmProblem, mode: SdBasisMode) -> f64 {
    match mode {
        SdBasisMode::DonorPoolPre => {
            let donors = problem.donor_pre();
            sample_sd(donors.as_slice())
        }
        SdBasisMode::DonorPoolAll => {
            let donors = problem.donor_outcomes();
            sample_sd(donors.as_slice())
        }
        SdBasisMode::TreatedPre => sample_sd(problem.treated_pre().as_slice()),
    }
}

/// Summarizes the average effect over `window`, which must start at or after
/// the treatment year; the mean runs over the window years actually present
/// in the index (an index gap inside the window is simply skipped).
pub fn summarize_effect(
    problem: &ScmProblem,
    fit: &ScmFit,
    window: PeriodWindow,
    mode: SdBasisMode,
) -> Result<EffectSummary> {
    if window.start < problem.treatment_year {
        return Err(Error::InvalidSpec {
            message: format!(
                "effect window starts {} but the post-treatment era starts {}",
                window.start, problem.treatment_year
            ),
        });
    }
    let per_year_gaps: Vec<(i32, f64)> = fit
        .periods
        .iter()
        .zip(fit.gaps.iter())
        .filter(|(&year, _)| window.contains(year))
        .map(|(&year, &gap)| (year, gap))
        .collect();
    if per_year_gaps.is_empty() {
        return Err(Error::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    let att_points = per_year_gaps.iter().map(|(_, g)| g).sum::<f64>() / per_year_gaps.len() as f64;
    let basis = sd_basis(problem, mode);
    if basis < 1e-12 {
        return Err(Error::InvalidSpec {
            message: format!(
                "standard-deviation basis {} is degenerate ({basis:e})",
                mode.as_str()
            ),
        });
    }
    Ok(EffectSummary {
        outcome_key: problem.outcome_key.clone(),
        window,
        att_points,
        att_sd_units: att_points / basis,
        sd_basis: basis,
        sd_basis_mode: mode,
        per_year_gaps,
    })
}

/// The full-post and strict three-year windows for a treatment year over a
/// period index.
pub fn default_windows(treatment_year: i32, periods: &[i32]) -> DefaultWindows {
    let last = periods.iter().copied().max().unwrap_or(treatment_year);
    let strict_start = treatment_year + 3;
    DefaultWindows {
        full_post: PeriodWindow::new(treatment_year, last),
        strict_3yr: PeriodWindow::new(strict_start, last),
        strict_3yr_empty: !periods.iter().any(|&y| y >= strict_start),
    }
}

/// One leave-one-out refit: the donor excluded and the per-outcome effect
/// summaries of the refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRun {
    pub excluded_donor: String,
    /// One summary per configured outcome, in configuration order.
    pub summaries: Vec<EffectSummary>,
}

/// Distribution of the point effect across the leave-one-out runs for one
/// outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooAggregate {
    pub outcome_key: String,
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// The leave-one-out study: which donors were dropped, what each refit
/// found, and the cross-run aggregate per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooStudy {
    /// The excluded donors, highest baseline weight first.
    pub ranked_donors: Vec<String>,
    /// Effect window the summaries use.
    pub window: PeriodWindow,
    pub runs: Vec<LooRun>,
    pub aggregates: Vec<LooAggregate>,
}

/// Refits `baseline`'s estimator with one donor removed from the pool.
///
/// A donor whose baseline weight is exactly zero cannot change the solution,
/// so the baseline fit is returned as-is (minus the donor's weight entry,
/// with a `reused_baseline` diagnostic) — bit-for-bit, immune to refit
/// round-off.
pub fn refit_without_donor(
    panel: &PanelDataset,
    pool: &DonorPool,
    spec: &ProblemSpec,
    options: &EstimatorOptions,
    donor: &str,
    baseline: &ScmFit,
) -> Result<ScmFit> {
    let index = pool
        .donors
        .iter()
        .position(|d| d == donor)
        .ok_or_else(|| Error::UnknownUnit {
            id: donor.to_string(),
        })?;
    if baseline.weights.values[index] == 0.0 {
        let mut reused = baseline.clone();
        reused.weights.values.remove(index);
        reused
            .diagnostics
            .insert("reused_baseline".to_string(), serde_json::json!(true));
        return Ok(reused);
    }
    let variant = pool.without_donor(donor);
    if variant.donors.is_empty() {
        return Err(Error::NoDonors);
    }
    let problem = spec.build(panel, &variant)?;
    fit(&problem, baseline.estimator, options)
}

/// Leave-one-out robustness of the nested estimator: fits each configured
/// outcome once for baseline, ranks donors by their weight in the first
/// outcome's fit, then refits every outcome with each of the top `k` donors
/// removed. Summaries are taken over the strict three-year window of each
/// outcome's treatment year.
///
/// `k` may not exceed the number of donors with strictly positive baseline
/// weight ([`Error::TooFewActiveDonors`]).
pub fn leave_one_out(
    panel: &PanelDataset,
    pool: &DonorPool,
    specs: &[ProblemSpec],
    options: &EstimatorOptions,
    k: usize,
    mode: SdBasisMode,
) -> Result<LooStudy> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec {
            message: "leave-one-out needs at least one outcome spec".to_string(),
        });
    }
    let baselines: Vec<ScmFit> = specs
        .iter()
        .map(|spec| {
            let problem = spec.build(panel, pool)?;
            fit(&problem, EstimatorTag::AbadieNested, options)
        })
        .collect::<Result<_>>()?;

    // Donor ranking is anchored on the first configured outcome's weights.
    let anchor = &baselines[0].weights.values;
    let positive = anchor.iter().filter(|&&w| w > 0.0).count();
    if k > positive {
        return Err(Error::TooFewActiveDonors {
            requested: k,
            available: positive,
        });
    }
    let mut order: Vec<usize> = (0..anchor.len()).collect();
    order.sort_by(|&a, &b| {
        anchor[b]
            .partial_cmp(&anchor[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let ranked_donors: Vec<String> = order[..k].iter().map(|&i| pool.donors[i].clone()).collect();

    let window = default_windows(specs[0].treatment_year, &panel.periods).strict_3yr;

    let cells: Vec<(usize, usize)> = (0..ranked_donors.len())
        .flat_map(|d| (0..specs.len()).map(move |s| (d, s)))
        .collect();
    let refits: Vec<Result<EffectSummary>> = cells
        .into_par_iter()
        .map(|(d, s)| {
            let refit = refit_without_donor(
                panel,
                pool,
                &specs[s],
                options,
                &ranked_donors[d],
                &baselines[s],
            )?;
            let variant = pool.without_donor(&ranked_donors[d]);
            let problem = specs[s].build(panel, &variant)?;
            summarize_effect(&problem, &refit, window, mode)
        })
        .collect();

    let mut runs = Vec::with_capacity(ranked_donors.len());
    let mut refits = refits.into_iter();
    for donor in &ranked_donors {
        let mut summaries = Vec::with_capacity(specs.len());
        for _ in specs {
            summaries.push(refits.next().expect("one refit per cell")?);
        }
        runs.push(LooRun {
            excluded_donor: donor.clone(),
            summaries,
        });
    }

    let aggregates = specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let points: Vec<f64> = runs.iter().map(|r| r.summaries[s].att_points).collect();
            let mean = points.iter().sum::<f64>() / points.len() as f64;
            LooAggregate {
                outcome_key: spec.outcome_key.clone(),
                mean,
                sd: sample_sd(&points),
                min: points.iter().copied().fold(f64::INFINITY, f64::min),
                max: points.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    Ok(LooStudy {
        ranked_donors,
        window,
        runs,
        aggregates,
    })
}

/// One estimator × outcome cell of the sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub estimator: EstimatorTag,
    pub outcome_key: String,
    /// The fit, when it succeeded.
    pub fit: Option<ScmFit>,
    /// Full-post and strict-window summaries that could be computed.
    pub summaries: Vec<EffectSummary>,
    /// The failure, when it did not.
    pub error: Option<String>,
}

/// Every non-nested estimator run on every configured outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStudy {
    pub cells: Vec<SweepCell>,
}

/// The estimators the sweep covers (the nested estimator is the main
/// specification, reported elsewhere).
pub const SWEEP_ESTIMATORS: [EstimatorTag; 4] = [
    EstimatorTag::AbadieNoCov,
    EstimatorTag::FermanDemeaned,
    EstimatorTag::HsiaoOls,
    EstimatorTag::ChernL1,
];

/// Runs the sensitivity sweep: estimator-major over [`SWEEP_ESTIMATORS`],
/// outcome-minor over `specs`. A failing cell records its error and the
/// sweep continues.
pub fn sensitivity_sweep(
    panel: &PanelDataset,
    pool: &DonorPool,
    specs: &[ProblemSpec],
    options: &EstimatorOptions,
    mode: SdBasisMode,
) -> SweepStudy {
    let cells: Vec<(EstimatorTag, usize)> = SWEEP_ESTIMATORS
        .iter()
        .flat_map(|&e| (0..specs.len()).map(move |s| (e, s)))
        .collect();
    let cells: Vec<SweepCell> = cells
        .into_par_iter()
        .map(|(estimator, s)| {
            let spec = &specs[s];
            let attempt = (|| -> Result<(ScmFit, Vec<EffectSummary>)> {
                let problem = spec.build(panel, pool)?;
                let fitted = fit(&problem, estimator, options)?;
                let windows = default_windows(spec.treatment_year, &panel.periods);
                let mut summaries = Vec::new();
                for window in [windows.full_post, windows.strict_3yr] {
                    if let Ok(summary) = summarize_effect(&problem, &fitted, window, mode) {
                        summaries.push(summary);
                    }
                }
                Ok((fitted, summaries))
            })();
            match attempt {
                Ok((fitted, summaries)) => SweepCell {
                    estimator,
                    outcome_key: spec.outcome_key.clone(),
                    fit: Some(fitted),
                    summaries,
                    error: None,
                },
                Err(e) => SweepCell {
                    estimator,
                    outcome_key: spec.outcome_key.clone(),
                    fit: None,
                    summaries: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    SweepStudy { cells }
}

/// One row of the percentile table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub unit: String,
    pub outcome_key: String,
    pub pre_percentile: i32,
    pub post_percentile: i32,
    /// `post_percentile - pre_percentile`.
    pub difference: i32,
}

/// Percentile ranks of window means against the donor-pool population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub split_year: i32,
    /// Number of units ranked against.
    pub population: usize,
    pub rows: Vec<PercentileRow>,
}

/// Integer percentile of `target` among `values`: its maximum rank (ties
/// share the highest position) over the count, scaled to 100 and rounded to
/// the nearest integer. The top value is always 100.
fn ceiling_percentile(values: &[f64], target: f64) -> i32 {
    let rank = values.iter().filter(|&&v| v <= target).count();
    ((rank as f64 / values.len() as f64) * 100.0).round() as i32
}

/// Builds the percentile table: for every requested unit and outcome key,
/// the unit's mean outcome over the years before `split_year` and from it
/// onward is ranked among the pool members' means (a requested unit outside
/// the pool is ranked against the pool plus itself).
pub fn percentile_table(
    panel: &PanelDataset,
    pool: &DonorPool,
    units: &[String],
    outcome_keys: &[String],
    split_year: i32,
) -> Result<PercentileTable> {
    if panel.period_index(split_year).is_none() {
        return Err(Error::InvalidSpec {
            message: format!("split year {split_year} is not in the period index"),
        });
    }
    let first = panel.periods[0];
    let last = *panel.periods.last().expect("panel periods are non-empty");
    let pre_window = PeriodWindow::new(first, split_year - 1);
    let post_window = PeriodWindow::new(split_year, last);

    let window_mean = |grid: &crate::panel::ValueGrid,
                       u: usize,
                       unit: &str,
                       key: &str,
                       window: PeriodWindow|
     -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (p, &year) in panel.periods.iter().enumerate() {
            if window.contains(year) {
                if let Some(x) = grid.get(u, p) {
                    sum += x;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::AllMissing {
                unit: unit.to_string(),
                key: key.to_string(),
                start: window.start,
                end: window.end,
            });
        }
        Ok(sum / n as f64)
    };

    let members: Vec<String> = pool.members().map(str::to_string).collect();
    let mut rows = Vec::with_capacity(units.len() * outcome_keys.len());
    for unit in units {
        let u = panel.require_unit(unit)?;
        for key in outcome_keys {
            let grid = panel.outcome(key)?;
            let mut pre_values = Vec::with_capacity(members.len());
            let mut post_values = Vec::with_capacity(members.len());
            for member in &members {
                let m = panel.require_unit(member)?;
                pre_values.push(window_mean(grid, m, member, key, pre_window)?);
                post_values.push(window_mean(grid, m, member, key, post_window)?);
            }
            let pre_target = window_mean(grid, u, unit, key, pre_window)?;
            let post_target = window_mean(grid, u, unit, key, post_window)?;
            if !members.iter().any(|m| m == unit) {
                pre_values.push(pre_target);
                post_values.push(post_target);
            }
            let pre_percentile = ceiling_percentile(&pre_values, pre_target);
            let post_percentile = ceiling_percentile(&post_values, post_target);
            rows.push(PercentileRow {
                unit: unit.clone(),
                outcome_key: key.clone(),
                pre_percentile,
                post_percentile,
                difference: post_percentile - pre_percentile,
            });
        }
    }
    Ok(PercentileTable {
        split_year,
        population: members.len(),
        rows,
    })
}
