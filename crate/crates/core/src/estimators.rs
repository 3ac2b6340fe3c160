//! Estimation problems and the five synthetic-control estimator variants.
//!
//! An [`ScmProblem`] freezes everything a fit needs — the donor pool, the
//! outcome series split into pre- and post-treatment periods, covariates
//! collapsed over the pre-period window — so the estimators themselves are
//! pure functions from problem to [`ScmFit`]. The variants are:
//!
//! * [`fit_abadie_nested`] — the canonical nested estimator: an outer
//!   derivative-free search over diagonal covariate importances, each
//!   candidate scored by the pre-period outcome fit of its inner
//!   simplex-constrained covariate match.
//! * [`fit_abadie_nocov`] — simplex weights fit directly on pre-period
//!   outcomes, no covariates.
//! * [`fit_ferman`] — the same simplex fit on data demeaned by each unit's
//!   own pre-period mean, restoring the treated level in the counterfactual.
//! * [`fit_hsiao`] — ordinary least squares with an intercept on a donor
//!   subset, weights unconstrained in sign and sum.
//! * [`fit_chern`] — least squares with the weight vector constrained to an
//!   l1 ball, no intercept.
//!
//! Every fit reports observed, counterfactual, and gap series over exactly
//! the pre ∪ post periods, the attained weights, and a diagnostics map with
//! estimator-specific detail (importance-search trace, donor selection,
//! covariate balance).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::panel::{collapse_covariate, PanelDataset, PeriodWindow};
use crate::parallel::*;
use crate::pool::DonorPool;
use crate::solver::{
    solve_l1_ball_ls, solve_ols, solve_simplex_wls, DiagonalImportance, SolverSettings,
    WeightVector,
};

/// The estimator variants, as they appear in configs, reports, and
/// diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "abadie_nested")]
    AbadieNested,
    #[serde(rename = "abadie_nocov")]
    AbadieNoCov,
    #[serde(rename = "ferman_demeaned")]
    FermanDemeaned,
    #[serde(rename = "hsiao_ols")]
    HsiaoOls,
    #[serde(rename = "chern_l1")]
    ChernL1,
}

impl EstimatorTag {
    /// All variants, in canonical order.
    pub const ALL: [EstimatorTag; 5] = [
        EstimatorTag::AbadieNested,
        EstimatorTag::AbadieNoCov,
        EstimatorTag::FermanDemeaned,
        EstimatorTag::HsiaoOls,
        EstimatorTag::ChernL1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorTag::AbadieNested => "abadie_nested",
            EstimatorTag::AbadieNoCov => "abadie_nocov",
            EstimatorTag::FermanDemeaned => "ferman_demeaned",
            EstimatorTag::HsiaoOls => "hsiao_ols",
            EstimatorTag::ChernL1 => "chern_l1",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorTag::ALL
            .iter()
            .find(|tag| tag.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidSpec {
                message: format!(
                    "unknown estimator {s:?}; expected one of abadie_nested, abadie_nocov, \
                     ferman_demeaned, hsiao_ols, chern_l1"
                ),
            })
    }
}

/// Hyperparameters for the estimators that take any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    /// Donor-count cap for the OLS estimator; `None` means `T0 - 2` where
    /// `T0` is the number of pre-periods.
    pub hsiao_max_regressors: Option<usize>,
    /// l1-ball radius for the constrained-regression estimator.
    pub chern_l1_bound: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            hsiao_max_regressors: None,
            chern_l1_bound: 1.0,
        }
    }
}

/// The reusable recipe for building estimation problems: everything
/// [`build_problem`] needs except the panel and pool themselves. Placebo and
/// leave-one-out drivers apply one spec across many pool variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub outcome_key: String,
    pub treatment_year: i32,
    #[serde(default)]
    pub covariate_keys: Vec<String>,
    #[serde(default)]
    pub settings: SolverSettings,
}

impl ProblemSpec {
    pub fn build(&self, panel: &PanelDataset, pool: &DonorPool) -> Result<ScmProblem> {
        build_problem(
            panel,
            pool,
            &self.outcome_key,
            self.treatment_year,
            &self.covariate_keys,
            self.settings.clone(),
        )
    }
}

/// A frozen estimation problem: the data every estimator variant consumes.
///
/// Outcome data is validated dense over the pre ∪ post periods for the
/// treated unit and every donor at construction, so fits cannot encounter
/// missing cells. Covariates are collapsed to one value per member over the
/// pre-period window and stored raw; standardization happens inside the
/// nested estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmProblem {
    pub pool: DonorPool,
    pub outcome_key: String,
    pub treatment_year: i32,
    /// Index years strictly before the treatment year, ascending.
    pub pre_periods: Vec<i32>,
    /// Index years at or after the treatment year, ascending.
    pub post_periods: Vec<i32>,
    pub covariate_keys: Vec<String>,
    pub settings: SolverSettings,
    /// Outcome values, row per period (pre rows first, then post), column
    /// per member (treated first, then donors in pool order).
    outcomes: DMatrix<f64>,
    /// Collapsed covariate values, row per covariate key, column per member.
    covariates: DMatrix<f64>,
}

impl ScmProblem {
    pub fn n_pre(&self) -> usize {
        self.pre_periods.len()
    }

    pub fn n_post(&self) -> usize {
        self.post_periods.len()
    }

    pub fn n_donors(&self) -> usize {
        self.pool.donors.len()
    }

    /// Pre ∪ post years in series order.
    pub fn periods(&self) -> Vec<i32> {
        self.pre_periods
            .iter()
            .chain(self.post_periods.iter())
            .copied()
            .collect()
    }

    /// Treated outcome series over all periods.
    pub fn treated_outcomes(&self) -> DVector<f64> {
        self.outcomes.column(0).into_owned()
    }

    /// Treated pre-period outcomes.
    pub fn treated_pre(&self) -> DVector<f64> {
        self.outcomes.column(0).rows(0, self.n_pre()).into_owned()
    }

    /// Donor outcomes over all periods, column per donor.
    pub fn donor_outcomes(&self) -> DMatrix<f64> {
        self.outcomes.columns(1, self.n_donors()).into_owned()
    }

    /// Donor pre-period outcomes, column per donor.
    pub fn donor_pre(&self) -> DMatrix<f64> {
        self.outcomes
            .view((0, 1), (self.n_pre(), self.n_donors()))
            .into_owned()
    }

    /// Raw collapsed covariate value for a member column (0 = treated).
    fn covariate(&self, key_index: usize, member: usize) -> f64 {
        self.covariates[(key_index, member)]
    }
}

/// A fitted synthetic control: series over pre ∪ post periods plus the
/// parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmFit {
    pub estimator: EstimatorTag,
    /// Unit the counterfactual was built for.
    pub treated_id: String,
    /// Pre ∪ post years, in series order.
    pub periods: Vec<i32>,
    /// How many leading entries of the series are pre-treatment.
    pub pre_len: usize,
    pub observed: Vec<f64>,
    pub counterfactual: Vec<f64>,
    /// `observed - counterfactual`, elementwise.
    pub gaps: Vec<f64>,
    /// Donor weights, in pool order (zeros for unselected donors).
    pub weights: WeightVector,
    /// Covariate importances, for the nested estimator.
    pub importances: Option<DiagonalImportance>,
    /// Fitted intercept, for estimators that have one.
    pub intercept: Option<f64>,
    /// Mean squared pre-period gap.
    pub pre_mspe: f64,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl ScmFit {
    pub fn pre_gaps(&self) -> &[f64] {
        &self.gaps[..self.pre_len]
    }

    pub fn post_gaps(&self) -> &[f64] {
        &self.gaps[self.pre_len..]
    }

    /// Mean squared post-period gap; `None` when there are no post periods.
    pub fn post_mspe(&self) -> Option<f64> {
        let post = self.post_gaps();
        if post.is_empty() {
            return None;
        }
        Some(post.iter().map(|g| g * g).sum::<f64>() / post.len() as f64)
    }
}

/// Assembles an [`ScmProblem`] from a panel and donor pool.
///
/// The period index is split at `treatment_year` (years before it are pre,
/// years at or after it are post); outcome data must be dense on both ranges
/// for the treated unit and every donor. `covariate_keys` resolve in order
/// against panel covariates collapsed over the pre window, numeric static
/// attributes, and finally pool features such as the radial distance.
pub fn build_problem(
    panel: &PanelDataset,
    pool: &DonorPool,
    outcome_key: &str,
    treatment_year: i32,
    covariate_keys: &[String],
    settings: SolverSettings,
) -> Result<ScmProblem> {
    let grid = panel.outcome(outcome_key)?;
    let pre_periods: Vec<i32> = panel
        .periods
        .iter()
        .copied()
        .filter(|&y| y < treatment_year)
        .collect();
    let post_periods: Vec<i32> = panel
        .periods
        .iter()
        .copied()
        .filter(|&y| y >= treatment_year)
        .collect();
    if pre_periods.is_empty() {
        return Err(Error::EmptyPrePeriod { treatment_year });
    }

    let members: Vec<String> = pool.members().map(str::to_string).collect();
    let n_periods = pre_periods.len() + post_periods.len();
    let mut outcomes = DMatrix::zeros(n_periods, members.len());
    for (c, id) in members.iter().enumerate() {
        let u = panel.require_unit(id)?;
        for (r, &year) in pre_periods.iter().chain(post_periods.iter()).enumerate() {
            let p = panel
                .period_index(year)
                .expect("pre/post years are drawn from the period index");
            match grid.get(u, p) {
                Some(x) => outcomes[(r, c)] = x,
                None => {
                    return Err(Error::MissingOutcome {
                        unit: id.clone(),
                        key: outcome_key.to_string(),
                        year,
                    })
                }
            }
        }
    }

    let window = PeriodWindow {
        start: pre_periods[0],
        end: *pre_periods.last().expect("pre periods are non-empty"),
    };
    let mut covariates = DMatrix::zeros(covariate_keys.len(), members.len());
    for (r, key) in covariate_keys.iter().enumerate() {
        match collapse_covariate(panel, key, window) {
            Ok(values) => {
                for (c, id) in members.iter().enumerate() {
                    covariates[(r, c)] = values[panel.require_unit(id)?];
                }
            }
            Err(Error::UnknownCovariate { .. }) => {
                let Some(feature) = pool.features.get(key) else {
                    return Err(Error::UnknownCovariate { key: key.clone() });
                };
                for (c, id) in members.iter().enumerate() {
                    match feature.get(id) {
                        Some(&x) => covariates[(r, c)] = x,
                        None => {
                            return Err(Error::AllMissing {
                                unit: id.clone(),
                                key: key.clone(),
                                start: window.start,
                                end: window.end,
                            })
                        }
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }

    Ok(ScmProblem {
        pool: pool.clone(),
        outcome_key: outcome_key.to_string(),
        treatment_year,
        pre_periods,
        post_periods,
        covariate_keys: covariate_keys.to_vec(),
        settings,
        outcomes,
        covariates,
    })
}

/// Dispatches to the estimator named by `tag` with its hyperparameters taken
/// from `options`.
pub fn fit(problem: &ScmProblem, tag: EstimatorTag, options: &EstimatorOptions) -> Result<ScmFit> {
    match tag {
        EstimatorTag::AbadieNested => fit_abadie_nested(problem),
        EstimatorTag::AbadieNoCov => fit_abadie_nocov(problem),
        EstimatorTag::FermanDemeaned => fit_ferman(problem),
        EstimatorTag::HsiaoOls => fit_hsiao(problem, options.hsiao_max_regressors),
        EstimatorTag::ChernL1 => fit_chern(problem, options.chern_l1_bound),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean squared pre-period misfit of weights `w` applied to donor outcomes.
fn pre_mspe_of(problem: &ScmProblem, w: &DVector<f64>) -> f64 {
    let fitted = problem.donor_pre() * w;
    let treated = problem.treated_pre();
    let t0 = problem.n_pre();
    (0..t0)
        .map(|t| {
            let g = treated[t] - fitted[t];
            g * g
        })
        .sum::<f64>()
        / t0 as f64
}

/// Builds the common parts of a fit from a counterfactual series.
fn assemble(
    problem: &ScmProblem,
    estimator: EstimatorTag,
    counterfactual: Vec<f64>,
    weights: WeightVector,
    importances: Option<DiagonalImportance>,
    intercept: Option<f64>,
    mut diagnostics: BTreeMap<String, serde_json::Value>,
) -> ScmFit {
    let observed: Vec<f64> = problem.treated_outcomes().iter().copied().collect();
    debug_assert_eq!(observed.len(), counterfactual.len());
    let gaps: Vec<f64> = observed
        .iter()
        .zip(counterfactual.iter())
        .map(|(o, c)| o - c)
        .collect();
    let pre_len = problem.n_pre();
    let pre_mspe = gaps[..pre_len].iter().map(|g| g * g).sum::<f64>() / pre_len as f64;
    diagnostics.insert("outcome".to_string(), json!(problem.outcome_key));
    ScmFit {
        estimator,
        treated_id: problem.pool.treated.clone(),
        periods: problem.periods(),
        pre_len,
        observed,
        counterfactual,
        gaps,
        weights,
        importances,
        intercept,
        pre_mspe,
        diagnostics,
    }
}

/// Covariates z-scored against the donor pool: for each key, donor mean
/// subtracted and donor sample standard deviation divided out (a deviation
/// below 1e-12 divides by one instead, leaving the centered value).
struct StandardizedCovariates {
    treated: DVector<f64>,
    donors: DMatrix<f64>,
    /// Per-key (donor mean, divisor actually used).
    stats: Vec<(f64, f64)>,
}

fn standardize_covariates(problem: &ScmProblem) -> StandardizedCovariates {
    let k = problem.covariate_keys.len();
    let j = problem.n_donors();
    let mut treated = DVector::zeros(k);
    let mut donors = DMatrix::zeros(k, j);
    let mut stats = Vec::with_capacity(k);
    for r in 0..k {
        let values: Vec<f64> = (0..j).map(|d| problem.covariate(r, d + 1)).collect();
        let m = mean(&values);
        let sd = if j > 1 {
            (values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (j - 1) as f64).sqrt()
        } else {
            0.0
        };
        let divisor = if sd < 1e-12 { 1.0 } else { sd };
        treated[r] = (problem.covariate(r, 0) - m) / divisor;
        for d in 0..j {
            donors[(r, d)] = (values[d] - m) / divisor;
        }
        stats.push((m, divisor));
    }
    StandardizedCovariates {
        treated,
        donors,
        stats,
    }
}

/// The canonical nested estimator: a derivative-free outer search over
/// diagonal covariate importances, each candidate scored by the mean squared
/// pre-period outcome misfit of its inner simplex covariate match; the
/// winning importances are refit and reported together with the raw-scale
/// covariate balance.
///
/// Requires at least one covariate key on the problem.
pub fn fit_abadie_nested(problem: &ScmProblem) -> Result<ScmFit> {
    let k = problem.covariate_keys.len();
    if k == 0 {
        return Err(Error::InvalidSpec {
            message: "nested estimator requires at least one covariate".to_string(),
        });
    }
    let std = standardize_covariates(problem);
    let settings = &problem.settings;
    let score = |v: &[f64]| -> f64 {
        match solve_simplex_wls(&std.treated, &std.donors, v, settings) {
            Ok((w, _)) => pre_mspe_of(problem, &w.as_dvector()),
            Err(_) => f64::INFINITY,
        }
    };

    let search = search_importances(k, settings.v_search_budget, &score);
    let (weights, distance) =
        solve_simplex_wls(&std.treated, &std.donors, &search.importances, settings)?;
    let importances = DiagonalImportance::new(search.importances.clone())?;

    let counterfactual: Vec<f64> = (problem.donor_outcomes() * weights.as_dvector())
        .iter()
        .copied()
        .collect();

    // The plain pre-outcome fit is worth recording next to the nested one:
    // the two optimize different objectives, so neither dominates.
    let nocov_mspe = {
        let v = vec![1.0 / problem.n_pre() as f64; problem.n_pre()];
        solve_simplex_wls(&problem.treated_pre(), &problem.donor_pre(), &v, settings)
            .map(|(w, _)| pre_mspe_of(problem, &w.as_dvector()))
            .ok()
    };

    let balance: Vec<serde_json::Value> = problem
        .covariate_keys
        .iter()
        .enumerate()
        .map(|(r, key)| {
            let synthetic: f64 = (0..problem.n_donors())
                .map(|d| weights.values[d] * problem.covariate(r, d + 1))
                .sum();
            json!({
                "covariate": key,
                "treated": problem.covariate(r, 0),
                "synthetic": synthetic,
            })
        })
        .collect();
    let scaling: BTreeMap<&str, serde_json::Value> = problem
        .covariate_keys
        .iter()
        .zip(std.stats.iter())
        .map(|(key, (m, s))| (key.as_str(), json!({ "mean": m, "sd": s })))
        .collect();

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(
        "v_search".to_string(),
        json!({
            "objective": search.objective,
            "evaluations": search.evaluations,
            "starts": search.starts,
        }),
    );
    diagnostics.insert("covariate_distance".to_string(), json!(distance));
    diagnostics.insert("balance".to_string(), json!(balance));
    diagnostics.insert("covariate_scaling".to_string(), json!(scaling));
    if let Some(m) = nocov_mspe {
        diagnostics.insert("nocov_pre_mspe".to_string(), json!(m));
    }

    Ok(assemble(
        problem,
        EstimatorTag::AbadieNested,
        counterfactual,
        weights,
        Some(importances),
        None,
        diagnostics,
    ))
}

/// Simplex weights fit directly on pre-period outcomes with uniform
/// per-period importances `1/T0` (so the solver objective is the pre-period
/// mean squared error itself).
pub fn fit_abadie_nocov(problem: &ScmProblem) -> Result<ScmFit> {
    let v = vec![1.0 / problem.n_pre() as f64; problem.n_pre()];
    let (weights, objective) = solve_simplex_wls(
        &problem.treated_pre(),
        &problem.donor_pre(),
        &v,
        &problem.settings,
    )?;
    let counterfactual: Vec<f64> = (problem.donor_outcomes() * weights.as_dvector())
        .iter()
        .copied()
        .collect();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("objective".to_string(), json!(objective));
    Ok(assemble(
        problem,
        EstimatorTag::AbadieNoCov,
        counterfactual,
        weights,
        None,
        None,
        diagnostics,
    ))
}

/// The demeaned variant: every unit's own pre-period mean is subtracted from
/// its whole series, the simplex fit runs on the demeaned pre-period data,
/// and the counterfactual restores the treated level:
/// `treated pre-mean + Σ w_i (Y_it − pre-mean_i)`.
pub fn fit_ferman(problem: &ScmProblem) -> Result<ScmFit> {
    let t0 = problem.n_pre();
    let j = problem.n_donors();
    let treated = problem.treated_outcomes();
    let donors = problem.donor_outcomes();

    let treated_pre_mean = treated.rows(0, t0).mean();
    let donor_pre_means: Vec<f64> = (0..j)
        .map(|d| donors.column(d).rows(0, t0).mean())
        .collect();

    let demeaned_treated_pre = DVector::from_fn(t0, |t, _| treated[t] - treated_pre_mean);
    let demeaned_donor_pre = DMatrix::from_fn(t0, j, |t, d| donors[(t, d)] - donor_pre_means[d]);

    let v = vec![1.0 / t0 as f64; t0];
    let (weights, objective) = solve_simplex_wls(
        &demeaned_treated_pre,
        &demeaned_donor_pre,
        &v,
        &problem.settings,
    )?;

    let counterfactual: Vec<f64> = (0..treated.len())
        .map(|t| {
            treated_pre_mean
                + (0..j)
                    .map(|d| weights.values[d] * (donors[(t, d)] - donor_pre_means[d]))
                    .sum::<f64>()
        })
        .collect();

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("objective".to_string(), json!(objective));
    diagnostics.insert("treated_pre_mean".to_string(), json!(treated_pre_mean));
    Ok(assemble(
        problem,
        EstimatorTag::FermanDemeaned,
        counterfactual,
        weights,
        None,
        None,
        diagnostics,
    ))
}

/// Ordinary least squares of treated pre-outcomes on donor pre-outcomes with
/// an intercept; coefficients are unconstrained in sign and sum, and the
/// fitted combination extends to the post periods.
///
/// With more donors than `max_regressors` (default `T0 - 2`), the donor set
/// is first cut to the top-weighted donors of the plain pre-outcome simplex
/// fit (ties broken toward earlier pool order); the selection is recorded in
/// diagnostics. [`Error::UnderdeterminedSystem`] is returned when even the
/// retained donors leave no residual degree of freedom.
pub fn fit_hsiao(problem: &ScmProblem, max_regressors: Option<usize>) -> Result<ScmFit> {
    let t0 = problem.n_pre();
    let j = problem.n_donors();
    let limit = max_regressors.unwrap_or_else(|| t0.saturating_sub(2));

    let (selected, ranking): (Vec<usize>, Option<WeightVector>) = if j > limit {
        if limit == 0 {
            (Vec::new(), None)
        } else {
            let v = vec![1.0 / t0 as f64; t0];
            let (rank_weights, _) = solve_simplex_wls(
                &problem.treated_pre(),
                &problem.donor_pre(),
                &v,
                &problem.settings,
            )?;
            let mut order: Vec<usize> = (0..j).collect();
            order.sort_by(|&a, &b| {
                rank_weights.values[b]
                    .partial_cmp(&rank_weights.values[a])
                    .expect("simplex weights are finite")
                    .then(a.cmp(&b))
            });
            let mut selected = order[..limit].to_vec();
            selected.sort_unstable();
            (selected, Some(rank_weights))
        }
    } else {
        ((0..j).collect(), None)
    };

    let donors = problem.donor_outcomes();
    let design_pre = DMatrix::from_fn(t0, selected.len(), |t, c| donors[(t, selected[c])]);
    let ols = solve_ols(&problem.treated_pre(), &design_pre, true)?;
    let intercept = ols.intercept.expect("intercept was requested");

    let counterfactual: Vec<f64> = (0..donors.nrows())
        .map(|t| {
            intercept
                + selected
                    .iter()
                    .enumerate()
                    .map(|(c, &d)| ols.weights.values[c] * donors[(t, d)])
                    .sum::<f64>()
        })
        .collect();

    let mut full = vec![0.0; j];
    for (c, &d) in selected.iter().enumerate() {
        full[d] = ols.weights.values[c];
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("objective".to_string(), json!(ols.objective));
    diagnostics.insert(
        "selection".to_string(),
        json!({
            "max_regressors": limit,
            "subset_applied": j > limit,
            "selected": selected
                .iter()
                .map(|&d| problem.pool.donors[d].clone())
                .collect::<Vec<String>>(),
            "ranking_weights": ranking.as_ref().map(|r| {
                selected.iter().map(|&d| r.values[d]).collect::<Vec<f64>>()
            }),
        }),
    );
    Ok(assemble(
        problem,
        EstimatorTag::HsiaoOls,
        counterfactual,
        WeightVector { values: full },
        None,
        Some(intercept),
        diagnostics,
    ))
}

/// Least squares on pre-period outcomes with the weight vector constrained
/// to the l1 ball of radius `bound` (default 1); no intercept, weights may
/// take either sign.
pub fn fit_chern(problem: &ScmProblem, bound: f64) -> Result<ScmFit> {
    let (weights, objective) = solve_l1_ball_ls(
        &problem.treated_pre(),
        &problem.donor_pre(),
        bound,
        &problem.settings,
    )?;
    let counterfactual: Vec<f64> = (problem.donor_outcomes() * weights.as_dvector())
        .iter()
        .copied()
        .collect();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("objective".to_string(), json!(objective));
    diagnostics.insert("bound".to_string(), json!(bound));
    diagnostics.insert("l1_norm".to_string(), json!(weights.l1_norm()));
    Ok(assemble(
        problem,
        EstimatorTag::ChernL1,
        counterfactual,
        weights,
        None,
        None,
        diagnostics,
    ))
}

/// Outcome of the covariate-importance search.
struct ImportanceSearch {
    /// Winning importances, normalized to sum to one.
    importances: Vec<f64>,
    /// Score of the winner.
    objective: f64,
    /// Total score evaluations across all restarts.
    evaluations: usize,
    /// Number of restarts run.
    starts: usize,
}

/// Derivative-free minimization of `score` over the simplex of `k`
/// importances.
///
/// The simplex is parametrized by `k - 1` free logits (the last logit is
/// pinned at zero) mapped through a softmax, and searched by Nelder–Mead
/// restarted from the uniform point plus one vertex-leaning start per
/// importance, the total evaluation budget split evenly across restarts.
/// Restarts are independent and may run in parallel; the winner is the
/// lowest score, ties broken toward the lexicographically smaller importance
/// vector, so the result does not depend on scheduling.
fn search_importances(
    k: usize,
    budget: usize,
    score: &(impl Fn(&[f64]) -> f64 + Sync),
) -> ImportanceSearch {
    if k == 1 {
        // A single importance is forced to one by normalization.
        return ImportanceSearch {
            importances: vec![1.0],
            objective: score(&[1.0]),
            evaluations: 1,
            starts: 1,
        };
    }

    let n = k - 1;
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    starts.push(vec![0.0; n]);
    for c in 0..k {
        if c < n {
            let mut theta = vec![0.0; n];
            theta[c] = 3.0;
            starts.push(theta);
        } else {
            starts.push(vec![-3.0; n]);
        }
    }
    let n_starts = starts.len();
    let per_start = (budget / n_starts).max(1);

    let runs: Vec<(Vec<f64>, f64, usize)> = starts
        .into_par_iter()
        .map(|theta| {
            let (best_theta, objective, evaluations) =
                nelder_mead(&theta, per_start, |t| score(&softmax_anchored(t)));
            (softmax_anchored(&best_theta), objective, evaluations)
        })
        .collect();

    let evaluations = runs.iter().map(|(_, _, e)| e).sum();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (v, f, _) in runs {
        let better = match &best {
            None => true,
            Some((bv, bf)) => f < *bf || (f == *bf && v < *bv),
        };
        if better {
            best = Some((v, f));
        }
    }
    let (importances, objective) = best.expect("at least one restart ran");
    ImportanceSearch {
        importances,
        objective,
        evaluations,
        starts: n_starts,
    }
}

/// Maps `k - 1` free logits to a point on the `k`-simplex by appending a
/// pinned zero logit and applying a max-shifted softmax, renormalized so the
/// entries sum to one exactly.
fn softmax_anchored(theta: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = theta.to_vec();
    phi.push(0.0);
    let max = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = phi.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for x in &mut out {
        *x /= total;
    }
    out
}

/// Standard Nelder–Mead simplex minimization (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5) with a hard evaluation budget. Non-finite
/// scores are treated as +infinity. Fully deterministic: the vertex order is
/// a stable sort on (score, coordinates) and every step is a pure function
/// of the current simplex.
fn nelder_mead(start: &[f64], budget: usize, f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64, usize) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    const INITIAL_STEP: f64 = 0.5;

    let n = start.len();
    let mut evals = 0usize;
    let mut best: (Vec<f64>, f64) = (start.to_vec(), f64::INFINITY);
    let eval = |x: &[f64], evals: &mut usize, best: &mut (Vec<f64>, f64)| -> f64 {
        *evals += 1;
        let mut y = f(x);
        if !y.is_finite() {
            y = f64::INFINITY;
        }
        if y < best.1 || (y == best.1 && *x < best.0[..]) {
            *best = (x.to_vec(), y);
        }
        y
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let y0 = eval(start, &mut evals, &mut best);
    simplex.push((start.to_vec(), y0));
    for i in 0..n {
        if evals >= budget {
            return (best.0, best.1, evals);
        }
        let mut x = start.to_vec();
        x[i] += INITIAL_STEP;
        let y = eval(&x, &mut evals, &mut best);
        simplex.push((x, y));
    }

    while evals < budget {
        simplex.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("scores are finite or +inf")
                .then_with(|| a.0.partial_cmp(&b.0).expect("coordinates are finite"))
        });
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-14 * (1.0 + simplex[0].1.abs()) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected: Vec<f64> = (0..n)
            .map(|d| centroid[d] + ALPHA * (centroid[d] - worst.0[d]))
            .collect();
        let fr = eval(&reflected, &mut evals, &mut best);

        if fr < simplex[0].1 {
            if evals >= budget {
                break;
            }
            let expanded: Vec<f64> = (0..n)
                .map(|d| centroid[d] + GAMMA * (reflected[d] - centroid[d]))
                .collect();
            let fe = eval(&expanded, &mut evals, &mut best);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            if evals >= budget {
                break;
            }
            let (contracted, reference): (Vec<f64>, f64) = if fr < worst.1 {
                let x = (0..n)
                    .map(|d| centroid[d] + RHO * (reflected[d] - centroid[d]))
                    .collect();
                (x, fr)
            } else {
                let x = (0..n)
                    .map(|d| centroid[d] + RHO * (worst.0[d] - centroid[d]))
                    .collect();
                (x, worst.1)
            };
            let fc = eval(&contracted, &mut evals, &mut best);
            if fc <= reference {
                simplex[n] = (contracted, fc);
            } else {
                // Shrink every vertex toward the best.
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if evals >= budget {
                        return (best.0, best.1, evals);
                    }
                    for (coord, &base) in vertex.0.iter_mut().zip(&anchor) {
                        *coord = base + SIGMA * (*coord - base);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals, &mut best);
                }
            }
        }
    }

    (best.0, best.1, evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{AttrValue, CovariateSeries, UnitRecord, ValueGrid};
    use approx::assert_abs_diff_eq;

    const OUTCOME: &str = "score";

    /// Builds a complete panel with one outcome from (unit id, series) rows.
    fn test_panel(years: &[i32], rows: &[(&str, &[f64])]) -> PanelDataset {
        let mut units = Vec::new();
        let mut grid = ValueGrid::new(rows.len(), years.len());
        for (u, (id, values)) in rows.iter().enumerate() {
            assert_eq!(values.len(), years.len(), "series must cover all years");
            units.push(UnitRecord {
                id: id.to_string(),
                name: format!("Unit {id}"),
                attributes: BTreeMap::new(),
            });
            for (p, &v) in values.iter().enumerate() {
                grid.set(u, p, Some(v));
            }
        }
        let mut outcomes = BTreeMap::new();
        outcomes.insert(OUTCOME.to_string(), grid);
        PanelDataset {
            units,
            periods: years.to_vec(),
            outcomes,
            covariates: BTreeMap::new(),
        }
    }

    fn pool_for(panel: &PanelDataset, treated: &str) -> DonorPool {
        DonorPool {
            treated: treated.to_string(),
            donors: panel
                .units
                .iter()
                .map(|u| u.id.clone())
                .filter(|id| id != treated)
                .collect(),
            features: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn add_fixed_covariate(panel: &mut PanelDataset, key: &str, values: &[f64]) {
        panel
            .covariates
            .insert(key.to_string(), CovariateSeries::Fixed(values.to_vec()));
    }

    fn problem(
        panel: &PanelDataset,
        treated: &str,
        treatment_year: i32,
        covariates: &[&str],
    ) -> ScmProblem {
        let pool = pool_for(panel, treated);
        let keys: Vec<String> = covariates.iter().map(|s| s.to_string()).collect();
        build_problem(
            panel,
            &pool,
            OUTCOME,
            treatment_year,
            &keys,
            SolverSettings::default(),
        )
        .expect("problem builds")
    }

    #[test]
    fn estimator_tags_round_trip_their_names() {
        for tag in EstimatorTag::ALL {
            assert_eq!(tag.as_str().parse::<EstimatorTag>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(json, format!("\"{}\"", tag));
        }
        assert!("abadie".parse::<EstimatorTag>().is_err());
    }

    #[test]
    fn split_places_years_around_treatment() {
        let years = [
            2010, 2011, 2012, 2013, 2014, 2015, 2016, 2017, 2018, 2019, 2021,
        ];
        let flat = vec![1.0; years.len()];
        let panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        let p = problem(&panel, "A", 2014, &[]);
        assert_eq!(p.pre_periods, vec![2010, 2011, 2012, 2013]);
        assert_eq!(
            p.post_periods,
            vec![2014, 2015, 2016, 2017, 2018, 2019, 2021]
        );
        assert_eq!(p.periods().len(), 11);
    }

    #[test]
    fn treatment_at_first_year_is_rejected() {
        let years = [2010, 2011, 2012];
        let flat = vec![1.0; 3];
        let panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        let pool = pool_for(&panel, "A");
        let err = build_problem(&panel, &pool, OUTCOME, 2010, &[], SolverSettings::default())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::EmptyPrePeriod {
                treatment_year: 2010
            }
        ));
    }

    #[test]
    fn missing_pre_outcome_names_unit_and_year() {
        let years = [2010, 2011, 2012, 2013];
        let flat = vec![1.0; 4];
        let mut panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        panel.outcomes.get_mut(OUTCOME).unwrap().set(1, 1, None);
        let pool = pool_for(&panel, "A");
        let err = build_problem(&panel, &pool, OUTCOME, 2012, &[], SolverSettings::default())
            .unwrap_err();
        match err {
            Error::MissingOutcome { unit, key, year } => {
                assert_eq!(unit, "B");
                assert_eq!(key, OUTCOME);
                assert_eq!(year, 2011);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_covariate_is_rejected_at_build() {
        let years = [2010, 2011, 2012, 2013];
        let flat = vec![1.0; 4];
        let panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        let pool = pool_for(&panel, "A");
        let err = build_problem(
            &panel,
            &pool,
            OUTCOME,
            2012,
            &["no_such_key".to_string()],
            SolverSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownCovariate { key } if key == "no_such_key"));
    }

    #[test]
    fn pool_features_resolve_covariates_last() {
        let years = [2010, 2011, 2012, 2013];
        let flat = vec![1.0; 4];
        let panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        let mut pool = pool_for(&panel, "A");
        let mut distances = BTreeMap::new();
        distances.insert("A".to_string(), 0.0);
        distances.insert("B".to_string(), 12.5);
        pool.features
            .insert("radial_distance_km".to_string(), distances);
        let p = build_problem(
            &panel,
            &pool,
            OUTCOME,
            2012,
            &["radial_distance_km".to_string()],
            SolverSettings::default(),
        )
        .unwrap();
        assert_eq!(p.covariate(0, 0), 0.0);
        assert_eq!(p.covariate(0, 1), 12.5);
    }

    #[test]
    fn no_covariates_builds_but_nested_estimator_refuses() {
        let years = [2010, 2011, 2012, 2013];
        let flat = vec![1.0; 4];
        let panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        let p = problem(&panel, "A", 2012, &[]);
        assert!(matches!(
            fit_abadie_nested(&p),
            Err(Error::InvalidSpec { .. })
        ));
        assert!(fit_abadie_nocov(&p).is_ok());
    }

    #[test]
    fn nocov_matches_identical_donor_exactly() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let treated = [10.0, 11.0, 12.0, 13.0, 20.0, 21.0];
        let twin = [10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let other = [30.0, 29.0, 28.0, 27.0, 26.0, 25.0];
        let panel = test_panel(&years, &[("A", &treated), ("B", &twin), ("C", &other)]);
        let p = problem(&panel, "A", 2004, &[]);
        let fit = fit_abadie_nocov(&p).unwrap();
        assert!(fit.pre_mspe < 1e-10, "pre mspe {}", fit.pre_mspe);
        assert_abs_diff_eq!(fit.weights.values[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.weights.values[1], 0.0, epsilon = 1e-6);
        // Post gaps follow the twin's path.
        assert_abs_diff_eq!(fit.post_gaps()[0], 20.0 - 14.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.post_gaps()[1], 21.0 - 15.0, epsilon = 1e-6);
        // The reported pre-mspe is the mean squared pre gap by construction.
        let recomputed = fit.pre_gaps().iter().map(|g| g * g).sum::<f64>() / fit.pre_len as f64;
        assert_abs_diff_eq!(fit.pre_mspe, recomputed, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_donors_split_weight_without_changing_the_path() {
        let years = [2000, 2001, 2002, 2003, 2004];
        let treated = [5.0, 6.0, 7.0, 8.0, 9.0];
        let shape = [4.0, 6.5, 6.5, 8.5, 8.0];
        let other = [20.0, 18.0, 16.0, 14.0, 12.0];
        let split = test_panel(
            &years,
            &[
                ("A", &treated),
                ("B1", &shape),
                ("B2", &shape),
                ("C", &other),
            ],
        );
        let merged = test_panel(&years, &[("A", &treated), ("B", &shape), ("C", &other)]);
        let fit_split = fit_abadie_nocov(&problem(&split, "A", 2004, &[])).unwrap();
        let fit_merged = fit_abadie_nocov(&problem(&merged, "A", 2004, &[])).unwrap();
        let b_total = fit_split.weights.values[0] + fit_split.weights.values[1];
        assert_abs_diff_eq!(b_total, fit_merged.weights.values[0], epsilon = 1e-6);
        for (a, b) in fit_split
            .counterfactual
            .iter()
            .zip(fit_merged.counterfactual.iter())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_covariate_forces_unit_importance() {
        let years = [2000, 2001, 2002, 2003];
        let panel = {
            let mut p = test_panel(
                &years,
                &[
                    ("A", &[1.0, 2.0, 3.0, 4.0]),
                    ("B", &[1.5, 2.5, 3.5, 4.5]),
                    ("C", &[0.5, 1.5, 2.5, 3.5]),
                ],
            );
            add_fixed_covariate(&mut p, "size", &[10.0, 12.0, 8.0]);
            p
        };
        let p = problem(&panel, "A", 2002, &["size"]);
        let fit = fit_abadie_nested(&p).unwrap();
        let importances = fit.importances.unwrap();
        assert_eq!(importances.values(), &[1.0]);
    }

    /// Outer-search oracle: donors differ by parallel level shifts, one
    /// covariate equals each unit's pre-period mean (a perfect predictor of
    /// the level), the other is junk that rewards a donor with the wrong
    /// level. A fine grid over the two-covariate importance split certifies
    /// that full weight on the predictor is optimal and that the search gets
    /// at least as close.
    #[test]
    fn importance_search_finds_the_perfect_predictor() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005, 2006, 2007];
        let base = [10.0, 12.0, 11.0, 13.0, 14.0, 15.0, 16.0, 17.0];
        let shift = |c: f64| -> Vec<f64> { base.iter().map(|b| b + c).collect() };
        let treated = shift(6.0);
        let d1 = shift(0.0);
        let d2 = shift(10.0);
        let d3 = shift(20.0);
        let d4 = shift(5.0);
        let mut panel = test_panel(
            &years,
            &[
                ("A", &treated),
                ("B", &d1),
                ("C", &d2),
                ("D", &d3),
                ("E", &d4),
            ],
        );
        let pre_mean = |c: f64| (10.0 + 12.0 + 11.0 + 13.0) / 4.0 + c;
        add_fixed_covariate(
            &mut panel,
            "level",
            &[
                pre_mean(6.0),
                pre_mean(0.0),
                pre_mean(10.0),
                pre_mean(20.0),
                pre_mean(5.0),
            ],
        );
        // Junk covariate: the treated value sits nearest the wrong-level
        // donor C, so matching on it alone misfits the outcome path.
        add_fixed_covariate(&mut panel, "junk", &[0.05, 0.9, 0.1, 0.5, 0.7]);

        let p = problem(&panel, "A", 2004, &["level", "junk"]);
        let fit = fit_abadie_nested(&p).unwrap();
        let importances = fit.importances.clone().unwrap();
        assert!(
            importances.values()[0] >= 0.9,
            "predictor importance {:?}",
            importances.values()
        );

        // Independent grid oracle over v1 ∈ {0, 0.01, …, 1}.
        let std = standardize_covariates(&p);
        let score = |v: &[f64]| -> f64 {
            let (w, _) = solve_simplex_wls(&std.treated, &std.donors, v, &p.settings).unwrap();
            pre_mspe_of(&p, &w.as_dvector())
        };
        let mut grid_best = f64::INFINITY;
        let mut grid_arg = 0.0;
        for i in 0..=100 {
            let v1 = i as f64 / 100.0;
            let s = score(&[v1, 1.0 - v1]);
            if s < grid_best {
                grid_best = s;
                grid_arg = v1;
            }
        }
        assert!(grid_arg >= 0.95, "grid oracle argmin {grid_arg}");
        assert!(
            fit.pre_mspe <= grid_best + 1e-7 * (1.0 + grid_best),
            "search mspe {} vs grid {}",
            fit.pre_mspe,
            grid_best
        );
        // And no worse than the uniform importance split.
        assert!(fit.pre_mspe <= score(&[0.5, 0.5]) + 1e-12);
    }

    #[test]
    fn realizable_counterfactual_fits_pre_periods_exactly() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let d1 = [10.0, 12.0, 11.0, 13.0, 15.0, 16.0];
        let d2 = [20.0, 18.0, 19.0, 21.0, 23.0, 22.0];
        let treated: Vec<f64> = d1
            .iter()
            .zip(d2.iter())
            .map(|(a, b)| 0.5 * a + 0.5 * b)
            .collect();
        let mut panel = test_panel(&years, &[("A", &treated), ("B", &d1), ("C", &d2)]);
        // Covariates are the same convex combination, so the match is exact.
        add_fixed_covariate(&mut panel, "x1", &[3.0, 2.0, 4.0]);
        add_fixed_covariate(&mut panel, "x2", &[50.0, 40.0, 60.0]);
        let p = problem(&panel, "A", 2004, &["x1", "x2"]);
        let fit = fit_abadie_nested(&p).unwrap();
        assert!(fit.pre_mspe < 1e-8, "pre mspe {}", fit.pre_mspe);
        for g in fit.pre_gaps() {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn ferman_ignores_constant_panels() {
        let years = [2000, 2001, 2002, 2003];
        let panel = test_panel(
            &years,
            &[("A", &[5.0; 4]), ("B", &[9.0; 4]), ("C", &[2.0; 4])],
        );
        let fit = fit_ferman(&problem(&panel, "A", 2002, &[])).unwrap();
        for g in &fit.gaps {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ferman_is_invariant_to_donor_level_shifts() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let treated = [5.0, 6.0, 5.5, 6.5, 8.0, 9.0];
        let d1 = [5.2, 5.9, 5.6, 6.4, 6.9, 7.1];
        let d2 = [4.0, 5.0, 4.5, 5.5, 6.0, 6.5];
        let panel = test_panel(&years, &[("A", &treated), ("B", &d1), ("C", &d2)]);
        let shifted_d1: Vec<f64> = d1.iter().map(|x| x + 40.0).collect();
        let shifted_d2: Vec<f64> = d2.iter().map(|x| x - 7.0).collect();
        let shifted = test_panel(
            &years,
            &[("A", &treated), ("B", &shifted_d1), ("C", &shifted_d2)],
        );
        let f1 = fit_ferman(&problem(&panel, "A", 2004, &[])).unwrap();
        let f2 = fit_ferman(&problem(&shifted, "A", 2004, &[])).unwrap();
        for (a, b) in f1.gaps.iter().zip(f2.gaps.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn ferman_fits_level_shifted_twin_where_simplex_cannot() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let d1 = [10.0, 12.0, 11.0, 13.0, 14.0, 15.0];
        let d2 = [11.0, 10.0, 12.0, 11.5, 12.0, 13.0];
        let treated: Vec<f64> = d1.iter().map(|x| x + 100.0).collect();
        let panel = test_panel(&years, &[("A", &treated), ("B", &d1), ("C", &d2)]);
        let p = problem(&panel, "A", 2004, &[]);
        let ferman = fit_ferman(&p).unwrap();
        assert!(
            ferman.pre_mspe < 1e-10,
            "ferman pre mspe {}",
            ferman.pre_mspe
        );
        for g in ferman.post_gaps() {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-6);
        }
        // The level sits far outside the donor hull, so the plain simplex
        // fit cannot reach it.
        let nocov = fit_abadie_nocov(&p).unwrap();
        assert!(nocov.pre_mspe > 1.0, "nocov pre mspe {}", nocov.pre_mspe);
    }

    #[test]
    fn hsiao_recovers_exact_affine_combination() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005, 2006, 2007];
        let d1 = [1.0, 2.0, 3.0, 2.5, 4.0, 5.0, 4.5, 6.0];
        let d2 = [0.5, 1.0, 0.0, 1.5, 2.0, 1.0, 2.5, 3.0];
        let treated: Vec<f64> = d1
            .iter()
            .zip(d2.iter())
            .map(|(a, b)| 2.0 * a - b + 5.0)
            .collect();
        let panel = test_panel(&years, &[("A", &treated), ("B", &d1), ("C", &d2)]);
        let fit = fit_hsiao(&problem(&panel, "A", 2004, &[]), None).unwrap();
        assert_abs_diff_eq!(fit.weights.values[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.weights.values[1], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.intercept.unwrap(), 5.0, epsilon = 1e-6);
        for g in &fit.gaps {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn hsiao_zero_regressors_is_the_flat_pre_mean() {
        let years = [2000, 2001, 2002, 2003, 2004];
        let treated = [1.0, 2.0, 3.0, 4.0, 9.0];
        let d1 = [5.0, 6.0, 7.0, 8.0, 9.0];
        let panel = test_panel(&years, &[("A", &treated), ("B", &d1)]);
        let fit = fit_hsiao(&problem(&panel, "A", 2004, &[]), Some(0)).unwrap();
        let pre_mean = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
        assert_abs_diff_eq!(fit.intercept.unwrap(), pre_mean, epsilon = 1e-9);
        for c in &fit.counterfactual {
            assert_abs_diff_eq!(*c, pre_mean, epsilon = 1e-9);
        }
        assert!(fit.weights.values.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn hsiao_subsets_wide_pools_and_records_the_selection() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let treated = [10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let near1 = [10.1, 11.1, 12.1, 12.9, 13.8, 14.9];
        let near2 = [9.9, 10.9, 11.9, 13.1, 14.2, 15.1];
        let far1 = [30.0, 28.0, 26.0, 24.0, 22.0, 20.0];
        let far2 = [0.0, 1.0, 0.5, 1.5, 1.0, 2.0];
        let far3 = [50.0, 50.0, 50.0, 50.0, 50.0, 50.0];
        let far4 = [12.0, 20.0, 8.0, 25.0, 7.0, 30.0];
        let panel = test_panel(
            &years,
            &[
                ("A", &treated),
                ("B", &near1),
                ("C", &near2),
                ("D", &far1),
                ("E", &far2),
                ("F", &far3),
                ("G", &far4),
            ],
        );
        // T0 = 4 and six donors: the default cap is T0 - 2 = 2.
        let fit = fit_hsiao(&problem(&panel, "A", 2004, &[]), None).unwrap();
        let selection = &fit.diagnostics["selection"];
        assert_eq!(selection["max_regressors"], 2);
        assert_eq!(selection["subset_applied"], true);
        assert_eq!(selection["selected"].as_array().unwrap().len(), 2);
        let used: usize = fit.weights.values.iter().filter(|w| **w != 0.0).count();
        assert!(used <= 2);

        // Asking for more regressors than the pre-period can support fails.
        let err = fit_hsiao(&problem(&panel, "A", 2004, &[]), Some(3)).unwrap_err();
        assert!(matches!(
            err,
            Error::UnderdeterminedSystem { rows: 4, params: 4 }
        ));
    }

    #[test]
    fn chern_matches_identical_donor_exactly() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005];
        let treated = [10.0, 11.0, 12.0, 13.0, 20.0, 21.0];
        let twin = [10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let other = [3.0, 4.0, 3.5, 4.5, 5.0, 5.5];
        let panel = test_panel(&years, &[("A", &treated), ("B", &twin), ("C", &other)]);
        let fit = fit_chern(&problem(&panel, "A", 2004, &[]), 1.0).unwrap();
        assert!(fit.pre_mspe < 1e-10, "pre mspe {}", fit.pre_mspe);
        assert_abs_diff_eq!(fit.weights.values[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn chern_unit_ball_never_fits_worse_than_the_simplex() {
        let years = [2000, 2001, 2002, 2003, 2004];
        let treated = [10.0, 13.0, 11.5, 14.0, 15.0];
        let d1 = [8.0, 9.5, 9.0, 10.5, 11.0];
        let d2 = [15.0, 17.0, 16.0, 18.0, 19.0];
        let d3 = [1.0, 0.5, 1.5, 0.0, 2.0];
        let panel = test_panel(
            &years,
            &[("A", &treated), ("B", &d1), ("C", &d2), ("D", &d3)],
        );
        let p = problem(&panel, "A", 2004, &[]);
        let chern = fit_chern(&p, 1.0).unwrap();
        let nocov = fit_abadie_nocov(&p).unwrap();
        assert!(
            chern.pre_mspe <= nocov.pre_mspe + 1e-9,
            "chern {} vs nocov {}",
            chern.pre_mspe,
            nocov.pre_mspe
        );
    }

    /// Donor order is presentation, not information: permuting it permutes
    /// the weights and leaves every series unchanged.
    #[test]
    fn donor_permutation_only_permutes_weights() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005, 2006, 2007];
        let treated = [10.0, 12.0, 11.0, 13.0, 15.0, 16.0, 17.0, 18.0];
        let d1 = [9.0, 11.0, 10.5, 12.0, 13.0, 14.0, 15.0, 16.0];
        let d2 = [12.0, 13.5, 12.5, 14.5, 16.0, 17.0, 18.0, 19.0];
        let d3 = [7.0, 8.0, 7.5, 9.0, 10.0, 11.0, 12.0, 13.0];
        let forward = {
            let mut p = test_panel(
                &years,
                &[("A", &treated), ("B", &d1), ("C", &d2), ("D", &d3)],
            );
            add_fixed_covariate(&mut p, "x", &[11.5, 10.6, 13.1, 7.9]);
            p
        };
        let rotated = {
            let mut p = test_panel(
                &years,
                &[("A", &treated), ("D", &d3), ("B", &d1), ("C", &d2)],
            );
            add_fixed_covariate(&mut p, "x", &[11.5, 7.9, 10.6, 13.1]);
            p
        };
        // Maps forward donor position -> rotated donor position.
        let positions = [1usize, 2, 0];
        let opts = EstimatorOptions::default();
        for tag in EstimatorTag::ALL {
            let f = fit(&problem(&forward, "A", 2004, &["x"]), tag, &opts).unwrap();
            let r = fit(&problem(&rotated, "A", 2004, &["x"]), tag, &opts).unwrap();
            for (fwd, &rot) in positions.iter().enumerate() {
                assert_abs_diff_eq!(f.weights.values[fwd], r.weights.values[rot], epsilon = 1e-9);
            }
            for (a, b) in f.counterfactual.iter().zip(r.counterfactual.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    /// Rescaling every outcome by `a·Y + b` scales the gaps of the three
    /// location-equivariant estimators by `a` and leaves simplex weights
    /// unchanged.
    #[test]
    fn affine_outcome_rescaling_scales_gaps() {
        let years = [2000, 2001, 2002, 2003, 2004, 2005, 2006, 2007];
        let treated = [10.0, 12.0, 11.0, 13.0, 15.0, 16.0, 17.0, 18.0];
        let d1 = [9.0, 11.0, 10.5, 12.0, 13.0, 14.0, 15.0, 16.0];
        let d2 = [12.0, 13.5, 12.5, 14.5, 16.0, 17.0, 18.0, 19.0];
        let d3 = [7.0, 8.0, 7.5, 9.0, 10.0, 11.0, 12.0, 13.0];
        let base = test_panel(
            &years,
            &[("A", &treated), ("B", &d1), ("C", &d2), ("D", &d3)],
        );
        let (a, b) = (2.0, 7.0);
        let rescale = |s: &[f64]| -> Vec<f64> { s.iter().map(|x| a * x + b).collect() };
        let scaled = test_panel(
            &years,
            &[
                ("A", &rescale(&treated)),
                ("B", &rescale(&d1)),
                ("C", &rescale(&d2)),
                ("D", &rescale(&d3)),
            ],
        );
        let opts = EstimatorOptions::default();
        for tag in [
            EstimatorTag::AbadieNoCov,
            EstimatorTag::FermanDemeaned,
            EstimatorTag::HsiaoOls,
        ] {
            let f1 = fit(&problem(&base, "A", 2004, &[]), tag, &opts).unwrap();
            let f2 = fit(&problem(&scaled, "A", 2004, &[]), tag, &opts).unwrap();
            for (g1, g2) in f1.gaps.iter().zip(f2.gaps.iter()) {
                assert_abs_diff_eq!(a * g1, *g2, epsilon = 1e-9 * (1.0 + (a * g1).abs()));
            }
            if tag == EstimatorTag::AbadieNoCov {
                for (w1, w2) in f1.weights.values.iter().zip(f2.weights.values.iter()) {
                    assert_abs_diff_eq!(w1, w2, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn nelder_mead_minimizes_a_smooth_quadratic() {
        let (x, f, evals) = nelder_mead(&[0.0, 0.0], 300, |t| {
            (t[0] - 1.0).powi(2) + (t[1] + 2.0).powi(2)
        });
        assert!(evals <= 300);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-3);
        assert!(f < 1e-6);
    }

    #[test]
    fn attribute_values_serve_as_numeric_covariates() {
        let years = [2000, 2001, 2002, 2003];
        let flat = vec![1.0; 4];
        let mut panel = test_panel(&years, &[("A", &flat), ("B", &flat)]);
        for (u, value) in [(0usize, 40.0), (1usize, 60.0)] {
            panel.units[u]
                .attributes
                .insert("enrolment".to_string(), AttrValue::Real(value));
        }
        let p = problem(&panel, "A", 2002, &["enrolment"]);
        assert_eq!(p.covariate(0, 0), 40.0);
        assert_eq!(p.covariate(0, 1), 60.0);
    }
}
