//! Deterministic constrained least-squares kernels.
//!
//! Three solvers cover every estimator in the crate:
//!
//! * [`solve_simplex_wls`] — importance-weighted least squares over the
//!   probability simplex (weights non-negative, summing to one), by projected
//!   gradient descent with an exact sort-based simplex projection.
//! * [`solve_l1_ball_ls`] — least squares over the l1 ball of a given radius,
//!   by projected gradient descent with an exact l1-ball projection.
//! * [`solve_ols`] — unconstrained least squares through a rank-revealing
//!   singular value decomposition, with an optional intercept.
//!
//! The projected-gradient solvers follow a fixed, fully deterministic
//! schedule: a fixed initial point (the uniform weight vector on the simplex,
//! the origin inside the l1 ball), a fixed step of `1/L` where `L` is the
//! largest eigenvalue of the Gram matrix estimated by power iteration, and
//! termination when successive objective values differ by less than
//! [`SolverSettings::objective_tolerance`] or after
//! [`SolverSettings::max_iterations`] iterations. A stalled iterate is then
//! polished by an exact active-set solve on its support (see
//! [`refine_simplex`]), kept only when it does not increase the objective, so
//! solutions satisfy first-order optimality conditions to near machine
//! precision rather than the square root of the objective tolerance.
//! Identical inputs always produce bit-identical outputs, which the
//! reproducibility guarantees of the whole pipeline rest on.
//!
//! References: Duchi, Shalev-Shwartz, Singer & Chandra (2008) for the exact
//! simplex and l1-ball projections.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and iteration budgets for every numerical routine, collected in
/// one place so a configuration can override them coherently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Projected-gradient iteration cap.
    pub max_iterations: usize,
    /// Stop when successive objective values differ by less than this.
    pub objective_tolerance: f64,
    /// Power-iteration cap for the Gram spectral-norm estimate.
    pub power_iterations: usize,
    /// Weights above this count as support in optimality diagnostics.
    pub support_tolerance: f64,
    /// Evaluation budget for the outer covariate-importance search.
    pub v_search_budget: usize,
    /// Relative singular-value cutoff for rank decisions in [`solve_ols`].
    pub rank_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 10_000,
            objective_tolerance: 1e-12,
            power_iterations: 100,
            support_tolerance: 1e-6,
            v_search_budget: 2_000,
            rank_tolerance: 1e-12,
        }
    }
}

/// A donor weight vector, in donor order.
///
/// Simplex solutions have entries in `[0, 1]` summing to one (negative
/// round-off is clamped to exactly zero on the way out); l1-ball solutions
/// may carry either sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Non-negative diagonal covariate importances, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalImportance {
    values: Vec<f64>,
}

impl DiagonalImportance {
    /// Normalizes `values` to sum to one. Entries must be finite and
    /// non-negative with a strictly positive total.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFiniteInput {
                what: "diagonal importance".to_string(),
            });
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidSpec {
                message: "diagonal importance must have positive total".to_string(),
            });
        }
        Ok(DiagonalImportance {
            values: values.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        DiagonalImportance {
            values: vec![1.0 / k as f64; k],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn ensure_finite_vector(what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: what.to_string(),
        });
    }
    Ok(())
}

fn ensure_finite_matrix(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: what.to_string(),
        });
    }
    Ok(())
}

/// Euclidean projection onto the simplex `{w : w >= 0, sum w = radius}`,
/// exact up to round-off, via the sort-and-threshold algorithm.
pub fn project_onto_simplex(values: &mut [f64], radius: f64) {
    debug_assert!(radius > 0.0);
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - radius) / (i + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    for v in values.iter_mut() {
        *v = (*v - threshold).max(0.0);
    }
}

/// Euclidean projection onto the l1 ball `{w : ||w||_1 <= radius}`: identity
/// inside the ball, otherwise a simplex projection of the magnitudes with the
/// original signs restored.
pub fn project_onto_l1_ball(values: &mut [f64], radius: f64) {
    debug_assert!(radius > 0.0);
    let l1: f64 = values.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return;
    }
    let mut magnitudes: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    project_onto_simplex(&mut magnitudes, radius);
    for (v, m) in values.iter_mut().zip(magnitudes) {
        *v = if *v < 0.0 { -m } else { m };
    }
}

/// Largest eigenvalue of the symmetric positive semi-definite operator
/// `apply`, estimated by power iteration from a fixed, slightly tilted start
/// vector (the tilt avoids starting orthogonal to the leading eigenspace on
/// symmetric inputs).
fn spectral_norm(
    dim: usize,
    iterations: usize,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> f64 {
    let mut x = DVector::from_fn(dim, |i, _| 1.0 + 1e-3 * i as f64);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let y = apply(&x);
        let norm = y.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        x = y / norm;
        if (norm - lambda).abs() <= 1e-13 * norm.max(1.0) {
            return norm;
        }
        lambda = norm;
    }
    lambda
}

/// Shared projected-gradient loop. `half_gradient` is the gradient of half
/// the objective (whose Lipschitz constant is the Gram spectral norm `l`),
/// `project` the exact projection onto the feasible set. The step is `1/l`;
/// if an iterate ever fails to descend (possible only when the power
/// iteration under-estimated `l`), the step is halved and the iterate
/// retried, keeping the schedule deterministic.
fn projected_gradient(
    w: &mut DVector<f64>,
    l: f64,
    settings: &SolverSettings,
    objective: impl Fn(&DVector<f64>) -> f64,
    half_gradient: impl Fn(&DVector<f64>) -> DVector<f64>,
    project: impl Fn(&mut [f64]),
) {
    let mut step = 1.0 / l;
    let mut current = objective(w);
    for _ in 0..settings.max_iterations {
        let g = half_gradient(w);
        let mut candidate = &*w - g * step;
        project(candidate.as_mut_slice());
        let next = objective(&candidate);
        if next > current {
            step *= 0.5;
            if step < 1e-300 {
                return;
            }
            continue;
        }
        let improvement = current - next;
        *w = candidate;
        current = next;
        if improvement < settings.objective_tolerance {
            return;
        }
    }
}

/// Minimum-norm least-squares solution of `a x = b` through a rank-revealing
/// singular value decomposition.
fn least_squares_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if max_sv == 0.0 {
        return Some(DVector::zeros(a.ncols()));
    }
    svd.solve(b, max_sv * 1e-13)
        .ok()
        .map(|m| m.column(0).into_owned())
}

/// Exact minimizer of the weighted objective restricted to the face where
/// only `support` is non-zero, subject to the weights summing to one (the
/// non-negativity constraints are dropped here and policed by the caller).
/// Solves the stationarity system `[2 A_S, 1; 1', 0] [w; mu] = [2 b_S; 1]`.
fn simplex_face_solution(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    vv: &DVector<f64>,
    support: &[usize],
) -> Option<Vec<f64>> {
    let n = support.len();
    let k = x0.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for p in 0..n {
        let cp = x0.column(support[p]);
        for q in p..n {
            let cq = x0.column(support[q]);
            let mut s = 0.0;
            for r in 0..k {
                s += vv[r] * cp[r] * cq[r];
            }
            m[(p, q)] = 2.0 * s;
            m[(q, p)] = 2.0 * s;
        }
        let mut s = 0.0;
        for r in 0..k {
            s += vv[r] * cp[r] * x1[r];
        }
        rhs[p] = 2.0 * s;
        m[(p, n)] = 1.0;
        m[(n, p)] = 1.0;
    }
    rhs[n] = 1.0;
    let sol = least_squares_min_norm(&m, &rhs)?;
    Some((0..n).map(|p| sol[p]).collect())
}

/// Active-set refinement of a stalled projected-gradient iterate.
///
/// When the gradient loop stops at its objective tolerance the iterate is
/// only within roughly the square root of that tolerance of the optimum. The
/// stalled support is almost always exact, though, so the face problem is
/// solved exactly there, dropping coordinates that come out negative and
/// admitting zero-weight coordinates whose partial derivative dips below the
/// face's common value, until the first-order conditions hold. The caller
/// keeps the refined point only if it does not increase the objective, so
/// this can never do worse than the gradient iterate.
fn refine_simplex(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    vv: &DVector<f64>,
    w0: &DVector<f64>,
    settings: &SolverSettings,
) -> Option<DVector<f64>> {
    let j = x0.ncols();
    let mut support: Vec<usize> = (0..j)
        .filter(|&i| w0[i] > settings.support_tolerance)
        .collect();
    if support.is_empty() {
        return None;
    }
    let mut best: Option<DVector<f64>> = None;
    for _ in 0..(2 * j + 4) {
        let sol = simplex_face_solution(x1, x0, vv, &support)?;
        let mut drop: Option<(usize, f64)> = None;
        for (pos, &val) in sol.iter().enumerate() {
            if val < -1e-10 && drop.is_none_or(|(_, worst)| val < worst) {
                drop = Some((pos, val));
            }
        }
        if let Some((pos, _)) = drop {
            if support.len() > 1 {
                support.remove(pos);
                continue;
            }
        }

        let mut full = DVector::zeros(j);
        for (pos, &i) in support.iter().enumerate() {
            full[i] = sol[pos].max(0.0);
        }
        let total: f64 = full.iter().sum();
        if total <= 0.0 {
            return best;
        }
        full /= total;

        let r = x0 * &full - x1;
        let g = x0.tr_mul(&r.component_mul(vv)) * 2.0;
        let mu = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
        let slack = 1e-9 * (1.0 + g.amax());
        let mut admit: Option<(usize, f64)> = None;
        for i in 0..j {
            if !support.contains(&i) {
                let violation = mu - g[i];
                if violation > slack && admit.is_none_or(|(_, worst)| violation > worst) {
                    admit = Some((i, violation));
                }
            }
        }
        match admit {
            Some((i, _)) => {
                best = Some(full);
                let pos = support.partition_point(|&s| s < i);
                support.insert(pos, i);
            }
            None => return Some(full),
        }
    }
    best
}

/// Face refinement for the l1-ball solver, analogous to [`refine_simplex`]:
/// an exact least-squares solve on the stalled support — unconstrained when
/// the iterate is interior to the ball, constrained to the signed boundary
/// `sum sign_i w_i = bound` otherwise — dropping coordinates whose sign
/// flips. The caller keeps the result only if feasible and not worse.
fn refine_l1(
    y1: &DVector<f64>,
    y0: &DMatrix<f64>,
    bound: f64,
    w0: &DVector<f64>,
    settings: &SolverSettings,
) -> Option<DVector<f64>> {
    let j = y0.ncols();
    let t = y0.nrows();
    let mut support: Vec<usize> = (0..j)
        .filter(|&i| w0[i].abs() > settings.support_tolerance)
        .collect();
    if support.is_empty() {
        return None;
    }

    if w0.iter().map(|x| x.abs()).sum::<f64>() < bound * (1.0 - 1e-9) {
        // Interior iterate: the constraint is slack, refine with a plain
        // least-squares solve on the support. Round-off can push an exact
        // boundary fit a few ulps outside the ball, so tolerate that and
        // clamp with the exact projection; a materially infeasible fit means
        // the optimum is on the boundary after all, handled below.
        let sub = DMatrix::from_fn(t, support.len(), |r, c| y0[(r, support[c])]);
        let sol = least_squares_min_norm(&sub, y1)?;
        let mut full = DVector::zeros(j);
        for (pos, &i) in support.iter().enumerate() {
            full[i] = sol[pos];
        }
        if full.iter().map(|x| x.abs()).sum::<f64>() <= bound * (1.0 + 1e-12) {
            project_onto_l1_ball(full.as_mut_slice(), bound);
            return Some(full);
        }
    }

    let mut signs: Vec<f64> = support.iter().map(|&i| w0[i].signum()).collect();
    for _ in 0..(j + 2) {
        let n = support.len();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for p in 0..n {
            let cp = y0.column(support[p]);
            for q in p..n {
                let s = 2.0 * cp.dot(&y0.column(support[q]));
                m[(p, q)] = s;
                m[(q, p)] = s;
            }
            rhs[p] = 2.0 * cp.dot(y1);
            m[(p, n)] = signs[p];
            m[(n, p)] = signs[p];
        }
        rhs[n] = bound;
        let sol = least_squares_min_norm(&m, &rhs)?;

        let mut drop: Option<(usize, f64)> = None;
        for p in 0..n {
            let signed = sol[p] * signs[p];
            if signed < -1e-10 && drop.is_none_or(|(_, worst)| signed < worst) {
                drop = Some((p, signed));
            }
        }
        match drop {
            Some((p, _)) if support.len() > 1 => {
                support.remove(p);
                signs.remove(p);
            }
            _ => {
                let mut full = DVector::zeros(j);
                for (pos, &i) in support.iter().enumerate() {
                    full[i] = sol[pos];
                }
                if full.iter().map(|x| x.abs()).sum::<f64>() <= bound * (1.0 + 1e-9) {
                    project_onto_l1_ball(full.as_mut_slice(), bound);
                    return Some(full);
                }
                return None;
            }
        }
    }
    None
}

/// Importance-weighted least squares over the probability simplex:
/// minimizes `sum_k v_k (x1_k - (X0 w)_k)^2` subject to `w >= 0`,
/// `sum w = 1`.
///
/// `x1` is the target profile (length K), `x0` the K-by-J donor matrix with
/// one column per donor, `v` the K non-negative row importances (used as
/// given — scaling `v` by a positive constant scales the objective linearly
/// and leaves the minimizer unchanged).
///
/// Returns the weight vector and the attained objective value.
pub fn solve_simplex_wls(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    v: &[f64],
    settings: &SolverSettings,
) -> Result<(WeightVector, f64)> {
    let k = x0.nrows();
    let j = x0.ncols();
    if x1.len() != k || v.len() != k {
        return Err(Error::InvalidSpec {
            message: format!(
                "simplex solver dimension mismatch: target {}, matrix {}x{}, importances {}",
                x1.len(),
                k,
                j,
                v.len()
            ),
        });
    }
    if j == 0 {
        return Err(Error::InvalidSpec {
            message: "simplex solver needs at least one donor column".to_string(),
        });
    }
    ensure_finite_vector("simplex target", x1)?;
    ensure_finite_matrix("simplex donor matrix", x0)?;
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::NonFiniteInput {
            what: "simplex importances".to_string(),
        });
    }

    let vv = DVector::from_column_slice(v);
    let objective = |w: &DVector<f64>| -> f64 {
        let r = x1 - x0 * w;
        r.iter().zip(vv.iter()).map(|(ri, vi)| vi * ri * ri).sum()
    };
    let half_gradient = |w: &DVector<f64>| -> DVector<f64> {
        let r = x0 * w - x1;
        x0.tr_mul(&r.component_mul(&vv))
    };

    let mut w = DVector::repeat(j, 1.0 / j as f64);
    let l = spectral_norm(j, settings.power_iterations, |z| {
        let y = x0 * z;
        x0.tr_mul(&y.component_mul(&vv))
    });
    if l > 0.0 {
        projected_gradient(&mut w, l, settings, objective, half_gradient, |slice| {
            project_onto_simplex(slice, 1.0)
        });
        if let Some(refined) = refine_simplex(x1, x0, &vv, &w, settings) {
            if refined.iter().all(|x| x.is_finite()) && objective(&refined) <= objective(&w) {
                w = refined;
            }
        }
    }
    // With a degenerate Gram matrix the objective is constant in w and the
    // uniform initial point is already optimal.

    let mut values: Vec<f64> = w.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    for x in &mut values {
        *x /= total;
    }
    let weights = WeightVector { values };
    let attained = objective(&weights.as_dvector());
    Ok((weights, attained))
}

/// Least squares over the l1 ball: minimizes `||y1 - Y0 w||^2` subject to
/// `||w||_1 <= bound`. Weights may take either sign; the schedule starts at
/// the origin, so as `bound` grows the solution approaches the minimum-norm
/// unconstrained least-squares solution.
pub fn solve_l1_ball_ls(
    y1: &DVector<f64>,
    y0: &DMatrix<f64>,
    bound: f64,
    settings: &SolverSettings,
) -> Result<(WeightVector, f64)> {
    let t = y0.nrows();
    let j = y0.ncols();
    if y1.len() != t {
        return Err(Error::InvalidSpec {
            message: format!(
                "l1 solver dimension mismatch: target {}, matrix {}x{}",
                y1.len(),
                t,
                j
            ),
        });
    }
    if j == 0 {
        return Err(Error::InvalidSpec {
            message: "l1 solver needs at least one donor column".to_string(),
        });
    }
    if !bound.is_finite() || bound <= 0.0 {
        return Err(Error::InvalidSpec {
            message: format!("l1 bound must be positive and finite, got {bound}"),
        });
    }
    ensure_finite_vector("l1 target", y1)?;
    ensure_finite_matrix("l1 donor matrix", y0)?;

    let objective = |w: &DVector<f64>| -> f64 {
        let r = y1 - y0 * w;
        r.norm_squared()
    };
    let half_gradient = |w: &DVector<f64>| -> DVector<f64> { y0.tr_mul(&(y0 * w - y1)) };

    let mut w = DVector::zeros(j);
    let l = spectral_norm(j, settings.power_iterations, |z| y0.tr_mul(&(y0 * z)));
    if l > 0.0 {
        projected_gradient(&mut w, l, settings, objective, half_gradient, |slice| {
            project_onto_l1_ball(slice, bound)
        });
        if let Some(refined) = refine_l1(y1, y0, bound, &w, settings) {
            if refined.iter().all(|x| x.is_finite()) && objective(&refined) <= objective(&w) {
                w = refined;
            }
        }
    }

    let attained = objective(&w);
    Ok((
        WeightVector {
            values: w.iter().copied().collect(),
        },
        attained,
    ))
}

/// Solution of an ordinary least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Coefficients on the columns of the regressor matrix, in column order.
    pub weights: WeightVector,
    /// Fitted intercept, when one was requested.
    pub intercept: Option<f64>,
    /// Residual sum of squares at the solution.
    pub objective: f64,
}

/// Ordinary least squares of `y1` on the columns of `y0`, optionally with an
/// intercept, solved through a rank-revealing singular value decomposition
/// (rank-deficient systems get the minimum-norm solution).
///
/// Requires strictly more rows than parameters — the intercept counts — and
/// returns [`Error::UnderdeterminedSystem`] otherwise.
pub fn solve_ols(y1: &DVector<f64>, y0: &DMatrix<f64>, with_intercept: bool) -> Result<OlsFit> {
    let rows = y0.nrows();
    let cols = y0.ncols();
    let params = cols + usize::from(with_intercept);
    if y1.len() != rows {
        return Err(Error::InvalidSpec {
            message: format!(
                "ols dimension mismatch: target {}, matrix {}x{}",
                y1.len(),
                rows,
                cols
            ),
        });
    }
    if rows <= params {
        return Err(Error::UnderdeterminedSystem { rows, params });
    }
    ensure_finite_vector("ols target", y1)?;
    ensure_finite_matrix("ols regressor matrix", y0)?;

    let design = if with_intercept {
        let mut d = DMatrix::zeros(rows, params);
        d.column_mut(0).fill(1.0);
        d.view_mut((0, 1), (rows, cols)).copy_from(y0);
        d
    } else {
        y0.clone()
    };

    let svd = design.clone().svd(true, true);
    let max_singular = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let solution = if max_singular == 0.0 {
        DVector::zeros(params)
    } else {
        let settings = SolverSettings::default();
        svd.solve(y1, max_singular * settings.rank_tolerance)
            .map_err(|message| Error::InvalidSpec {
                message: format!("singular value decomposition failed: {message}"),
            })?
            .column(0)
            .into_owned()
    };

    let residual = y1 - &design * &solution;
    let objective = residual.norm_squared();
    let (intercept, coefficients) = if with_intercept {
        (
            Some(solution[0]),
            solution.iter().skip(1).copied().collect::<Vec<f64>>(),
        )
    } else {
        (None, solution.iter().copied().collect())
    };
    Ok(OlsFit {
        weights: WeightVector {
            values: coefficients,
        },
        intercept,
        objective,
    })
}

/// First-order optimality residual of a simplex-constrained solution: the
/// spread of the objective's partial derivatives over the support (entries
/// above [`SolverSettings::support_tolerance`]), together with how far any
/// zero-weight derivative dips below the support's common value. Near zero at
/// a true constrained minimum.
pub fn simplex_kkt_residual(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    v: &[f64],
    weights: &WeightVector,
    settings: &SolverSettings,
) -> f64 {
    let vv = DVector::from_column_slice(v);
    let w = weights.as_dvector();
    let r = x0 * &w - x1;
    let gradient = x0.tr_mul(&r.component_mul(&vv)) * 2.0;

    let mut support_min = f64::INFINITY;
    let mut support_max = f64::NEG_INFINITY;
    let mut support_sum = 0.0;
    let mut support_count = 0usize;
    for (i, &wi) in weights.values.iter().enumerate() {
        if wi > settings.support_tolerance {
            support_min = support_min.min(gradient[i]);
            support_max = support_max.max(gradient[i]);
            support_sum += gradient[i];
            support_count += 1;
        }
    }
    if support_count == 0 {
        return f64::INFINITY;
    }
    let spread = support_max - support_min;
    let common = support_sum / support_count as f64;
    let mut zero_violation = 0.0_f64;
    for (i, &wi) in weights.values.iter().enumerate() {
        if wi <= settings.support_tolerance {
            zero_violation = zero_violation.max(common - gradient[i]);
        }
    }
    spread.max(zero_violation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    /// Brute-force minimum of the weighted simplex objective over the grid of
    /// weight vectors with entries in multiples of `1/steps`. Recursion keeps
    /// a running partial residual so each grid point costs O(K).
    fn grid_min_simplex(x1: &DVector<f64>, x0: &DMatrix<f64>, v: &[f64], steps: usize) -> f64 {
        fn recurse(
            x0: &DMatrix<f64>,
            v: &[f64],
            col: usize,
            remaining: usize,
            steps: usize,
            residual: &DVector<f64>,
            best: &mut f64,
        ) {
            let j = x0.ncols();
            if col == j - 1 {
                let w = remaining as f64 / steps as f64;
                let r = residual - x0.column(col) * w;
                let value: f64 = r.iter().zip(v).map(|(ri, vi)| vi * ri * ri).sum();
                if value < *best {
                    *best = value;
                }
                return;
            }
            for units in 0..=remaining {
                let w = units as f64 / steps as f64;
                let r = residual - x0.column(col) * w;
                recurse(x0, v, col + 1, remaining - units, steps, &r, best);
            }
        }
        let mut best = f64::INFINITY;
        recurse(x0, v, 0, steps, steps, &x1.clone_owned(), &mut best);
        best
    }

    #[test]
    fn exact_donor_match_returns_vertex() {
        let x0 = DMatrix::from_row_slice(3, 3, &[1.0, 4.0, 7.0, 2.0, 5.0, 8.0, 3.0, 6.0, 9.0]);
        let x1 = DVector::from_column_slice(&[7.0, 8.0, 9.0]);
        let v = vec![1.0, 1.0, 1.0];
        let (w, obj) = solve_simplex_wls(&x1, &x0, &v, &settings()).unwrap();
        assert!(obj < 1e-16, "objective {obj}");
        assert_abs_diff_eq!(w.values[2], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_interior_optimum() {
        // Single row (0, 1), target 0.3: optimum splits weight 0.7 / 0.3 and
        // fits exactly.
        let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let x1 = DVector::from_column_slice(&[0.3]);
        let (w, obj) = solve_simplex_wls(&x1, &x0, &[1.0], &settings()).unwrap();
        assert_abs_diff_eq!(w.values[0], 0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(w.values[1], 0.3, epsilon = 1e-9);
        assert!(obj < 1e-18, "objective {obj}");
    }

    #[test]
    fn scalar_boundary_optimum() {
        // Single row (1, 2), target 4: unreachable, so all weight lands on
        // the nearest column and the objective is (4 - 2)^2 = 4.
        let x0 = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let x1 = DVector::from_column_slice(&[4.0]);
        let (w, obj) = solve_simplex_wls(&x1, &x0, &[1.0], &settings()).unwrap();
        assert_abs_diff_eq!(w.values[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.values[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obj, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn importance_scaling_leaves_minimizer_scales_objective() {
        let x0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, 0.0, 1.0, 2.0]);
        let x1 = DVector::from_column_slice(&[1.3, 0.9]);
        let v1 = vec![0.4, 0.6];
        let v2 = vec![0.8, 1.2];
        let (wa, fa) = solve_simplex_wls(&x1, &x0, &v1, &settings()).unwrap();
        let (wb, fb) = solve_simplex_wls(&x1, &x0, &v2, &settings()).unwrap();
        for (a, b) in wa.values.iter().zip(&wb.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(fb, 2.0 * fa, epsilon = 1e-9 * (1.0 + fa.abs()));
    }

    #[test]
    fn degenerate_gram_returns_uniform() {
        let x0 = DMatrix::zeros(2, 3);
        let x1 = DVector::from_column_slice(&[1.0, -1.0]);
        let (w, obj) = solve_simplex_wls(&x1, &x0, &[1.0, 1.0], &settings()).unwrap();
        for x in &w.values {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(obj, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_grid_oracle_on_small_instances() {
        // Deterministic pseudo-random instances; the solver must come within
        // 1e-4 of a 0.01-step exhaustive grid and satisfy first-order
        // optimality.
        let mut state = 0x9E3779B97F4A7C15_u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for (k, j) in [(1usize, 2usize), (2, 3), (3, 4), (2, 4), (3, 3)] {
            let x0 = DMatrix::from_fn(k, j, |_, _| next());
            let x1 = DVector::from_fn(k, |_, _| next());
            let v: Vec<f64> = (0..k).map(|_| next().abs() + 0.1).collect();
            let (w, obj) = solve_simplex_wls(&x1, &x0, &v, &settings()).unwrap();
            let grid = grid_min_simplex(&x1, &x0, &v, 100);
            assert!(
                obj <= grid + 1e-4,
                "solver {obj} above grid {grid} for k={k} j={j}"
            );
            let kkt = simplex_kkt_residual(&x1, &x0, &v, &w, &settings());
            assert!(kkt < 1e-6, "kkt residual {kkt} for k={k} j={j}");
            assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
            assert!(w.values.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn l1_single_donor_clamps_to_bound() {
        // Unconstrained optimum is w = 3; the unit ball clamps it to 1 and
        // the residual (2, 2) gives objective 8.
        let y0 = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y1 = DVector::from_column_slice(&[3.0, 3.0]);
        let (w, obj) = solve_l1_ball_ls(&y1, &y0, 1.0, &settings()).unwrap();
        assert_abs_diff_eq!(w.values[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obj, 8.0, epsilon = 1e-9);
    }

    #[test]
    fn l1_exact_column_match() {
        let y0 = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
        let y1 = DVector::from_column_slice(&[5.0, 6.0, 7.0]);
        let (w, obj) = solve_l1_ball_ls(&y1, &y0, 1.0, &settings()).unwrap();
        assert!(obj < 1e-14, "objective {obj}");
        assert_abs_diff_eq!(w.values[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn l1_unit_ball_contains_simplex() {
        let mut state = 0xDEADBEEFCAFE1234_u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let t = 4;
            let j = 3;
            let y0 = DMatrix::from_fn(t, j, |_, _| next());
            let y1 = DVector::from_fn(t, |_, _| next());
            let ones = vec![1.0; t];
            let (_, simplex_obj) = solve_simplex_wls(&y1, &y0, &ones, &settings()).unwrap();
            let (_, l1_obj) = solve_l1_ball_ls(&y1, &y0, 1.0, &settings()).unwrap();
            assert!(
                l1_obj <= simplex_obj + 1e-9,
                "l1 {l1_obj} above simplex {simplex_obj}"
            );
        }
    }

    #[test]
    fn l1_interior_boundary_sits_on_the_ball() {
        // Orthogonal columns, target (1, 1): unconstrained optimum (1, 1) has
        // l1 norm 2, so with bound 0.5 the solution is (0.25, 0.25) on the
        // boundary.
        let y0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y1 = DVector::from_column_slice(&[1.0, 1.0]);
        let (w, obj) = solve_l1_ball_ls(&y1, &y0, 0.5, &settings()).unwrap();
        assert_abs_diff_eq!(w.values[0], 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(w.values[1], 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(w.l1_norm(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(obj, 2.0 * 0.75 * 0.75, epsilon = 1e-7);
    }

    #[test]
    fn l1_huge_bound_recovers_least_squares() {
        let y0 = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.5, 3.0, 1.5, 1.0]);
        let y1 = DVector::from_column_slice(&[2.0, 1.0, 3.5, 2.5]);
        let ls = solve_ols(&y1, &y0, false).unwrap();
        let (w, obj) = solve_l1_ball_ls(&y1, &y0, 1e6, &settings()).unwrap();
        for (a, b) in w.values.iter().zip(&ls.weights.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(obj, ls.objective, epsilon = 1e-8);
    }

    #[test]
    fn ols_single_column_projects_onto_it() {
        // Regressing (1, 2, 3) on a column of ones without intercept gives
        // the mean coefficient 2 and residual sum of squares 2.
        let y0 = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y1 = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let fit = solve_ols(&y1, &y0, false).unwrap();
        assert_abs_diff_eq!(fit.weights.values[0], 2.0, epsilon = 1e-12);
        assert!(fit.intercept.is_none());
        assert_abs_diff_eq!(fit.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_square_system_is_underdetermined() {
        let y0 = DMatrix::identity(3, 3);
        let y1 = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        match solve_ols(&y1, &y0, false) {
            Err(Error::UnderdeterminedSystem { rows: 3, params: 3 }) => {}
            other => panic!("expected underdetermined system, got {other:?}"),
        }
    }

    #[test]
    fn ols_recovers_affine_combination() {
        let d1 = [1.0, 2.0, 4.0, 7.0, 11.0];
        let d2 = [3.0, 1.0, 5.0, 2.0, 8.0];
        let y0 = DMatrix::from_fn(5, 2, |r, c| if c == 0 { d1[r] } else { d2[r] });
        let y1 = DVector::from_fn(5, |r, _| 2.0 * d1[r] - d2[r] + 5.0);
        let fit = solve_ols(&y1, &y0, true).unwrap();
        assert_abs_diff_eq!(fit.intercept.unwrap(), 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.weights.values[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.weights.values[1], -1.0, epsilon = 1e-9);
        assert!(fit.objective < 1e-16);
    }

    #[test]
    fn simplex_projection_frozen_example() {
        let mut v = vec![0.8, 1.6];
        project_onto_simplex(&mut v, 1.0);
        assert_abs_diff_eq!(v[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let x0 = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let x1 = DVector::from_column_slice(&[1.0]);
        assert!(matches!(
            solve_simplex_wls(&x1, &x0, &[1.0], &settings()),
            Err(Error::NonFiniteInput { .. })
        ));
        let y0 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y1 = DVector::from_column_slice(&[f64::INFINITY]);
        assert!(matches!(
            solve_l1_ball_ls(&y1, &y0, 1.0, &settings()),
            Err(Error::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn spectral_norm_matches_known_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let lambda = spectral_norm(2, 200, |x| &a * x);
        assert_abs_diff_eq!(lambda, 3.0, epsilon = 1e-9);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn simplex_projection_is_feasible(values in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
                let mut v = values;
                project_onto_simplex(&mut v, 1.0);
                let sum: f64 = v.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(v.iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn simplex_projection_fixes_feasible_points(raw in proptest::collection::vec(0.01f64..1.0, 2..8)) {
                let total: f64 = raw.iter().sum();
                let original: Vec<f64> = raw.iter().map(|x| x / total).collect();
                let mut projected = original.clone();
                project_onto_simplex(&mut projected, 1.0);
                for (a, b) in original.iter().zip(&projected) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn l1_projection_never_exceeds_radius(values in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
                let mut v = values;
                project_onto_l1_ball(&mut v, 1.0);
                let l1: f64 = v.iter().map(|x| x.abs()).sum();
                prop_assert!(l1 <= 1.0 + 1e-9);
            }
        }
    }
}
