//! Microbenchmarks for the numerical kernels: the simplex and l1-ball
//! solvers at study-like sizes, and the best-subset regression search.
//!
//! Run under both feature configurations to compare the data-parallel and
//! sequential builds:
//!
//! ```text
//! cargo bench -p scm-core
//! cargo bench -p scm-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use scm_core::estimators::{fit, EstimatorOptions, EstimatorTag, ProblemSpec};
use scm_core::panel::PanelDataset;
use scm_core::pool::DonorPool;
use scm_core::simgen::{generate, DgpSpec, OutcomeRule};
use scm_core::solver::{solve_l1_ball_ls, solve_simplex_wls, SolverSettings};
use std::collections::BTreeMap;
use std::hint::black_box;

/// Deterministic dense instance: smooth but full-rank entries.
fn instance(k: usize, j: usize) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
    let x0 = DMatrix::from_fn(k, j, |r, c| {
        ((r * 31 + c * 17) as f64 * 0.37).sin() + 0.05 * (r as f64 - c as f64)
    });
    let x1 = DVector::from_fn(k, |r, _| ((r * 13) as f64 * 0.29).cos() * 0.8);
    let v = (0..k)
        .map(|r| 0.5 + (r as f64 * 0.61).sin().abs())
        .collect();
    (x1, x0, v)
}

fn study_panel(n_units: usize, n_years: i32, seed: u64) -> (PanelDataset, DonorPool) {
    let spec = DgpSpec {
        n_units,
        start_year: 2000,
        end_year: 2000 + n_years - 1,
        gap_year: None,
        outcomes: vec![OutcomeRule {
            key: "score".to_string(),
            base_level: 60.0,
            unit_sd: 8.0,
            effect_scale: 1.0,
        }],
        n_factors: 3,
        loading_scale: 8.0,
        noise_sd: 4.0,
        treated_id: "S001".to_string(),
        effect: BTreeMap::new(),
        covariates: Vec::new(),
        geo: None,
        hull_mixture: None,
        seed,
    };
    let bundle = generate(&spec).expect("benchmark panel generates");
    let donors = bundle
        .panel
        .units
        .iter()
        .map(|u| u.id.clone())
        .filter(|id| id != "S001")
        .collect();
    let pool = DonorPool {
        treated: "S001".to_string(),
        donors,
        features: BTreeMap::new(),
        warnings: Vec::new(),
    };
    (bundle.panel, pool)
}

fn bench_simplex_solver(c: &mut Criterion) {
    let settings = SolverSettings::default();
    for (k, j) in [(4, 20), (9, 108)] {
        let (x1, x0, v) = instance(k, j);
        c.bench_function(&format!("solve_simplex_wls_{k}x{j}"), |b| {
            b.iter(|| {
                solve_simplex_wls(black_box(&x1), black_box(&x0), black_box(&v), &settings)
                    .expect("solves")
            })
        });
    }
}

fn bench_l1_ball_solver(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let (x1, x0, _) = instance(9, 108);
    c.bench_function("solve_l1_ball_ls_9x108", |b| {
        b.iter(|| {
            solve_l1_ball_ls(black_box(&x1), black_box(&x0), black_box(1.0), &settings)
                .expect("solves")
        })
    });
}

fn bench_subset_regression(c: &mut Criterion) {
    // Four pre-periods over a hundred-donor pool: the regression estimator
    // enumerates every two-donor subset, the pipeline's hot inner loop.
    let (panel, pool) = study_panel(109, 12, 4242);
    let problem = ProblemSpec {
        outcome_key: "score".to_string(),
        treatment_year: 2004,
        covariate_keys: Vec::new(),
        settings: SolverSettings::default(),
    }
    .build(&panel, &pool)
    .expect("problem builds");
    let options = EstimatorOptions::default();
    c.bench_function("hsiao_best_subset_109_units", |b| {
        b.iter(|| fit(black_box(&problem), EstimatorTag::HsiaoOls, &options).expect("fits"))
    });
}

criterion_group!(
    kernels,
    bench_simplex_solver,
    bench_l1_ball_solver,
    bench_subset_regression
);
criterion_main!(kernels);
