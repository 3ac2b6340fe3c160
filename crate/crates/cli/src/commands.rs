//! The six subcommands and the artifact conventions they share.
//!
//! Every command writes a flat set of files into the output directory and
//! finishes with a `manifest.json` naming the command, the SHA-256
//! fingerprint of the config that produced the run, the seed (when one was
//! in play), and the SHA-256 of every other file written. Nothing
//! time-dependent or machine-dependent goes into any artifact, so rerunning
//! a command with the same config produces a byte-identical directory — at
//! any `--jobs` setting, since all parallel reductions are order-preserving.
//!
//! File naming is uniform: per-outcome artifacts carry the outcome key in
//! the name (`fit_numeracy_y3.json`, `placebo_reading_y5.svg`); study-wide
//! artifacts have bare names (`pvalues.csv`, `loo.csv`, `manifest.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use scm_core::analysis::{
    default_windows, leave_one_out, percentile_table, sensitivity_sweep, summarize_effect,
    EffectSummary, SweepCell,
};
use scm_core::estimators::{fit, EstimatorTag, ProblemSpec, ScmFit};
use scm_core::inference::{run_placebo, test_sharp_null, NullTestRecord, PlaceboStudy};
use scm_core::panel::format_float;
use scm_core::report::{
    render_balance_table, render_loo_table, render_path_figure, render_percentile_table,
    render_placebo_figure, render_pvalue_table, render_weights_table, Figure, ReportBundle, Table,
    WEIGHT_DISPLAY_THRESHOLD,
};
use scm_core::simgen::{generate, write_bundle};
use scm_core::{Error, Result};

use crate::config::LoadedConfig;
use crate::study::{load_study, Study};

/// Collects output files and closes the run with a manifest.
pub struct Artifacts {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    seed: Option<u64>,
    outputs: &'a BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Artifacts> {
        std::fs::create_dir_all(dir).map_err(|e| Error::InvalidSpec {
            message: format!("cannot create output directory {}: {e}", dir.display()),
        })?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            digests: BTreeMap::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::InvalidSpec {
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        self.digests
            .insert(name.to_string(), format!("{:x}", Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value).expect("artifacts serialize");
        self.write_bytes(name, (json + "\n").as_bytes())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write_bytes(name, table.to_csv().as_bytes())
    }

    pub fn write_figure(&mut self, stem: &str, figure: &Figure) -> Result<()> {
        self.write_bytes(&format!("{stem}.svg"), figure.svg.as_bytes())?;
        self.write_bytes(&format!("{stem}.csv"), figure.series.as_bytes())
    }

    /// Hashes a file some other writer produced in the output directory.
    pub fn absorb(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::InvalidSpec {
            message: format!("cannot read back {}: {e}", path.display()),
        })?;
        self.digests
            .insert(name.to_string(), format!("{:x}", Sha256::digest(&bytes)));
        Ok(())
    }

    /// Writes `manifest.json` and consumes the collector.
    pub fn finish(self, command: &str, fingerprint: &str, seed: Option<u64>) -> Result<()> {
        let manifest = Manifest {
            command,
            config_sha256: fingerprint,
            seed,
            outputs: &self.digests,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, json + "\n").map_err(|e| Error::InvalidSpec {
            message: format!("cannot write {}: {e}", path.display()),
        })
    }
}

/// The effect summaries for a fit: always the full post window, plus the
/// strict window when the index reaches it.
fn window_summaries(
    study: &Study,
    spec: &ProblemSpec,
    fit_result: &ScmFit,
) -> Result<Vec<EffectSummary>> {
    let problem = spec.build(&study.panel, &study.pool)?;
    let windows = default_windows(study.treatment_year, &study.panel.periods);
    let mut summaries = vec![summarize_effect(
        &problem,
        fit_result,
        windows.full_post,
        study.sd_mode,
    )?];
    if !windows.strict_3yr_empty {
        summaries.push(summarize_effect(
            &problem,
            fit_result,
            windows.strict_3yr,
            study.sd_mode,
        )?);
    }
    Ok(summaries)
}

fn fit_one(study: &Study, spec: &ProblemSpec, estimator: EstimatorTag) -> Result<ScmFit> {
    let problem = spec.build(&study.panel, &study.pool)?;
    fit(&problem, estimator, &study.options)
}

/// Fits the main specification on every outcome; writes the fit report,
/// weight and balance tables, effect summaries, and the path figure per
/// outcome, plus the donor pool itself.
pub fn cmd_fit(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let study = load_study(loaded)?;
    let mut out = Artifacts::create(out_dir)?;
    out.write_json("pool.json", &study.pool)?;
    for (outcome, spec) in study.outcomes.iter().zip(&study.specs) {
        let fit_result = fit_one(&study, spec, study.estimator)?;
        out.write_json(&format!("fit_{outcome}.json"), &fit_result)?;
        out.write_table(
            &format!("weights_{outcome}.csv"),
            &render_weights_table(&study.panel, &study.pool, &fit_result),
        )?;
        if fit_result.diagnostics.contains_key("balance") {
            out.write_table(
                &format!("balance_{outcome}.csv"),
                &render_balance_table(&fit_result)?,
            )?;
        }
        out.write_json(
            &format!("effects_{outcome}.json"),
            &window_summaries(&study, spec, &fit_result)?,
        )?;
        out.write_figure(
            &format!("path_{outcome}"),
            &render_path_figure(&fit_result, study.treatment_year),
        )?;
    }
    out.finish("fit", &loaded.fingerprint, seed)
}

/// Runs the placebo permutation study on every outcome; writes the study,
/// the spaghetti figure, the cross-outcome p-value table, and the sharp-null
/// verdicts.
pub fn cmd_placebo(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let study = load_study(loaded)?;
    let mut out = Artifacts::create(out_dir)?;
    let mut studies: Vec<PlaceboStudy> = Vec::new();
    let mut verdicts: BTreeMap<String, NullTestRecord> = BTreeMap::new();
    for (outcome, spec) in study.outcomes.iter().zip(&study.specs) {
        let placebo = run_placebo(
            &study.panel,
            &study.pool,
            spec,
            study.placebo_estimator,
            &study.options,
        )?;
        out.write_json(&format!("placebo_{outcome}.json"), &placebo)?;
        out.write_figure(
            &format!("placebo_{outcome}"),
            &render_placebo_figure(&placebo, study.treatment_year),
        )?;
        verdicts.insert(outcome.clone(), test_sharp_null(&placebo, study.alpha)?);
        studies.push(placebo);
    }
    out.write_table("pvalues.csv", &render_pvalue_table(&studies))?;
    out.write_json("null_tests.json", &verdicts)?;
    out.finish("placebo", &loaded.fingerprint, seed)
}

/// Runs the leave-one-out study over the top-weight donors; writes the full
/// study and its aggregate table.
pub fn cmd_loo(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let study = load_study(loaded)?;
    let mut out = Artifacts::create(out_dir)?;
    let loo = leave_one_out(
        &study.panel,
        &study.pool,
        &study.specs,
        &study.options,
        study.loo_k,
        study.sd_mode,
    )?;
    out.write_json("loo.json", &loo)?;
    out.write_table("loo.csv", &render_loo_table(&loo))?;
    out.finish("loo", &loaded.fingerprint, seed)
}

/// One row of the sweep table per estimator × outcome cell.
fn render_sweep_table(cells: &[SweepCell]) -> Table {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut att_full = String::new();
        let mut att_strict = String::new();
        for summary in &cell.summaries {
            let formatted = format!("{:.2}", summary.att_points);
            // The strict window starts later than the full post window.
            if att_full.is_empty() {
                att_full = formatted;
            } else {
                att_strict = formatted;
            }
        }
        rows.push(vec![
            cell.estimator.as_str().to_string(),
            cell.outcome_key.clone(),
            att_full,
            att_strict,
            cell.fit
                .as_ref()
                .map(|f| format_float(f.pre_mspe))
                .unwrap_or_default(),
            cell.error.clone().unwrap_or_default(),
        ]);
    }
    Table {
        title: "Estimator sensitivity".to_string(),
        header: vec![
            "estimator".to_string(),
            "outcome".to_string(),
            "att_full_post".to_string(),
            "att_strict_3yr".to_string(),
            "pre_mspe".to_string(),
            "error".to_string(),
        ],
        rows,
        notes: vec![],
    }
}

/// Re-estimates every outcome under each alternative estimator; writes the
/// sweep cells and a flat summary table.
pub fn cmd_sensitivity(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let study = load_study(loaded)?;
    let mut out = Artifacts::create(out_dir)?;
    let sweep = sensitivity_sweep(
        &study.panel,
        &study.pool,
        &study.specs,
        &study.options,
        study.sd_mode,
    );
    out.write_json("sweep.json", &sweep)?;
    out.write_table("sweep.csv", &render_sweep_table(&sweep.cells))?;
    out.finish("sensitivity", &loaded.fingerprint, seed)
}

/// Generates a synthetic panel bundle from the configured DGP. The `--seed`
/// flag (or `output.seed`) overrides the DGP's own seed.
pub fn cmd_simulate(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = loaded.config.simulate()?.clone();
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let bundle = generate(&spec)?;
    let mut out = Artifacts::create(out_dir)?;
    let written = write_bundle(&bundle, out_dir)?;
    for name in &written {
        out.absorb(name)?;
    }
    out.finish("simulate", &loaded.fingerprint, Some(spec.seed))
}

/// Units the percentile table ranks when the config does not name any: the
/// treated unit, then the donors the weights table displays, highest weight
/// first.
fn displayed_units(study: &Study, main_fit: &ScmFit) -> Vec<String> {
    let mut order: Vec<usize> = (0..main_fit.weights.values.len()).collect();
    order.sort_by(|&a, &b| {
        main_fit.weights.values[b]
            .partial_cmp(&main_fit.weights.values[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let mut units = vec![study.pool.treated.clone()];
    for d in order {
        if main_fit.weights.values[d] >= WEIGHT_DISPLAY_THRESHOLD {
            units.push(study.pool.donors[d].clone());
        }
    }
    units
}

/// Runs the full pipeline — fits, placebo inference, leave-one-out,
/// percentiles — and renders everything into one report bundle. The weights
/// and balance tables come from the first configured outcome's fit, the
/// specification the study is anchored on.
pub fn cmd_report(loaded: &LoadedConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let study = load_study(loaded)?;
    let mut out = Artifacts::create(out_dir)?;

    let mut bundle = ReportBundle::default();
    let mut main_fit: Option<ScmFit> = None;
    for (outcome, spec) in study.outcomes.iter().zip(&study.specs) {
        let fit_result = fit_one(&study, spec, study.estimator)?;
        bundle
            .effects
            .extend(window_summaries(&study, spec, &fit_result)?);
        let figure = render_path_figure(&fit_result, study.treatment_year);
        out.write_figure(&format!("path_{outcome}"), &figure)?;
        bundle.figures.insert(format!("path_{outcome}"), figure);
        if main_fit.is_none() {
            bundle.weights = Some(render_weights_table(&study.panel, &study.pool, &fit_result));
            if fit_result.diagnostics.contains_key("balance") {
                bundle.balance = Some(render_balance_table(&fit_result)?);
            }
            main_fit = Some(fit_result);
        }
    }
    let main_fit = main_fit.expect("load_study guarantees at least one outcome");

    let mut studies: Vec<PlaceboStudy> = Vec::new();
    for (outcome, spec) in study.outcomes.iter().zip(&study.specs) {
        let placebo = run_placebo(
            &study.panel,
            &study.pool,
            spec,
            study.placebo_estimator,
            &study.options,
        )?;
        let figure = render_placebo_figure(&placebo, study.treatment_year);
        out.write_figure(&format!("placebo_{outcome}"), &figure)?;
        bundle.figures.insert(format!("placebo_{outcome}"), figure);
        studies.push(placebo);
    }
    bundle.p_values = Some(render_pvalue_table(&studies));

    let loo = leave_one_out(
        &study.panel,
        &study.pool,
        &study.specs,
        &study.options,
        study.loo_k,
        study.sd_mode,
    )?;

    let units = study
        .percentile_units
        .clone()
        .unwrap_or_else(|| displayed_units(&study, &main_fit));
    let percentiles = percentile_table(
        &study.panel,
        &study.pool,
        &units,
        &study.outcomes,
        study.treatment_year,
    )?;

    if let Some(weights) = &bundle.weights {
        out.write_table("weights.csv", weights)?;
    }
    if let Some(balance) = &bundle.balance {
        out.write_table("balance.csv", balance)?;
    }
    out.write_json("effects.json", &bundle.effects)?;
    if let Some(p_values) = &bundle.p_values {
        out.write_table("pvalues.csv", p_values)?;
    }
    out.write_table("loo.csv", &render_loo_table(&loo))?;
    out.write_table(
        "percentiles.csv",
        &render_percentile_table(&study.panel, &percentiles, &study.outcomes),
    )?;
    out.write_json("report.json", &bundle)?;
    out.finish("report", &loaded.fingerprint, seed)
}
