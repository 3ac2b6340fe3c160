//! Table and figure rendering.
//!
//! Every renderer turns an already-computed result — a fit, a placebo
//! study, a leave-one-out study, a percentile table — into a [`Table`] of
//! formatted strings or a [`Figure`] holding a self-contained SVG plus the
//! delimited series behind it. No renderer performs arithmetic beyond
//! rounding: each printed number is recomputable from the serialized input
//! it was rendered from.
//!
//! Tables serialize as comma-separated text with a header row; notes follow
//! the data as `# `-prefixed trailer lines. Figures are SVG 1.1 documents
//! with a fixed 800×500 viewBox, axis ticks on a 1–2–5 ladder, and a dashed
//! vertical rule at the treatment year, so reruns are byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{EffectSummary, LooStudy, PercentileTable};
use crate::error::{Error, Result};
use crate::estimators::ScmFit;
use crate::inference::PlaceboStudy;
use crate::panel::{format_float, PanelDataset};
use crate::pool::DonorPool;

/// Donor weights below this are omitted from the weights table.
pub const WEIGHT_DISPLAY_THRESHOLD: f64 = 0.0005;

/// A rendered table: formatted cells plus explanatory notes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    /// Comma-separated text: header, rows, then one `# ` line per note.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        for note in &self.notes {
            out.push_str("# ");
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

/// A rendered figure: the SVG document and the series file behind it
/// (header `unit_id,year,value,role`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Figure {
    pub svg: String,
    pub series: String,
}

/// Everything one reporting pass produces for an outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportBundle {
    pub weights: Option<Table>,
    pub balance: Option<Table>,
    pub effects: Vec<EffectSummary>,
    pub p_values: Option<Table>,
    pub figures: BTreeMap<String, Figure>,
}

fn unit_name(panel: &PanelDataset, id: &str) -> String {
    panel
        .unit_index(id)
        .map(|u| panel.units[u].name.clone())
        .unwrap_or_else(|| id.to_string())
}

/// Renders the donor-weight table: one row per donor at or above
/// [`WEIGHT_DISPLAY_THRESHOLD`], descending by weight (pool order breaks
/// ties), weights to three decimals.
pub fn render_weights_table(panel: &PanelDataset, pool: &DonorPool, fit: &ScmFit) -> Table {
    let mut order: Vec<usize> = (0..fit.weights.values.len()).collect();
    order.sort_by(|&a, &b| {
        fit.weights.values[b]
            .partial_cmp(&fit.weights.values[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let mut rows = Vec::new();
    let mut omitted = 0usize;
    for &d in &order {
        let w = fit.weights.values[d];
        if w >= WEIGHT_DISPLAY_THRESHOLD {
            rows.push(vec![unit_name(panel, &pool.donors[d]), format!("{w:.3}")]);
        } else {
            omitted += 1;
        }
    }
    let mut notes = vec!["Weights sum to one, although rounded values may not.".to_string()];
    if omitted > 0 {
        notes.push(format!(
            "{omitted} donors with weight below {WEIGHT_DISPLAY_THRESHOLD} omitted."
        ));
    }
    Table {
        title: format!("Donors used to construct synthetic {}", fit.treated_id),
        header: vec!["school_name".to_string(), "weight".to_string()],
        rows,
        notes,
    }
}

/// Renders the covariate balance table from the fit's `balance` diagnostics
/// (recorded by the nested estimator at fit time), two decimals per cell.
pub fn render_balance_table(fit: &ScmFit) -> Result<Table> {
    let balance = fit
        .diagnostics
        .get("balance")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::InvalidSpec {
            message: format!(
                "fit for '{}' carries no covariate balance diagnostics",
                fit.treated_id
            ),
        })?;
    let mut rows = Vec::with_capacity(balance.len());
    for entry in balance {
        let field = |key: &str| -> Result<f64> {
            entry
                .get(key)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::InvalidSpec {
                    message: format!("balance diagnostics entry lacks '{key}'"),
                })
        };
        let covariate = entry
            .get("covariate")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::InvalidSpec {
                message: "balance diagnostics entry lacks 'covariate'".to_string(),
            })?;
        rows.push(vec![
            covariate.to_string(),
            format!("{:.2}", field("treated")?),
            format!("{:.2}", field("synthetic")?),
        ]);
    }
    Ok(Table {
        title: format!("Covariate balance for {}", fit.treated_id),
        header: vec![
            "covariate".to_string(),
            "treated".to_string(),
            "synthetic".to_string(),
        ],
        rows,
        notes: vec!["Synthetic values are the weight-averaged donor covariates.".to_string()],
    })
}

/// Splits an outcome key of the form `<subject>_y<digits>` into subject and
/// year-level parts.
fn split_outcome_key(key: &str) -> Option<(&str, u32)> {
    let (subject, year) = key.rsplit_once("_y")?;
    if subject.is_empty() || year.is_empty() {
        return None;
    }
    year.parse().ok().map(|y| (subject, y))
}

/// Renders the exact p-value table. Outcome keys shaped `<subject>_y<digits>`
/// pivot into a subject-by-year matrix (subjects in first-appearance order,
/// year columns ascending); if any key has another shape, the table falls
/// back to one flat `outcome,p_value` row per study. Three decimals.
pub fn render_pvalue_table(studies: &[PlaceboStudy]) -> Table {
    let parsed: Option<Vec<(&str, u32, f64)>> = studies
        .iter()
        .map(|s| split_outcome_key(&s.outcome_key).map(|(subj, y)| (subj, y, s.p_value)))
        .collect();
    let title = "Exact p-values".to_string();
    match parsed {
        Some(cells) => {
            let mut subjects: Vec<&str> = Vec::new();
            for (subject, _, _) in &cells {
                if !subjects.contains(subject) {
                    subjects.push(subject);
                }
            }
            let mut years: Vec<u32> = cells.iter().map(|&(_, y, _)| y).collect();
            years.sort_unstable();
            years.dedup();
            let mut header = vec!["subject".to_string()];
            header.extend(years.iter().map(|y| format!("year_{y}")));
            let rows = subjects
                .iter()
                .map(|subject| {
                    let mut row = vec![subject.to_string()];
                    for &year in &years {
                        let cell = cells
                            .iter()
                            .find(|&&(s, y, _)| s == *subject && y == year)
                            .map(|&(_, _, p)| format!("{p:.3}"))
                            .unwrap_or_default();
                        row.push(cell);
                    }
                    row
                })
                .collect();
            Table {
                title,
                header,
                rows,
                notes: vec![],
            }
        }
        None => Table {
            title,
            header: vec!["outcome".to_string(), "p_value".to_string()],
            rows: studies
                .iter()
                .map(|s| vec![s.outcome_key.clone(), format!("{:.3}", s.p_value)])
                .collect(),
            notes: vec![],
        },
    }
}

/// Renders the leave-one-out aggregate table: one column per outcome, three
/// rows — mean, `(sd)`, `[min, max]` — all to two decimals.
pub fn render_loo_table(study: &LooStudy) -> Table {
    let header: Vec<String> = study
        .aggregates
        .iter()
        .map(|a| a.outcome_key.clone())
        .collect();
    let means = study
        .aggregates
        .iter()
        .map(|a| format!("{:.2}", a.mean))
        .collect();
    let sds = study
        .aggregates
        .iter()
        .map(|a| format!("({:.2})", a.sd))
        .collect();
    let ranges = study
        .aggregates
        .iter()
        .map(|a| format!("[{:.2}, {:.2}]", a.min, a.max))
        .collect();
    Table {
        title: "Leave-one-out estimates".to_string(),
        header,
        rows: vec![means, sds, ranges],
        notes: vec![format!(
            "Average effect over {}..={} across {} refits, each excluding one of: {}.",
            study.window.start,
            study.window.end,
            study.runs.len(),
            study.ranked_donors.join(", ")
        )],
    }
}

/// Renders the percentile table: one row per unit, and `pre`/`post`/`diff`
/// integer columns per outcome key, in the given key order.
pub fn render_percentile_table(
    panel: &PanelDataset,
    table: &PercentileTable,
    outcome_keys: &[String],
) -> Table {
    let mut units: Vec<&str> = Vec::new();
    for row in &table.rows {
        if !units.contains(&row.unit.as_str()) {
            units.push(&row.unit);
        }
    }
    let by_cell: BTreeMap<(&str, &str), &crate::analysis::PercentileRow> = table
        .rows
        .iter()
        .map(|r| ((r.unit.as_str(), r.outcome_key.as_str()), r))
        .collect();
    let mut header = vec!["school_name".to_string()];
    for key in outcome_keys {
        header.push(format!("{key}_pre"));
        header.push(format!("{key}_post"));
        header.push(format!("{key}_diff"));
    }
    let rows = units
        .iter()
        .map(|unit| {
            let mut row = vec![unit_name(panel, unit)];
            for key in outcome_keys {
                match by_cell.get(&(*unit, key.as_str())) {
                    Some(r) => {
                        row.push(r.pre_percentile.to_string());
                        row.push(r.post_percentile.to_string());
                        row.push(r.difference.to_string());
                    }
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    Table {
        title: "Performance percentiles".to_string(),
        header,
        rows,
        notes: vec![format!(
            "Percentiles are ranked within the {}-unit comparison population, split at {}.",
            table.population, table.split_year
        )],
    }
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

const FIG_WIDTH: f64 = 800.0;
const FIG_HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;

/// Smallest step from the 1–2–5 ladder giving at most `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    for multiple in [1.0, 2.0, 5.0, 10.0] {
        if magnitude * multiple >= raw {
            return magnitude * multiple;
        }
    }
    magnitude * 10.0
}

/// Tick positions covering [min, max] on the nice-step grid.
fn ticks(min: f64, max: f64, target: usize) -> (Vec<f64>, f64) {
    let step = nice_step(max - min, target);
    let first = (min / step).ceil() as i64;
    let last = (max / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

/// Tick label with just enough decimals for the step size.
fn tick_label(value: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{value:.decimals$}")
}

/// Linear data-to-pixel mapping over the plot area.
struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Pads degenerate ranges so flat series (zero gaps) still plot.
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Frame {
        let (x_min, x_max) = if x_max - x_min < 1e-9 {
            (x_min - 1.0, x_max + 1.0)
        } else {
            (x_min, x_max)
        };
        let (y_min, y_max) = if y_max - y_min < 1e-9 {
            (y_min - 1.0, y_max + 1.0)
        } else {
            let pad = 0.05 * (y_max - y_min);
            (y_min - pad, y_max + pad)
        };
        Frame {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT
            + (v - self.x_min) / (self.x_max - self.x_min)
                * (FIG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        FIG_HEIGHT
            - MARGIN_BOTTOM
            - (v - self.y_min) / (self.y_max - self.y_min)
                * (FIG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn polyline(points: &[(f64, f64)], frame: &Frame, class: &str, style: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.x(x), frame.y(y)))
        .collect();
    format!(
        "  <polyline class=\"{class}\" points=\"{}\" fill=\"none\" {style}/>\n",
        coords.join(" ")
    )
}

/// Shared SVG scaffolding: opens the document, paints axes, ticks, and the
/// treatment-year rule; `body` carries the data marks; `legend` labels them.
fn svg_document(
    frame: &Frame,
    treatment_year: i32,
    y_label: &str,
    body: &str,
    legend: &[(&str, &str)],
) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         viewBox=\"0 0 {FIG_WIDTH} {FIG_HEIGHT}\" width=\"{FIG_WIDTH}\" height=\"{FIG_HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{FIG_WIDTH}\" height=\"{FIG_HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));

    let plot_bottom = FIG_HEIGHT - MARGIN_BOTTOM;
    let plot_right = FIG_WIDTH - MARGIN_RIGHT;

    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{plot_bottom}\" x2=\"{plot_right}\" y2=\"{plot_bottom}\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{plot_bottom}\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));

    // X ticks (years): integer steps.
    let (x_ticks, x_step) = ticks(frame.x_min, frame.x_max, 8);
    for &t in &x_ticks {
        let x = frame.x(t);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{plot_bottom}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            plot_bottom + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\" text-anchor=\"middle\">{}</text>\n",
            plot_bottom + 20.0,
            tick_label(t, x_step.max(1.0))
        ));
    }

    // Y ticks.
    let (y_ticks, y_step) = ticks(frame.y_min, frame.y_max, 6);
    for &t in &y_ticks {
        let y = frame.y(t);
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 9.0,
            y + 4.0,
            tick_label(t, y_step)
        ));
        // Light grid line.
        svg.push_str(&format!(
            "  <line x1=\"{MARGIN_LEFT}\" y1=\"{y:.2}\" x2=\"{plot_right}\" y2=\"{y:.2}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>\n"
        ));
    }

    // Treatment-year rule.
    let rule_x = frame.x(treatment_year as f64);
    svg.push_str(&format!(
        "  <line class=\"treatment-rule\" x1=\"{rule_x:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{rule_x:.2}\" y2=\"{plot_bottom}\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n"
    ));

    if !y_label.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#333333\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
            (MARGIN_TOP + plot_bottom) / 2.0,
            (MARGIN_TOP + plot_bottom) / 2.0,
            y_label
        ));
    }

    svg.push_str(body);

    for (i, (label, color)) in legend.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            MARGIN_LEFT + 12.0,
            MARGIN_LEFT + 40.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\">{label}</text>\n",
            MARGIN_LEFT + 46.0,
            y + 4.0
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn series_header() -> String {
    "unit_id,year,value,role\n".to_string()
}

fn series_row(unit: &str, year: i32, value: f64, role: &str) -> String {
    format!("{unit},{year},{},{role}\n", format_float(value))
}

/// Renders the treated-versus-synthetic path figure for one fit. The series
/// file carries both paths (roles `observed` and `synthetic`).
pub fn render_path_figure(fit: &ScmFit, treatment_year: i32) -> Figure {
    let years: Vec<f64> = fit.periods.iter().map(|&y| y as f64).collect();
    let values: Vec<f64> = fit
        .observed
        .iter()
        .chain(fit.counterfactual.iter())
        .copied()
        .collect();
    let y_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(years[0], years[years.len() - 1], y_min, y_max);

    let observed: Vec<(f64, f64)> = years
        .iter()
        .zip(fit.observed.iter())
        .map(|(&x, &y)| (x, y))
        .collect();
    let synthetic: Vec<(f64, f64)> = years
        .iter()
        .zip(fit.counterfactual.iter())
        .map(|(&x, &y)| (x, y))
        .collect();
    let mut body = String::new();
    body.push_str(&polyline(
        &synthetic,
        &frame,
        "synthetic",
        "stroke=\"#777777\" stroke-width=\"2\" stroke-dasharray=\"6,3\"",
    ));
    body.push_str(&polyline(
        &observed,
        &frame,
        "treated",
        "stroke=\"#1f4e9c\" stroke-width=\"2.5\"",
    ));

    let outcome = fit
        .diagnostics
        .get("outcome")
        .and_then(|v| v.as_str())
        .unwrap_or("");
    let svg = svg_document(
        &frame,
        treatment_year,
        outcome,
        &body,
        &[("treated", "#1f4e9c"), ("synthetic", "#777777")],
    );

    let mut series = series_header();
    for (p, &year) in fit.periods.iter().enumerate() {
        series.push_str(&series_row(
            &fit.treated_id,
            year,
            fit.observed[p],
            "observed",
        ));
    }
    for (p, &year) in fit.periods.iter().enumerate() {
        series.push_str(&series_row(
            &fit.treated_id,
            year,
            fit.counterfactual[p],
            "synthetic",
        ));
    }
    Figure { svg, series }
}

/// Renders the placebo gap spaghetti for one study: one polyline per entry,
/// the treated unit highlighted on top. The series file has one row per
/// entry and period (roles `treated` and `placebo`).
pub fn render_placebo_figure(study: &PlaceboStudy, treatment_year: i32) -> Figure {
    let years: Vec<f64> = study.periods.iter().map(|&y| y as f64).collect();
    let all_gaps = study.entries.iter().flat_map(|e| e.gaps.iter().copied());
    let y_min = all_gaps.clone().fold(f64::INFINITY, f64::min);
    let y_max = all_gaps.fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(
        years[0],
        years[years.len() - 1],
        y_min.min(0.0),
        y_max.max(0.0),
    );

    let mut body = String::new();
    // Zero-gap reference line.
    let zero_y = frame.y(0.0);
    body.push_str(&format!(
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{zero_y:.2}\" x2=\"{:.2}\" y2=\"{zero_y:.2}\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n",
        FIG_WIDTH - MARGIN_RIGHT
    ));
    for (i, entry) in study.entries.iter().enumerate() {
        if i == study.treated_entry {
            continue;
        }
        let points: Vec<(f64, f64)> = years
            .iter()
            .zip(entry.gaps.iter())
            .map(|(&x, &y)| (x, y))
            .collect();
        body.push_str(&polyline(
            &points,
            &frame,
            "placebo",
            "stroke=\"#b09cd8\" stroke-width=\"1\" stroke-opacity=\"0.65\"",
        ));
    }
    let treated = study.treated();
    let points: Vec<(f64, f64)> = years
        .iter()
        .zip(treated.gaps.iter())
        .map(|(&x, &y)| (x, y))
        .collect();
    body.push_str(&polyline(
        &points,
        &frame,
        "treated",
        "stroke=\"#1f4e9c\" stroke-width=\"2.5\"",
    ));

    let svg = svg_document(
        &frame,
        treatment_year,
        &format!("{} gap", study.outcome_key),
        &body,
        &[("treated", "#1f4e9c"), ("placebo", "#b09cd8")],
    );

    let mut series = series_header();
    for (i, entry) in study.entries.iter().enumerate() {
        let role = if i == study.treated_entry {
            "treated"
        } else {
            "placebo"
        };
        for (p, &year) in study.periods.iter().enumerate() {
            series.push_str(&series_row(&entry.unit, year, entry.gaps[p], role));
        }
    }
    Figure { svg, series }
}
