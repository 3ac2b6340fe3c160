//! Known-counterfactual panel simulation.
//!
//! [`generate`] draws a factor-model panel in which the treated unit's
//! counterfactual is known by construction:
//!
//! ```text
//! Y⁰(i, o, t) = base(o) + unit_sd(o)·level(i) + Σ_f λ(i,f)·F(o,f,t) + ε(i,o,t)
//! ```
//!
//! with unit levels `level(i) ~ N(0,1)` shared across outcomes, loadings
//! `λ(i,f) ~ N(0, loading_scale²)`, factor paths `F(o,f,t) ~ N(0,1)`, and
//! noise `ε ~ N(0, noise_sd²)`. The treated unit's observed outcome equals
//! this counterfactual plus the configured per-year effect path; the
//! counterfactual itself goes into a separate truth record and never into
//! the panel.
//!
//! When a [`HullMixture`] is configured, the treated unit's level and
//! loadings (and its numeric covariates and coordinates) are replaced by the
//! stated convex combination of donor units', which puts the treated unit
//! exactly inside the donor convex hull: at zero noise a simplex fit on
//! enough pre-periods reproduces the counterfactual exactly.
//!
//! # Randomness
//!
//! All draws come from one sequential **SplitMix64** stream (Steele, Lea &
//! Flood 2014) seeded with [`DgpSpec::seed`]: the 64-bit state advances by
//! `0x9E3779B97F4A7C15` per draw and is finalized by the two-stage
//! xor-shift-multiply mix. Uniforms take the high 53 bits; normal draws are
//! Box–Muller, consuming exactly two words each and keeping the cosine
//! branch. The integer stream is exactly portable; float reproducibility
//! follows the platform's `ln`/`cos` as usual. A fixed seed therefore yields
//! a byte-identical bundle, and [`write_bundle`] writes byte-identical
//! files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{
    write_panel, AttrValue, CovariateSeries, IncomeTable, PanelDataset, UnitRecord, ValueGrid,
};

/// Sequential SplitMix64 generator; see the module docs for the contract.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the high 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }

    /// Standard normal via Box–Muller (two words, cosine branch).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * 2f64.powi(-53);
        let u2 = (self.next_u64() >> 11) as f64 * 2f64.powi(-53);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// One outcome column of the generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRule {
    pub key: String,
    /// Grand mean of the outcome scale.
    pub base_level: f64,
    /// Between-unit standard deviation of the level.
    pub unit_sd: f64,
    /// Multiplier applied to the shared effect path for this outcome.
    #[serde(default = "one")]
    pub effect_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Deserializes a year-keyed map whether the keys arrive as integers or as
/// strings (TOML tables and JSON objects both key maps by string).
fn year_keyed_map<'de, D>(deserializer: D) -> std::result::Result<BTreeMap<i32, f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
    raw.into_iter()
        .map(|(key, value)| {
            key.trim()
                .parse::<i32>()
                .map(|year| (year, value))
                .map_err(|_| {
                    serde::de::Error::custom(format!("effect year {key:?} is not an integer"))
                })
        })
        .collect()
}

/// How one covariate or static attribute is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CovariateRule {
    /// Static numeric attribute `~ N(mean, sd²)`, clamped into [min, max].
    NumericAttribute {
        key: String,
        mean: f64,
        sd: f64,
        min: f64,
        max: f64,
    },
    /// Static text attribute with the same value for every unit.
    ConstantText { key: String, value: String },
    /// Static boolean attribute with the same value for every unit.
    ConstantBool { key: String, value: bool },
    /// Time-varying covariate: per-unit mean `~ N(mean, between_sd²)`, then
    /// per-year values `~ N(unit mean, within_sd²)`.
    TimeVarying {
        key: String,
        mean: f64,
        between_sd: f64,
        within_sd: f64,
    },
}

/// Geography and income generation: postcodes assigned round-robin so units
/// share them, uniform coordinates, and a postcode-by-year income table with
/// deterministic per-year growth on a random postcode base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRule {
    pub n_postcodes: usize,
    /// First postcode number; postcodes are consecutive from here.
    pub first_postcode: u32,
    pub lat_center: f64,
    pub lat_spread: f64,
    pub lon_center: f64,
    pub lon_spread: f64,
    /// Mean of the postcode income bases.
    pub income_mean: f64,
    /// Between-postcode standard deviation of the base.
    pub income_sd: f64,
    /// Multiplicative per-year growth applied to the base.
    pub income_growth: f64,
}

/// Places the treated unit exactly inside the donor convex hull: its level,
/// loadings, numeric covariates, and coordinates become this convex
/// combination of the named donors'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullMixture {
    /// (unit id, weight) with non-negative weights summing to one.
    pub components: Vec<(String, f64)>,
}

/// Full recipe for one synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub start_year: i32,
    pub end_year: i32,
    /// A year dropped from the index (no rows generated for it).
    #[serde(default)]
    pub gap_year: Option<i32>,
    pub outcomes: Vec<OutcomeRule>,
    pub n_factors: usize,
    /// Standard deviation of the factor loadings.
    pub loading_scale: f64,
    pub noise_sd: f64,
    /// Which generated unit is treated (ids run `S001`, `S002`, …).
    pub treated_id: String,
    /// Additive effect on the treated unit's observed outcome, by year
    /// (scaled per outcome by [`OutcomeRule::effect_scale`]). Years absent
    /// from the map get no effect.
    #[serde(default, deserialize_with = "year_keyed_map")]
    pub effect: BTreeMap<i32, f64>,
    #[serde(default)]
    pub covariates: Vec<CovariateRule>,
    #[serde(default)]
    pub geo: Option<GeoRule>,
    #[serde(default)]
    pub hull_mixture: Option<HullMixture>,
    pub seed: u64,
}

/// The ground truth accompanying a generated panel: what the treated unit
/// would have scored absent treatment, and what was added on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub treated_id: String,
    pub periods: Vec<i32>,
    /// Outcome key → counterfactual treated series, in period order.
    pub counterfactual: BTreeMap<String, Vec<f64>>,
    /// Outcome key → year → effect actually added (after scaling).
    pub effect: BTreeMap<String, BTreeMap<i32, f64>>,
    pub seed: u64,
}

/// Everything [`generate`] produces: the panel (observed outcomes only),
/// the optional income table, and the truth record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBundle {
    pub panel: PanelDataset,
    pub income: Option<IncomeTable>,
    pub truth: SimTruth,
}

/// Unit ids are `S` plus a zero-padded ordinal, wide enough for the count.
pub fn unit_id(index: usize, n_units: usize) -> String {
    let width = n_units.to_string().len().max(3);
    format!("S{:0width$}", index + 1)
}

fn validate(spec: &DgpSpec, years: &[i32]) -> Result<()> {
    let fail = |message: String| Err(Error::InvalidSpec { message });
    if spec.n_units < 2 {
        return fail(format!("need at least 2 units, got {}", spec.n_units));
    }
    if years.is_empty() {
        return fail(format!(
            "year range {}..={} is empty",
            spec.start_year, spec.end_year
        ));
    }
    if spec.outcomes.is_empty() {
        return fail("at least one outcome rule is required".to_string());
    }
    let mut keys: Vec<&str> = spec.outcomes.iter().map(|o| o.key.as_str()).collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.len() != spec.outcomes.len() {
        return fail("outcome keys must be distinct".to_string());
    }
    if spec.noise_sd < 0.0
        || spec.noise_sd.is_nan()
        || spec.loading_scale < 0.0
        || spec.loading_scale.is_nan()
    {
        return fail("noise_sd and loading_scale must be non-negative".to_string());
    }
    let ids: Vec<String> = (0..spec.n_units)
        .map(|i| unit_id(i, spec.n_units))
        .collect();
    if !ids.contains(&spec.treated_id) {
        return fail(format!(
            "treated id '{}' is not among the generated ids {}..{}",
            spec.treated_id,
            ids[0],
            ids[ids.len() - 1]
        ));
    }
    for &year in spec.effect.keys() {
        if !years.contains(&year) {
            return fail(format!("effect year {year} is not in the period index"));
        }
    }
    if let Some(geo) = &spec.geo {
        if geo.n_postcodes == 0 {
            return fail("n_postcodes must be positive".to_string());
        }
    }
    if let Some(hull) = &spec.hull_mixture {
        if hull.components.is_empty() {
            return fail("hull mixture has no components".to_string());
        }
        let mut total = 0.0;
        for (id, w) in &hull.components {
            if !ids.contains(id) {
                return fail(format!("hull component '{id}' is not a generated unit"));
            }
            if *id == spec.treated_id {
                return fail("hull mixture cannot include the treated unit".to_string());
            }
            if *w < 0.0 || w.is_nan() {
                return fail(format!("hull weight {w} for '{id}' is negative"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("hull weights sum to {total}, expected 1"));
        }
    }
    Ok(())
}

/// Generates the panel, income table, and truth record for `spec`.
///
/// Draw order is fixed (factor paths, unit levels, loadings, noise,
/// covariate rules in configuration order, geography), so a fixed seed
/// reproduces the bundle exactly.
pub fn generate(spec: &DgpSpec) -> Result<SimBundle> {
    let years: Vec<i32> = (spec.start_year..=spec.end_year)
        .filter(|&y| Some(y) != spec.gap_year)
        .collect();
    validate(spec, &years)?;

    let mut rng = SplitMix64::new(spec.seed);
    let n = spec.n_units;
    let t = years.len();
    let ids: Vec<String> = (0..n).map(|i| unit_id(i, n)).collect();
    let treated = ids
        .iter()
        .position(|id| *id == spec.treated_id)
        .expect("validated above");
    let mixture: Vec<(usize, f64)> = spec
        .hull_mixture
        .iter()
        .flat_map(|h| h.components.iter())
        .map(|(id, w)| {
            (
                ids.iter().position(|i| i == id).expect("validated above"),
                *w,
            )
        })
        .collect();
    let mix = |values: &[f64], own: f64| -> f64 {
        if mixture.is_empty() {
            own
        } else {
            mixture.iter().map(|&(i, w)| w * values[i]).sum()
        }
    };

    // Latent structure: per-outcome factor paths, shared unit levels,
    // shared loadings.
    let mut factors = vec![vec![vec![0.0; t]; spec.n_factors]; spec.outcomes.len()];
    for outcome_factors in &mut factors {
        for path in outcome_factors {
            for value in path {
                *value = rng.next_normal();
            }
        }
    }
    let mut levels: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
    let mut loadings: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..spec.n_factors)
                .map(|_| rng.next_normal() * spec.loading_scale)
                .collect()
        })
        .collect();
    if !mixture.is_empty() {
        levels[treated] = mixture.iter().map(|&(i, w)| w * levels[i]).sum();
        loadings[treated] = (0..spec.n_factors)
            .map(|f| mixture.iter().map(|&(i, w)| w * loadings[i][f]).sum())
            .collect();
    }

    // Outcomes: counterfactual for everyone, effect added onto the treated
    // unit's observed values only.
    let mut outcome_grids: BTreeMap<String, ValueGrid> = BTreeMap::new();
    let mut truth_cf: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut truth_effect: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for (o, rule) in spec.outcomes.iter().enumerate() {
        let mut grid = ValueGrid::new(n, t);
        let mut cf_series = vec![0.0; t];
        for u in 0..n {
            for (p, &year) in years.iter().enumerate() {
                let structural: f64 = rule.base_level
                    + rule.unit_sd * levels[u]
                    + (0..spec.n_factors)
                        .map(|f| loadings[u][f] * factors[o][f][p])
                        .sum::<f64>();
                let y0 = structural + rng.next_normal() * spec.noise_sd;
                let observed = if u == treated {
                    cf_series[p] = y0;
                    y0 + spec.effect.get(&year).copied().unwrap_or(0.0) * rule.effect_scale
                } else {
                    y0
                };
                grid.set(u, p, Some(observed));
            }
        }
        outcome_grids.insert(rule.key.clone(), grid);
        truth_cf.insert(rule.key.clone(), cf_series);
        truth_effect.insert(
            rule.key.clone(),
            spec.effect
                .iter()
                .map(|(&year, &e)| (year, e * rule.effect_scale))
                .collect(),
        );
    }

    let mut units: Vec<UnitRecord> = ids
        .iter()
        .map(|id| UnitRecord {
            id: id.clone(),
            name: format!("School {}", &id[1..]),
            attributes: BTreeMap::new(),
        })
        .collect();

    // Covariates, in rule order. Numeric values for the treated unit follow
    // the hull mixture so its features sit inside the donor hull too.
    let mut covariate_grids: BTreeMap<String, CovariateSeries> = BTreeMap::new();
    for rule in &spec.covariates {
        match rule {
            CovariateRule::NumericAttribute {
                key,
                mean,
                sd,
                min,
                max,
            } => {
                let mut values: Vec<f64> = (0..n)
                    .map(|_| (mean + sd * rng.next_normal()).clamp(*min, *max))
                    .collect();
                values[treated] = mix(&values, values[treated]).clamp(*min, *max);
                for (u, unit) in units.iter_mut().enumerate() {
                    unit.attributes
                        .insert(key.clone(), AttrValue::Real(round6(values[u])));
                }
            }
            CovariateRule::ConstantText { key, value } => {
                for unit in &mut units {
                    unit.attributes
                        .insert(key.clone(), AttrValue::Text(value.clone()));
                }
            }
            CovariateRule::ConstantBool { key, value } => {
                for unit in &mut units {
                    unit.attributes.insert(key.clone(), AttrValue::Bool(*value));
                }
            }
            CovariateRule::TimeVarying {
                key,
                mean,
                between_sd,
                within_sd,
            } => {
                let mut unit_means: Vec<f64> = (0..n)
                    .map(|_| mean + between_sd * rng.next_normal())
                    .collect();
                unit_means[treated] = mix(&unit_means, unit_means[treated]);
                let mut grid = ValueGrid::new(n, t);
                for (u, &m) in unit_means.iter().enumerate() {
                    for p in 0..t {
                        grid.set(u, p, Some(round6(m + within_sd * rng.next_normal())));
                    }
                }
                covariate_grids.insert(key.clone(), CovariateSeries::TimeVarying(grid));
            }
        }
    }

    // Geography and income.
    let mut income = None;
    if let Some(geo) = &spec.geo {
        let mut lats: Vec<f64> = (0..n)
            .map(|_| {
                rng.next_range(
                    geo.lat_center - geo.lat_spread,
                    geo.lat_center + geo.lat_spread,
                )
            })
            .collect();
        let mut lons: Vec<f64> = (0..n)
            .map(|_| {
                rng.next_range(
                    geo.lon_center - geo.lon_spread,
                    geo.lon_center + geo.lon_spread,
                )
            })
            .collect();
        lats[treated] = mix(&lats, lats[treated]);
        lons[treated] = mix(&lons, lons[treated]);
        for (u, unit) in units.iter_mut().enumerate() {
            let postcode = geo.first_postcode + (u % geo.n_postcodes) as u32;
            unit.attributes.insert(
                "postcode".to_string(),
                AttrValue::Text(postcode.to_string()),
            );
            unit.attributes
                .insert("latitude".to_string(), AttrValue::Real(round6(lats[u])));
            unit.attributes
                .insert("longitude".to_string(), AttrValue::Real(round6(lons[u])));
        }
        let mut table = IncomeTable::default();
        for c in 0..geo.n_postcodes {
            let postcode = (geo.first_postcode + c as u32).to_string();
            let base = geo.income_mean + geo.income_sd * rng.next_normal();
            for (p, &year) in years.iter().enumerate() {
                let value = base * (1.0 + geo.income_growth).powi(p as i32);
                table
                    .insert(postcode.clone(), year, (value * 100.0).round() / 100.0)
                    .expect("distinct (postcode, year) pairs");
            }
        }
        income = Some(table);
    }

    let panel = PanelDataset {
        units,
        periods: years.clone(),
        outcomes: outcome_grids,
        covariates: covariate_grids,
    };
    let truth = SimTruth {
        treated_id: spec.treated_id.clone(),
        periods: years,
        counterfactual: truth_cf,
        effect: truth_effect,
        seed: spec.seed,
    };
    Ok(SimBundle {
        panel,
        income,
        truth,
    })
}

/// Rounds to six decimals so written files stay compact; the factor-model
/// outcomes are left untouched.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// File names [`write_bundle`] produces inside its directory.
pub const SCHOOLS_FILE: &str = "schools.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const INCOME_FILE: &str = "income.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes the bundle as the loadable file set: `schools.csv`,
/// `attributes.csv` (when any unit has attributes), `income.csv` (when an
/// income table was generated), and the `truth.json` sidecar. The truth
/// never appears in the panel files. Returns the names written, in writing
/// order.
pub fn write_bundle(bundle: &SimBundle, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut written = vec![SCHOOLS_FILE.to_string()];
    let has_attributes = bundle.panel.units.iter().any(|u| !u.attributes.is_empty());
    let attributes_path = dir.join(ATTRIBUTES_FILE);
    write_panel(
        &bundle.panel,
        &dir.join(SCHOOLS_FILE),
        has_attributes.then_some(attributes_path.as_path()),
    )?;
    if has_attributes {
        written.push(ATTRIBUTES_FILE.to_string());
    }

    if let Some(income) = &bundle.income {
        let path = dir.join(INCOME_FILE);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| {
            Error::io(
                path.display().to_string(),
                std::io::Error::other(e.to_string()),
            )
        })?;
        let io_err = |e: csv::Error| {
            Error::io(
                path.display().to_string(),
                std::io::Error::other(e.to_string()),
            )
        };
        writer
            .write_record(["postcode", "year", "mean_taxable_income"])
            .map_err(io_err)?;
        for (postcode, year, value) in income.rows() {
            writer
                .write_record([postcode, &year.to_string(), &format!("{value}")])
                .map_err(io_err)?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(INCOME_FILE.to_string());
    }

    let truth_path = dir.join(TRUTH_FILE);
    let json = serde_json::to_string_pretty(&bundle.truth).expect("truth serializes");
    std::fs::write(&truth_path, json + "\n")
        .map_err(|e| Error::io(truth_path.display().to_string(), e))?;
    written.push(TRUTH_FILE.to_string());
    Ok(written)
}
