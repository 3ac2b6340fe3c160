//! Unit-by-year panel ingestion and reshaping.
//!
//! Three delimited files feed an analysis:
//!
//! * a **schools file** with one row per unit and year — columns `unit_id`,
//!   `unit_name`, `year`, then one column per outcome and per time-varying
//!   covariate (the ingest configuration says which is which);
//! * an optional **attributes file** with one row per unit holding static
//!   attributes (coordinates, postcode, categorical classifications, …);
//! * an optional **income file** with one row per postcode and year, joined
//!   onto units through their `postcode` attribute.
//!
//! Missing data is the empty string in files and an explicit missing cell in
//! memory — never NaN, and never silently imputed. Years absent from the
//! input are absent from the period index rather than zero-filled.
//!
//! Attribute cells are typed by shape: `true`/`false` parse as booleans,
//! anything that parses as a finite number becomes numeric, everything else
//! stays text. The `postcode` column is exempt and always kept as text so
//! join keys survive leading zeros and formatting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column holding the unit identifier in the schools file.
pub const UNIT_ID_COLUMN: &str = "unit_id";
/// Column holding the display name in the schools file.
pub const UNIT_NAME_COLUMN: &str = "unit_name";
/// Column holding the period in the schools file.
pub const YEAR_COLUMN: &str = "year";
/// Attribute used as the join key against the income table.
pub const POSTCODE_ATTRIBUTE: &str = "postcode";
/// Covariate key under which [`join_income`] stores joined income values.
pub const INCOME_COVARIATE: &str = "postcode_mean_income";

/// A typed static attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Text(String),
    Real(f64),
    Bool(bool),
}

impl AttrValue {
    /// Applies the typing rule used for attribute cells.
    pub fn parse(raw: &str) -> AttrValue {
        match raw {
            "true" => AttrValue::Bool(true),
            "false" => AttrValue::Bool(false),
            _ => match raw.parse::<f64>() {
                Ok(x) if x.is_finite() => AttrValue::Real(x),
                _ => AttrValue::Text(raw.to_string()),
            },
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            AttrValue::Real(x) => Some(*x),
            _ => None,
        }
    }

    /// File representation (inverse of [`AttrValue::parse`] up to float
    /// formatting).
    pub fn to_field(&self) -> String {
        match self {
            AttrValue::Text(s) => s.clone(),
            AttrValue::Real(x) => format_float(*x),
            AttrValue::Bool(b) => b.to_string(),
        }
    }
}

/// Shortest round-trip decimal representation of a float.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

/// A unit with its identifier, display name, and static attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub name: String,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl UnitRecord {
    pub fn numeric_attribute(&self, key: &str) -> Option<f64> {
        self.attributes.get(key).and_then(AttrValue::as_real)
    }
}

/// A dense unit-by-period grid of optional values; `None` is a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    n_units: usize,
    n_periods: usize,
    cells: Vec<Option<f64>>,
}

impl ValueGrid {
    pub fn new(n_units: usize, n_periods: usize) -> Self {
        ValueGrid {
            n_units,
            n_periods,
            cells: vec![None; n_units * n_periods],
        }
    }

    pub fn get(&self, unit: usize, period: usize) -> Option<f64> {
        self.cells[unit * self.n_periods + period]
    }

    pub fn set(&mut self, unit: usize, period: usize, value: Option<f64>) {
        self.cells[unit * self.n_periods + period] = value;
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Copy of the grid with one period column removed.
    fn without_period(&self, period: usize) -> ValueGrid {
        let mut out = ValueGrid::new(self.n_units, self.n_periods - 1);
        for u in 0..self.n_units {
            let mut q = 0;
            for p in 0..self.n_periods {
                if p != period {
                    out.set(u, q, self.get(u, p));
                    q += 1;
                }
            }
        }
        out
    }
}

/// A covariate: either one value per unit or a unit-by-period grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateSeries {
    Fixed(Vec<f64>),
    TimeVarying(ValueGrid),
}

/// An inclusive year range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodWindow {
    pub start: i32,
    pub end: i32,
}

impl PeriodWindow {
    pub fn new(start: i32, end: i32) -> Self {
        PeriodWindow { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }
}

/// An ingested panel: units in file order, periods sorted ascending, and one
/// grid per outcome and time-varying covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub units: Vec<UnitRecord>,
    pub periods: Vec<i32>,
    pub outcomes: BTreeMap<String, ValueGrid>,
    pub covariates: BTreeMap<String, CovariateSeries>,
}

impl PanelDataset {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    pub fn require_unit(&self, id: &str) -> Result<usize> {
        self.unit_index(id)
            .ok_or_else(|| Error::UnknownUnit { id: id.to_string() })
    }

    pub fn period_index(&self, year: i32) -> Option<usize> {
        self.periods.iter().position(|&y| y == year)
    }

    pub fn outcome(&self, key: &str) -> Result<&ValueGrid> {
        self.outcomes.get(key).ok_or_else(|| Error::UnknownOutcome {
            key: key.to_string(),
        })
    }
}

/// What to expect in a schools file and where its companions live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Outcome columns, in reporting order.
    pub outcome_keys: Vec<String>,
    /// Time-varying covariate columns.
    pub covariate_keys: Vec<String>,
    /// Optional per-unit attributes file.
    pub attributes_path: Option<PathBuf>,
    /// Years to drop at ingestion (their rows never enter the period index).
    pub exclude_years: Vec<i32>,
}

/// Mean income by (postcode, year).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IncomeTable {
    values: BTreeMap<(String, i32), f64>,
}

impl IncomeTable {
    pub fn get(&self, postcode: &str, year: i32) -> Option<f64> {
        self.values.get(&(postcode.to_string(), year)).copied()
    }

    pub fn insert(&mut self, postcode: String, year: i32, value: f64) -> Result<()> {
        if self
            .values
            .insert((postcode.clone(), year), value)
            .is_some()
        {
            return Err(Error::DuplicateIncomeRow { postcode, year });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows in (postcode, year) order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, i32, f64)> {
        self.values
            .iter()
            .map(|((postcode, year), value)| (postcode.as_str(), *year, *value))
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
            other => Error::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!("{other:?}"),
            },
        })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_read_error(path: &Path, e: csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    Error::MalformedRow {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, raw: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(Error::NonNumericCell {
            path: path.display().to_string(),
            line,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Loads a schools file (and its attributes companion, when configured) into
/// a [`PanelDataset`].
///
/// The header must contain exactly `unit_id`, `unit_name`, `year`, and the
/// configured outcome and covariate columns — nothing more, nothing less.
/// Duplicate (unit, year) rows and non-numeric data cells are errors carrying
/// the offending line number. A header-only file yields a panel with zero
/// units.
pub fn load_panel(path: &Path, config: &IngestConfig) -> Result<PanelDataset> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_read_error(path, e))?
        .clone();

    let mut column_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if column_of.insert(h, i).is_some() {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!("duplicate column '{h}'"),
            });
        }
    }
    let mut expected: BTreeSet<&str> =
        BTreeSet::from([UNIT_ID_COLUMN, UNIT_NAME_COLUMN, YEAR_COLUMN]);
    for key in &config.outcome_keys {
        expected.insert(key.as_str());
    }
    for key in &config.covariate_keys {
        expected.insert(key.as_str());
    }
    for key in &config.outcome_keys {
        if !column_of.contains_key(key.as_str()) {
            return Err(Error::UnknownOutcome { key: key.clone() });
        }
    }
    for key in &config.covariate_keys {
        if !column_of.contains_key(key.as_str()) {
            return Err(Error::UnknownCovariate { key: key.clone() });
        }
    }
    for required in [UNIT_ID_COLUMN, UNIT_NAME_COLUMN, YEAR_COLUMN] {
        if !column_of.contains_key(required) {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!("missing required column '{required}'"),
            });
        }
    }
    for header in column_of.keys() {
        if !expected.contains(header) {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!("unexpected column '{header}'"),
            });
        }
    }

    struct RawRow {
        unit: usize,
        year: i32,
        values: Vec<Option<f64>>, // outcomes then covariates, config order
    }

    let id_col = column_of[UNIT_ID_COLUMN];
    let name_col = column_of[UNIT_NAME_COLUMN];
    let year_col = column_of[YEAR_COLUMN];
    let data_keys: Vec<&String> = config
        .outcome_keys
        .iter()
        .chain(config.covariate_keys.iter())
        .collect();

    let mut units: Vec<UnitRecord> = Vec::new();
    let mut unit_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut years: BTreeSet<i32> = BTreeSet::new();
    let mut seen: BTreeSet<(usize, i32)> = BTreeSet::new();
    let mut rows: Vec<RawRow> = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_read_error(path, e))?;
        let line = record_line(&record);
        let id = record.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line,
                message: "empty unit_id".to_string(),
            });
        }
        let name = record.get(name_col).unwrap_or("");
        let year: i32 =
            record
                .get(year_col)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::MalformedRow {
                    path: path.display().to_string(),
                    line,
                    message: format!("bad year '{}'", record.get(year_col).unwrap_or("")),
                })?;

        let unit = match unit_of.get(id) {
            Some(&u) => {
                if units[u].name != name {
                    return Err(Error::MalformedRow {
                        path: path.display().to_string(),
                        line,
                        message: format!(
                            "unit '{id}' renamed from '{}' to '{name}'",
                            units[u].name
                        ),
                    });
                }
                u
            }
            None => {
                units.push(UnitRecord {
                    id: id.to_string(),
                    name: name.to_string(),
                    attributes: BTreeMap::new(),
                });
                unit_of.insert(id.to_string(), units.len() - 1);
                units.len() - 1
            }
        };

        if !seen.insert((unit, year)) {
            return Err(Error::DuplicateObservation {
                unit: id.to_string(),
                year,
            });
        }
        if config.exclude_years.contains(&year) {
            continue;
        }
        years.insert(year);

        let mut values = Vec::with_capacity(data_keys.len());
        for key in &data_keys {
            let raw = record.get(column_of[key.as_str()]).unwrap_or("");
            values.push(parse_cell(path, line, key, raw)?);
        }
        rows.push(RawRow { unit, year, values });
    }

    let periods: Vec<i32> = years.into_iter().collect();
    let period_of: BTreeMap<i32, usize> =
        periods.iter().enumerate().map(|(i, &y)| (y, i)).collect();

    let mut outcomes: BTreeMap<String, ValueGrid> = config
        .outcome_keys
        .iter()
        .map(|k| (k.clone(), ValueGrid::new(units.len(), periods.len())))
        .collect();
    let mut covariates: BTreeMap<String, ValueGrid> = config
        .covariate_keys
        .iter()
        .map(|k| (k.clone(), ValueGrid::new(units.len(), periods.len())))
        .collect();

    for row in rows {
        let p = period_of[&row.year];
        for (i, key) in config.outcome_keys.iter().enumerate() {
            outcomes
                .get_mut(key)
                .unwrap()
                .set(row.unit, p, row.values[i]);
        }
        for (i, key) in config.covariate_keys.iter().enumerate() {
            covariates.get_mut(key).unwrap().set(
                row.unit,
                p,
                row.values[config.outcome_keys.len() + i],
            );
        }
    }

    let mut panel = PanelDataset {
        units,
        periods,
        outcomes,
        covariates: covariates
            .into_iter()
            .map(|(k, g)| (k, CovariateSeries::TimeVarying(g)))
            .collect(),
    };

    if let Some(attr_path) = &config.attributes_path {
        load_attributes(attr_path, &mut panel)?;
    }
    Ok(panel)
}

/// Reads a per-unit attributes file (`unit_id` plus one column per
/// attribute) into the panel's unit records.
fn load_attributes(path: &Path, panel: &mut PanelDataset) -> Result<()> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_read_error(path, e))?
        .clone();
    let id_col = headers
        .iter()
        .position(|h| h == UNIT_ID_COLUMN)
        .ok_or_else(|| Error::MalformedRow {
            path: path.display().to_string(),
            line: 1,
            message: format!("missing required column '{UNIT_ID_COLUMN}'"),
        })?;

    let mut seen: BTreeSet<String> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_read_error(path, e))?;
        let line = record_line(&record);
        let id = record.get(id_col).unwrap_or("");
        let unit = panel.require_unit(id)?;
        if !seen.insert(id.to_string()) {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line,
                message: format!("duplicate attributes row for unit '{id}'"),
            });
        }
        for (i, header) in headers.iter().enumerate() {
            if i == id_col {
                continue;
            }
            let raw = record.get(i).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            let value = if header == POSTCODE_ATTRIBUTE {
                AttrValue::Text(raw.to_string())
            } else {
                AttrValue::parse(raw)
            };
            panel.units[unit]
                .attributes
                .insert(header.to_string(), value);
        }
        let lat = panel.units[unit].numeric_attribute("latitude");
        let lon = panel.units[unit].numeric_attribute("longitude");
        if let (Some(lat), Some(lon)) = (lat, lon) {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::InvalidCoordinate {
                    unit: id.to_string(),
                    lat,
                    lon,
                });
            }
        }
    }
    Ok(())
}

/// Loads a postcode-by-year income table. Rows with an empty income cell are
/// skipped (missing data); duplicate (postcode, year) rows are an error.
pub fn load_income(path: &Path) -> Result<IncomeTable> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_read_error(path, e))?
        .clone();
    let need = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!("missing required column '{name}'"),
            })
    };
    let postcode_col = need("postcode")?;
    let year_col = need("year")?;
    let income_col = need("mean_taxable_income")?;

    let mut table = IncomeTable::default();
    for record in reader.records() {
        let record = record.map_err(|e| csv_read_error(path, e))?;
        let line = record_line(&record);
        let postcode = record.get(postcode_col).unwrap_or("");
        if postcode.is_empty() {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line,
                message: "empty postcode".to_string(),
            });
        }
        let year: i32 =
            record
                .get(year_col)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::MalformedRow {
                    path: path.display().to_string(),
                    line,
                    message: format!("bad year '{}'", record.get(year_col).unwrap_or("")),
                })?;
        match parse_cell(
            path,
            line,
            "mean_taxable_income",
            record.get(income_col).unwrap_or(""),
        )? {
            Some(value) => table.insert(postcode.to_string(), year, value)?,
            None => continue,
        }
    }
    Ok(table)
}

/// Joins an income table onto the panel through each unit's `postcode`
/// attribute, adding the time-varying covariate
/// [`INCOME_COVARIATE`]. Units without a postcode, or (postcode, year) pairs
/// absent from the table, get missing cells; units sharing a postcode share
/// its values.
pub fn join_income(panel: &PanelDataset, income: &IncomeTable) -> PanelDataset {
    let mut grid = ValueGrid::new(panel.n_units(), panel.periods.len());
    for (u, unit) in panel.units.iter().enumerate() {
        let postcode = match unit.attributes.get(POSTCODE_ATTRIBUTE) {
            Some(AttrValue::Text(p)) => p.clone(),
            _ => continue,
        };
        for (p, &year) in panel.periods.iter().enumerate() {
            grid.set(u, p, income.get(&postcode, year));
        }
    }
    let mut out = panel.clone();
    out.covariates.insert(
        INCOME_COVARIATE.to_string(),
        CovariateSeries::TimeVarying(grid),
    );
    out
}

/// Removes one year from the period index and every grid. Dropping a year
/// that is not in the index returns the panel unchanged; dropping the last
/// remaining period is an error.
pub fn drop_period(panel: &PanelDataset, year: i32) -> Result<PanelDataset> {
    let Some(p) = panel.period_index(year) else {
        return Ok(panel.clone());
    };
    if panel.periods.len() == 1 {
        return Err(Error::EmptyPanel);
    }
    let mut out = panel.clone();
    out.periods.remove(p);
    for grid in out.outcomes.values_mut() {
        *grid = grid.without_period(p);
    }
    for series in out.covariates.values_mut() {
        if let CovariateSeries::TimeVarying(grid) = series {
            *grid = grid.without_period(p);
        }
    }
    Ok(out)
}

/// Collapses a covariate to one value per unit over an inclusive year window:
/// the mean of non-missing time-varying values, the constant itself for fixed
/// covariates, or the numeric attribute of the same name. A unit with no
/// usable value in the window is an [`Error::AllMissing`]; a key that is
/// neither covariate nor numeric attribute is [`Error::UnknownCovariate`].
pub fn collapse_covariate(
    panel: &PanelDataset,
    key: &str,
    window: PeriodWindow,
) -> Result<Vec<f64>> {
    if let Some(series) = panel.covariates.get(key) {
        return match series {
            CovariateSeries::Fixed(values) => Ok(values.clone()),
            CovariateSeries::TimeVarying(grid) => {
                let mut out = Vec::with_capacity(panel.n_units());
                for (u, unit) in panel.units.iter().enumerate() {
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
                            unit: unit.id.clone(),
                            key: key.to_string(),
                            start: window.start,
                            end: window.end,
                        });
                    }
                    out.push(sum / n as f64);
                }
                Ok(out)
            }
        };
    }

    // Fall back to a numeric static attribute of the same name.
    if panel.units.iter().any(|u| u.attributes.contains_key(key)) {
        let mut out = Vec::with_capacity(panel.n_units());
        for unit in &panel.units {
            match unit.numeric_attribute(key) {
                Some(x) => out.push(x),
                None => {
                    return Err(Error::AllMissing {
                        unit: unit.id.clone(),
                        key: key.to_string(),
                        start: window.start,
                        end: window.end,
                    })
                }
            }
        }
        return Ok(out);
    }

    Err(Error::UnknownCovariate {
        key: key.to_string(),
    })
}

/// Writes the panel back to a schools file and, when given, an attributes
/// file. Columns come out in sorted key order and floats in shortest
/// round-trip form, so `load_panel(write_panel(p))` reproduces `p` exactly.
/// Fixed covariates have no schools-file representation and are rejected.
pub fn write_panel(
    panel: &PanelDataset,
    schools_path: &Path,
    attributes_path: Option<&Path>,
) -> Result<()> {
    for (key, series) in &panel.covariates {
        if matches!(series, CovariateSeries::Fixed(_)) {
            return Err(Error::InvalidSpec {
                message: format!(
                    "fixed covariate '{key}' cannot be written to a schools file; store it as a unit attribute"
                ),
            });
        }
    }

    let mut writer = csv::Writer::from_path(schools_path)
        .map_err(|e| Error::io(schools_path.display().to_string(), into_io(e)))?;
    let mut header: Vec<&str> = vec![UNIT_ID_COLUMN, UNIT_NAME_COLUMN, YEAR_COLUMN];
    header.extend(panel.outcomes.keys().map(String::as_str));
    header.extend(panel.covariates.keys().map(String::as_str));
    writer
        .write_record(&header)
        .map_err(|e| Error::io(schools_path.display().to_string(), into_io(e)))?;

    for (u, unit) in panel.units.iter().enumerate() {
        for (p, &year) in panel.periods.iter().enumerate() {
            let mut row: Vec<String> = vec![unit.id.clone(), unit.name.clone(), year.to_string()];
            for grid in panel.outcomes.values() {
                row.push(grid.get(u, p).map(format_float).unwrap_or_default());
            }
            for series in panel.covariates.values() {
                if let CovariateSeries::TimeVarying(grid) = series {
                    row.push(grid.get(u, p).map(format_float).unwrap_or_default());
                }
            }
            writer
                .write_record(&row)
                .map_err(|e| Error::io(schools_path.display().to_string(), into_io(e)))?;
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(schools_path.display().to_string(), e))?;

    if let Some(attr_path) = attributes_path {
        let mut keys: BTreeSet<&str> = BTreeSet::new();
        for unit in &panel.units {
            keys.extend(unit.attributes.keys().map(String::as_str));
        }
        let mut writer = csv::Writer::from_path(attr_path)
            .map_err(|e| Error::io(attr_path.display().to_string(), into_io(e)))?;
        let mut header = vec![UNIT_ID_COLUMN];
        header.extend(keys.iter());
        writer
            .write_record(&header)
            .map_err(|e| Error::io(attr_path.display().to_string(), into_io(e)))?;
        for unit in &panel.units {
            let mut row = vec![unit.id.clone()];
            for key in &keys {
                row.push(
                    unit.attributes
                        .get(*key)
                        .map(AttrValue::to_field)
                        .unwrap_or_default(),
                );
            }
            writer
                .write_record(&row)
                .map_err(|e| Error::io(attr_path.display().to_string(), into_io(e)))?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(attr_path.display().to_string(), e))?;
    }
    Ok(())
}

fn into_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}
