//! Donor pool construction.
//!
//! A donor pool names the treated unit and the ordered list of comparison
//! units that survive a set of typed attribute predicates: exact equality on
//! text/boolean/numeric attributes and inclusive numeric ranges. Units
//! missing a predicated attribute fail that predicate. The treated unit is
//! never its own donor; if it fails its own equality predicates the pool is
//! still built but carries a warning, since the filter describes the donors,
//! not the treated unit.
//!
//! When both endpoints have coordinates, the pool also carries the derived
//! feature [`RADIAL_DISTANCE_FEATURE`] — the great-circle distance from the
//! treated unit in kilometres — usable as a matching covariate downstream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AttrValue, PanelDataset};

/// Derived feature key: great-circle distance from the treated unit, km.
pub const RADIAL_DISTANCE_FEATURE: &str = "radial_distance_km";

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two (latitude, longitude) points in
/// degrees, by the haversine formula on a sphere of radius
/// [`EARTH_RADIUS_KM`].
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// An inclusive numeric range predicate on a static attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangePredicate {
    pub key: String,
    pub min: f64,
    pub max: f64,
}

/// Which unit is treated and which units may serve as donors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorFilterSpec {
    pub treated_id: String,
    /// Attribute must be present and exactly equal.
    pub equality: Vec<(String, AttrValue)>,
    /// Attribute must be present, numeric, and inside the inclusive range.
    pub ranges: Vec<RangePredicate>,
}

/// A treated unit, its ordered donors, per-unit derived features, and any
/// non-fatal warnings raised during construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorPool {
    pub treated: String,
    /// Donor unit ids, in panel order.
    pub donors: Vec<String>,
    /// Feature key → unit id → value, covering the treated unit and donors.
    pub features: BTreeMap<String, BTreeMap<String, f64>>,
    pub warnings: Vec<String>,
}

impl DonorPool {
    /// Treated unit followed by the donors — the iteration order used by
    /// placebo studies.
    pub fn members(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.treated.as_str()).chain(self.donors.iter().map(String::as_str))
    }

    /// The pool for a placebo run in which `pseudo_treated` plays the
    /// treated role. The genuinely treated unit never appears among the
    /// donors of any placebo pool; features carry over unchanged.
    pub fn placebo_variant(&self, pseudo_treated: &str) -> DonorPool {
        if pseudo_treated == self.treated {
            return self.clone();
        }
        DonorPool {
            treated: pseudo_treated.to_string(),
            donors: self
                .donors
                .iter()
                .filter(|d| d.as_str() != pseudo_treated)
                .cloned()
                .collect(),
            features: self.features.clone(),
            warnings: Vec::new(),
        }
    }

    /// The pool with one donor removed (leave-one-out refits).
    pub fn without_donor(&self, donor: &str) -> DonorPool {
        DonorPool {
            treated: self.treated.clone(),
            donors: self
                .donors
                .iter()
                .filter(|d| d.as_str() != donor)
                .cloned()
                .collect(),
            features: self.features.clone(),
            warnings: Vec::new(),
        }
    }
}

fn passes(unit_attrs: &BTreeMap<String, AttrValue>, spec: &DonorFilterSpec) -> bool {
    for (key, expected) in &spec.equality {
        if unit_attrs.get(key) != Some(expected) {
            return false;
        }
    }
    for range in &spec.ranges {
        match unit_attrs.get(&range.key).and_then(AttrValue::as_real) {
            Some(x) if range.min <= x && x <= range.max => {}
            _ => return false,
        }
    }
    true
}

/// Builds the donor pool: every non-treated unit passing all predicates, in
/// panel order. Fails with [`Error::NoDonors`] when filtering removes every
/// candidate and [`Error::UnknownUnit`] when the treated id is not in the
/// panel.
pub fn build_pool(panel: &PanelDataset, spec: &DonorFilterSpec) -> Result<DonorPool> {
    let treated_index = panel.require_unit(&spec.treated_id)?;
    let mut warnings = Vec::new();
    if !passes(&panel.units[treated_index].attributes, spec) {
        warnings.push(format!(
            "treated unit '{}' does not satisfy the donor predicates",
            spec.treated_id
        ));
    }

    let donors: Vec<String> = panel
        .units
        .iter()
        .enumerate()
        .filter(|(i, unit)| *i != treated_index && passes(&unit.attributes, spec))
        .map(|(_, unit)| unit.id.clone())
        .collect();
    if donors.is_empty() {
        return Err(Error::NoDonors);
    }

    let mut features = BTreeMap::new();
    let treated_unit = &panel.units[treated_index];
    if let (Some(lat0), Some(lon0)) = (
        treated_unit.numeric_attribute("latitude"),
        treated_unit.numeric_attribute("longitude"),
    ) {
        let mut distances = BTreeMap::new();
        distances.insert(spec.treated_id.clone(), 0.0);
        for donor in &donors {
            let unit = &panel.units[panel.unit_index(donor).expect("donor from panel")];
            if let (Some(lat), Some(lon)) = (
                unit.numeric_attribute("latitude"),
                unit.numeric_attribute("longitude"),
            ) {
                distances.insert(donor.clone(), haversine_km(lat0, lon0, lat, lon));
            }
        }
        features.insert(RADIAL_DISTANCE_FEATURE.to_string(), distances);
    }

    Ok(DonorPool {
        treated: spec.treated_id.clone(),
        donors,
        features,
        warnings,
    })
}
