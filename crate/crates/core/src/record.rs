//! In-memory telemetry samples and dataset splits.
//!
//! One [`MeasurementRecord`] is one base-station hour. Records are plain
//! values; nothing here knows about files (see [`crate::ingest`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of cells a base station reports.
pub const MAX_CELLS: usize = 4;

/// Number of energy-saving mode activation levels per cell.
pub const ES_MODES: usize = 6;

/// Per-cell features for one hour. An inactive or padded cell is all zeros.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellFeatures {
    pub load: f64,
    pub es_mode: [f64; ES_MODES],
    pub tx_power: f64,
    pub frequency: f64,
    pub bandwidth: f64,
}

impl CellFeatures {
    pub fn inactive() -> Self {
        Self::default()
    }

    pub fn is_active(&self) -> bool {
        self.load != 0.0
            || self.es_mode.iter().any(|&v| v != 0.0)
            || self.tx_power != 0.0
            || self.frequency != 0.0
            || self.bandwidth != 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub bs_id: String,
    pub ru_type: String,
    pub mode: String,
    pub antennas: u32,
    /// Index 0 is the primary cell.
    pub cells: Vec<CellFeatures>,
    pub day: u32,
    pub hour: u32,
    pub energy: f64,
}

impl MeasurementRecord {
    /// Cell at `slot`, or `None` past the reported cells.
    pub fn cell(&self, slot: usize) -> Option<&CellFeatures> {
        self.cells.get(slot).filter(|c| c.is_active())
    }
}

/// A single invariant violation found by [`validate_record`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        field: field.into(),
        message: message.into(),
    }
}

/// Returns every invariant the record breaks. An empty list means the record is valid.
pub fn validate_record(record: &MeasurementRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.cells.is_empty() || record.cells.len() > MAX_CELLS {
        out.push(violation(
            "cells",
            format!("count {} out of 1..={MAX_CELLS}", record.cells.len()),
        ));
    }
    if record.hour > 23 {
        out.push(violation("hour", "out of range"));
    }
    if !(record.energy > 0.0 && record.energy.is_finite()) {
        out.push(violation("energy", "must be a finite value > 0"));
    }
    if record.antennas == 0 {
        out.push(violation("antennas", "must be positive"));
    }
    for (i, cell) in record.cells.iter().enumerate() {
        let name = |f: &str| format!("cells[{i}].{f}");
        if !(0.0..=1.0).contains(&cell.load) {
            out.push(violation(name("load"), "out of [0,1]"));
        }
        for (k, &level) in cell.es_mode.iter().enumerate() {
            if !(level >= 0.0 && level.is_finite()) {
                out.push(violation(
                    name(&format!("es_mode{}", k + 1)),
                    "must be >= 0",
                ));
            }
        }
        if !cell.tx_power.is_finite() {
            out.push(violation(name("tx_power"), "must be finite"));
        }
        if cell.is_active() {
            if !(cell.frequency > 0.0 && cell.frequency.is_finite()) {
                out.push(violation(
                    name("frequency"),
                    "must be > 0 for an active cell",
                ));
            }
            if !(cell.bandwidth > 0.0 && cell.bandwidth.is_finite()) {
                out.push(violation(
                    name("bandwidth"),
                    "must be > 0 for an active cell",
                ));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<MeasurementRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<MeasurementRecord>, provenance: impl Into<String>) -> Self {
        Self {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    /// Distinct station ids in sorted order.
    pub fn bs_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.bs_id.clone()).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    /// Records whose station satisfies `keep`.
    pub fn filter_stations(&self, keep: impl Fn(&str) -> bool, provenance: &str) -> Dataset {
        Dataset {
            records: self
                .records
                .iter()
                .filter(|r| keep(&r.bs_id))
                .cloned()
                .collect(),
            provenance: format!("{} [{provenance}]", self.provenance),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    InDomain,
    CrossDomain,
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::InDomain => "in_domain",
            Cohort::CrossDomain => "cross_domain",
        })
    }
}

/// Which stations train, and which are evaluated as seen or unseen.
///
/// In-domain stations appear in both the train and test sets. Their test
/// period is given per station by `test_days`; the remaining days train.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitManifest {
    pub train_bs_ids: BTreeSet<String>,
    pub test_in_domain_ids: BTreeSet<String>,
    pub test_cross_domain_ids: BTreeSet<String>,
    pub test_days: BTreeMap<String, BTreeSet<u32>>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self
            .test_cross_domain_ids
            .intersection(&self.train_bs_ids)
            .next()
        {
            return Err(Error::Manifest(format!(
                "cross-domain station {id:?} is also a training station"
            )));
        }
        if let Some(id) = self
            .test_in_domain_ids
            .difference(&self.train_bs_ids)
            .next()
        {
            return Err(Error::Manifest(format!(
                "in-domain station {id:?} is not a training station"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, bs_id: &str) -> bool {
        self.train_bs_ids.contains(bs_id) || self.test_cross_domain_ids.contains(bs_id)
    }

    /// True if this record belongs to the test period of its station.
    pub fn is_test_record(&self, record: &MeasurementRecord) -> bool {
        if self.test_cross_domain_ids.contains(&record.bs_id) {
            return true;
        }
        self.test_in_domain_ids.contains(&record.bs_id)
            && self
                .test_days
                .get(&record.bs_id)
                .is_some_and(|days| days.contains(&record.day))
    }
}

/// Seen-or-unseen classification of a test sample's station.
pub fn classify_sample(record: &MeasurementRecord, manifest: &SplitManifest) -> Result<Cohort> {
    classify_station(&record.bs_id, manifest)
}

pub fn classify_station(bs_id: &str, manifest: &SplitManifest) -> Result<Cohort> {
    if manifest.test_cross_domain_ids.contains(bs_id) {
        Ok(Cohort::CrossDomain)
    } else if manifest.test_in_domain_ids.contains(bs_id) {
        Ok(Cohort::InDomain)
    } else {
        Err(Error::UnknownTestMember(bs_id.to_string()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn cell(load: f64) -> CellFeatures {
        CellFeatures {
            load,
            es_mode: [0.0; ES_MODES],
            tx_power: 40.0,
            frequency: 3500.0,
            bandwidth: 100.0,
        }
    }

    pub(crate) fn record(bs_id: &str) -> MeasurementRecord {
        MeasurementRecord {
            bs_id: bs_id.to_string(),
            ru_type: "RU1".into(),
            mode: "M1".into(),
            antennas: 4,
            cells: vec![cell(0.5)],
            day: 0,
            hour: 12,
            energy: 30.0,
        }
    }

    fn manifest() -> SplitManifest {
        SplitManifest {
            train_bs_ids: ["B7".to_string()].into(),
            test_in_domain_ids: ["B7".to_string()].into(),
            test_cross_domain_ids: ["B9".to_string()].into(),
            test_days: BTreeMap::new(),
        }
    }

    #[test]
    fn classify_examples() {
        let m = manifest();
        assert_eq!(
            classify_sample(&record("B7"), &m).unwrap(),
            Cohort::InDomain
        );
        assert_eq!(
            classify_sample(&record("B9"), &m).unwrap(),
            Cohort::CrossDomain
        );
        assert!(matches!(
            classify_sample(&record("B1"), &m),
            Err(Error::UnknownTestMember(id)) if id == "B1"
        ));
    }

    #[test]
    fn valid_record_has_no_violations() {
        assert!(validate_record(&record("B1")).is_empty());
    }

    #[test]
    fn load_above_one_is_reported() {
        let mut r = record("B1");
        r.cells[0].load = 1.2;
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "cells[0].load out of [0,1]");
    }

    #[test]
    fn hour_24_is_reported() {
        let mut r = record("B1");
        r.hour = 24;
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "hour out of range");
    }

    #[test]
    fn every_violation_is_listed() {
        let mut r = record("B1");
        r.energy = 0.0;
        r.cells = vec![cell(0.1); 5];
        r.cells[2].es_mode[3] = -1.0;
        r.cells[1].frequency = 0.0;
        let fields: Vec<_> = validate_record(&r).into_iter().map(|v| v.field).collect();
        assert_eq!(
            fields,
            vec!["cells", "energy", "cells[1].frequency", "cells[2].es_mode4"]
        );
    }

    #[test]
    fn padded_cell_is_valid_and_inactive() {
        let mut r = record("B1");
        r.cells.push(CellFeatures::inactive());
        assert!(validate_record(&r).is_empty());
        assert!(r.cell(1).is_none());
        assert!(r.cell(0).is_some());
    }

    #[test]
    fn manifest_rejects_overlap() {
        let mut m = manifest();
        assert!(m.validate().is_ok());
        m.train_bs_ids.insert("B9".into());
        assert!(m.validate().is_err());
    }
}
