//! Canonical CSV telemetry, split manifests, and the adapter for the
//! three-file challenge layout.
//!
//! The canonical file is one flat row per station-hour:
//!
//! ```text
//! bs_id,ru_type,mode,antennas,day,hour,energy,
//! load_1,esmode1_1,..,esmode6_1,txpower_1,frequency_1,bandwidth_1, .. (cells 1..4)
//! ```
//!
//! Absent cells are written as zeros. Reals are written with 10 significant
//! digits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{
    validate_record, CellFeatures, Dataset, MeasurementRecord, SplitManifest, ES_MODES, MAX_CELLS,
};

const STATION_COLUMNS: [&str; 7] = [
    "bs_id", "ru_type", "mode", "antennas", "day", "hour", "energy",
];
const CELL_FIELDS: [&str; 10] = [
    "load",
    "esmode1",
    "esmode2",
    "esmode3",
    "esmode4",
    "esmode5",
    "esmode6",
    "txpower",
    "frequency",
    "bandwidth",
];

/// The canonical header, in order.
pub fn canonical_columns() -> Vec<String> {
    let mut cols: Vec<String> = STATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    for c in 1..=MAX_CELLS {
        cols.extend(CELL_FIELDS.iter().map(|f| format!("{f}_{c}")));
    }
    cols
}

/// Formats a real with at most 10 significant digits, never in exponent form.
pub fn format_real(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{value:.9e}")
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

/// What to do with rows that fail record validation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Validation {
    /// Abort with the offending row.
    #[default]
    Strict,
    /// Drop the row and count it.
    Permissive,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

pub fn parse_canonical(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_canonical_with(path, Validation::Strict).map(|(ds, _)| ds)
}

/// Parses a canonical CSV. Row numbers in errors are 1-based data rows.
pub fn parse_canonical_with(
    path: impl AsRef<Path>,
    validation: Validation,
) -> Result<(Dataset, IngestReport)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let expected = canonical_columns();
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::csv(path, e))?;
        report.rows_read += 1;
        let record = parse_row(&row, &expected, row_no)?;
        let violations = validate_record(&record);
        if violations.is_empty() {
            records.push(record);
        } else if validation == Validation::Permissive {
            report.rows_dropped += 1;
        } else {
            return Err(Error::InvalidRow {
                row: row_no,
                violations: join_violations(&violations),
            });
        }
    }
    Ok((Dataset::new(records, path.display().to_string()), report))
}

fn join_violations(v: &[crate::record::Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn field<T: std::str::FromStr>(
    row: &csv::StringRecord,
    cols: &[String],
    idx: usize,
    row_no: usize,
) -> Result<T> {
    let raw = row.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse {
        row: row_no,
        column: cols[idx].clone(),
        value: raw.to_string(),
    })
}

fn parse_row(row: &csv::StringRecord, cols: &[String], row_no: usize) -> Result<MeasurementRecord> {
    if row.len() != cols.len() {
        return Err(Error::Parse {
            row: row_no,
            column: "<row>".into(),
            value: format!("{} fields, expected {}", row.len(), cols.len()),
        });
    }
    let mut cells = Vec::with_capacity(MAX_CELLS);
    for c in 0..MAX_CELLS {
        let base = STATION_COLUMNS.len() + c * CELL_FIELDS.len();
        let mut es_mode = [0.0; ES_MODES];
        for (k, slot) in es_mode.iter_mut().enumerate() {
            *slot = field(row, cols, base + 1 + k, row_no)?;
        }
        cells.push(CellFeatures {
            load: field(row, cols, base, row_no)?,
            es_mode,
            tx_power: field(row, cols, base + 7, row_no)?,
            frequency: field(row, cols, base + 8, row_no)?,
            bandwidth: field(row, cols, base + 9, row_no)?,
        });
    }
    // Trailing padded cells are implicit; the primary slot is always kept.
    while cells.len() > 1 && !cells.last().unwrap().is_active() {
        cells.pop();
    }
    Ok(MeasurementRecord {
        bs_id: row[0].trim().to_string(),
        ru_type: row[1].trim().to_string(),
        mode: row[2].trim().to_string(),
        antennas: field(row, cols, 3, row_no)?,
        day: field(row, cols, 4, row_no)?,
        hour: field(row, cols, 5, row_no)?,
        energy: field(row, cols, 6, row_no)?,
        cells,
    })
}

pub fn write_canonical(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(canonical_columns())
        .map_err(|e| Error::csv(path, e))?;
    let padding = CellFeatures::inactive();
    for r in &dataset.records {
        let mut row = vec![
            r.bs_id.clone(),
            r.ru_type.clone(),
            r.mode.clone(),
            r.antennas.to_string(),
            r.day.to_string(),
            r.hour.to_string(),
            format_real(r.energy),
        ];
        for c in 0..MAX_CELLS {
            let cell = r.cells.get(c).unwrap_or(&padding);
            row.push(format_real(cell.load));
            row.extend(cell.es_mode.iter().map(|&v| format_real(v)));
            row.push(format_real(cell.tx_power));
            row.push(format_real(cell.frequency));
            row.push(format_real(cell.bandwidth));
        }
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest CSV: `bs_id,role[,test_days]` with role one of
/// `train`, `test_in`, `test_cross`. `test_days` is a `;`-separated day list
/// naming the test period of an in-domain station; such a station also trains
/// on its remaining days.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ok = header == ["bs_id", "role"] || header == ["bs_id", "role", "test_days"];
    if !ok {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: "bs_id,role[,test_days]".into(),
            found: header.join(","),
        });
    }
    let mut m = SplitManifest::default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let id = row.get(0).unwrap_or("").trim().to_string();
        let role = row.get(1).unwrap_or("").trim();
        match role {
            "train" => {
                m.train_bs_ids.insert(id);
            }
            "test_in" => {
                let days = row.get(2).unwrap_or("").trim();
                let mut set = BTreeSet::new();
                for d in days.split(';').map(str::trim).filter(|d| !d.is_empty()) {
                    set.insert(d.parse().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: "test_days".into(),
                        value: d.to_string(),
                    })?);
                }
                m.train_bs_ids.insert(id.clone());
                m.test_in_domain_ids.insert(id.clone());
                m.test_days.insert(id, set);
            }
            "test_cross" => {
                m.test_cross_domain_ids.insert(id);
            }
            other => {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "role".into(),
                    value: other.to_string(),
                })
            }
        }
    }
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(manifest: &SplitManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut put = |fields: [&str; 3]| w.write_record(fields).map_err(|e| Error::csv(path, e));
    put(["bs_id", "role", "test_days"])?;
    for id in &manifest.train_bs_ids {
        if manifest.test_in_domain_ids.contains(id) {
            let days = manifest
                .test_days
                .get(id)
                .map(|d| d.iter().map(u32::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            put([id, "test_in", &days])?;
        } else {
            put([id, "train", ""])?;
        }
    }
    for id in &manifest.test_cross_domain_ids {
        put([id, "test_cross", ""])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Partitions a single-file dataset into its training and test periods.
pub fn split_by_manifest(
    dataset: &Dataset,
    manifest: &SplitManifest,
) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &dataset.records {
        if !manifest.contains(&r.bs_id) {
            return Err(Error::MissingFromManifest(r.bs_id.clone()));
        }
        if manifest.is_test_record(r) {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((
        Dataset::new(train, format!("{} [train]", dataset.provenance)),
        Dataset::new(test, format!("{} [test]", dataset.provenance)),
    ))
}

/// Column names of the three challenge files.
///
/// `bs_info` has one row per (station, cell) with static hardware settings,
/// `cell_data` one row per (station, timestamp, cell), and `energy_data` one
/// row per (station, timestamp).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChallengeColumns {
    pub bs_id: String,
    pub cell: String,
    pub timestamp: String,
    /// chrono format string for `timestamp`.
    pub timestamp_format: String,
    pub ru_type: String,
    pub mode: String,
    pub antennas: String,
    pub tx_power: String,
    pub frequency: String,
    pub bandwidth: String,
    pub load: String,
    pub es_modes: [String; ES_MODES],
    pub energy: String,
}

impl Default for ChallengeColumns {
    fn default() -> Self {
        Self {
            bs_id: "BS".into(),
            cell: "CellName".into(),
            timestamp: "Time".into(),
            timestamp_format: "%m/%d/%Y %H:%M".into(),
            ru_type: "RUType".into(),
            mode: "Mode".into(),
            antennas: "Antennas".into(),
            tx_power: "TXpower".into(),
            frequency: "Frequency".into(),
            bandwidth: "Bandwidth".into(),
            load: "load".into(),
            es_modes: std::array::from_fn(|k| format!("ESMode{}", k + 1)),
            energy: "Energy".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JoinReport {
    /// Station-hours present on only one side of the join.
    pub dropped: usize,
}

struct Table {
    path: std::path::PathBuf,
    header: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header = reader
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header.get(name).copied().ok_or_else(|| Error::Format {
            path: self.path.clone(),
            message: format!("missing column {name:?}"),
        })
    }

    fn get<'a>(&self, row: &'a csv::StringRecord, col: usize) -> &'a str {
        row.get(col).unwrap_or("").trim()
    }

    fn parse<T: std::str::FromStr>(
        &self,
        row: &csv::StringRecord,
        col: usize,
        i: usize,
    ) -> Result<T> {
        let raw = self.get(row, col);
        raw.parse().map_err(|_| Error::Parse {
            row: i + 1,
            column: self.rows_column_name(col),
            value: raw.to_string(),
        })
    }

    fn rows_column_name(&self, col: usize) -> String {
        self.header
            .iter()
            .find(|(_, &i)| i == col)
            .map(|(k, _)| k.clone())
            .unwrap_or_default()
    }
}

struct CellStatic {
    ru_type: String,
    mode: String,
    antennas: u32,
    tx_power: f64,
    frequency: f64,
    bandwidth: f64,
}

/// Inner-joins the three challenge files into canonical records.
///
/// Days are counted from the earliest timestamp seen in `cell_data` or
/// `energy_data`. Station-level categoricals come from the station's first
/// cell in cell-name order.
pub fn join_challenge_layout(
    bs_info: impl AsRef<Path>,
    cell_data: impl AsRef<Path>,
    energy_data: impl AsRef<Path>,
    cols: &ChallengeColumns,
) -> Result<(Dataset, JoinReport)> {
    let info = Table::read(bs_info.as_ref())?;
    let cells = Table::read(cell_data.as_ref())?;
    let energy = Table::read(energy_data.as_ref())?;

    let parse_time = |t: &Table, row: &csv::StringRecord, col: usize, i: usize| {
        let raw = t.get(row, col);
        NaiveDateTime::parse_from_str(raw, &cols.timestamp_format).map_err(|_| Error::Parse {
            row: i + 1,
            column: cols.timestamp.clone(),
            value: raw.to_string(),
        })
    };

    let mut statics: BTreeMap<(String, String), CellStatic> = BTreeMap::new();
    {
        let (b, c) = (info.column(&cols.bs_id)?, info.column(&cols.cell)?);
        let (ru, mode, ant) = (
            info.column(&cols.ru_type)?,
            info.column(&cols.mode)?,
            info.column(&cols.antennas)?,
        );
        let (tx, freq, bw) = (
            info.column(&cols.tx_power)?,
            info.column(&cols.frequency)?,
            info.column(&cols.bandwidth)?,
        );
        for (i, row) in info.rows.iter().enumerate() {
            let key = (info.get(row, b).to_string(), info.get(row, c).to_string());
            let value = CellStatic {
                ru_type: info.get(row, ru).to_string(),
                mode: info.get(row, mode).to_string(),
                antennas: info.parse::<f64>(row, ant, i)?.round() as u32,
                tx_power: info.parse(row, tx, i)?,
                frequency: info.parse(row, freq, i)?,
                bandwidth: info.parse(row, bw, i)?,
            };
            if statics.insert(key.clone(), value).is_some() {
                return Err(Error::AmbiguousJoin(format!(
                    "bs_info ({}, {})",
                    key.0, key.1
                )));
            }
        }
    }

    let mut energies: BTreeMap<(String, NaiveDateTime), f64> = BTreeMap::new();
    {
        let (b, t, e) = (
            energy.column(&cols.bs_id)?,
            energy.column(&cols.timestamp)?,
            energy.column(&cols.energy)?,
        );
        for (i, row) in energy.rows.iter().enumerate() {
            let key = (
                energy.get(row, b).to_string(),
                parse_time(&energy, row, t, i)?,
            );
            if energies
                .insert(key.clone(), energy.parse(row, e, i)?)
                .is_some()
            {
                return Err(Error::AmbiguousJoin(format!(
                    "energy_data ({}, {})",
                    key.0, key.1
                )));
            }
        }
    }

    // (station, time) -> cell name -> (load, es modes)
    type CellHour = BTreeMap<String, (f64, [f64; ES_MODES])>;
    let mut hourly: BTreeMap<(String, NaiveDateTime), CellHour> = BTreeMap::new();
    {
        let (b, t, c, l) = (
            cells.column(&cols.bs_id)?,
            cells.column(&cols.timestamp)?,
            cells.column(&cols.cell)?,
            cells.column(&cols.load)?,
        );
        let es: Vec<usize> = cols
            .es_modes
            .iter()
            .map(|name| cells.column(name))
            .collect::<Result<_>>()?;
        for (i, row) in cells.rows.iter().enumerate() {
            let key = (
                cells.get(row, b).to_string(),
                parse_time(&cells, row, t, i)?,
            );
            let cell = cells.get(row, c).to_string();
            let mut levels = [0.0; ES_MODES];
            for (k, &col) in es.iter().enumerate() {
                levels[k] = cells.parse(row, col, i)?;
            }
            let load = cells.parse(row, l, i)?;
            let slot = hourly.entry(key.clone()).or_default();
            if slot.insert(cell.clone(), (load, levels)).is_some() {
                return Err(Error::AmbiguousJoin(format!(
                    "cell_data ({}, {}, {cell})",
                    key.0, key.1
                )));
            }
        }
    }

    let origin = hourly
        .keys()
        .map(|(_, t)| t.date())
        .chain(energies.keys().map(|(_, t)| t.date()))
        .min();

    let mut report = JoinReport::default();
    let mut records = Vec::new();
    for (key, group) in &hourly {
        if group.len() > MAX_CELLS {
            return Err(Error::TooManyCells {
                bs_id: key.0.clone(),
                timestamp: key.1.to_string(),
                count: group.len(),
            });
        }
        let Some(&energy) = energies.get(key) else {
            report.dropped += 1;
            continue;
        };
        let mut station = None;
        let mut out_cells = Vec::with_capacity(group.len());
        let mut complete = true;
        for (name, &(load, es_mode)) in group {
            let Some(s) = statics.get(&(key.0.clone(), name.clone())) else {
                complete = false;
                break;
            };
            station.get_or_insert(s);
            out_cells.push(CellFeatures {
                load,
                es_mode,
                tx_power: s.tx_power,
                frequency: s.frequency,
                bandwidth: s.bandwidth,
            });
        }
        let (true, Some(s)) = (complete, station) else {
            report.dropped += 1;
            continue;
        };
        let origin = origin.expect("non-empty");
        records.push(MeasurementRecord {
            bs_id: key.0.clone(),
            ru_type: s.ru_type.clone(),
            mode: s.mode.clone(),
            antennas: s.antennas,
            cells: out_cells,
            day: (key.1.date() - origin).num_days() as u32,
            hour: chrono::Timelike::hour(&key.1),
            energy,
        });
    }
    report.dropped += energies.keys().filter(|k| !hourly.contains_key(*k)).count();

    for (i, r) in records.iter().enumerate() {
        let v = validate_record(r);
        if !v.is_empty() {
            return Err(Error::InvalidRow {
                row: i + 1,
                violations: format!("{} {}: {}", r.bs_id, r.hour, join_violations(&v)),
            });
        }
    }
    let provenance = format!(
        "join({}, {}, {})",
        bs_info.as_ref().display(),
        cell_data.as_ref().display(),
        energy_data.as_ref().display()
    );
    Ok((Dataset::new(records, provenance), report))
}

/// Writes rows with a trailing newline; used by tests and fixtures.
pub fn write_lines(path: impl AsRef<Path>, lines: &[&str]) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
