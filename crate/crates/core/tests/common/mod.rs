#![allow(dead_code)]

use bsenergy::record::{CellFeatures, Dataset, MeasurementRecord, ES_MODES};

pub const FIXTURE_STATIONS: usize = 923;
pub const FIXTURE_RU_TYPES: usize = 10;
pub const FIXTURE_MODES: usize = 3;
pub const FIXTURE_DAYS: u32 = 9;
pub const FIXTURE_ANTENNAS: [u32; 6] = [1, 2, 4, 8, 16, 32];
pub const FIXTURE_FREQUENCIES: [f64; 9] = [
    365.0, 426.0, 533.0, 700.0, 800.0, 1800.0, 2100.0, 2600.0, 3500.0,
];
pub const FIXTURE_BANDWIDTHS: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 100.0];

/// One record per station, cycling every categorical menu so each value is
/// observed: 6 antenna counts, 9 frequencies, 5 bandwidths, and
/// 10 + 3 + 9 = 22 RU type, mode and day categories.
pub fn vocabulary_fixture() -> Dataset {
    let records = (0..FIXTURE_STATIONS)
        .map(|i| MeasurementRecord {
            bs_id: format!("B{i:04}"),
            ru_type: format!("Type{}", i % FIXTURE_RU_TYPES),
            mode: format!("Mode{}", i % FIXTURE_MODES),
            antennas: FIXTURE_ANTENNAS[i % FIXTURE_ANTENNAS.len()],
            cells: vec![CellFeatures {
                load: (i % 10) as f64 / 10.0,
                es_mode: [0.0; ES_MODES],
                tx_power: 6.0 + (i % 3) as f64,
                frequency: FIXTURE_FREQUENCIES[i % FIXTURE_FREQUENCIES.len()],
                bandwidth: FIXTURE_BANDWIDTHS[i % FIXTURE_BANDWIDTHS.len()],
            }],
            day: i as u32 % FIXTURE_DAYS,
            hour: (i % 24) as u32,
            energy: 20.0 + (i % 7) as f64,
        })
        .collect();
    Dataset::new(records, "vocabulary fixture")
}

pub fn dimension_grid() -> Vec<(
    &'static str,
    &'static str,
    bsenergy::encoder::BsidMode,
    usize,
)> {
    use bsenergy::encoder::BsidMode::*;
    vec![
        ("ABF", "abf", Embedding, 204),
        ("AB", "ab", Embedding, 172),
        ("AF", "af", Embedding, 188),
        ("BF", "bf", Embedding, 199),
        ("A", "a", Embedding, 156),
        ("B", "b", Embedding, 167),
        ("F", "f", Embedding, 183),
        ("Numerical", "numerical", Embedding, 151),
        ("No-BSID", "abf", None, 140),
        ("One-Hot-BSID", "abf", OneHot, 1064),
    ]
}
