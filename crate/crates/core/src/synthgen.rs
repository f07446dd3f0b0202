//! Synthetic fleets with a known closed-form energy model.
//!
//! Every station has a radio-unit type that fixes its hardware menus and the
//! centre of its power parameters. Within a type, stations carry one of a few
//! hidden hardware revisions that shift base power, load slope and savings,
//! plus a smaller offset of their own. Together these are the station's
//! fingerprint: stations with identical features consume visibly different
//! energy. Hourly energy is
//!
//! ```text
//! E = base + slope · txscale · Σ_c load_c − Σ_k δ_k · Σ_c esmode_{c,k} + ε
//! ```
//!
//! clipped below at `0.05 · base`, with `ε ~ N(0, σ)`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{rng, RngStream};
use crate::record::{CellFeatures, Dataset, MeasurementRecord, SplitManifest, ES_MODES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bs: usize,
    pub n_rutypes: usize,
    pub days: u32,
    pub cross_domain_fraction: f64,
    /// Range of per-type base power centres.
    pub base_range: (f64, f64),
    /// Range of per-type load slope centres.
    pub slope_range: (f64, f64),
    /// Hidden hardware revisions per type.
    pub revisions: usize,
    /// Relative standard deviation of revision offsets around the type centre.
    pub revision_spread: f64,
    /// Relative standard deviation of per-station offsets around the revision.
    pub jitter: f64,
    /// Upper bound of per-type energy-saving coefficients, relative to base power.
    pub saving_max: f64,
    /// Noise standard deviation relative to the mean noiseless energy.
    pub noise_rel: f64,
    /// Probability that a station runs a second cell.
    pub second_cell_prob: f64,
    /// Primary-cell load below which saving modes engage.
    pub saving_threshold: f64,
    pub seed: u64,
}

pub const HOURS_PER_DAY: u32 = 24;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_bs: 50,
            n_rutypes: 4,
            days: 8,
            cross_domain_fraction: 0.2,
            base_range: (15.0, 40.0),
            slope_range: (10.0, 35.0),
            revisions: 2,
            revision_spread: 0.12,
            jitter: 0.04,
            saving_max: 0.15,
            noise_rel: 0.01,
            second_cell_prob: 0.3,
            saving_threshold: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_bs < 2 {
            return bad("n_bs must be at least 2");
        }
        if self.n_rutypes == 0 || self.n_rutypes > self.n_bs {
            return bad("n_rutypes must be in 1..=n_bs");
        }
        if self.days == 0 {
            return bad("days must be at least 1");
        }
        if !(self.cross_domain_fraction > 0.0 && self.cross_domain_fraction < 1.0) {
            return bad("cross_domain_fraction must be in (0, 1)");
        }
        let positive_range = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !positive_range(self.base_range) || !positive_range(self.slope_range) {
            return bad("base and slope ranges must be positive and ordered");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.revisions == 0 {
            return bad("revisions must be at least 1");
        }
        if !(self.noise_rel >= 0.0
            && self.jitter >= 0.0
            && self.revision_spread >= 0.0
            && self.saving_max >= 0.0)
        {
            return bad("noise, jitter and saving bounds must be non-negative");
        }
        if !unit(self.second_cell_prob) || !unit(self.saving_threshold) {
            return bad("probabilities and thresholds must be in [0, 1]");
        }
        Ok(())
    }
}

/// Closed-form parameters of one station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationTruth {
    pub ru_type: String,
    pub revision: usize,
    pub base: f64,
    pub slope: f64,
    pub txscale: f64,
    pub delta: [f64; ES_MODES],
    pub antennas: u32,
    pub frequency: f64,
    pub bandwidth: f64,
    pub mode: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub stations: BTreeMap<String, StationTruth>,
}

/// Noiseless energy of `record` under its station's parameters.
pub fn oracle_energy(gt: &GroundTruth, record: &MeasurementRecord) -> Result<f64> {
    let s = gt
        .stations
        .get(&record.bs_id)
        .ok_or_else(|| Error::UnknownStation(record.bs_id.clone()))?;
    Ok(closed_form(s, &record.cells))
}

fn closed_form(s: &StationTruth, cells: &[CellFeatures]) -> f64 {
    let load: f64 = cells.iter().map(|c| c.load).sum();
    let saving: f64 = (0..ES_MODES)
        .map(|k| s.delta[k] * cells.iter().map(|c| c.es_mode[k]).sum::<f64>())
        .sum();
    (s.base + s.slope * s.txscale * load - saving).max(0.05 * s.base)
}

/// Hardware menus shared by every station of one radio-unit type.
struct TypeProfile {
    name: String,
    base: f64,
    slope: f64,
    delta: [f64; ES_MODES],
    /// Multipliers of base, slope and savings per revision.
    revisions: Vec<[f64; 3]>,
    antennas: Vec<u32>,
    modes: Vec<String>,
    frequencies: Vec<f64>,
    bandwidths: Vec<f64>,
    tx_powers: Vec<f64>,
    peak_load: (f64, f64),
}

const ANTENNAS: [u32; 6] = [2, 4, 8, 16, 32, 64];
const FREQUENCIES: [f64; 9] = [
    365.0, 426.0, 532.0, 700.0, 1800.0, 2100.0, 2600.0, 3500.0, 4900.0,
];
const BANDWIDTHS: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 100.0];
const TX_POWERS: [f64; 5] = [6.0, 6.875, 7.325, 7.875, 8.0];
const MODES: [&str; 3] = ["Mode1", "Mode2", "Mode3"];

/// `k` distinct items of `pool`, in pool order.
fn pick<T: Clone>(pool: &[T], k: usize, rng: &mut RngStream) -> Vec<T> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    rng.shuffle(&mut order);
    let mut chosen: Vec<usize> = order[..k.min(pool.len())].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

/// Centre values spread across `range` so that types are well separated.
fn stratified(n: usize, (lo, hi): (f64, f64), rng: &mut RngStream) -> Vec<f64> {
    let mut slots: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut slots);
    slots
        .into_iter()
        .map(|s| lo + (hi - lo) * (s as f64 + rng.uniform(0.25, 0.75)) / n as f64)
        .collect()
}

fn type_profiles(cfg: &SynthConfig, rng: &mut RngStream) -> Vec<TypeProfile> {
    let bases = stratified(cfg.n_rutypes, cfg.base_range, rng);
    let slopes = stratified(cfg.n_rutypes, cfg.slope_range, rng);
    (0..cfg.n_rutypes)
        .map(|t| {
            let mut delta = [0.0; ES_MODES];
            for k in pick(&(0..ES_MODES).collect::<Vec<_>>(), 3, rng) {
                delta[k] = rng.uniform(0.3, 1.0) * cfg.saving_max * bases[t];
            }
            let peak_lo = rng.uniform(0.35, 0.6);
            let revisions = (0..cfg.revisions)
                .map(|_| [0; 3].map(|_| fingerprint(cfg.revision_spread, rng)))
                .collect();
            TypeProfile {
                name: format!("Type{}", t + 1),
                base: bases[t],
                slope: slopes[t],
                delta,
                revisions,
                antennas: pick(&ANTENNAS, 1, rng),
                modes: pick(&MODES.map(String::from), 1, rng),
                frequencies: pick(&FREQUENCIES, 2, rng),
                bandwidths: pick(&BANDWIDTHS, 1, rng),
                tx_powers: pick(&TX_POWERS, 1, rng),
                peak_load: (peak_lo, peak_lo + 0.35),
            }
        })
        .collect()
}

/// Multiplicative offset `1 + jitter·z`, kept positive.
fn fingerprint(jitter: f64, rng: &mut RngStream) -> f64 {
    rng.normal(1.0, jitter).max(0.3)
}

struct StationPlan {
    id: String,
    truth: StationTruth,
    /// Frequency, bandwidth and tx power per active cell.
    cells: Vec<(f64, f64, f64)>,
    peak: f64,
    phase: f64,
}

/// Generates records, a split manifest and the per-station parameters.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, SplitManifest, GroundTruth)> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, rng::SYNTHGEN);
    let types = type_profiles(cfg, &mut root.substream("types"));

    let width = cfg.n_bs.to_string().len().max(3);
    let stations: Vec<StationPlan> = (0..cfg.n_bs)
        .map(|b| {
            let id = format!("BS{b:0width$}");
            let mut r = root.substream(&id);
            let ty = &types[b % types.len()];
            let revision = (b / types.len()) % cfg.revisions;
            let [m_base, m_slope, m_saving] = ty.revisions[revision];
            let n_cells = if r.bernoulli(cfg.second_cell_prob) {
                2
            } else {
                1
            };
            let freqs = pick(&ty.frequencies, n_cells, &mut r);
            let cells: Vec<(f64, f64, f64)> = freqs
                .into_iter()
                .map(|f| (f, *r.choose(&ty.bandwidths), *r.choose(&ty.tx_powers)))
                .collect();
            let mut delta = ty.delta;
            for d in &mut delta {
                *d *= m_saving * fingerprint(cfg.jitter, &mut r);
            }
            let truth = StationTruth {
                ru_type: ty.name.clone(),
                revision,
                base: ty.base * m_base * fingerprint(cfg.jitter, &mut r),
                slope: ty.slope * m_slope * fingerprint(cfg.jitter, &mut r),
                txscale: cells[0].2 / 8.0,
                delta,
                antennas: *r.choose(&ty.antennas),
                frequency: cells[0].0,
                bandwidth: cells[0].1,
                mode: r.choose(&ty.modes).clone(),
            };
            StationPlan {
                id,
                truth,
                cells,
                peak: r.uniform(ty.peak_load.0, ty.peak_load.1),
                phase: r.uniform(-1.5, 1.5),
            }
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.n_bs * (cfg.days * HOURS_PER_DAY) as usize);
    let mut clean = Vec::with_capacity(records.capacity());
    for s in &stations {
        let mut r = root.substream(&format!("{}/hours", s.id));
        for day in 0..cfg.days {
            for hour in 0..HOURS_PER_DAY {
                let angle = 2.0 * std::f64::consts::PI * (f64::from(hour) - 4.0 - s.phase) / 24.0;
                let profile = 0.5 - 0.5 * angle.cos();
                let primary =
                    (s.peak * (0.1 + 0.9 * profile) + r.uniform(-0.08, 0.08)).clamp(0.0, 1.0);
                let cells: Vec<CellFeatures> = s
                    .cells
                    .iter()
                    .enumerate()
                    .map(|(c, &(frequency, bandwidth, tx_power))| {
                        let load = if c == 0 {
                            primary
                        } else {
                            (0.6 * primary + r.uniform(-0.05, 0.05)).clamp(0.0, 1.0)
                        };
                        let mut es_mode = [0.0; ES_MODES];
                        if load < cfg.saving_threshold {
                            for (k, level) in es_mode.iter_mut().enumerate() {
                                if s.truth.delta[k] > 0.0 {
                                    *level =
                                        r.uniform(0.2, 1.0) * (1.0 - load / cfg.saving_threshold);
                                }
                            }
                        }
                        CellFeatures {
                            load,
                            es_mode,
                            tx_power,
                            frequency,
                            bandwidth,
                        }
                    })
                    .collect();
                clean.push(closed_form(&s.truth, &cells));
                records.push(MeasurementRecord {
                    bs_id: s.id.clone(),
                    ru_type: s.truth.ru_type.clone(),
                    mode: s.truth.mode.clone(),
                    antennas: s.truth.antennas,
                    cells,
                    day,
                    hour,
                    energy: 0.0,
                });
            }
        }
    }

    let sigma = cfg.noise_rel * clean.iter().sum::<f64>() / clean.len() as f64;
    let mut noise = root.substream("noise");
    let floors: BTreeMap<&str, f64> = stations
        .iter()
        .map(|s| (s.id.as_str(), 0.05 * s.truth.base))
        .collect();
    for (rec, e) in records.iter_mut().zip(clean) {
        rec.energy = (e + noise.normal(0.0, sigma)).max(floors[rec.bs_id.as_str()]);
    }

    let manifest = split(cfg, &stations, &mut root.substream("split"));
    let truth = GroundTruth {
        stations: stations.into_iter().map(|s| (s.id, s.truth)).collect(),
    };
    Ok((
        Dataset::new(records, format!("synthetic fleet seed={}", cfg.seed)),
        manifest,
        truth,
    ))
}

/// Reserves a share of each type's stations as unseen; the rest train and are
/// tested in-domain on their last day.
fn split(cfg: &SynthConfig, stations: &[StationPlan], rng: &mut RngStream) -> SplitManifest {
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in stations {
        by_type.entry(&s.truth.ru_type).or_default().push(&s.id);
    }
    let target = ((cfg.cross_domain_fraction * stations.len() as f64).round() as usize)
        .clamp(1, stations.len() - 1);
    let mut cross = BTreeSet::new();
    let mut leftovers = Vec::new();
    for ids in by_type.values_mut() {
        rng.shuffle(ids);
        let k = (cfg.cross_domain_fraction * ids.len() as f64).floor() as usize;
        cross.extend(ids[..k].iter().map(|s| s.to_string()));
        leftovers.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    rng.shuffle(&mut leftovers);
    for id in leftovers {
        if cross.len() >= target {
            break;
        }
        cross.insert(id);
    }

    let mut m = SplitManifest::default();
    let last_day = BTreeSet::from([cfg.days - 1]);
    for s in stations {
        if cross.contains(&s.id) {
            m.test_cross_domain_ids.insert(s.id.clone());
        } else {
            m.train_bs_ids.insert(s.id.clone());
            if cfg.days > 1 {
                m.test_in_domain_ids.insert(s.id.clone());
                m.test_days.insert(s.id.clone(), last_day.clone());
            }
        }
    }
    m
}

const TRUTH_COLUMNS: [&str; 10] = [
    "bs_id",
    "ru_type",
    "revision",
    "mode",
    "antennas",
    "frequency",
    "bandwidth",
    "base",
    "slope",
    "txscale",
];

pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<String> = TRUTH_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=ES_MODES).map(|k| format!("delta{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, s) in &gt.stations {
        let mut row = vec![
            id.clone(),
            s.ru_type.clone(),
            s.revision.to_string(),
            s.mode.clone(),
            s.antennas.to_string(),
            format!("{:?}", s.frequency),
            format!("{:?}", s.bandwidth),
            format!("{:?}", s.base),
            format!("{:?}", s.slope),
            format!("{:?}", s.txscale),
        ];
        row.extend(s.delta.iter().map(|d| format!("{d:?}")));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected: Vec<String> = TRUTH_COLUMNS.iter().map(|s| s.to_string()).collect();
    expected.extend((1..=ES_MODES).map(|k| format!("delta{k}")));
    if header != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    let mut gt = GroundTruth::default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let num = |c: usize| -> Result<f64> {
            row[c].trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: expected[c].clone(),
                value: row[c].to_string(),
            })
        };
        let mut delta = [0.0; ES_MODES];
        for (k, d) in delta.iter_mut().enumerate() {
            *d = num(TRUTH_COLUMNS.len() + k)?;
        }
        let int = |c: usize| -> Result<u64> {
            row[c].trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: expected[c].clone(),
                value: row[c].to_string(),
            })
        };
        gt.stations.insert(
            row[0].to_string(),
            StationTruth {
                ru_type: row[1].to_string(),
                revision: int(2)? as usize,
                mode: row[3].to_string(),
                antennas: int(4)? as u32,
                frequency: num(5)?,
                bandwidth: num(6)?,
                base: num(7)?,
                slope: num(8)?,
                txscale: num(9)?,
                delta,
            },
        );
    }
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::validate_record;

    fn station(base: f64, slope: f64, delta1: f64) -> StationTruth {
        let mut delta = [0.0; ES_MODES];
        delta[0] = delta1;
        StationTruth {
            ru_type: "T".into(),
            revision: 0,
            base,
            slope,
            txscale: 1.0,
            delta,
            antennas: 4,
            frequency: 3500.0,
            bandwidth: 100.0,
            mode: "M".into(),
        }
    }

    fn cell(load: f64, es1: f64) -> CellFeatures {
        let mut c = CellFeatures {
            load,
            tx_power: 8.0,
            frequency: 3500.0,
            bandwidth: 100.0,
            ..CellFeatures::default()
        };
        c.es_mode[0] = es1;
        c
    }

    #[test]
    fn closed_form_examples() {
        assert!((closed_form(&station(10.0, 5.0, 0.0), &[cell(0.4, 0.0)]) - 12.0).abs() < 1e-12);
        assert_eq!(
            closed_form(&station(10.0, 5.0, 0.0), &[cell(0.0, 0.0)]),
            10.0
        );
        assert!((closed_form(&station(10.0, 5.0, 2.0), &[cell(0.4, 1.0)]) - 10.0).abs() < 1e-12);
        // clipped at 5% of base
        assert_eq!(
            closed_form(&station(10.0, 5.0, 50.0), &[cell(0.0, 1.0)]),
            0.5
        );
    }

    #[test]
    fn default_fleet_shape() {
        let (ds, m, gt) = generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.len(), 9600);
        assert_eq!(gt.stations.len(), 50);
        assert_eq!(m.test_cross_domain_ids.len(), 10);
        assert_eq!(m.train_bs_ids.len(), 40);
        m.validate().unwrap();
        assert!(ds.records.iter().all(|r| validate_record(r).is_empty()));
        let types: BTreeSet<_> = m
            .test_cross_domain_ids
            .iter()
            .map(|id| gt.stations[id].ru_type.clone())
            .collect();
        assert_eq!(types.len(), 4, "cross-domain stations cover every type");
    }

    #[test]
    fn noiseless_fleet_matches_oracle() {
        let cfg = SynthConfig {
            noise_rel: 0.0,
            n_bs: 12,
            days: 2,
            ..SynthConfig::default()
        };
        let (ds, _, gt) = generate(&cfg).unwrap();
        for r in &ds.records {
            assert!((oracle_energy(&gt, r).unwrap() - r.energy).abs() <= 1e-12);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig {
            n_bs: 8,
            days: 2,
            seed: 9,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        let c = generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn unknown_station_is_an_error() {
        let r = crate::record::tests::record("nowhere");
        assert!(matches!(
            oracle_energy(&GroundTruth::default(), &r),
            Err(Error::UnknownStation(_))
        ));
    }

    #[test]
    fn ground_truth_round_trips() {
        let cfg = SynthConfig {
            n_bs: 6,
            days: 1,
            ..SynthConfig::default()
        };
        let (_, _, gt) = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        write_ground_truth(&gt, &path).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), gt);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                n_bs: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                cross_domain_fraction: 1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                noise_rel: -0.1,
                ..SynthConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
