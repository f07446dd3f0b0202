//! Record to feature-vector encoding.
//!
//! Vector layout, frozen:
//!
//! | block | width |
//! |---|---|
//! | ru_type one-hot | `|ru_type|` |
//! | mode one-hot | `|mode|` |
//! | antennas | 1 numeric, or `|antennas|` one-hot |
//! | cell slot ×4: load, esmode1..6, txpower | 8 numeric |
//! | cell slot ×4: frequency, bandwidth | 1 numeric each, or shared-vocabulary one-hot |
//! | day one-hot | `|day|` |
//! | hour one-hot | `|hour|` |
//! | bsid one-hot (only in [`BsidMode::OneHot`]) | `1 + #stations`, column 0 is unknown |
//!
//! Out-of-vocabulary categories and padded cells encode as zeros.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::record::{Dataset, MeasurementRecord, ES_MODES, MAX_CELLS};

/// Width of the BSID embedding the model appends in embedding mode.
pub const DEFAULT_EMBED_DIM: usize = 64;

/// How the station identifier reaches the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsidMode {
    Embedding,
    OneHot,
    None,
}

impl std::str::FromStr for BsidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(BsidMode::Embedding),
            "onehot" | "one_hot" => Ok(BsidMode::OneHot),
            "none" => Ok(BsidMode::None),
            other => Err(Error::Config(format!("unknown bsid mode {other:?}"))),
        }
    }
}

/// Unfitted plan: the A/B/F toggles and the BSID treatment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanTemplate {
    pub onehot_antennas: bool,
    pub onehot_bandwidth: bool,
    pub onehot_frequency: bool,
    pub bsid_mode: BsidMode,
    /// z-score direct numeric features with training statistics.
    pub normalize: bool,
    pub embed_dim: usize,
}

impl Default for PlanTemplate {
    fn default() -> Self {
        Self::abf(BsidMode::Embedding)
    }
}

impl PlanTemplate {
    pub fn abf(bsid_mode: BsidMode) -> Self {
        Self::from_toggles(true, true, true, bsid_mode)
    }

    pub fn numerical(bsid_mode: BsidMode) -> Self {
        Self::from_toggles(false, false, false, bsid_mode)
    }

    pub fn from_toggles(
        antennas: bool,
        bandwidth: bool,
        frequency: bool,
        bsid_mode: BsidMode,
    ) -> Self {
        Self {
            onehot_antennas: antennas,
            onehot_bandwidth: bandwidth,
            onehot_frequency: frequency,
            bsid_mode,
            normalize: true,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }

    /// Parses `numerical` or any combination of the letters `a`, `b`, `f`.
    pub fn from_letters(spec: &str, bsid_mode: BsidMode) -> Result<Self> {
        let spec = spec.to_ascii_lowercase();
        if spec == "numerical" {
            return Ok(Self::numerical(bsid_mode));
        }
        if spec.is_empty() || !spec.chars().all(|c| "abf".contains(c)) {
            return Err(Error::Config(format!("unknown plan {spec:?}")));
        }
        Ok(Self::from_toggles(
            spec.contains('a'),
            spec.contains('b'),
            spec.contains('f'),
            bsid_mode,
        ))
    }

    /// Short label: the one-hot letters, or `Numerical`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.onehot_antennas {
            s.push('A');
        }
        if self.onehot_bandwidth {
            s.push('B');
        }
        if self.onehot_frequency {
            s.push('F');
        }
        if s.is_empty() {
            s.push_str("Numerical");
        }
        s
    }
}

/// Distinct training values of one categorical feature, sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary<T> {
    pub feature: String,
    pub values: Vec<T>,
    /// When set, position 0 of the encoded block is an unknown slot.
    pub reserved_unknown: bool,
}

impl<T: Clone + PartialOrd> Vocabulary<T> {
    pub fn fit(
        feature: &str,
        observed: impl IntoIterator<Item = T>,
        reserved_unknown: bool,
    ) -> Self {
        let mut values: Vec<T> = observed.into_iter().collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("vocabulary values are comparable"));
        values.dedup_by(|a, b| a == b);
        Self {
            feature: feature.to_string(),
            values,
            reserved_unknown,
        }
    }

    /// Position among the fitted values.
    pub fn position(&self, value: &T) -> Option<usize> {
        self.values
            .binary_search_by(|probe| probe.partial_cmp(value).expect("comparable"))
            .ok()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Width of the one-hot block.
    pub fn width(&self) -> usize {
        self.values.len() + usize::from(self.reserved_unknown)
    }

    /// Writes the one-hot block; zeros when `value` is out of vocabulary.
    fn write_onehot(&self, value: &T, out: &mut [f64]) {
        out.fill(0.0);
        let offset = usize::from(self.reserved_unknown);
        match self.position(value) {
            Some(p) => out[p + offset] = 1.0,
            None if self.reserved_unknown => out[0] = 1.0,
            None => {}
        }
    }
}

/// Training mean and standard deviation of one direct numeric column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
    };

    /// Population statistics; zero variance gets `std = 1`.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::IDENTITY;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Per-slot statistics for the eight always-numeric cell features plus
/// frequency and bandwidth when those are numeric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub load: NormStats,
    pub es_mode: [NormStats; ES_MODES],
    pub tx_power: NormStats,
    pub frequency: NormStats,
    pub bandwidth: NormStats,
}

/// A named contiguous block of the feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

/// A fitted plan. Immutable once fitted; encoding is pure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub template: PlanTemplate,
    pub ru_type: Vocabulary<String>,
    pub mode: Vocabulary<String>,
    pub day: Vocabulary<u32>,
    pub hour: Vocabulary<u32>,
    pub antennas: Option<Vocabulary<u32>>,
    pub frequency: Option<Vocabulary<f64>>,
    pub bandwidth: Option<Vocabulary<f64>>,
    /// Station ids; index `i` in the fitted list maps to BSID index `i + 1`.
    pub bsid: Option<Vocabulary<String>>,
    pub antennas_stats: NormStats,
    pub cell_stats: Vec<CellStats>,
    pub cell_slots: usize,
}

/// Encoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Present in embedding mode; 0 is the reserved unknown station.
    pub bsid_index: Option<usize>,
}

/// Fits vocabularies, the station index and normalization statistics on `train`.
pub fn fit(template: &PlanTemplate, train: &Dataset) -> Result<EncodingPlan> {
    train.ensure_non_empty()?;
    let recs = &train.records;
    let active_cells = || {
        recs.iter()
            .flat_map(|r| r.cells.iter().filter(|c| c.is_active()))
    };

    let stats_of = |values: Vec<f64>| {
        if template.normalize {
            NormStats::from_samples(&values)
        } else {
            NormStats::IDENTITY
        }
    };

    let mut cell_stats = Vec::with_capacity(MAX_CELLS);
    for slot in 0..MAX_CELLS {
        let cells: Vec<_> = recs.iter().filter_map(|r| r.cell(slot)).collect();
        let col = |f: &dyn Fn(&crate::record::CellFeatures) -> f64| {
            stats_of(cells.iter().map(|c| f(c)).collect())
        };
        cell_stats.push(CellStats {
            load: col(&|c| c.load),
            es_mode: std::array::from_fn(|k| col(&|c| c.es_mode[k])),
            tx_power: col(&|c| c.tx_power),
            frequency: col(&|c| c.frequency),
            bandwidth: col(&|c| c.bandwidth),
        });
    }

    Ok(EncodingPlan {
        template: template.clone(),
        ru_type: Vocabulary::fit("ru_type", recs.iter().map(|r| r.ru_type.clone()), false),
        mode: Vocabulary::fit("mode", recs.iter().map(|r| r.mode.clone()), false),
        day: Vocabulary::fit("day", recs.iter().map(|r| r.day), false),
        hour: Vocabulary::fit("hour", recs.iter().map(|r| r.hour), false),
        antennas: template
            .onehot_antennas
            .then(|| Vocabulary::fit("antennas", recs.iter().map(|r| r.antennas), false)),
        frequency: template
            .onehot_frequency
            .then(|| Vocabulary::fit("frequency", active_cells().map(|c| c.frequency), false)),
        bandwidth: template
            .onehot_bandwidth
            .then(|| Vocabulary::fit("bandwidth", active_cells().map(|c| c.bandwidth), false)),
        bsid: (template.bsid_mode != BsidMode::None)
            .then(|| Vocabulary::fit("bsid", recs.iter().map(|r| r.bs_id.clone()), true)),
        antennas_stats: stats_of(recs.iter().map(|r| f64::from(r.antennas)).collect()),
        cell_stats,
        cell_slots: MAX_CELLS,
    })
}

impl EncodingPlan {
    pub fn bsid_mode(&self) -> BsidMode {
        self.template.bsid_mode
    }

    fn frequency_width(&self) -> usize {
        self.frequency.as_ref().map_or(1, Vocabulary::width)
    }

    fn bandwidth_width(&self) -> usize {
        self.bandwidth.as_ref().map_or(1, Vocabulary::width)
    }

    /// Width of one cell slot.
    pub fn cell_width(&self) -> usize {
        2 + ES_MODES + self.frequency_width() + self.bandwidth_width()
    }

    /// Blocks in vector order.
    pub fn layout(&self) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, width: usize| {
            blocks.push(Block {
                name,
                offset,
                width,
            });
            offset += width;
        };
        push("ru_type".into(), self.ru_type.width());
        push("mode".into(), self.mode.width());
        push(
            "antennas".into(),
            self.antennas.as_ref().map_or(1, Vocabulary::width),
        );
        for slot in 1..=self.cell_slots {
            push(format!("cell{slot}.numeric"), 2 + ES_MODES);
            push(format!("cell{slot}.frequency"), self.frequency_width());
            push(format!("cell{slot}.bandwidth"), self.bandwidth_width());
        }
        push("day".into(), self.day.width());
        push("hour".into(), self.hour.width());
        if self.bsid_mode() == BsidMode::OneHot {
            push(
                "bsid".into(),
                self.bsid.as_ref().map_or(0, Vocabulary::width),
            );
        }
        blocks
    }

    /// Length of every vector [`encode`](Self::encode) produces.
    pub fn feature_width(&self) -> usize {
        self.layout().iter().map(|b| b.width).sum()
    }

    /// Model input dimension: the feature width plus the embedding width in
    /// embedding mode.
    pub fn dimension(&self) -> usize {
        self.feature_width()
            + if self.bsid_mode() == BsidMode::Embedding {
                self.template.embed_dim
            } else {
                0
            }
    }

    /// Number of fitted stations.
    pub fn station_count(&self) -> usize {
        self.bsid.as_ref().map_or(0, Vocabulary::len)
    }

    /// Index of a station: 1..=N for fitted ids, 0 otherwise.
    pub fn bsid_index(&self, bs_id: &str) -> usize {
        self.bsid
            .as_ref()
            .and_then(|v| v.position(&bs_id.to_string()))
            .map_or(0, |p| p + 1)
    }

    /// Station id at `index`, `None` for 0 or out of range.
    pub fn station_at(&self, index: usize) -> Option<&str> {
        let vocab = self.bsid.as_ref()?;
        index
            .checked_sub(1)
            .and_then(|i| vocab.values.get(i))
            .map(String::as_str)
    }

    pub fn encode(&self, record: &MeasurementRecord) -> FeatureVector {
        let mut values = vec![0.0; self.feature_width()];
        self.encode_into(record, &mut values);
        FeatureVector {
            values,
            bsid_index: (self.bsid_mode() == BsidMode::Embedding)
                .then(|| self.bsid_index(&record.bs_id)),
        }
    }

    /// Writes the encoding of `record` into `out`, which must be `feature_width()` long.
    pub fn encode_into(&self, record: &MeasurementRecord, out: &mut [f64]) {
        assert_eq!(out.len(), self.feature_width(), "output buffer width");
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start..at
        };

        self.ru_type
            .write_onehot(&record.ru_type, &mut out[take(self.ru_type.width())]);
        self.mode
            .write_onehot(&record.mode, &mut out[take(self.mode.width())]);
        match &self.antennas {
            Some(v) => v.write_onehot(&record.antennas, &mut out[take(v.width())]),
            None => out[take(1).start] = self.antennas_stats.apply(f64::from(record.antennas)),
        }

        for slot in 0..self.cell_slots {
            let numeric = take(2 + ES_MODES);
            let freq = take(self.frequency_width());
            let bw = take(self.bandwidth_width());
            let Some(cell) = record.cell(slot) else {
                out[numeric.start..bw.end].fill(0.0);
                continue;
            };
            let stats = &self.cell_stats[slot];
            let dst = &mut out[numeric];
            dst[0] = stats.load.apply(cell.load);
            for k in 0..ES_MODES {
                dst[1 + k] = stats.es_mode[k].apply(cell.es_mode[k]);
            }
            dst[1 + ES_MODES] = stats.tx_power.apply(cell.tx_power);
            match &self.frequency {
                Some(v) => v.write_onehot(&cell.frequency, &mut out[freq]),
                None => out[freq.start] = stats.frequency.apply(cell.frequency),
            }
            match &self.bandwidth {
                Some(v) => v.write_onehot(&cell.bandwidth, &mut out[bw]),
                None => out[bw.start] = stats.bandwidth.apply(cell.bandwidth),
            }
        }

        self.day
            .write_onehot(&record.day, &mut out[take(self.day.width())]);
        self.hour
            .write_onehot(&record.hour, &mut out[take(self.hour.width())]);
        if self.bsid_mode() == BsidMode::OneHot {
            if let Some(v) = &self.bsid {
                v.write_onehot(&record.bs_id, &mut out[take(v.width())]);
            }
        }
    }

    /// Offset of the BSID one-hot block, in one-hot mode.
    pub fn bsid_onehot_offset(&self) -> Option<usize> {
        if self.bsid_mode() != BsidMode::OneHot {
            return None;
        }
        self.layout()
            .iter()
            .find(|b| b.name == "bsid")
            .map(|b| b.offset)
    }

    pub fn to_sidecar(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            format: &'a str,
            layout: Vec<Block>,
            feature_width: usize,
            dimension: usize,
            plan: &'a EncodingPlan,
        }
        serde_json::to_string_pretty(&Sidecar {
            format: SIDECAR_FORMAT,
            layout: self.layout(),
            feature_width: self.feature_width(),
            dimension: self.dimension(),
            plan: self,
        })
        .expect("plan serializes")
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Sidecar {
            format: String,
            plan: EncodingPlan,
        }
        let parsed: Sidecar = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("unreadable plan sidecar: {e}")))?;
        if parsed.format != SIDECAR_FORMAT {
            return Err(Error::Config(format!(
                "unsupported plan sidecar format {:?}",
                parsed.format
            )));
        }
        Ok(parsed.plan)
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sidecar(&text)
    }

    /// SHA-256 of the sidecar text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_sidecar().as_bytes()))
    }
}

const SIDECAR_FORMAT: &str = "bsenergy-plan/1";

/// A dataset encoded once, ready for batching.
#[derive(Clone, Debug)]
pub struct EncodedSet {
    /// `[n, feature_width]`.
    pub features: Tensor,
    /// Station index per row whenever the plan carries a BSID (embedding or one-hot).
    pub bsid: Option<Vec<usize>>,
    pub targets: Vec<f64>,
    /// Start of the BSID one-hot block, in one-hot mode.
    pub onehot_offset: Option<usize>,
}

impl EncodedSet {
    pub fn build(plan: &EncodingPlan, dataset: &Dataset) -> Result<Self> {
        dataset.ensure_non_empty()?;
        let width = plan.feature_width();
        let mut features = Tensor::zeros(&[dataset.len(), width]);
        for (i, r) in dataset.records.iter().enumerate() {
            plan.encode_into(r, features.row_mut(i));
        }
        let bsid = (plan.bsid_mode() != BsidMode::None).then(|| {
            dataset
                .records
                .iter()
                .map(|r| plan.bsid_index(&r.bs_id))
                .collect()
        });
        Ok(Self {
            features,
            bsid,
            targets: dataset.energies(),
            onehot_offset: plan.bsid_onehot_offset(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::{cell, record};

    fn dataset() -> Dataset {
        let mut recs = Vec::new();
        for (i, (ru, ant)) in [
            ("X", 2),
            ("Y", 4),
            ("X", 8),
            ("Y", 16),
            ("X", 32),
            ("Y", 64),
        ]
        .into_iter()
        .enumerate()
        {
            let mut r = record(&format!("b{}", i % 3 + 1));
            r.ru_type = ru.into();
            r.antennas = ant;
            r.hour = i as u32;
            r.day = (i % 2) as u32;
            r.cells[0].load = 0.1 * i as f64;
            r.cells[0].frequency = [365.0, 426.0][i % 2];
            if i % 3 == 0 {
                r.cells.push(cell(0.3));
            }
            recs.push(r);
        }
        Dataset::new(recs, "mem")
    }

    #[test]
    fn fit_builds_vocabularies() {
        let plan = fit(&PlanTemplate::abf(BsidMode::Embedding), &dataset()).unwrap();
        assert_eq!(plan.ru_type.values, vec!["X", "Y"]);
        assert_eq!(plan.antennas.as_ref().unwrap().len(), 6);
        assert_eq!(plan.bsid.as_ref().unwrap().values, vec!["b1", "b2", "b3"]);
        assert_eq!(plan.bsid_index("b2"), 2);
        assert_eq!(plan.bsid_index("zzz"), 0);
        assert_eq!(plan.bsid_index(""), 0);
        assert_eq!(plan.station_at(3), Some("b3"));
        assert_eq!(plan.station_at(0), None);
    }

    #[test]
    fn fit_rejects_empty() {
        assert!(matches!(
            fit(&PlanTemplate::default(), &Dataset::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn onehot_block_definition() {
        let v = Vocabulary::fit("x", ["a", "b", "c", "d"].map(String::from), false);
        let mut out = [9.0; 4];
        v.write_onehot(&"c".to_string(), &mut out);
        assert_eq!(out, [0.0, 0.0, 1.0, 0.0]);
        v.write_onehot(&"q".to_string(), &mut out);
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn numeric_vocabulary_sorts_ascending() {
        let v = Vocabulary::fit("f", [426.0, 365.0, 426.0, 100.0], false);
        assert_eq!(v.values, vec![100.0, 365.0, 426.0]);
    }

    #[test]
    fn padded_cell_block_is_zero() {
        let ds = dataset();
        let plan = fit(&PlanTemplate::abf(BsidMode::None), &ds).unwrap();
        let fv = plan.encode(&ds.records[1]);
        let layout = plan.layout();
        for slot in 2..=4 {
            for name in ["numeric", "frequency", "bandwidth"] {
                let b = layout
                    .iter()
                    .find(|b| b.name == format!("cell{slot}.{name}"))
                    .unwrap();
                assert!(fv.values[b.offset..b.offset + b.width]
                    .iter()
                    .all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn unseen_ru_type_zeroes_only_its_block() {
        let ds = dataset();
        let plan = fit(&PlanTemplate::abf(BsidMode::Embedding), &ds).unwrap();
        let base = plan.encode(&ds.records[0]);
        let mut odd = ds.records[0].clone();
        odd.ru_type = "Z".into();
        let enc = plan.encode(&odd);
        assert_eq!(&enc.values[..2], &[0.0, 0.0]);
        assert_eq!(&enc.values[2..], &base.values[2..]);
    }

    #[test]
    fn embedding_and_none_emit_identical_vectors() {
        let ds = dataset();
        let emb = fit(&PlanTemplate::abf(BsidMode::Embedding), &ds).unwrap();
        let none = fit(&PlanTemplate::abf(BsidMode::None), &ds).unwrap();
        for r in &ds.records {
            let (a, b) = (emb.encode(r), none.encode(r));
            assert_eq!(a.values, b.values);
            assert!(a.bsid_index.is_some() && b.bsid_index.is_none());
        }
        assert_eq!(emb.dimension(), none.dimension() + DEFAULT_EMBED_DIM);
        assert_eq!(emb.feature_width(), none.feature_width());
    }

    #[test]
    fn onehot_bsid_block_has_unknown_column() {
        let ds = dataset();
        let plan = fit(&PlanTemplate::abf(BsidMode::OneHot), &ds).unwrap();
        let off = plan.bsid_onehot_offset().unwrap();
        assert_eq!(plan.feature_width() - off, 4);
        let fv = plan.encode(&ds.records[1]);
        assert_eq!(&fv.values[off..], &[0.0, 0.0, 1.0, 0.0]);
        let mut stranger = ds.records[1].clone();
        stranger.bs_id = "nope".into();
        assert_eq!(&plan.encode(&stranger).values[off..], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zscore_is_standard_on_training_set() {
        let ds = dataset();
        let plan = fit(&PlanTemplate::numerical(BsidMode::None), &ds).unwrap();
        let ant = plan
            .layout()
            .iter()
            .find(|b| b.name == "antennas")
            .unwrap()
            .offset;
        let col: Vec<f64> = ds
            .records
            .iter()
            .map(|r| plan.encode(r).values[ant])
            .collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_gets_unit_std() {
        let s = NormStats::from_samples(&[3.0, 3.0, 3.0]);
        assert_eq!(
            s,
            NormStats {
                mean: 3.0,
                std: 1.0
            }
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let plan = fit(&PlanTemplate::abf(BsidMode::OneHot), &dataset()).unwrap();
        let back = EncodingPlan::from_sidecar(&plan.to_sidecar()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.digest(), plan.digest());
    }

    #[test]
    fn letters_parse() {
        let t = PlanTemplate::from_letters("bf", BsidMode::None).unwrap();
        assert!(!t.onehot_antennas && t.onehot_bandwidth && t.onehot_frequency);
        assert_eq!(t.label(), "BF");
        assert_eq!(
            PlanTemplate::from_letters("numerical", BsidMode::None)
                .unwrap()
                .label(),
            "Numerical"
        );
        assert!(PlanTemplate::from_letters("xyz", BsidMode::None).is_err());
    }
}
