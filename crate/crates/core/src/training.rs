//! Masked-BSID training: per-epoch masking, mini-batch Adam on the weighted
//! MAPE, and selection of the best epoch.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{fit, EncodedSet, EncodingPlan, PlanTemplate};
use crate::error::{Error, Result};
use crate::model::{EnergyModel, ModelConfig};
use crate::nn::{rng, AdamConfig, RngStream, Tensor};
use crate::record::Dataset;

/// Weighted MAPE, `Σ|y − ŷ| / Σ|y|`.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let (err, total) = error_sums(y, y_hat)?;
    if total == 0.0 {
        return Err(Error::ZeroTargetSum);
    }
    Ok(err / total)
}

/// `(Σ|y − ŷ|, Σ|y|)`.
pub fn error_sums(y: &[f64], y_hat: &[f64]) -> Result<(f64, f64)> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "{} targets, {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let err = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    let total = y.iter().map(|a| a.abs()).sum();
    Ok((err, total))
}

/// `∂MAPE/∂ŷᵢ = sign(ŷᵢ − yᵢ) / Σ|y|` with `sign(0) = 0`.
pub fn mape_gradient(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    let (_, total) = error_sums(y, y_hat)?;
    if total == 0.0 {
        return Err(Error::ZeroTargetSum);
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| {
            let d = b - a;
            if d > 0.0 {
                1.0 / total
            } else if d < 0.0 {
                -1.0 / total
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Every sample masked independently.
    Bernoulli,
    /// Exactly `round(p·n)` samples masked.
    Quota,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "quota" => Ok(Self::Quota),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// Which samples to mask this epoch.
pub fn draw_mask(n: usize, prob: f64, mode: MaskMode, rng: &mut RngStream) -> Vec<bool> {
    match mode {
        MaskMode::Bernoulli => (0..n).map(|_| rng.bernoulli(prob)).collect(),
        MaskMode::Quota => {
            let k = ((prob * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut mask = vec![false; n];
            for &i in &order[..k] {
                mask[i] = true;
            }
            mask
        }
    }
}

/// Replaces each index by the unknown index 0 with probability `prob`.
pub fn apply_mask(indices: &[usize], prob: f64, rng: &mut RngStream) -> Vec<usize> {
    indices
        .iter()
        .map(|&i| if rng.bernoulli(prob) { 0 } else { i })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Selection {
    /// Hold out a fraction of training stations and select on them.
    Validation { fraction: f64 },
    /// Select on the test set itself.
    PaperProtocol,
}

impl Default for Selection {
    fn default() -> Self {
        Self::Validation { fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub mask_mode: MaskMode,
    pub adam: AdamConfig,
    pub seed: u64,
    pub selection: Selection,
    pub shuffle: bool,
    /// Record wall time per epoch. Off keeps history files reproducible.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 512,
            mask_prob: 0.3,
            mask_mode: MaskMode::Bernoulli,
            adam: AdamConfig::default(),
            seed: 0,
            selection: Selection::default(),
            shuffle: true,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad("mask_prob must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if let Selection::Validation { fraction } = self.selection {
            if !(fraction > 0.0 && fraction < 1.0) {
                return bad("validation fraction must be in (0, 1)");
            }
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0)
        {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Pooled MAPE over the epoch's (masked) training batches.
    pub train_mape: f64,
    pub selection_mape: f64,
    pub masked_count: usize,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Weights of the selected epoch.
    pub model: EnergyModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochStats {
        &self.history[self.best_epoch - 1]
    }
}

/// Rows `rows` of `set` with the masked samples switched to the unknown station.
fn gather(
    set: &EncodedSet,
    rows: &[usize],
    masked: &[bool],
) -> (Tensor, Option<Vec<usize>>, Vec<f64>) {
    let width = set.features.cols();
    let mut x = Tensor::zeros(&[rows.len(), width]);
    let mut idx = set.bsid.as_ref().map(|_| Vec::with_capacity(rows.len()));
    let mut y = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let dst = x.row_mut(r);
        dst.copy_from_slice(set.features.row(i));
        y.push(set.targets[i]);
        let Some(all) = &set.bsid else { continue };
        let station = if masked[i] { 0 } else { all[i] };
        if let Some(off) = set.onehot_offset {
            dst[off + all[i]] = 0.0;
            dst[off + station] = 1.0;
        }
        idx.as_mut().expect("bsid present").push(station);
    }
    (x, idx, y)
}

/// Prediction for every row of `set`, unmasked.
pub fn predict_set(model: &EnergyModel, set: &EncodedSet) -> Result<Vec<f64>> {
    let idx = set
        .bsid
        .as_deref()
        .filter(|_| model.config().embedding.is_some());
    model.predict(&set.features, idx, 1024)
}

/// MAPE of `model` on `set`, unmasked.
pub fn set_mape(model: &EnergyModel, set: &EncodedSet) -> Result<f64> {
    mape(&set.targets, &predict_set(model, set)?)
}

/// Trains a fresh model on `train`, selecting the epoch with the lowest MAPE on `selection`.
pub fn train(
    train: &EncodedSet,
    selection: &EncodedSet,
    model_config: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_impl(train, selection, model_config, cfg)
}

fn train_impl(
    train: &EncodedSet,
    selection: &EncodedSet,
    model_config: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || selection.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut init = RngStream::new(cfg.seed, rng::INIT);
    let mut masking = RngStream::new(cfg.seed, rng::MASKING);
    let mut batching = RngStream::new(cfg.seed, rng::BATCHING);
    let mut model = EnergyModel::new(model_config, &mut init)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_mape = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let no_mask = vec![false; n];

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            batching.shuffle(&mut order);
        }
        let mask = if train.bsid.is_some() {
            draw_mask(n, cfg.mask_prob, cfg.mask_mode, &mut masking)
        } else {
            no_mask.clone()
        };
        let masked_count = mask.iter().filter(|&&m| m).count();
        let (mut err_sum, mut y_sum) = (0.0, 0.0);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (x, idx, y) = gather(train, rows, &mask);
            let idx = idx.filter(|_| model.config().embedding.is_some());
            let fwd = model.forward(&x, idx.as_deref())?;
            let (err, total) = error_sums(&y, &fwd.prediction)?;
            let loss = err / total;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                });
            }
            err_sum += err;
            y_sum += total;
            let grad = mape_gradient(&y, &fwd.prediction)?;
            model.backward(&fwd.cache, &grad);
            model.store_mut().adam_step(&cfg.adam);
        }
        if model.store().first_non_finite().is_some() {
            return Err(Error::Diverged {
                epoch,
                batch: n.div_ceil(cfg.batch_size),
            });
        }
        let selection_mape = set_mape(&model, selection)?;
        if !selection_mape.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        if selection_mape < best_mape {
            best_mape = selection_mape;
            best_epoch = epoch;
            best.store_mut().copy_values_from(model.store());
        }
        history.push(EpochStats {
            epoch,
            train_mape: err_sum / y_sum,
            selection_mape,
            masked_count,
            seconds: if cfg.timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

pub const HISTORY_COLUMNS: [&str; 5] = [
    "epoch",
    "train_mape",
    "selection_mape",
    "masked_count",
    "seconds",
];

pub fn write_history(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(HISTORY_COLUMNS)
        .map_err(|e| Error::csv(path, e))?;
    for s in history {
        w.write_record([
            s.epoch.to_string(),
            format!("{:?}", s.train_mape),
            format!("{:?}", s.selection_mape),
            s.masked_count.to_string(),
            format!("{:.6}", s.seconds),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits stations into `(kept, held_out)`, holding out `round(fraction·N)` (at least one).
pub fn holdout_stations(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut ids: Vec<String> = dataset.bs_ids().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::Config(
            "a validation split needs at least two training stations".into(),
        ));
    }
    RngStream::new(seed, "holdout").shuffle(&mut ids);
    let k = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let held: BTreeSet<String> = ids[..k].iter().cloned().collect();
    let kept = dataset.filter_stations(|b| !held.contains(b), "training stations");
    let out = dataset.filter_stations(|b| held.contains(b), "validation stations");
    Ok((kept, out))
}

/// A plan fitted on the gradient data, plus encoded fitting and selection sets.
pub struct Prepared {
    pub plan: EncodingPlan,
    pub fit: EncodedSet,
    pub selection: EncodedSet,
    /// Defaults for the plan with output scaling fitted to the gradient data.
    pub model_config: ModelConfig,
}

/// Carves out the selection set, fits the plan and encodes everything.
pub fn prepare(
    template: &PlanTemplate,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Prepared> {
    cfg.validate()?;
    train_data.ensure_non_empty()?;
    let (fit_data, selection_data) = match cfg.selection {
        Selection::Validation { fraction } => {
            let (kept, held) = holdout_stations(train_data, fraction, cfg.seed)?;
            (kept, held)
        }
        Selection::PaperProtocol => {
            let test = test_data
                .ok_or_else(|| Error::Config("paper-protocol selection needs a test set".into()))?;
            (train_data.clone(), test.clone())
        }
    };
    let plan = fit(template, &fit_data)?;
    let fit_set = EncodedSet::build(&plan, &fit_data)?;
    let selection = EncodedSet::build(&plan, &selection_data)?;
    let model_config = ModelConfig::for_plan(&plan).with_target_scaling(&fit_set.targets);
    Ok(Prepared {
        plan,
        fit: fit_set,
        selection,
        model_config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BsidMode;
    use crate::record::tests::record;

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert!((mape(&[10.0], &[9.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(Error::ZeroTargetSum)));
        assert!(matches!(mape(&[], &[]), Err(Error::EmptyDataset)));
        assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_signs() {
        let g = mape_gradient(&[1.0, 2.0, 3.0], &[2.0, 2.0, 1.0]).unwrap();
        assert_eq!(g, vec![1.0 / 6.0, 0.0, -1.0 / 6.0]);
    }

    #[test]
    fn mask_extremes() {
        let mut r = RngStream::new(1, rng::MASKING);
        let idx: Vec<usize> = (1..=50).collect();
        assert_eq!(apply_mask(&idx, 0.0, &mut r), idx);
        assert!(apply_mask(&idx, 1.0, &mut r).iter().all(|&i| i == 0));
        let quota = draw_mask(1000, 0.3, MaskMode::Quota, &mut r);
        assert_eq!(quota.iter().filter(|&&m| m).count(), 300);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            mask_prob: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    fn fleet() -> Dataset {
        let mut recs = Vec::new();
        for b in 0..6 {
            for h in 0..24 {
                let mut r = record(&format!("s{b}"));
                r.hour = h;
                r.cells[0].load = f64::from(h) / 23.0;
                r.energy = 20.0 + 3.0 * f64::from(b) + 10.0 * r.cells[0].load;
                recs.push(r);
            }
        }
        Dataset::new(recs, "test fleet")
    }

    #[test]
    fn gather_masks_onehot_block() {
        let ds = fleet();
        let plan = fit(&PlanTemplate::abf(BsidMode::OneHot), &ds).unwrap();
        let set = EncodedSet::build(&plan, &ds).unwrap();
        let off = set.onehot_offset.unwrap();
        let station = set.bsid.as_ref().unwrap()[30];
        assert!(station > 0);
        let mut mask = vec![false; set.len()];
        mask[30] = true;
        let (x, idx, _) = gather(&set, &[30, 31], &mask);
        assert_eq!(idx.unwrap()[0], 0);
        assert_eq!(x.row(0)[off], 1.0);
        assert_eq!(x.row(0)[off + station], 0.0);
        assert_eq!(x.row(1), set.features.row(31));
    }

    #[test]
    fn selection_picks_the_minimum_and_runs_are_reproducible() {
        let ds = fleet();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        let p = prepare(&PlanTemplate::abf(BsidMode::Embedding), &ds, None, &cfg).unwrap();
        let a = train(&p.fit, &p.selection, p.model_config.clone(), &cfg).unwrap();
        let b = train(&p.fit, &p.selection, p.model_config.clone(), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 8);
        let min = a
            .history
            .iter()
            .map(|s| s.selection_mape)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best().selection_mape, min);
        assert_eq!(set_mape(&a.model, &p.selection).unwrap(), min);
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    }

    #[test]
    fn single_epoch_returns_that_epoch() {
        let ds = fleet();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let p = prepare(&PlanTemplate::abf(BsidMode::None), &ds, None, &cfg).unwrap();
        let out = train(&p.fit, &p.selection, p.model_config, &cfg).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.history[0].masked_count, 0);
    }
}
