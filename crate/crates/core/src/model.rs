//! The energy model: encoded features concatenated with a BSID embedding,
//! re-weighted element-wise by a sigmoid-gated bottleneck (the adaptive
//! re-weighting layer, ARL), then a ReLU MLP with a scalar output.
//!
//! ```text
//! x  = [features | emb[bsid]]
//! w  = σ(W₂ relu(W₁ x + b₁) + b₂)        (ARL, optional)
//! x' = w ⊙ x
//! ŷ  = offset + scale · out(relu(fc_k(… relu(fc_1(x')) …)))
//! ```
//!
//! `offset`/`scale` are fixed target statistics, not trainable parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{BsidMode, EncodingPlan};
use crate::error::{Error, Result};
use crate::nn::ops::{
    embedding_backward, hadamard, hadamard_backward, linear, linear_backward_into, relu,
    relu_backward, sigmoid, sigmoid_backward,
};
use crate::nn::{
    uniform, xavier_uniform, ParamId, ParameterStore, PatternHasher, RngStream, Tensor,
};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_ARL_BOTTLENECK: usize = 12;
/// Embedding rows are initialised uniformly in ±this.
pub const EMBED_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub rows: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width after concatenating the embedding.
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding: Option<EmbeddingConfig>,
    pub arl_bottleneck: usize,
    pub arl_enabled: bool,
    pub output_offset: f64,
    pub output_scale: f64,
}

/// Smallest power of two holding every fitted station plus the unknown row.
pub fn default_embed_rows(stations: usize) -> usize {
    (stations + 1).next_power_of_two()
}

impl ModelConfig {
    /// Defaults for a fitted plan: [128, 64] hidden, bottleneck 12, ARL on.
    pub fn for_plan(plan: &EncodingPlan) -> Self {
        let embedding = (plan.bsid_mode() == BsidMode::Embedding).then(|| EmbeddingConfig {
            rows: default_embed_rows(plan.station_count()),
            dim: plan.template.embed_dim,
        });
        Self {
            input_dim: plan.dimension(),
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            embedding,
            arl_bottleneck: DEFAULT_ARL_BOTTLENECK,
            arl_enabled: true,
            output_offset: 0.0,
            output_scale: 1.0,
        }
    }

    /// Sets the output affine map to the mean and standard deviation of `targets`.
    pub fn with_target_scaling(mut self, targets: &[f64]) -> Self {
        if targets.is_empty() {
            return self;
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let std = (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        self.output_offset = mean;
        self.output_scale = if std > 0.0 { std } else { mean.abs().max(1.0) };
        self
    }

    /// Width of the encoder features the model expects.
    pub fn feature_dim(&self) -> usize {
        self.input_dim - self.embedding.as_ref().map_or(0, |e| e.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let emb_dim = self.embedding.as_ref().map_or(0, |e| e.dim);
        if self.input_dim <= emb_dim {
            return bad(format!(
                "input_dim {} leaves no room for features",
                self.input_dim
            ));
        }
        if let Some(e) = &self.embedding {
            if e.rows == 0 || e.dim == 0 {
                return bad("embedding table must be non-empty".into());
            }
        }
        if self.arl_enabled && !(1..self.input_dim).contains(&self.arl_bottleneck) {
            return bad(format!(
                "arl_bottleneck {} must be in 1..{}",
                self.arl_bottleneck, self.input_dim
            ));
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden layers must be non-empty".into());
        }
        if !(self.output_scale.is_finite()
            && self.output_scale != 0.0
            && self.output_offset.is_finite())
        {
            return bad("output scaling must be finite and non-zero".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let linear = |inp: usize, out: usize| out * inp + out;
        let d = self.input_dim;
        let mut n = self.embedding.as_ref().map_or(0, |e| e.rows * e.dim);
        if self.arl_enabled {
            n += linear(d, self.arl_bottleneck) + linear(self.arl_bottleneck, d);
        }
        let mut prev = d;
        for &h in &self.hidden_dims {
            n += linear(prev, h);
            prev = h;
        }
        n + linear(prev, 1)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Arl {
    squeeze: Layer,
    expand: Layer,
}

/// Checkpoint pointer to the encoding plan the model was trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReference {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug)]
pub struct EnergyModel {
    config: ModelConfig,
    store: ParameterStore,
    embedding: Option<ParamId>,
    arl: Option<Arl>,
    /// Hidden layers followed by the output layer.
    layers: Vec<Layer>,
    plan_ref: Option<PlanReference>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    bsid: Option<Vec<usize>>,
    x: Tensor,
    arl: Option<ArlCache>,
    /// Per layer: its input and pre-activation.
    layers: Vec<(Tensor, Tensor)>,
}

#[derive(Clone, Debug)]
struct ArlCache {
    squeeze_pre: Tensor,
    squeeze_out: Tensor,
    weights: Tensor,
}

impl ForwardCache {
    /// Hash of every ReLU branch taken; equal patterns mean the same linear piece.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = PatternHasher::default();
        if let Some(a) = &self.arl {
            h.push_signs(a.squeeze_pre.data());
        }
        let hidden = self.layers.len().saturating_sub(1);
        for (_, pre) in &self.layers[..hidden] {
            h.push_signs(pre.data());
        }
        h.finish()
    }

    /// The ARL weight vectors, `[batch, input_dim]`.
    pub fn attention_weights(&self) -> Option<&Tensor> {
        self.arl.as_ref().map(|a| &a.weights)
    }

    /// The re-weighted input fed to the first MLP layer.
    pub fn reweighted_input(&self) -> &Tensor {
        &self.layers[0].0
    }
}

pub struct Forward {
    pub prediction: Vec<f64>,
    pub cache: ForwardCache,
}

impl EnergyModel {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let d = config.input_dim;
        let embedding = match &config.embedding {
            Some(e) => Some(store.add(
                "emb",
                uniform(&[e.rows, e.dim], -EMBED_INIT_RANGE, EMBED_INIT_RANGE, rng),
            )?),
            None => None,
        };
        let mut dense = |store: &mut ParameterStore,
                         names: [&str; 2],
                         inp: usize,
                         out: usize|
         -> Result<Layer> {
            Ok(Layer {
                weight: store.add(names[0], xavier_uniform(out, inp, rng))?,
                bias: store.add(names[1], Tensor::zeros(&[out]))?,
            })
        };
        let arl = if config.arl_enabled {
            let squeeze = dense(&mut store, ["arl_w1", "arl_b1"], d, config.arl_bottleneck)?;
            let expand = dense(&mut store, ["arl_w2", "arl_b2"], config.arl_bottleneck, d)?;
            Some(Arl { squeeze, expand })
        } else {
            None
        };
        let mut layers = Vec::new();
        let mut prev = d;
        for (i, &h) in config.hidden_dims.iter().enumerate() {
            let (w, b) = (format!("fc{}_w", i + 1), format!("fc{}_b", i + 1));
            layers.push(dense(&mut store, [&w, &b], prev, h)?);
            prev = h;
        }
        layers.push(dense(&mut store, ["out_w", "out_b"], prev, 1)?);
        Ok(Self {
            config,
            store,
            embedding,
            arl,
            layers,
            plan_ref: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.element_count()
    }

    pub fn plan_reference(&self) -> Option<&PlanReference> {
        self.plan_ref.as_ref()
    }

    /// Records which encoding plan (by sidecar file name and digest) this model pairs with.
    pub fn attach_plan(&mut self, file: &str, plan: &EncodingPlan) {
        self.plan_ref = Some(PlanReference {
            file: file.to_string(),
            sha256: plan.digest(),
        });
    }

    /// Errors if this model was trained with a different plan or input width.
    pub fn check_plan(&self, plan: &EncodingPlan) -> Result<()> {
        if let Some(r) = &self.plan_ref {
            if r.sha256 != plan.digest() {
                return Err(Error::PlanMismatch(format!(
                    "plan digest differs from {}",
                    r.file
                )));
            }
        }
        if plan.feature_width() != self.config.feature_dim() {
            return Err(Error::PlanMismatch(format!(
                "plan encodes {} features, model expects {}",
                plan.feature_width(),
                self.config.feature_dim()
            )));
        }
        if (plan.bsid_mode() == BsidMode::Embedding) != self.config.embedding.is_some() {
            return Err(Error::PlanMismatch(
                "BSID embedding presence differs".into(),
            ));
        }
        Ok(())
    }

    /// Embedding table `[rows, dim]`, if any.
    pub fn embedding_table(&self) -> Option<&Tensor> {
        self.embedding.map(|id| self.store.value(id))
    }

    pub fn forward(&self, features: &Tensor, bsid: Option<&[usize]>) -> Result<Forward> {
        let (batch, fdim) = features.expect_matrix("model input")?;
        if fdim != self.config.feature_dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {fdim}",
                self.config.feature_dim()
            )));
        }
        let x = match (self.embedding, bsid) {
            (Some(id), Some(idx)) => {
                if idx.len() != batch {
                    return Err(Error::Shape(format!(
                        "{} bsid indices for batch {batch}",
                        idx.len()
                    )));
                }
                let table = self.store.value(id);
                let (rows, edim) = (table.rows(), table.cols());
                let mut x = Tensor::zeros(&[batch, fdim + edim]);
                for (r, &i) in idx.iter().enumerate() {
                    if i >= rows {
                        return Err(Error::IndexOutOfRange { index: i, rows });
                    }
                    let dst = x.row_mut(r);
                    dst[..fdim].copy_from_slice(features.row(r));
                    dst[fdim..].copy_from_slice(table.row(i));
                }
                x
            }
            (Some(_), None) => return Err(Error::Shape("model needs BSID indices".into())),
            (None, _) => features.clone(),
        };

        let (arl_cache, reweighted) = match &self.arl {
            Some(arl) => {
                let squeeze_pre = self.apply(&arl.squeeze, &x)?;
                let squeeze_out = relu(&squeeze_pre);
                let weights = sigmoid(&self.apply(&arl.expand, &squeeze_out)?);
                let reweighted = hadamard(&weights, &x)?;
                (
                    Some(ArlCache {
                        squeeze_pre,
                        squeeze_out,
                        weights,
                    }),
                    reweighted,
                )
            }
            None => (None, x.clone()),
        };

        let mut layers = Vec::with_capacity(self.layers.len());
        let mut current = reweighted;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = self.apply(layer, &current)?;
            let next = if i < last { relu(&pre) } else { pre.clone() };
            layers.push((current, pre));
            current = next;
        }
        let prediction = current
            .data()
            .iter()
            .map(|o| self.config.output_offset + self.config.output_scale * o)
            .collect();
        Ok(Forward {
            prediction,
            cache: ForwardCache {
                bsid: bsid
                    .filter(|_| self.embedding.is_some())
                    .map(<[usize]>::to_vec),
                x,
                arl: arl_cache,
                layers,
            },
        })
    }

    fn apply(&self, layer: &Layer, x: &Tensor) -> Result<Tensor> {
        linear(
            x,
            self.store.value(layer.weight),
            self.store.value(layer.bias),
        )
    }

    /// Accumulates parameter gradients for upstream `∂L/∂ŷ`.
    pub fn backward(&mut self, cache: &ForwardCache, d_prediction: &[f64]) {
        let batch = d_prediction.len();
        let scale = self.config.output_scale;
        let mut grad = Tensor::new(
            vec![batch, 1],
            d_prediction.iter().map(|g| g * scale).collect(),
        )
        .expect("batch > 0");
        let need_input_grad = self.embedding.is_some() || self.arl.is_some();
        for (i, layer) in self.layers.clone().iter().enumerate().rev() {
            let (input, pre) = &cache.layers[i];
            if i + 1 < self.layers.len() {
                grad = relu_backward(pre, &grad);
            }
            let want_dx = i > 0 || need_input_grad;
            grad = self
                .backprop_linear(layer, input, &grad, want_dx)
                .unwrap_or(grad);
        }
        let Some(d_reweighted) = (!cache.layers.is_empty() && need_input_grad).then_some(grad)
        else {
            return;
        };

        let d_x = match (&self.arl.clone(), &cache.arl) {
            (Some(arl), Some(a)) => {
                let (d_weights, mut d_x) = hadamard_backward(&a.weights, &cache.x, &d_reweighted);
                let d_expand_pre = sigmoid_backward(&a.weights, &d_weights);
                let d_squeeze_out = self
                    .backprop_linear(&arl.expand, &a.squeeze_out, &d_expand_pre, true)
                    .expect("dx requested");
                let d_squeeze_pre = relu_backward(&a.squeeze_pre, &d_squeeze_out);
                let d_x_gate = self
                    .backprop_linear(&arl.squeeze, &cache.x, &d_squeeze_pre, true)
                    .expect("dx requested");
                for (g, h) in d_x.data_mut().iter_mut().zip(d_x_gate.data()) {
                    *g += h;
                }
                d_x
            }
            _ => d_reweighted,
        };

        if let (Some(id), Some(idx)) = (self.embedding, &cache.bsid) {
            let fdim = self.config.feature_dim();
            let edim = self.config.input_dim - fdim;
            let mut d_emb = Tensor::zeros(&[batch, edim]);
            for r in 0..batch {
                d_emb.row_mut(r).copy_from_slice(&d_x.row(r)[fdim..]);
            }
            embedding_backward(idx, &d_emb, self.store.grad_mut(id));
        }
    }

    fn backprop_linear(
        &mut self,
        layer: &Layer,
        input: &Tensor,
        dy: &Tensor,
        want_dx: bool,
    ) -> Option<Tensor> {
        let mut dx = want_dx.then(|| Tensor::zeros(input.shape()));
        let out = dy.cols();
        let mut db = Tensor::zeros(&[out]);
        let p = self.store.get_mut(layer.weight);
        linear_backward_into(input, &p.value, dy, dx.as_mut(), &mut p.grad, &mut db);
        for (acc, g) in self
            .store
            .grad_mut(layer.bias)
            .data_mut()
            .iter_mut()
            .zip(db.data())
        {
            *acc += g;
        }
        dx
    }

    /// Predictions for a feature matrix, in chunks of `batch`.
    pub fn predict(
        &self,
        features: &Tensor,
        bsid: Option<&[usize]>,
        batch: usize,
    ) -> Result<Vec<f64>> {
        let n = features.rows();
        let width = features.cols();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let chunk = Tensor::new(
                vec![end - start, width],
                features.data()[start * width..end * width].to_vec(),
            )?;
            let idx = bsid.map(|b| &b[start..end]);
            out.extend(self.forward(&chunk, idx)?.prediction);
            start = end;
        }
        Ok(out)
    }

    /// One row per fitted station plus `UNKNOWN` (row 0), in index order.
    pub fn export_embeddings(&self, plan: &EncodingPlan) -> Result<Vec<(String, Vec<f64>)>> {
        let table = self.embedding_table().ok_or(Error::NoEmbedding)?;
        let mut rows = vec![("UNKNOWN".to_string(), table.row(0).to_vec())];
        for i in 1..=plan.station_count() {
            if i >= table.rows() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    rows: table.rows(),
                });
            }
            let id = plan.station_at(i).expect("fitted station");
            rows.push((id.to_string(), table.row(i).to_vec()));
        }
        Ok(rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(name) = self.store.first_non_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.store.element_count() * 8);
        for p in self.store.iter() {
            for v in p.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            config: self.config.clone(),
            plan: self.plan_ref.clone(),
            entries: self
                .store
                .iter()
                .map(|p| EntryHeader {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let truncated = || Error::Checksum(format!("{} is truncated", origin.display()));
        let fixed = MAGIC.len() + 12;
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                message: "not a model checkpoint".into(),
            });
        }
        if bytes.len() < fixed {
            return Err(truncated());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = fixed.checked_add(header_len).ok_or_else(truncated)?;
        if bytes.len() < header_end {
            return Err(truncated());
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[fixed..header_end]).map_err(|e| Error::Format {
                path: origin.to_path_buf(),
                message: format!("bad header: {e}"),
            })?;
        let payload = &bytes[header_end..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::Checksum(format!(
                "payload digest mismatch in {}",
                origin.display()
            )));
        }

        let mut model = Self::new(header.config, &mut RngStream::new(0, "load"))?;
        model.plan_ref = header.plan;
        let expected: usize = model.store.element_count() * 8;
        if payload.len() != expected {
            return Err(Error::Checksum(format!(
                "payload has {} bytes, layout needs {expected}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != header.entries.len() {
            return Err(Error::Checksum(
                "entry list does not match configuration".into(),
            ));
        }
        for (id, entry) in ids.into_iter().zip(&header.entries) {
            let p = model.store.get_mut(id);
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Checksum(format!("unexpected entry {}", entry.name)));
            }
            for v in p.value.data_mut() {
                *v = f64::from_le_bytes(payload[offset..offset + 8].try_into().expect("8 bytes"));
                offset += 8;
            }
        }
        if let Some(name) = model.store.first_non_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(model)
    }
}

const MAGIC: &[u8; 8] = b"BSEMODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    plan: Option<PlanReference>,
    entries: Vec<EntryHeader>,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
}

/// Writes `bs_id,e0..e{dim-1}`.
pub fn write_embeddings_csv(rows: &[(String, Vec<f64>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["bs_id".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, values) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden_dims: vec![2, 2],
            embedding: None,
            arl_bottleneck: 2,
            arl_enabled: false,
            output_offset: 0.0,
            output_scale: 1.0,
        }
    }

    fn set(model: &mut EnergyModel, name: &str, values: &[f64]) {
        let id = model.store.find(name).unwrap();
        model
            .store
            .get_mut(id)
            .value
            .data_mut()
            .copy_from_slice(values);
    }

    #[test]
    fn reference_parameter_counts() {
        let mut cfg = ModelConfig {
            input_dim: 204,
            hidden_dims: vec![128, 64],
            embedding: Some(EmbeddingConfig {
                rows: 1024,
                dim: 64,
            }),
            arl_bottleneck: 12,
            arl_enabled: true,
            output_offset: 0.0,
            output_scale: 1.0,
        };
        assert_eq!(cfg.parameter_count(), 105_209);
        cfg.arl_enabled = false;
        assert_eq!(cfg.parameter_count(), 100_097);
        cfg.embedding = None;
        assert_eq!(cfg.parameter_count(), 34_561);
    }

    #[test]
    fn default_rows_are_a_power_of_two() {
        assert_eq!(default_embed_rows(923), 1024);
        assert_eq!(default_embed_rows(3), 4);
        assert_eq!(default_embed_rows(4), 8);
    }

    #[test]
    fn hand_evaluated_tiny_model() {
        let mut m = EnergyModel::new(tiny_config(), &mut RngStream::new(1, "t")).unwrap();
        set(&mut m, "fc1_w", &[1.0, -1.0, 0.5, 0.0, 2.0, 1.0]);
        set(&mut m, "fc1_b", &[0.1, -0.2]);
        set(&mut m, "fc2_w", &[1.0, 1.0, -1.0, 0.5]);
        set(&mut m, "fc2_b", &[0.0, 0.3]);
        set(&mut m, "out_w", &[2.0, -3.0]);
        set(&mut m, "out_b", &[0.25]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, -2.0]]).unwrap();
        let y = m.forward(&x, None).unwrap().prediction;
        // row 0: h1 = relu([1-2+1.5+0.1, 0+4+3-0.2]) = [0.6, 6.8]
        //        h2 = relu([7.4, -0.6+3.4+0.3]) = [7.4, 3.1]; y = 14.8-9.3+0.25 = 5.75
        // row 1: h1 = relu([-1-0.5-1+0.1, 0+1-2-0.2]) = [0, 0]
        //        h2 = relu([0, 0.3]) = [0, 0.3]; y = -0.9+0.25 = -0.65
        assert!((y[0] - 5.75).abs() < 1e-12);
        assert!((y[1] + 0.65).abs() < 1e-12);
    }

    fn arl_config() -> ModelConfig {
        ModelConfig {
            arl_enabled: true,
            ..tiny_config()
        }
    }

    fn zero_arl(m: &mut EnergyModel, expand_bias: f64) {
        for name in ["arl_w1", "arl_b1", "arl_w2"] {
            let id = m.store.find(name).unwrap();
            m.store.get_mut(id).value.fill(0.0);
        }
        let id = m.store.find("arl_b2").unwrap();
        m.store.get_mut(id).value.fill(expand_bias);
    }

    #[test]
    fn zero_arl_halves_the_input() {
        let mut m = EnergyModel::new(arl_config(), &mut RngStream::new(2, "t")).unwrap();
        zero_arl(&mut m, 0.0);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 4.0]]).unwrap();
        let f = m.forward(&x, None).unwrap();
        assert!(f
            .cache
            .attention_weights()
            .unwrap()
            .data()
            .iter()
            .all(|&w| w == 0.5));
        assert_eq!(f.cache.reweighted_input().data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn saturated_arl_passes_input_through() {
        let mut m = EnergyModel::new(arl_config(), &mut RngStream::new(3, "t")).unwrap();
        zero_arl(&mut m, 40.0);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 4.0]]).unwrap();
        let f = m.forward(&x, None).unwrap();
        for (a, b) in f.cache.reweighted_input().data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn arl_off_equals_plain_mlp() {
        let rng = RngStream::new(4, "t");
        let off = EnergyModel::new(tiny_config(), &mut rng.clone()).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.7, 1.1]]).unwrap();
        let f = off.forward(&x, None).unwrap();
        assert!(f.cache.attention_weights().is_none());
        assert_eq!(f.cache.reweighted_input(), &x);
    }

    #[test]
    fn bsid_out_of_range_is_an_error() {
        let cfg = ModelConfig {
            input_dim: 5,
            embedding: Some(EmbeddingConfig { rows: 4, dim: 2 }),
            ..arl_config()
        };
        let m = EnergyModel::new(cfg, &mut RngStream::new(5, "t")).unwrap();
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            m.forward(&x, Some(&[4])),
            Err(Error::IndexOutOfRange { index: 4, rows: 4 })
        ));
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 4]), Some(&[0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_rejects_wide_bottleneck() {
        let cfg = ModelConfig {
            arl_bottleneck: 3,
            ..arl_config()
        };
        assert!(cfg.validate().is_err());
    }
}
