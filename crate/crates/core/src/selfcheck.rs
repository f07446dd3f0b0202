//! Finite-difference self-check of every differentiable piece: the five
//! primitives, the MAPE loss and small energy models with and without the
//! embedding and re-weighting layer.
//!
//! Each check builds a random instance from its seed, computes analytic
//! gradients, and compares them with central differences. Inputs near a
//! kink are resampled so the comparison is meaningful.

use crate::error::Result;
use crate::model::{EmbeddingConfig, EnergyModel, ModelConfig};
use crate::nn::ops::{
    embedding_backward, embedding_lookup, hadamard, hadamard_backward, linear, linear_backward,
    relu, relu_backward, sigmoid, sigmoid_backward,
};
use crate::nn::{
    grad_check, uniform, GradCheckConfig, GradCheckReport, ParameterStore, PatternHasher, Probe,
    RngStream, Tensor,
};
use crate::training::{mape, mape_gradient};

pub const CHECKS: [&str; 8] = [
    "linear",
    "relu",
    "sigmoid",
    "embedding",
    "hadamard",
    "mape",
    "model",
    "model_plain",
];

/// Model-level checks use this batch size.
pub const MODEL_BATCH: usize = 8;

#[derive(Clone, Debug)]
pub struct SelfCheckConfig {
    pub seeds: Vec<u64>,
    pub tolerance: f64,
    /// Corrupt one analytic gradient element per check, so every check must fail.
    pub inject_fault: bool,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            tolerance: 1e-5,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

pub fn run(cfg: &SelfCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for name in CHECKS {
            let report = run_one(name, seed, cfg)?;
            out.push(CheckOutcome { name, seed, report });
        }
    }
    Ok(out)
}

pub fn run_one(name: &str, seed: u64, cfg: &SelfCheckConfig) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed, &format!("selfcheck/{name}"));
    let (mut store, eval): Check = match name {
        "linear" => check_linear(&mut rng)?,
        "relu" => check_unary(&mut rng, true)?,
        "sigmoid" => check_unary(&mut rng, false)?,
        "embedding" => check_embedding(&mut rng)?,
        "hadamard" => check_hadamard(&mut rng)?,
        "mape" => check_mape(&mut rng)?,
        "model" => check_model(&mut rng, true)?,
        "model_plain" => check_model(&mut rng, false)?,
        other => return Err(crate::Error::Config(format!("unknown check {other:?}"))),
    };
    if cfg.inject_fault {
        let id = store.ids().last().expect("every check has parameters");
        let g = &mut store.grad_mut(id).data_mut()[0];
        *g += 1e-2 * (1.0 + g.abs());
    }
    Ok(grad_check(
        &mut store,
        eval,
        &GradCheckConfig::with_tolerance(cfg.tolerance),
    ))
}

type Check = (ParameterStore, Box<dyn FnMut(&ParameterStore) -> Probe>);

fn dims(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Uniform in ±1 with every entry at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut RngStream) -> Tensor {
    let mut t = uniform(shape, -1.0, 1.0, rng);
    for v in t.data_mut() {
        while v.abs() < gap {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    t
}

/// `Σ c ⊙ y` as the scalar loss; its gradient w.r.t. `y` is `c`.
fn weighted_sum(c: &Tensor, y: &Tensor) -> f64 {
    c.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn store_with(params: &[(&str, Tensor)]) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for (name, value) in params {
        store.add(name, value.clone())?;
    }
    Ok(store)
}

fn set_grad(store: &mut ParameterStore, name: &str, grad: &Tensor) {
    let id = store.find(name).expect("parameter registered");
    store.grad_mut(id).data_mut().copy_from_slice(grad.data());
}

fn value<'a>(store: &'a ParameterStore, name: &str) -> &'a Tensor {
    store.value(store.find(name).expect("parameter registered"))
}

fn check_linear(rng: &mut RngStream) -> Result<Check> {
    let (batch, input, out) = (dims(rng, 1, 6), dims(rng, 1, 8), dims(rng, 1, 6));
    let x = uniform(&[batch, input], -1.0, 1.0, rng);
    let w = uniform(&[out, input], -1.0, 1.0, rng);
    let b = uniform(&[out], -1.0, 1.0, rng);
    let c = uniform(&[batch, out], -1.0, 1.0, rng);
    let mut store = store_with(&[("x", x.clone()), ("w", w.clone()), ("b", b)])?;
    let g = linear_backward(&x, &w, &c);
    set_grad(&mut store, "x", &g.dx);
    set_grad(&mut store, "w", &g.dw);
    set_grad(&mut store, "b", &g.db);
    Ok((
        store,
        Box::new(move |s| {
            let y = linear(value(s, "x"), value(s, "w"), value(s, "b")).expect("shapes fixed");
            Probe::smooth(weighted_sum(&c, &y))
        }),
    ))
}

fn check_unary(rng: &mut RngStream, is_relu: bool) -> Result<Check> {
    let shape = [dims(rng, 1, 6), dims(rng, 1, 8)];
    let x = away_from_zero(&shape, 1e-3, rng);
    let c = uniform(&shape, -1.0, 1.0, rng);
    let mut store = store_with(&[("x", x.clone())])?;
    let dx = if is_relu {
        relu_backward(&x, &c)
    } else {
        sigmoid_backward(&sigmoid(&x), &c)
    };
    set_grad(&mut store, "x", &dx);
    Ok((
        store,
        Box::new(move |s| {
            let x = value(s, "x");
            if is_relu {
                let mut h = PatternHasher::default();
                h.push_signs(x.data());
                Probe {
                    loss: weighted_sum(&c, &relu(x)),
                    pattern: Some(h.finish()),
                }
            } else {
                Probe::smooth(weighted_sum(&c, &sigmoid(x)))
            }
        }),
    ))
}

fn check_embedding(rng: &mut RngStream) -> Result<Check> {
    let (rows, dim, batch) = (dims(rng, 2, 10), dims(rng, 1, 6), dims(rng, 1, 12));
    let table = uniform(&[rows, dim], -1.0, 1.0, rng);
    // Repeated indices exercise the scatter-add.
    let indices: Vec<usize> = (0..batch).map(|_| rng.below(rows)).collect();
    let c = uniform(&[batch, dim], -1.0, 1.0, rng);
    let mut store = store_with(&[("table", table.clone())])?;
    let mut grad = Tensor::zeros(table.shape());
    embedding_backward(&indices, &c, &mut grad);
    set_grad(&mut store, "table", &grad);
    Ok((
        store,
        Box::new(move |s| {
            let y = embedding_lookup(value(s, "table"), &indices).expect("indices in range");
            Probe::smooth(weighted_sum(&c, &y))
        }),
    ))
}

fn check_hadamard(rng: &mut RngStream) -> Result<Check> {
    let shape = [dims(rng, 1, 6), dims(rng, 1, 8)];
    let a = uniform(&shape, -1.0, 1.0, rng);
    let b = uniform(&shape, -1.0, 1.0, rng);
    let c = uniform(&shape, -1.0, 1.0, rng);
    let mut store = store_with(&[("a", a.clone()), ("b", b.clone())])?;
    let (da, db) = hadamard_backward(&a, &b, &c);
    set_grad(&mut store, "a", &da);
    set_grad(&mut store, "b", &db);
    Ok((
        store,
        Box::new(move |s| {
            let y = hadamard(value(s, "a"), value(s, "b")).expect("shapes fixed");
            Probe::smooth(weighted_sum(&c, &y))
        }),
    ))
}

fn error_signs(y: &[f64], y_hat: &[f64]) -> u64 {
    let mut h = PatternHasher::default();
    for (t, p) in y.iter().zip(y_hat) {
        h.push(p > t);
    }
    h.finish()
}

fn check_mape(rng: &mut RngStream) -> Result<Check> {
    let n = dims(rng, 1, 16);
    let y: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 5.0)).collect();
    let offsets = away_from_zero(&[n], 1e-3, rng);
    let y_hat: Vec<f64> = y.iter().zip(offsets.data()).map(|(t, o)| t + o).collect();
    let mut store = store_with(&[("y_hat", Tensor::vector(y_hat.clone()))])?;
    set_grad(
        &mut store,
        "y_hat",
        &Tensor::vector(mape_gradient(&y, &y_hat)?),
    );
    Ok((
        store,
        Box::new(move |s| {
            let p = value(s, "y_hat").data();
            Probe {
                loss: mape(&y, p).expect("non-zero targets"),
                pattern: Some(error_signs(&y, p)),
            }
        }),
    ))
}

/// A small model under the training loss: input width at most 40, batch 8.
fn check_model(rng: &mut RngStream, full: bool) -> Result<Check> {
    let features = dims(rng, 4, 24);
    let embedding = full.then(|| EmbeddingConfig {
        rows: dims(rng, 2, 8),
        dim: dims(rng, 2, 16),
    });
    let input_dim = features + embedding.as_ref().map_or(0, |e| e.dim);
    let config = ModelConfig {
        input_dim,
        hidden_dims: vec![dims(rng, 2, 10), dims(rng, 2, 8)],
        arl_bottleneck: dims(rng, 1, 4),
        arl_enabled: full,
        output_offset: rng.uniform(1.0, 10.0),
        output_scale: rng.uniform(0.5, 3.0),
        embedding,
    };
    let mut model = EnergyModel::new(config, rng)?;
    // Non-zero biases so no unit sits exactly at its kink.
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        let p = model.store_mut().get_mut(id);
        if p.name.ends_with("_b") || p.name.ends_with("_b1") || p.name.ends_with("_b2") {
            p.value = uniform(p.value.shape(), -0.5, 0.5, rng);
        }
    }
    let x = uniform(&[MODEL_BATCH, features], -1.0, 1.0, rng);
    let bsid: Option<Vec<usize>> = model
        .config()
        .embedding
        .as_ref()
        .map(|e| (0..MODEL_BATCH).map(|_| rng.below(e.rows)).collect());

    let forward = model.forward(&x, bsid.as_deref())?;
    let offsets = away_from_zero(&[MODEL_BATCH], 1e-3, rng);
    let y: Vec<f64> = forward
        .prediction
        .iter()
        .zip(offsets.data())
        .map(|(p, o)| (p + o).abs().max(0.1))
        .collect();
    let d_pred = mape_gradient(&y, &forward.prediction)?;
    model.store_mut().zero_grad();
    model.backward(&forward.cache, &d_pred);
    let store = model.store().clone();

    let mut probe_model = model;
    Ok((
        store,
        Box::new(move |s| {
            probe_model.store_mut().copy_values_from(s);
            let f = probe_model
                .forward(&x, bsid.as_deref())
                .expect("shapes fixed");
            let pattern =
                f.cache.activation_pattern() ^ error_signs(&y, &f.prediction).rotate_left(1);
            Probe {
                loss: mape(&y, &f.prediction).expect("non-zero targets"),
                pattern: Some(pattern),
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seeds: Vec<u64>) -> SelfCheckConfig {
        SelfCheckConfig {
            seeds,
            ..SelfCheckConfig::default()
        }
    }

    #[test]
    fn every_check_passes_on_a_few_seeds() {
        for o in run(&quick(vec![0, 1, 2])).unwrap() {
            assert!(o.passed(), "{} seed {}:\n{}", o.name, o.seed, o.report);
        }
    }

    #[test]
    fn injected_fault_is_caught_everywhere() {
        let cfg = SelfCheckConfig {
            inject_fault: true,
            ..quick(vec![3])
        };
        for o in run(&cfg).unwrap() {
            assert!(
                !o.passed(),
                "{} did not notice the corrupted gradient",
                o.name
            );
        }
    }

    #[test]
    fn zero_tolerance_cannot_pass() {
        let cfg = SelfCheckConfig {
            tolerance: 0.0,
            ..quick(vec![0])
        };
        assert!(run(&cfg).unwrap().iter().any(|o| !o.passed()));
    }

    #[test]
    fn unknown_check_is_a_config_error() {
        assert!(run_one("softmax", 0, &SelfCheckConfig::default()).is_err());
    }
}
