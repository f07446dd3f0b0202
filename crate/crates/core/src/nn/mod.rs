//! Dense f64 network substrate: tensors, the handful of differentiable
//! primitives the energy model needs, Adam, and finite-difference checking.

mod gradcheck;
pub mod ops;
mod params;
pub mod rng;
mod tensor;

pub use gradcheck::{
    grad_check, GradCheckConfig, GradCheckReport, ParamReport, PatternHasher, Probe,
};
pub use params::{AdamConfig, Param, ParamId, ParameterStore};
pub use rng::RngStream;
pub use tensor::Tensor;

/// Glorot-uniform matrix in ±√(6/(fan_in+fan_out)).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(lo, hi)).collect(),
    )
    .expect("positive dims")
}
