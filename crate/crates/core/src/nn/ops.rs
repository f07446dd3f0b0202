//! Differentiable primitives. Each forward has a matching backward that
//! takes the upstream gradient and whatever the forward needs cached.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert_eq!(c.len(), m * n);
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides (checked above), and `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, input) = x.expect_matrix("linear input")?;
    let (out, w_in) = w.expect_matrix("linear weight")?;
    if w_in != input || b.len() != out {
        return Err(Error::Shape(format!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = Tensor::zeros(&[batch, out]);
    for r in 0..batch {
        y.row_mut(r).copy_from_slice(b.data());
    }
    gemm(
        batch,
        input,
        out,
        x.data(),
        (input, 1),
        w.data(),
        (1, input),
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> LinearGrads {
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[w.rows()]);
    linear_backward_into(x, w, dy, Some(&mut dx), &mut dw, &mut db);
    LinearGrads { dx, dw, db }
}

/// Accumulates `dW += dyᵀ x`, `db += Σ dy` and, when requested, writes `dx = dy W`.
pub fn linear_backward_into(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dx: Option<&mut Tensor>,
    dw: &mut Tensor,
    db: &mut Tensor,
) {
    let (batch, input) = (x.rows(), x.cols());
    let out = w.rows();
    debug_assert_eq!(dy.shape(), [batch, out]);
    gemm(
        out,
        batch,
        input,
        dy.data(),
        (1, out),
        x.data(),
        (input, 1),
        1.0,
        dw.data_mut(),
    );
    for r in 0..batch {
        for (acc, g) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *acc += g;
        }
    }
    if let Some(dx) = dx {
        gemm(
            batch,
            out,
            input,
            dy.data(),
            (out, 1),
            w.data(),
            (input, 1),
            0.0,
            dx.data_mut(),
        );
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Logistic function, evaluated on the side that cannot overflow.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = sigmoid_scalar(*v));
    y
}

/// Backward from the forward output `y = σ(x)`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (1.0 - s);
    }
    dx
}

/// Gathers `table[indices[i]]` into row `i`.
pub fn embedding_lookup(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (rows, dim) = table.expect_matrix("embedding table")?;
    let mut out = Tensor::zeros(&[indices.len().max(1), dim]);
    if indices.is_empty() {
        return Err(Error::Shape("embedding lookup with no indices".into()));
    }
    for (i, &idx) in indices.iter().enumerate() {
        if idx >= rows {
            return Err(Error::IndexOutOfRange { index: idx, rows });
        }
        out.row_mut(i).copy_from_slice(table.row(idx));
    }
    Ok(out)
}

/// Scatter-adds the rows of `dy` into `grad_table` at `indices`.
pub fn embedding_backward(indices: &[usize], dy: &Tensor, grad_table: &mut Tensor) {
    for (i, &idx) in indices.iter().enumerate() {
        for (acc, g) in grad_table.row_mut(idx).iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "hadamard: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = a.clone();
    for (x, y) in c.data_mut().iter_mut().zip(b.data()) {
        *x *= y;
    }
    Ok(c)
}

/// Returns `(∂L/∂a, ∂L/∂b)` given `∂L/∂c`.
pub fn hadamard_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    let mut da = dc.clone();
    let mut db = dc.clone();
    for ((ga, gb), (x, y)) in da
        .data_mut()
        .iter_mut()
        .zip(db.data_mut().iter_mut())
        .zip(a.data().iter().zip(b.data()))
    {
        *ga *= y;
        *gb *= x;
    }
    (da, db)
}
