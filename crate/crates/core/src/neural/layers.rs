use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::impl_parameters;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// `y = W x + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl_parameters!(DenseParams { w, b });

impl DenseParams {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        DenseParams {
            w: Matrix::zeros(n_out, n_in),
            b: vec![0.0; n_out],
        }
    }

    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        DenseParams {
            w: glorot_uniform(n_out, n_in, rng),
            b: vec![0.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    /// Forward pass without shape checks, for hot loops.
    #[inline]
    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        self.w.matvec_acc(x, &mut y);
        y
    }
}

pub fn dense_forward(params: &DenseParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.n_in() {
        return Err(Error::shape("dense_forward", params.n_in(), x.len()));
    }
    if params.b.len() != params.n_out() {
        return Err(Error::shape("dense bias", params.n_out(), params.b.len()));
    }
    Ok(params.forward_unchecked(x))
}

/// Accumulates parameter gradients into `grads` and returns `dx`.
pub fn dense_backward(params: &DenseParams, x: &[f64], dy: &[f64], grads: &mut DenseParams) -> Result<Vec<f64>> {
    if x.len() != params.n_in() || dy.len() != params.n_out() {
        return Err(Error::shape(
            "dense_backward",
            format!("x:{} dy:{}", params.n_in(), params.n_out()),
            format!("x:{} dy:{}", x.len(), dy.len()),
        ));
    }
    grads.w.add_outer(dy, x);
    super::tensor::add_assign(&mut grads.b, dy);
    let mut dx = vec![0.0; x.len()];
    params.w.tmatvec_acc(dy, &mut dx);
    Ok(dx)
}
