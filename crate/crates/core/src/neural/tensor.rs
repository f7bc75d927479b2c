use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self[:, offset..offset + x.len()] · x`
    #[inline]
    pub fn matvec_cols_acc(&self, offset: usize, x: &[f64], out: &mut [f64]) {
        debug_assert!(offset + x.len() <= self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols + offset..r * self.cols + offset + x.len()];
            *o += dot(row, x);
        }
    }

    /// `out += self · x`
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_cols_acc(0, x, out);
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        Ok(out)
    }

    /// `out[offset..offset + cols_len] += self[:, offset..]ᵀ · dy`, restricted
    /// to the column block starting at `offset` with `out.len()` columns.
    #[inline]
    pub fn tmatvec_cols_acc(&self, offset: usize, dy: &[f64], out: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols + offset..r * self.cols + offset + out.len()];
            for (o, w) in out.iter_mut().zip(row) {
                *o += g * w;
            }
        }
    }

    /// `out += selfᵀ · dy`
    #[inline]
    pub fn tmatvec_acc(&self, dy: &[f64], out: &mut [f64]) {
        self.tmatvec_cols_acc(0, dy, out);
    }

    /// `self[:, offset..offset + b.len()] += a ⊗ b`
    #[inline]
    pub fn add_outer_cols(&mut self, offset: usize, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols + offset..r * self.cols + offset + b.len()];
            for (w, bv) in row.iter_mut().zip(b) {
                *w += ar * bv;
            }
        }
    }

    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        self.add_outer_cols(0, a, b);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// A named, shape-tagged view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A fixed collection of parameter tensors, visited in a stable order.
///
/// `collect` and `collect_mut` must enumerate the same tensors in the same
/// order; gradients are represented by a value of the same type.
pub trait Parameters: Clone {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// A value of the same shape with every entry zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("assign_flat", n, flat.len()));
        }
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    fn axpy(&mut self, scale: f64, other: &Self) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += scale * v;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for Matrix {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push(NamedTensor {
            name: prefix.to_string(),
            shape: vec![self.rows, self.cols],
            data: &self.data,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.data);
    }
}

impl Parameters for Vec<f64> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push(NamedTensor {
            name: prefix.to_string(),
            shape: vec![self.len()],
            data: self,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self);
    }
}

impl Parameters for f64 {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push(NamedTensor {
            name: prefix.to_string(),
            shape: vec![],
            data: std::slice::from_ref(self),
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(std::slice::from_mut(self));
    }
}

/// Implements [`Parameters`] for a struct by visiting the listed fields.
#[macro_export]
macro_rules! impl_parameters {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::neural::Parameters for $ty {
            fn collect<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<$crate::neural::NamedTensor<'a>>,
            ) {
                $(
                    $crate::neural::Parameters::collect(
                        &self.$field,
                        &$crate::neural::tensor::prefixed(prefix, stringify!($field)),
                        out,
                    );
                )+
            }

            fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
                $( $crate::neural::Parameters::collect_mut(&mut self.$field, out); )+
            }
        }
    };
}

#[doc(hidden)]
pub fn prefixed(prefix: &str, name: &str) -> String {
    join(prefix, name)
}
