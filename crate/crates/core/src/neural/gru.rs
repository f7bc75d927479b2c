//! GRU cell.
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! c = tanh(W_h v + U_h (r ∘ h) + b_h)      v = h (as printed) or x (conventional)
//! h' = z ∘ h + (1 − z) ∘ c
//! ```
//!
//! The forward pass is split into a state part (depends only on `h`) and an
//! input part (depends only on `x`) so that scoring many candidate inputs
//! from one state shares the state projections. [`gru_forward`] goes through
//! the same split, so both routes are bit-identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::layers::{sigmoid, tanh};
use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::impl_parameters;

/// What the candidate-state term feeds through `W_h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateInput {
    /// `W_h h_{t-1}`; `W_h` is `n_h × n_h`.
    #[default]
    AsPrinted,
    /// `W_h x_t`; `W_h` is `n_h × n_in`.
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
    pub candidate_input: CandidateInput,
}

impl_parameters!(GruParams { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h });

impl GruParams {
    fn w_h_cols(n_in: usize, n_h: usize, ci: CandidateInput) -> usize {
        match ci {
            CandidateInput::AsPrinted => n_h,
            CandidateInput::Conventional => n_in,
        }
    }

    pub fn zeros(n_in: usize, n_h: usize, candidate_input: CandidateInput) -> Self {
        GruParams {
            w_z: Matrix::zeros(n_h, n_in),
            u_z: Matrix::zeros(n_h, n_h),
            b_z: vec![0.0; n_h],
            w_r: Matrix::zeros(n_h, n_in),
            u_r: Matrix::zeros(n_h, n_h),
            b_r: vec![0.0; n_h],
            w_h: Matrix::zeros(n_h, Self::w_h_cols(n_in, n_h, candidate_input)),
            u_h: Matrix::zeros(n_h, n_h),
            b_h: vec![0.0; n_h],
            candidate_input,
        }
    }

    pub fn init<R: Rng + ?Sized>(n_in: usize, n_h: usize, candidate_input: CandidateInput, rng: &mut R) -> Self {
        GruParams {
            w_z: glorot_uniform(n_h, n_in, rng),
            u_z: glorot_uniform(n_h, n_h, rng),
            b_z: vec![0.0; n_h],
            w_r: glorot_uniform(n_h, n_in, rng),
            u_r: glorot_uniform(n_h, n_h, rng),
            b_r: vec![0.0; n_h],
            w_h: glorot_uniform(n_h, Self::w_h_cols(n_in, n_h, candidate_input), rng),
            u_h: glorot_uniform(n_h, n_h, rng),
            b_h: vec![0.0; n_h],
            candidate_input,
        }
    }

    pub fn n_in(&self) -> usize {
        self.w_z.cols()
    }

    pub fn n_h(&self) -> usize {
        self.u_z.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n_in, n_h) = (self.n_in(), self.n_h());
        let expect = [
            ("w_z", self.w_z.shape(), (n_h, n_in)),
            ("u_z", self.u_z.shape(), (n_h, n_h)),
            ("w_r", self.w_r.shape(), (n_h, n_in)),
            ("u_r", self.u_r.shape(), (n_h, n_h)),
            ("w_h", self.w_h.shape(), (n_h, Self::w_h_cols(n_in, n_h, self.candidate_input))),
            ("u_h", self.u_h.shape(), (n_h, n_h)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::shape("GruParams", format!("{name} {want:?}"), format!("{got:?}")));
            }
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            if b.len() != n_h {
                return Err(Error::shape("GruParams bias", n_h, b.len()));
            }
        }
        Ok(())
    }

    /// Projections that depend only on the previous hidden state.
    pub fn state_terms(&self, h: &[f64]) -> StateTerms {
        let mut z = self.b_z.clone();
        self.u_z.matvec_acc(h, &mut z);
        let mut r = self.b_r.clone();
        self.u_r.matvec_acc(h, &mut r);
        let mut c = self.b_h.clone();
        if self.candidate_input == CandidateInput::AsPrinted {
            self.w_h.matvec_acc(h, &mut c);
        }
        StateTerms { z, r, c }
    }

    /// Projections that depend only on the input.
    pub fn input_terms(&self, x: &[f64]) -> InputTerms {
        let n_h = self.n_h();
        let mut z = vec![0.0; n_h];
        self.w_z.matvec_acc(x, &mut z);
        let mut r = vec![0.0; n_h];
        self.w_r.matvec_acc(x, &mut r);
        let c = match self.candidate_input {
            CandidateInput::AsPrinted => Vec::new(),
            CandidateInput::Conventional => {
                let mut c = vec![0.0; n_h];
                self.w_h.matvec_acc(x, &mut c);
                c
            }
        };
        InputTerms { z, r, c }
    }

    /// Completes a step from precomputed terms, keeping intermediates.
    pub fn step(&self, h: &[f64], x: &[f64], st: &StateTerms, it: &InputTerms) -> GruCache {
        let (z, r, rh, c, h_new) = self.step_parts(h, st, it);
        GruCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            z,
            r,
            rh,
            c,
            h: h_new,
        }
    }

    /// Same arithmetic as [`GruParams::step`], returning only the new state.
    pub fn step_hidden(&self, h: &[f64], st: &StateTerms, it: &InputTerms) -> Vec<f64> {
        self.step_parts(h, st, it).4
    }

    #[allow(clippy::type_complexity)]
    fn step_parts(
        &self,
        h: &[f64],
        st: &StateTerms,
        it: &InputTerms,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        STEPS.with(|s| s.set(s.get() + 1));
        let n_h = self.n_h();
        let z: Vec<f64> = st.z.iter().zip(&it.z).map(|(a, b)| sigmoid(a + b)).collect();
        let r: Vec<f64> = st.r.iter().zip(&it.r).map(|(a, b)| sigmoid(a + b)).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let mut pre = st.c.clone();
        if !it.c.is_empty() {
            for (p, v) in pre.iter_mut().zip(&it.c) {
                *p += v;
            }
        }
        self.u_h.matvec_acc(&rh, &mut pre);
        let c: Vec<f64> = pre.iter().map(|&v| tanh(v)).collect();
        let mut h_new = Vec::with_capacity(n_h);
        for i in 0..n_h {
            h_new.push(z[i] * h[i] + (1.0 - z[i]) * c[i]);
        }
        (z, r, rh, c, h_new)
    }
}

thread_local! {
    static STEPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of GRU steps evaluated on the current thread so far.
pub fn gru_step_count() -> u64 {
    STEPS.with(|s| s.get())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTerms {
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputTerms {
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

/// Intermediates of one GRU step, consumed by [`gru_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub rh: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn gru_forward(params: &GruParams, h_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    params.check_shapes()?;
    if h_prev.len() != params.n_h() {
        return Err(Error::shape("gru_forward h_prev", params.n_h(), h_prev.len()));
    }
    if x.len() != params.n_in() {
        return Err(Error::shape("gru_forward x", params.n_in(), x.len()));
    }
    let cache = params.step(h_prev, x, &params.state_terms(h_prev), &params.input_terms(x));
    Ok((cache.h.clone(), cache))
}

/// Backward pass of one step. Parameter gradients are accumulated into
/// `grads`; returns `(dh_prev, dx)`.
pub fn gru_backward_acc(
    params: &GruParams,
    cache: &GruCache,
    dh: &[f64],
    grads: &mut GruParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_in, n_h) = (params.n_in(), params.n_h());
    if dh.len() != n_h || cache.h_prev.len() != n_h || cache.x.len() != n_in {
        return Err(Error::shape(
            "gru_backward",
            format!("dh:{n_h} x:{n_in}"),
            format!("dh:{} x:{}", dh.len(), cache.x.len()),
        ));
    }
    let h = &cache.h_prev;
    let mut dh_prev = vec![0.0; n_h];
    let mut dx = vec![0.0; n_in];

    let mut da_z = vec![0.0; n_h];
    let mut da_c = vec![0.0; n_h];
    for i in 0..n_h {
        let (z, c) = (cache.z[i], cache.c[i]);
        dh_prev[i] = dh[i] * z;
        da_z[i] = dh[i] * (h[i] - c) * z * (1.0 - z);
        da_c[i] = dh[i] * (1.0 - z) * (1.0 - c * c);
    }

    // candidate
    match params.candidate_input {
        CandidateInput::AsPrinted => {
            grads.w_h.add_outer(&da_c, h);
            params.w_h.tmatvec_acc(&da_c, &mut dh_prev);
        }
        CandidateInput::Conventional => {
            grads.w_h.add_outer(&da_c, &cache.x);
            params.w_h.tmatvec_acc(&da_c, &mut dx);
        }
    }
    grads.u_h.add_outer(&da_c, &cache.rh);
    super::tensor::add_assign(&mut grads.b_h, &da_c);
    let mut d_rh = vec![0.0; n_h];
    params.u_h.tmatvec_acc(&da_c, &mut d_rh);

    let mut da_r = vec![0.0; n_h];
    for i in 0..n_h {
        let r = cache.r[i];
        dh_prev[i] += d_rh[i] * r;
        da_r[i] = d_rh[i] * h[i] * r * (1.0 - r);
    }

    // gates
    for (da, w, u, gw, gu, gb) in [
        (&da_z, &params.w_z, &params.u_z, &mut grads.w_z, &mut grads.u_z, &mut grads.b_z),
        (&da_r, &params.w_r, &params.u_r, &mut grads.w_r, &mut grads.u_r, &mut grads.b_r),
    ] {
        gw.add_outer(da, &cache.x);
        gu.add_outer(da, h);
        super::tensor::add_assign(gb, da);
        w.tmatvec_acc(da, &mut dx);
        u.tmatvec_acc(da, &mut dh_prev);
    }
    Ok((dh_prev, dx))
}

/// Backward pass returning fresh parameter gradients with `(dh_prev, dx)`.
pub fn gru_backward(params: &GruParams, cache: &GruCache, dh: &[f64]) -> Result<(GruParams, Vec<f64>, Vec<f64>)> {
    let mut grads = crate::neural::Parameters::zeros_like(params);
    let (dh_prev, dx) = gru_backward_acc(params, cache, dh, &mut grads)?;
    Ok((grads, dh_prev, dx))
}
