//! Q-value models and their ε-greedy episode samplers.
//!
//! [`GruAgent`] is the baseline: it fills display positions top to bottom
//! and scores every remaining candidate by rolling the GRU once per
//! candidate. [`DrmAgent`] alternates document and position actions and
//! rolls the GRU once per placement.

mod drm;
mod gru;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use drm::{drm_doc_q, drm_pos_q, DrmAgent};
pub use gru::{gru_q_value, GruAgent};

use crate::dataset::Query;
use crate::error::{Error, Result};
use crate::mdp::{Environment, Episode};
use crate::neural::{CandidateInput, DenseParams, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Gru,
    Drm,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Gru => "gru",
            AgentKind::Drm => "drm",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(AgentKind::Gru),
            "drm" => Ok(AgentKind::Drm),
            other => Err(Error::Config(format!("unknown agent `{other}`"))),
        }
    }
}

/// Layer widths. Defaults are the full-scale sizes: 128-d document
/// embeddings, 256-d hidden state, 128-d Q-heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDims {
    pub embed: usize,
    pub hidden: usize,
    pub head: usize,
}

impl Default for AgentDims {
    fn default() -> Self {
        AgentDims {
            embed: 128,
            hidden: 256,
            head: 128,
        }
    }
}

/// Everything needed to rebuild an agent's parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub kind: AgentKind,
    pub k: usize,
    pub feature_count: usize,
    pub dims: AgentDims,
    pub gru_candidate_input: CandidateInput,
}

/// Exploration probabilities; the DRM flips independent coins for the
/// document and the position of each placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    pub doc: f64,
    pub pos: f64,
}

impl Exploration {
    pub fn uniform(epsilon: f64) -> Self {
        Exploration {
            doc: epsilon,
            pos: epsilon,
        }
    }

    pub fn greedy() -> Self {
        Exploration::uniform(0.0)
    }
}

pub(crate) fn coin<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    p > 0.0 && rng.gen::<f64>() < p
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 30_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, step: u64) -> f64 {
    schedule.at(step)
}

/// Which next-state actions [`Agent::replay_forward`] should score.
#[derive(Debug, Clone, Copy)]
pub enum NextActions<'a> {
    /// Every legal action of every non-terminal next state.
    All,
    /// One action per step (`None` at the terminal step).
    Only(&'a [Option<usize>]),
}

/// Q-values recomputed along a stored episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Q of the action actually taken at each step.
    pub taken_q: Vec<f64>,
    /// For each non-terminal step `t`, the scored `(action, Q)` pairs of the
    /// next state `s_{t+1}`, in ascending action order. Actions are
    /// candidate indices for document steps and 1-based positions for
    /// position steps.
    pub next_q: Vec<Vec<(usize, f64)>>,
}

/// First maximum wins, so ties go to the lowest action id.
pub fn argmax(scored: &[(usize, f64)]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(a, q) in scored {
        match best {
            // ties and NaN keep the earlier action
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            Some((_, bq)) if !(q > bq) => {}
            _ => best = Some((a, q)),
        }
    }
    best
}

/// A trainable Q-value model with its episode sampler.
pub trait Agent: Parameters + Send + Sync + std::fmt::Debug + PartialEq {
    const KIND: AgentKind;

    fn init<R: Rng + ?Sized>(manifest: &AgentManifest, rng: &mut R) -> Result<Self>;
    fn zeros(manifest: &AgentManifest) -> Result<Self>;
    fn manifest(&self, k: usize) -> AgentManifest;

    /// Samples one ε-greedy episode for `query`.
    fn rollout<R: Rng + ?Sized>(
        &self,
        query: &Query,
        explore: Exploration,
        rng: &mut R,
        env: &Environment,
    ) -> Result<Episode>;

    fn greedy_episode(&self, query: &Query, env: &Environment) -> Result<Episode> {
        // ε = 0 never draws from the rng.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.rollout(query, Exploration::greedy(), &mut rng, env)
    }

    /// Recomputes the Q-values along `episode` under these parameters,
    /// reconstructing the legal action sets of the original rollout.
    fn replay_forward(&self, query: &Query, episode: &Episode, next: NextActions<'_>) -> Result<Replay>;

    /// `Σ_t (Q(s_t, a_t) − y_t)²` over the episode; accumulates its
    /// gradient into `grads`.
    fn loss_and_grad(&self, query: &Query, episode: &Episode, targets: &[f64], grads: &mut Self) -> Result<f64>;
}

/// `d̂ = ReLU(W_d d + b_d)`
pub fn embed_document(params: &DenseParams, features: &[f64]) -> Result<Vec<f64>> {
    let mut e = crate::neural::dense_forward(params, features)?;
    crate::neural::layers::relu_in_place(&mut e);
    Ok(e)
}

/// Embeddings of every candidate, keeping pre-activations for backward.
pub(crate) struct Embedded {
    pub pre: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
}

pub(crate) fn embed_all(params: &DenseParams, query: &Query) -> Result<Embedded> {
    let mut pre = Vec::with_capacity(query.candidates.len());
    let mut out = Vec::with_capacity(query.candidates.len());
    for d in &query.candidates {
        let p = crate::neural::dense_forward(params, &d.features)?;
        out.push(crate::neural::relu(&p));
        pre.push(p);
    }
    Ok(Embedded { pre, out })
}

/// Backpropagates `de` through the embedding of `features`.
pub(crate) fn embed_backward(pre: &[f64], features: &[f64], de: &[f64], grads: &mut DenseParams) {
    let dpre = crate::neural::relu_backward(pre, de);
    grads.w.add_outer(&dpre, features);
    crate::neural::tensor::add_assign(&mut grads.b, &dpre);
}

/// `vᵀ ReLU(pre) + u`
#[inline]
pub(crate) fn head_value(pre: &[f64], v: &[f64], u: f64) -> f64 {
    let mut s = 0.0;
    for (p, w) in pre.iter().zip(v) {
        if *p > 0.0 {
            s += p * w;
        }
    }
    s + u
}

/// Gradient of `vᵀ ReLU(pre) + u` scaled by `dq`: accumulates into `dv`,
/// returns `(du, dpre)`.
pub(crate) fn head_backward(pre: &[f64], v: &[f64], dq: f64, dv: &mut [f64]) -> (f64, Vec<f64>) {
    let mut dpre = vec![0.0; pre.len()];
    for i in 0..pre.len() {
        if pre[i] > 0.0 {
            dv[i] += dq * pre[i];
            dpre[i] = dq * v[i];
        }
    }
    (dq, dpre)
}

pub(crate) fn check_episode(query: &Query, episode: &Episode, k: usize, drm: bool) -> Result<()> {
    let bad = |msg: String| Err(Error::Invalid(format!("episode for query {}: {msg}", query.id)));
    if episode.query_id != query.id {
        return bad(format!("recorded for query {}", episode.query_id));
    }
    let steps = if drm { 2 * k } else { k };
    if episode.doc_actions.len() != k || episode.pos_actions.len() != k || episode.rewards.len() != steps {
        return bad(format!("expected {k} placements and {steps} rewards"));
    }
    let n = query.candidates.len();
    let mut seen_doc = vec![false; n];
    let mut seen_pos = vec![false; k];
    for (&d, &p) in episode.doc_actions.iter().zip(&episode.pos_actions) {
        if d >= n || std::mem::replace(&mut seen_doc[d], true) {
            return bad(format!("invalid or repeated document {d}"));
        }
        if p == 0 || p > k || std::mem::replace(&mut seen_pos[p - 1], true) {
            return bad(format!("invalid or repeated position {p}"));
        }
    }
    Ok(())
}
