//! The two ranking MDPs and the simulated user.
//!
//! Physical display positions are 1-based (`p_1..p_k`); candidate documents
//! are 0-based indices into a query's candidate list. The user's display
//! order is hidden from agents: they only ever see rewards.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Query;
use crate::error::{Error, Result};

/// `pref_index[i]` is the preference rank (1 = most preferred) of physical
/// position `p_{i+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DisplayOrder {
    pref_index: Vec<usize>,
}

impl DisplayOrder {
    pub fn new(pref_index: Vec<usize>) -> Result<Self> {
        let k = pref_index.len();
        if k == 0 {
            return Err(Error::Invalid("display order must have at least one position".into()));
        }
        let mut seen = vec![false; k];
        for &r in &pref_index {
            if r == 0 || r > k || std::mem::replace(&mut seen[r - 1], true) {
                return Err(Error::Invalid(format!(
                    "display order {pref_index:?} is not a permutation of 1..={k}"
                )));
            }
        }
        Ok(DisplayOrder { pref_index })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Vec<usize> = serde_json::from_str(&text)?;
        DisplayOrder::new(v)
    }

    pub fn k(&self) -> usize {
        self.pref_index.len()
    }

    pub fn pref_index(&self) -> &[usize] {
        &self.pref_index
    }

    /// Preference rank of the 1-based physical `position`.
    pub fn pref_rank(&self, position: usize) -> Result<usize> {
        if position == 0 || position > self.k() {
            return Err(Error::InvalidAction(format!(
                "position {position} outside 1..={}",
                self.k()
            )));
        }
        Ok(self.pref_index[position - 1])
    }

    /// Physical positions ordered from most to least preferred.
    pub fn positions_by_preference(&self) -> Vec<usize> {
        let mut by_pref = vec![0; self.k()];
        for (i, &r) in self.pref_index.iter().enumerate() {
            by_pref[r - 1] = i + 1;
        }
        by_pref
    }
}

impl TryFrom<Vec<usize>> for DisplayOrder {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        DisplayOrder::new(v)
    }
}

impl From<DisplayOrder> for Vec<usize> {
    fn from(o: DisplayOrder) -> Self {
        o.pref_index
    }
}

/// The three simulated user biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    First,
    Center,
    Last,
}

impl Bias {
    pub const ALL: [Bias; 3] = [Bias::First, Bias::Center, Bias::Last];

    pub fn name(self) -> &'static str {
        match self {
            Bias::First => "first",
            Bias::Center => "center",
            Bias::Last => "last",
        }
    }

    /// The bias pattern at an arbitrary display size. At `k = 10` this is
    /// exactly the built-in table; for center bias the middle position
    /// `ceil(k/2)` is preferred first, then alternating right and left.
    pub fn order(self, k: usize) -> Result<DisplayOrder> {
        let prefs = match self {
            Bias::First => (1..=k).collect(),
            Bias::Last => (1..=k).rev().collect(),
            Bias::Center => {
                let c = k.div_ceil(2);
                (1..=k)
                    .map(|i| if i <= c { 2 * (c - i) + 1 } else { 2 * (i - c) })
                    .collect()
            }
        };
        DisplayOrder::new(prefs)
    }
}

impl std::str::FromStr for Bias {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_bias" => Ok(Bias::First),
            "center" | "center_bias" => Ok(Bias::Center),
            "last" | "last_bias" => Ok(Bias::Last),
            other => Err(Error::Config(format!("unknown display order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltinOrders {
    pub first_bias: DisplayOrder,
    pub center_bias: DisplayOrder,
    pub last_bias: DisplayOrder,
}

/// The reference display orders for a ten-position display.
pub fn builtin_display_orders(k: usize) -> Result<BuiltinOrders> {
    if k != 10 {
        return Err(Error::Config(format!(
            "built-in display orders are defined for k = 10 only (got {k}); supply a permutation"
        )));
    }
    Ok(BuiltinOrders {
        first_bias: DisplayOrder::new((1..=10).collect())?,
        center_bias: DisplayOrder::new(vec![9, 7, 5, 3, 1, 2, 4, 6, 8, 10])?,
        last_bias: DisplayOrder::new((1..=10).rev().collect())?,
    })
}

/// `log2(pref_rank + 1)` for `1 <= pref_rank <= k`.
pub fn discount(pref_rank: usize, k: usize) -> Result<f64> {
    if pref_rank == 0 || pref_rank > k {
        return Err(Error::Invalid(format!("preference rank {pref_rank} outside 1..={k}")));
    }
    Ok(((pref_rank + 1) as f64).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainVariant {
    /// `2^(rel - 1)`
    PaperLiteral,
    /// `2^rel - 1`
    StandardDcg,
}

impl std::str::FromStr for GainVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(GainVariant::PaperLiteral),
            "standard_dcg" => Ok(GainVariant::StandardDcg),
            other => Err(Error::Config(format!("unknown gain variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainFunction {
    pub variant: GainVariant,
    pub max_label: u8,
}

impl GainFunction {
    pub fn new(variant: GainVariant, max_label: u8) -> Self {
        GainFunction { variant, max_label }
    }

    pub fn gain(&self, rel: u8) -> Result<f64> {
        if rel > self.max_label {
            return Err(Error::Invalid(format!(
                "relevance {rel} outside 0..={}",
                self.max_label
            )));
        }
        Ok(match self.variant {
            GainVariant::PaperLiteral => 2f64.powi(rel as i32 - 1),
            GainVariant::StandardDcg => 2f64.powi(rel as i32) - 1.0,
        })
    }
}

pub fn gain(rel: u8, gf: &GainFunction) -> Result<f64> {
    gf.gain(rel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardLevel {
    Document,
    Serp,
}

impl std::str::FromStr for RewardLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document" | "doc" => Ok(RewardLevel::Document),
            "serp" => Ok(RewardLevel::Serp),
            other => Err(Error::Config(format!("unknown reward level `{other}`"))),
        }
    }
}

/// Document-level reward for the baseline MDP at 1-based step `t`: the
/// baseline fills physical positions in order, so step `t` lands on `p_t`.
pub fn doc_reward_baseline(t: usize, rel: u8, order: &DisplayOrder, gf: &GainFunction) -> Result<f64> {
    if t == 0 || t > order.k() {
        return Err(Error::Invalid(format!("step {t} outside 1..={}", order.k())));
    }
    doc_reward_drm(t, rel, order, gf)
}

/// Reward of a DRM position action placing a document of label `rel` at
/// physical position `chosen_pos`. Document actions are rewarded 0.
pub fn doc_reward_drm(chosen_pos: usize, rel: u8, order: &DisplayOrder, gf: &GainFunction) -> Result<f64> {
    let rank = order.pref_rank(chosen_pos)?;
    Ok(gf.gain(rel)? / discount(rank, order.k())?)
}

/// Terminal SERP reward: the sum of the per-placement document rewards.
pub fn serp_total(doc_rewards: &[f64]) -> f64 {
    doc_rewards.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Baseline,
    Drm,
}

/// One complete SERP construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub query_id: String,
    pub kind: EpisodeKind,
    /// Candidate indices in placement order.
    pub doc_actions: Vec<usize>,
    /// Physical position (1-based) of each placement; identity for the baseline.
    pub pos_actions: Vec<usize>,
    /// Per-step rewards: `k` entries for the baseline, `2k` for DRM.
    pub rewards: Vec<f64>,
    pub total_reward: f64,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.doc_actions.len()
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// `serp[i]` is the candidate shown at physical position `p_{i+1}`.
    pub fn serp(&self) -> Vec<usize> {
        let mut serp = vec![0; self.k()];
        for (&d, &p) in self.doc_actions.iter().zip(&self.pos_actions) {
            serp[p - 1] = d;
        }
        serp
    }
}

/// Partial ranking of the baseline MDP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineState {
    pub placed: Vec<usize>,
    k: usize,
    n_candidates: usize,
}

impl BaselineState {
    pub fn new(n_candidates: usize, k: usize) -> Result<Self> {
        if n_candidates < k || k == 0 {
            return Err(Error::Invalid(format!(
                "{n_candidates} candidates cannot fill {k} positions"
            )));
        }
        Ok(BaselineState {
            placed: Vec::with_capacity(k),
            k,
            n_candidates,
        })
    }

    pub fn t(&self) -> usize {
        self.placed.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.placed.len() == self.k
    }

    pub fn legal_actions(&self) -> Vec<usize> {
        (0..self.n_candidates).filter(|d| !self.placed.contains(d)).collect()
    }

    pub fn step(&self, doc: usize) -> Result<BaselineState> {
        let mut next = self.clone();
        next.apply(doc)?;
        Ok(next)
    }

    pub(crate) fn apply(&mut self, doc: usize) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::InvalidAction("episode already complete".into()));
        }
        if doc >= self.n_candidates {
            return Err(Error::InvalidAction(format!(
                "document {doc} outside 0..{}",
                self.n_candidates
            )));
        }
        if self.placed.contains(&doc) {
            return Err(Error::InvalidAction(format!("document {doc} already placed")));
        }
        self.placed.push(doc);
        Ok(())
    }
}

pub fn baseline_step(state: &BaselineState, doc_action: usize) -> Result<BaselineState> {
    state.step(doc_action)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrmAction {
    Doc(usize),
    /// 1-based physical position.
    Pos(usize),
}

/// Partial ranking of the DRM MDP: chosen documents `docs` (R) and their
/// positions `positions` (I). Documents are chosen before their positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrmState {
    pub docs: Vec<usize>,
    pub positions: Vec<usize>,
    k: usize,
    n_candidates: usize,
}

impl DrmState {
    pub fn new(n_candidates: usize, k: usize) -> Result<Self> {
        if n_candidates < k || k == 0 {
            return Err(Error::Invalid(format!(
                "{n_candidates} candidates cannot fill {k} positions"
            )));
        }
        Ok(DrmState {
            docs: Vec::with_capacity(k),
            positions: Vec::with_capacity(k),
            k,
            n_candidates,
        })
    }

    pub fn t(&self) -> usize {
        self.docs.len() + self.positions.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.t() == 2 * self.k
    }

    pub fn expects_document(&self) -> bool {
        self.docs.len() == self.positions.len()
    }

    pub fn available_docs(&self) -> Vec<usize> {
        (0..self.n_candidates).filter(|d| !self.docs.contains(d)).collect()
    }

    pub fn available_positions(&self) -> Vec<usize> {
        (1..=self.k).filter(|p| !self.positions.contains(p)).collect()
    }

    pub fn step(&self, action: DrmAction) -> Result<DrmState> {
        let mut next = self.clone();
        next.apply(action)?;
        Ok(next)
    }

    pub(crate) fn apply(&mut self, action: DrmAction) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::InvalidAction("episode already complete".into()));
        }
        match (action, self.expects_document()) {
            (DrmAction::Doc(d), true) => {
                if d >= self.n_candidates || self.docs.contains(&d) {
                    return Err(Error::InvalidAction(format!("document {d} unavailable")));
                }
                self.docs.push(d);
            }
            (DrmAction::Pos(p), false) => {
                if p == 0 || p > self.k || self.positions.contains(&p) {
                    return Err(Error::InvalidAction(format!("position {p} unavailable")));
                }
                self.positions.push(p);
            }
            (DrmAction::Doc(_), false) => {
                return Err(Error::InvalidAction("position action expected".into()))
            }
            (DrmAction::Pos(_), true) => {
                return Err(Error::InvalidAction("document action expected".into()))
            }
        }
        Ok(())
    }
}

pub fn drm_step(state: &DrmState, action: DrmAction) -> Result<DrmState> {
    state.step(action)
}

/// The simulated user: hidden display order, gain function and reward level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub order: DisplayOrder,
    pub gain: GainFunction,
    pub level: RewardLevel,
}

impl Environment {
    pub fn new(order: DisplayOrder, gain: GainFunction, level: RewardLevel) -> Self {
        Environment { order, gain, level }
    }

    pub fn k(&self) -> usize {
        self.order.k()
    }

    fn placement_rewards(&self, query: &Query, docs: &[usize], positions: &[usize]) -> Result<Vec<f64>> {
        docs.iter()
            .zip(positions)
            .map(|(&d, &p)| {
                let doc = query.candidates.get(d).ok_or_else(|| {
                    Error::InvalidAction(format!("query {} has no candidate {d}", query.id))
                })?;
                doc_reward_drm(p, doc.relevance, &self.order, &self.gain)
            })
            .collect()
    }

    /// Scores a finished baseline state. Rewards are per step; under SERP
    /// level only the last step carries the (summed) reward.
    pub fn finish_baseline(&self, query: &Query, state: &BaselineState) -> Result<Episode> {
        if !state.is_terminal() || state.k != self.k() {
            return Err(Error::Invalid("baseline episode incomplete".into()));
        }
        let positions: Vec<usize> = (1..=self.k()).collect();
        let placement = self.placement_rewards(query, &state.placed, &positions)?;
        let total = serp_total(&placement);
        let rewards = match self.level {
            RewardLevel::Document => placement,
            RewardLevel::Serp => terminal_only(self.k(), total),
        };
        Ok(Episode {
            query_id: query.id.clone(),
            kind: EpisodeKind::Baseline,
            doc_actions: state.placed.clone(),
            pos_actions: positions,
            rewards,
            total_reward: total,
        })
    }

    /// Scores a finished DRM state: `2k` rewards, zero at document steps.
    pub fn finish_drm(&self, query: &Query, state: &DrmState) -> Result<Episode> {
        if !state.is_terminal() || state.k != self.k() {
            return Err(Error::Invalid("DRM episode incomplete".into()));
        }
        let placement = self.placement_rewards(query, &state.docs, &state.positions)?;
        let total = serp_total(&placement);
        let rewards = match self.level {
            RewardLevel::Document => placement.iter().flat_map(|&r| [0.0, r]).collect(),
            RewardLevel::Serp => terminal_only(2 * self.k(), total),
        };
        Ok(Episode {
            query_id: query.id.clone(),
            kind: EpisodeKind::Drm,
            doc_actions: state.docs.clone(),
            pos_actions: state.positions.clone(),
            rewards,
            total_reward: total,
        })
    }

    /// Document-level rewards of an episode's placements, in placement order.
    pub fn placement_rewards_of(&self, query: &Query, episode: &Episode) -> Result<Vec<f64>> {
        self.placement_rewards(query, &episode.doc_actions, &episode.pos_actions)
    }
}

fn terminal_only(len: usize, total: f64) -> Vec<f64> {
    let mut r = vec![0.0; len];
    r[len - 1] = total;
    r
}

/// SERP-level reward of a complete episode under `(order, gf)`.
pub fn serp_reward(query: &Query, episode: &Episode, order: &DisplayOrder, gf: &GainFunction) -> Result<f64> {
    if episode.k() != order.k() || episode.pos_actions.len() != order.k() {
        return Err(Error::Invalid(format!(
            "episode has {} placements, display has {}",
            episode.k(),
            order.k()
        )));
    }
    let env = Environment::new(order.clone(), *gf, RewardLevel::Serp);
    Ok(serp_total(&env.placement_rewards_of(query, episode)?))
}
