use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_episode, coin, embed_all, embed_backward, head_backward, head_value, Agent, AgentDims, AgentKind,
    AgentManifest, Exploration, NextActions, Replay,
};
use crate::dataset::Query;
use crate::error::{Error, Result};
use crate::impl_parameters;
use crate::mdp::{BaselineState, Environment, Episode, EpisodeKind};
use crate::neural::gru::InputTerms;
use crate::neural::{DenseParams, GruParams};

/// Baseline agent:
/// `h_t = GRU(h_{t-1}, d̂)`, `Q(s_t, d) = v_qᵀ ReLU(W_q h_t + b_q) + u_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruAgent {
    pub embed: DenseParams,
    pub gru: GruParams,
    pub head: DenseParams,
    pub v_q: Vec<f64>,
    pub u_q: f64,
}

impl_parameters!(GruAgent { embed, gru, head, v_q, u_q });

/// Q-value of appending the document with embedding `doc_embedding` to the
/// ranking summarized by `h_prev`, and the rolled hidden state.
pub fn gru_q_value(params: &GruAgent, h_prev: &[f64], doc_embedding: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (h, _) = crate::neural::gru_forward(&params.gru, h_prev, doc_embedding)?;
    Ok((params.q_of_state(&h), h))
}

impl GruAgent {
    fn hidden(&self) -> usize {
        self.gru.n_h()
    }

    fn head_pre(&self, h: &[f64]) -> Vec<f64> {
        self.head.forward_unchecked(h)
    }

    fn q_of_state(&self, h: &[f64]) -> f64 {
        head_value(&self.head_pre(h), &self.v_q, self.u_q)
    }

    fn input_terms(&self, embedded: &[Vec<f64>]) -> Vec<InputTerms> {
        embedded.iter().map(|e| self.gru.input_terms(e)).collect()
    }

    fn check_query(&self, query: &Query) -> Result<()> {
        let f = self.embed.n_in();
        for d in &query.candidates {
            if d.features.len() != f {
                return Err(Error::shape("document features", f, d.features.len()));
            }
        }
        Ok(())
    }
}

impl Agent for GruAgent {
    const KIND: AgentKind = AgentKind::Gru;

    fn init<R: Rng + ?Sized>(m: &AgentManifest, rng: &mut R) -> Result<Self> {
        let AgentDims { embed, hidden, head } = m.dims;
        Ok(GruAgent {
            embed: DenseParams::init(m.feature_count, embed, rng),
            gru: GruParams::init(embed, hidden, m.gru_candidate_input, rng),
            head: DenseParams::init(hidden, head, rng),
            v_q: crate::neural::glorot_uniform(1, head, rng).data().to_vec(),
            u_q: 0.0,
        })
    }

    fn zeros(m: &AgentManifest) -> Result<Self> {
        let AgentDims { embed, hidden, head } = m.dims;
        Ok(GruAgent {
            embed: DenseParams::zeros(m.feature_count, embed),
            gru: GruParams::zeros(embed, hidden, m.gru_candidate_input),
            head: DenseParams::zeros(hidden, head),
            v_q: vec![0.0; head],
            u_q: 0.0,
        })
    }

    fn manifest(&self, k: usize) -> AgentManifest {
        AgentManifest {
            kind: AgentKind::Gru,
            k,
            feature_count: self.embed.n_in(),
            dims: AgentDims {
                embed: self.embed.n_out(),
                hidden: self.hidden(),
                head: self.head.n_out(),
            },
            gru_candidate_input: self.gru.candidate_input,
        }
    }

    fn rollout<R: Rng + ?Sized>(
        &self,
        query: &Query,
        explore: Exploration,
        rng: &mut R,
        env: &Environment,
    ) -> Result<Episode> {
        self.check_query(query)?;
        let mut state = BaselineState::new(query.candidates.len(), env.k())?;
        let emb = embed_all(&self.embed, query)?;
        let inputs = self.input_terms(&emb.out);
        let mut h = vec![0.0; self.hidden()];
        while !state.is_terminal() {
            let legal = state.legal_actions();
            let st = self.gru.state_terms(&h);
            let (doc, h_next) = if coin(explore.doc, rng) {
                let d = legal[rng.gen_range(0..legal.len())];
                (d, self.gru.step_hidden(&h, &st, &inputs[d]))
            } else {
                let mut best: Option<(usize, f64, Vec<f64>)> = None;
                for &d in &legal {
                    let hd = self.gru.step_hidden(&h, &st, &inputs[d]);
                    let q = self.q_of_state(&hd);
                    if best.as_ref().is_none_or(|(_, bq, _)| q > *bq) {
                        best = Some((d, q, hd));
                    }
                }
                let (d, _, hd) = best.expect("legal set is non-empty before terminal");
                (d, hd)
            };
            state.apply(doc)?;
            h = h_next;
        }
        env.finish_baseline(query, &state)
    }

    fn replay_forward(&self, query: &Query, episode: &Episode, next: NextActions<'_>) -> Result<Replay> {
        self.check_query(query)?;
        if episode.kind != EpisodeKind::Baseline {
            return Err(Error::Invalid("GRU agent cannot replay a DRM episode".into()));
        }
        let k = episode.k();
        check_episode(query, episode, k, false)?;
        if let NextActions::Only(choices) = next {
            if choices.len() != k {
                return Err(Error::shape("replay choices", k, choices.len()));
            }
        }
        let emb = embed_all(&self.embed, query)?;
        let inputs = self.input_terms(&emb.out);
        let n = query.candidates.len();
        let mut placed = vec![false; n];
        let mut h = vec![0.0; self.hidden()];
        let mut st = self.gru.state_terms(&h);
        let mut taken_q = Vec::with_capacity(k);
        let mut next_q = Vec::with_capacity(k.saturating_sub(1));
        for t in 0..k {
            let d = episode.doc_actions[t];
            h = self.gru.step_hidden(&h, &st, &inputs[d]);
            taken_q.push(self.q_of_state(&h));
            placed[d] = true;
            if t + 1 == k {
                break;
            }
            st = self.gru.state_terms(&h);
            let score = |a: usize| self.q_of_state(&self.gru.step_hidden(&h, &st, &inputs[a]));
            let scored = match next {
                NextActions::All => (0..n).filter(|&a| !placed[a]).map(|a| (a, score(a))).collect(),
                NextActions::Only(choices) => match choices[t] {
                    Some(a) if a < n && !placed[a] => vec![(a, score(a))],
                    other => {
                        return Err(Error::InvalidAction(format!(
                            "step {t}: next action {other:?} is not legal"
                        )))
                    }
                },
            };
            next_q.push(scored);
        }
        Ok(Replay { taken_q, next_q })
    }

    fn loss_and_grad(&self, query: &Query, episode: &Episode, targets: &[f64], grads: &mut Self) -> Result<f64> {
        self.check_query(query)?;
        let k = episode.k();
        check_episode(query, episode, k, false)?;
        if targets.len() != k {
            return Err(Error::shape("targets", k, targets.len()));
        }
        let emb = embed_all(&self.embed, query)?;

        let mut h = vec![0.0; self.hidden()];
        let mut caches = Vec::with_capacity(k);
        let mut head_pre = Vec::with_capacity(k);
        let mut dq = Vec::with_capacity(k);
        let mut loss = 0.0;
        for (t, &d) in episode.doc_actions.iter().enumerate() {
            let st = self.gru.state_terms(&h);
            let cache = self.gru.step(&h, &emb.out[d], &st, &self.gru.input_terms(&emb.out[d]));
            let pre = self.head_pre(&cache.h);
            let q = head_value(&pre, &self.v_q, self.u_q);
            let err = q - targets[t];
            loss += err * err;
            dq.push(2.0 * err);
            h = cache.h.clone();
            caches.push(cache);
            head_pre.push(pre);
        }

        let mut dh = vec![0.0; self.hidden()];
        for t in (0..k).rev() {
            let (du, dpre) = head_backward(&head_pre[t], &self.v_q, dq[t], &mut grads.v_q);
            grads.u_q += du;
            grads.head.w.add_outer(&dpre, &caches[t].h);
            crate::neural::tensor::add_assign(&mut grads.head.b, &dpre);
            self.head.w.tmatvec_acc(&dpre, &mut dh);

            let (dh_prev, de) = crate::neural::gru::gru_backward_acc(&self.gru, &caches[t], &dh, &mut grads.gru)?;
            let d = episode.doc_actions[t];
            embed_backward(&emb.pre[d], &query.candidates[d].features, &de, &mut grads.embed);
            dh = dh_prev;
        }
        Ok(loss)
    }
}
