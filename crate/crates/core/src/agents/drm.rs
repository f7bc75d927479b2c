use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_episode, coin, embed_all, embed_backward, head_backward, head_value, Agent, AgentDims, AgentKind,
    AgentManifest, Exploration, NextActions, Replay,
};
use crate::dataset::Query;
use crate::error::{Error, Result};
use crate::impl_parameters;
use crate::mdp::{DrmAction, DrmState, Environment, Episode, EpisodeKind};
use crate::neural::{glorot_uniform, DenseParams, GruParams, Matrix};

/// Double-Rank Model.
///
/// Document head: `Q(s, d) = v_qᵀ ReLU(W_q [h, d̂] + b_q) + u_q`.
/// Position head: `Q(s, p) = v_pᵀ ReLU(W_p [h, d̂] + b_p) + u_p` with a
/// separate `v_p` row and `u_p` entry per physical position.
/// The hidden state advances once per placement on `[d̂, p]`, `p` being the
/// raw 1-based position number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrmAgent {
    pub embed: DenseParams,
    pub gru: GruParams,
    pub doc_head: DenseParams,
    pub v_q: Vec<f64>,
    pub u_q: f64,
    pub pos_head: DenseParams,
    /// Row `p - 1` belongs to physical position `p`.
    pub v_p: Matrix,
    pub u_p: Vec<f64>,
}

impl_parameters!(DrmAgent { embed, gru, doc_head, v_q, u_q, pos_head, v_p, u_p });

/// Head pre-activation `b + W[:, ..H] h + W[:, H..] d̂`, split so the
/// document part can be cached per episode.
struct SplitHead<'a>(&'a DenseParams, usize);

impl SplitHead<'_> {
    fn state_part(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.0.b.clone();
        self.0.w.matvec_cols_acc(0, h, &mut out);
        out
    }

    fn doc_part(&self, e: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.0.n_out()];
        self.0.w.matvec_cols_acc(self.1, e, &mut out);
        out
    }

    fn combine(state: &[f64], doc: &[f64]) -> Vec<f64> {
        state.iter().zip(doc).map(|(a, b)| a + b).collect()
    }

    fn pre(&self, h: &[f64], e: &[f64]) -> Vec<f64> {
        Self::combine(&self.state_part(h), &self.doc_part(e))
    }

    /// Accumulates weight gradients for `dpre`; adds into `dh` and `de`.
    fn backward(&self, h: &[f64], e: &[f64], dpre: &[f64], grads: &mut DenseParams, dh: &mut [f64], de: &mut [f64]) {
        grads.w.add_outer_cols(0, dpre, h);
        grads.w.add_outer_cols(self.1, dpre, e);
        crate::neural::tensor::add_assign(&mut grads.b, dpre);
        self.0.w.tmatvec_cols_acc(0, dpre, dh);
        self.0.w.tmatvec_cols_acc(self.1, dpre, de);
    }
}

pub fn drm_doc_q(params: &DrmAgent, h_prev: &[f64], doc_embedding: &[f64]) -> Result<f64> {
    params.check_head_inputs(h_prev, doc_embedding)?;
    let pre = params.doc_split().pre(h_prev, doc_embedding);
    Ok(head_value(&pre, &params.v_q, params.u_q))
}

/// Scores of the `available` positions (1-based) for placing the document
/// with embedding `doc_embedding`.
pub fn drm_pos_q(
    params: &DrmAgent,
    h_prev: &[f64],
    doc_embedding: &[f64],
    available: &[usize],
) -> Result<Vec<(usize, f64)>> {
    params.check_head_inputs(h_prev, doc_embedding)?;
    if available.is_empty() {
        return Err(Error::InvalidAction("no available positions".into()));
    }
    let k = params.k();
    if let Some(&p) = available.iter().find(|&&p| p == 0 || p > k) {
        return Err(Error::InvalidAction(format!("position {p} outside 1..={k}")));
    }
    let trunk = params.pos_split().pre(h_prev, doc_embedding);
    Ok(params.score_positions(&trunk, available))
}

impl DrmAgent {
    pub fn k(&self) -> usize {
        self.u_p.len()
    }

    fn hidden(&self) -> usize {
        self.gru.n_h()
    }

    fn doc_split(&self) -> SplitHead<'_> {
        SplitHead(&self.doc_head, self.hidden())
    }

    fn pos_split(&self) -> SplitHead<'_> {
        SplitHead(&self.pos_head, self.hidden())
    }

    fn position_value(&self, trunk_pre: &[f64], p: usize) -> f64 {
        head_value(trunk_pre, self.v_p.row(p - 1), self.u_p[p - 1])
    }

    fn score_positions(&self, trunk_pre: &[f64], available: &[usize]) -> Vec<(usize, f64)> {
        available.iter().map(|&p| (p, self.position_value(trunk_pre, p))).collect()
    }

    fn gru_input(e: &[f64], position: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(e.len() + 1);
        x.extend_from_slice(e);
        x.push(position as f64);
        x
    }

    fn advance(&self, h: &[f64], e: &[f64], position: usize) -> Vec<f64> {
        let x = Self::gru_input(e, position);
        self.gru.step_hidden(h, &self.gru.state_terms(h), &self.gru.input_terms(&x))
    }

    fn check_head_inputs(&self, h: &[f64], e: &[f64]) -> Result<()> {
        if h.len() != self.hidden() {
            return Err(Error::shape("DRM hidden state", self.hidden(), h.len()));
        }
        if e.len() != self.embed.n_out() {
            return Err(Error::shape("DRM document embedding", self.embed.n_out(), e.len()));
        }
        Ok(())
    }

    fn check_query(&self, query: &Query, k: usize) -> Result<()> {
        if k != self.k() {
            return Err(Error::Config(format!(
                "DRM agent built for k = {}, environment has k = {k}",
                self.k()
            )));
        }
        let f = self.embed.n_in();
        for d in &query.candidates {
            if d.features.len() != f {
                return Err(Error::shape("document features", f, d.features.len()));
            }
        }
        Ok(())
    }
}

impl Agent for DrmAgent {
    const KIND: AgentKind = AgentKind::Drm;

    fn init<R: Rng + ?Sized>(m: &AgentManifest, rng: &mut R) -> Result<Self> {
        let AgentDims { embed, hidden, head } = m.dims;
        Ok(DrmAgent {
            embed: DenseParams::init(m.feature_count, embed, rng),
            gru: GruParams::init(embed + 1, hidden, m.gru_candidate_input, rng),
            doc_head: DenseParams::init(hidden + embed, head, rng),
            v_q: glorot_uniform(1, head, rng).data().to_vec(),
            u_q: 0.0,
            pos_head: DenseParams::init(hidden + embed, head, rng),
            v_p: glorot_uniform(m.k, head, rng),
            u_p: vec![0.0; m.k],
        })
    }

    fn zeros(m: &AgentManifest) -> Result<Self> {
        let AgentDims { embed, hidden, head } = m.dims;
        Ok(DrmAgent {
            embed: DenseParams::zeros(m.feature_count, embed),
            gru: GruParams::zeros(embed + 1, hidden, m.gru_candidate_input),
            doc_head: DenseParams::zeros(hidden + embed, head),
            v_q: vec![0.0; head],
            u_q: 0.0,
            pos_head: DenseParams::zeros(hidden + embed, head),
            v_p: Matrix::zeros(m.k, head),
            u_p: vec![0.0; m.k],
        })
    }

    fn manifest(&self, k: usize) -> AgentManifest {
        AgentManifest {
            kind: AgentKind::Drm,
            k,
            feature_count: self.embed.n_in(),
            dims: AgentDims {
                embed: self.embed.n_out(),
                hidden: self.hidden(),
                head: self.doc_head.n_out(),
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
        self.check_query(query, env.k())?;
        let mut state = DrmState::new(query.candidates.len(), env.k())?;
        let emb = embed_all(&self.embed, query)?;
        let doc_split = self.doc_split();
        let doc_parts: Vec<Vec<f64>> = emb.out.iter().map(|e| doc_split.doc_part(e)).collect();
        let mut h = vec![0.0; self.hidden()];
        while !state.is_terminal() {
            let docs = state.available_docs();
            let d = if coin(explore.doc, rng) {
                docs[rng.gen_range(0..docs.len())]
            } else {
                let sp = doc_split.state_part(&h);
                let scored: Vec<(usize, f64)> = docs
                    .iter()
                    .map(|&d| (d, head_value(&SplitHead::combine(&sp, &doc_parts[d]), &self.v_q, self.u_q)))
                    .collect();
                super::argmax(&scored).expect("documents remain").0
            };
            state.apply(DrmAction::Doc(d))?;

            let positions = state.available_positions();
            let p = if coin(explore.pos, rng) {
                positions[rng.gen_range(0..positions.len())]
            } else {
                let trunk = self.pos_split().pre(&h, &emb.out[d]);
                super::argmax(&self.score_positions(&trunk, &positions))
                    .expect("positions remain")
                    .0
            };
            state.apply(DrmAction::Pos(p))?;
            h = self.advance(&h, &emb.out[d], p);
        }
        env.finish_drm(query, &state)
    }

    fn replay_forward(&self, query: &Query, episode: &Episode, next: NextActions<'_>) -> Result<Replay> {
        let k = episode.k();
        self.check_query(query, k)?;
        if episode.kind != EpisodeKind::Drm {
            return Err(Error::Invalid("DRM agent cannot replay a baseline episode".into()));
        }
        check_episode(query, episode, k, true)?;
        if let NextActions::Only(choices) = next {
            if choices.len() != 2 * k {
                return Err(Error::shape("replay choices", 2 * k, choices.len()));
            }
        }
        let emb = embed_all(&self.embed, query)?;
        let doc_split = self.doc_split();
        let n = query.candidates.len();
        let mut used_doc = vec![false; n];
        let mut used_pos = vec![false; k + 1];
        let mut h = vec![0.0; self.hidden()];
        let mut taken_q = Vec::with_capacity(2 * k);
        let mut next_q = Vec::with_capacity(2 * k - 1);

        let pick = |t: usize, legal: Vec<usize>| -> Result<Vec<usize>> {
            match next {
                NextActions::All => Ok(legal),
                NextActions::Only(choices) => match choices[t] {
                    Some(a) if legal.contains(&a) => Ok(vec![a]),
                    other => Err(Error::InvalidAction(format!(
                        "step {t}: next action {other:?} is not legal"
                    ))),
                },
            }
        };

        for j in 0..k {
            let (d, p) = (episode.doc_actions[j], episode.pos_actions[j]);
            let sp = doc_split.state_part(&h);
            taken_q.push(head_value(
                &SplitHead::combine(&sp, &doc_split.doc_part(&emb.out[d])),
                &self.v_q,
                self.u_q,
            ));
            used_doc[d] = true;

            // next state expects a position for d
            let trunk = self.pos_split().pre(&h, &emb.out[d]);
            let legal: Vec<usize> = (1..=k).filter(|&q| !used_pos[q]).collect();
            next_q.push(self.score_positions(&trunk, &pick(2 * j, legal)?));

            taken_q.push(self.position_value(&trunk, p));
            used_pos[p] = true;
            h = self.advance(&h, &emb.out[d], p);

            if j + 1 < k {
                let sp = doc_split.state_part(&h);
                let legal: Vec<usize> = (0..n).filter(|&a| !used_doc[a]).collect();
                let scored = pick(2 * j + 1, legal)?
                    .into_iter()
                    .map(|a| {
                        let pre = SplitHead::combine(&sp, &doc_split.doc_part(&emb.out[a]));
                        (a, head_value(&pre, &self.v_q, self.u_q))
                    })
                    .collect();
                next_q.push(scored);
            }
        }
        Ok(Replay { taken_q, next_q })
    }

    fn loss_and_grad(&self, query: &Query, episode: &Episode, targets: &[f64], grads: &mut Self) -> Result<f64> {
        let k = episode.k();
        self.check_query(query, k)?;
        check_episode(query, episode, k, true)?;
        if targets.len() != 2 * k {
            return Err(Error::shape("targets", 2 * k, targets.len()));
        }
        let emb = embed_all(&self.embed, query)?;
        let (doc_split, pos_split) = (self.doc_split(), self.pos_split());
        let hidden = self.hidden();
        let embed = self.embed.n_out();

        struct Placement {
            h: Vec<f64>,
            doc_pre: Vec<f64>,
            pos_pre: Vec<f64>,
            gru: crate::neural::GruCache,
            dq_doc: f64,
            dq_pos: f64,
        }

        let mut h = vec![0.0; hidden];
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(k);
        for j in 0..k {
            let (d, p) = (episode.doc_actions[j], episode.pos_actions[j]);
            let e = &emb.out[d];
            let doc_pre = SplitHead::combine(&doc_split.state_part(&h), &doc_split.doc_part(e));
            let q_doc = head_value(&doc_pre, &self.v_q, self.u_q);
            let pos_pre = pos_split.pre(&h, e);
            let q_pos = self.position_value(&pos_pre, p);
            let (err_d, err_p) = (q_doc - targets[2 * j], q_pos - targets[2 * j + 1]);
            loss += err_d * err_d;
            loss += err_p * err_p;

            let x = Self::gru_input(e, p);
            let cache = self
                .gru
                .step(&h, &x, &self.gru.state_terms(&h), &self.gru.input_terms(&x));
            let h_next = cache.h.clone();
            steps.push(Placement {
                h,
                doc_pre,
                pos_pre,
                gru: cache,
                dq_doc: 2.0 * err_d,
                dq_pos: 2.0 * err_p,
            });
            h = h_next;
        }

        // dh carries dL/dh_{j+1} into placement j.
        let mut dh = vec![0.0; hidden];
        for j in (0..k).rev() {
            let s = &steps[j];
            let (d, p) = (episode.doc_actions[j], episode.pos_actions[j]);
            let e = &emb.out[d];

            let (dh_prev, dx) = crate::neural::gru::gru_backward_acc(&self.gru, &s.gru, &dh, &mut grads.gru)?;
            let mut dh_j = dh_prev;
            let mut de = dx[..embed].to_vec();

            let (du, dpre) = head_backward(&s.doc_pre, &self.v_q, s.dq_doc, &mut grads.v_q);
            grads.u_q += du;
            doc_split.backward(&s.h, e, &dpre, &mut grads.doc_head, &mut dh_j, &mut de);

            let mut dv = vec![0.0; self.v_p.cols()];
            let (du, dpre) = head_backward(&s.pos_pre, self.v_p.row(p - 1), s.dq_pos, &mut dv);
            grads.u_p[p - 1] += du;
            let row = &mut grads.v_p.data_mut()[(p - 1) * dv.len()..p * dv.len()];
            crate::neural::tensor::add_assign(row, &dv);
            pos_split.backward(&s.h, e, &dpre, &mut grads.pos_head, &mut dh_j, &mut de);

            embed_backward(&emb.pre[d], &query.candidates[d].features, &de, &mut grads.embed);
            dh = dh_j;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::argmax;
    use crate::dataset::Document;
    use crate::mdp::{Bias, GainFunction, GainVariant, RewardLevel};
    use crate::neural::gru::gru_step_count;
    use crate::neural::{CandidateInput, Parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manifest(f: usize, k: usize) -> AgentManifest {
        AgentManifest {
            kind: AgentKind::Drm,
            k,
            feature_count: f,
            dims: AgentDims {
                embed: 4,
                hidden: 5,
                head: 3,
            },
            gru_candidate_input: CandidateInput::AsPrinted,
        }
    }

    fn env(k: usize) -> Environment {
        Environment::new(
            Bias::Center.order(k).unwrap(),
            GainFunction::new(GainVariant::PaperLiteral, 4),
            RewardLevel::Document,
        )
    }

    fn random_query(n: usize, f: usize, seed: u64) -> Query {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Query {
            id: "q".into(),
            candidates: (0..n)
                .map(|_| Document {
                    features: (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    relevance: rng.gen_range(0..=4),
                })
                .collect(),
        }
    }

    fn random_agent(k: usize, seed: u64) -> DrmAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DrmAgent::init(&manifest(3, k), &mut rng).unwrap();
        for b in [&mut a.embed.b, &mut a.doc_head.b, &mut a.pos_head.b, &mut a.u_p, &mut a.gru.b_h] {
            for v in b.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        a.u_q = 0.2;
        a
    }

    #[test]
    fn zero_doc_head_scores_zero() {
        let a = DrmAgent::zeros(&manifest(3, 3)).unwrap();
        assert_eq!(drm_doc_q(&a, &[0.3; 5], &[1.0; 4]).unwrap(), 0.0);
        assert!(drm_doc_q(&a, &[0.3; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn doc_head_ignores_position_weights() {
        let mut a = random_agent(3, 1);
        let (h, e) = ([0.1, -0.2, 0.3, 0.4, 0.0], [0.5, 0.0, 0.7, 1.0]);
        let before = drm_doc_q(&a, &h, &e).unwrap();
        a.pos_head.w.set(0, 0, 42.0);
        a.v_p.set(1, 1, -3.0);
        assert_eq!(drm_doc_q(&a, &h, &e).unwrap(), before);
    }

    #[test]
    fn heads_match_straight_line() {
        let a = random_agent(4, 2);
        let (h, e) = ([0.1, -0.2, 0.3, 0.4, 0.0], [0.5, 0.0, 0.7, 1.0]);
        let concat: Vec<f64> = h.iter().chain(&e).copied().collect();
        let eval = |head: &DenseParams, v: &[f64], u: f64| {
            let mut s = u;
            for i in 0..head.n_out() {
                let mut pre = head.b[i];
                for (j, x) in concat.iter().enumerate() {
                    pre += head.w.get(i, j) * x;
                }
                s += v[i] * pre.max(0.0);
            }
            s
        };
        let q = drm_doc_q(&a, &h, &e).unwrap();
        assert!((q - eval(&a.doc_head, &a.v_q, a.u_q)).abs() < 1e-12);
        for (p, qp) in drm_pos_q(&a, &h, &e, &[1, 2, 3, 4]).unwrap() {
            assert!((qp - eval(&a.pos_head, a.v_p.row(p - 1), a.u_p[p - 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn position_scores_respect_bias_and_mask() {
        let mut a = DrmAgent::zeros(&manifest(3, 4)).unwrap();
        a.u_p = vec![1.0, 2.0, 3.0, 4.0];
        let scores = drm_pos_q(&a, &[0.0; 5], &[0.0; 4], &[1, 2, 3, 4]).unwrap();
        assert_eq!(argmax(&scores).unwrap().0, 4);
        let masked = drm_pos_q(&a, &[0.0; 5], &[0.0; 4], &[1, 3]).unwrap();
        assert_eq!(argmax(&masked).unwrap().0, 3);
        assert!(drm_pos_q(&a, &[0.0; 5], &[0.0; 4], &[]).is_err());
        assert!(drm_pos_q(&a, &[0.0; 5], &[0.0; 4], &[5]).is_err());
    }

    #[test]
    fn greedy_position_preference() {
        let mut a = DrmAgent::zeros(&manifest(3, 5)).unwrap();
        a.u_p[4] = 1.0;
        let q = random_query(7, 3, 3);
        let ep = a.greedy_episode(&q, &env(5)).unwrap();
        assert_eq!(ep.pos_actions[0], 5);
        assert_eq!(ep.pos_actions, [5, 1, 2, 3, 4]);
        assert_eq!(ep.doc_actions, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn document_exploration_leaves_positions_greedy() {
        let a = random_agent(4, 7);
        let q = random_query(9, 3, 4);
        let explore = Exploration { doc: 1.0, pos: 0.0 };
        let greedy_positions = |seed| {
            let ep = a.rollout(&q, explore, &mut ChaCha8Rng::seed_from_u64(seed), &env(4)).unwrap();
            let mut h = vec![0.0; 5];
            let mut used = vec![];
            for (&d, &p) in ep.doc_actions.iter().zip(&ep.pos_actions) {
                let e = super::super::embed_document(&a.embed, &q.candidates[d].features).unwrap();
                let avail: Vec<usize> = (1..=4).filter(|x| !used.contains(x)).collect();
                let best = argmax(&drm_pos_q(&a, &h, &e, &avail).unwrap()).unwrap().0;
                assert_eq!(p, best);
                used.push(p);
                h = a.advance(&h, &e, p);
            }
            ep
        };
        let (a1, a2) = (greedy_positions(1), greedy_positions(2));
        assert_ne!(a1.doc_actions, a2.doc_actions);
    }

    #[test]
    fn one_gru_step_per_placement() {
        let a = random_agent(4, 3);
        let q = random_query(12, 3, 8);
        let before = gru_step_count();
        a.greedy_episode(&q, &env(4)).unwrap();
        assert_eq!(gru_step_count() - before, 4);
    }

    #[test]
    fn replay_reproduces_greedy_choices() {
        let a = random_agent(4, 5);
        let q = random_query(8, 3, 6);
        let ep = a.greedy_episode(&q, &env(4)).unwrap();
        let r = a.replay_forward(&q, &ep, NextActions::All).unwrap();
        assert_eq!(r.taken_q.len(), 8);
        assert_eq!(r.next_q.len(), 7);
        for t in 0..7 {
            let (best, q_best) = argmax(&r.next_q[t]).unwrap();
            let taken = if t % 2 == 0 { ep.pos_actions[t / 2] } else { ep.doc_actions[t / 2 + 1] };
            assert_eq!(best, taken, "step {t}");
            assert_eq!(q_best, r.taken_q[t + 1]);
        }
        let r2 = a.replay_forward(&q, &ep, NextActions::All).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let a = random_agent(3, 20 + seed);
            let q = random_query(5, 3, 30 + seed);
            let ep = a
                .rollout(&q, Exploration::uniform(1.0), &mut ChaCha8Rng::seed_from_u64(seed), &env(3))
                .unwrap();
            let targets = [0.5, -1.0, 2.0, 0.0, 1.5, -0.25];
            let mut g = a.zeros_like();
            a.loss_and_grad(&q, &ep, &targets, &mut g).unwrap();
            let f = |p: &DrmAgent| {
                let mut scratch = p.zeros_like();
                p.loss_and_grad(&q, &ep, &targets, &mut scratch).unwrap()
            };
            let r = crate::neural::finite_difference_check(f, &a, &g, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
