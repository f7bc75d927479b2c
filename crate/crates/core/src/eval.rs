//! P-NDCG, its rearrangement-optimal normalizer, label histograms and the
//! Welch t-test used to compare agents.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::Agent;
use crate::dataset::Query;
use crate::error::{Error, Result};
use crate::mdp::{discount, DisplayOrder, DrmAction, DrmState, Environment, Episode, GainFunction};

/// Largest achievable reward: the i-th largest gain goes to the position of
/// preference rank i.
pub fn ideal_serp_reward(query: &Query, order: &DisplayOrder, gf: &GainFunction, k: usize) -> Result<f64> {
    check_instance(query, order, k)?;
    let mut gains = query
        .candidates
        .iter()
        .map(|d| gf.gain(d.relevance))
        .collect::<Result<Vec<_>>>()?;
    gains.sort_by(|a, b| b.total_cmp(a));
    let mut total = 0.0;
    for (i, g) in gains.iter().take(k).enumerate() {
        total += g / discount(i + 1, k)?;
    }
    Ok(total)
}

/// Exhaustive maximum over every ordered assignment of `k` candidates to
/// the `k` positions. Limited to `n ≤ 8`, `k ≤ 4`.
pub fn brute_force_ideal(query: &Query, order: &DisplayOrder, gf: &GainFunction, k: usize) -> Result<f64> {
    check_instance(query, order, k)?;
    let n = query.candidates.len();
    if n > 8 || k > 4 {
        return Err(Error::Invalid(format!("instance too large to enumerate (n = {n}, k = {k})")));
    }
    let gains = query
        .candidates
        .iter()
        .map(|d| gf.gain(d.relevance))
        .collect::<Result<Vec<_>>>()?;
    let discounts = (1..=k)
        .map(|p| discount(order.pref_rank(p)?, k))
        .collect::<Result<Vec<_>>>()?;

    fn search(pos: usize, used: &mut [bool], gains: &[f64], discounts: &[f64]) -> f64 {
        if pos == discounts.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for d in 0..gains.len() {
            if used[d] {
                continue;
            }
            used[d] = true;
            let v = gains[d] / discounts[pos] + search(pos + 1, used, gains, discounts);
            used[d] = false;
            best = best.max(v);
        }
        best
    }
    Ok(search(0, &mut vec![false; n], &gains, &discounts))
}

fn check_instance(query: &Query, order: &DisplayOrder, k: usize) -> Result<()> {
    if k == 0 || order.k() != k {
        return Err(Error::Invalid(format!("display order has {} positions, k = {k}", order.k())));
    }
    if query.candidates.len() < k {
        return Err(Error::Invalid(format!(
            "query {} has {} candidates, fewer than k = {k}",
            query.id,
            query.candidates.len()
        )));
    }
    Ok(())
}

pub fn p_ndcg(achieved: f64, ideal: f64) -> Result<f64> {
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(ideal > 0.0) {
        return Err(Error::Invalid(format!("ideal reward must be positive, got {ideal}")));
    }
    Ok(achieved / ideal)
}

/// Anything that can build a SERP for a query without exploring.
pub trait Policy: Sync {
    fn serve(&self, query: &Query, env: &Environment) -> Result<Episode>;
}

impl<A: Agent> Policy for A {
    fn serve(&self, query: &Query, env: &Environment) -> Result<Episode> {
        self.greedy_episode(query, env)
    }
}

/// Knows the labels and the display order: puts the i-th most relevant
/// candidate at the i-th most preferred position.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn serve(&self, query: &Query, env: &Environment) -> Result<Episode> {
        let k = env.k();
        let mut docs: Vec<usize> = (0..query.candidates.len()).collect();
        docs.sort_by(|&a, &b| query.candidates[b].relevance.cmp(&query.candidates[a].relevance));
        let mut state = DrmState::new(query.candidates.len(), k)?;
        for (d, p) in docs.into_iter().zip(env.order.positions_by_preference()) {
            state.apply(DrmAction::Doc(d))?;
            state.apply(DrmAction::Pos(p))?;
        }
        env.finish_drm(query, &state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub p_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_p_ndcg: f64,
    pub per_query: Vec<QueryScore>,
    /// Mean label shown at physical position `p_{i+1}`.
    pub per_position: Vec<f64>,
    /// Mean label of the document chosen at placement step `i + 1`.
    pub per_timestep: Vec<f64>,
    pub query_count: usize,
    /// Queries left out because their ideal reward is zero.
    pub excluded: Vec<String>,
}

struct Scored {
    p_ndcg: Option<f64>,
    serp_labels: Vec<u8>,
    step_labels: Vec<u8>,
}

/// Greedy evaluation over `queries`. Queries are scored in parallel and
/// reduced in input order.
pub fn evaluate_policy<P: Policy + ?Sized>(policy: &P, queries: &[Query], env: &Environment) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty partition".into()));
    }
    let k = env.k();
    let scored: Vec<Result<Scored>> = queries
        .par_iter()
        .map(|q| {
            let ep = policy.serve(q, env)?;
            if ep.k() != k {
                return Err(Error::Invalid(format!("policy placed {} documents, k = {k}", ep.k())));
            }
            let ideal = ideal_serp_reward(q, &env.order, &env.gain, k)?;
            let p_ndcg = if ideal > 0.0 { Some(p_ndcg(ep.total_reward, ideal)?) } else { None };
            Ok(Scored {
                p_ndcg,
                serp_labels: ep.serp().iter().map(|&d| q.candidates[d].relevance).collect(),
                step_labels: ep.doc_actions.iter().map(|&d| q.candidates[d].relevance).collect(),
            })
        })
        .collect();

    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    let mut pos_sum = vec![0.0; k];
    let mut step_sum = vec![0.0; k];
    for (q, s) in queries.iter().zip(scored) {
        let s = s?;
        let Some(v) = s.p_ndcg else {
            excluded.push(q.id.clone());
            continue;
        };
        per_query.push(QueryScore {
            query_id: q.id.clone(),
            p_ndcg: v,
        });
        for i in 0..k {
            pos_sum[i] += f64::from(s.serp_labels[i]);
            step_sum[i] += f64::from(s.step_labels[i]);
        }
    }
    let count = per_query.len();
    if count == 0 {
        return Err(Error::Invalid("every query has zero ideal reward".into()));
    }
    let n = count as f64;
    Ok(EvalReport {
        mean_p_ndcg: per_query.iter().map(|s| s.p_ndcg).sum::<f64>() / n,
        per_query,
        per_position: pos_sum.into_iter().map(|s| s / n).collect(),
        per_timestep: step_sum.into_iter().map(|s| s / n).collect(),
        query_count: count,
        excluded,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `query_id,p_ndcg` rows.
    pub fn write_query_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query_id,p_ndcg\n");
        for s in &self.per_query {
            out.push_str(&format!("{},{}\n", s.query_id, s.p_ndcg));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `series,position_or_step,mean_label,count` rows for both histograms.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("series,position_or_step,mean_label,count\n");
        for (series, values) in [("per_position", &self.per_position), ("per_timestep", &self.per_timestep)] {
            for (i, v) in values.iter().enumerate() {
                out.push_str(&format!("{series},{},{v},{}\n", i + 1, self.query_count));
            }
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Sample mean, standard deviation (n − 1) and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn dispersion(sample: &[f64]) -> Dispersion {
    let n = sample.len();
    let mean = sample.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Dispersion {
        mean,
        std,
        stderr: std / (n as f64).sqrt(),
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// One-tailed p-value for `mean(a) > mean(b)`.
    pub p: f64,
}

pub fn welch_one_tailed_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (da, db) = (dispersion(a), dispersion(b));
    let (va, vb) = (da.std.powi(2) / a.len() as f64, db.std.powi(2) / b.len() as f64);
    let se2 = va + vb;
    let diff = da.mean - db.mean;
    if se2 == 0.0 {
        let (t, p) = match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Ok(WelchTest { t, df: f64::NAN, p });
    }
    let t = diff / se2.sqrt();
    let df = se2.powi(2) / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Invalid(format!("t distribution: {e}")))?;
    Ok(WelchTest { t, df, p: dist.sf(t) })
}
