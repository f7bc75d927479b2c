//! Double DQN with episode replay, a periodically refreshed label network
//! and early stopping on validation P-NDCG.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{argmax, Agent, AgentManifest, EpsilonSchedule, Exploration, NextActions};
use crate::dataset::{sample_query_index, Dataset, Query};
use crate::error::{Error, Result};
use crate::eval::evaluate_policy;
use crate::mdp::{Environment, Episode};
use crate::neural::{AdamConfig, AdamState};

/// Bounded FIFO store; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `n` distinct entries drawn uniformly without replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        if n > self.items.len() {
            return Err(Error::Invalid(format!(
                "cannot sample {n} episodes from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

pub fn push_episode<T>(buffer: &mut ReplayBuffer<T>, item: T) {
    buffer.push(item);
}

/// Train parameters θ_T and the label copy θ_L used for bootstrapping.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair<A> {
    pub train: A,
    pub label: A,
}

impl<A: Clone> NetworkPair<A> {
    pub fn new(params: A) -> Self {
        NetworkPair {
            label: params.clone(),
            train: params,
        }
    }

    pub fn transfer(&mut self) {
        self.label = self.train.clone();
    }
}

/// `r + γ Q_L(a′)` where `a′` maximizes the train network's scores.
/// `label_q` looks up the label network's value for an action.
pub fn double_dqn_target(
    reward: f64,
    gamma: f64,
    train_next: &[(usize, f64)],
    label_q: impl FnOnce(usize) -> Result<f64>,
) -> Result<f64> {
    let (a, _) = argmax(train_next).ok_or_else(|| Error::InvalidAction("next state has no legal action".into()))?;
    Ok(reward + gamma * label_q(a)?)
}

/// Regression targets for every step of `episode`. The last step is
/// terminal and targets its reward alone.
pub fn compute_targets<A: Agent>(query: &Query, episode: &Episode, train: &A, label: &A, gamma: f64) -> Result<Vec<f64>> {
    let steps = episode.len();
    let scored = train.replay_forward(query, episode, NextActions::All)?;
    let mut choices = Vec::with_capacity(steps);
    for next in &scored.next_q {
        choices.push(Some(argmax(next).ok_or_else(|| Error::InvalidAction("empty next state".into()))?.0));
    }
    choices.push(None);
    let bootstrap = label.replay_forward(query, episode, NextActions::Only(&choices))?;
    let mut targets = Vec::with_capacity(steps);
    for t in 0..steps {
        let r = episode.rewards[t];
        if t + 1 == steps {
            targets.push(r);
        } else {
            let label_next = &bootstrap.next_q[t];
            targets.push(double_dqn_target(r, gamma, &scored.next_q[t], |a| {
                label_next
                    .iter()
                    .find(|(b, _)| *b == a)
                    .map(|&(_, q)| q)
                    .ok_or_else(|| Error::InvalidAction(format!("label network did not score action {a}")))
            })?);
        }
    }
    Ok(targets)
}

/// Targets `r + γ max_a Q(s′, a)` from a single network.
pub fn vanilla_dqn_targets<A: Agent>(query: &Query, episode: &Episode, params: &A, gamma: f64) -> Result<Vec<f64>> {
    let scored = params.replay_forward(query, episode, NextActions::All)?;
    let steps = episode.len();
    (0..steps)
        .map(|t| {
            let r = episode.rewards[t];
            if t + 1 == steps {
                return Ok(r);
            }
            let (_, q) = argmax(&scored.next_q[t]).ok_or_else(|| Error::InvalidAction("empty next state".into()))?;
            Ok(r + gamma * q)
        })
        .collect()
}

/// Summed squared TD error over the batch and its gradient. Episodes are
/// processed in parallel and reduced in batch order.
pub fn batch_loss_and_grad<A: Agent>(batch: &[(&Query, &Episode)], pair: &NetworkPair<A>, gamma: f64) -> Result<(f64, A)> {
    let parts: Vec<Result<(f64, A)>> = batch
        .par_iter()
        .map(|(q, ep)| {
            let targets = compute_targets(q, ep, &pair.train, &pair.label, gamma)?;
            let mut g = pair.train.zeros_like();
            let loss = pair.train.loss_and_grad(q, ep, &targets, &mut g)?;
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = pair.train.zeros_like();
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        grads.axpy(1.0, &g);
    }
    Ok((total, grads))
}

/// One Adam update of θ_T; θ_L is left as is.
pub fn train_step<A: Agent>(
    batch: &[(&Query, &Episode)],
    pair: &mut NetworkPair<A>,
    adam: &mut AdamState,
    gamma: f64,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grad(batch, pair, gamma)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {loss} over a batch of {} episodes",
            batch.len()
        )));
    }
    adam.update(&mut pair.train, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Replay capacity `M` in episodes.
    pub replay_capacity: usize,
    /// Gradient steps between label-network transfers.
    pub transfer_every: u64,
    pub batch_episodes: usize,
    /// Environment episodes.
    pub max_steps: u64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_queries: usize,
    /// A log row is written every `log_every` steps and at every evaluation
    /// or transfer.
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 1e-4,
            replay_capacity: 5000,
            transfer_every: 5000,
            batch_episodes: 64,
            max_steps: 200_000,
            gamma: 1.0,
            epsilon: EpsilonSchedule::default(),
            eval_every: 2500,
            patience: 10,
            eval_queries: 500,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.replay_capacity == 0 || self.batch_episodes == 0 {
            return bad("replay_capacity and batch_episodes must be positive");
        }
        if self.batch_episodes > self.replay_capacity {
            return bad("batch_episodes cannot exceed replay_capacity");
        }
        if self.transfer_every == 0 || self.eval_every == 0 || self.log_every == 0 {
            return bad("transfer_every, eval_every and log_every must be positive");
        }
        if self.eval_queries == 0 || self.patience == 0 {
            return bad("eval_queries and patience must be positive");
        }
        if self.gamma != 1.0 {
            return bad("gamma is fixed at 1.0");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epsilon: f64,
    /// Loss of this step's update; `None` during warm-up.
    pub train_loss: Option<f64>,
    pub validation_p_ndcg: Option<f64>,
    pub transfer: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// Gradient-step counts at which θ_L was refreshed.
    pub transfers: Vec<u64>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epsilon,train_loss,validation_p_ndcg,transfer_flag\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                r.epsilon,
                opt(r.train_loss),
                opt(r.validation_p_ndcg),
                u8::from(r.transfer)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<A> {
    /// θ_T at the best validation score.
    pub best: A,
    pub best_step: u64,
    pub best_validation: Option<f64>,
    pub last: A,
    pub steps_run: u64,
    pub gradient_steps: u64,
    pub log: TrainingLog,
}

/// Training state; the log stays readable if [`Trainer::run`] fails.
pub struct Trainer<'a, A: Agent> {
    dataset: &'a Dataset,
    env: &'a Environment,
    config: TrainerConfig,
    pair: NetworkPair<A>,
    adam: AdamState,
    buffer: ReplayBuffer<(usize, Episode)>,
    rng: ChaCha8Rng,
    log: TrainingLog,
    best: A,
    best_step: u64,
    best_validation: Option<f64>,
    step: u64,
    gradient_steps: u64,
}

impl<'a, A: Agent> Trainer<'a, A> {
    /// Initializes θ_T from `config.seed` and θ_L as its copy.
    pub fn new(dataset: &'a Dataset, env: &'a Environment, manifest: &AgentManifest, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        if manifest.kind != A::KIND {
            return Err(Error::Config(format!(
                "manifest describes a {} agent",
                manifest.kind.name()
            )));
        }
        if manifest.k != env.k() || manifest.feature_count != dataset.feature_count {
            return Err(Error::Config(format!(
                "agent expects k = {} and {} features; environment has k = {}, dataset {} features",
                manifest.k,
                manifest.feature_count,
                env.k(),
                dataset.feature_count
            )));
        }
        if dataset.train.is_empty() {
            return Err(Error::Config("training partition is empty".into()));
        }
        if dataset.valid.is_empty() {
            return Err(Error::Config("validation partition is empty".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = A::init(manifest, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            dataset,
            env,
            adam: AdamState::new(&params, AdamConfig::new(config.learning_rate)),
            buffer: ReplayBuffer::new(config.replay_capacity)?,
            pair: NetworkPair::new(params.clone()),
            best: params,
            config,
            rng,
            log: TrainingLog::default(),
            best_step: 0,
            best_validation: None,
            step: 0,
            gradient_steps: 0,
        })
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn pair(&self) -> &NetworkPair<A> {
        &self.pair
    }

    fn validate_now(&self) -> Result<f64> {
        let n = self.config.eval_queries.min(self.dataset.valid.len());
        Ok(evaluate_policy(&self.pair.train, &self.dataset.valid[..n], self.env)?.mean_p_ndcg)
    }

    /// Returns true when the score improved.
    fn record_validation(&mut self, score: f64) -> bool {
        if self.best_validation.is_none_or(|b| score > b) {
            self.best_validation = Some(score);
            self.best = self.pair.train.clone();
            self.best_step = self.step;
            true
        } else {
            false
        }
    }

    pub fn run(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        if cfg.max_steps == 0 {
            return Ok(());
        }
        let initial = self.validate_now()?;
        self.record_validation(initial);
        self.log.rows.push(LogRow {
            step: 0,
            epsilon: cfg.epsilon.at(0),
            train_loss: None,
            validation_p_ndcg: Some(initial),
            transfer: false,
        });
        let mut stale = 0;
        while self.step < cfg.max_steps {
            let epsilon = cfg.epsilon.at(self.step);
            let qi = sample_query_index(&self.dataset.train, &mut self.rng)?;
            let episode = self.pair.train.rollout(
                &self.dataset.train[qi],
                Exploration::uniform(epsilon),
                &mut self.rng,
                self.env,
            )?;
            self.buffer.push((qi, episode));
            self.step += 1;

            let mut loss = None;
            let mut transfer = false;
            if self.buffer.len() >= cfg.batch_episodes {
                let batch: Vec<(&Query, &Episode)> = self
                    .buffer
                    .sample_batch(cfg.batch_episodes, &mut self.rng)?
                    .into_iter()
                    .map(|(qi, ep)| (&self.dataset.train[*qi], ep))
                    .collect();
                loss = Some(train_step(&batch, &mut self.pair, &mut self.adam, cfg.gamma)?);
                self.gradient_steps += 1;
                if self.gradient_steps.is_multiple_of(cfg.transfer_every) {
                    self.pair.transfer();
                    self.log.transfers.push(self.gradient_steps);
                    transfer = true;
                }
            }

            let mut validation = None;
            if self.step.is_multiple_of(cfg.eval_every) {
                let score = self.validate_now()?;
                validation = Some(score);
                if self.record_validation(score) {
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            if validation.is_some() || transfer || self.step.is_multiple_of(cfg.log_every) {
                self.log.rows.push(LogRow {
                    step: self.step,
                    epsilon,
                    train_loss: loss,
                    validation_p_ndcg: validation,
                    transfer,
                });
            }
            if stale >= cfg.patience {
                log::info!("early stop at step {} (best {:?})", self.step, self.best_validation);
                break;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome<A> {
        TrainOutcome {
            best: self.best,
            best_step: self.best_step,
            best_validation: self.best_validation,
            last: self.pair.train,
            steps_run: self.step,
            gradient_steps: self.gradient_steps,
            log: self.log,
        }
    }
}

pub fn train_loop<A: Agent>(
    dataset: &Dataset,
    env: &Environment,
    manifest: &AgentManifest,
    config: &TrainerConfig,
) -> Result<TrainOutcome<A>> {
    let mut trainer = Trainer::<A>::new(dataset, env, manifest, config.clone())?;
    trainer.run()?;
    Ok(trainer.finish())
}
