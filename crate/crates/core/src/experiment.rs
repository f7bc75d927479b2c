//! Experiment orchestration: single runs, the agent × display order ×
//! reward level grid, and plot-data export.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentDims, AgentKind, AgentManifest, DrmAgent, GruAgent};
use crate::dataset::{load_dataset, synthesize_dataset, Dataset, DatasetPaths, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{dispersion, evaluate_policy, welch_one_tailed_t_test, EvalReport};
use crate::mdp::{Bias, DisplayOrder, Environment, GainFunction, GainVariant, RewardLevel};
use crate::neural::{load_checkpoint, save_checkpoint, CandidateInput, Parameters};
use crate::trainer::{Trainer, TrainerConfig};

pub const MANIFEST_FORMAT: &str = "complex-rank/run-manifest";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_QUERIES: &str = "report_queries.csv";
pub const REPORT_HISTOGRAMS: &str = "report_histograms.csv";
pub const MANIFEST: &str = "manifest.json";
pub const FAILED: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// LETOR text files.
    Letor {
        #[serde(flatten)]
        paths: DatasetPaths,
        /// Seed of the validation split drawn from train when no validation
        /// file is given.
        #[serde(default)]
        split_seed: u64,
    },
    /// A cache written by `Dataset::save_cache`.
    Cache { path: PathBuf },
    Synthetic(SyntheticConfig),
}

impl DatasetSpec {
    fn check_paths(&self) -> Result<()> {
        let paths: Vec<&Path> = match self {
            DatasetSpec::Letor { paths, .. } => [Some(&paths.train), paths.valid.as_ref(), Some(&paths.test)]
                .into_iter()
                .flatten()
                .map(PathBuf::as_path)
                .collect(),
            DatasetSpec::Cache { path } => vec![path.as_path()],
            DatasetSpec::Synthetic(_) => vec![],
        };
        for p in paths {
            if !p.is_file() {
                return Err(Error::Config(format!("dataset: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn load(&self, k: usize) -> Result<Dataset> {
        match self {
            DatasetSpec::Letor { paths, split_seed } => load_dataset(paths, k, *split_seed),
            DatasetSpec::Cache { path } => {
                let d = Dataset::load_cache(path)?;
                let filtered = Dataset {
                    train: crate::dataset::filter_queries(d.train, k),
                    valid: crate::dataset::filter_queries(d.valid, k),
                    test: crate::dataset::filter_queries(d.test, k),
                    ..d
                };
                filtered.validate()?;
                Ok(filtered)
            }
            DatasetSpec::Synthetic(cfg) => synthesize_dataset(cfg, k),
        }
    }
}

/// `first`, `center`, `last`, or a path to a JSON preference vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum DisplayOrderSpec {
    Builtin(Bias),
    Custom(PathBuf),
}

impl From<String> for DisplayOrderSpec {
    fn from(s: String) -> Self {
        match s.parse::<Bias>() {
            Ok(b) => DisplayOrderSpec::Builtin(b),
            Err(_) => DisplayOrderSpec::Custom(PathBuf::from(s)),
        }
    }
}

impl From<DisplayOrderSpec> for String {
    fn from(s: DisplayOrderSpec) -> String {
        s.to_string()
    }
}

impl std::str::FromStr for DisplayOrderSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(DisplayOrderSpec::from(s.to_string()))
    }
}

impl fmt::Display for DisplayOrderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisplayOrderSpec::Builtin(b) => f.write_str(b.name()),
            DisplayOrderSpec::Custom(p) => write!(f, "{}", p.display()),
        }
    }
}

impl DisplayOrderSpec {
    pub fn resolve(&self, k: usize) -> Result<DisplayOrder> {
        match self {
            DisplayOrderSpec::Builtin(b) => b.order(k),
            DisplayOrderSpec::Custom(p) => DisplayOrder::from_json_file(p),
        }
    }

    /// Short label for file names and tables.
    pub fn label(&self) -> String {
        match self {
            DisplayOrderSpec::Builtin(b) => b.name().to_string(),
            DisplayOrderSpec::Custom(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub agent: AgentKind,
    #[serde(default = "default_reward_level")]
    pub reward_level: RewardLevel,
    #[serde(default = "default_display_order")]
    pub display_order: DisplayOrderSpec,
    #[serde(default = "default_gain")]
    pub gain: GainVariant,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub dims: AgentDims,
    #[serde(default)]
    pub gru_candidate_input: CandidateInput,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// One run per seed; each seed replaces `trainer.seed`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_reward_level() -> RewardLevel {
    RewardLevel::Document
}
fn default_display_order() -> DisplayOrderSpec {
    DisplayOrderSpec::Builtin(Bias::First)
}
fn default_gain() -> GainVariant {
    GainVariant::PaperLiteral
}
fn default_k() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Reads a config, or the config embedded in a run manifest.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let value = match value.get("format").and_then(|f| f.as_str()) {
            Some(MANIFEST_FORMAT) => value["config"].clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        let order = self
            .display_order
            .resolve(self.k)
            .map_err(|e| Error::Config(format!("display_order: {e}")))?;
        if order.k() != self.k {
            return Err(Error::Config(format!(
                "display_order has {} positions but k = {}",
                order.k(),
                self.k
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds: duplicate entries in {:?}", self.seeds)));
        }
        let d = self.dims;
        if d.embed == 0 || d.hidden == 0 || d.head == 0 {
            return Err(Error::Config("dims: every width must be positive".into()));
        }
        self.trainer.validate().map_err(|e| Error::Config(format!("trainer: {e}")))?;
        self.dataset.check_paths()
    }

    pub fn environment(&self) -> Result<Environment> {
        Ok(Environment::new(
            self.display_order.resolve(self.k)?,
            GainFunction::new(self.gain, self.max_label()),
            self.reward_level,
        ))
    }

    fn max_label(&self) -> u8 {
        match &self.dataset {
            DatasetSpec::Letor { paths, .. } => paths.max_label,
            DatasetSpec::Synthetic(s) => s.max_label,
            DatasetSpec::Cache { .. } => crate::dataset::DEFAULT_MAX_LABEL,
        }
    }

    pub fn agent_manifest(&self, feature_count: usize) -> AgentManifest {
        AgentManifest {
            kind: self.agent,
            k: self.k,
            feature_count,
            dims: self.dims,
            gru_candidate_input: self.gru_candidate_input,
        }
    }

    /// This config restricted to one seed.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.trainer.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    /// Resolved single-seed config; feeding this file back to `train`
    /// repeats the run.
    pub config: ExperimentConfig,
    pub agent: AgentManifest,
    pub display_order: DisplayOrder,
    pub steps_run: u64,
    pub gradient_steps: u64,
    pub best_step: u64,
    pub best_validation_p_ndcg: Option<f64>,
    pub test_p_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dir: PathBuf,
    pub seed: u64,
    pub manifest: RunManifest,
    pub report: EvalReport,
}

/// Trains and evaluates one seed of `config` into `dir`. On failure the
/// partial training log and a `FAILED` marker are left behind.
pub fn run_single(config: &ExperimentConfig, seed: u64, dataset: &Dataset, dir: &Path) -> Result<RunResult> {
    let config = config.for_seed(seed);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let _ = std::fs::remove_file(dir.join(FAILED));
    let result = match config.agent {
        AgentKind::Gru => run_typed::<GruAgent>(&config, dataset, dir),
        AgentKind::Drm => run_typed::<DrmAgent>(&config, dataset, dir),
    };
    if let Err(e) = &result {
        let marker = dir.join(FAILED);
        std::fs::write(&marker, format!("{e}\n")).map_err(|io| Error::io(&marker, io))?;
    }
    result
}

fn run_typed<A: Agent>(config: &ExperimentConfig, dataset: &Dataset, dir: &Path) -> Result<RunResult> {
    let env = config.environment()?;
    let agent_manifest = config.agent_manifest(dataset.feature_count);
    let mut trainer = Trainer::<A>::new(dataset, &env, &agent_manifest, config.trainer.clone())?;
    let outcome = trainer.run();
    let log_path = dir.join(TRAINING_LOG);
    trainer.log().write_csv(&log_path)?;
    outcome?;
    let out = trainer.finish();

    let report = evaluate_policy(&out.best, &dataset.test, &env)?;
    report.write_json(&dir.join(REPORT_JSON))?;
    report.write_query_csv(&dir.join(REPORT_QUERIES))?;
    report.write_histogram_csv(&dir.join(REPORT_HISTOGRAMS))?;

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        agent: agent_manifest,
        display_order: env.order.clone(),
        steps_run: out.steps_run,
        gradient_steps: out.gradient_steps,
        best_step: out.best_step,
        best_validation_p_ndcg: out.best_validation,
        test_p_ndcg: report.mean_p_ndcg,
    };
    save_checkpoint(&dir.join(CHECKPOINT), &out.best, serde_json::to_value(&manifest)?)?;
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(RunResult {
        dir: dir.to_path_buf(),
        seed: config.trainer.seed,
        manifest,
        report,
    })
}

/// Every seed of `config`, each in `out_dir/seed-<seed>`.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let dataset = config.dataset.load(config.k)?;
    config
        .seeds
        .iter()
        .map(|&seed| run_single(config, seed, &dataset, &config.out_dir.join(format!("seed-{seed}"))))
        .collect()
}

/// Rebuilds the agent stored in a checkpoint and evaluates it.
pub fn evaluate_checkpoint(checkpoint: &Path, queries: &[crate::dataset::Query], env: &Environment) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let manifest: RunManifest = serde_json::from_value(ckpt.manifest.clone())
        .map_err(|e| Error::Config(format!("{}: checkpoint manifest: {e}", checkpoint.display())))?;
    fn eval<A: Agent>(
        ckpt: &crate::neural::Checkpoint,
        m: &AgentManifest,
        queries: &[crate::dataset::Query],
        env: &Environment,
    ) -> Result<EvalReport> {
        let mut agent = A::zeros(m)?;
        ckpt.restore_into(&mut agent)?;
        evaluate_policy(&agent, queries, env)
    }
    match manifest.agent.kind {
        AgentKind::Gru => eval::<GruAgent>(&ckpt, &manifest.agent, queries, env),
        AgentKind::Drm => eval::<DrmAgent>(&ckpt, &manifest.agent, queries, env),
    }
}

/// Grid over agents, display orders and reward levels on top of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub agents: Vec<AgentKind>,
    pub display_orders: Vec<DisplayOrderSpec>,
    pub reward_levels: Vec<RewardLevel>,
    /// Per seed, the rate with the best validation score is kept. Empty
    /// means `base.trainer.learning_rate` alone.
    #[serde(default)]
    pub learning_rates: Vec<f64>,
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn rates(&self) -> Vec<f64> {
        if self.learning_rates.is_empty() {
            vec![self.base.trainer.learning_rate]
        } else {
            self.learning_rates.clone()
        }
    }

    fn cells(&self) -> Vec<(AgentKind, DisplayOrderSpec, RewardLevel)> {
        let mut out = Vec::new();
        for level in &self.reward_levels {
            for order in &self.display_orders {
                for agent in &self.agents {
                    out.push((*agent, order.clone(), *level));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() || self.display_orders.is_empty() || self.reward_levels.is_empty() {
            return Err(Error::Config("sweep: agents, display_orders and reward_levels must be non-empty".into()));
        }
        for (agent, order, level) in self.cells() {
            let mut c = self.base.clone();
            c.agent = agent;
            c.display_order = order;
            c.reward_level = level;
            c.validate()?;
        }
        if self.rates().iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("sweep: learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One `(agent, display order, reward level, seed)` outcome after learning
/// rate selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub agent: AgentKind,
    pub display_order: String,
    pub reward_level: RewardLevel,
    pub seed: u64,
    pub learning_rate: Option<f64>,
    pub test_p_ndcg: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub reward_level: RewardLevel,
    pub display_order: String,
    pub agent: AgentKind,
    pub runs: usize,
    pub failed: usize,
    pub mean_p_ndcg: f64,
    pub std: f64,
    pub stderr: f64,
    /// The other agent of the same cell and the one-tailed test that this
    /// agent scores higher.
    pub compared_to: Option<AgentKind>,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SummaryRow>,
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "reward_level,display_order,agent,runs,failed,mean_p_ndcg,std,stderr,compared_to,t,df,p\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                level_name(r.reward_level),
                r.display_order,
                r.agent.name(),
                r.runs,
                r.failed,
                r.mean_p_ndcg,
                r.std,
                r.stderr,
                r.compared_to.map(|a| a.name()).unwrap_or(""),
                opt(r.t),
                opt(r.df),
                opt(r.p),
            ));
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("reward_level,display_order,agent,seed,learning_rate,test_p_ndcg,error\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                level_name(r.reward_level),
                r.display_order,
                r.agent.name(),
                r.seed,
                opt(r.learning_rate),
                opt(r.test_p_ndcg),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }
}

pub fn level_name(level: RewardLevel) -> &'static str {
    match level {
        RewardLevel::Document => "document",
        RewardLevel::Serp => "serp",
    }
}

/// Aggregates per-run scores into one row per `(reward level, display
/// order, agent)`, with Welch tests against the other agent of the cell.
pub fn summarize(runs: Vec<SweepRun>) -> SweepSummary {
    let mut keys: Vec<(RewardLevel, String, AgentKind)> = Vec::new();
    for r in &runs {
        let key = (r.reward_level, r.display_order.clone(), r.agent);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let scores = |level: RewardLevel, order: &str, agent: AgentKind| -> (Vec<f64>, usize) {
        let mut ok = Vec::new();
        let mut failed = 0;
        for r in runs
            .iter()
            .filter(|r| r.reward_level == level && r.display_order == order && r.agent == agent)
        {
            match r.test_p_ndcg {
                Some(v) => ok.push(v),
                None => failed += 1,
            }
        }
        (ok, failed)
    };
    let rows = keys
        .iter()
        .map(|(level, order, agent)| {
            let (ok, failed) = scores(*level, order, *agent);
            let d = if ok.is_empty() {
                crate::eval::Dispersion {
                    mean: f64::NAN,
                    std: f64::NAN,
                    stderr: f64::NAN,
                    n: 0,
                }
            } else {
                dispersion(&ok)
            };
            let other = keys
                .iter()
                .find(|(l, o, a)| l == level && o == order && a != agent)
                .map(|(_, _, a)| *a);
            let test = other.and_then(|o| {
                let (theirs, _) = scores(*level, order, o);
                welch_one_tailed_t_test(&ok, &theirs).ok()
            });
            SummaryRow {
                reward_level: *level,
                display_order: order.clone(),
                agent: *agent,
                runs: ok.len(),
                failed,
                mean_p_ndcg: d.mean,
                std: d.std,
                stderr: d.stderr,
                compared_to: other,
                t: test.map(|w| w.t),
                df: test.map(|w| w.df),
                p: test.map(|w| w.p),
            }
        })
        .collect();
    SweepSummary { runs, rows }
}

/// Runs the grid; individual failures are recorded and the rest proceed.
/// Runs execute in parallel and are collected in grid order.
pub fn sweep(config: &SweepConfig) -> Result<SweepSummary> {
    config.validate()?;
    let dataset = config.base.dataset.load(config.base.k)?;
    let rates = config.rates();
    let mut jobs = Vec::new();
    for (agent, order, level) in config.cells() {
        for &seed in &config.base.seeds {
            jobs.push((agent, order.clone(), level, seed));
        }
    }
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|(agent, order, level, seed)| {
            let mut c = config.base.clone();
            c.agent = *agent;
            c.display_order = order.clone();
            c.reward_level = *level;
            let cell = format!("{}_{}_{}", agent.name(), order.label(), level_name(*level));
            let mut best: Option<(f64, f64, f64)> = None;
            let mut last_err = None;
            for &lr in &rates {
                c.trainer.learning_rate = lr;
                let dir = config.base.out_dir.join(&cell).join(format!("lr-{lr:e}")).join(format!("seed-{seed}"));
                match run_single(&c, *seed, &dataset, &dir) {
                    Ok(r) => {
                        let v = r.manifest.best_validation_p_ndcg.unwrap_or(f64::NEG_INFINITY);
                        if best.is_none_or(|(bv, _, _)| v > bv) {
                            best = Some((v, lr, r.report.mean_p_ndcg));
                        }
                    }
                    Err(e) => {
                        log::warn!("{cell} lr {lr} seed {seed}: {e}");
                        last_err = Some(e.to_string());
                    }
                }
            }
            SweepRun {
                agent: *agent,
                display_order: order.label(),
                reward_level: *level,
                seed: *seed,
                learning_rate: best.map(|b| b.1),
                test_p_ndcg: best.map(|b| b.2),
                error: if best.is_none() { last_err } else { None },
            }
        })
        .collect();
    let summary = summarize(runs);
    std::fs::create_dir_all(&config.base.out_dir).map_err(|e| Error::io(&config.base.out_dir, e))?;
    for (name, text) in [("summary.csv", summary.to_csv()), ("runs.csv", summary.runs_csv())] {
        let p = config.base.out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(summary)
}

/// Long-format rows `bias,series,index,mean_label` for a set of labelled
/// reports.
pub fn emit_plot_data(reports: &[(String, PathBuf)]) -> Result<String> {
    let mut out = String::from("bias,series,index,mean_label\n");
    for (bias, path) in reports {
        if !path.is_file() {
            return Err(Error::Config(format!("report {} does not exist", path.display())));
        }
        let r = EvalReport::read_json(path)?;
        for (series, values) in [("per_position", &r.per_position), ("per_timestep", &r.per_timestep)] {
            for (i, v) in values.iter().enumerate() {
                out.push_str(&format!("{bias},{series},{},{v}\n", i + 1));
            }
        }
    }
    Ok(out)
}

/// Display-order label recorded in the manifest next to a report.
pub fn bias_of_report(report: &Path) -> Result<String> {
    let dir = report.parent().unwrap_or(Path::new("."));
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    Ok(m.config.display_order.label())
}

/// Number of parameters of the agent `config` would build.
pub fn parameter_count(config: &ExperimentConfig, feature_count: usize) -> Result<usize> {
    let m = config.agent_manifest(feature_count);
    Ok(match m.kind {
        AgentKind::Gru => GruAgent::zeros(&m)?.num_params(),
        AgentKind::Drm => DrmAgent::zeros(&m)?.num_params(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> ExperimentConfig {
        serde_json::from_str(r#"{"dataset": {"kind": "synthetic", "train_queries": 4, "valid_queries": 2,
            "test_queries": 2, "docs_per_query": 6, "feature_count": 6, "seed": 1},
            "agent": "gru", "k": 3}"#)
        .unwrap()
    }

    #[test]
    fn display_order_spec_round_trip() {
        let s: DisplayOrderSpec = "center".parse().unwrap();
        assert_eq!(s, DisplayOrderSpec::Builtin(Bias::Center));
        assert_eq!(s.to_string(), "center");
        let c: DisplayOrderSpec = "orders/mine.json".parse().unwrap();
        assert_eq!(c.label(), "mine");
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DisplayOrderSpec>(&json).unwrap(), c);
    }

    #[test]
    fn config_defaults_and_checks() {
        let c = synthetic();
        assert_eq!(c.reward_level, RewardLevel::Document);
        assert_eq!(c.display_order, DisplayOrderSpec::Builtin(Bias::First));
        assert!(c.validate().is_ok());
        let mut dup = c.clone();
        dup.seeds = vec![1, 1];
        assert!(dup.validate().is_err());
        let mut missing = c.clone();
        missing.dataset = DatasetSpec::Cache {
            path: "/nonexistent/cache.json".into(),
        };
        let err = missing.validate().unwrap_err().to_string();
        assert!(err.contains("/nonexistent/cache.json"), "{err}");
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": {"kind": "cache", "path": "x"}, "agent": "drm", "bogus": 1}"#).is_err());
    }

    #[test]
    fn summary_rows_and_tests() {
        let mk = |agent, seed, v| SweepRun {
            agent,
            display_order: "last".into(),
            reward_level: RewardLevel::Document,
            seed,
            learning_rate: Some(1e-3),
            test_p_ndcg: v,
            error: None,
        };
        let runs = vec![
            mk(AgentKind::Gru, 0, Some(0.1)),
            mk(AgentKind::Drm, 0, Some(0.5)),
            mk(AgentKind::Gru, 1, Some(0.2)),
            mk(AgentKind::Drm, 1, Some(0.6)),
            mk(AgentKind::Gru, 2, Some(0.3)),
            mk(AgentKind::Drm, 2, Some(0.7)),
            mk(AgentKind::Drm, 3, None),
        ];
        let s = summarize(runs);
        assert_eq!(s.rows.len(), 2);
        let drm = s.rows.iter().find(|r| r.agent == AgentKind::Drm).unwrap();
        assert_eq!((drm.runs, drm.failed), (3, 1));
        assert!((drm.mean_p_ndcg - 0.6).abs() < 1e-12);
        let w = welch_one_tailed_t_test(&[0.5, 0.6, 0.7], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(drm.p, Some(w.p));
        assert_eq!(drm.compared_to, Some(AgentKind::Gru));
        assert_eq!(s.to_csv().lines().count(), 3);
    }
}
