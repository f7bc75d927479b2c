use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use complex_rank::agents::AgentKind;
use complex_rank::dataset::{synthesize_dataset, Partition, SyntheticConfig};
use complex_rank::experiment::{
    self, bias_of_report, emit_plot_data, evaluate_checkpoint, DisplayOrderSpec, ExperimentConfig, SweepConfig,
    REPORT_HISTOGRAMS, REPORT_JSON, REPORT_QUERIES,
};
use complex_rank::mdp::{GainVariant, RewardLevel};

#[derive(Parser)]
#[command(name = "complex-rank", version, about = "Double-DQN ranking agents under unknown display orders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the JSON config one to one.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment config (JSON), or a run manifest to repeat a run.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    agent: Option<AgentKind>,
    /// `first`, `center`, `last`, or a JSON file with a preference vector.
    #[arg(long)]
    display_order: Option<DisplayOrderSpec>,
    #[arg(long)]
    reward_level: Option<RewardLevel>,
    #[arg(long)]
    gain: Option<GainVariant>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(a) = self.agent {
            c.agent = a;
        }
        if let Some(o) = &self.display_order {
            c.display_order = o.clone();
        }
        if let Some(r) = self.reward_level {
            c.reward_level = r;
        }
        if let Some(g) = self.gain {
            c.gain = g;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::from_path(&self.config)?;
        self.apply(&mut c);
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration for each of its seeds.
    Train(Overrides),
    /// Evaluate a checkpoint on a partition of the configured dataset.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `train`, `valid` or `test`.
        #[arg(long, default_value = "test")]
        partition: String,
    },
    /// Run the agent x display order x reward level grid.
    Sweep {
        /// Sweep config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gain: Option<GainVariant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset as LETOR files plus a cache.
    Synth {
        /// Synthetic dataset config (JSON); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Display size used to check `docs_per_query`.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long-format per-position and per-timestep label series.
    PlotData {
        /// `bias=path/to/report.json`, or a bare path whose bias is read from
        /// the run manifest beside it. Repeatable.
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(o) => {
            let config = o.load()?;
            for r in experiment::run(&config)? {
                println!(
                    "seed {}: test P-NDCG {:.6} over {} queries ({} steps) -> {}",
                    r.seed,
                    r.report.mean_p_ndcg,
                    r.report.query_count,
                    r.manifest.steps_run,
                    r.dir.display()
                );
            }
        }
        Command::Evaluate {
            overrides,
            checkpoint,
            partition,
        } => {
            let config = overrides.load()?;
            let partition = match partition.as_str() {
                "train" => Partition::Train,
                "valid" => Partition::Valid,
                "test" => Partition::Test,
                other => bail!("unknown partition `{other}`"),
            };
            let dataset = config.dataset.load(config.k)?;
            let env = config.environment()?;
            let report = evaluate_checkpoint(&checkpoint, dataset.partition(partition), &env)?;
            let out = overrides.out.clone().unwrap_or_else(|| {
                checkpoint.parent().map(|p| p.join("evaluation")).unwrap_or_else(|| "evaluation".into())
            });
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            report.write_json(&out.join(REPORT_JSON))?;
            report.write_query_csv(&out.join(REPORT_QUERIES))?;
            report.write_histogram_csv(&out.join(REPORT_HISTOGRAMS))?;
            println!("P-NDCG {:.6} over {} queries -> {}", report.mean_p_ndcg, report.query_count, out.display());
        }
        Command::Sweep { config, gain, out } => {
            let mut sweep = SweepConfig::from_path(&config)?;
            if let Some(g) = gain {
                sweep.base.gain = g;
            }
            if let Some(o) = out {
                sweep.base.out_dir = o;
            }
            let summary = experiment::sweep(&sweep)?;
            print!("{}", summary.to_csv());
            let failed = summary.runs.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                bail!("{failed} of {} runs failed; see runs.csv", summary.runs.len());
            }
        }
        Command::Synth { config, seed, k, out } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dataset = synthesize_dataset(&cfg, k)?;
            dataset.write_letor(&out)?;
            dataset.save_cache(&out.join("dataset.json"))?;
            println!(
                "{} train / {} valid / {} test queries -> {}",
                dataset.train.len(),
                dataset.valid.len(),
                dataset.test.len(),
                out.display()
            );
        }
        Command::PlotData { reports, out } => {
            let labelled = reports
                .iter()
                .map(|r| match r.split_once('=') {
                    Some((bias, path)) => Ok((bias.to_string(), PathBuf::from(path))),
                    None => {
                        let path = PathBuf::from(r);
                        Ok((bias_of_report(&path)?, path))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let csv = emit_plot_data(&labelled)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
