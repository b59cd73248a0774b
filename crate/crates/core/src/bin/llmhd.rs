use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use llmhd::config::ExperimentConfig;
use llmhd::eval::EvalSplit;
use llmhd::runner;
use llmhd::synth::WorldParams;
use llmhd::trainer::{Ablation, ScorerKind};
use llmhd::{Error, Result};

#[derive(Parser)]
#[command(name = "llmhd", version, about = "Hard-sample denoising for implicit-feedback recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw interactions and item profiles into the canonical file layout.
    Ingest {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        min_rating: Option<u8>,
        #[arg(long)]
        kcore: Option<usize>,
        #[arg(long, default_value_t = '\t')]
        delimiter: char,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Component list such as `LD,VS,LMS,PU`, or `none`.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        scorer: Option<ScorerKind>,
        /// Run directory; defaults to `<output.dir>/<ablation>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: EvalSplit,
        #[arg(long, value_delimiter = ',', default_value = "5,10")]
        k: Vec<usize>,
        /// Defaults to the `config.toml` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every method over a grid of noise ratios and seeds.
    NoiseSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.10,0.15,0.20")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Semicolon-separated ablations, e.g. `none;LD;LD,VS,LMS,PU`.
        /// Defaults to the config's own ablation.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic world with planted noise.
    Synth {
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        positives: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit per-epoch loss and score curves of easy, hard and noisy samples.
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        d: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_methods(text: &str) -> Result<Vec<Ablation>> {
    text.split(';')
        .filter(|m| !m.trim().is_empty())
        .map(|m| Ablation::parse(m.trim()).map_err(Error::Config))
        .collect()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest {
            interactions,
            profiles,
            min_rating,
            kcore,
            delimiter,
            out,
        } => {
            let summary = runner::ingest(&interactions, profiles.as_deref(), min_rating, kcore, delimiter, &out)?;
            print_json(&summary)?;
        }
        Command::Train {
            config,
            seed,
            ablation,
            scorer,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(a) = ablation {
                cfg.ablation = Ablation::parse(&a).map_err(Error::Config)?;
            }
            if let Some(k) = scorer {
                cfg.scorer.kind = k;
            }
            let dir = out.unwrap_or_else(|| {
                cfg.output.dir.join(format!("{}-seed{}", cfg.ablation.label(), cfg.train.seed))
            });
            let outcome = runner::run_training(&cfg, &dir)?;
            let r = &outcome.report;
            println!("run directory: {}", outcome.dir.display());
            println!("best epoch {} (valid ndcg {:.4})", r.best_epoch, r.best_valid_ndcg);
            if let Some(test) = &r.test {
                print_json(&runner::metric_means(test))?;
            }
            if outcome.remote_degraded() {
                eprintln!(
                    "error: the preference endpoint never produced a summary ({} failures); run degraded to loss dropping",
                    r.summary_failures
                );
                return Ok(ExitCode::from(3));
            }
        }
        Command::Evaluate {
            checkpoint,
            split,
            k,
            config,
        } => {
            let m = runner::evaluate_checkpoint(&checkpoint, config.as_deref(), split, &k)?;
            print_json(&runner::metric_means(&m))?;
        }
        Command::NoiseSweep {
            config,
            ratios,
            seeds,
            methods,
            workers,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let methods = match methods {
                Some(m) => parse_methods(&m)?,
                None => vec![cfg.ablation],
            };
            let out = out.unwrap_or_else(|| cfg.output.dir.join("sweep"));
            let rows = runner::noise_sweep(&cfg, &ratios, seeds, &methods, workers, &out)?;
            println!("{} runs written under {}", rows.len(), out.display());
        }
        Command::Synth {
            users,
            items,
            noise,
            seed,
            dim,
            positives,
            out,
        } => {
            let params = WorldParams {
                users,
                items,
                dim,
                positives_per_user: positives,
                noise_ratio: noise,
                seed,
                ..WorldParams::default()
            };
            let world = runner::synth(&params, &out)?;
            println!(
                "{} interactions ({} planted noise) written to {}",
                world.dataset.len(),
                world.planted(),
                out.display()
            );
        }
        Command::Trace { config, d, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.join("trace"));
            let rows = runner::trace(&cfg, &d, &out)?;
            println!("{} rows written to {}", rows.len(), out.join("trace.csv").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
