use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmnet_core::cli::{self, SEED_ENV};
use cmnet_core::config::{Ablation, RunConfig};
use cmnet_core::data::Scheme;
use cmnet_core::{Error, Result};

/// Joint slot filling and intent detection with collaborative memories.
#[derive(Parser)]
#[command(name = "cmnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy, Default)]
struct AblationFlags {
    /// Remove the slot memory and its attention.
    #[arg(long)]
    no_slot_memory: bool,
    /// Remove the intent memory and its attention.
    #[arg(long)]
    no_intent_memory: bool,
    /// Replace the gated local update with a single fuse layer.
    #[arg(long)]
    no_local_calculation: bool,
    /// Drop the per-block BiLSTM.
    #[arg(long)]
    no_global_recurrence: bool,
    /// Block slot knowledge from reaching the intent feature.
    #[arg(long)]
    no_slot2int: bool,
    /// Block intent knowledge from reaching the slot feature.
    #[arg(long)]
    no_int2slot: bool,
}

impl AblationFlags {
    fn get(self) -> Ablation {
        Ablation {
            no_slot2int: self.no_slot2int,
            no_int2slot: self.no_int2slot,
            no_slot_memory: self.no_slot_memory,
            no_intent_memory: self.no_intent_memory,
            no_local_calculation: self.no_local_calculation,
            no_global_recurrence: self.no_global_recurrence,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set lr=0.01` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let seed = std::env::var(SEED_ENV).ok();
        cli::load_config(&self.config, &self.overrides, seed.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write best.ckpt and metrics.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Score a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Tag scheme of the corpus (default: the checkpoint's).
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Check the checkpoint vocabulary against this config's training corpus.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Tag a corpus and write the predictions in corpus format.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Tag scheme of the output (default: the checkpoint's).
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the configured model against an ablated variant.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ablation: AblationFlags,
        /// Comma-separated seeds; the report compares medians.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Take corpus, ablations and lambda from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, hide = true)]
        break_gradient: Option<String>,
    },
    /// Print dataset statistics.
    Stats {
        /// Read split paths and scheme from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
}

fn with_ablation(mut cfg: RunConfig, flags: AblationFlags) -> Result<RunConfig> {
    let mut a = cfg.ablation();
    for flag in flags.get().active() {
        a.set(flag)?;
    }
    cfg.set_ablation(a);
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    let seed_env = std::env::var(SEED_ENV).ok();
    match command {
        Command::Train { cfg, ablation } => {
            let cfg = with_ablation(cfg.load()?, ablation)?;
            let summary = cli::cmd_train(&cfg, |r| println!("{}", cli::epoch_line(r)))?;
            print!("{}", summary.report());
        }
        Command::Eval {
            checkpoint,
            corpus,
            scheme,
            config,
        } => {
            let cfg = config
                .map(|p| cli::load_config(&p, &[], seed_env.as_deref()))
                .transpose()?;
            let model = cli::load_model(&checkpoint, cfg.as_ref())?;
            print!("{}", cli::cmd_eval(&model, &corpus, scheme)?.report);
        }
        Command::Predict {
            checkpoint,
            corpus,
            scheme,
            output,
        } => {
            let model = cli::load_model(&checkpoint, None)?;
            let text = cli::cmd_predict(&model, &corpus, scheme)?;
            match output {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Ablate { cfg, ablation, seeds } => {
            let cfg = cfg.load()?;
            let report = cli::cmd_ablate(&cfg, ablation.get(), &seeds, |tag, seed, r| {
                eprintln!("[{tag} seed {seed}] {}", cli::epoch_line(r))
            })?;
            print!("{}", report.render());
        }
        Command::Gradcheck {
            config,
            overrides,
            break_gradient,
        } => {
            let cfg = config
                .map(|p| cli::load_config(&p, &overrides, seed_env.as_deref()))
                .transpose()?;
            let summary = cli::cmd_gradcheck(cfg.as_ref(), break_gradient.as_deref())?;
            print!("{}", summary.render());
            summary.verify()?;
        }
        Command::Stats {
            config,
            train,
            valid,
            test,
            scheme,
        } => {
            let cfg = config
                .map(|p| cli::load_config(&p, &[], seed_env.as_deref()))
                .transpose()?;
            let mut files = cfg.as_ref().map(cli::config_splits).unwrap_or_default();
            for (name, path) in [("Train", train), ("Validation", valid), ("Test", test)] {
                if let Some(p) = path {
                    files.retain(|(n, _)| n != name);
                    files.push((name.to_string(), p));
                }
            }
            if files.is_empty() {
                return Err(Error::Config(
                    "stats needs --config or at least one of --train/--valid/--test".into(),
                ));
            }
            let scheme = scheme.or(cfg.map(|c| c.scheme)).unwrap_or(Scheme::Bio2);
            print!("{}", cli::cmd_stats(&files, scheme)?.report());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
