//! `reprog`: command-line driver for the reprogramming pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reprog::config::ExperimentConfig;
use reprog::eval::Strategy;
use reprog::pipeline::{self, CHECKPOINT, REPORT};
use reprog::{Error, Result};

#[derive(Parser)]
#[command(name = "reprog", version, about = "Refurbish amputee inputs for a frozen able-bodied gait model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let cfg = match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate able-bodied and amputee CSV streams.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train and freeze the multi-task foundation model.
    TrainFoundation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Index each amputee's matched able-bodied stream under the frozen model.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compute correction templates for the training split.
    MapTemplates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
    },
    /// Train one refurbish module per amputee from stored templates.
    TrainRefurbish {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        templates: PathBuf,
    },
    /// Run mapping strategies over training ratios.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// cross, direct or refurbished; repeatable or comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = Strategy::ALL.map(|s| s.to_string()))]
        strategy: Vec<String>,
        /// Overrides the configured ratios.
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Emit CSV, summary and chart from an eval report.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = common.load()?;
            let files = pipeline::cmd_synth(&cfg, &common.out)?;
            println!("wrote {} streams to {}", files.len(), common.out.display());
        }
        Command::TrainFoundation { common, data } => {
            let cfg = common.load()?;
            let out = common.out.join(CHECKPOINT);
            for (task, r2) in pipeline::cmd_train_foundation(&cfg, &data, &out)? {
                println!("held-out R² {task}: {r2:.4}");
            }
            println!("wrote {}", out.display());
        }
        Command::BuildIndex { common, data, checkpoint } => {
            let cfg = common.load()?;
            list(&pipeline::cmd_build_index(&cfg, &data, &checkpoint, &common.out)?);
        }
        Command::MapTemplates {
            common,
            data,
            checkpoint,
            index,
            ratio,
        } => {
            let cfg = common.load()?;
            for m in pipeline::cmd_map_templates(&cfg, &data, &checkpoint, &index, ratio, &common.out)? {
                println!(
                    "amputee {}: {} templates, {} skipped boundary samples -> {}",
                    m.amputee,
                    m.templates,
                    m.skipped,
                    m.path.display()
                );
            }
        }
        Command::TrainRefurbish {
            common,
            data,
            checkpoint,
            index,
            templates,
        } => {
            let cfg = common.load()?;
            list(&pipeline::cmd_train_refurbish(&cfg, &data, &checkpoint, &index, &templates, &common.out)?);
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            index,
            strategy,
            ratios,
        } => {
            let mut cfg = common.load()?;
            if !ratios.is_empty() {
                cfg.ratios = ratios;
                cfg.validate()?;
            }
            let strategies = strategy.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>>>()?;
            let report = pipeline::cmd_eval(&cfg, &data, &checkpoint, &index, &strategies, &common.out)?;
            for r in &report.results {
                println!("{:<12} ratio {:<5} R² {:.3} ± {:.3}", r.strategy, r.train_ratio, r.mean, r.std);
            }
            println!("wrote {}", common.out.join(REPORT).display());
        }
        Command::Report { common, report } => {
            list(&pipeline::cmd_report(&report, &common.out)?);
        }
    }
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

