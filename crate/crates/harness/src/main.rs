use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ddpc_harness::commands::{self, RunOptions, TuneOptions};
use ddpc_harness::config::{parse_beta, ColorName, ExperimentConfig, Mode, RegularizerName};

#[derive(Parser)]
#[command(name = "ddpc", version, about = "Regularized data-driven predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output folder; defaults to the config's `output` or `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let dir = commands::output_dir(&cfg, self.out.as_deref());
        Ok((cfg, dir))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the training data sets as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit once and run one closed loop.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        regularizer: Option<RegularizerName>,
        #[arg(long, value_parser = parse_beta)]
        beta2: Option<f64>,
        #[arg(long, value_parser = parse_beta)]
        beta3: Option<f64>,
        #[arg(long)]
        n_data: Option<usize>,
        #[arg(long, value_enum)]
        color: Option<ColorName>,
        /// Also run the model-based controller on the same noise.
        #[arg(long)]
        oracle: bool,
    },
    /// Monte-Carlo grid search over the regularization weights.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Desk)]
        mode: Mode,
        #[arg(long, value_parser = parse_beta)]
        fix_beta2: Option<f64>,
        #[arg(long, value_parser = parse_beta)]
        fix_beta3: Option<f64>,
    },
    /// Recompute the summary tables from stored runs.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common } => {
            let (cfg, dir) = common.load()?;
            for p in commands::generate(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Run {
            common,
            regularizer,
            beta2,
            beta3,
            n_data,
            color,
            oracle,
        } => {
            let (cfg, dir) = common.load()?;
            let opts = RunOptions {
                regularizer,
                beta2,
                beta3,
                n_data,
                color,
                oracle,
            };
            let s = commands::run(&cfg, &opts, &dir)?;
            println!("rho={} beta2={} beta3={} J={}", s.rho, s.beta2, s.beta3, s.j);
            if let Some(j) = s.j_oracle {
                println!("J_oracle={j}");
            }
        }
        Command::Tune {
            common,
            mode,
            fix_beta2,
            fix_beta3,
        } => {
            let (cfg, dir) = common.load()?;
            let opts = TuneOptions {
                mode,
                fix_beta2,
                fix_beta3,
            };
            let outcome = commands::tune(&cfg, &opts, &dir)?;
            for r in &outcome.reports {
                let failed = r.failures.len();
                println!(
                    "{} points={} outer={} inner={} failed_cells={failed}",
                    ddpc_harness::report::label_key(&r.label),
                    r.points.len(),
                    r.n_outer,
                    r.n_inner
                );
            }
            if let Some(s) = &outcome.slip {
                println!("{}", serde_json::to_string(s)?);
            }
            for p in &outcome.files {
                println!("{}", p.display());
            }
        }
        Command::Report { out } => {
            for p in commands::report(&out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
