use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elastic_tickets::ticket::PruneMethod;
use elastic_tickets_cli::commands::{self, Overrides};
use elastic_tickets_cli::config::{ExperimentConfig, PRESETS};
use elastic_tickets_cli::{exit_code, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "elastic-tickets", version, about = "Find, transform and evaluate sparse lottery tickets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file, or the name of a shipped preset.
    #[arg(long)]
    config: String,
    /// Output root; replaces `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent seeds and comparison cells.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Dense training from the seeded initialization.
    Train(Common),
    /// Iterative magnitude pruning with rewinding.
    Imp(Common),
    /// Stretch or squeeze a ticket to the config's architecture.
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ticket: PathBuf,
        /// Output ticket file; defaults to `<out>/<name>/<seed>/tickets/<arch>.eltk`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// A baseline ticket at the sparsity of `--ticket` or `prune.sparsity`.
    Prune {
        #[command(flatten)]
        common: Common,
        /// snip, grasp, one-shot-magnitude, random-permute or reinit.
        #[arg(long)]
        method: String,
        #[arg(long)]
        ticket: Option<PathBuf>,
    },
    /// Retrain a ticket on the configured dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ticket: PathBuf,
    },
    /// Linear mode connectivity between two retrainings of a ticket.
    Connectivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ticket: PathBuf,
    },
    /// Transferred tickets against pruning baselines.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Use this source ticket for every seed instead of running IMP.
        #[arg(long)]
        ticket: Option<PathBuf>,
    },
    /// Relative training FLOPs of a sparse run.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ticket: Option<PathBuf>,
    },
    /// Print a shipped preset.
    Preset { name: Option<String> },
}

fn setup(c: &Common) -> elastic_tickets::Result<(ExperimentConfig, Overrides)> {
    let ov = Overrides {
        out: c.out.clone(),
        seed: c.seed,
        jobs: c.jobs,
    };
    Ok((ov.apply(ExperimentConfig::load(&c.config)?), ov))
}

fn run(cmd: Command) -> elastic_tickets::Result<String> {
    match cmd {
        Command::Train(c) => {
            let (cfg, ov) = setup(&c)?;
            commands::cmd_train(&cfg, &ov)
        }
        Command::Imp(c) => {
            let (cfg, ov) = setup(&c)?;
            commands::cmd_imp(&cfg, &ov)
        }
        Command::Transform { common, ticket, output } => {
            let (cfg, _) = setup(&common)?;
            commands::cmd_transform(&cfg, &ticket, output.as_deref())
        }
        Command::Prune { common, method, ticket } => {
            let (cfg, ov) = setup(&common)?;
            commands::cmd_prune(&cfg, method.parse::<PruneMethod>()?, ticket.as_deref(), &ov)
        }
        Command::Eval { common, ticket } => {
            let (cfg, ov) = setup(&common)?;
            commands::cmd_eval(&cfg, Some(&ticket), &ov)
        }
        Command::Connectivity { common, ticket } => {
            let (cfg, _) = setup(&common)?;
            commands::cmd_connectivity(&cfg, Some(&ticket))
        }
        Command::Compare { common, ticket } => {
            let (cfg, ov) = setup(&common)?;
            commands::cmd_compare(&cfg, ticket.as_deref(), &ov)
        }
        Command::Flops { common, ticket } => {
            let (cfg, _) = setup(&common)?;
            commands::cmd_flops(&cfg, ticket.as_deref())
        }
        Command::Preset { name: None } => Ok(PRESETS.map(|(n, _)| n).join("\n")),
        Command::Preset { name: Some(n) } => elastic_tickets_cli::config::preset(&n)
            .map(|s| s.trim_end().to_string())
            .ok_or_else(|| elastic_tickets::Error::Config(format!("no preset named {n:?}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            debug_assert!(code >= EXIT_CONFIG);
            ExitCode::from(code as u8)
        }
    }
}
