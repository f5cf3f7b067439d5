use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnnrec_cli::commands::{self, COMPARISON};
use gnnrec_cli::{CliError, ConfigEntries, RunConfig};

/// Graph neural network recommender: ingest, train, evaluate, recommend, compare.
///
/// Settings come from a `section.key = value` file; any key can be
/// overridden after the subcommand, e.g. `gnnrec train --training.epochs 5`.
#[derive(Parser, Debug)]
#[command(name = "gnnrec", version)]
struct Cli {
    /// Config file; every key missing from it takes its default.
    #[arg(short, long, global = true, env = "GNNREC_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// `--section.key value` or `--section.key=value` pairs.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and split the dataset.
    Ingest(Overrides),
    /// Train `model.kind` on the ingested training graph.
    Train(Overrides),
    /// Score a snapshot on the held-out edges.
    Evaluate {
        /// Defaults to `model_<kind>.snap` in the output directory.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Top-k unseen items for one user.
    Recommend {
        #[arg(long)]
        user: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Merge report files into one table.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Defaults to `comparison.csv` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(
    path: Option<&PathBuf>,
    overrides: &[String],
) -> Result<(ConfigEntries, RunConfig), CliError> {
    let mut entries = match path {
        Some(p) => ConfigEntries::load(p)?,
        None => ConfigEntries::default(),
    };
    entries.apply_overrides(overrides)?;
    let cfg = entries.resolve()?;
    Ok((entries, cfg))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_ref();
    let (name, overrides): (&str, &[String]) = match &cli.command {
        Command::Ingest(o) => ("ingest", &o.overrides),
        Command::Train(o) => ("train", &o.overrides),
        Command::Evaluate { overrides, .. } => ("evaluate", &overrides.overrides),
        Command::Recommend { overrides, .. } => ("recommend", &overrides.overrides),
        Command::Compare { .. } => ("compare", &[]),
    };
    let (entries, cfg) = resolve(config, overrides)?;
    commands::echo_config(&entries, &cfg, name)?;
    match cli.command {
        Command::Ingest(_) => print!("{}", commands::ingest(&cfg)?),
        Command::Train(_) => {
            let outcome = commands::train(&cfg)?;
            for r in &outcome.losses {
                eprintln!(
                    "epoch {:>3}  loss {:.6}  {:.1}s",
                    r.epoch, r.mean_train_loss, r.wall_time
                );
            }
            println!("{}", outcome.snapshot.display());
        }
        Command::Evaluate { snapshot, .. } => {
            print!(
                "{}",
                commands::evaluate(&cfg, snapshot.as_deref())?.to_table()
            );
        }
        Command::Recommend {
            user, k, snapshot, ..
        } => {
            for (item, p) in commands::recommend(&cfg, snapshot.as_deref(), &user, k)? {
                println!("{item}\t{p:.6}");
            }
        }
        Command::Compare { reports, out } => {
            let table = commands::compare(&reports)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join(COMPARISON));
            commands::write_table(&table, &out)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
