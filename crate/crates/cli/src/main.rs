use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod error;

#[derive(Debug, Parser)]
#[command(name = "synweb", version, about = "Simulate entangled ledgers and build or check their proofs")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProofKind {
    Link,
    Hub,
    Chain,
    Path,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics, events and ledgers.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a proof from the ledgers a simulation wrote.
    Prove {
        /// Directory written by `simulate`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        kind: ProofKind,
        #[arg(long)]
        holder: String,
        #[arg(long)]
        issuer: Option<String>,
        #[arg(long)]
        anchor: Option<String>,
        /// Holder rounds as `start:end`, or a single round.
        #[arg(long)]
        window: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a proof file against the anchors' published commitments.
    Verify {
        #[arg(long)]
        proof: PathBuf,
        /// `trusted.json` written by `simulate`.
        #[arg(long)]
        trusted: PathBuf,
    },
    /// Summarize a ledger or proof file.
    Inspect {
        file: PathBuf,
        /// Also check signatures and chaining against these keys.
        #[arg(long)]
        trusted: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed, cli.format),
        Command::Prove {
            run,
            kind,
            holder,
            issuer,
            anchor,
            window,
            out,
        } => commands::prove(
            &commands::ProveArgs {
                run,
                kind,
                holder,
                issuer,
                anchor,
                window,
                out,
            },
            cli.format,
        ),
        Command::Verify { proof, trusted } => commands::verify(&proof, &trusted, cli.format),
        Command::Inspect { file, trusted } => commands::inspect(&file, trusted.as_deref(), cli.format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("synweb: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
