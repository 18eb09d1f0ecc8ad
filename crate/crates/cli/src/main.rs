use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqbsde_cli::{catalog_text, load, run, write_report, CliError};

#[derive(Parser)]
#[command(name = "sqbsde", version, about = "Singular quadratic BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run {
        config: PathBuf,
        /// Override `numerics.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the built-in terminal and generator catalog.
    Catalog,
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Catalog => {
            print!("{}", catalog_text());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                println!("{}: ok ({})", config.display(), c.kind);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run { config, seed, out } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(s) = seed {
                cfg.numerics.seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            let report = match run(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            if let Err(e) = write_report(&report, &cfg.output) {
                return fail(e);
            }
            for name in report.files.keys() {
                println!("{}", cfg.output.join(name).display());
            }
            ExitCode::SUCCESS
        }
    }
}
