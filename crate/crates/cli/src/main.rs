use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gbc", version, about = "Numerical checks of Pfaffian and Lovelock curvature invariants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a check or a suite described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output`; stdout when neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Suppress the per-assertion summary on stderr.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, output, quiet } => gbc_cli::run_path(&config, output.as_deref(), quiet),
    };
    std::process::exit(code);
}
