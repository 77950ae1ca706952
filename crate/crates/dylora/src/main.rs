use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dylora::commands::{self, Run};
use dylora::CliError;

#[derive(Parser)]
#[command(
    name = "dylora",
    version,
    about = "Dynamic low-rank adapters on synthetic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed and replaces the bench seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one adapter; writes checkpoint.bin, trace.csv and manifest.json.
    Train(Common),
    /// Evaluate a checkpoint at one rank and print a JSON record.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rank: usize,
        /// Evaluate through the merged weight matrix and write it out.
        #[arg(long)]
        merged: bool,
    },
    /// Dynamic-vs-static rank sweep with hard assertions.
    Sweep(Common),
    /// Distribution × update-mode grid with warn-only flags.
    Ablation(Common),
    /// Step cost of a per-rank search versus one dynamic run.
    Search(Common),
    /// Pass cost of individual versus summation loss.
    LossCost(Common),
}

fn run(cli: Cli) -> dylora::Result<()> {
    let load = |c: Common| Run::load(&c.config, c.seed, c.out);
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train(c) => commands::train_cmd(&load(c)?, &mut stdout),
        Command::Eval {
            common,
            checkpoint,
            rank,
            merged,
        } => commands::eval_cmd(&load(common)?, &checkpoint, rank, merged, &mut stdout),
        Command::Sweep(c) => commands::sweep_cmd(&load(c)?, &mut stdout),
        Command::Ablation(c) => commands::ablation_cmd(&load(c)?, &mut stdout),
        Command::Search(c) => commands::search_cmd(&load(c)?, &mut stdout),
        Command::LossCost(c) => commands::loss_cost_cmd(&load(c)?, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
