use std::path::PathBuf;
use std::process::ExitCode;

use cegan::harness::{exit_code, Command, Run};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    GenData,
    Pretrain,
    Train,
    Eval,
    Sweep,
    Report,
}

/// Class-expert GAN experiments at desk scale.
#[derive(Parser)]
#[command(name = "cegan", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; relative config paths resolve against it.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cmd = match args.command {
        Cmd::GenData => Command::GenData,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::Sweep => Command::Sweep,
        Cmd::Report => Command::Report,
    };
    let result = Run::from_args(&args.config, Some(&args.out), args.seed).and_then(|mut run| run.execute(cmd));
    match result {
        Ok(outputs) => {
            for (path, digest) in outputs {
                println!("{path}  {}", &digest[..16]);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cegan {}: {e}", cmd.name());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
