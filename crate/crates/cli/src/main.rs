mod bench;
mod carve;
mod config;
mod decode;
mod probe;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Contrastive decoding with polarity prompts, knowledge-token probing and
/// contrastive attention cropping.
#[derive(Parser)]
#[command(name = "promptcd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate text with contrastive (or vanilla) decoding
    Decode(decode::DecodeCmd),
    /// Locate knowledge tokens in decode traces
    Probe(probe::ProbeCmd),
    /// Run vanilla and contrastive decoding over a conflict dataset
    Bench(bench::BenchCmd),
    /// Crop an image to the regions singled out by contrastive attention
    Carve(carve::CarveCmd),
}

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err
        .chain()
        .filter_map(|e| e.downcast_ref::<promptcd::Error>())
        .any(promptcd::Error::is_backend);
    if backend {
        EXIT_BACKEND
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decode(c) => decode::run(c),
        Command::Probe(c) => probe::run(c),
        Command::Bench(c) => bench::run(c),
        Command::Carve(c) => carve::run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
