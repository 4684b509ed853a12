//! `rac`: generate synthetic long-tail data, build retrieval indexes, train and
//! evaluate retrieval-augmented classifiers, and inspect attention.

mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let threads = rayon::current_num_threads();

    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a, threads),
        Command::BuildIndex(a) => commands::build_index(a, threads),
        Command::PrecomputeKnn(a) => commands::precompute_knn(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::GrowMemory(a) => commands::grow_memory(a, threads),
        Command::GradCheck(a) => commands::grad_check(a, threads),
        Command::Trace(a) => commands::trace(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
