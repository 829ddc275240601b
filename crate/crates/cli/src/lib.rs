//! Command-line front end: dataset simulation, training, rendering, warping,
//! separation and evaluation.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod images;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = commands::Globals {
        seed: cli.seed,
        config: cli.config.clone(),
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Render(a) => commands::render(&g, a),
        Command::Warp(a) => commands::warp(&g, a),
        Command::Separate(a) => commands::separate(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
    }
}
