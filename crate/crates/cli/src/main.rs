use clap::Parser;
use stochwave_cli::config::MAX_WORKERS_ENV;
use stochwave_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let workers = std::env::var(MAX_WORKERS_ENV).ok();
    std::process::exit(run(cli, workers.as_deref()));
}
