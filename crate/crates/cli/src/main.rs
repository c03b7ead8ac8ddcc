use clap::Parser;

use cwm_cli::{exit_code, logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        logging::error(err.to_string());
        std::process::exit(exit_code(&err));
    }
}
