use clap::Parser;
use eigenfind::cli::{execute, exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = execute(cli, std::env::args().collect()) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
