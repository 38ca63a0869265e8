use clap::Parser;
use sqlgrpo::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("sqlgrpo: {e}");
        std::process::exit(e.exit_code());
    }
}
