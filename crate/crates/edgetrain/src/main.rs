use clap::Parser;
use edgetrain::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("edgetrain: {e}");
        std::process::exit(e.exit_code());
    }
}
