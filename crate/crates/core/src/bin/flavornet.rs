use clap::Parser;
use flavornet::cli::{error_report, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", error_report(&e));
        std::process::exit(1);
    }
}
