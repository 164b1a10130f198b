use clap::Parser;
use wetseg::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(err.category()));
        }
    }
}
