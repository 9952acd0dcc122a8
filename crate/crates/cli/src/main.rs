use clap::Parser;
use eiv_cli::args::Cli;
use eiv_cli::commands;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = commands::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
