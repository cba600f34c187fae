use clap::Parser;

fn main() {
    let cli = riskplan::cli::Cli::parse();
    if let Err(e) = riskplan::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
