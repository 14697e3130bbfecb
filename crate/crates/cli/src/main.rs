use clap::Parser;

fn main() {
    let cli = covol_cli::Cli::parse();
    if let Err(e) = covol_cli::run(cli) {
        eprintln!("covol: {e}");
        std::process::exit(e.exit_code());
    }
}
