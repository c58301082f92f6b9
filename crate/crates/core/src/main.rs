use clap::Parser;

fn main() {
    let cli = duet_core::cli::Cli::parse();
    if let Err(err) = duet_core::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
