use clap::Parser;

fn main() {
    let cli = trapkit_cli::Cli::parse();
    if let Err(e) = trapkit_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
