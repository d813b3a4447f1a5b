use clap::Parser;

fn main() {
    let cli = pfslda::cli::Cli::parse();
    if let Err(e) = pfslda::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
