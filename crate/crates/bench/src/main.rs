use clap::Parser;

fn main() {
    let args = paramcorrupt_bench::cli::Cli::parse();
    if let Err(e) = paramcorrupt_bench::cli::run(&args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
