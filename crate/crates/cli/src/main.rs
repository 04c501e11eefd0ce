use clap::Parser;

fn main() {
    let cli = pathwise_cli::Cli::parse();
    std::process::exit(pathwise_cli::run(&cli));
}
