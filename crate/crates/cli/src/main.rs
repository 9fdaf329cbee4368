use clap::Parser;

fn main() {
    let cli = trial_forge_cli::Cli::parse();
    std::process::exit(trial_forge_cli::run(cli));
}
