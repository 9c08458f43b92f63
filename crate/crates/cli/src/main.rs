use clap::Parser;

fn main() {
    let cli = mlqmc_cli::Cli::parse();
    std::process::exit(mlqmc_cli::execute(&cli) as i32);
}
