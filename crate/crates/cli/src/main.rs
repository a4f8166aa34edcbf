use clap::Parser;
use posmu_cli::Cli;

fn main() {
    let cli = Cli::parse();
    let code = posmu_cli::execute(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
