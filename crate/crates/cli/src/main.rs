use clap::Parser;

fn main() {
    let cli = satqkd_cli::Cli::parse();
    let code = satqkd_cli::run(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
