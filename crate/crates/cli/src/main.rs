use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BUSFLUX_LOG", "warn")).init();
    let cli = busflux_cli::Cli::parse();
    if let Err(e) = busflux_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
