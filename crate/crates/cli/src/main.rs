use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRADCF_LOG", "warn")).init();
    let cli = cfx_cli::cli::Cli::parse();
    if let Err(e) = cfx_cli::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
