use clap::Parser;

fn main() {
    // CEGRL_LOG controls verbosity (standard filter syntax, default warn).
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CEGRL_LOG", "warn")).init();

    let cli = cegrl_cli::Cli::parse();
    match cegrl_cli::dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
