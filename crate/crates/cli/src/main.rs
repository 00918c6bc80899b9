use std::process::ExitCode;

use clap::Parser;

use gesture_forge_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GESTURE_FORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match gesture_forge_cli::run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
