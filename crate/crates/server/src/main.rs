use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use coimagine_server::cli::{self, Cli};

#[tokio::main]
async fn main() -> ExitCode {
    let args = Cli::parse();
    let filter = match EnvFilter::try_new(&args.log_level) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("coimagine: bad --log-level: {e}");
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let started = async {
        let state = cli::build(&args)?;
        let listener = cli::bind(args.listen).await?;
        let addr = listener.local_addr().map_err(cli::StartupError::Serve)?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, session = %state.coordinator.current_session(), "serving");
        cli::serve(listener, state).await
    };
    match started.await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coimagine: {e}");
            ExitCode::FAILURE
        }
    }
}
