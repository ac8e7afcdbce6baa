use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use archive_core::archive::Archive;
use archive_core::config::DeploymentConfig;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "archive-server", version, about = "Consortium archive HTTP API")]
struct Cli {
    /// Deployment configuration file (TOML).
    #[arg(long, env = "ARCHIVE_SERVER_CONFIG", default_value = "archive.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API (the default).
    Serve {
        /// Overrides `listen` from the configuration.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Mint an API token for a configured user and print its secret.
    MintToken {
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "cli")]
        label: String,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let config = DeploymentConfig::load(&cli.config)?;
    match cli.command.unwrap_or(Command::Serve { listen: None }) {
        Command::MintToken { user, label } => {
            let archive = Archive::open(config)?;
            let token = archive.mint_api_token(&user, &label)?;
            println!("{}", token.secret);
            Ok(())
        }
        Command::Serve { listen } => {
            let listen = listen.unwrap_or_else(|| config.listen.clone());
            let archive = Arc::new(Archive::open(config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&listen).await?;
                tracing::info!(address = %listener.local_addr()?, "listening");
                archive_server::serve(listener, archive, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
            Ok(())
        }
    }
}
