//! Command-line client for the archive REST API.

pub mod cli;
pub mod client;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

use crate::cli::Cli;
use crate::commands::{render, Context};
use crate::config::{ClientConfig, Sources};
use crate::error::{CliError, EXIT_OK, EXIT_VALIDATION};

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, env: &Sources, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(stdout, "{}", e.render());
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        EXIT_VALIDATION
                    } else {
                        EXIT_OK
                    }
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_VALIDATION
                }
            };
            return code;
        }
    };
    let as_json = cli.json;
    let flags = Sources {
        server_url: cli.url.clone(),
        token: cli.token.clone(),
        default_community: cli.default_community.clone(),
        config_path: cli.config.clone(),
    };
    let result = ClientConfig::resolve(&flags, env).and_then(|config| Context { config: &config }.run(cli.command));
    match result {
        Ok(out) => match render(&out, as_json, stdout) {
            Ok(()) => EXIT_OK,
            Err(e) => report(&CliError::Io(e), as_json, stderr),
        },
        Err(e) => report(&e, as_json, stderr),
    }
}

fn report(e: &CliError, as_json: bool, stderr: &mut dyn Write) -> i32 {
    if as_json {
        let _ = writeln!(stderr, "{}", e.to_json());
    } else {
        let _ = writeln!(stderr, "error: {e}");
        if let CliError::Remote(r) = e {
            for f in r.field_errors.iter().flatten() {
                let _ = writeln!(stderr, "  {}: {}", f.field, f.reason);
            }
        }
    }
    e.exit_code()
}
