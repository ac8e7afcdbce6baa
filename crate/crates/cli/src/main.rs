use archive_cli::config::Sources;

fn main() {
    let code = archive_cli::run(std::env::args_os(), &Sources::from_env(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
