use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = p2pq_cli::Cli::parse();
    match p2pq_cli::run(cli, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
