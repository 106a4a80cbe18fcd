use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use hybridpd::cli::Cli;
use hybridpd::error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            _ => {
                let err = CliError::parse(e.to_string().trim_end().to_string());
                eprintln!("{}", err.to_json());
                return ExitCode::from(err.exit_code() as u8);
            }
        },
    };
    match hybridpd::commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
