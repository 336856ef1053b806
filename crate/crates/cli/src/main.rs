use fcascade_cli::{parse_args, run, Parsed, HELP};
use std::process::ExitCode;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match parse_args(&argv) {
        Ok(Parsed::Help) => {
            print!("{HELP}");
            ExitCode::SUCCESS
        }
        Ok(Parsed::Run(args)) => ExitCode::from(run(&args)),
        Err(message) => {
            eprintln!("fcascade: {message}");
            ExitCode::from(fcascade_cli::scenarios::EXIT_CONFIG)
        }
    }
}
