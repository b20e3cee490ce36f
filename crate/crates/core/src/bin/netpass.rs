use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(netpass::cli::run(std::env::args_os()))
}
