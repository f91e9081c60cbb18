use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(immunorec_cli::run(std::env::args_os()))
}
