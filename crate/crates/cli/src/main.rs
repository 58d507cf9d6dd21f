use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(groupfield_cli::run(std::env::args_os()))
}
