use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(occkit::cli::run(std::env::args()) as u8)
}
