use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pactest::harness::run_cli() as u8)
}
