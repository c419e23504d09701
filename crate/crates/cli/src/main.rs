use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(spectral_distill::main_with(std::env::args_os()))
}
