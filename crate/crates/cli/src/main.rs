use std::process::ExitCode;

fn main() -> ExitCode {
    sobelkey_cli::main_with(std::env::args_os())
}
