use std::process::ExitCode;

fn main() -> ExitCode {
    dtd_audit::cli::main_with_args(std::env::args_os())
}
