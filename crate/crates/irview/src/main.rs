use std::process::ExitCode;

fn main() -> ExitCode {
    irview::cli::main_with(std::env::args_os())
}
