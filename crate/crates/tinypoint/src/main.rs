use std::process::ExitCode;

fn main() -> ExitCode {
    tinypoint::cli::main()
}
