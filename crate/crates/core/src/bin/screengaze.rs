use std::process::ExitCode;

fn main() -> ExitCode {
    screengaze::cli::main()
}
