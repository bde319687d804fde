use std::process::ExitCode;

fn main() -> ExitCode {
    duio::cli::main()
}
