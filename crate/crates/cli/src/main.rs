use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match geoflow_cli::Cli::try_parse() {
        Ok(cli) => geoflow_cli::main_with(&cli),
        Err(e) => {
            // usage errors are config errors (exit 1); --help/--version succeed
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}
