use std::io;
use std::process::ExitCode;

use contract_net::cli::run_cli;

fn main() -> ExitCode {
    let code = run_cli(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
