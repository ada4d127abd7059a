use std::io;
use std::sync::Arc;

use cdr_core::SystemClock;

fn main() {
    let code = cdr_cli::run_with(std::env::args_os(), Arc::new(SystemClock), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
