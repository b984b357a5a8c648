// SPDX-License-Identifier: Apache-2.0

use clap::Parser;
use lithohod::cli::{exit_code, run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
