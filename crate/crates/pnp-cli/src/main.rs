//! `pnp-solve`: plug-and-play inverse imaging from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numerical failure (non-finite iterates). Diagnostics go to stderr,
//! data to files and stdout.

mod args;
mod commands;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use pnp_core::Error;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if cli.threads > 0 {
        // ignore the error if a pool already exists (tests call main twice)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::ShapeMismatch(_) | Error::ChannelMismatch(_) => 2,
        Error::NonFinite(_) => 3,
    }
}
