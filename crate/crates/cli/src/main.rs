mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::Result;

fn dispatch(cli: &Cli) -> Result<()> {
    let (outputs, dir) = match &cli.command {
        Command::Split(a) => (commands::split::run(a)?, &a.common.out),
        Command::ProbeTrain(a) => (commands::probe_train::run(a)?, &a.common.out),
        Command::Score(a) => (commands::score::run(a)?, &a.common.out),
        Command::Eval(a) => (commands::eval::run(a)?, &a.common.out),
        Command::Fscil(a) => (commands::fscil::run(a)?, &a.common.out),
        Command::Report(a) => (commands::report::run(a)?, &a.common.out),
        Command::Synth(a) => (commands::synth::run(a)?, &a.common.out),
    };
    let written = outputs.commit(dir)?;
    eprintln!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let argv = match args::merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
