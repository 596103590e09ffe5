use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use merlin_cli::cli::{Cli, Command};
use merlin_cli::manifest::to_json;
use merlin_cli::{commands, CliError, CliResult};

fn write_output(path: Option<&std::path::Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::input(format!("stdout: {e}"))),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => {
            let path = commands::synth(&args)?;
            println!("{}", path.display());
        }
        Command::Run(args) => {
            let report = commands::run(&args)?;
            write_output(args.out.as_deref(), &to_json(&report))?;
        }
        Command::Eval(args) => {
            let outcome = commands::eval(&args)?;
            print!("{}", outcome.render());
            if !outcome.pass {
                return Err(CliError::Failed("recovery below threshold".into()));
            }
        }
        Command::Topo(args) => {
            let a = commands::topo(&args)?;
            let mut text = String::from("a\n");
            for v in a {
                text.push_str(&format!("{v}\n"));
            }
            write_output(args.out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("merlin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
