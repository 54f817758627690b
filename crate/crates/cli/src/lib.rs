//! The `ptdet` command-line harness.
//!
//! Every command that produces output also writes a [`RunManifest`] beside
//! it; `ptdet replay` re-runs the recorded arguments against a new output
//! path.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use manifest::{manifest_path, RunManifest};

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Canonicalize(_) => "canonicalize",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Gradcheck(_) => "gradcheck",
        Command::Replay(_) => "replay",
    }
}

/// Where the manifest of a run goes, if the command has an output.
fn manifest_anchor(c: &Command) -> Option<PathBuf> {
    match c {
        Command::GenData(a) => Some(a.output.out.clone()),
        Command::Canonicalize(a) => Some(a.output.out.clone()),
        Command::Train(a) => Some(a.output.out.clone()),
        Command::Ablate(a) => Some(a.output.out.clone()),
        Command::Eval(a) => a.out.clone(),
        Command::Gradcheck(a) => a.out.clone(),
        Command::Replay(_) => None,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn execute(argv: Vec<String>) -> CliResult<()> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    if let Command::Replay(r) = &cli.command {
        let m = RunManifest::load(&r.manifest)?;
        let mut replay = vec![argv[0].clone()];
        replay.extend(m.args);
        replay.push("--out".into());
        replay.push(r.output.out.to_string_lossy().into_owned());
        if r.output.force {
            replay.push("--force".into());
        }
        return execute(replay);
    }

    let start = Instant::now();
    let outcome = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Canonicalize(a) => commands::canonicalize_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Ablate(a) => commands::ablate_cmd(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
        Command::Replay(_) => unreachable!("handled above"),
    }?;
    if let Some(anchor) = manifest_anchor(&cli.command) {
        let manifest = RunManifest {
            command: command_name(&cli.command).into(),
            args: manifest::strip_output_args(&argv[1..]),
            config: outcome.config,
            seed: outcome.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            duration_secs: start.elapsed().as_secs_f64(),
        };
        manifest.save(&anchor)?;
    }
    Ok(())
}

/// Runs the command and maps the result to a process exit status.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let argv: Vec<String> = args.into_iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
