use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::commands::{self, BuildGraphArgs, DiffuseArgs, EvaluateArgs, LogRegArgs, PathsArgs, PreprocessArgs, SynthArgs};
use super::workspace::{Workspace, INPUT_PRODUCER};
use crate::error::{Error, Result};

/// Low-shot classification by label diffusion over a k-NN graph.
#[derive(Parser, Debug)]
#[command(name = "lowshot", version)]
pub struct Cli {
    /// Pipeline directory holding the manifest and artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub dir: PathBuf,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    Synth(SynthArgs),
    Preprocess(PreprocessArgs),
    BuildGraph(BuildGraphArgs),
    Diffuse(DiffuseArgs),
    /// Train the logistic-regression baseline on the seeds.
    Logreg(LogRegArgs),
    Evaluate(EvaluateArgs),
    Paths(PathsArgs),
    /// Re-run every recorded stage of another pipeline directory into --dir.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub from: PathBuf,
}

/// Options that name files outside the workspace or only affect
/// scheduling; they are dropped from the recorded stage arguments.
const UNRECORDED: [&str; 5] = ["--dir", "--threads", "--spec", "--input", "--rows"];

fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_value = false;
    for a in argv {
        if skip_value {
            skip_value = false;
            continue;
        }
        if UNRECORDED.contains(&a.as_str()) {
            skip_value = true;
            continue;
        }
        if UNRECORDED.iter().any(|f| a.starts_with(&format!("{f}="))) {
            continue;
        }
        out.push(a.clone());
    }
    out
}

/// Runs one already-parsed command against `dir`. `stage` is the
/// argument list recorded in the manifest for mutating commands.
fn execute(dir: &Path, command: &Command, stage: Vec<String>, out: &mut String) -> Result<()> {
    if let Command::Replay(r) = command {
        return replay(&r.from, dir, out);
    }
    let mut ws = Workspace::open(dir)?;
    match command {
        Command::Synth(a) => commands::synth(&mut ws, a)?,
        Command::Preprocess(a) => commands::preprocess(&mut ws, a)?,
        Command::BuildGraph(a) => commands::build_graph(&mut ws, a)?,
        Command::Diffuse(a) => commands::diffuse_cmd(&mut ws, a)?,
        Command::Logreg(a) => commands::logreg(&mut ws, a)?,
        Command::Evaluate(a) => {
            let report = commands::evaluate(&mut ws, a)?;
            for c in report.configs() {
                out.push_str(&format!("{c}\t{}\n", report.summary(&c)));
            }
        }
        Command::Paths(a) => {
            out.push_str(&commands::paths(&ws, a)?);
            return Ok(());
        }
        Command::Replay(_) => unreachable!(),
    }
    ws.push_stage(stage);
    ws.save()
}

fn parse_stage(stage: &[String]) -> Result<Cli> {
    let argv = std::iter::once("lowshot".to_string()).chain(stage.iter().cloned());
    Cli::try_parse_from(argv).map_err(|e| Error::Format(format!("recorded stage {:?}: {}", stage.join(" "), first_line(&e.to_string()))))
}

/// Copies the external inputs of `from` into `to` and re-runs its stages.
pub fn replay(from: &Path, to: &Path, out: &mut String) -> Result<()> {
    let src = {
        let ws = Workspace::open(from)?;
        ws.manifest.clone()
    };
    {
        let mut dst_ws = Workspace::open(to)?;
        for (name, a) in src.artifacts.iter().filter(|(_, a)| a.producer == INPUT_PRODUCER) {
            let dst = dst_ws.path(&a.path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::copy(from.join(&a.path), dst)?;
            dst_ws.record(name, &a.path, INPUT_PRODUCER)?;
        }
        dst_ws.save()?;
    }
    for stage in &src.stages {
        let cli = parse_stage(stage)?;
        execute(to, &cli.command, stage.clone(), out)?;
    }
    Ok(())
}

fn first_line(s: &str) -> &str {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Errors are printed to stderr as
/// `error<TAB>category<TAB>message`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = argv.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("error\tusage\t{}", first_line(&e.to_string()).trim_start_matches("error: "));
            return 2;
        }
    };
    let mut out = String::new();
    let result = (|| {
        match cli.threads {
            Some(0) => return Err(Error::Parameter("--threads must be at least 1".into())),
            Some(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            None => {}
        }
        execute(&cli.dir, &cli.command, recorded_args(&argv[1..]), &mut out)
    })();
    print!("{out}");
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error\t{}\t{}", e.category(), e.to_string().replace(['\n', '\t'], " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn unrecorded_options_are_dropped() {
        let got = recorded_args(&s(&["--dir", "/tmp/x", "synth", "--spec=a.toml", "--threads", "2"]));
        assert_eq!(got, s(&["synth"]));
        let got = recorded_args(&s(&["build-graph", "--k", "5", "--dir=/w"]));
        assert_eq!(got, s(&["build-graph", "--k", "5"]));
    }

    #[test]
    fn recorded_stage_parses_back() {
        let cli = parse_stage(&s(&["diffuse", "--eta", "sinkhorn", "--trace-classes", "0,2"])).unwrap();
        match cli.command {
            Command::Diffuse(a) => assert_eq!(a.trace_classes, vec![0, 2]),
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn usage_error_exit_code() {
        assert_eq!(run(["lowshot", "diffuse", "--eta", "bogus"]), 2);
    }

    #[test]
    fn command_error_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        assert_eq!(run(["lowshot", "--dir", d, "diffuse"]), 1);
    }
}
