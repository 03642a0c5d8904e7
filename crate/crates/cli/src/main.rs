mod config;
mod corpus;
mod data;
mod fail;
mod manifest;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fail::{Failure, Res};

#[derive(Parser, Debug)]
#[command(name = "signforge", version, about = "Multilingual sign-language production toolkit")]
struct Cli {
    /// Worker threads for per-clip stages; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed for every stochastic stage (overrides the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multilingual corpus.
    Synth(data::SynthArgs),
    /// Parse per-frame OpenPose JSON into a cleaned 2D clip archive.
    Ingest(data::IngestArgs),
    /// Lift a 2D clip archive to 3D poses, five text files per clip.
    Lift(data::LiftArgs),
    /// Pack lifted poses into a skels file.
    Pack(data::PackArgs),
    /// Summarize a skels file, the skeleton tables, or a checkpoint.
    Inspect(data::InspectArgs),
    /// Pair transcripts with prompt templates.
    Prompts(data::PromptsArgs),
    /// Build a vocabulary file.
    Vocab(data::VocabArgs),
    /// Train an MLSF registry or a prompt→LangGloss→pose pipeline.
    Train(model::TrainArgs),
    /// Generate a pose sequence from a checkpoint.
    Generate(model::GenerateArgs),
    /// Back-translation scores of a checkpoint on a corpus.
    Evaluate(model::EvaluateArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// What every command gets besides its own flags.
pub struct Run {
    pub seed: Option<u64>,
    /// Arguments as recorded in the manifest.
    pub argv: Vec<String>,
}

impl Run {
    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }
}

/// Drops `--jobs N` / `--jobs=N` so manifests do not depend on the thread count.
fn recorded_argv(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--jobs" {
            skip = true;
            continue;
        }
        if a.starts_with("--jobs=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Ingest(_) => "ingest",
        Command::Lift(_) => "lift",
        Command::Pack(_) => "pack",
        Command::Inspect(_) => "inspect",
        Command::Prompts(_) => "prompts",
        Command::Vocab(_) => "vocab",
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Evaluate(_) => "evaluate",
        Command::Replay(_) => "replay",
    }
}

fn dispatch(cli: Cli, argv: Vec<String>, depth: usize) -> Res<()> {
    let run = Run { seed: cli.seed, argv };
    match cli.command {
        Command::Synth(a) => data::synth(a, &run),
        Command::Ingest(a) => data::ingest(a, &run),
        Command::Lift(a) => data::lift(a, &run),
        Command::Pack(a) => data::pack(a, &run),
        Command::Inspect(a) => data::inspect(a, &run),
        Command::Prompts(a) => data::prompts(a, &run),
        Command::Vocab(a) => data::vocab(a, &run),
        Command::Train(a) => model::train(a, &run),
        Command::Generate(a) => model::generate(a, &run),
        Command::Evaluate(a) => model::evaluate(a, &run),
        Command::Replay(a) => {
            if depth > 0 {
                return Err(Failure::module("replay", "a manifest cannot replay another replay"));
            }
            let m = manifest::load(&a.manifest)?;
            for (path, digest) in &m.inputs {
                if manifest::digest_path(std::path::Path::new(path))? != *digest {
                    return Err(Failure::module("replay", format!("input `{path}` differs from the one recorded")));
                }
            }
            let mut full = vec!["signforge".to_string()];
            full.extend(m.argv.iter().cloned());
            let inner = Cli::try_parse_from(&full).map_err(|e| Failure::module("replay", e.to_string().trim().to_string()))?;
            dispatch(inner, m.argv, depth + 1)
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    if cli.jobs == 0 {
        eprintln!("{}", Failure::Config("--jobs must be at least 1".into()).record(name));
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("{}", Failure::module("threads", e).record(name));
        return ExitCode::from(1);
    }
    match dispatch(cli, recorded_argv(&args[1..]), 0) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record(name));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
