//! Model commands: train, generate, evaluate.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use signforge::metrics::{self, EvalItem, MetricError, ReverseModel, Scored};
use signforge::pipeline::{self, Checkpoint, ClipRecord, MlsfModel, Mode};
use signforge::signmodel::EncDecPair;
use signforge::storage::{self, PoseClip};
use signforge::synth::ReverseOracle;
use signforge::training::{EpochLog, EpochVerdict, TrainOptions};

use crate::config::RunConfig;
use crate::corpus::{self, read_text, write_text, CorpusPaths};
use crate::fail::{Context, Failure, Res};
use crate::manifest::Recorder;
use crate::Run;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "mlsf")]
    pub mode: Mode,
    /// Comma-separated languages to train; all languages in the corpus when empty.
    #[arg(long, default_value = "")]
    pub langs: String,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skels file; its sidecar ids, transcripts.tsv and prompts.tsv sit next to it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Enable prioritized sampling.
    #[arg(long)]
    pub plc: bool,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Record per-epoch wall time in the training log.
    #[arg(long)]
    pub timing: bool,
    /// Train on every prompt variant of a clip instead of the first.
    #[arg(long)]
    pub all_prompts: bool,
}

impl TrainArgs {
    /// Defaults, then the config file, then flags, then the global seed.
    fn resolve(&self, run: &Run) -> Res<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::parse(&read_text(path)?).map_err(Failure::Config)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if self.plc {
            c.plc_enabled = true;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = &self.data {
            c.paths.data = Some(v.clone());
        }
        if let Some(v) = &self.transcripts {
            c.paths.transcripts = Some(v.clone());
        }
        if let Some(v) = &self.prompts {
            c.paths.prompts = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.paths.out = Some(v.clone());
        }
        if let Some(s) = run.seed {
            c.seed = s;
        }
        c.validate().map_err(Failure::Config)?;
        Ok(c)
    }
}

fn corpus_languages(clips: &[ClipRecord]) -> Vec<String> {
    clips.iter().map(|c| c.language.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Source ids and ground-truth poses scored by the per-epoch hook.
struct Probe {
    src: Vec<usize>,
    truth: Vec<Vec<f32>>,
}

/// Mean DTW between generated and true poses; `None` for token stages.
fn probe_dtw(pair: &EncDecPair, probes: &[Probe]) -> Option<f64> {
    if probes.is_empty() {
        return None;
    }
    let d: Vec<f64> = probes
        .par_iter()
        .map(|p| {
            pair.generate_pose(&p.src)
                .ok()
                .and_then(|pose| metrics::dtw(&pose, &p.truth).ok())
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    Some(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Serialize)]
struct LogLine<'a> {
    pair: &'a str,
    #[serde(flatten)]
    log: &'a EpochLog,
}

pub fn train(a: TrainArgs, run: &Run) -> Res<()> {
    let config = a.resolve(run)?;
    let data = config
        .paths
        .data
        .clone()
        .ok_or_else(|| Failure::Config("no training data: pass --data or set paths.data".into()))?;
    let out = config
        .paths
        .out
        .clone()
        .ok_or_else(|| Failure::Config("no checkpoint directory: pass --out or set paths.out".into()))?;
    let paths = CorpusPaths::resolve(data, config.paths.transcripts.clone(), config.paths.prompts.clone());
    let wanted = corpus::split_langs(&a.langs);
    let p2lg = a.mode == Mode::P2lg;
    let clips = corpus::load_clips(&paths, &wanted, p2lg, a.all_prompts)?;
    let languages = if wanted.is_empty() { corpus_languages(&clips) } else { wanted };
    let model = config.model();
    let rl = config.training();
    let options = TrainOptions { timing: a.timing };
    let every = config.eval_every;

    let (ckpt, logs) = match a.mode {
        Mode::Mlsf => {
            let mut m = MlsfModel::build(&clips, &languages, &model, config.vocab(), config.seed).kind("model")?;
            let probes: Vec<(String, Probe)> = clips
                .iter()
                .map(|c| {
                    (
                        c.language.clone(),
                        Probe {
                            src: m.src_ids(&c.transcript),
                            truth: c.pose.clone(),
                        },
                    )
                })
                .collect();
            let logs = m
                .train(&clips, &rl, &options, |lang, epoch, pair| {
                    if every == 0 || epoch % every != 0 {
                        return EpochVerdict::default();
                    }
                    let mine: Vec<Probe> = probes
                        .iter()
                        .filter(|(l, _)| l == lang)
                        .map(|(_, p)| Probe {
                            src: p.src.clone(),
                            truth: p.truth.clone(),
                        })
                        .collect();
                    EpochVerdict {
                        dtw: probe_dtw(pair, &mine),
                        stop: false,
                    }
                })
                .kind("train")?;
            (Checkpoint::Mlsf(m), logs)
        }
        Mode::P2lg => {
            let mut p = pipeline::build_pipeline(&clips, &languages, &model, config.vocab(), config.seed).kind("model")?;
            let probes: Vec<Probe> = pipeline::pose_samples(&p, &clips)
                .kind("model")?
                .into_iter()
                .zip(&clips)
                .map(|(s, c)| Probe {
                    src: s.src,
                    truth: c.pose.clone(),
                })
                .collect();
            let logs = pipeline::train_pipeline(&mut p, &clips, &rl, &options, |stage, epoch, pair| {
                if every == 0 || epoch % every != 0 || stage != "pose" {
                    return EpochVerdict::default();
                }
                EpochVerdict {
                    dtw: probe_dtw(pair, &probes),
                    stop: false,
                }
            })
            .kind("train")?;
            (Checkpoint::P2lg(p), logs)
        }
    };

    ckpt.save(&out).kind("checkpoint")?;
    let mut log_text = String::new();
    for (pair, entries) in &logs {
        for log in entries {
            log_text.push_str(&serde_json::to_string(&LogLine { pair, log }).kind("train")?);
            log_text.push('\n');
        }
    }
    let log_path = out.join("train_log.jsonl");
    write_text(&log_path, &log_text)?;
    let config_path = out.join("config.json");
    write_text(&config_path, &(serde_json::to_string_pretty(&config).kind("train")? + "\n"))?;

    let mut rec = Recorder::new("train", run.argv.clone(), config.seed);
    rec.config(&config);
    rec.input(&paths.skels)?;
    rec.input(&corpus::sidecar(&paths.skels))?;
    rec.input(&paths.transcripts)?;
    if p2lg {
        rec.input(&paths.prompts)?;
    }
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    for entry in std::fs::read_dir(&out).map_err(Failure::io(&out))? {
        let path = entry.map_err(Failure::io(&out))?.path();
        if path.file_name().is_some_and(|n| n != crate::manifest::MANIFEST) {
            rec.output(&path)?;
        }
    }
    rec.write_in(&out)?;
    let finals: std::collections::BTreeMap<&str, f64> =
        logs.iter().filter_map(|(k, v)| v.last().map(|l| (k.as_str(), l.mean_loss))).collect();
    println!("{}", serde_json::json!({ "mode": a.mode, "clips": clips.len(), "final_loss": finals, "out": out }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Must agree with the checkpoint when given.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub lang: String,
    /// Source sentence (mlsf).
    #[arg(long)]
    pub text: Option<String>,
    /// Prompt (p2lg).
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate(a: GenerateArgs, run: &Run) -> Res<()> {
    let ckpt = Checkpoint::load(&a.ckpt).kind("checkpoint")?;
    if let Some(m) = a.mode.filter(|m| *m != ckpt.mode()) {
        return Err(Failure::module("generate", format!("checkpoint is {}, not {m}", ckpt.mode())));
    }
    let mut rec = Recorder::new("generate", run.argv.clone(), run.seed_or(0));
    rec.input(&a.ckpt)?;
    let pose = match &ckpt {
        Checkpoint::Mlsf(m) => {
            let text = a.text.as_deref().ok_or_else(|| Failure::module("generate", "mlsf checkpoints need --text"))?;
            m.generate(&a.lang, text).kind("model")?
        }
        Checkpoint::P2lg(p) => {
            let prompt = a
                .prompt
                .as_deref()
                .ok_or_else(|| Failure::module("generate", "p2lg checkpoints need --prompt"))?;
            let o = p.generate(prompt, &a.lang).kind("model")?;
            let path = corpus::with_suffix(&a.out, "langgloss.json");
            let doc = serde_json::json!({ "langgloss": o.langgloss, "violations": o.violations });
            write_text(&path, &(serde_json::to_string_pretty(&doc).kind("generate")? + "\n"))?;
            rec.output(&path)?;
            for v in &o.violations {
                eprintln!("{}", serde_json::json!({ "warning": "language_violation", "violation": v }));
            }
            o.pose
        }
    };
    let skels = storage::pack_skels(&[PoseClip::new("generated", pose.clone())]).kind("storage")?;
    write_text(&a.out, &skels.text)?;
    let ids = corpus::sidecar(&a.out);
    write_text(&ids, &skels.sidecar())?;
    rec.output(&a.out)?;
    rec.output(&ids)?;
    rec.write_beside(&a.out)?;
    println!("{}", serde_json::json!({ "frames": pose.len(), "out": a.out }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Forward (text or prompt to pose) checkpoint.
    #[arg(long)]
    pub fwd: PathBuf,
    /// Reverse (pose to text) model: an oracle JSON file.
    #[arg(long)]
    pub rev: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub langs: String,
    #[arg(long)]
    pub report: PathBuf,
}

fn load_reverse(path: &Path) -> Res<ReverseOracle> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::module("metrics", format!("{}: {e}", path.display())))
}

pub fn evaluate(a: EvaluateArgs, run: &Run) -> Res<()> {
    let rev_path = a.rev.as_ref().ok_or_else(|| Failure::module("metrics", MetricError::MissingReverseModel))?;
    let reverse = load_reverse(rev_path)?;
    let ckpt = Checkpoint::load(&a.fwd).kind("checkpoint")?;
    let paths = CorpusPaths::resolve(a.data.clone(), a.transcripts.clone(), a.prompts.clone());
    let clips = corpus::load_clips(&paths, &corpus::split_langs(&a.langs), ckpt.mode() == Mode::P2lg, false)?;
    let items: Vec<EvalItem> = clips.iter().map(ClipRecord::eval_item).collect();
    let forward = ckpt.forward();
    let produced: Vec<Result<Vec<Vec<f32>>, String>> = items.par_iter().map(|it| forward.produce(it)).collect();
    let scored = items
        .iter()
        .zip(produced)
        .map(|(it, pose)| {
            let produced = pose.map_err(|message| {
                Failure::module(
                    "metrics",
                    MetricError::Forward {
                        id: it.id.clone(),
                        message,
                    },
                )
            })?;
            Ok(Scored {
                candidate: reverse.transcribe(&produced).iter().map(|t| t.to_lowercase()).collect(),
                reference: it.transcript.split_whitespace().map(str::to_lowercase).collect(),
                produced,
                truth: it.pose.clone(),
            })
        })
        .collect::<Res<Vec<_>>>()?;
    let report = metrics::score_report(&scored).kind("metrics")?;
    write_text(&a.report, &(serde_json::to_string_pretty(&report).kind("metrics")? + "\n"))?;
    let mut rec = Recorder::new("evaluate", run.argv.clone(), run.seed_or(0));
    rec.input(&a.fwd)?;
    rec.input(rev_path)?;
    rec.input(&paths.skels)?;
    rec.input(&paths.transcripts)?;
    rec.output(&a.report)?;
    rec.write_beside(&a.report)?;
    println!("{}", serde_json::to_string(&report).kind("metrics")?);
    Ok(())
}
