//! Data-preparation commands: synth, ingest, lift, pack, inspect, prompts, vocab.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use signforge::ingest::{self, CleanMode, CleanPolicy, JsonPrecision};
use signforge::langgloss::{self, LanguageSet, Vocab};
use signforge::lift3d::{self, LiftParams};
use signforge::pipeline::{self, Checkpoint};
use signforge::prompts::{self, TemplateBank, TranscriptRecord};
use signforge::skeleton::{self, Clip2D, Frame2D};
use signforge::storage::{self, ArchiveEntry, PoseClip};
use signforge::synth::{self, SynthSpec};
use signforge::POSE_WIDTH;

use crate::corpus::{self, read_text, write_text};
use crate::fail::{Context, Failure, Res};
use crate::manifest::Recorder;
use crate::Run;

fn create_dir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(Failure::io(dir))
}

/// Subdirectories of `dir`, sorted by name.
fn sorted_subdirs(dir: &Path) -> Res<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Failure::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated language tags.
    #[arg(long, default_value = "ASL,GSL")]
    pub languages: String,
    /// Distinct tokens per language.
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    /// Clips per language.
    #[arg(long, default_value_t = 50)]
    pub clips: usize,
    #[arg(long, default_value_t = 16)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 32)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Also write this many raw 2D clips as per-frame OpenPose JSON under `raw/`.
    #[arg(long, default_value_t = 0)]
    pub raw: usize,
    /// Frames per raw clip.
    #[arg(long, default_value_t = 24)]
    pub raw_frames: usize,
}

pub fn synth(a: SynthArgs, run: &Run) -> Res<()> {
    let spec = SynthSpec {
        languages: corpus::split_langs(&a.languages),
        vocab_per_language: a.vocab,
        clips: a.clips,
        frames_per_clip: (a.min_frames, a.max_frames),
        motif_amplitude: a.amplitude,
        seed: run.seed_or(0),
    };
    let corpus = synth::generate(&spec).kind("synth")?;
    create_dir(&a.out)?;
    let mut rec = Recorder::new("synth", run.argv.clone(), spec.seed);
    let skels = storage::pack_skels(&corpus.pose_clips()).kind("storage")?;
    let files = [
        ("corpus.skels", skels.text.clone()),
        ("corpus.skels.ids", skels.sidecar()),
        (corpus::TRANSCRIPTS, corpus.transcripts_tsv()),
        (corpus::PROMPTS, corpus.prompts_tsv()),
        ("templates.tsv", corpus.templates.to_text()),
        ("oracle.json", serde_json::to_string(&corpus.oracle()).kind("synth")? + "\n"),
    ];
    for (name, text) in files {
        let path = a.out.join(name);
        write_text(&path, &text)?;
        rec.output(&path)?;
    }
    if a.raw > 0 {
        let raw = a.out.join("raw");
        let docs: Vec<(String, Vec<String>)> = (0..a.raw)
            .into_par_iter()
            .map(|i| {
                let id = format!("raw-{i:04}");
                let clip = synth::clip_2d(spec.seed, &id, a.raw_frames);
                let frames = clip
                    .frames
                    .iter()
                    .enumerate()
                    .map(|(t, f)| ingest::to_openpose_json(f, &synth::raw_extras(spec.seed, &id, t, f), JsonPrecision::OpenPose))
                    .collect();
                (id, frames)
            })
            .collect();
        for (id, frames) in docs {
            for (t, doc) in frames.iter().enumerate() {
                write_text(&raw.join(&id).join(format!("{t:06}_keypoints.json")), doc)?;
            }
        }
        rec.output(&raw)?;
    }
    let m = rec.write_in(&a.out)?;
    println!("{}", serde_json::json!({ "clips": corpus.clips.len(), "manifest": m }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory with one subdirectory of per-frame JSON documents per clip.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "replace_median")]
    pub policy: CleanMode,
    /// Fraction of invalid joints above which `drop_frame` drops a frame.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn frame_files(dir: &Path) -> Res<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Failure::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn ingest(a: IngestArgs, run: &Run) -> Res<()> {
    let policy = CleanPolicy {
        mode: a.policy,
        invalid_frame_threshold: a.threshold,
    };
    let dirs = sorted_subdirs(&a.input)?;
    if dirs.is_empty() {
        return Err(Failure::module("ingest", format!("{}: no clip directories", a.input.display())));
    }
    let cleaned: Vec<(Clip2D, ingest::CleanReport)> = dirs
        .par_iter()
        .map(|dir| {
            let id = dir_name(dir);
            let docs = frame_files(dir)?
                .iter()
                .map(|f| fs::read(f).map_err(Failure::io(f)))
                .collect::<Res<Vec<_>>>()?;
            let clip = ingest::assemble_clip(&docs, &id, "", "").map_err(|e| Failure::module("ingest", format!("{id}: {e}")))?;
            ingest::clean_clip(&clip, &policy).map_err(|e| Failure::module("ingest", format!("{id}: {e}")))
        })
        .collect::<Res<_>>()?;
    let entries: Vec<ArchiveEntry> = cleaned
        .iter()
        .map(|(c, _)| ArchiveEntry {
            key: c.id.clone(),
            width: POSE_WIDTH,
            rows: c.frames.iter().map(Frame2D::to_row).collect(),
        })
        .collect();
    let bytes = storage::write_archive(&entries).kind("storage")?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&a.out, bytes).map_err(Failure::io(&a.out))?;
    let report: std::collections::BTreeMap<&str, &ingest::CleanReport> = cleaned.iter().map(|(c, r)| (c.id.as_str(), r)).collect();
    let report_path = corpus::with_suffix(&a.out, "report.json");
    write_text(&report_path, &(serde_json::to_string_pretty(&report).kind("ingest")? + "\n"))?;
    let mut rec = Recorder::new("ingest", run.argv.clone(), run.seed_or(0));
    rec.config(&policy);
    rec.input(&a.input)?;
    rec.output(&a.out)?;
    rec.output(&report_path)?;
    rec.write_beside(&a.out)?;
    println!("{}", serde_json::json!({ "clips": cleaned.len(), "archive": a.out }));
    Ok(())
}

fn clip_from_entry(e: &ArchiveEntry) -> Res<Clip2D> {
    if e.width != POSE_WIDTH {
        return Err(Failure::module("lift", format!("entry `{}` is {} wide, expected {POSE_WIDTH}", e.key, e.width)));
    }
    let frames = e
        .rows
        .iter()
        .map(|row| {
            let col = |k: usize| row.iter().skip(k).step_by(3).map(|v| f64::from(*v)).collect();
            Frame2D { x: col(0), y: col(1), w: col(2) }
        })
        .collect();
    Ok(Clip2D {
        id: e.key.clone(),
        frames,
        transcript: String::new(),
        gloss: None,
        language: String::new(),
    })
}

#[derive(Args, Debug)]
pub struct LiftArgs {
    /// Clip archive written by `ingest`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 95.0)]
    pub percentile: f64,
    /// Standard deviation of the optional depth noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn lift(a: LiftArgs, run: &Run) -> Res<()> {
    let params = LiftParams {
        percentile: a.percentile,
        noise_sigma: a.sigma,
        rng_seed: run.seed_or(0),
    };
    params.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let bytes = fs::read(&a.input).map_err(Failure::io(&a.input))?;
    let entries = storage::read_archive(&bytes).kind("storage")?;
    let structure = skeleton::standard_structure();
    let lifted: Vec<(String, [(&'static str, String); 5])> = entries
        .par_iter()
        .map(|e| {
            let clip = clip_from_entry(e)?;
            let r = lift3d::lift_clip(&clip, &structure, &params).map_err(|err| Failure::module("lift", format!("{}: {err}", e.key)))?;
            Ok((e.key.clone(), r.text_files()))
        })
        .collect::<Res<_>>()?;
    create_dir(&a.out)?;
    let mut rec = Recorder::new("lift", run.argv.clone(), params.rng_seed);
    rec.config(&params);
    rec.input(&a.input)?;
    for (id, files) in &lifted {
        for (name, text) in files {
            write_text(&a.out.join(id).join(name), text)?;
        }
        rec.output(&a.out.join(id))?;
    }
    rec.write_in(&a.out)?;
    println!("{}", serde_json::json!({ "clips": lifted.len(), "out": a.out }));
    Ok(())
}

/// The final pose file of a lifted clip directory.
const POSE_FILE: &str = "5_pose.txt";

fn read_pose_rows(path: &Path) -> Res<Vec<Vec<f32>>> {
    read_text(path)?
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f32>())
                .collect::<Result<Vec<f32>, _>>()
                .map_err(|e| Failure::module("pack", format!("{}:{}: {e}", path.display(), i + 1)))?;
            if row.len() != POSE_WIDTH {
                return Err(Failure::module(
                    "pack",
                    format!("{}:{}: {} values, expected {POSE_WIDTH}", path.display(), i + 1, row.len()),
                ));
            }
            Ok(row)
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Directory written by `lift`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Raw OpenPose JSON directory to compare sizes against.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

fn json_bytes(dir: &Path) -> Res<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(Failure::io(dir))? {
        let p = entry.map_err(Failure::io(dir))?.path();
        if p.is_dir() {
            total += json_bytes(&p)?;
        } else if p.extension().is_some_and(|x| x == "json") {
            total += fs::metadata(&p).map_err(Failure::io(&p))?.len();
        }
    }
    Ok(total)
}

pub fn pack(a: PackArgs, run: &Run) -> Res<()> {
    let dirs: Vec<PathBuf> = sorted_subdirs(&a.input)?
        .into_iter()
        .filter(|d| d.join(POSE_FILE).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(Failure::module("pack", format!("{}: no lifted clips", a.input.display())));
    }
    let clips: Vec<PoseClip> = dirs
        .par_iter()
        .map(|d| Ok(PoseClip::new(dir_name(d), read_pose_rows(&d.join(POSE_FILE))?)))
        .collect::<Res<_>>()?;
    let skels = storage::pack_skels(&clips).kind("storage")?;
    write_text(&a.out, &skels.text)?;
    let ids = corpus::sidecar(&a.out);
    write_text(&ids, &skels.sidecar())?;
    let mut rec = Recorder::new("pack", run.argv.clone(), run.seed_or(0));
    rec.input(&a.input)?;
    rec.output(&a.out)?;
    rec.output(&ids)?;
    let mut summary = serde_json::json!({ "clips": clips.len(), "bytes": skels.text.len() });
    if let Some(raw) = &a.raw {
        let report = storage::size_report(json_bytes(raw)?, skels.text.len() as u64);
        let path = corpus::with_suffix(&a.out, "size.json");
        write_text(&path, &(serde_json::to_string_pretty(&report).kind("pack")? + "\n"))?;
        rec.input(raw)?;
        rec.output(&path)?;
        summary["size_report"] = serde_json::to_value(report).kind("pack")?;
    }
    rec.write_beside(&a.out)?;
    println!("{summary}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, group = "what")]
    pub skels: Option<PathBuf>,
    /// Print the joint and bone tables.
    #[arg(long, group = "what")]
    pub structure: bool,
    #[arg(long, group = "what")]
    pub ckpt: Option<PathBuf>,
}

pub fn inspect(a: InspectArgs, _run: &Run) -> Res<()> {
    if a.structure {
        print!("{}", skeleton::standard_structure().describe());
        return Ok(());
    }
    if let Some(path) = a.skels {
        let text = read_text(&path)?;
        let ids: Vec<String> = read_text(&corpus::sidecar(&path))
            .map(|s| s.lines().map(str::to_string).collect())
            .unwrap_or_default();
        for s in storage::inspect_skels(&text) {
            let mut v = serde_json::to_value(&s).kind("inspect")?;
            if let Some(id) = ids.get(s.line) {
                v["id"] = id.clone().into();
            }
            println!("{v}");
        }
        return Ok(());
    }
    if let Some(dir) = a.ckpt {
        let index = pipeline::read_index(&dir).kind("checkpoint")?;
        let ckpt = Checkpoint::load(&dir).kind("checkpoint")?;
        let checksums: std::collections::BTreeMap<String, String> = match &ckpt {
            Checkpoint::Mlsf(m) => m.registry.checksums().into_iter().map(|(k, v)| (k, format!("{v:016x}"))).collect(),
            Checkpoint::P2lg(p) => [("gloss", p.gloss_stage.checksum()), ("pose", p.pose_stage.checksum())]
                .into_iter()
                .map(|(k, v)| (k.to_string(), format!("{v:016x}")))
                .collect(),
        };
        println!("{}", serde_json::json!({ "index": index, "checksums": checksums }));
        return Ok(());
    }
    Err(Failure::module("inspect", "pass one of --skels, --structure, --ckpt"))
}

#[derive(Args, Debug)]
pub struct PromptsArgs {
    /// `language \t pattern` per line, `{Text}` marking the slot.
    #[arg(long)]
    pub bank: PathBuf,
    /// transcripts.tsv
    #[arg(long)]
    pub corpus: PathBuf,
    /// Prompt variants per transcript.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prompts(a: PromptsArgs, run: &Run) -> Res<()> {
    let (bank, rejected) = TemplateBank::parse(&read_text(&a.bank)?).kind("prompts")?;
    for r in &rejected {
        eprintln!("{}", serde_json::json!({ "warning": "prompts", "message": r.to_string() }));
    }
    let rows = corpus::parse_transcripts(&read_text(&a.corpus)?)?;
    let records: Vec<TranscriptRecord> = rows
        .into_iter()
        .map(|r| TranscriptRecord {
            id: r.id,
            transcript: r.transcript,
            language: r.language,
        })
        .collect();
    let seed = run.seed_or(0);
    let out = prompts::augment(&records, &bank, a.k, seed).kind("prompts")?;
    let text: String = out.iter().map(|p| format!("{}\t{}\n", p.id, p.prompt)).collect();
    write_text(&a.out, &text)?;
    let mut rec = Recorder::new("prompts", run.argv.clone(), seed);
    rec.input(&a.bank)?;
    rec.input(&a.corpus)?;
    rec.output(&a.out)?;
    rec.write_beside(&a.out)?;
    println!("{}", serde_json::json!({ "prompts": out.len(), "rejected_templates": rejected.len() }));
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Column {
    Transcript,
    Gloss,
    Langgloss,
    Prompt,
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    /// transcripts.tsv, or prompts.tsv with `--column prompt`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16000)]
    pub size: usize,
    #[arg(long)]
    pub case_sensitive: bool,
    #[arg(long, value_enum, default_value = "transcript")]
    pub column: Column,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn vocab(a: VocabArgs, run: &Run) -> Res<()> {
    let text = read_text(&a.input)?;
    let streams: Vec<Vec<String>> = match a.column {
        Column::Prompt => corpus::parse_prompts(&text)?
            .iter()
            .map(|(_, p)| langgloss::tokenize(p, a.case_sensitive))
            .collect(),
        col => {
            let rows = corpus::parse_transcripts(&text)?;
            let tags: Vec<&str> = rows.iter().map(|r| r.language.as_str()).collect();
            let set = LanguageSet::with_tags(tags.iter().copied().chain(langgloss::DEFAULT_LANGUAGES)).kind("langgloss")?;
            rows.iter()
                .map(|r| {
                    let gloss = || {
                        if r.gloss.is_empty() {
                            r.transcript.split_whitespace().map(str::to_uppercase).collect()
                        } else {
                            r.gloss.clone()
                        }
                    };
                    Ok(match col {
                        Column::Transcript => langgloss::tokenize(&r.transcript, a.case_sensitive),
                        Column::Gloss => gloss(),
                        _ => langgloss::to_langgloss_surface(&gloss(), &r.language, &set).kind("langgloss")?,
                    })
                })
                .collect::<Res<_>>()?
        }
    };
    // Gloss tokens keep their case; it carries the language prefix.
    let case_sensitive = a.case_sensitive || matches!(a.column, Column::Gloss | Column::Langgloss);
    let v = Vocab::build(&streams, a.size, case_sensitive).map_err(|e| Failure::Config(e.to_string()))?;
    write_text(&a.out, &v.to_text())?;
    let mut rec = Recorder::new("vocab", run.argv.clone(), run.seed_or(0));
    rec.input(&a.input)?;
    rec.output(&a.out)?;
    rec.write_beside(&a.out)?;
    println!("{}", serde_json::json!({ "tokens": v.len() }));
    Ok(())
}
