//! Reading and writing the on-disk corpus: skels + sidecar ids, transcripts.tsv, prompts.tsv.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use signforge::pipeline::ClipRecord;
use signforge::storage;

use crate::fail::{Context, Failure, Res};

pub const TRANSCRIPTS: &str = "transcripts.tsv";
pub const PROMPTS: &str = "prompts.tsv";

/// `<file>.<suffix>` next to `file`.
pub fn with_suffix(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    file.with_file_name(name)
}

pub fn sidecar(skels: &Path) -> PathBuf {
    with_suffix(skels, "ids")
}

pub fn sibling(file: &Path, name: &str) -> PathBuf {
    file.with_file_name(name)
}

pub fn read_text(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(Failure::io(path))
}

pub fn write_text(path: &Path, text: &str) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Failure::io(dir))?;
    }
    fs::write(path, text).map_err(Failure::io(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRow {
    pub id: String,
    pub language: String,
    pub transcript: String,
    pub gloss: Vec<String>,
}

/// `id \t language \t transcript [\t gloss]` per line.
pub fn parse_transcripts(text: &str) -> Res<Vec<TranscriptRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(Failure::module(
                    "corpus",
                    format!("transcripts line {}: expected id, language, transcript", i + 1),
                ));
            }
            Ok(TranscriptRow {
                id: cols[0].to_string(),
                language: cols[1].to_string(),
                transcript: cols[2].to_string(),
                gloss: cols.get(3).map(|g| g.split_whitespace().map(str::to_string).collect()).unwrap_or_default(),
            })
        })
        .collect()
}

/// `id \t prompt` per line; an id may repeat once per variant.
pub fn parse_prompts(text: &str) -> Res<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split_once('\t')
                .map(|(id, p)| (id.to_string(), p.to_string()))
                .ok_or_else(|| Failure::module("corpus", format!("prompts line {}: expected id and prompt", i + 1)))
        })
        .collect()
}

/// Poses with their sidecar ids.
pub fn read_skels(skels: &Path) -> Res<Vec<storage::PoseClip>> {
    let text = read_text(skels)?;
    let ids = read_text(&sidecar(skels))?;
    storage::unpack_with_ids(&text, &ids).kind("storage")
}

pub struct CorpusPaths {
    pub skels: PathBuf,
    pub transcripts: PathBuf,
    pub prompts: PathBuf,
}

impl CorpusPaths {
    /// Transcript and prompt files default to siblings of the skels file.
    pub fn resolve(skels: PathBuf, transcripts: Option<PathBuf>, prompts: Option<PathBuf>) -> Self {
        Self {
            transcripts: transcripts.unwrap_or_else(|| sibling(&skels, TRANSCRIPTS)),
            prompts: prompts.unwrap_or_else(|| sibling(&skels, PROMPTS)),
            skels,
        }
    }
}

/// Joins poses, transcripts and (when `with_prompts`) prompts by clip id, keeping skels
/// order and only the given languages. With `variants` every prompt of a clip becomes
/// its own record; otherwise the first prompt is kept.
pub fn load_clips(paths: &CorpusPaths, languages: &[String], with_prompts: bool, variants: bool) -> Res<Vec<ClipRecord>> {
    let poses = read_skels(&paths.skels)?;
    let rows: BTreeMap<String, TranscriptRow> = parse_transcripts(&read_text(&paths.transcripts)?)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let mut prompts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    if with_prompts {
        for (id, p) in parse_prompts(&read_text(&paths.prompts)?)? {
            prompts.entry(id).or_default().push(p);
        }
    }
    let mut out = Vec::new();
    for clip in poses {
        let row = rows
            .get(&clip.id)
            .ok_or_else(|| Failure::module("corpus", format!("clip `{}` has no transcript", clip.id)))?;
        if !languages.is_empty() && !languages.contains(&row.language) {
            continue;
        }
        let variants_of: Vec<String> = if with_prompts {
            let list = prompts
                .get(&clip.id)
                .ok_or_else(|| Failure::module("corpus", format!("clip `{}` has no prompt", clip.id)))?;
            if variants {
                list.clone()
            } else {
                list[..1].to_vec()
            }
        } else {
            vec![String::new()]
        };
        for prompt in variants_of {
            out.push(ClipRecord {
                id: clip.id.clone(),
                language: row.language.clone(),
                transcript: row.transcript.clone(),
                gloss: row.gloss.clone(),
                prompt,
                pose: clip.frames.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(Failure::module("corpus", "no clips match the requested languages"));
    }
    Ok(out)
}

pub fn split_langs(langs: &str) -> Vec<String> {
    langs
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
