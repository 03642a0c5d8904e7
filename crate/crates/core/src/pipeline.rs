//! Corpus records → training samples, the two training modes, checkpoint
//! directories, and forward-model adapters for back-translation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::langgloss::{self, GlossError, LanguageSet, Vocab};
use crate::metrics::{EvalItem, ForwardModel};
use crate::signmodel::{EncDecPair, Head, LanguageRegistry, ModelConfig, ModelError, PromptPipeline};
use crate::storage::{self, StorageError};
use crate::synth::SynthClip;
use crate::training::{self, EpochLog, EpochVerdict, PrioritizedDataset, RLConfig, Sample, Target, TrainError, TrainOptions};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Gloss(#[from] GlossError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("no clips for language `{0}`")]
    NoClips(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One aligned (text, gloss, prompt, pose) clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub language: String,
    pub transcript: String,
    /// Empty when the corpus carries no gloss; the uppercased transcript stands in.
    pub gloss: Vec<String>,
    pub prompt: String,
    pub pose: Vec<Vec<f32>>,
}

impl From<&SynthClip> for ClipRecord {
    fn from(c: &SynthClip) -> Self {
        Self {
            id: c.id.clone(),
            language: c.language.clone(),
            transcript: c.transcript.clone(),
            gloss: c.gloss.clone(),
            prompt: c.prompt.clone(),
            pose: c.pose.clone(),
        }
    }
}

impl ClipRecord {
    pub fn glosses(&self) -> Vec<String> {
        if self.gloss.is_empty() {
            self.transcript.split_whitespace().map(str::to_uppercase).collect()
        } else {
            self.gloss.clone()
        }
    }

    pub fn eval_item(&self) -> EvalItem {
        EvalItem {
            id: self.id.clone(),
            language: self.language.clone(),
            transcript: self.transcript.clone(),
            prompt: self.prompt.clone(),
            pose: self.pose.clone(),
        }
    }
}

/// Appends the progress counter `(t+1)/T` to every frame.
pub fn with_counters(pose: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let t = pose.len();
    pose.iter()
        .enumerate()
        .map(|(i, f)| {
            let mut f = f.clone();
            f.push(storage::counter(i, t));
            f
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mlsf,
    P2lg,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mlsf" => Ok(Self::Mlsf),
            "p2lg" => Ok(Self::P2lg),
            _ => Err(format!("unknown mode `{s}` (expected mlsf or p2lg)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mlsf => "mlsf",
            Self::P2lg => "p2lg",
        })
    }
}

/// Size cap and case handling for text and prompt vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSpec {
    pub size: usize,
    pub case_sensitive: bool,
}

impl VocabSpec {
    pub fn build<'a>(&self, texts: impl Iterator<Item = &'a str>) -> Result<Vocab> {
        let streams: Vec<Vec<String>> = texts.map(|t| langgloss::tokenize(t, self.case_sensitive)).collect();
        Ok(Vocab::build(&streams, self.size, self.case_sensitive)?)
    }
}

fn text_tokens(text: &str, vocab: &Vocab) -> Vec<String> {
    langgloss::tokenize(text, vocab.case_sensitive())
}

/// Per-language text→pose pairs over one shared text vocabulary.
#[derive(Debug, Clone)]
pub struct MlsfModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub registry: LanguageRegistry,
}

impl MlsfModel {
    /// Vocabulary over every transcript; one freshly initialized pair per language,
    /// seeded by `seed` and the language tag.
    pub fn build(clips: &[ClipRecord], languages: &[String], config: &ModelConfig, vocab: VocabSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = vocab.build(clips.iter().map(|c| c.transcript.as_str()))?;
        let mut registry = LanguageRegistry::new();
        for lang in languages {
            let pair = EncDecPair::build(config, vocab.len(), Head::Pose, crate::seed::derive_seed(seed, lang))?;
            registry.register(lang, pair)?;
        }
        Ok(Self {
            config: config.clone(),
            vocab,
            registry,
        })
    }

    pub fn src_ids(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(&text_tokens(text, &self.vocab)).ids
    }

    pub fn samples(&self, clips: &[ClipRecord], language: &str) -> Vec<Sample> {
        clips
            .iter()
            .filter(|c| c.language == language)
            .map(|c| Sample {
                id: c.id.clone(),
                src: self.src_ids(&c.transcript),
                target: Target::Frames(with_counters(&c.pose)),
            })
            .collect()
    }

    pub fn generate(&self, language: &str, text: &str) -> Result<Vec<Vec<f32>>> {
        Ok(self.registry.get(language)?.generate_pose(&self.src_ids(text))?)
    }

    /// Trains every registered language in tag order; `hook` sees `(language, epoch, pair)`.
    pub fn train(
        &mut self,
        clips: &[ClipRecord],
        config: &RLConfig,
        options: &TrainOptions,
        mut hook: impl FnMut(&str, usize, &EncDecPair) -> EpochVerdict,
    ) -> Result<BTreeMap<String, Vec<EpochLog>>> {
        let tags: Vec<String> = self.registry.tags().map(str::to_string).collect();
        let mut logs = BTreeMap::new();
        for tag in tags {
            let samples = self.samples(clips, &tag);
            if samples.is_empty() {
                return Err(PipelineError::NoClips(tag));
            }
            let mut data = PrioritizedDataset::new(samples);
            let pair = self.registry.get_mut(&tag)?;
            let log = training::train(pair, &mut data, config, options, |e, p| hook(&tag, e, p))?;
            logs.insert(tag, log);
        }
        Ok(logs)
    }
}

impl ForwardModel for MlsfModel {
    fn produce(&self, item: &EvalItem) -> std::result::Result<Vec<Vec<f32>>, String> {
        self.generate(&item.language, &item.transcript).map_err(|e| e.to_string())
    }
}

impl ForwardModel for PromptPipeline {
    fn produce(&self, item: &EvalItem) -> std::result::Result<Vec<Vec<f32>>, String> {
        self.generate(&item.prompt, &item.language)
            .map(|o| o.pose)
            .map_err(|e| e.to_string())
    }
}

/// LangGloss surface tokens of a clip.
pub fn langgloss_of(clip: &ClipRecord, languages: &LanguageSet) -> Result<Vec<String>> {
    Ok(langgloss::to_langgloss_surface(&clip.glosses(), &clip.language, languages)?)
}

/// A shared prompt→LangGloss pair and a shared LangGloss→pose pair over all languages.
pub fn build_pipeline(
    clips: &[ClipRecord],
    languages: &[String],
    config: &ModelConfig,
    vocab: VocabSpec,
    seed: u64,
) -> Result<PromptPipeline> {
    config.validate()?;
    let set = LanguageSet::with_tags(languages)?;
    let prompt_vocab = vocab.build(clips.iter().map(|c| c.prompt.as_str()))?;
    let streams = clips.iter().map(|c| langgloss_of(c, &set)).collect::<Result<Vec<_>>>()?;
    let gloss_vocab = Vocab::build(&streams, vocab.size, true)?;
    let gloss_stage = EncDecPair::build(
        config,
        prompt_vocab.len(),
        Head::Tokens { vocab: gloss_vocab.len() },
        crate::seed::derive_seed(seed, "gloss"),
    )?;
    let pose_stage = EncDecPair::build(config, gloss_vocab.len(), Head::Pose, crate::seed::derive_seed(seed, "pose"))?;
    Ok(PromptPipeline {
        gloss_stage,
        pose_stage,
        prompt_vocab,
        gloss_vocab,
        languages: set,
    })
}

/// Prompt → framed LangGloss samples for the gloss stage.
pub fn gloss_samples(pipeline: &PromptPipeline, clips: &[ClipRecord]) -> Result<Vec<Sample>> {
    clips
        .iter()
        .map(|c| {
            let prompt = langgloss::tokenize(&c.prompt, pipeline.prompt_vocab.case_sensitive());
            let target = pipeline.gloss_vocab.encode(&langgloss_of(c, &pipeline.languages)?).ids;
            Ok(Sample {
                id: c.id.clone(),
                src: pipeline.prompt_vocab.encode(&prompt).ids,
                target: Target::Tokens(target),
            })
        })
        .collect()
}

/// Framed LangGloss → pose samples for the pose stage.
pub fn pose_samples(pipeline: &PromptPipeline, clips: &[ClipRecord]) -> Result<Vec<Sample>> {
    clips
        .iter()
        .map(|c| {
            Ok(Sample {
                id: c.id.clone(),
                src: pipeline.gloss_vocab.encode(&langgloss_of(c, &pipeline.languages)?).ids,
                target: Target::Frames(with_counters(&c.pose)),
            })
        })
        .collect()
}

/// Stage names in training order.
pub const P2LG_STAGES: [&str; 2] = ["gloss", "pose"];

/// Trains the gloss stage, then the pose stage; `hook` sees `(stage, epoch, pair)`.
pub fn train_pipeline(
    pipeline: &mut PromptPipeline,
    clips: &[ClipRecord],
    config: &RLConfig,
    options: &TrainOptions,
    mut hook: impl FnMut(&str, usize, &EncDecPair) -> EpochVerdict,
) -> Result<BTreeMap<String, Vec<EpochLog>>> {
    if clips.is_empty() {
        return Err(PipelineError::NoClips("*".into()));
    }
    let mut logs = BTreeMap::new();
    let mut data = PrioritizedDataset::new(gloss_samples(pipeline, clips)?);
    let log = training::train(&mut pipeline.gloss_stage, &mut data, config, options, |e, p| hook("gloss", e, p))?;
    logs.insert("gloss".to_string(), log);
    let mut data = PrioritizedDataset::new(pose_samples(pipeline, clips)?);
    let log = training::train(&mut pipeline.pose_stage, &mut data, config, options, |e, p| hook("pose", e, p))?;
    logs.insert("pose".to_string(), log);
    Ok(logs)
}

/// Contents of `checkpoint.json`: the model shape and the file behind every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub mode: Mode,
    pub model: ModelConfig,
    pub languages: Vec<String>,
    /// Pair name (language tag or stage) → archive file.
    pub pairs: BTreeMap<String, String>,
    /// Vocabulary name → (file, max size, case sensitive).
    pub vocabs: BTreeMap<String, VocabFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub file: String,
    pub max_size: usize,
    pub case_sensitive: bool,
}

pub const CHECKPOINT_INDEX: &str = "checkpoint.json";

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(io_err(&path))
}

fn vocab_entry(name: &str, vocab: &Vocab) -> (String, VocabFile) {
    (
        name.to_string(),
        VocabFile {
            file: format!("{name}.vocab.txt"),
            max_size: vocab.max_size(),
            case_sensitive: vocab.case_sensitive(),
        },
    )
}

fn load_vocab(dir: &Path, index: &CheckpointIndex, name: &str) -> Result<Vocab> {
    let entry = index
        .vocabs
        .get(name)
        .ok_or_else(|| PipelineError::Checkpoint(format!("missing vocabulary `{name}`")))?;
    let text = String::from_utf8(read(dir, &entry.file)?).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    Ok(Vocab::from_text(&text, entry.max_size, entry.case_sensitive)?)
}

fn pair_file(index: &CheckpointIndex, name: &str) -> Result<String> {
    index
        .pairs
        .get(name)
        .cloned()
        .ok_or_else(|| PipelineError::Checkpoint(format!("missing pair `{name}`")))
}

fn write_index(dir: &Path, index: &CheckpointIndex) -> Result<()> {
    let mut json = serde_json::to_string_pretty(index).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    json.push('\n');
    write(dir, CHECKPOINT_INDEX, json.as_bytes())
}

/// Reads `checkpoint.json` from `dir`.
pub fn read_index(dir: &Path) -> Result<CheckpointIndex> {
    let bytes = read(dir, CHECKPOINT_INDEX)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Checkpoint(e.to_string()))
}

/// Either trained model, as loaded from a checkpoint directory.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Mlsf(MlsfModel),
    P2lg(PromptPipeline),
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut pairs = BTreeMap::new();
        let mut vocabs = BTreeMap::new();
        let (mode, model, languages) = match self {
            Self::Mlsf(m) => {
                for tag in m.registry.tags() {
                    let file = format!("{tag}.skar");
                    write(dir, &file, &m.registry.get(tag)?.to_archive()?)?;
                    pairs.insert(tag.to_string(), file);
                }
                let (name, entry) = vocab_entry("text", &m.vocab);
                write(dir, &entry.file, m.vocab.to_text().as_bytes())?;
                vocabs.insert(name, entry);
                (Mode::Mlsf, m.config.clone(), m.registry.tags().map(str::to_string).collect())
            }
            Self::P2lg(p) => {
                for (stage, pair) in [("gloss", &p.gloss_stage), ("pose", &p.pose_stage)] {
                    let file = format!("{stage}.skar");
                    write(dir, &file, &pair.to_archive()?)?;
                    pairs.insert(stage.to_string(), file);
                }
                for (name, vocab) in [("prompt", &p.prompt_vocab), ("gloss", &p.gloss_vocab)] {
                    let (name, entry) = vocab_entry(name, vocab);
                    write(dir, &entry.file, vocab.to_text().as_bytes())?;
                    vocabs.insert(name, entry);
                }
                (Mode::P2lg, p.pose_stage.config().clone(), p.languages.iter().map(str::to_string).collect())
            }
        };
        write_index(
            dir,
            &CheckpointIndex {
                mode,
                model,
                languages,
                pairs,
                vocabs,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = read_index(dir)?;
        index.model.validate()?;
        match index.mode {
            Mode::Mlsf => {
                let vocab = load_vocab(dir, &index, "text")?;
                let mut registry = LanguageRegistry::new();
                for tag in &index.languages {
                    let bytes = read(dir, &pair_file(&index, tag)?)?;
                    registry.register(tag, EncDecPair::from_archive(&index.model, vocab.len(), Head::Pose, &bytes)?)?;
                }
                Ok(Self::Mlsf(MlsfModel {
                    config: index.model,
                    vocab,
                    registry,
                }))
            }
            Mode::P2lg => {
                let prompt_vocab = load_vocab(dir, &index, "prompt")?;
                let gloss_vocab = load_vocab(dir, &index, "gloss")?;
                let gloss_bytes = read(dir, &pair_file(&index, "gloss")?)?;
                let pose_bytes = read(dir, &pair_file(&index, "pose")?)?;
                Ok(Self::P2lg(PromptPipeline {
                    gloss_stage: EncDecPair::from_archive(
                        &index.model,
                        prompt_vocab.len(),
                        Head::Tokens { vocab: gloss_vocab.len() },
                        &gloss_bytes,
                    )?,
                    pose_stage: EncDecPair::from_archive(&index.model, gloss_vocab.len(), Head::Pose, &pose_bytes)?,
                    prompt_vocab,
                    gloss_vocab,
                    languages: LanguageSet::with_tags(&index.languages)?,
                }))
            }
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Self::Mlsf(_) => Mode::Mlsf,
            Self::P2lg(_) => Mode::P2lg,
        }
    }

    pub fn forward(&self) -> &(dyn ForwardModel + Sync) {
        match self {
            Self::Mlsf(m) => m,
            Self::P2lg(p) => p,
        }
    }
}
