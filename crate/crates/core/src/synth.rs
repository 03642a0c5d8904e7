//! Deterministic synthetic corpora.
//!
//! Every token of every language owns a fixed 8-frame motif; a clip's pose is its
//! tokens' motifs laid end to end. Motifs are drawn inside a shared low-rank subspace
//! of the 150-value pose space so a small model can represent them exactly.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ingest::OpenPoseExtras;
use crate::langgloss::SPECIALS;
use crate::prompts::{self, PromptTemplate, TemplateBank, TranscriptRecord};
use crate::seed;
use crate::skeleton::{self, Clip2D, Frame2D, JOINT_COUNT};
use crate::storage::PoseClip;
use crate::POSE_WIDTH;

pub const MOTIF_FRAMES: usize = 8;
/// Segment lengths the reverse oracle accepts around the motif length.
pub const SEGMENT_SLACK: usize = 2;
/// Dimension of the subspace every motif lives in.
pub const MOTIF_RANK: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("synth spec: {0}")]
    BadSpec(String),
    #[error("two motifs coincide; raise the seed or lower the vocabulary")]
    MotifCollision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub languages: Vec<String>,
    pub vocab_per_language: usize,
    /// Clips per language.
    pub clips: usize,
    /// Inclusive frame-count range; clip lengths are whole motifs inside it.
    pub frames_per_clip: (usize, usize),
    pub motif_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: vec!["ASL".into(), "GSL".into()],
            vocab_per_language: 8,
            clips: 50,
            frames_per_clip: (16, 32),
            motif_amplitude: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_string()));
        if self.languages.is_empty() || self.vocab_per_language == 0 || self.clips == 0 {
            return bad("languages, vocab_per_language and clips must all be at least 1");
        }
        let (lo, hi) = self.frames_per_clip;
        if lo == 0 || lo > hi || self.token_range().0 > self.token_range().1 {
            return bad("frames_per_clip must hold at least one whole motif");
        }
        if !(self.motif_amplitude.is_finite() && self.motif_amplitude > 0.0) {
            return bad("motif_amplitude must be positive");
        }
        let unique: BTreeSet<&String> = self.languages.iter().collect();
        if unique.len() != self.languages.len() {
            return bad("languages must be distinct");
        }
        Ok(())
    }

    /// Inclusive range of tokens per clip.
    fn token_range(&self) -> (usize, usize) {
        let (lo, hi) = self.frames_per_clip;
        (lo.div_ceil(MOTIF_FRAMES).max(1), hi / MOTIF_FRAMES)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexEntry {
    pub language: String,
    pub token: String,
    /// `MOTIF_FRAMES` rows of `POSE_WIDTH` values.
    pub motif: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClip {
    pub id: String,
    pub language: String,
    pub transcript: String,
    pub gloss: Vec<String>,
    pub prompt: String,
    pub pose: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub lexicon: Vec<LexEntry>,
    pub clips: Vec<SynthClip>,
    pub templates: TemplateBank,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn word(rng: &mut seed::Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS[rng.random_range(0..ONSETS.len())], VOWELS[rng.random_range(0..VOWELS.len())]))
        .collect()
}

/// Three templates per language; the language name appears in each.
pub fn default_templates(languages: &[String]) -> TemplateBank {
    let patterns = [
        "how do i sign {Text} in {Lang}",
        "show me {Text} in {Lang} please",
        "translate {Text} into {Lang}",
    ];
    TemplateBank::from_templates(languages.iter().flat_map(|lang| {
        patterns.iter().map(move |p| {
            PromptTemplate::new(lang, &p.replace("{Lang}", &lang.to_lowercase())).expect("template has one slot")
        })
    }))
}

/// Motif = amplitude · B z(t): B is shared (150 × rank), z(t) is per token.
fn motifs(spec: &SynthSpec, count: usize) -> Vec<Vec<Vec<f32>>> {
    let mut rng = seed::rng_for(spec.seed, "motif-basis");
    let k = MOTIF_RANK as f64;
    let basis: Vec<[f64; MOTIF_RANK]> = (0..POSE_WIDTH)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0) / k))
        .collect();
    (0..count)
        .map(|i| {
            let mut rng = seed::rng_for(spec.seed, &format!("motif-{i}"));
            let params: Vec<(f64, f64, f64, f64)> = (0..MOTIF_RANK)
                .map(|_| {
                    let a: f64 = rng.random_range(0.2..0.6);
                    let c: f64 = rng.random_range(-0.4..0.4);
                    let freq = rng.random_range(0.5..2.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (a, c, freq, phase)
                })
                .collect();
            (0..MOTIF_FRAMES)
                .map(|t| {
                    let z: Vec<f64> = params
                        .iter()
                        .map(|(a, c, f, ph)| {
                            let v = a * (std::f64::consts::TAU * f * t as f64 / MOTIF_FRAMES as f64 + ph).sin() + c;
                            v.clamp(-1.0, 1.0)
                        })
                        .collect();
                    basis
                        .iter()
                        .map(|row| (spec.motif_amplitude * row.iter().zip(&z).map(|(b, zz)| b * zz).sum::<f64>()) as f32)
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn flat_distance(a: &[Vec<f32>], b: &[Vec<f32>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Smallest distance between two distinct lexicon motifs.
pub fn min_motif_separation(lexicon: &[LexEntry]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..lexicon.len() {
        for j in i + 1..lexicon.len() {
            best = best.min(flat_distance(&lexicon[i].motif, &lexicon[j].motif));
        }
    }
    best
}

/// Builds the corpus; a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let mut rng = seed::rng_for(spec.seed, "lexicon");
    let mut used = BTreeSet::new();
    let mut words = Vec::new();
    for lang in &spec.languages {
        for _ in 0..spec.vocab_per_language {
            let w = loop {
                let w = word(&mut rng);
                if !SPECIALS.contains(&w.as_str()) && used.insert(w.clone()) {
                    break w;
                }
            };
            words.push((lang.clone(), w));
        }
    }
    let shapes = motifs(spec, words.len());
    let lexicon: Vec<LexEntry> = words
        .into_iter()
        .zip(shapes)
        .map(|((language, token), motif)| LexEntry { language, token, motif })
        .collect();
    if lexicon.len() > 1 && min_motif_separation(&lexicon) <= 0.0 {
        return Err(SynthError::MotifCollision);
    }
    let templates = default_templates(&spec.languages);
    let (lo, hi) = spec.token_range();
    let mut clips = Vec::new();
    for (li, lang) in spec.languages.iter().enumerate() {
        let own = &lexicon[li * spec.vocab_per_language..(li + 1) * spec.vocab_per_language];
        let mut rng = seed::rng_for(spec.seed, &format!("clips-{lang}"));
        for c in 0..spec.clips {
            let n = rng.random_range(lo..=hi);
            let picks: Vec<&LexEntry> = (0..n).map(|_| &own[rng.random_range(0..own.len())]).collect();
            let transcript = picks.iter().map(|e| e.token.as_str()).collect::<Vec<_>>().join(" ");
            clips.push(SynthClip {
                id: format!("{}-{c:04}", lang.to_lowercase()),
                language: lang.clone(),
                gloss: picks.iter().map(|e| e.token.to_uppercase()).collect(),
                transcript,
                prompt: String::new(),
                pose: picks.iter().flat_map(|e| e.motif.iter().cloned()).collect(),
            });
        }
    }
    let records: Vec<TranscriptRecord> = clips
        .iter()
        .map(|c| TranscriptRecord {
            id: c.id.clone(),
            transcript: c.transcript.clone(),
            language: c.language.clone(),
        })
        .collect();
    let prompts = prompts::associate(&records, &templates, spec.seed).expect("every language has templates");
    for (clip, p) in clips.iter_mut().zip(prompts) {
        clip.prompt = p.prompt;
    }
    Ok(Corpus {
        spec: spec.clone(),
        lexicon,
        clips,
        templates,
    })
}

impl Corpus {
    pub fn pose_clips(&self) -> Vec<PoseClip> {
        self.clips.iter().map(|c| PoseClip::new(c.id.clone(), c.pose.clone())).collect()
    }

    /// `id \t language \t transcript \t gloss` per clip.
    pub fn transcripts_tsv(&self) -> String {
        self.clips
            .iter()
            .map(|c| format!("{}\t{}\t{}\t{}\n", c.id, c.language, c.transcript, c.gloss.join(" ")))
            .collect()
    }

    /// `id \t prompt` per clip.
    pub fn prompts_tsv(&self) -> String {
        self.clips.iter().map(|c| format!("{}\t{}\n", c.id, c.prompt)).collect()
    }

    pub fn oracle(&self) -> ReverseOracle {
        ReverseOracle::new(&self.lexicon)
    }

    pub fn language_clips<'a>(&'a self, language: &'a str) -> impl Iterator<Item = &'a SynthClip> + 'a {
        self.clips.iter().filter(move |c| c.language == language)
    }
}

/// Nearest-motif pose → text decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseOracle {
    pub lexicon: Vec<LexEntry>,
    /// Half the minimum pairwise motif DTW distance; farther segments decode to `<unk>`.
    pub threshold: f64,
}

/// Length-normalized DTW between a segment and a motif; malformed segments are infinitely far.
fn segment_distance(segment: &[Vec<f32>], motif: &[Vec<f32>]) -> f64 {
    crate::metrics::dtw(segment, motif).unwrap_or(f64::INFINITY)
}

impl ReverseOracle {
    pub fn new(lexicon: &[LexEntry]) -> Self {
        let mut sep = f64::INFINITY;
        for (i, a) in lexicon.iter().enumerate() {
            for b in &lexicon[i + 1..] {
                sep = sep.min(segment_distance(&a.motif, &b.motif));
            }
        }
        Self {
            lexicon: lexicon.to_vec(),
            threshold: if sep.is_finite() { sep / 2.0 } else { f64::INFINITY },
        }
    }

    /// Nearest token to one segment by DTW, or `<unk>` beyond the threshold.
    pub fn nearest(&self, segment: &[Vec<f32>]) -> String {
        self.nearest_with_distance(segment).1
    }

    fn nearest_with_distance(&self, segment: &[Vec<f32>]) -> (f64, String) {
        self.lexicon
            .iter()
            .map(|e| (segment_distance(segment, &e.motif), e))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(d, e)| {
                let token = if d <= self.threshold {
                    e.token.clone()
                } else {
                    SPECIALS[crate::langgloss::UNK].to_string()
                };
                (d, token)
            })
            .unwrap_or((f64::INFINITY, SPECIALS[crate::langgloss::UNK].to_string()))
    }

    /// Splits a pose into segments of `8 ± SEGMENT_SLACK` frames, choosing the split with
    /// the smallest length-weighted nearest-motif distance, and decodes each segment. Poses too
    /// short for any such split decode as one segment.
    pub fn decode(&self, pose: &[Vec<f32>]) -> Vec<String> {
        let t = pose.len();
        if t == 0 {
            return Vec::new();
        }
        let lo = MOTIF_FRAMES - SEGMENT_SLACK;
        let hi = MOTIF_FRAMES + SEGMENT_SLACK;
        // best[i]: (summed distance, segment count, previous cut) over pose[..i].
        let mut best: Vec<Option<(f64, usize, usize)>> = vec![None; t + 1];
        best[0] = Some((0.0, 0, 0));
        for end in lo..=t {
            for len in lo..=hi.min(end) {
                let start = end - len;
                let Some((acc, count, _)) = best[start] else { continue };
                let (d, _) = self.nearest_with_distance(&pose[start..end]);
                let cand = (acc + d * len as f64, count + 1, start);
                let better = match best[end] {
                    None => true,
                    Some((b, c, _)) => cand.0 < b || (cand.0 == b && cand.1 < c),
                };
                if better {
                    best[end] = Some(cand);
                }
            }
        }
        if best[t].is_none() {
            return vec![self.nearest(pose)];
        }
        let mut cuts = vec![t];
        let mut at = t;
        while at > 0 {
            at = best[at].expect("reachable").2;
            cuts.push(at);
        }
        cuts.reverse();
        cuts.windows(2).map(|w| self.nearest_with_distance(&pose[w[0]..w[1]]).1).collect()
    }
}

/// A plausible 2D detection clip over the standard skeleton: a drifting root,
/// bones swinging around random rest angles, confidences in [0.3, 1].
pub fn clip_2d(seed: u64, id: &str, frames: usize) -> Clip2D {
    let structure = skeleton::standard_structure();
    let mut rng = seed::rng_for(seed, id);
    let bones = structure.bones();
    let lengths: Vec<f64> = bones
        .iter()
        .map(|b| {
            let base = if b.child < skeleton::RIGHT_HAND_RANGE.start { 80.0 } else { 12.0 };
            base * rng.random_range(0.7..1.3)
        })
        .collect();
    let rest: Vec<f64> = bones.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let swing: Vec<(f64, f64, f64)> = bones
        .iter()
        .map(|_| (rng.random_range(0.05..0.4), rng.random_range(0.05..0.5), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let root0 = (rng.random_range(500.0..700.0), rng.random_range(150.0..250.0));
    let frames = (0..frames)
        .map(|t| {
            let tf = t as f64;
            let mut f = Frame2D::zeros();
            let root = structure.root();
            f.x[root] = root0.0 + 5.0 * (0.1 * tf).sin();
            f.y[root] = root0.1 + 3.0 * (0.07 * tf).cos();
            for (k, b) in bones.iter().enumerate() {
                let (amp, w, ph) = swing[k];
                let angle = rest[k] + amp * (w * tf + ph).sin();
                f.x[b.child] = f.x[b.parent] + lengths[k] * angle.cos();
                f.y[b.child] = f.y[b.parent] + lengths[k] * angle.sin();
            }
            for j in 0..JOINT_COUNT {
                f.w[j] = rng.random_range(0.3..=1.0);
            }
            f
        })
        .collect();
    Clip2D {
        id: id.to_string(),
        frames,
        transcript: String::new(),
        gloss: None,
        language: String::new(),
    }
}

/// Leg and face keypoints for frame `t` of a [`clip_2d`] clip, so raw documents carry
/// everything an OpenPose run with face and hand detection writes.
pub fn raw_extras(seed: u64, id: &str, t: usize, frame: &Frame2D) -> OpenPoseExtras {
    let mut rng = seed::rng_for(seed, &format!("{id}/extras/{t}"));
    let (nx, ny) = (frame.x[skeleton::NOSE], frame.y[skeleton::NOSE]);
    let (hx, hy) = (frame.x[skeleton::NECK], frame.y[skeleton::NECK] + 200.0);
    let legs = (0..17)
        .flat_map(|k| {
            let k = k as f64;
            [hx + 30.0 * (k * 0.9).sin() + rng.random_range(-2.0..2.0), hy + 25.0 * k + rng.random_range(-2.0..2.0), rng.random_range(0.2..=0.9)]
        })
        .collect();
    let face = (0..70)
        .flat_map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 70.0;
            [nx + 35.0 * a.cos() + rng.random_range(-1.5..1.5), ny + 45.0 * a.sin() + rng.random_range(-1.5..1.5), rng.random_range(0.4..=1.0)]
        })
        .collect();
    OpenPoseExtras {
        legs: Some(legs),
        face: Some(face),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_token_one_clip_is_eight_frames() {
        let spec = SynthSpec {
            languages: vec!["ASL".into()],
            vocab_per_language: 1,
            clips: 1,
            frames_per_clip: (8, 8),
            ..SynthSpec::default()
        };
        let c = generate(&spec).unwrap();
        assert_eq!(c.clips[0].pose.len(), 8);
        assert_eq!(c.clips[0].pose[0].len(), POSE_WIDTH);
    }

    #[test]
    fn generation_is_pure() {
        let spec = SynthSpec::default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn languages_share_no_tokens() {
        let c = generate(&SynthSpec::default()).unwrap();
        let of = |lang: &str| -> BTreeSet<String> {
            c.language_clips(lang)
                .flat_map(|cl| cl.transcript.split(' ').map(str::to_string).collect::<Vec<_>>())
                .collect()
        };
        assert!(of("ASL").is_disjoint(&of("GSL")));
    }

    #[test]
    fn gloss_is_uppercase_transcript() {
        let c = generate(&SynthSpec::default()).unwrap();
        for clip in &c.clips {
            assert_eq!(clip.gloss.join(" "), clip.transcript.to_uppercase());
            assert_eq!(clip.pose.len(), MOTIF_FRAMES * clip.gloss.len());
            assert!(clip.prompt.contains(&clip.transcript));
        }
    }

    #[test]
    fn motifs_bounded_and_separated() {
        let c = generate(&SynthSpec::default()).unwrap();
        for e in &c.lexicon {
            assert!(e.motif.iter().flatten().all(|v| v.abs() <= 1.0));
        }
        assert!(min_motif_separation(&c.lexicon) > 0.0);
    }

    #[test]
    fn oracle_recovers_and_rejects() {
        let c = generate(&SynthSpec::default()).unwrap();
        let oracle = c.oracle();
        for clip in &c.clips {
            assert_eq!(oracle.decode(&clip.pose).join(" "), clip.transcript);
        }
        let far = vec![vec![50.0f32; POSE_WIDTH]; MOTIF_FRAMES];
        assert_eq!(oracle.decode(&far), vec!["<unk>"]);
    }

    #[test]
    fn clip_2d_is_valid() {
        let clip = clip_2d(3, "c", 20);
        assert_eq!(clip.frames.len(), 20);
        assert!(skeleton::validate_clip(&clip).is_empty());
    }
}
