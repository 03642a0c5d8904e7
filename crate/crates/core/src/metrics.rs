//! BLEU-n, ROUGE-L, length-normalized DTW, and the back-translation harness.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::POSE_WIDTH;

/// Floor applied to every n-gram precision before the geometric mean.
pub const PRECISION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("bleu order {0} outside 1..=4")]
    BadOrder(usize),
    #[error("dtw needs non-empty clips")]
    EmptyClip,
    #[error("dtw frames must be {expected} wide, found {found}")]
    BadWidth { expected: usize, found: usize },
    #[error("no reverse model supplied")]
    MissingReverseModel,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("forward model failed on `{id}`: {message}")]
    Forward { id: String, message: String },
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], k: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= k {
        for w in tokens.windows(k) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped k-gram precision, floored.
fn precision<S: AsRef<str>>(candidate: &[S], reference: &[S], k: usize) -> f64 {
    let cand = ngram_counts(candidate, k);
    let total: usize = cand.values().sum();
    if total == 0 {
        return PRECISION_FLOOR;
    }
    let refs = ngram_counts(reference, k);
    let matched: usize = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched as f64 / total as f64).max(PRECISION_FLOOR)
}

/// Sentence BLEU: geometric mean of floored clipped precisions for orders 1..=n
/// times the brevity penalty `min(1, e^(1 − |ref| / |cand|))`. Empty candidates score 0.
pub fn bleu_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BadOrder(n));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let log_mean = (1..=n).map(|k| precision(candidate, reference, k).ln()).sum::<f64>() / n as f64;
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).exp().min(1.0);
    Ok((bp * log_mean.exp()).clamp(0.0, 1.0))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L F1.
pub fn rouge<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn frame_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_clip(clip: &[Vec<f32>]) -> Result<(), MetricError> {
    if clip.is_empty() {
        return Err(MetricError::EmptyClip);
    }
    match clip.iter().find(|f| f.len() != POSE_WIDTH) {
        Some(f) => Err(MetricError::BadWidth {
            expected: POSE_WIDTH,
            found: f.len(),
        }),
        None => Ok(()),
    }
}

/// Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1), anchored at both
/// corners, divided by the length of the optimal path. Equal costs prefer the shorter path.
pub fn dtw(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<f64, MetricError> {
    check_clip(a)?;
    check_clip(b)?;
    Ok(dtw_unchecked(a, b))
}

fn dtw_unchecked(a: &[Vec<f32>], b: &[Vec<f32>]) -> f64 {
    let (table, _) = dtw_table(a, b);
    let (cost, len, _) = table[table.len() - 1];
    cost / len as f64
}

/// Predecessor of a cell on the optimal path.
#[derive(Clone, Copy, PartialEq)]
enum Step {
    Start,
    Up,
    Left,
    Diag,
}

/// (cost, path length, predecessor) per cell, row-major; costs compare lexicographically.
fn dtw_table(a: &[Vec<f32>], b: &[Vec<f32>]) -> (Vec<(f64, usize, Step)>, usize) {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![(f64::INFINITY, usize::MAX, Step::Start); n * m];
    for i in 0..n {
        for j in 0..m {
            let d = frame_distance(&a[i], &b[j]);
            let (cost, len, step) = if i == 0 && j == 0 {
                (0.0, 0, Step::Start)
            } else {
                let mut best = (f64::INFINITY, usize::MAX, Step::Start);
                let mut consider = |c: (f64, usize, Step), step: Step| {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = (c.0, c.1, step);
                    }
                };
                if i > 0 {
                    consider(table[(i - 1) * m + j], Step::Up);
                }
                if j > 0 {
                    consider(table[i * m + j - 1], Step::Left);
                }
                if i > 0 && j > 0 {
                    consider(table[(i - 1) * m + j - 1], Step::Diag);
                }
                best
            };
            table[i * m + j] = (cost + d, len + 1, step);
        }
    }
    (table, m)
}

/// A DTW result with its warping path and the local frame distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Same value as [`dtw`].
    pub cost: f64,
    /// Aligned `(i, j)` index pairs from `(0, 0)` to the last frames.
    pub path: Vec<(usize, usize)>,
    /// `local[i][j]` is the distance between `a[i]` and `b[j]`.
    pub local: Vec<Vec<f64>>,
}

pub fn dtw_alignment(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<Alignment, MetricError> {
    check_clip(a)?;
    check_clip(b)?;
    let (table, m) = dtw_table(a, b);
    let (cost, len, _) = table[table.len() - 1];
    let (mut i, mut j) = (a.len() - 1, m - 1);
    let mut path = vec![(i, j)];
    loop {
        match table[i * m + j].2 {
            Step::Start => break,
            Step::Up => i -= 1,
            Step::Left => j -= 1,
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    let local = a.iter().map(|x| b.iter().map(|y| frame_distance(x, y)).collect()).collect();
    Ok(Alignment {
        cost: cost / len as f64,
        path,
        local,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge: f64,
    pub dtw: f64,
}

/// One scored item: back-translated tokens against the source sentence, and the
/// produced pose against the ground-truth pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    pub produced: Vec<Vec<f32>>,
    pub truth: Vec<Vec<f32>>,
}

/// Mean of per-item sentence scores.
pub fn score_report(items: &[Scored]) -> Result<ScoreReport, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyEvalSet);
    }
    let mut r = ScoreReport::default();
    for it in items {
        r.bleu_1 += bleu_n(&it.candidate, &it.reference, 1)?;
        r.bleu_2 += bleu_n(&it.candidate, &it.reference, 2)?;
        r.bleu_3 += bleu_n(&it.candidate, &it.reference, 3)?;
        r.bleu_4 += bleu_n(&it.candidate, &it.reference, 4)?;
        r.rouge += rouge(&it.candidate, &it.reference);
        r.dtw += dtw(&it.produced, &it.truth)?;
    }
    let n = items.len() as f64;
    for v in [&mut r.bleu_1, &mut r.bleu_2, &mut r.bleu_3, &mut r.bleu_4, &mut r.rouge, &mut r.dtw] {
        *v /= n;
    }
    Ok(r)
}

/// Text → pose direction of a back-translation run.
pub trait ForwardModel {
    fn produce(&self, item: &EvalItem) -> Result<Vec<Vec<f32>>, String>;
}

/// Pose → text direction of a back-translation run.
pub trait ReverseModel {
    fn transcribe(&self, pose: &[Vec<f32>]) -> Vec<String>;
}

impl ReverseModel for crate::synth::ReverseOracle {
    fn transcribe(&self, pose: &[Vec<f32>]) -> Vec<String> {
        self.decode(pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub language: String,
    pub transcript: String,
    pub prompt: String,
    pub pose: Vec<Vec<f32>>,
}

/// Produces poses with `forward`, transcribes them with `reverse`, and scores both
/// directions against the eval set. Metric tokens are lowercased whitespace splits.
pub fn back_translation_eval(
    forward: &dyn ForwardModel,
    reverse: Option<&dyn ReverseModel>,
    items: &[EvalItem],
) -> Result<ScoreReport, MetricError> {
    let reverse = reverse.ok_or(MetricError::MissingReverseModel)?;
    let scored = items
        .iter()
        .map(|it| {
            let produced = forward.produce(it).map_err(|message| MetricError::Forward {
                id: it.id.clone(),
                message,
            })?;
            Ok(Scored {
                candidate: reverse.transcribe(&produced).iter().map(|t| t.to_lowercase()).collect(),
                reference: it.transcript.split_whitespace().map(str::to_lowercase).collect(),
                produced,
                truth: it.pose.clone(),
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    score_report(&scored)
}
