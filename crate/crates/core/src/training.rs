//! Reward/loss definitions, the Priority Learning Channel sampler, and the training loop.
//!
//! Per-sample priority is the mean absolute error of the sample's last prediction (for
//! token targets, its cross-entropy). With PLC on, batches are drawn with replacement
//! from `P(i) ∝ max(r(i), ε)^η`; otherwise they are uniform draws with replacement.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::signmodel::{EncDecPair, ModelError, Pass};
use crate::tensor::{self, Tape, TensorError};

/// Lower bound applied to every priority before exponentiation.
pub const PRIORITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch} on batch {batch:?}")]
    DivergedLoss { epoch: usize, batch: Vec<usize> },
    #[error("sample {index} has a {found} target, the pair needs {wanted}")]
    TargetKind {
        index: usize,
        found: &'static str,
        wanted: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewSamplePriority {
    MaxSeen,
    MeanSeen,
}

/// `Mse` minimizes the loss; `Rl` maximizes the reward `−mse`, which descends the same gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "MSE", alias = "mse")]
    Mse,
    #[serde(rename = "RL", alias = "rl")]
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RLConfig {
    pub eta: f64,
    pub lr: f64,
    /// Inverse-time decay: `lr_t = max(lr_floor, lr / (1 + lr_decay · step))`.
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub plc_enabled: bool,
    pub new_sample_priority: NewSamplePriority,
    pub loss_mode: LossMode,
    pub optimizer: Optimizer,
    /// Standard deviation of Gaussian noise on teacher-forced pose inputs.
    pub input_noise: f64,
    /// Chance that a teacher-forced pose input is replaced by the model's own prediction.
    pub self_feed: f64,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lr: 1e-3,
            lr_decay: 0.0,
            lr_floor: 0.0,
            batch_size: 16,
            epochs: 1,
            seed: 0,
            plc_enabled: false,
            new_sample_priority: NewSamplePriority::MaxSeen,
            loss_mode: LossMode::Mse,
            optimizer: Optimizer::Sgd,
            input_noise: 0.0,
            self_feed: 0.0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta {} must be finite and >= 0", self.eta));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr {} must be finite and >= 0", self.lr));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay >= 0.0 && self.lr_floor.is_finite() && self.lr_floor >= 0.0) {
            return bad("lr_decay and lr_floor must be finite and >= 0".into());
        }
        if !(self.input_noise.is_finite() && self.input_noise >= 0.0) {
            return bad(format!("input_noise {} must be finite and >= 0", self.input_noise));
        }
        if !(0.0..=1.0).contains(&self.self_feed) {
            return bad(format!("self_feed {} must lie in [0, 1]", self.self_feed));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        (self.lr / (1.0 + self.lr_decay * step as f64)).max(self.lr_floor.min(self.lr))
    }
}

fn check_shapes(pred: &[f32], target: &[f32]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::ShapeMismatch(pred.len(), target.len()));
    }
    Ok(())
}

/// `(1/N) Σ (pred − target)²`.
pub fn mse_loss(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_shapes(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (f64::from(*p) - f64::from(*t)).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `−(1/N) Σ (pred − target)²`.
pub fn reward_of_batch(pred: &[f32], target: &[f32]) -> Result<f64> {
    Ok(-mse_loss(pred, target)?)
}

/// Mean absolute error over every output scalar of one sample.
pub fn sample_priority(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_shapes(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (f64::from(*p) - f64::from(*t)).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// `P(i) = max(r(i), ε)^η / Σ_j max(r(j), ε)^η`; all-zero rewards give the uniform vector.
pub fn plc_probabilities(rewards: &[f64], eta: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    if eta == 0.0 {
        return vec![1.0 / rewards.len() as f64; rewards.len()];
    }
    let logs: Vec<f64> = rewards
        .iter()
        .map(|r| eta * r.max(PRIORITY_EPSILON).ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// `batch_size` independent draws with replacement.
pub fn plc_sample(p: &[f64], batch_size: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let dist = WeightedIndex::new(p).expect("probabilities must be finite, non-negative and not all zero");
    (0..batch_size).map(|_| dist.sample(rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Rows of 151 values: pose plus counter.
    Frames(Vec<Vec<f32>>),
    /// Framed token ids `<bos> … <eos>`.
    Tokens(Vec<usize>),
}

impl Target {
    fn kind(&self) -> &'static str {
        match self {
            Target::Frames(_) => "pose",
            Target::Tokens(_) => "token",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub src: Vec<usize>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedDataset {
    samples: Vec<Sample>,
    rewards: Vec<f64>,
    last_update: Vec<Option<usize>>,
}

impl PrioritizedDataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        let n = samples.len();
        Self {
            samples,
            rewards: vec![0.0; n],
            last_update: vec![None; n],
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn last_update(&self) -> &[Option<usize>] {
        &self.last_update
    }

    /// Stored priorities with unseen samples filled per `policy` (1.0 before anything is seen).
    pub fn priorities(&self, policy: NewSamplePriority) -> Vec<f64> {
        let seen: Vec<f64> = self
            .rewards
            .iter()
            .zip(&self.last_update)
            .filter(|(_, u)| u.is_some())
            .map(|(r, _)| *r)
            .collect();
        let fill = if seen.is_empty() {
            1.0
        } else {
            match policy {
                NewSamplePriority::MaxSeen => seen.iter().copied().fold(0.0, f64::max),
                NewSamplePriority::MeanSeen => seen.iter().sum::<f64>() / seen.len() as f64,
            }
        };
        self.rewards
            .iter()
            .zip(&self.last_update)
            .map(|(r, u)| if u.is_some() { *r } else { fill })
            .collect()
    }

    pub fn set_priority(&mut self, index: usize, priority: f64, epoch: usize) {
        self.rewards[index] = if priority.is_finite() { priority.max(0.0) } else { 0.0 };
        self.last_update[index] = Some(epoch);
    }

    /// Sampling distribution under `config`.
    pub fn distribution(&self, config: &RLConfig) -> Vec<f64> {
        if config.plc_enabled {
            plc_probabilities(&self.priorities(config.new_sample_priority), config.eta)
        } else {
            vec![1.0 / self.len() as f64; self.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_reward: f64,
    pub dtw_dev: Option<f64>,
    pub wall_ms: Option<u64>,
    pub lr: f64,
    /// Sampling distribution at the start of the epoch.
    pub distribution: Vec<f64>,
    /// Times each sample was drawn during the epoch.
    pub draws: Vec<usize>,
}

/// What the per-epoch hook reports back.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochVerdict {
    pub dtw: Option<f64>,
    pub stop: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Record wall-clock time per epoch (makes logs run-dependent).
    pub timing: bool,
}

/// Forward pass of one sample on a shared tape; returns `(loss, priority)` vars/values.
fn sample_forward(pair: &EncDecPair, p: &mut Pass, s: &Sample, index: usize) -> Result<(tensor::Var, f64)> {
    match (&s.target, pair.head()) {
        (Target::Frames(frames), crate::signmodel::Head::Pose) => {
            let (loss, pred) = pair.pose_loss(p, &s.src, frames)?;
            let flat: Vec<f32> = frames.concat();
            let priority = sample_priority(p.tape.value(pred), &flat)?;
            Ok((loss, priority))
        }
        (Target::Tokens(ids), crate::signmodel::Head::Tokens { .. }) => {
            let (loss, _) = pair.gloss_loss(p, &s.src, ids)?;
            Ok((loss, f64::from(p.tape.scalar(loss))))
        }
        (t, _) => Err(TrainError::TargetKind {
            index,
            found: t.kind(),
            wanted: match pair.head() {
                crate::signmodel::Head::Pose => "pose",
                _ => "token",
            },
        }),
    }
}

/// Trains `pair` in place. `hook` runs after every epoch and may stop training early.
pub fn train(
    pair: &mut EncDecPair,
    data: &mut PrioritizedDataset,
    config: &RLConfig,
    options: &TrainOptions,
    mut hook: impl FnMut(usize, &EncDecPair) -> EpochVerdict,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = data.len();
    let steps = n.div_ceil(config.batch_size);
    let mut rng = seed::rng_for(config.seed, "batches");
    let mut pass_rng = seed::rng_for(config.seed, "pass");
    let mut step = 0usize;
    let mut adam = (config.optimizer == Optimizer::Adam).then(|| tensor::Adam::new(pair.params()));
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let snapshot = data.distribution(config);
        let mut draws = vec![0usize; n];
        let (mut loss_sum, mut count) = (0.0f64, 0usize);
        let lr = config.lr_at(step);
        for _ in 0..steps {
            let p = data.distribution(config);
            let batch = if config.plc_enabled {
                plc_sample(&p, config.batch_size, &mut rng)
            } else {
                (0..config.batch_size).map(|_| rng.random_range(0..n)).collect()
            };
            let mut tape = Tape::new();
            let bound = pair.params().bind(&mut tape);
            let mut total = None;
            let mut fresh = Vec::with_capacity(batch.len());
            {
                let mut pass = Pass {
                    tape: &mut tape,
                    bound: &bound,
                    rng: Some(&mut pass_rng),
                    input_noise: config.input_noise,
                    self_feed: config.self_feed,
                };
                let inv = 1.0 / batch.len() as f32;
                for &i in &batch {
                    let (loss, priority) = sample_forward(pair, &mut pass, &data.samples[i], i)?;
                    let value = f64::from(pass.tape.scalar(loss));
                    if !value.is_finite() {
                        return Err(TrainError::DivergedLoss { epoch, batch });
                    }
                    fresh.push((i, priority, value));
                    let scaled = pass.tape.scale(loss, inv)?;
                    total = Some(match total {
                        None => scaled,
                        Some(t) => pass.tape.add(t, scaled)?,
                    });
                }
            }
            let total = total.expect("batch is non-empty");
            tape.backward(total)?;
            let lr_t = config.lr_at(step);
            let store = pair.params_mut();
            store.accumulate_grads(&tape, &bound);
            match adam.as_mut() {
                Some(a) => a.step(store, lr_t)?,
                None => tensor::sgd_step(store, lr_t)?,
            }
            step += 1;
            for (i, priority, value) in fresh {
                draws[i] += 1;
                loss_sum += value;
                count += 1;
                data.set_priority(i, priority, epoch);
            }
        }
        let mean_loss = loss_sum / count.max(1) as f64;
        let verdict = hook(epoch, pair);
        log.push(EpochLog {
            epoch,
            mean_loss,
            mean_reward: -mean_loss,
            dtw_dev: verdict.dtw,
            wall_ms: options.timing.then(|| start.elapsed().as_millis() as u64),
            lr,
            distribution: snapshot,
            draws,
        });
        if verdict.stop {
            break;
        }
    }
    Ok(log)
}
