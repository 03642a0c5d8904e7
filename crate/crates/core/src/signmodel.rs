//! Encoder-decoder transformer, the per-language registry, and greedy generation.
//!
//! Both stacks are pre-norm: every sublayer reads `layer_norm(x)` and adds its output
//! back onto `x`. Positions are fixed sinusoids. A pair's decoder ends either in a
//! 151-wide pose regression (150 pose values plus the progress counter) or in token
//! logits for gloss decoding.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::langgloss::{self, LanguageSet, LanguageViolation, Vocab, BOS, EOS, PAD};
use crate::seed;
use crate::storage::{self, StorageError};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, TensorError, Var};
use crate::{FRAME_WIDTH, POSE_WIDTH};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("sequence of {len} exceeds max_sent_length {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("language `{0}` is already registered")]
    DuplicateTag(String),
    #[error("malformed language tag `{0}`")]
    BadTag(String),
    #[error("pair has a {found} head, operation needs a {wanted} head")]
    WrongHead { wanted: &'static str, found: &'static str },
    #[error("token id {id} outside vocabulary of {vocab}")]
    BadToken { id: usize, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    Base,
    Large,
    Super,
    Tiny,
}

impl SizeClass {
    /// `(embed_dim, hidden_dim, ffn_dim)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            SizeClass::Base => (512, 512, 2048),
            SizeClass::Large => (1024, 1024, 4096),
            SizeClass::Super => (2048, 2048, 8192),
            SizeClass::Tiny => (32, 32, 128),
        }
    }
}

impl std::str::FromStr for SizeClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(SizeClass::Base),
            "large" => Ok(SizeClass::Large),
            "super" => Ok(SizeClass::Super),
            "tiny" => Ok(SizeClass::Tiny),
            _ => Err(ModelError::BadConfig(format!("unknown size class `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_sent_length: usize,
    pub dropout: f64,
    pub size_class: SizeClass,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_size(SizeClass::Tiny)
    }
}

impl ModelConfig {
    pub fn for_size(size_class: SizeClass) -> Self {
        let (embed_dim, hidden_dim, ffn_dim) = size_class.dims();
        Self {
            layers: 2,
            heads: 4,
            embed_dim,
            hidden_dim,
            ffn_dim,
            max_sent_length: 300,
            dropout: 0.0,
            size_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.ffn_dim != 4 * self.hidden_dim {
            return bad(format!(
                "ffn_dim {} must equal 4 x hidden_dim {} ({})",
                self.ffn_dim,
                self.hidden_dim,
                4 * self.hidden_dim
            ));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 || self.hidden_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} and hidden_dim {} must be divisible by heads {}",
                self.embed_dim, self.hidden_dim, self.heads
            ));
        }
        if self.layers == 0 || self.embed_dim == 0 || self.max_sent_length == 0 {
            return bad("layers, embed_dim and max_sent_length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Pose,
    Tokens { vocab: usize },
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::Pose => "pose",
            Head::Tokens { .. } => "token",
        }
    }

    fn width(self) -> usize {
        match self {
            Head::Pose => FRAME_WIDTH,
            Head::Tokens { vocab } => vocab,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross: Attention,
    ln3: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
enum TargetInput {
    Frames(Linear),
    Tokens { emb: ParamId, proj: Option<Linear> },
}

#[derive(Debug, Clone)]
struct Layout {
    src_emb: ParamId,
    src_proj: Option<Linear>,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    target: TargetInput,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    head: Linear,
}

struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    seed: u64,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.store.add_xavier(&format!("{name}.w"), &[fan_in, fan_out], fan_in, fan_out, self.seed),
            b: self.store.add_filled(&format!("{name}.b"), &[fan_out], 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.store.add_filled(&format!("{name}.g"), &[d], 1.0),
            b: self.store.add_filled(&format!("{name}.b"), &[d], 0.0),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn embedding(&mut self, name: &str, vocab: usize, d: usize) -> ParamId {
        self.store.add_xavier(name, &[vocab, d], vocab, d, self.seed)
    }
}

/// One encoder-decoder pair with its own parameters.
#[derive(Debug, Clone)]
pub struct EncDecPair {
    config: ModelConfig,
    src_vocab: usize,
    head: Head,
    params: ParamStore<f32>,
    layout: Layout,
}

/// Sinusoidal position table, `rows × d`.
pub fn positional_encoding(rows: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * d];
    for pos in 0..rows {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    out
}

/// Per-forward state. With `rng` present the pass is a training pass: dropout masks
/// and teacher-forcing input noise (standard deviation `input_noise`) draw from it.
/// `self_feed` is the chance that a pose input frame is replaced by the model's own
/// teacher-forced prediction of it.
pub struct Pass<'a> {
    pub tape: &'a mut Tape<f32>,
    pub bound: &'a Bound,
    pub rng: Option<&'a mut seed::Rng>,
    pub input_noise: f64,
    pub self_feed: f64,
}

impl<'a> Pass<'a> {
    pub fn eval(tape: &'a mut Tape<f32>, bound: &'a Bound) -> Self {
        Self {
            tape,
            bound,
            rng: None,
            input_noise: 0.0,
            self_feed: 0.0,
        }
    }
}

/// Caps the counter column at 1.0 as `1 − relu(1 − c)`. Past the cap the gradient
/// vanishes, so final frames are free to overshoot and land on 1.0 exactly.
fn cap_counter(tape: &mut Tape<f32>, out: Var) -> Result<Var> {
    let rows = tape.shape(out)[0];
    let pose = tape.slice(out, 1, 0, POSE_WIDTH)?;
    let c = tape.slice(out, 1, POSE_WIDTH, FRAME_WIDTH)?;
    let ones = tape.constant(vec![1.0; rows], &[rows, 1])?;
    let neg = tape.scale(c, -1.0)?;
    let room = tape.add(ones, neg)?;
    let room = tape.relu(room)?;
    let room = tape.scale(room, -1.0)?;
    let capped = tape.add(ones, room)?;
    Ok(tape.concat(&[pose, capped], 1)?)
}

impl EncDecPair {
    /// Builds and initializes a pair; every parameter draws from a generator keyed by its name.
    pub fn build(config: &ModelConfig, src_vocab: usize, head: Head, seed: u64) -> Result<Self> {
        config.validate()?;
        if src_vocab == 0 || head.width() == 0 {
            return Err(ModelError::BadConfig("vocabulary sizes must be positive".into()));
        }
        let (e, d, f) = (config.embed_dim, config.hidden_dim, config.ffn_dim);
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            seed,
        };
        let src_emb = b.embedding("enc.emb", src_vocab, e);
        let src_proj = (e != d).then(|| b.linear("enc.proj", e, d));
        let encoder = (0..config.layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attention(&format!("{p}.attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, f),
                    ff2: b.linear(&format!("{p}.ff2"), f, d),
                }
            })
            .collect();
        let enc_norm = b.norm("enc.ln", d);
        let target = match head {
            Head::Pose => TargetInput::Frames(b.linear("dec.in", FRAME_WIDTH, d)),
            Head::Tokens { vocab } => TargetInput::Tokens {
                emb: b.embedding("dec.emb", vocab, e),
                proj: (e != d).then(|| b.linear("dec.proj", e, d)),
            },
        };
        let decoder = (0..config.layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    self_attn: b.attention(&format!("{p}.self"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross: b.attention(&format!("{p}.cross"), d),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, f),
                    ff2: b.linear(&format!("{p}.ff2"), f, d),
                }
            })
            .collect();
        let dec_norm = b.norm("dec.ln", d);
        let head_layer = b.linear("head", d, head.width());
        Ok(Self {
            config: config.clone(),
            src_vocab,
            head,
            params,
            layout: Layout {
                src_emb,
                src_proj,
                encoder,
                enc_norm,
                target,
                decoder,
                dec_norm,
                head: head_layer,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn src_vocab(&self) -> usize {
        self.src_vocab
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(ModelError::EmptyInput);
        }
        if len > self.config.max_sent_length {
            return Err(ModelError::TooLong {
                len,
                max: self.config.max_sent_length,
            });
        }
        Ok(())
    }

    fn linear(&self, p: &mut Pass, l: Linear, x: Var) -> Result<Var> {
        let y = p.tape.matmul(x, p.bound.get(l.w))?;
        Ok(p.tape.add(y, p.bound.get(l.b))?)
    }

    fn norm(&self, p: &mut Pass, n: Norm, x: Var) -> Result<Var> {
        Ok(p.tape.layer_norm(x, p.bound.get(n.g), p.bound.get(n.b))?)
    }

    fn dropout(&self, p: &mut Pass, x: Var) -> Result<Var> {
        let rate = self.config.dropout;
        let Some(rng) = p.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = (1.0 / (1.0 - rate)) as f32;
        let shape = p.tape.shape(x).to_vec();
        let mask: Vec<f32> = (0..p.tape.value(x).len())
            .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
            .collect();
        let m = p.tape.constant(mask, &shape)?;
        Ok(p.tape.mul(x, m)?)
    }

    fn attention(&self, p: &mut Pass, a: Attention, xq: Var, xkv: Var, causal: bool) -> Result<Var> {
        let heads = self.config.heads;
        let d = self.config.hidden_dim;
        let dk = d / heads;
        let q = self.linear(p, a.q, xq)?;
        let k = self.linear(p, a.k, xkv)?;
        let v = self.linear(p, a.v, xkv)?;
        let kt = p.tape.transpose(k)?;
        let (tq, tk) = (p.tape.shape(q)[0], p.tape.shape(k)[0]);
        let mask = if causal {
            let m: Vec<f32> = (0..tq * tk)
                .map(|i| if i % tk > i / tk { -1e9 } else { 0.0 })
                .collect();
            Some(p.tape.constant(m, &[tq, tk])?)
        } else {
            None
        };
        let scale = 1.0 / (dk as f32).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = p.tape.slice(q, 1, h * dk, (h + 1) * dk)?;
            let kh = p.tape.slice(kt, 0, h * dk, (h + 1) * dk)?;
            let vh = p.tape.slice(v, 1, h * dk, (h + 1) * dk)?;
            let s = p.tape.matmul(qh, kh)?;
            let mut s = p.tape.scale(s, scale)?;
            if let Some(m) = mask {
                s = p.tape.add(s, m)?;
            }
            let w = p.tape.softmax(s)?;
            outs.push(p.tape.matmul(w, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { p.tape.concat(&outs, 1)? };
        self.linear(p, a.o, joined)
    }

    fn feed_forward(&self, p: &mut Pass, ff1: Linear, ff2: Linear, x: Var) -> Result<Var> {
        let h = self.linear(p, ff1, x)?;
        let h = p.tape.relu(h)?;
        let h = self.dropout(p, h)?;
        self.linear(p, ff2, h)
    }

    fn add_positions(&self, p: &mut Pass, x: Var) -> Result<Var> {
        let rows = p.tape.shape(x)[0];
        let d = self.config.hidden_dim;
        let pe = p.tape.constant(positional_encoding(rows, d), &[rows, d])?;
        Ok(p.tape.add(x, pe)?)
    }

    fn check_ids(&self, ids: &[usize], vocab: usize) -> Result<()> {
        match ids.iter().find(|&&id| id >= vocab) {
            Some(&id) => Err(ModelError::BadToken { id, vocab }),
            None => Ok(()),
        }
    }

    /// Source ids to memory, `U × hidden_dim`; every position sees the whole source.
    pub fn encode(&self, p: &mut Pass, ids: &[usize]) -> Result<Var> {
        self.check_len(ids.len())?;
        self.check_ids(ids, self.src_vocab)?;
        let l = &self.layout;
        let mut x = p.tape.embedding(p.bound.get(l.src_emb), ids)?;
        if let Some(proj) = l.src_proj {
            x = self.linear(p, proj, x)?;
        }
        x = self.add_positions(p, x)?;
        x = self.dropout(p, x)?;
        for layer in &l.encoder {
            let h = self.norm(p, layer.ln1, x)?;
            let h = self.attention(p, layer.attn, h, h, false)?;
            let h = self.dropout(p, h)?;
            x = p.tape.add(x, h)?;
            let h = self.norm(p, layer.ln2, x)?;
            let h = self.feed_forward(p, layer.ff1, layer.ff2, h)?;
            let h = self.dropout(p, h)?;
            x = p.tape.add(x, h)?;
        }
        self.norm(p, l.enc_norm, x)
    }

    fn decode_stack(&self, p: &mut Pass, mut x: Var, memory: Var) -> Result<Var> {
        if p.tape.shape(memory).first().copied().unwrap_or(0) == 0 {
            return Err(ModelError::EmptyInput);
        }
        let l = &self.layout;
        x = self.add_positions(p, x)?;
        x = self.dropout(p, x)?;
        for layer in &l.decoder {
            let h = self.norm(p, layer.ln1, x)?;
            let h = self.attention(p, layer.self_attn, h, h, true)?;
            let h = self.dropout(p, h)?;
            x = p.tape.add(x, h)?;
            let h = self.norm(p, layer.ln2, x)?;
            let h = self.attention(p, layer.cross, h, memory, false)?;
            let h = self.dropout(p, h)?;
            x = p.tape.add(x, h)?;
            let h = self.norm(p, layer.ln3, x)?;
            let h = self.feed_forward(p, layer.ff1, layer.ff2, h)?;
            let h = self.dropout(p, h)?;
            x = p.tape.add(x, h)?;
        }
        let x = self.norm(p, l.dec_norm, x)?;
        self.linear(p, l.head, x)
    }

    /// Pose decoder over `w × 151` input frames; row `i` predicts frame `i + 1`.
    pub fn decode_frames(&self, p: &mut Pass, frames: Var, memory: Var) -> Result<Var> {
        let TargetInput::Frames(input) = self.layout.target else {
            return Err(self.wrong_head("pose"));
        };
        self.check_len(p.tape.shape(frames)[0])?;
        let x = self.linear(p, input, frames)?;
        let out = self.decode_stack(p, x, memory)?;
        cap_counter(p.tape, out)
    }

    /// Token decoder over `w` input ids; row `i` holds logits for token `i + 1`.
    pub fn decode_tokens(&self, p: &mut Pass, ids: &[usize], memory: Var) -> Result<Var> {
        let (TargetInput::Tokens { emb, proj }, Head::Tokens { vocab }) = (&self.layout.target, self.head) else {
            return Err(self.wrong_head("token"));
        };
        self.check_len(ids.len())?;
        self.check_ids(ids, vocab)?;
        let mut x = p.tape.embedding(p.bound.get(*emb), ids)?;
        if let Some(proj) = *proj {
            x = self.linear(p, proj, x)?;
        }
        self.decode_stack(p, x, memory)
    }

    fn wrong_head(&self, wanted: &'static str) -> ModelError {
        ModelError::WrongHead {
            wanted,
            found: self.head.name(),
        }
    }

    /// Teacher-forced pose loss: inputs are the zero frame then `target[..T-1]`.
    /// Returns `(mse loss, predictions T × 151)`.
    pub fn pose_loss(&self, p: &mut Pass, src: &[usize], target: &[Vec<f32>]) -> Result<(Var, Var)> {
        self.check_len(target.len())?;
        let memory = self.encode(p, src)?;
        let t = target.len();
        let mut inputs = vec![0.0f32; FRAME_WIDTH];
        for row in &target[..t - 1] {
            inputs.extend_from_slice(row);
        }
        if let (Some(rng), true) = (p.rng.as_deref_mut(), p.input_noise > 0.0) {
            let noise = Normal::new(0.0, p.input_noise).map_err(|e| ModelError::BadConfig(e.to_string()))?;
            for row in inputs.chunks_mut(FRAME_WIDTH).skip(1) {
                for v in row[..POSE_WIDTH].iter_mut() {
                    *v += noise.sample(rng) as f32;
                }
            }
        }
        if let (Some(rng), true) = (p.rng.as_deref_mut(), p.self_feed > 0.0) {
            let feed: Vec<bool> = (1..t).map(|_| rng.random_bool(p.self_feed.min(1.0))).collect();
            if feed.iter().any(|f| *f) {
                let frames = p.tape.constant(inputs.clone(), &[t, FRAME_WIDTH])?;
                let first = self.decode_frames(p, frames, memory)?;
                let own = p.tape.value(first);
                for (i, _) in feed.iter().enumerate().filter(|(_, f)| **f) {
                    let row = i + 1;
                    inputs[row * FRAME_WIDTH..(row + 1) * FRAME_WIDTH].copy_from_slice(&own[i * FRAME_WIDTH..(i + 1) * FRAME_WIDTH]);
                }
            }
        }
        let frames = p.tape.constant(inputs, &[t, FRAME_WIDTH])?;
        let pred = self.decode_frames(p, frames, memory)?;
        let tgt = p.tape.constant(target.concat(), &[t, FRAME_WIDTH])?;
        Ok((p.tape.mse(pred, tgt)?, pred))
    }

    /// Teacher-forced token loss for a framed target `<bos> … <eos>`.
    /// Returns `(cross-entropy loss, logits)`.
    pub fn gloss_loss(&self, p: &mut Pass, src: &[usize], framed_target: &[usize]) -> Result<(Var, Var)> {
        if framed_target.len() < 2 {
            return Err(ModelError::EmptyInput);
        }
        let memory = self.encode(p, src)?;
        let n = framed_target.len();
        let logits = self.decode_tokens(p, &framed_target[..n - 1], memory)?;
        Ok((p.tape.cross_entropy(logits, &framed_target[1..])?, logits))
    }

    /// Memory rows for `ids`, computed without gradients.
    pub fn memory(&self, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut p = Pass::eval(&mut tape, &bound);
        let m = self.encode(&mut p, ids)?;
        Ok(rows_of(&tape, m))
    }

    /// Next 151-wide frame after `previous` (frame 0 is the zero pose with counter 0).
    pub fn decode_pose_step(&self, previous: &[Vec<f32>], memory: &[Vec<f32>]) -> Result<Vec<f32>> {
        if memory.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        self.check_len(previous.len())?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut p = Pass::eval(&mut tape, &bound);
        let m = p.tape.constant(memory.concat(), &[memory.len(), memory[0].len()])?;
        let f = p.tape.constant(previous.concat(), &[previous.len(), FRAME_WIDTH])?;
        let out = self.decode_frames(&mut p, f, m)?;
        Ok(last_row(&tape, out))
    }

    /// Greedy rollout until the predicted counter reaches 1.0 or `max_sent_length` frames;
    /// returns 150-wide frames.
    pub fn generate_pose(&self, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        if self.head != Head::Pose {
            return Err(self.wrong_head("pose"));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut p = Pass::eval(&mut tape, &bound);
        let memory = self.encode(&mut p, ids)?;
        let mark = p.tape.len();
        let mut frames: Vec<f32> = vec![0.0; FRAME_WIDTH];
        let mut out = Vec::new();
        while out.len() < self.config.max_sent_length {
            let w = frames.len() / FRAME_WIDTH;
            let f = p.tape.constant(frames.clone(), &[w, FRAME_WIDTH])?;
            let pred = self.decode_frames(&mut p, f, memory)?;
            let next = last_row(p.tape, pred);
            p.tape.truncate(mark);
            let counter = next[POSE_WIDTH];
            out.push(next[..POSE_WIDTH].to_vec());
            frames.extend_from_slice(&next);
            if counter >= 1.0 || !counter.is_finite() {
                break;
            }
        }
        Ok(out)
    }

    /// Greedy argmax decoding from `<bos>` until `<eos>` or `max_sent_length` tokens.
    /// `<pad>` and `<bos>` never win; ties go to the lowest id. `<eos>` is not returned.
    pub fn decode_gloss(&self, memory: &[Vec<f32>]) -> Result<Vec<usize>> {
        if memory.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut p = Pass::eval(&mut tape, &bound);
        let m = p.tape.constant(memory.concat(), &[memory.len(), memory[0].len()])?;
        self.greedy_tokens(&mut p, m)
    }

    fn greedy_tokens(&self, p: &mut Pass, memory: Var) -> Result<Vec<usize>> {
        let mark = p.tape.len();
        let mut ids = vec![BOS];
        let mut out = Vec::new();
        while out.len() < self.config.max_sent_length {
            let logits = self.decode_tokens(p, &ids, memory)?;
            let row = last_row(p.tape, logits);
            p.tape.truncate(mark);
            let next = argmax_token(&row);
            if next == EOS {
                break;
            }
            out.push(next);
            ids.push(next);
            if ids.len() > self.config.max_sent_length {
                break;
            }
        }
        Ok(out)
    }

    /// Encodes `ids` and decodes a token sequence.
    pub fn generate_tokens(&self, ids: &[usize]) -> Result<Vec<usize>> {
        if !matches!(self.head, Head::Tokens { .. }) {
            return Err(self.wrong_head("token"));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let mut p = Pass::eval(&mut tape, &bound);
        let memory = self.encode(&mut p, ids)?;
        self.greedy_tokens(&mut p, memory)
    }

    /// Serializes the parameters as an archive.
    pub fn to_archive(&self) -> Result<Vec<u8>> {
        Ok(storage::write_archive(&self.params.to_archive_entries())?)
    }

    /// Rebuilds the pair's shape from `config` and loads parameters from `bytes`.
    pub fn from_archive(config: &ModelConfig, src_vocab: usize, head: Head, bytes: &[u8]) -> Result<Self> {
        let mut pair = Self::build(config, src_vocab, head, 0)?;
        let entries = storage::read_archive(bytes)?;
        pair.params.load_archive_entries(&entries)?;
        Ok(pair)
    }
}

/// Highest logit among ids other than `<pad>` and `<bos>`; the lowest id wins ties.
pub fn argmax_token(logits: &[f32]) -> usize {
    let mut best = EOS;
    for (i, v) in logits.iter().enumerate() {
        if i == PAD || i == BOS {
            continue;
        }
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

fn rows_of(tape: &Tape<f32>, v: Var) -> Vec<Vec<f32>> {
    let width = *tape.shape(v).last().unwrap_or(&1);
    tape.value(v).chunks(width).map(<[f32]>::to_vec).collect()
}

fn last_row(tape: &Tape<f32>, v: Var) -> Vec<f32> {
    let width = *tape.shape(v).last().unwrap_or(&1);
    let vals = tape.value(v);
    vals[vals.len() - width..].to_vec()
}

/// Language tag → independent encoder-decoder pair.
#[derive(Debug, Clone, Default)]
pub struct LanguageRegistry {
    pairs: BTreeMap<String, EncDecPair>,
}

impl LanguageRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tag: &str, pair: EncDecPair) -> Result<()> {
        if !langgloss::is_well_formed_tag(tag) {
            return Err(ModelError::BadTag(tag.to_string()));
        }
        if self.pairs.contains_key(tag) {
            return Err(ModelError::DuplicateTag(tag.to_string()));
        }
        self.pairs.insert(tag.to_string(), pair);
        Ok(())
    }

    pub fn remove(&mut self, tag: &str) -> Result<EncDecPair> {
        self.pairs
            .remove(tag)
            .ok_or_else(|| ModelError::UnknownLanguage(tag.to_string()))
    }

    pub fn get(&self, tag: &str) -> Result<&EncDecPair> {
        self.pairs
            .get(tag)
            .ok_or_else(|| ModelError::UnknownLanguage(tag.to_string()))
    }

    pub fn get_mut(&mut self, tag: &str) -> Result<&mut EncDecPair> {
        self.pairs
            .get_mut(tag)
            .ok_or_else(|| ModelError::UnknownLanguage(tag.to_string()))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn checksums(&self) -> BTreeMap<String, u64> {
        self.pairs.iter().map(|(k, v)| (k.clone(), v.checksum())).collect()
    }
}

/// Greedy pose generation with the pair registered for `language`.
pub fn generate_pose(registry: &LanguageRegistry, language: &str, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
    registry.get(language)?.generate_pose(ids)
}

/// The shared two-stage prompt → LangGloss → pose model.
#[derive(Debug, Clone)]
pub struct PromptPipeline {
    pub gloss_stage: EncDecPair,
    pub pose_stage: EncDecPair,
    pub prompt_vocab: Vocab,
    pub gloss_vocab: Vocab,
    pub languages: LanguageSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOutput {
    pub langgloss: Vec<String>,
    pub pose: Vec<Vec<f32>>,
    pub violations: Vec<LanguageViolation>,
}

impl PromptPipeline {
    /// Runs both stages; violations against `expected` are reported, not fatal.
    pub fn generate(&self, prompt: &str, expected: &str) -> Result<PromptOutput> {
        let tokens = langgloss::tokenize(prompt, self.prompt_vocab.case_sensitive());
        let src = self.prompt_vocab.encode(&tokens).ids;
        let gloss_ids = self.gloss_stage.generate_tokens(&src)?;
        self.finish(&gloss_ids, expected)
    }

    /// Stage two on already-decoded LangGloss ids (without framing).
    pub fn finish(&self, gloss_ids: &[usize], expected: &str) -> Result<PromptOutput> {
        let langgloss = self.gloss_vocab.decode(gloss_ids);
        let violations = langgloss::detect_violation(&langgloss, expected, &self.languages);
        let mut framed = Vec::with_capacity(gloss_ids.len() + 2);
        framed.push(BOS);
        framed.extend_from_slice(gloss_ids);
        framed.push(EOS);
        framed.truncate(self.pose_stage.config().max_sent_length);
        let pose = self.pose_stage.generate_pose(&framed)?;
        Ok(PromptOutput {
            langgloss,
            pose,
            violations,
        })
    }
}
