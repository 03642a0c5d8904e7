//! Multilingual sign-language production toolkit.
//!
//! The crate covers the whole desk-scale pipeline: OpenPose keypoint ingestion and
//! cleaning ([`ingest`]), 2D→3D skeleton lifting ([`lift3d`]), the keyed clip archive
//! and `.skels` pose storage ([`storage`]), prompt templates ([`prompts`]), LangGloss
//! tokenization ([`langgloss`]), a small reverse-mode autodiff engine ([`tensor`]),
//! the encoder-decoder models with per-language switching and the prompt→LangGloss→pose
//! mode ([`signmodel`]), reward-prioritized training ([`training`]), metrics
//! ([`metrics`]) and a synthetic corpus generator ([`synth`]).

pub mod ingest;
pub mod langgloss;
pub mod lift3d;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod seed;
pub mod signmodel;
pub mod skeleton;
pub mod storage;
pub mod synth;
pub mod tensor;
pub mod training;

/// Width of one stored pose frame: 50 joints × (x, y, z).
pub const POSE_WIDTH: usize = 150;
/// Width of one model frame: the pose plus the progress counter.
pub const FRAME_WIDTH: usize = POSE_WIDTH + 1;
