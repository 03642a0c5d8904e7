//! Browser bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or a JSON string and returns a JSON string;
//! failures come back as `{"error": "..."}`.

use serde::Serialize;
use signforge::lift3d::{self, LiftParams};
use signforge::metrics;
use signforge::seed;
use signforge::skeleton;
use signforge::synth::{self, SynthSpec};
use signforge::training;
use wasm_bindgen::prelude::*;

fn reply<T: Serialize, E: std::fmt::Display>(r: Result<T, E>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e)),
        Err(e) => error_json(&e),
    }
}

fn error_json(e: &dyn std::fmt::Display) -> String {
    serde_json::json!({ "error": e.to_string() }).to_string()
}

#[derive(Serialize)]
struct LiftView {
    bones: Vec<(usize, usize)>,
    /// Per frame, per joint `(x, y)` in pixels.
    frames_2d: Vec<Vec<(f64, f64)>>,
    /// Per frame, per joint `(x, y, z)`.
    frames_3d: Vec<Vec<(f64, f64, f64)>>,
    canonical: Vec<f64>,
}

/// Lifts a synthetic 2D clip and returns both skeleton sequences.
#[wasm_bindgen]
pub fn lift_demo(seed: u32, frames: u32, percentile: f64, sigma: f64) -> String {
    let structure = skeleton::standard_structure();
    let clip = synth::clip_2d(u64::from(seed), "demo", frames.clamp(1, 400) as usize);
    let params = LiftParams {
        percentile,
        noise_sigma: sigma,
        rng_seed: u64::from(seed),
    };
    reply(lift3d::lift_clip(&clip, &structure, &params).map(|r| LiftView {
        bones: structure.bones().iter().map(|b| (b.parent, b.child)).collect(),
        frames_2d: clip
            .frames
            .iter()
            .map(|f| f.x.iter().zip(&f.y).map(|(x, y)| (*x, *y)).collect())
            .collect(),
        frames_3d: r
            .pose
            .frames
            .iter()
            .map(|f| (0..f.x.len()).map(|j| (f.x[j], f.y[j], f.z[j])).collect())
            .collect(),
        canonical: r.canonical,
    }))
}

#[derive(Serialize)]
struct PlcView {
    probabilities: Vec<f64>,
    counts: Vec<usize>,
}

/// Sampling distribution for `rewards_json` (an array of rewards) at exponent `eta`,
/// with the counts of `draws` seeded samples from it.
#[wasm_bindgen]
pub fn plc_explore(rewards_json: &str, eta: f64, draws: u32, seed: u32) -> String {
    let rewards: Vec<f64> = match serde_json::from_str(rewards_json) {
        Ok(r) => r,
        Err(e) => return error_json(&e),
    };
    if rewards.is_empty() || rewards.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return error_json(&"rewards must be a non-empty array of finite values ≥ 0");
    }
    if !eta.is_finite() || eta < 0.0 {
        return error_json(&"eta must be finite and ≥ 0");
    }
    let probabilities = training::plc_probabilities(&rewards, eta);
    let mut rng = seed::rng(u64::from(seed));
    let mut counts = vec![0; rewards.len()];
    for i in training::plc_sample(&probabilities, draws.min(1_000_000) as usize, &mut rng) {
        counts[i] += 1;
    }
    reply::<_, String>(Ok(PlcView { probabilities, counts }))
}

#[derive(Serialize)]
struct DtwView {
    a: String,
    b: String,
    #[serde(flatten)]
    alignment: metrics::Alignment,
}

/// Aligns clips `a` and `b` of a small synthetic corpus.
#[wasm_bindgen]
pub fn dtw_demo(seed: u32, a: u32, b: u32) -> String {
    let spec = SynthSpec {
        languages: vec!["ASL".into()],
        clips: 12,
        seed: u64::from(seed),
        ..SynthSpec::default()
    };
    let corpus = match synth::generate(&spec) {
        Ok(c) => c,
        Err(e) => return error_json(&e),
    };
    let n = corpus.clips.len() as u32;
    let (ca, cb) = (&corpus.clips[(a % n) as usize], &corpus.clips[(b % n) as usize]);
    reply(metrics::dtw_alignment(&ca.pose, &cb.pose).map(|alignment| DtwView {
        a: ca.transcript.clone(),
        b: cb.transcript.clone(),
        alignment,
    }))
}
