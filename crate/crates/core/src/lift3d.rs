//! 2D→3D lifting: per-bone 2D lengths, percentile canonical lengths, normalized
//! rotation triples and forward kinematics from the root joint.
//!
//! The unnormalized direction of a bone is its 2D vector plus a foreshortening depth
//! `dz = sqrt(max(L² − dx² − dy², 0))`, where `L` is the bone's canonical length.
//! Triples with a non-finite component collapse to `(0, 0, 0)`; every other triple
//! has its depth made non-negative, offset by `0.001` and scaled to unit length.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::skeleton::{BoneStructure, Clip2D, Frame3D, Pose3DClip, JOINT_COUNT};

/// Lower clamp applied to a canonical length before taking its logarithm.
pub const MIN_CANONICAL_LENGTH: f64 = 1e-6;
/// Offset added to the depth component before normalization.
pub const DEPTH_OFFSET: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LiftError {
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("noise sigma {0} must be finite and non-negative")]
    BadSigma(f64),
    #[error("clip has no frames")]
    EmptyClip,
    #[error("{what} has {found} entries, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftParams {
    pub percentile: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            percentile: 95.0,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

impl LiftParams {
    pub fn validate(&self) -> Result<(), LiftError> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(LiftError::BadPercentile(self.percentile));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(LiftError::BadSigma(self.noise_sigma));
        }
        Ok(())
    }
}

/// Per-frame, per-bone normalized direction components (`T × bones` each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl Angles {
    pub fn frames(&self) -> usize {
        self.x.len()
    }

    pub fn triple(&self, t: usize, bone: usize) -> [f64; 3] {
        [self.x[t][bone], self.y[t][bone], self.z[t][bone]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roots {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    /// Natural log of each canonical bone length.
    pub lines: Vec<f64>,
    pub canonical: Vec<f64>,
    /// Root trajectory after noise.
    pub roots: Roots,
    pub angles: Angles,
    pub pose: Pose3DClip,
}

/// `T × bones` matrix of 2D bone lengths.
pub fn bone_lengths(clip: &Clip2D, structure: &BoneStructure) -> Vec<Vec<f64>> {
    clip.frames
        .iter()
        .map(|f| {
            structure
                .bones()
                .iter()
                .map(|b| (f.x[b.parent] - f.x[b.child]).hypot(f.y[b.parent] - f.y[b.child]))
                .collect()
        })
        .collect()
}

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest value.
pub fn nearest_rank(values: &[f64], percentile: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Canonical length and its log for every bone column of `lengths`.
pub fn canonical_lengths(lengths: &[Vec<f64>], percentile: f64) -> Result<(Vec<f64>, Vec<f64>), LiftError> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(LiftError::BadPercentile(percentile));
    }
    let first = lengths.first().ok_or(LiftError::EmptyClip)?;
    let bones = first.len();
    let mut canon = Vec::with_capacity(bones);
    for k in 0..bones {
        let column: Vec<f64> = lengths.iter().map(|row| row[k]).collect();
        let value = nearest_rank(&column, percentile);
        canon.push(if value >= MIN_CANONICAL_LENGTH {
            value
        } else {
            MIN_CANONICAL_LENGTH
        });
    }
    let lines = canon.iter().map(|l| l.ln()).collect();
    Ok((canon, lines))
}

/// Turns a raw direction into the stored unit triple.
pub fn normalize_triple(raw: [f64; 3]) -> [f64; 3] {
    let [x, y, mut z] = raw;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return [0.0, 0.0, 0.0];
    }
    if z < 0.0 {
        z = -z;
    }
    z += DEPTH_OFFSET;
    let norm = (x * x + y * y + z * z).sqrt();
    [x / norm, y / norm, z / norm]
}

pub fn joint_angles(clip: &Clip2D, structure: &BoneStructure, canonical: &[f64]) -> Result<Angles, LiftError> {
    if canonical.len() != structure.len() {
        return Err(LiftError::Shape {
            what: "canonical lengths",
            expected: structure.len(),
            found: canonical.len(),
        });
    }
    let frames = clip.frames.len();
    let mut angles = Angles {
        x: Vec::with_capacity(frames),
        y: Vec::with_capacity(frames),
        z: Vec::with_capacity(frames),
    };
    for f in &clip.frames {
        let (mut ax, mut ay, mut az) = (Vec::new(), Vec::new(), Vec::new());
        for (k, b) in structure.bones().iter().enumerate() {
            let dx = f.x[b.child] - f.x[b.parent];
            let dy = f.y[b.child] - f.y[b.parent];
            let l = canonical[k];
            let dz = (l * l - dx * dx - dy * dy).max(0.0).sqrt();
            let [x, y, z] = normalize_triple([dx, dy, dz]);
            ax.push(x);
            ay.push(y);
            az.push(z);
        }
        angles.x.push(ax);
        angles.y.push(ay);
        angles.z.push(az);
    }
    Ok(angles)
}

/// Places the root at the (noisy) root trajectory and walks the bone list outward.
///
/// Returns the pose together with the roots actually used.
pub fn forward_kinematics(
    structure: &BoneStructure,
    canonical: &[f64],
    angles: &Angles,
    roots: &Roots,
    params: &LiftParams,
    id: &str,
) -> Result<(Pose3DClip, Roots), LiftError> {
    params.validate()?;
    let frames = angles.frames();
    for (what, len) in [("roots x", roots.x.len()), ("roots y", roots.y.len()), ("roots z", roots.z.len())] {
        if len != frames {
            return Err(LiftError::Shape {
                what,
                expected: frames,
                found: len,
            });
        }
    }
    if canonical.len() != structure.len() {
        return Err(LiftError::Shape {
            what: "canonical lengths",
            expected: structure.len(),
            found: canonical.len(),
        });
    }

    let mut noisy = roots.clone();
    if params.noise_sigma > 0.0 {
        let mut rng = seed::rng_for(params.rng_seed, id);
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|_| LiftError::BadSigma(params.noise_sigma))?;
        for series in [&mut noisy.x, &mut noisy.y, &mut noisy.z] {
            for v in series.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let root = structure.root();
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut f = Frame3D::zeros();
        f.x[root] = noisy.x[t];
        f.y[root] = noisy.y[t];
        f.z[root] = noisy.z[t];
        for (k, b) in structure.bones().iter().enumerate() {
            let l = canonical[k];
            let [a_x, a_y, a_z] = angles.triple(t, k);
            f.x[b.child] = f.x[b.parent] + l * a_x;
            f.y[b.child] = f.y[b.parent] + l * a_y;
            f.z[b.child] = f.z[b.parent] + l * a_z;
        }
        debug_assert_eq!(f.x.len(), JOINT_COUNT);
        out.push(f);
    }
    Ok((
        Pose3DClip {
            id: id.to_string(),
            frames: out,
        },
        noisy,
    ))
}

/// Full lifting of a cleaned clip.
pub fn lift_clip(clip: &Clip2D, structure: &BoneStructure, params: &LiftParams) -> Result<LiftResult, LiftError> {
    params.validate()?;
    if clip.frames.is_empty() {
        return Err(LiftError::EmptyClip);
    }
    let lengths = bone_lengths(clip, structure);
    let (canonical, lines) = canonical_lengths(&lengths, params.percentile)?;
    let angles = joint_angles(clip, structure, &canonical)?;
    let root = structure.root();
    let roots = Roots {
        x: clip.frames.iter().map(|f| f.x[root]).collect(),
        y: clip.frames.iter().map(|f| f.y[root]).collect(),
        z: vec![0.0; clip.frames.len()],
    };
    let (pose, roots) = forward_kinematics(structure, &canonical, &angles, &roots, params, &clip.id)?;
    Ok(LiftResult {
        lines,
        canonical,
        roots,
        angles,
        pose,
    })
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl LiftResult {
    /// The five per-clip text files, in order: log lengths, roots, angles,
    /// component-major joint coordinates, and the final interleaved pose rows.
    pub fn text_files(&self) -> [(&'static str, String); 5] {
        let frames = self.pose.frames.len();
        let lines = join(self.lines.iter().copied()) + "\n";
        let roots: String = (0..frames)
            .map(|t| join([self.roots.x[t], self.roots.y[t], self.roots.z[t]]) + "\n")
            .collect();
        let angles: String = (0..frames)
            .map(|t| {
                join((0..self.lines.len()).flat_map(|k| self.angles.triple(t, k))) + "\n"
            })
            .collect();
        let mut components = String::new();
        for axis in 0..3 {
            for f in &self.pose.frames {
                let series = match axis {
                    0 => &f.x,
                    1 => &f.y,
                    _ => &f.z,
                };
                components.push_str(&join(series.iter().copied()));
                components.push('\n');
            }
        }
        let pose: String = self
            .pose
            .frames
            .iter()
            .map(|f| {
                f.to_row()
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(" ")
                    + "\n"
            })
            .collect();
        [
            ("1_lines.txt", lines),
            ("2_roots.txt", roots),
            ("3_angles.txt", angles),
            ("4_joints_xyz.txt", components),
            ("5_pose.txt", pose),
        ]
    }
}
