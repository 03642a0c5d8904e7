//! The 50-joint upper-body + hands skeleton, its bone tree, and the frame and clip
//! value types shared by the rest of the pipeline.
//!
//! Joint order follows OpenPose: body joints 0–7 are the BODY_25 upper-body prefix
//! (nose, neck, right shoulder/elbow/wrist, left shoulder/elbow/wrist), then the
//! 21-point right hand, then the 21-point left hand. Each hand is its wrist point
//! followed by four joints per finger, thumb first.

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub const JOINT_COUNT: usize = 50;
pub const BONE_COUNT: usize = JOINT_COUNT - 1;
pub const BODY_RANGE: Range<usize> = 0..8;
pub const RIGHT_HAND_RANGE: Range<usize> = 8..29;
pub const LEFT_HAND_RANGE: Range<usize> = 29..50;

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const R_ELBOW: usize = 3;
pub const R_WRIST: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const L_ELBOW: usize = 6;
pub const L_WRIST: usize = 7;

const BODY_NAMES: [&str; 8] = [
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
];
const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

/// Human-readable label of joint `index`.
pub fn joint_name(index: usize) -> String {
    match index {
        i if BODY_RANGE.contains(&i) => BODY_NAMES[i].to_string(),
        i if RIGHT_HAND_RANGE.contains(&i) => hand_joint_name("rh", i - RIGHT_HAND_RANGE.start),
        i if LEFT_HAND_RANGE.contains(&i) => hand_joint_name("lh", i - LEFT_HAND_RANGE.start),
        i => format!("joint{i}"),
    }
}

fn hand_joint_name(side: &str, local: usize) -> String {
    if local == 0 {
        format!("{side}_root")
    } else {
        let finger = (local - 1) / 4;
        let segment = (local - 1) % 4 + 1;
        format!("{side}_{}{}", FINGERS[finger], segment)
    }
}

/// The fixed joint layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub names: Vec<String>,
    pub body_range: Range<usize>,
    pub right_hand_range: Range<usize>,
    pub left_hand_range: Range<usize>,
}

impl JointLayout {
    pub fn standard() -> Self {
        Self {
            names: (0..JOINT_COUNT).map(joint_name).collect(),
            body_range: BODY_RANGE,
            right_hand_range: RIGHT_HAND_RANGE,
            left_hand_range: LEFT_HAND_RANGE,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }
}

/// A directed bone from `parent` to `child`; `line` indexes the per-bone length table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("expected {expected} bones, found {found}")]
    BoneCount { expected: usize, found: usize },
    #[error("bone {bone} references joint {joint} outside the skeleton")]
    JointOutOfRange { bone: usize, joint: usize },
    #[error("bone {bone} is a self-loop on joint {joint}")]
    SelfLoop { bone: usize, joint: usize },
    #[error("bone {bone} has line index {line} outside [0, {count})")]
    LineOutOfRange { bone: usize, line: usize, count: usize },
    #[error("joint {joint} is the child of more than one bone")]
    DuplicateChild { joint: usize },
    #[error("bone {bone} uses parent {parent} before it is reachable from the root")]
    NotTopological { bone: usize, parent: usize },
    #[error("the root joint {root} appears as a child")]
    RootIsChild { root: usize },
}

/// An ordered bone list forming a spanning tree rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoneStructure {
    bones: Vec<Bone>,
    root: usize,
}

impl BoneStructure {
    /// Checks the spanning-tree and topological-order invariants in one pass.
    pub fn new(bones: Vec<Bone>, root: usize) -> Result<Self, StructureError> {
        if bones.len() != BONE_COUNT {
            return Err(StructureError::BoneCount {
                expected: BONE_COUNT,
                found: bones.len(),
            });
        }
        let mut reached = [false; JOINT_COUNT];
        if root >= JOINT_COUNT {
            return Err(StructureError::JointOutOfRange { bone: 0, joint: root });
        }
        reached[root] = true;
        for (i, bone) in bones.iter().enumerate() {
            for joint in [bone.parent, bone.child] {
                if joint >= JOINT_COUNT {
                    return Err(StructureError::JointOutOfRange { bone: i, joint });
                }
            }
            if bone.parent == bone.child {
                return Err(StructureError::SelfLoop {
                    bone: i,
                    joint: bone.child,
                });
            }
            if bone.line >= BONE_COUNT {
                return Err(StructureError::LineOutOfRange {
                    bone: i,
                    line: bone.line,
                    count: BONE_COUNT,
                });
            }
            if bone.child == root {
                return Err(StructureError::RootIsChild { root });
            }
            if reached[bone.child] {
                return Err(StructureError::DuplicateChild { joint: bone.child });
            }
            if !reached[bone.parent] {
                return Err(StructureError::NotTopological {
                    bone: i,
                    parent: bone.parent,
                });
            }
            reached[bone.child] = true;
        }
        Ok(Self { bones, root })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    /// Renders the joint and bone tables as plain text.
    pub fn describe(&self) -> String {
        let mut out = String::from("# joints\nindex\tname\n");
        for j in 0..JOINT_COUNT {
            out.push_str(&format!("{j}\t{}\n", joint_name(j)));
        }
        out.push_str(&format!("# bones (root = {} {})\nline\tparent\tchild\n", self.root, joint_name(self.root)));
        for b in &self.bones {
            out.push_str(&format!(
                "{}\t{} {}\t{} {}\n",
                b.line,
                b.parent,
                joint_name(b.parent),
                b.child,
                joint_name(b.child)
            ));
        }
        out
    }
}

/// The fixed 49-bone tree rooted at the neck.
pub fn standard_structure() -> BoneStructure {
    let mut edges: Vec<(usize, usize)> = vec![
        (NECK, NOSE),
        (NECK, R_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (R_ELBOW, R_WRIST),
        (NECK, L_SHOULDER),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_WRIST),
        (R_WRIST, RIGHT_HAND_RANGE.start),
        (L_WRIST, LEFT_HAND_RANGE.start),
    ];
    for hand_root in [RIGHT_HAND_RANGE.start, LEFT_HAND_RANGE.start] {
        for finger in 0..5 {
            let mut parent = hand_root;
            for segment in 0..4 {
                let child = hand_root + 1 + finger * 4 + segment;
                edges.push((parent, child));
                parent = child;
            }
        }
    }
    let bones = edges
        .into_iter()
        .enumerate()
        .map(|(line, (parent, child))| Bone { parent, child, line })
        .collect();
    BoneStructure::new(bones, NECK).expect("standard skeleton is a valid tree")
}

/// One frame of 2D detections: pixel coordinates plus detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame2D {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl Frame2D {
    pub fn zeros() -> Self {
        Self {
            x: vec![0.0; JOINT_COUNT],
            y: vec![0.0; JOINT_COUNT],
            w: vec![0.0; JOINT_COUNT],
        }
    }

    /// Interleaved `(x, y, confidence)` per joint.
    pub fn to_row(&self) -> Vec<f32> {
        let mut row = Vec::with_capacity(3 * self.x.len());
        for j in 0..self.x.len() {
            row.extend([self.x[j] as f32, self.y[j] as f32, self.w[j] as f32]);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip2D {
    pub id: String,
    pub frames: Vec<Frame2D>,
    pub transcript: String,
    pub gloss: Option<Vec<String>>,
    pub language: String,
}

impl Clip2D {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame3D {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Frame3D {
    pub fn zeros() -> Self {
        Self {
            x: vec![0.0; JOINT_COUNT],
            y: vec![0.0; JOINT_COUNT],
            z: vec![0.0; JOINT_COUNT],
        }
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        [self.x[j], self.y[j], self.z[j]]
    }

    /// Interleaved `(x, y, z)` per joint: the 150-value storage row.
    pub fn to_row(&self) -> Vec<f32> {
        let mut row = Vec::with_capacity(3 * JOINT_COUNT);
        for j in 0..self.x.len() {
            row.extend([self.x[j] as f32, self.y[j] as f32, self.z[j] as f32]);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3DClip {
    pub id: String,
    pub frames: Vec<Frame3D>,
}

impl Pose3DClip {
    pub fn rows(&self) -> Vec<Vec<f32>> {
        self.frames.iter().map(Frame3D::to_row).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Channel {
    X,
    Y,
    W,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    EmptyClip,
    WrongLength {
        frame: usize,
        channel: Channel,
        len: usize,
    },
    NonFinite {
        frame: usize,
        joint: usize,
        channel: Channel,
    },
    ZeroConfidence {
        frame: usize,
        joint: usize,
    },
}

impl Violation {
    pub fn is_structural(&self) -> bool {
        matches!(self, Violation::EmptyClip | Violation::WrongLength { .. })
    }
}

/// Lists everything wrong with a clip without touching it.
pub fn validate_clip(clip: &Clip2D) -> Vec<Violation> {
    let mut out = Vec::new();
    if clip.frames.is_empty() {
        out.push(Violation::EmptyClip);
    }
    for (t, frame) in clip.frames.iter().enumerate() {
        let channels = [(Channel::X, &frame.x), (Channel::Y, &frame.y), (Channel::W, &frame.w)];
        let mut well_formed = true;
        for (channel, values) in channels {
            if values.len() != JOINT_COUNT {
                out.push(Violation::WrongLength {
                    frame: t,
                    channel,
                    len: values.len(),
                });
                well_formed = false;
            }
        }
        if !well_formed {
            continue;
        }
        for j in 0..JOINT_COUNT {
            for (channel, values) in channels {
                if !values[j].is_finite() {
                    out.push(Violation::NonFinite {
                        frame: t,
                        joint: j,
                        channel,
                    });
                }
            }
            if frame.w[j] == 0.0 {
                out.push(Violation::ZeroConfidence { frame: t, joint: j });
            }
        }
    }
    out
}
