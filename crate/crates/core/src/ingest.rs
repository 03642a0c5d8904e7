//! OpenPose keypoint JSON parsing, clip assembly and cleaning.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::skeleton::{
    standard_structure, validate_clip, Clip2D, Frame2D, BODY_RANGE, JOINT_COUNT, LEFT_HAND_RANGE,
    RIGHT_HAND_RANGE,
};

const HAND_JOINTS: usize = 21;
const BODY25_JOINTS: usize = 25;
const FACE_JOINTS: usize = 70;
/// Confidence given to joints that had no valid observation anywhere in the clip.
pub const IMPUTED_CONFIDENCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed keypoint document: {0}")]
    MalformedDocument(String),
    #[error("keypoint document lists no people")]
    NoPerson,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("clip has no frames")]
    EmptyClip,
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("clip is structurally invalid: {0}")]
    Structural(String),
    #[error("no frame survives cleaning")]
    AllFramesInvalid,
    #[error("invalid-frame threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

fn keypoint_array(person: &Value, key: &str) -> Result<Vec<f64>, IngestError> {
    let arr = person
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::SchemaMismatch(format!("missing array `{key}`")))?;
    arr.iter()
        .map(|v| match v {
            Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| IngestError::SchemaMismatch(format!("`{key}` holds a non-real number"))),
            // OpenPose writers occasionally emit NaN/inf as null or strings; keep them so
            // cleaning can count them.
            Value::Null => Ok(f64::NAN),
            Value::String(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| IngestError::SchemaMismatch(format!("`{key}` holds text {s:?}"))),
            _ => Err(IngestError::SchemaMismatch(format!("`{key}` holds a non-number"))),
        })
        .collect()
}

/// Parses one OpenPose frame document into the 50-joint subset of person 0.
pub fn parse_frame(bytes: &[u8]) -> Result<Frame2D, IngestError> {
    let doc: Value =
        serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    let people = doc
        .get("people")
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::SchemaMismatch("missing `people` list".into()))?;
    let person = people.first().ok_or(IngestError::NoPerson)?;

    let body = keypoint_array(person, "pose_keypoints_2d")?;
    if body.len() % 3 != 0 || body.len() < 3 * BODY_RANGE.end {
        return Err(IngestError::SchemaMismatch(format!(
            "`pose_keypoints_2d` has {} values; need a multiple of 3 covering at least {} joints",
            body.len(),
            BODY_RANGE.end
        )));
    }
    let right = keypoint_array(person, "hand_right_keypoints_2d")?;
    let left = keypoint_array(person, "hand_left_keypoints_2d")?;
    for (key, arr) in [("hand_right_keypoints_2d", &right), ("hand_left_keypoints_2d", &left)] {
        if arr.len() != 3 * HAND_JOINTS {
            return Err(IngestError::SchemaMismatch(format!(
                "`{key}` has {} values, expected {}",
                arr.len(),
                3 * HAND_JOINTS
            )));
        }
    }

    let mut frame = Frame2D::zeros();
    let mut put = |joint: usize, src: &[f64], k: usize| {
        frame.x[joint] = src[3 * k];
        frame.y[joint] = src[3 * k + 1];
        frame.w[joint] = src[3 * k + 2];
    };
    for k in BODY_RANGE {
        put(k, &body, k);
    }
    for k in 0..HAND_JOINTS {
        put(RIGHT_HAND_RANGE.start + k, &right, k);
        put(LEFT_HAND_RANGE.start + k, &left, k);
    }
    Ok(frame)
}

/// Builds a clip from temporally ordered frame documents.
pub fn assemble_clip<B: AsRef<[u8]>>(
    documents: &[B],
    id: &str,
    transcript: &str,
    language: &str,
) -> Result<Clip2D, IngestError> {
    if documents.is_empty() {
        return Err(IngestError::EmptyClip);
    }
    let frames = documents
        .iter()
        .enumerate()
        .map(|(t, doc)| {
            parse_frame(doc.as_ref()).map_err(|e| IngestError::Frame {
                frame: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Clip2D {
        id: id.to_string(),
        frames,
        transcript: transcript.to_string(),
        gloss: None,
        language: language.to_string(),
    })
}

/// Number formatting for [`to_openpose_json`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonPrecision {
    /// Shortest round-tripping representation; parsing gives the exact input back.
    Exact,
    /// Six significant digits, as the OpenPose C++ writer prints them.
    OpenPose,
}

/// Keypoints that OpenPose writes but the 50-joint subset ignores.
#[derive(Debug, Clone, Default)]
pub struct OpenPoseExtras {
    /// Joints 8..25 of BODY_25 as flat `(x, y, c)` triples.
    pub legs: Option<Vec<f64>>,
    /// The 70-point face as flat `(x, y, c)` triples.
    pub face: Option<Vec<f64>>,
}

fn fmt_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { "null".into() };
    }
    let digits = v.abs().log10().floor() as i32 + 1;
    let decimals = (6 - digits).clamp(0, 12) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn push_numbers(out: &mut String, values: &[f64], precision: JsonPrecision) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        match precision {
            JsonPrecision::Exact if v.is_finite() => out.push_str(&format!("{v:?}")),
            JsonPrecision::Exact => out.push_str("null"),
            JsonPrecision::OpenPose => out.push_str(&fmt_sig6(*v)),
        }
    }
    out.push(']');
}

/// Writes a frame as an OpenPose-schema document (single person, BODY_25 layout).
pub fn to_openpose_json(frame: &Frame2D, extras: &OpenPoseExtras, precision: JsonPrecision) -> String {
    let mut body = Vec::with_capacity(3 * BODY25_JOINTS);
    for j in BODY_RANGE {
        body.extend([frame.x[j], frame.y[j], frame.w[j]]);
    }
    match &extras.legs {
        Some(legs) => body.extend_from_slice(legs),
        None => body.resize(3 * BODY25_JOINTS, 0.0),
    }
    let hand = |range: std::ops::Range<usize>| {
        range
            .flat_map(|j| [frame.x[j], frame.y[j], frame.w[j]])
            .collect::<Vec<_>>()
    };
    let mut out = String::from("{\"version\":1.3,\"people\":[{\"person_id\":[-1],\"pose_keypoints_2d\":");
    push_numbers(&mut out, &body, precision);
    out.push_str(",\"face_keypoints_2d\":");
    match &extras.face {
        Some(face) => {
            debug_assert_eq!(face.len(), 3 * FACE_JOINTS);
            push_numbers(&mut out, face, precision)
        }
        None => out.push_str("[]"),
    }
    out.push_str(",\"hand_left_keypoints_2d\":");
    push_numbers(&mut out, &hand(LEFT_HAND_RANGE), precision);
    out.push_str(",\"hand_right_keypoints_2d\":");
    push_numbers(&mut out, &hand(RIGHT_HAND_RANGE), precision);
    out.push_str(
        ",\"pose_keypoints_3d\":[],\"face_keypoints_3d\":[],\"hand_left_keypoints_3d\":[],\"hand_right_keypoints_3d\":[]}]}",
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanMode {
    ReplaceMedian,
    ReplaceMean,
    DropFrame,
}

impl std::str::FromStr for CleanMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replace_median" => Ok(Self::ReplaceMedian),
            "replace_mean" => Ok(Self::ReplaceMean),
            "drop_frame" => Ok(Self::DropFrame),
            other => Err(format!("unknown cleaning policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanPolicy {
    pub mode: CleanMode,
    /// Fraction of invalid joints above which a frame is dropped (drop_frame mode).
    pub invalid_frame_threshold: f64,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        Self {
            mode: CleanMode::ReplaceMedian,
            invalid_frame_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub frames_in: usize,
    pub frames_dropped: usize,
    pub values_replaced: usize,
    pub replacement_fraction: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Copy)]
struct Validity {
    x: bool,
    y: bool,
    w: bool,
}

fn validity(frame: &Frame2D, j: usize) -> Validity {
    let w = frame.w[j].is_finite() && frame.w[j] != 0.0;
    Validity {
        x: w && frame.x[j].is_finite(),
        y: w && frame.y[j].is_finite(),
        w,
    }
}

/// Replaces or drops invalid keypoints.
///
/// A coordinate is invalid when it is non-finite or its joint's confidence is exactly
/// zero (or non-finite); a confidence is invalid when it is zero or non-finite.
pub fn clean_clip(clip: &Clip2D, policy: &CleanPolicy) -> Result<(Clip2D, CleanReport), IngestError> {
    if !(0.0..=1.0).contains(&policy.invalid_frame_threshold) {
        return Err(IngestError::BadThreshold(policy.invalid_frame_threshold));
    }
    if let Some(v) = validate_clip(clip).into_iter().find(|v| v.is_structural()) {
        return Err(IngestError::Structural(format!("{v:?}")));
    }
    let frames_in = clip.frames.len();

    let keep: Vec<bool> = match policy.mode {
        CleanMode::DropFrame => clip
            .frames
            .iter()
            .map(|f| {
                let invalid = (0..JOINT_COUNT)
                    .filter(|&j| {
                        let v = validity(f, j);
                        !(v.x && v.y && v.w)
                    })
                    .count();
                invalid as f64 / JOINT_COUNT as f64 <= policy.invalid_frame_threshold
            })
            .collect(),
        _ => vec![true; frames_in],
    };
    let mut frames: Vec<Frame2D> = clip
        .frames
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(f, _)| f.clone())
        .collect();
    if frames.is_empty() {
        return Err(IngestError::AllFramesInvalid);
    }
    let frames_dropped = frames_in - frames.len();
    let use_mean = policy.mode == CleanMode::ReplaceMean;

    let mut parent_of = [None; JOINT_COUNT];
    let structure = standard_structure();
    let mut order = vec![structure.root()];
    for b in structure.bones() {
        parent_of[b.child] = Some(b.parent);
        order.push(b.child);
    }

    let valid: Vec<Vec<Validity>> = frames
        .iter()
        .map(|f| (0..JOINT_COUNT).map(|j| validity(f, j)).collect())
        .collect();
    let mut values_replaced = 0usize;
    for &j in &order {
        for channel in 0..3 {
            let is_valid = |t: usize| match channel {
                0 => valid[t][j].x,
                1 => valid[t][j].y,
                _ => valid[t][j].w,
            };
            let get = |f: &Frame2D| match channel {
                0 => f.x[j],
                1 => f.y[j],
                _ => f.w[j],
            };
            let mut observed: Vec<f64> = (0..frames.len())
                .filter(|&t| is_valid(t))
                .map(|t| get(&frames[t]))
                .collect();
            if observed.len() == frames.len() {
                continue;
            }
            let fill = if observed.is_empty() {
                None
            } else if use_mean {
                Some(observed.iter().sum::<f64>() / observed.len() as f64)
            } else {
                Some(median(&mut observed))
            };
            for t in 0..frames.len() {
                if is_valid(t) {
                    continue;
                }
                let value = match (fill, channel) {
                    (Some(v), _) => v,
                    (None, 2) => IMPUTED_CONFIDENCE,
                    (None, c) => {
                        // Never observed: collapse onto the already-cleaned parent joint.
                        let parent = parent_of[j].ok_or(IngestError::AllFramesInvalid)?;
                        if c == 0 {
                            frames[t].x[parent]
                        } else {
                            frames[t].y[parent]
                        }
                    }
                };
                match channel {
                    0 => frames[t].x[j] = value,
                    1 => frames[t].y[j] = value,
                    _ => frames[t].w[j] = value,
                }
                values_replaced += 1;
            }
        }
    }

    let report = CleanReport {
        frames_in,
        frames_dropped,
        values_replaced,
        replacement_fraction: values_replaced as f64 / (3 * JOINT_COUNT * frames_in) as f64,
    };
    Ok((
        Clip2D {
            frames,
            ..clip.clone()
        },
        report,
    ))
}
