//! Keyed binary clip archive and the `.skels` line-per-clip pose text format.
//!
//! Archive layout (all integers little-endian):
//!
//! ```text
//! magic    b"SKAR"
//! version  u32 = 1
//! count    u32
//! count × { key_len u32, key utf-8, rows u32, width u32 }
//! count × rows × width f32 payload, in manifest order
//! ```
//!
//! A `.skels` file holds one clip per line: for each frame, the 150 pose values followed
//! by the progress counter `(t+1)/T`, all separated by single spaces. Floats are written
//! in the shortest form that parses back to the same 32-bit value. Clip ids live in a
//! parallel sidecar file, one per line.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::POSE_WIDTH;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"SKAR";
pub const ARCHIVE_VERSION: u32 = 1;
/// Largest tolerated deviation of a parsed counter from `(t+1)/T`.
pub const COUNTER_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StorageError {
    #[error("duplicate archive key `{0}`")]
    DuplicateKey(String),
    #[error("not an archive (bad magic bytes)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("archive manifest is truncated")]
    TruncatedManifest,
    #[error("payload for `{0}` is truncated")]
    TruncatedPayload(String),
    #[error("archive key is not valid UTF-8")]
    BadKey,
    #[error("`{key}` has width {found}, expected {expected}")]
    WidthMismatch {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("clip `{key}` frame {frame} holds a non-finite value")]
    NonFiniteValue { key: String, frame: usize },
    #[error("line {line}: {tokens} tokens is not a positive multiple of 151")]
    BadArity { line: usize, tokens: usize },
    #[error("line {line}, frame {frame}: counter {found} != {expected}")]
    CounterMismatch {
        line: usize,
        frame: usize,
        found: f32,
        expected: f32,
    },
    #[error("line {line}: cannot parse token {token:?}")]
    UnparsableToken { line: usize, token: String },
    #[error("{skels} skels lines but {ids} sidecar ids")]
    SidecarMismatch { skels: usize, ids: usize },
}

/// A named `rows × width` block of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub key: String,
    pub width: usize,
    pub rows: Vec<Vec<f32>>,
}

/// A clip of 150-wide pose frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseClip {
    pub id: String,
    pub frames: Vec<Vec<f32>>,
}

impl PoseClip {
    pub fn new(id: impl Into<String>, frames: Vec<Vec<f32>>) -> Self {
        Self { id: id.into(), frames }
    }
}

pub fn write_archive(entries: &[ArchiveEntry]) -> Result<Vec<u8>, StorageError> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.key.as_str()) {
            return Err(StorageError::DuplicateKey(e.key.clone()));
        }
        if let Some(row) = e.rows.iter().find(|r| r.len() != e.width) {
            return Err(StorageError::WidthMismatch {
                key: e.key.clone(),
                expected: e.width,
                found: row.len(),
            });
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.key.len() as u32).to_le_bytes());
        out.extend_from_slice(e.key.as_bytes());
        out.extend_from_slice(&(e.rows.len() as u32).to_le_bytes());
        out.extend_from_slice(&(e.width as u32).to_le_bytes());
    }
    for e in entries {
        for row in &e.rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<Vec<ArchiveEntry>, StorageError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4) != Some(&ARCHIVE_MAGIC[..]) {
        return Err(StorageError::BadMagic);
    }
    let version = cur.u32().ok_or(StorageError::TruncatedManifest)?;
    if version != ARCHIVE_VERSION {
        return Err(StorageError::UnsupportedVersion(version));
    }
    let count = cur.u32().ok_or(StorageError::TruncatedManifest)? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let key_len = cur.u32().ok_or(StorageError::TruncatedManifest)? as usize;
        let key = cur.take(key_len).ok_or(StorageError::TruncatedManifest)?;
        let key = std::str::from_utf8(key).map_err(|_| StorageError::BadKey)?.to_string();
        let rows = cur.u32().ok_or(StorageError::TruncatedManifest)? as usize;
        let width = cur.u32().ok_or(StorageError::TruncatedManifest)? as usize;
        if !seen.insert(key.clone()) {
            return Err(StorageError::DuplicateKey(key));
        }
        manifest.push((key, rows, width));
    }
    let mut out = Vec::with_capacity(manifest.len());
    for (key, rows, width) in manifest {
        let n = rows
            .checked_mul(width)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| StorageError::TruncatedPayload(key.clone()))?;
        let payload = cur.take(n).ok_or_else(|| StorageError::TruncatedPayload(key.clone()))?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let rows = if width == 0 {
            vec![Vec::new(); rows]
        } else {
            values.chunks(width).map(<[f32]>::to_vec).collect()
        };
        out.push(ArchiveEntry { key, width, rows });
    }
    Ok(out)
}

/// Writes pose clips as a 150-wide archive.
pub fn write_pose_archive(clips: &[PoseClip]) -> Result<Vec<u8>, StorageError> {
    let entries: Vec<ArchiveEntry> = clips
        .iter()
        .map(|c| ArchiveEntry {
            key: c.id.clone(),
            width: POSE_WIDTH,
            rows: c.frames.clone(),
        })
        .collect();
    write_archive(&entries)
}

/// Reads an archive whose every entry must be 150 wide.
pub fn read_pose_archive(bytes: &[u8]) -> Result<Vec<PoseClip>, StorageError> {
    read_archive(bytes)?
        .into_iter()
        .map(|e| {
            if e.width != POSE_WIDTH {
                Err(StorageError::WidthMismatch {
                    key: e.key,
                    expected: POSE_WIDTH,
                    found: e.width,
                })
            } else {
                Ok(PoseClip::new(e.key, e.rows))
            }
        })
        .collect()
}

/// Shortest decimal that parses back to the same `f32`.
pub fn format_f32(v: f32) -> String {
    format!("{v:?}")
}

/// Progress counter of frame `t` in a clip of `frames` frames.
pub fn counter(t: usize, frames: usize) -> f32 {
    (t + 1) as f32 / frames as f32
}

/// The packed text and the matching sidecar id list.
#[derive(Debug, Clone, PartialEq)]
pub struct Skels {
    pub text: String,
    pub ids: Vec<String>,
}

impl Skels {
    pub fn sidecar(&self) -> String {
        self.ids.iter().map(|id| format!("{id}\n")).collect()
    }
}

pub fn pack_skels(clips: &[PoseClip]) -> Result<Skels, StorageError> {
    let mut text = String::new();
    let mut ids = Vec::with_capacity(clips.len());
    for clip in clips {
        let frames = clip.frames.len();
        for (t, frame) in clip.frames.iter().enumerate() {
            if frame.len() != POSE_WIDTH {
                return Err(StorageError::WidthMismatch {
                    key: clip.id.clone(),
                    expected: POSE_WIDTH,
                    found: frame.len(),
                });
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(StorageError::NonFiniteValue {
                    key: clip.id.clone(),
                    frame: t,
                });
            }
            for v in frame {
                if !text.is_empty() && !text.ends_with('\n') {
                    text.push(' ');
                }
                text.push_str(&format_f32(*v));
            }
            text.push(' ');
            text.push_str(&format_f32(counter(t, frames)));
        }
        text.push('\n');
        ids.push(clip.id.clone());
    }
    Ok(Skels { text, ids })
}

/// Parses skels text into per-clip pose frames (counters validated and stripped).
pub fn unpack_skels(text: &str) -> Result<Vec<Vec<Vec<f32>>>, StorageError> {
    let width = POSE_WIDTH + 1;
    let mut clips = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split(' ').filter(|t| !t.is_empty()).collect();
        if tokens.is_empty() || tokens.len() % width != 0 {
            return Err(StorageError::BadArity {
                line: line_no,
                tokens: tokens.len(),
            });
        }
        let frames = tokens.len() / width;
        let mut clip = Vec::with_capacity(frames);
        for (t, chunk) in tokens.chunks(width).enumerate() {
            let values = chunk
                .iter()
                .map(|tok| {
                    tok.parse::<f32>().map_err(|_| StorageError::UnparsableToken {
                        line: line_no,
                        token: (*tok).to_string(),
                    })
                })
                .collect::<Result<Vec<f32>, _>>()?;
            let expected = counter(t, frames);
            let found = values[POSE_WIDTH];
            if !((found - expected).abs() <= COUNTER_TOLERANCE) {
                return Err(StorageError::CounterMismatch {
                    line: line_no,
                    frame: t,
                    found,
                    expected,
                });
            }
            clip.push(values[..POSE_WIDTH].to_vec());
        }
        clips.push(clip);
    }
    Ok(clips)
}

/// Pairs unpacked lines with their sidecar ids.
pub fn unpack_with_ids(text: &str, sidecar: &str) -> Result<Vec<PoseClip>, StorageError> {
    let clips = unpack_skels(text)?;
    let ids: Vec<&str> = sidecar.lines().collect();
    if ids.len() != clips.len() {
        return Err(StorageError::SidecarMismatch {
            skels: clips.len(),
            ids: ids.len(),
        });
    }
    Ok(ids
        .into_iter()
        .zip(clips)
        .map(|(id, frames)| PoseClip::new(id, frames))
        .collect())
}

/// Per-line frame count and counter validity, as printed by `inspect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSummary {
    pub line: usize,
    pub frames: usize,
    pub counters_ok: bool,
    pub error: Option<String>,
}

pub fn inspect_skels(text: &str) -> Vec<LineSummary> {
    text.lines()
        .enumerate()
        .map(|(i, line)| match unpack_skels(line) {
            Ok(clips) => LineSummary {
                line: i,
                frames: clips[0].len(),
                counters_ok: true,
                error: None,
            },
            Err(e) => LineSummary {
                line: i,
                frames: line.split(' ').filter(|t| !t.is_empty()).count() / (POSE_WIDTH + 1),
                counters_ok: false,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub raw: u64,
    pub packed: u64,
    pub reduction_fraction: f64,
}

pub fn size_report(raw_bytes: u64, packed_bytes: u64) -> SizeReport {
    SizeReport {
        raw: raw_bytes,
        packed: packed_bytes,
        reduction_fraction: if raw_bytes == 0 {
            0.0
        } else {
            1.0 - packed_bytes as f64 / raw_bytes as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, frames: usize) -> PoseClip {
        PoseClip::new(
            id,
            (0..frames)
                .map(|t| (0..POSE_WIDTH).map(|k| t as f32 * 0.5 + k as f32 / 7.0).collect())
                .collect(),
        )
    }

    #[test]
    fn empty_archive() {
        let bytes = write_archive(&[]).unwrap();
        assert!(read_archive(&bytes).unwrap().is_empty());
    }

    #[test]
    fn manifest_frame_counts() {
        let bytes = write_pose_archive(&[ramp("a", 3), ramp("b", 5)]).unwrap();
        let back = read_pose_archive(&bytes).unwrap();
        assert_eq!(back[0].frames.len(), 3);
        assert_eq!(back[1].frames.len(), 5);
        assert_eq!(bytes.len(), 12 + (4 + 1 + 8) * 2 + (3 + 5) * 150 * 4);
        assert_eq!(back, vec![ramp("a", 3), ramp("b", 5)]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert_eq!(
            write_pose_archive(&[ramp("a", 1), ramp("a", 2)]),
            Err(StorageError::DuplicateKey("a".into()))
        );
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut bytes = write_pose_archive(&[ramp("a", 2), ramp("b", 2)]).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert_eq!(read_archive(&bytes), Err(StorageError::TruncatedPayload("b".into())));
        bytes[0] = b'X';
        assert_eq!(read_archive(&bytes), Err(StorageError::BadMagic));
    }

    #[test]
    fn pose_reader_enforces_width() {
        let bytes = write_archive(&[ArchiveEntry {
            key: "w".into(),
            width: 3,
            rows: vec![vec![1.0, 2.0, 3.0]],
        }])
        .unwrap();
        assert!(matches!(read_pose_archive(&bytes), Err(StorageError::WidthMismatch { .. })));
    }

    #[test]
    fn counters_for_four_frames() {
        let skels = pack_skels(&[ramp("a", 4)]).unwrap();
        let tokens: Vec<&str> = skels.text.trim_end().split(' ').collect();
        let counters: Vec<&str> = (0..4).map(|t| tokens[t * 151 + 150]).collect();
        assert_eq!(counters, vec!["0.25", "0.5", "0.75", "1.0"]);
    }

    #[test]
    fn token_count_is_151_per_frame() {
        let skels = pack_skels(&[ramp("a", 2)]).unwrap();
        assert_eq!(skels.text.trim_end_matches('\n').split(' ').count(), 302);
        assert!(!skels.text.contains("  "));
        assert_eq!(skels.text.lines().count(), 1);
        assert_eq!(skels.sidecar(), "a\n");
    }

    #[test]
    fn single_frame_line() {
        let mut line: Vec<String> = (0..150).map(|k| k.to_string()).collect();
        line.push("1.0".into());
        let clips = unpack_skels(&line.join(" ")).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].len(), 1);
    }

    #[test]
    fn bad_arity_and_counter() {
        let line: Vec<String> = (0..150).map(|k| k.to_string()).collect();
        assert!(matches!(unpack_skels(&line.join(" ")), Err(StorageError::BadArity { .. })));
        let skels = pack_skels(&[ramp("a", 3)]).unwrap();
        let tampered = skels.text.trim_end().rsplit_once(' ').unwrap().0.to_string() + " 0.9";
        assert!(matches!(
            unpack_skels(&tampered),
            Err(StorageError::CounterMismatch { frame: 2, .. })
        ));
        assert!(matches!(unpack_skels(""), Ok(v) if v.is_empty()));
        assert!(matches!(unpack_skels("\n"), Err(StorageError::BadArity { .. })));
    }

    #[test]
    fn pack_rejects_nan_and_width() {
        let mut clip = ramp("a", 2);
        clip.frames[1][3] = f32::NAN;
        assert!(matches!(pack_skels(&[clip]), Err(StorageError::NonFiniteValue { frame: 1, .. })));
        let mut clip = ramp("a", 2);
        clip.frames[0].pop();
        assert!(matches!(pack_skels(&[clip]), Err(StorageError::WidthMismatch { .. })));
    }

    #[test]
    fn size_reduction() {
        assert_eq!(size_report(100, 20).reduction_fraction, 0.8);
        assert_eq!(size_report(100, 100).reduction_fraction, 0.0);
    }

    #[test]
    fn inspect_flags_bad_lines() {
        let good = pack_skels(&[ramp("a", 2)]).unwrap().text;
        let text = format!("{good}1 2 3\n");
        let summary = inspect_skels(&text);
        assert!(summary[0].counters_ok);
        assert_eq!(summary[0].frames, 2);
        assert!(!summary[1].counters_ok);
    }
}
