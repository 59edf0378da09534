//! Motion files: `.mwm.json` (inline frames) and `.mwm.bin` (JSON header
//! followed by little-endian f32 frames).
//!
//! Binary layout: magic `MWMB`, `u32` version, `u32` header length, the
//! UTF-8 JSON header, then `frame_count × frame_dim` f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, LabelSet, Segment, SegmentedSequence, Split};
use crate::error::{Error, Result};
use crate::kinematics::{Motion, Skeleton};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MWMB";

/// JSON sections in the order they are written.
const SECTIONS: [&str; 8] = [
    "format",
    "version",
    "fps",
    "frame_count",
    "frame_dim",
    "skeleton",
    "labels",
    "segments",
];

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    fps: f64,
    frame_count: usize,
    frame_dim: usize,
    skeleton: Skeleton,
    labels: Vec<String>,
    segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f64>>>,
}

/// Contents of a motion file.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFile {
    pub sequence: SegmentedSequence,
    pub skeleton: Skeleton,
    pub labels: LabelSet,
}

fn is_binary(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".bin")
}

fn header_for(seq: &SegmentedSequence, skeleton: &Skeleton, labels: &LabelSet) -> Result<Header> {
    let dim = skeleton.pose_dim();
    if let Some(bad) = seq.motion.frames.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    Ok(Header {
        format: "mwm".into(),
        version: FORMAT_VERSION,
        fps: seq.motion.fps,
        frame_count: seq.motion.len(),
        frame_dim: dim,
        skeleton: skeleton.clone(),
        labels: labels.names().to_vec(),
        segments: seq.segments.clone(),
        frames: None,
    })
}

/// Serializes to the JSON variant.
pub fn to_json(seq: &SegmentedSequence, skeleton: &Skeleton, labels: &LabelSet) -> Result<String> {
    let mut header = header_for(seq, skeleton, labels)?;
    header.frames = Some(seq.motion.frames.iter().map(|f| f.flatten()).collect());
    Ok(serde_json::to_string(&header)?)
}

/// Serializes to the binary variant. Values are stored as f32.
pub fn to_bytes(seq: &SegmentedSequence, skeleton: &Skeleton, labels: &LabelSet) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_for(seq, skeleton, labels)?)?;
    let mut out = Vec::with_capacity(12 + header.len() + seq.motion.len() * skeleton.pose_dim() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in seq.motion.flatten() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn save_motion(path: &Path, seq: &SegmentedSequence, skeleton: &Skeleton, labels: &LabelSet) -> Result<()> {
    if is_binary(path) {
        fs::write(path, to_bytes(seq, skeleton, labels)?)?;
    } else {
        fs::write(path, to_json(seq, skeleton, labels)?)?;
    }
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<MotionFile> {
    if is_binary(path) {
        from_bytes(&fs::read(path)?, path)
    } else {
        from_json(&fs::read_to_string(path)?, path)
    }
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        column,
        message: message.into(),
    }
}

/// Names the first section a truncated document never reached.
fn missing_section(text: &str) -> &'static str {
    SECTIONS
        .iter()
        .chain(std::iter::once(&"frames"))
        .rev()
        .find(|s| text.contains(&format!("\"{s}\"")))
        .map(|last_seen| {
            let all: Vec<&str> = SECTIONS.iter().copied().chain(["frames"]).collect();
            let idx = all.iter().position(|s| s == last_seen).unwrap_or(0);
            // the last seen key was cut off inside its value
            all[idx]
        })
        .unwrap_or("format")
}

pub fn from_json(text: &str, path: &Path) -> Result<MotionFile> {
    let header: Header = serde_json::from_str(text).map_err(|e| {
        let msg = if e.is_eof() {
            format!(
                "truncated file: section '{}' is incomplete or missing ({e})",
                missing_section(text)
            )
        } else {
            e.to_string()
        };
        parse_error(path, e.line(), e.column(), msg)
    })?;
    check_header(&header, path)?;
    let frames = header
        .frames
        .as_ref()
        .ok_or_else(|| parse_error(path, 0, 0, "missing section 'frames'"))?;
    let flat: Vec<f64> = frames.iter().flatten().copied().collect();
    if frames.len() != header.frame_count || frames.iter().any(|f| f.len() != header.frame_dim) {
        return Err(parse_error(
            path,
            0,
            0,
            "section 'frames' does not match frame_count × frame_dim",
        ));
    }
    finish(header, flat, path)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<MotionFile> {
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(parse_error(
            path,
            0,
            0,
            "missing section 'magic' (not an mwm binary file)",
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(parse_error(
            path,
            0,
            bytes.len(),
            format!("truncated file: section 'header' needs {header_len} bytes"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| parse_error(path, e.line(), e.column(), format!("header: {e}")))?;
    check_header(&header, path)?;
    let expected = header.frame_count * header.frame_dim * 4;
    if bytes.len() - body != expected {
        return Err(parse_error(
            path,
            0,
            bytes.len(),
            format!(
                "truncated file: section 'frames' has {} bytes, expected {expected}",
                bytes.len() - body
            ),
        ));
    }
    let flat = bytes[body..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    finish(header, flat, path)
}

fn check_header(h: &Header, path: &Path) -> Result<()> {
    if h.version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported {
            found: h.version,
            supported: FORMAT_VERSION,
        });
    }
    if h.format != "mwm" {
        return Err(parse_error(path, 0, 0, format!("unknown format '{}'", h.format)));
    }
    h.skeleton.validate()?;
    if h.skeleton.pose_dim() != h.frame_dim {
        return Err(Error::DimensionMismatch {
            expected: h.skeleton.pose_dim(),
            actual: h.frame_dim,
        });
    }
    Ok(())
}

fn finish(h: Header, flat: Vec<f64>, path: &Path) -> Result<MotionFile> {
    let motion = Motion::from_flat(&flat, h.skeleton.joint_count(), h.fps)?;
    let mut sequence = SegmentedSequence {
        motion,
        segments: h.segments,
    };
    sequence
        .validate()
        .map_err(|e| parse_error(path, 0, 0, format!("section 'segments': {e}")))?;
    sequence.motion.labels = Some(sequence.frame_labels());
    Ok(MotionFile {
        sequence,
        skeleton: h.skeleton,
        labels: LabelSet::from_names(h.labels)?,
    })
}

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    fps: f64,
    labels: Vec<String>,
    skeleton: Skeleton,
    split: Split,
    files: Vec<String>,
    train_label_counts: std::collections::BTreeMap<String, usize>,
    test_label_counts: std::collections::BTreeMap<String, usize>,
}

fn named_counts(corpus: &Corpus, ids: &[usize]) -> std::collections::BTreeMap<String, usize> {
    let counts = corpus.label_counts(ids);
    corpus
        .labels
        .action_ids()
        .map(|id| (corpus.labels.name(id).unwrap_or("?").to_string(), counts[id]))
        .collect()
}

/// Writes `manifest.json` plus one binary motion file per sequence.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("sequences"))?;
    let mut files = Vec::with_capacity(corpus.sequences.len());
    for (i, seq) in corpus.sequences.iter().enumerate() {
        let name = format!("sequences/{i:05}.mwm.bin");
        fs::write(dir.join(&name), to_bytes(seq, &corpus.skeleton, &corpus.labels)?)?;
        files.push(name);
    }
    let manifest = Manifest {
        format: "mwm-corpus".into(),
        version: FORMAT_VERSION,
        fps: corpus.fps,
        labels: corpus.labels.names().to_vec(),
        skeleton: corpus.skeleton.clone(),
        split: corpus.split.clone(),
        files,
        train_label_counts: named_counts(corpus, &corpus.split.train),
        test_label_counts: named_counts(corpus, &corpus.split.test),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| parse_error(&path, e.line(), e.column(), e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported {
            found: manifest.version,
            supported: FORMAT_VERSION,
        });
    }
    let labels = LabelSet::from_names(manifest.labels)?;
    let mut sequences = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let file = load_motion(&dir.join(name))?;
        if file.labels != labels {
            return Err(Error::LabelSetMismatch {
                checkpoint: file.labels.hash(),
                expected: labels.hash(),
            });
        }
        sequences.push(file.sequence);
    }
    let n = sequences.len();
    if manifest.split.train.iter().chain(&manifest.split.test).any(|&i| i >= n) {
        return Err(parse_error(
            &path,
            0,
            0,
            "section 'split' references a missing sequence",
        ));
    }
    Ok(Corpus {
        labels,
        skeleton: manifest.skeleton,
        fps: manifest.fps,
        sequences,
        split: manifest.split,
    })
}

/// SHA-256 over the binary encoding of every sequence and the split.
pub fn corpus_digest(corpus: &Corpus) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for seq in &corpus.sequences {
        h.update(to_bytes(seq, &corpus.skeleton, &corpus.labels)?);
    }
    h.update(serde_json::to_vec(&corpus.split)?);
    Ok(format!("{:x}", h.finalize()))
}
