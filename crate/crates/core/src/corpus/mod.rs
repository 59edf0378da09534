//! Synthetic multi-action corpus: labels, segmented sequences, generation,
//! sampling of training windows and test scripts, and the on-disk format.

mod generate;
pub mod io;
pub use io::{corpus_digest, load_corpus, load_motion, save_corpus, save_motion};
mod primitives;
mod sampling;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinematics::{Motion, Skeleton};

pub use generate::{generate_corpus, ActionSpec, CorpusConfig};
pub use primitives::Primitive;
pub use sampling::{sample_test_script, ActionScript, LengthStats, ScriptEntry, TrainingItem, Window};

/// Reserved id of the transition label.
pub const TRANSITION_ID: usize = 0;
pub const TRANSITION_NAME: &str = "transition";

/// Action names with dense integer ids; id 0 is always `transition`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: AsRef<str>>(actions: &[S]) -> Result<Self> {
        let mut names = vec![TRANSITION_NAME.to_string()];
        for a in actions {
            let a = a.as_ref();
            if a == TRANSITION_NAME || names.iter().any(|n| n == a) || a.is_empty() {
                return Err(Error::ConfigInvalid(format!("invalid or duplicate label '{a}'")));
            }
            names.push(a.to_string());
        }
        Ok(Self { names })
    }

    /// Parses a full name list as stored on disk (transition first).
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        match names.first() {
            Some(first) if first == TRANSITION_NAME => Self::new(&names[1..]),
            _ => Err(Error::ConfigInvalid("label list must start with 'transition'".into())),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of labels including transition.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_actions(&self) -> usize {
        self.names.len() - 1
    }

    pub fn action_ids(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.num_actions()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Resolves an action name; rejects transition and unknown names.
    pub fn action_id(&self, name: &str) -> Result<usize> {
        match self.id(name) {
            Some(TRANSITION_ID) => Err(Error::TransitionLabelRejected),
            Some(id) => Ok(id),
            None => Err(Error::UnknownLabel(format!(
                "'{name}' (valid: {})",
                self.names[1..].join(", ")
            ))),
        }
    }

    pub fn check_action(&self, id: usize) -> Result<()> {
        if id == TRANSITION_ID {
            Err(Error::TransitionLabelRejected)
        } else if id >= self.names.len() {
            Err(Error::UnknownLabel(format!("id {id}")))
        } else {
            Ok(())
        }
    }

    /// Hex SHA-256 over the ordered names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// First frame, 0-based.
    pub start: usize,
    /// One past the last frame.
    pub end: usize,
    pub label: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_transition(&self) -> bool {
        self.label == TRANSITION_ID
    }
}

/// A motion annotated with alternating action/transition segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedSequence {
    pub motion: Motion,
    pub segments: Vec<Segment>,
}

impl SegmentedSequence {
    /// Checks coverage, contiguity, alternation, and per-frame labels.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        let mut cursor = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != cursor || s.end <= s.start {
                return bad(format!("segment {i} is not contiguous"));
            }
            cursor = s.end;
            let expect_transition = i % 2 == 1;
            if s.is_transition() != expect_transition {
                return bad(format!("segment {i} breaks action/transition alternation"));
            }
        }
        if self.segments.last().is_some_and(Segment::is_transition) {
            return bad("sequence ends with a transition".into());
        }
        if cursor != self.motion.len() {
            return bad(format!("segments cover {cursor} of {} frames", self.motion.len()));
        }
        if let Some(labels) = &self.motion.labels {
            for s in &self.segments {
                if labels[s.start..s.end].iter().any(|&l| l != s.label) {
                    return bad("per-frame labels disagree with segments".into());
                }
            }
        }
        Ok(())
    }

    pub fn frame_labels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
            .collect()
    }

    pub fn action_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !s.is_transition())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Generated (or loaded) corpus plus its train/test split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub labels: LabelSet,
    pub skeleton: Skeleton,
    pub fps: f64,
    pub sequences: Vec<SegmentedSequence>,
    pub split: Split,
}

impl Corpus {
    pub fn train(&self) -> impl Iterator<Item = &SegmentedSequence> {
        self.split.train.iter().map(|&i| &self.sequences[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &SegmentedSequence> {
        self.split.test.iter().map(|&i| &self.sequences[i])
    }

    /// Number of sequences in `ids` containing each label, indexed by id.
    pub fn label_counts(&self, ids: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for &i in ids {
            let seq = &self.sequences[i];
            let mut seen = vec![false; self.labels.len()];
            for s in seq.action_segments() {
                seen[s.label] = true;
            }
            for (c, s) in counts.iter_mut().zip(seen) {
                *c += s as usize;
            }
        }
        counts
    }
}
