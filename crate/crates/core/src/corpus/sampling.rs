use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, LabelSet, SegmentedSequence, TRANSITION_ID};
use crate::error::{Error, Result};
use crate::kinematics::Motion;

/// Attempts before script sampling gives up on a dead end.
pub const MAX_DEAD_END_RETRIES: usize = 100;

/// `(action, transition, action)` located in one sequence: segments
/// `k`, `k + 1`, `k + 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub sequence: usize,
    pub segment: usize,
}

/// A contiguous `[S_p, T, S_c]` excerpt with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub motion: Motion,
    pub prev_label: usize,
    pub curr_label: usize,
    pub prev_len: usize,
    pub transition_len: usize,
    pub curr_len: usize,
}

impl TrainingItem {
    pub fn len(&self) -> usize {
        self.prev_len + self.transition_len + self.curr_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn previous(&self) -> Motion {
        self.motion.slice(0, self.prev_len)
    }

    /// `[T, S_c]`, the reconstruction target.
    pub fn target(&self) -> Motion {
        self.motion.slice(self.prev_len, self.len())
    }

    pub fn transition(&self) -> Motion {
        self.motion.slice(self.prev_len, self.prev_len + self.transition_len)
    }

    pub fn current(&self) -> Motion {
        self.motion.slice(self.prev_len + self.transition_len, self.len())
    }
}

fn windows_of(seq: &SegmentedSequence) -> impl Iterator<Item = usize> + '_ {
    (0..seq.segments.len().saturating_sub(2))
        .filter(move |&k| !seq.segments[k].is_transition() && seq.segments[k + 1].is_transition())
}

impl Corpus {
    pub fn windows(&self, ids: &[usize]) -> Vec<Window> {
        ids.iter()
            .flat_map(|&sequence| {
                windows_of(&self.sequences[sequence]).map(move |segment| Window { sequence, segment })
            })
            .collect()
    }

    pub fn train_windows(&self) -> Vec<Window> {
        self.windows(&self.split.train)
    }

    pub fn test_windows(&self) -> Vec<Window> {
        self.windows(&self.split.test)
    }

    pub fn item(&self, w: Window) -> TrainingItem {
        let seq = &self.sequences[w.sequence];
        let (p, t, c) = (
            seq.segments[w.segment],
            seq.segments[w.segment + 1],
            seq.segments[w.segment + 2],
        );
        let labels = std::iter::repeat_n(p.label, p.len())
            .chain(std::iter::repeat_n(TRANSITION_ID, t.len()))
            .chain(std::iter::repeat_n(c.label, c.len()))
            .collect();
        let mut motion = seq.motion.slice(p.start, c.end);
        motion.labels = Some(labels);
        TrainingItem {
            motion,
            prev_label: p.label,
            curr_label: c.label,
            prev_len: p.len(),
            transition_len: t.len(),
            curr_len: c.len(),
        }
    }

    /// Uniform draw over every eligible training window.
    pub fn sample_training_item<R: Rng>(&self, rng: &mut R) -> Result<TrainingItem> {
        let windows = self.train_windows();
        if windows.is_empty() {
            return Err(Error::CorpusEmpty(
                "no (action, transition, action) window in the training split".into(),
            ));
        }
        Ok(self.item(windows[rng.random_range(0..windows.len())]))
    }

    /// Action segments of the given split as standalone labelled motions.
    pub fn action_motions(&self, ids: &[usize]) -> Vec<(Motion, usize)> {
        ids.iter()
            .flat_map(|&i| {
                let seq = &self.sequences[i];
                seq.action_segments()
                    .map(|s| (seq.motion.slice(s.start, s.end), s.label))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn transition_motions(&self, ids: &[usize]) -> Vec<Motion> {
        ids.iter()
            .flat_map(|&i| {
                let seq = &self.sequences[i];
                seq.segments
                    .iter()
                    .filter(|s| s.is_transition())
                    .map(|s| seq.motion.slice(s.start, s.end))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Per-label length statistics and observed action successions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    /// Mean action segment length per label id (index 0 unused).
    pub mean_action: Vec<Option<f64>>,
    /// Mean length of transitions that precede an action of each label.
    pub mean_transition_before: Vec<Option<f64>>,
    pub mean_transition: f64,
    pub mean_action_overall: f64,
    /// Distinct observed successors per label, ascending.
    pub successors: Vec<Vec<usize>>,
}

fn mean(v: &[usize]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64)
}

impl LengthStats {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a SegmentedSequence>, labels: usize) -> Self {
        let mut action = vec![Vec::new(); labels];
        let mut before = vec![Vec::new(); labels];
        let mut transitions = Vec::new();
        let mut successors = vec![Vec::new(); labels];
        for seq in seqs {
            let segs = &seq.segments;
            for (k, s) in segs.iter().enumerate() {
                if s.is_transition() {
                    transitions.push(s.len());
                    continue;
                }
                action[s.label].push(s.len());
                if k > 0 && segs[k - 1].is_transition() {
                    before[s.label].push(segs[k - 1].len());
                }
                if let Some(next) = segs[k + 1..].iter().find(|n| !n.is_transition()) {
                    if !successors[s.label].contains(&next.label) {
                        successors[s.label].push(next.label);
                    }
                }
            }
        }
        successors.iter_mut().for_each(|s| s.sort_unstable());
        let all_actions: Vec<usize> = action.iter().flatten().copied().collect();
        Self {
            mean_action: action.iter().map(|v| mean(v)).collect(),
            mean_transition_before: before.iter().map(|v| mean(v)).collect(),
            mean_transition: mean(&transitions).unwrap_or(1.0),
            mean_action_overall: mean(&all_actions).unwrap_or(1.0),
            successors,
        }
    }

    /// Labels that occur as an action at least once.
    pub fn present(&self) -> Vec<usize> {
        (1..self.mean_action.len())
            .filter(|&l| self.mean_action[l].is_some())
            .collect()
    }

    /// Rounded default lengths for an action: `(transition, action)`.
    pub fn default_lengths(&self, label: usize) -> (usize, usize) {
        let t = self
            .mean_transition_before
            .get(label)
            .copied()
            .flatten()
            .unwrap_or(self.mean_transition);
        let a = self
            .mean_action
            .get(label)
            .copied()
            .flatten()
            .unwrap_or(self.mean_action_overall);
        ((t.round() as usize).max(1), (a.round() as usize).max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub label: usize,
    /// Ignored for the first entry.
    pub transition_length: usize,
    pub action_length: usize,
}

/// The action sequence driving long-term generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub entries: Vec<ScriptEntry>,
}

impl ActionScript {
    /// Script over named actions with lengths from `stats`.
    pub fn from_names<S: AsRef<str>>(names: &[S], labels: &LabelSet, stats: &LengthStats) -> Result<Self> {
        let entries = names
            .iter()
            .map(|n| {
                let label = labels.action_id(n.as_ref().trim())?;
                let (transition_length, action_length) = stats.default_lengths(label);
                Ok(ScriptEntry {
                    label,
                    transition_length,
                    action_length,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let script = Self { entries };
        script.validate(labels)?;
        Ok(script)
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument("script is empty".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            labels.check_action(e.label)?;
            if e.action_length == 0 || (i > 0 && e.transition_length == 0) {
                return Err(Error::InvalidArgument(format!("entry {i} has a zero length")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Samples an `n`-step script following successions observed in the test
/// split, with lengths set to test-split means.
pub fn sample_test_script<R: Rng>(corpus: &Corpus, rng: &mut R, n: usize) -> Result<ActionScript> {
    let stats = LengthStats::from_sequences(corpus.test(), corpus.labels.len());
    sample_script_from_stats(&stats, rng, n)
}

pub(crate) fn sample_script_from_stats<R: Rng>(stats: &LengthStats, rng: &mut R, n: usize) -> Result<ActionScript> {
    if n == 0 {
        return Err(Error::InvalidArgument("script needs at least one step".into()));
    }
    let present = stats.present();
    if present.is_empty() || (n > 1 && stats.successors.iter().all(Vec::is_empty)) {
        return Err(Error::CorpusEmpty("test split has no action pairs".into()));
    }
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    for k in 0..n {
        let candidates = match labels.last() {
            None => &present,
            Some(&prev) => &stats.successors[prev],
        };
        let needs_successor = k + 1 < n;
        let mut attempts = 0;
        let label = loop {
            if candidates.is_empty() {
                return Err(Error::DeadEnd {
                    label: labels.last().copied().unwrap_or(0),
                    attempts,
                });
            }
            let c = candidates[rng.random_range(0..candidates.len())];
            if !needs_successor || !stats.successors[c].is_empty() {
                break c;
            }
            attempts += 1;
            if attempts >= MAX_DEAD_END_RETRIES {
                return Err(Error::DeadEnd { label: c, attempts });
            }
        };
        labels.push(label);
    }
    let entries = labels
        .into_iter()
        .map(|label| {
            let (transition_length, action_length) = stats.default_lengths(label);
            ScriptEntry {
                label,
                transition_length,
                action_length,
            }
        })
        .collect();
    Ok(ActionScript { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Segment, Split};
    use crate::kinematics::{Pose, Skeleton};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a sequence from `(label, len)` runs; transitions use label 0.
    fn seq(runs: &[(usize, usize)]) -> SegmentedSequence {
        let mut segments = Vec::new();
        let mut cursor = 0;
        for &(label, len) in runs {
            segments.push(Segment {
                start: cursor,
                end: cursor + len,
                label,
            });
            cursor += len;
        }
        let frames = (0..cursor)
            .map(|i| {
                let mut p = Pose::identity(21);
                p.x.x = i as f64;
                p
            })
            .collect();
        let s = SegmentedSequence {
            motion: Motion::new(frames, 30.0),
            segments,
        };
        let labels = s.frame_labels();
        SegmentedSequence {
            motion: s.motion.with_labels(labels),
            ..s
        }
    }

    fn corpus(train: Vec<SegmentedSequence>, test: Vec<SegmentedSequence>) -> Corpus {
        let n_train = train.len();
        let n = n_train + test.len();
        Corpus {
            labels: LabelSet::new(&["walk", "sit", "wave"]).unwrap(),
            skeleton: Skeleton::toy(),
            fps: 30.0,
            sequences: train.into_iter().chain(test).collect(),
            split: Split {
                train: (0..n_train).collect(),
                test: (n_train..n).collect(),
            },
        }
    }

    #[test]
    fn single_window_is_returned_exactly() {
        let c = corpus(vec![seq(&[(1, 5), (0, 3), (2, 4)])], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let item = c.sample_training_item(&mut rng).unwrap();
        assert_eq!(item.motion.len(), 12);
        assert_eq!((item.prev_len, item.transition_len, item.curr_len), (5, 3, 4));
        assert_eq!((item.prev_label, item.curr_label), (1, 2));
        let expected: Vec<usize> = [1; 5].into_iter().chain([0; 3]).chain([2; 4]).collect();
        assert_eq!(item.motion.labels.as_ref().unwrap(), &expected);
        assert_eq!(item.motion.frames[0].x.x, 0.0);
        assert_eq!(item.target().len(), 7);
        assert_eq!(item.current().frames[0].x.x, 8.0);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let c = corpus(vec![], vec![seq(&[(1, 5), (0, 3), (2, 4)])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(c.sample_training_item(&mut rng), Err(Error::CorpusEmpty(_))));
    }

    #[test]
    fn window_draws_are_uniform() {
        // 2 + 1 + 3 = 6 windows of varying layout
        let c = corpus(
            vec![
                seq(&[(1, 4), (0, 2), (2, 4), (0, 2), (3, 4)]),
                seq(&[(2, 3), (0, 2), (1, 3)]),
                seq(&[(3, 2), (0, 1), (1, 2), (0, 1), (2, 2), (0, 1), (3, 2)]),
            ],
            vec![],
        );
        let windows = c.train_windows();
        assert_eq!(windows.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let w = windows[rng.random_range(0..windows.len())];
            *counts.entry(w).or_insert(0usize) += 1;
        }
        // chi-square with 5 dof; 99.9% quantile is 20.5
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 20.5, "chi2 = {chi2}");
        // and each within 3 sigma of uniform
        let sigma = (draws as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for &o in counts.values() {
            assert!((o as f64 - expected).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn sample_training_item_covers_all_windows() {
        let c = corpus(vec![seq(&[(1, 4), (0, 2), (2, 4), (0, 2), (3, 4)])], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let item = c.sample_training_item(&mut rng).unwrap();
            seen.insert((item.prev_label, item.curr_label));
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn forced_chain_alternates() {
        let c = corpus(vec![], vec![seq(&[(1, 10), (0, 4), (2, 20), (0, 6), (1, 30)])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let s = sample_test_script(&c, &mut rng, 5).unwrap();
            let labels: Vec<usize> = s.entries.iter().map(|e| e.label).collect();
            assert!(labels == vec![1, 2, 1, 2, 1] || labels == vec![2, 1, 2, 1, 2]);
        }
    }

    #[test]
    fn dead_end_is_reported() {
        let c = corpus(vec![], vec![seq(&[(1, 10), (0, 4), (2, 20)])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_test_script(&c, &mut rng, 2).unwrap();
        assert_eq!(s.entries.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(
            sample_test_script(&c, &mut rng, 3),
            Err(Error::DeadEnd { .. })
        ));
    }

    #[test]
    fn single_step_script() {
        let c = corpus(vec![], vec![seq(&[(1, 10), (0, 4), (2, 20)])]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_test_script(&c, &mut rng, 1).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn lengths_are_test_split_means() {
        let test = vec![
            seq(&[(1, 10), (0, 4), (2, 20), (0, 7), (1, 31)]),
            seq(&[(2, 23), (0, 5), (1, 12)]),
        ];
        let c = corpus(vec![seq(&[(1, 99), (0, 99), (2, 99)])], test.clone());
        // brute force over the test split
        let mut act = std::collections::HashMap::<usize, Vec<usize>>::new();
        let mut before = std::collections::HashMap::<usize, Vec<usize>>::new();
        for s in &test {
            for (k, seg) in s.segments.iter().enumerate() {
                if seg.label != 0 {
                    act.entry(seg.label).or_default().push(seg.len());
                    if k > 0 {
                        before.entry(seg.label).or_default().push(s.segments[k - 1].len());
                    }
                }
            }
        }
        let avg = |v: &Vec<usize>| (v.iter().sum::<usize>() as f64 / v.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_test_script(&c, &mut rng, 6).unwrap();
        for e in &s.entries {
            assert_eq!(e.action_length, avg(&act[&e.label]));
            assert_eq!(e.transition_length, avg(&before[&e.label]));
        }
        // label 1: actions 10, 31, 12 -> 17.67 -> 18; transitions before: 7, 5 -> 6
        let stats = LengthStats::from_sequences(c.test(), 4);
        assert_eq!(stats.default_lengths(1), (6, 18));
    }

    #[test]
    fn script_from_names_rejects_unknown() {
        let labels = LabelSet::new(&["walk", "sit"]).unwrap();
        let stats = LengthStats::from_sequences([&seq(&[(1, 10), (0, 4), (2, 20)])], 3);
        let s = ActionScript::from_names(&["walk", "sit"], &labels, &stats).unwrap();
        assert_eq!(
            s.entries[1],
            ScriptEntry {
                label: 2,
                transition_length: 4,
                action_length: 20
            }
        );
        assert!(matches!(
            ActionScript::from_names(&["fly"], &labels, &stats),
            Err(Error::UnknownLabel(_))
        ));
    }
}
