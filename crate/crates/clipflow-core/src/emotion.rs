//! Audio-emotion protocol: the eight-label space, cross-dataset label
//! merging, sliding-window frame classification, subsegment voting, and the
//! emotion-decoupled reference sampler.
//!
//! Classification itself is behind a trait; anything that can turn a window
//! of audio features into eight probabilities plugs in. The shipped
//! synthetic classifier exists so every downstream stage can run and be
//! tested without a trained model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::{DenseMatrix, SeededRng};

/// Number of emotion classes.
pub const EMOTION_LABEL_COUNT: usize = 8;

/// Window width in seconds for per-frame classification.
pub const DEFAULT_WINDOW_SECONDS: f64 = 3.0;

/// Frames per subsegment; matches the generation clip length so each clip
/// gets exactly one label.
pub const DEFAULT_SUBSEGMENT_FRAMES: usize = 16;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// The eight emotion classes in canonical order.
///
/// The order is load-bearing: ties in argmax and voting resolve to the
/// lowest index, and probability rows are indexed by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Disgusted,
    Fearful,
    Happy,
    Neutral,
    Sad,
    Surprised,
    Others,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; EMOTION_LABEL_COUNT] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgusted,
        EmotionLabel::Fearful,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
        EmotionLabel::Surprised,
        EmotionLabel::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(CoreError::OutOfRange {
            context: "EmotionLabel index",
            value: i as f64,
            range: "[0, 7]",
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgusted => "disgusted",
            EmotionLabel::Fearful => "fearful",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprised => "surprised",
            EmotionLabel::Others => "others",
        }
    }

    /// Case-insensitive parse of a canonical label name.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == lower)
            .ok_or_else(|| CoreError::Parse {
                line: 0,
                message: format!("unknown emotion label {s:?}"),
            })
    }
}

impl std::fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Probabilities
// ---------------------------------------------------------------------------

/// Check an eight-way probability vector: nonnegative, sums to one within 1e-9.
pub fn validate_probabilities(p: &[f64]) -> Result<()> {
    if p.len() != EMOTION_LABEL_COUNT {
        return Err(CoreError::InvalidProbabilities {
            detail: format!("expected {EMOTION_LABEL_COUNT} entries, got {}", p.len()),
        });
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CoreError::InvalidProbabilities {
            detail: "entries must be finite and nonnegative".into(),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidProbabilities {
            detail: format!("entries sum to {sum}, not 1"),
        });
    }
    Ok(())
}

/// Argmax over a validated probability vector; ties go to the lowest index.
pub fn argmax_label(p: &[f64]) -> Result<EmotionLabel> {
    validate_probabilities(p)?;
    let mut best = 0;
    for (i, x) in p.iter().enumerate().skip(1) {
        if *x > p[best] {
            best = i;
        }
    }
    EmotionLabel::from_index(best)
}

// ---------------------------------------------------------------------------
// Audio features and classifiers
// ---------------------------------------------------------------------------

/// Per-frame audio features at a fixed frame rate. Rows are frames.
#[derive(Debug, Clone)]
pub struct AudioTimeline {
    frame_rate: f64,
    features: DenseMatrix,
}

impl AudioTimeline {
    pub fn new(frame_rate: f64, features: DenseMatrix) -> Result<Self> {
        if !frame_rate.is_finite() || frame_rate <= 0.0 {
            return Err(CoreError::OutOfRange {
                context: "AudioTimeline frame_rate",
                value: frame_rate,
                range: "(0, inf)",
            });
        }
        if features.rows() == 0 {
            return Err(CoreError::EmptyInput { context: "AudioTimeline" });
        }
        Ok(Self { frame_rate, features })
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty timelines
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }
}

/// Frame range `[start, end)` of a window of `window_seconds` centered on
/// `frame`, clamped to the timeline. Clamping shortens edge windows rather
/// than padding them with fabricated audio.
pub fn window_bounds(
    audio: &AudioTimeline,
    frame: usize,
    window_seconds: f64,
) -> Result<(usize, usize)> {
    if !window_seconds.is_finite() || window_seconds <= 0.0 {
        return Err(CoreError::OutOfRange {
            context: "window_seconds",
            value: window_seconds,
            range: "(0, inf)",
        });
    }
    let n = audio.len();
    if frame >= n {
        return Err(CoreError::OutOfRange {
            context: "window frame index",
            value: frame as f64,
            range: "[0, len)",
        });
    }
    let half = window_seconds / 2.0 * audio.frame_rate();
    let lo = ((frame as f64 - half).ceil()).max(0.0) as usize;
    let hi = ((frame as f64 + half).floor()).min((n - 1) as f64) as usize;
    Ok((lo, hi + 1))
}

/// Anything that maps a window of audio feature rows to emotion probabilities.
pub trait FrameClassifier {
    fn classify(&self, window: &DenseMatrix) -> Result<Vec<f64>>;
}

/// Returns the same one-hot vector for every window.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub EmotionLabel);

impl FrameClassifier for ConstantClassifier {
    fn classify(&self, _window: &DenseMatrix) -> Result<Vec<f64>> {
        let mut p = vec![0.0; EMOTION_LABEL_COUNT];
        p[self.0.index()] = 1.0;
        Ok(p)
    }
}

/// Deterministic stand-in classifier: hashes the window contents into a
/// probability vector. Same window, same answer, on every platform.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticClassifier {
    seed: u64,
}

impl SyntheticClassifier {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl FrameClassifier for SyntheticClassifier {
    fn classify(&self, window: &DenseMatrix) -> Result<Vec<f64>> {
        // FNV-1a over the raw bit patterns, then expand into eight weights.
        let mut h = self.seed ^ 0xcbf2_9ce4_8422_2325;
        for x in window.as_slice() {
            h = (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01B3);
        }
        let mut weights = [0.0f64; EMOTION_LABEL_COUNT];
        let mut sum = 0.0;
        for (k, w) in weights.iter_mut().enumerate() {
            // Strictly positive so no label is ever impossible.
            *w = 1e-3 + (splitmix64(h ^ k as u64) >> 11) as f64 / (1u64 << 53) as f64;
            sum += *w;
        }
        Ok(weights.iter().map(|w| w / sum).collect())
    }
}

// ---------------------------------------------------------------------------
// Frame classification and voting
// ---------------------------------------------------------------------------

/// Classify one frame through its centered, clamped window.
pub fn frame_emotion(
    audio: &AudioTimeline,
    frame: usize,
    classifier: &dyn FrameClassifier,
    window_seconds: f64,
) -> Result<EmotionLabel> {
    let (lo, hi) = window_bounds(audio, frame, window_seconds)?;
    let d = audio.features().cols();
    let rows = audio.features().as_slice()[lo * d..hi * d].to_vec();
    let window = DenseMatrix::new(hi - lo, d, rows)?;
    let probs = classifier.classify(&window)?;
    argmax_label(&probs)
}

/// Modal label of a subsegment; ties go to the lowest canonical index.
pub fn subsegment_vote(per_frame: &[EmotionLabel]) -> Result<EmotionLabel> {
    if per_frame.is_empty() {
        return Err(CoreError::EmptyInput { context: "subsegment_vote" });
    }
    let mut counts = [0usize; EMOTION_LABEL_COUNT];
    for label in per_frame {
        counts[label.index()] += 1;
    }
    let max = *counts.iter().max().unwrap();
    let winner = counts.iter().position(|c| *c == max).unwrap();
    EmotionLabel::from_index(winner)
}

// ---------------------------------------------------------------------------
// Timelines
// ---------------------------------------------------------------------------

/// One voted stretch of frames; `end_frame` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub label: EmotionLabel,
}

/// Per-frame labels plus their subsegment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTimeline {
    pub frame_rate: f64,
    pub per_frame_labels: Vec<EmotionLabel>,
    pub subsegments: Vec<Subsegment>,
}

impl EmotionTimeline {
    /// Check the structural invariants: subsegments partition the frame
    /// range in order, and each label is the vote over its frames.
    pub fn validate(&self) -> Result<()> {
        let n = self.per_frame_labels.len();
        let mut cursor = 0usize;
        for seg in &self.subsegments {
            if seg.start_frame != cursor || seg.end_frame <= seg.start_frame {
                return Err(CoreError::TimelineMismatch {
                    detail: format!(
                        "subsegment [{}, {}) does not continue partition at {cursor}",
                        seg.start_frame, seg.end_frame
                    ),
                });
            }
            if seg.end_frame > n {
                return Err(CoreError::TimelineMismatch {
                    detail: format!("subsegment end {} past frame count {n}", seg.end_frame),
                });
            }
            let vote = subsegment_vote(&self.per_frame_labels[seg.start_frame..seg.end_frame])?;
            if vote != seg.label {
                return Err(CoreError::TimelineMismatch {
                    detail: format!(
                        "subsegment [{}, {}) labeled {} but votes {}",
                        seg.start_frame, seg.end_frame, seg.label, vote
                    ),
                });
            }
            cursor = seg.end_frame;
        }
        if cursor != n {
            return Err(CoreError::TimelineMismatch {
                detail: format!("subsegments cover {cursor} of {n} frames"),
            });
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.per_frame_labels.len()
    }

    /// Label of subsegment `i`, used as the emotion for generated clip `i`.
    pub fn subsegment_label(&self, i: usize) -> Result<EmotionLabel> {
        self.subsegments
            .get(i)
            .map(|s| s.label)
            .ok_or(CoreError::OutOfRange {
                context: "subsegment index",
                value: i as f64,
                range: "[0, subsegment count)",
            })
    }
}

/// Partition labels into runs of `subsegment_frames` (last may be shorter)
/// and vote each run.
pub fn timeline_from_labels(
    frame_rate: f64,
    per_frame_labels: Vec<EmotionLabel>,
    subsegment_frames: usize,
) -> Result<EmotionTimeline> {
    if subsegment_frames == 0 {
        return Err(CoreError::OutOfRange {
            context: "subsegment_frames",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    if per_frame_labels.is_empty() {
        return Err(CoreError::EmptyInput { context: "timeline_from_labels" });
    }
    let mut subsegments = Vec::new();
    let mut start = 0usize;
    for run in per_frame_labels.chunks(subsegment_frames) {
        let end = start + run.len();
        subsegments.push(Subsegment { start_frame: start, end_frame: end, label: subsegment_vote(run)? });
        start = end;
    }
    let timeline = EmotionTimeline { frame_rate, per_frame_labels, subsegments };
    timeline.validate()?;
    Ok(timeline)
}

/// Classify every frame of `audio` and assemble the voted timeline.
pub fn build_timeline(
    audio: &AudioTimeline,
    classifier: &dyn FrameClassifier,
    window_seconds: f64,
    subsegment_frames: usize,
) -> Result<EmotionTimeline> {
    let labels = (0..audio.len())
        .map(|i| frame_emotion(audio, i, classifier, window_seconds))
        .collect::<Result<Vec<_>>>()?;
    timeline_from_labels(audio.frame_rate(), labels, subsegment_frames)
}

/// Build a timeline from externally supplied per-frame probability rows,
/// bypassing windowing entirely.
pub fn timeline_from_probability_rows(
    frame_rate: f64,
    rows: &[Vec<f64>],
    subsegment_frames: usize,
) -> Result<EmotionTimeline> {
    if rows.is_empty() {
        return Err(CoreError::EmptyInput { context: "timeline_from_probability_rows" });
    }
    let labels = rows.iter().map(|r| argmax_label(r)).collect::<Result<Vec<_>>>()?;
    timeline_from_labels(frame_rate, labels, subsegment_frames)
}

/// Parse a probability-rows file: eight whitespace-separated numbers per
/// line, `#` starting a comment, blank lines skipped.
pub fn parse_probability_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(EMOTION_LABEL_COUNT);
        for tok in line.split_whitespace() {
            row.push(tok.parse::<f64>().map_err(|e| CoreError::Parse {
                line: idx + 1,
                message: format!("bad number {tok:?}: {e}"),
            })?);
        }
        if row.len() != EMOTION_LABEL_COUNT {
            return Err(CoreError::Parse {
                line: idx + 1,
                message: format!("expected {EMOTION_LABEL_COUNT} columns, got {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Label merging
// ---------------------------------------------------------------------------

/// Datasets covered by the shipped merge table.
pub const SHIPPED_DATASETS: [&str; 25] = [
    "AESDD",
    "ASED",
    "ASVP-ESD",
    "CaFE",
    "EMNS",
    "EmoDB",
    "EmoV-DB",
    "Emozionalmente",
    "eNTERFACE",
    "ESD",
    "JL-Corpus",
    "M3ED",
    "MEAD",
    "MESD",
    "MTG-Jamendo",
    "Oreau",
    "PAVOQUE",
    "Polish",
    "RAVDESS",
    "RAVDESS-Song",
    "SAVEE",
    "SUBESCO",
    "TESS",
    "TurEV-DB",
    "URDU",
];

/// Maps (dataset, source label) pairs onto the canonical label space.
///
/// Datasets must be declared; looking up an undeclared dataset is an error.
/// Within a declared dataset the mapping is total: source labels without an
/// explicit rule fall through to `others`. Source labels are matched
/// case-insensitively, dataset names exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelMergeTable {
    datasets: BTreeSet<String>,
    rules: BTreeMap<(String, String), EmotionLabel>,
}

impl LabelMergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare_dataset(&mut self, dataset: &str) {
        self.datasets.insert(dataset.to_string());
    }

    /// Add a rule; declares the dataset if needed. Returns an error if the
    /// same (dataset, source) pair already maps somewhere.
    pub fn insert(&mut self, dataset: &str, source: &str, target: EmotionLabel) -> Result<()> {
        let key = (dataset.to_string(), source.trim().to_ascii_lowercase());
        if self.rules.contains_key(&key) {
            return Err(CoreError::Parse {
                line: 0,
                message: format!("duplicate merge rule for ({dataset}, {source})"),
            });
        }
        self.datasets.insert(key.0.clone());
        self.rules.insert(key, target);
        Ok(())
    }

    /// Resolve a dataset's source label to a canonical label.
    pub fn merge(&self, dataset: &str, source: &str) -> Result<EmotionLabel> {
        if !self.datasets.contains(dataset) {
            return Err(CoreError::UnknownDataset { name: dataset.to_string() });
        }
        let key = (dataset.to_string(), source.trim().to_ascii_lowercase());
        Ok(self.rules.get(&key).copied().unwrap_or(EmotionLabel::Others))
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.datasets.iter().map(String::as_str)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &str, EmotionLabel)> {
        self.rules.iter().map(|((d, s), l)| (d.as_str(), s.as_str(), *l))
    }

    /// The built-in table: every known dataset carries identity mappings for
    /// the eight canonical names, plus the pleasure-to-happy rule for
    /// ASVP-ESD. Finer per-dataset curation is a data artifact loaded via
    /// [`LabelMergeTable::from_text`], not code.
    pub fn shipped() -> Self {
        let mut table = Self::new();
        for dataset in SHIPPED_DATASETS {
            for label in EmotionLabel::ALL {
                table.insert(dataset, label.name(), label).expect("shipped table is duplicate-free");
            }
        }
        table
            .insert("ASVP-ESD", "pleasure", EmotionLabel::Happy)
            .expect("shipped table is duplicate-free");
        table
    }

    /// Render as editable text: one `dataset<TAB>source<TAB>target` row per
    /// rule. Datasets declared without rules appear as `dataset` alone.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# dataset\tsource_label\ttarget_label\n");
        for dataset in &self.datasets {
            if !self.rules.keys().any(|(d, _)| d == dataset) {
                out.push_str(dataset);
                out.push('\n');
            }
        }
        for ((dataset, source), target) in &self.rules {
            out.push_str(&format!("{dataset}\t{source}\t{target}\n"));
        }
        out
    }

    /// Parse the text form produced by [`LabelMergeTable::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            match fields.as_slice() {
                [dataset] => table.declare_dataset(dataset),
                [dataset, source, target] => {
                    let label = EmotionLabel::parse(target).map_err(|_| CoreError::Parse {
                        line: idx + 1,
                        message: format!("unknown target label {target:?}"),
                    })?;
                    table.insert(dataset, source, label).map_err(|_| CoreError::Parse {
                        line: idx + 1,
                        message: format!("duplicate rule for ({dataset}, {source})"),
                    })?;
                }
                _ => {
                    return Err(CoreError::Parse {
                        line: idx + 1,
                        message: format!("expected 1 or 3 tab-separated fields, got {}", fields.len()),
                    })
                }
            }
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// Decoupled reference sampling
// ---------------------------------------------------------------------------

/// One indexed reference frame of the training corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub identity: String,
    pub emotion: EmotionLabel,
    pub clip_id: String,
    pub reference_frame_id: String,
}

/// Identity-keyed view over corpus records.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    records: Vec<CorpusRecord>,
    by_identity: BTreeMap<String, Vec<usize>>,
}

/// Result of decoupled sampling: a frame id, and whether the sampler had to
/// fall back to a same-emotion frame because no other emotion exists for
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoupledReference {
    pub reference_frame_id: String,
    pub fallback: bool,
}

impl CorpusIndex {
    pub fn new(records: Vec<CorpusRecord>) -> Self {
        let mut by_identity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            by_identity.entry(rec.identity.clone()).or_default().push(i);
        }
        Self { records, by_identity }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records for an identity, in insertion order.
    pub fn frames_for(&self, identity: &str) -> Vec<&CorpusRecord> {
        self.by_identity
            .get(identity)
            .map(|ids| ids.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Pick a reference frame of the same identity with a different emotion,
    /// uniformly among candidates. Falls back (flagged) to any frame of the
    /// identity when every frame carries `clip_emotion`.
    pub fn sample_decoupled_reference(
        &self,
        identity: &str,
        clip_emotion: EmotionLabel,
        rng: &mut SeededRng,
    ) -> Result<DecoupledReference> {
        let ids = self
            .by_identity
            .get(identity)
            .ok_or_else(|| CoreError::UnknownIdentity { identity: identity.to_string() })?;
        let candidates: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| self.records[i].emotion != clip_emotion)
            .collect();
        if candidates.is_empty() {
            let pick = ids[rng.index(ids.len())];
            return Ok(DecoupledReference {
                reference_frame_id: self.records[pick].reference_frame_id.clone(),
                fallback: true,
            });
        }
        let pick = candidates[rng.index(candidates.len())];
        Ok(DecoupledReference {
            reference_frame_id: self.records[pick].reference_frame_id.clone(),
            fallback: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_audio(frame_rate: f64, values: &[f64]) -> AudioTimeline {
        AudioTimeline::new(
            frame_rate,
            DenseMatrix::new(values.len(), 1, values.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_order_and_indices() {
        let names = ["angry", "disgusted", "fearful", "happy", "neutral", "sad", "surprised", "others"];
        for (i, name) in names.iter().enumerate() {
            let label = EmotionLabel::from_index(i).unwrap();
            assert_eq!(label.index(), i);
            assert_eq!(label.name(), *name);
            assert_eq!(EmotionLabel::parse(name).unwrap(), label);
            assert_eq!(EmotionLabel::parse(&name.to_uppercase()).unwrap(), label);
        }
        assert!(EmotionLabel::from_index(8).is_err());
        assert!(EmotionLabel::parse("bored").is_err());
    }

    #[test]
    fn labels_serialize_as_lowercase_strings() {
        assert_eq!(serde_json::to_string(&EmotionLabel::Happy).unwrap(), "\"happy\"");
        let back: EmotionLabel = serde_json::from_str("\"surprised\"").unwrap();
        assert_eq!(back, EmotionLabel::Surprised);
    }

    #[test]
    fn merge_table_shipped_examples() {
        let table = LabelMergeTable::shipped();
        assert_eq!(table.merge("ASVP-ESD", "pleasure").unwrap(), EmotionLabel::Happy);
        assert_eq!(table.merge("URDU", "angry").unwrap(), EmotionLabel::Angry);
        assert_eq!(table.merge("MEAD", "boredom-like-unmapped").unwrap(), EmotionLabel::Others);
        assert!(matches!(
            table.merge("NotADataset", "happy"),
            Err(CoreError::UnknownDataset { .. })
        ));
    }

    #[test]
    fn merge_is_case_insensitive_on_source_labels() {
        let table = LabelMergeTable::shipped();
        assert_eq!(table.merge("ASVP-ESD", "PLEASURE").unwrap(), EmotionLabel::Happy);
        assert_eq!(table.merge("TESS", "Sad").unwrap(), EmotionLabel::Sad);
    }

    #[test]
    fn shipped_table_round_trips_through_text() {
        let table = LabelMergeTable::shipped();
        let text = table.to_text();
        let back = LabelMergeTable::from_text(&text).unwrap();
        assert_eq!(back, table);
        // Every declared rule resolves to its target.
        for (dataset, source, target) in table.rules() {
            assert_eq!(back.merge(dataset, source).unwrap(), target);
        }
        assert_eq!(table.datasets().count(), SHIPPED_DATASETS.len());
    }

    #[test]
    fn merge_table_text_parse_errors_carry_line_numbers() {
        let bad = "MEAD\thappy\n"; // two fields
        match LabelMergeTable::from_text(bad) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let dup = "MEAD\thappy\thappy\nMEAD\thappy\tsad\n";
        match LabelMergeTable::from_text(dup) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        let bad_label = "MEAD\tjoyful\tjolly\n";
        assert!(LabelMergeTable::from_text(bad_label).is_err());
    }

    #[test]
    fn window_bounds_clamp_at_edges() {
        let audio = flat_audio(30.0, &vec![0.0; 200]);
        // Half window is 45 frames at 30 fps and 3 s.
        assert_eq!(window_bounds(&audio, 0, 3.0).unwrap(), (0, 46));
        assert_eq!(window_bounds(&audio, 100, 3.0).unwrap(), (55, 146));
        assert_eq!(window_bounds(&audio, 199, 3.0).unwrap(), (154, 200));
        assert!(window_bounds(&audio, 200, 3.0).is_err());
        assert!(window_bounds(&audio, 0, 0.0).is_err());
    }

    #[test]
    fn constant_classifier_labels_every_frame() {
        let audio = flat_audio(30.0, &vec![0.5; 64]);
        let clf = ConstantClassifier(EmotionLabel::Happy);
        for i in [0, 10, 63] {
            assert_eq!(frame_emotion(&audio, i, &clf, 3.0).unwrap(), EmotionLabel::Happy);
        }
    }

    #[test]
    fn edge_frame_matches_explicitly_clamped_window() {
        let mut rng = SeededRng::new(42);
        let values: Vec<f64> = (0..200).map(|_| rng.standard_normal()).collect();
        let audio = flat_audio(30.0, &values);
        let clf = SyntheticClassifier::new(7);
        let via_op = frame_emotion(&audio, 0, &clf, 3.0).unwrap();
        // Build the clamped window by hand: frames [0, 46).
        let window = DenseMatrix::new(46, 1, values[0..46].to_vec()).unwrap();
        let direct = argmax_label(&clf.classify(&window).unwrap()).unwrap();
        assert_eq!(via_op, direct);
    }

    #[test]
    fn argmax_tie_resolves_to_lowest_index() {
        let mut p = vec![0.0; 8];
        p[EmotionLabel::Happy.index()] = 0.5;
        p[EmotionLabel::Sad.index()] = 0.5;
        assert_eq!(argmax_label(&p).unwrap(), EmotionLabel::Happy);
    }

    #[test]
    fn probability_validation_rejects_bad_vectors() {
        assert!(validate_probabilities(&[0.125; 8]).is_ok());
        assert!(validate_probabilities(&[0.2; 8]).is_err()); // sums to 1.6
        assert!(validate_probabilities(&[0.5, 0.5]).is_err()); // wrong arity
        let mut neg = vec![0.25; 8];
        neg[0] = -0.75;
        assert!(validate_probabilities(&neg).is_err());
    }

    struct BadClassifier;
    impl FrameClassifier for BadClassifier {
        fn classify(&self, _w: &DenseMatrix) -> Result<Vec<f64>> {
            Ok(vec![0.1; 8]) // sums to 0.8
        }
    }

    #[test]
    fn invalid_classifier_output_is_an_error() {
        let audio = flat_audio(30.0, &[0.0; 4]);
        assert!(matches!(
            frame_emotion(&audio, 0, &BadClassifier, 3.0),
            Err(CoreError::InvalidProbabilities { .. })
        ));
    }

    #[test]
    fn vote_examples() {
        use EmotionLabel::*;
        assert_eq!(subsegment_vote(&[Happy, Happy, Sad]).unwrap(), Happy);
        assert_eq!(subsegment_vote(&[Sad, Happy]).unwrap(), Happy); // tie, 3 < 5
        assert_eq!(subsegment_vote(&[Others; 5]).unwrap(), Others);
        assert!(subsegment_vote(&[]).is_err());
    }

    #[test]
    fn vote_is_permutation_invariant() {
        use EmotionLabel::*;
        let mut labels = vec![Angry, Angry, Sad, Happy, Sad, Sad];
        let reference = subsegment_vote(&labels).unwrap();
        labels.reverse();
        assert_eq!(subsegment_vote(&labels).unwrap(), reference);
        labels.swap(0, 3);
        assert_eq!(subsegment_vote(&labels).unwrap(), reference);
    }

    #[test]
    fn timeline_32_frames_two_subsegments() {
        let audio = flat_audio(30.0, &vec![1.0; 32]);
        let t = build_timeline(&audio, &ConstantClassifier(EmotionLabel::Sad), 3.0, 16).unwrap();
        assert_eq!(t.subsegments.len(), 2);
        assert!(t.subsegments.iter().all(|s| s.label == EmotionLabel::Sad));
        t.validate().unwrap();
    }

    #[test]
    fn timeline_33_frames_has_short_tail() {
        let audio = flat_audio(30.0, &vec![1.0; 33]);
        let t = build_timeline(&audio, &ConstantClassifier(EmotionLabel::Neutral), 3.0, 16).unwrap();
        let lens: Vec<usize> = t.subsegments.iter().map(|s| s.end_frame - s.start_frame).collect();
        assert_eq!(lens, vec![16, 16, 1]);
    }

    /// Labels happy when the single-frame window holds a value below 0.5,
    /// sad otherwise. Used with a one-frame window so the switch point is
    /// exact.
    struct StepClassifier;
    impl FrameClassifier for StepClassifier {
        fn classify(&self, window: &DenseMatrix) -> Result<Vec<f64>> {
            let mut p = vec![0.0; 8];
            let idx = if window.get(0, 0) < 0.5 {
                EmotionLabel::Happy.index()
            } else {
                EmotionLabel::Sad.index()
            };
            p[idx] = 1.0;
            Ok(p)
        }
    }

    #[test]
    fn switching_classifier_splits_subsegment_labels() {
        let mut values = vec![0.0; 16];
        values.extend(vec![1.0; 16]);
        let audio = flat_audio(30.0, &values);
        // Window of one frame duration: each frame sees only itself.
        let t = build_timeline(&audio, &StepClassifier, 1.0 / 30.0, 16).unwrap();
        assert_eq!(t.subsegments[0].label, EmotionLabel::Happy);
        assert_eq!(t.subsegments[1].label, EmotionLabel::Sad);
    }

    #[test]
    fn probability_rows_bypass_windowing() {
        let mut rows = Vec::new();
        for i in 0..20 {
            let mut p = vec![0.0; 8];
            p[if i < 16 { 0 } else { 5 }] = 1.0;
            rows.push(p);
        }
        let t = timeline_from_probability_rows(30.0, &rows, 16).unwrap();
        assert_eq!(t.subsegments[0].label, EmotionLabel::Angry);
        assert_eq!(t.subsegments[1].label, EmotionLabel::Sad);
    }

    #[test]
    fn probability_row_parsing() {
        let text = "# header comment\n0.5 0.5 0 0 0 0 0 0\n\n0 0 0 1 0 0 0 0 # trailing\n";
        let rows = parse_probability_rows(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][0], 0.5);
        match parse_probability_rows("0.5 0.5\n") {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_probability_rows("a b c d e f g h\n").is_err());
    }

    #[test]
    fn timeline_json_round_trip() {
        let audio = flat_audio(30.0, &vec![0.25; 40]);
        let t = build_timeline(&audio, &SyntheticClassifier::new(3), 3.0, 16).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: EmotionTimeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        back.validate().unwrap();
    }

    #[test]
    fn validate_catches_tampered_timelines() {
        let audio = flat_audio(30.0, &vec![0.25; 32]);
        let mut t = build_timeline(&audio, &ConstantClassifier(EmotionLabel::Happy), 3.0, 16).unwrap();
        t.subsegments[1].label = EmotionLabel::Angry;
        assert!(t.validate().is_err());
        let mut gap = build_timeline(&audio, &ConstantClassifier(EmotionLabel::Happy), 3.0, 16).unwrap();
        gap.subsegments.pop();
        assert!(gap.validate().is_err());
    }

    fn demo_index() -> CorpusIndex {
        use EmotionLabel::*;
        let rec = |identity: &str, emotion, frame: &str| CorpusRecord {
            identity: identity.into(),
            emotion,
            clip_id: format!("clip-{frame}"),
            reference_frame_id: frame.into(),
        };
        CorpusIndex::new(vec![
            rec("alice", Neutral, "a-neutral"),
            rec("alice", Happy, "a-happy"),
            rec("bob", Happy, "b-happy-1"),
            rec("bob", Happy, "b-happy-2"),
            rec("carol", Angry, "c-angry"),
            rec("carol", Sad, "c-sad"),
            rec("carol", Neutral, "c-neutral"),
        ])
    }

    #[test]
    fn decoupled_sampler_picks_the_other_emotion() {
        let index = demo_index();
        let mut rng = SeededRng::new(1);
        let got = index
            .sample_decoupled_reference("alice", EmotionLabel::Happy, &mut rng)
            .unwrap();
        assert_eq!(got.reference_frame_id, "a-neutral");
        assert!(!got.fallback);
    }

    #[test]
    fn decoupled_sampler_falls_back_when_no_alternative() {
        let index = demo_index();
        let mut rng = SeededRng::new(2);
        let got = index
            .sample_decoupled_reference("bob", EmotionLabel::Happy, &mut rng)
            .unwrap();
        assert!(got.fallback);
        assert!(got.reference_frame_id.starts_with("b-happy"));
    }

    #[test]
    fn decoupled_sampler_unknown_identity_errors() {
        let index = demo_index();
        let mut rng = SeededRng::new(3);
        assert!(matches!(
            index.sample_decoupled_reference("mallory", EmotionLabel::Happy, &mut rng),
            Err(CoreError::UnknownIdentity { .. })
        ));
    }

    #[test]
    fn decoupled_sampler_is_uniform_over_candidates() {
        // carol has angry, sad, and neutral frames; ask with a happy clip so
        // all three are candidates.
        let index = demo_index();
        let mut rng = SeededRng::new(4);
        let n = 10_000;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..n {
            let got = index
                .sample_decoupled_reference("carol", EmotionLabel::Happy, &mut rng)
                .unwrap();
            assert!(!got.fallback);
            *counts.entry(got.reference_frame_id).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        for (frame, count) in counts {
            let rate = count as f64 / n as f64;
            assert!(
                (rate - 1.0 / 3.0).abs() < 0.02,
                "frame {frame} drawn at rate {rate}"
            );
        }
    }

    #[test]
    fn decoupled_sampler_never_matches_clip_emotion_without_fallback() {
        let index = demo_index();
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let got = index
                .sample_decoupled_reference("carol", EmotionLabel::Sad, &mut rng)
                .unwrap();
            assert!(!got.fallback);
            assert_ne!(got.reference_frame_id, "c-sad");
        }
    }

    #[test]
    fn synthetic_classifier_is_deterministic() {
        let w = DenseMatrix::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = SyntheticClassifier::new(9).classify(&w).unwrap();
        let b = SyntheticClassifier::new(9).classify(&w).unwrap();
        assert_eq!(a, b);
        validate_probabilities(&a).unwrap();
        let c = SyntheticClassifier::new(10).classify(&w).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        // Any generated timeline satisfies the partition and vote
        // invariants, whatever the length and subsegment size.
        #[test]
        fn generated_timelines_always_validate(
            n in 1usize..200,
            seg in 1usize..40,
            seed in 0u64..100,
        ) {
            let mut rng = SeededRng::new(seed);
            let labels: Vec<EmotionLabel> = (0..n)
                .map(|_| EmotionLabel::from_index(rng.index(8)).unwrap())
                .collect();
            let t = timeline_from_labels(30.0, labels, seg).unwrap();
            t.validate().unwrap();
            let expected_segments = n.div_ceil(seg);
            prop_assert_eq!(t.subsegments.len(), expected_segments);
        }
    }
}
