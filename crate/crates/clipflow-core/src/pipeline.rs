//! Manifest curation: trim long clips, gate on face, quality, and lip-sync
//! scores, honor manual flags, and report what happened.
//!
//! Stages run in a fixed order (trim, face, quality, sync, manual) and a
//! rejected record is attributed to the earliest failing stage. Every
//! threshold is a strict inequality: a score exactly at the cut is
//! rejected. Decisions depend only on the record itself once trimming has
//! happened, so records may be evaluated in any order or in parallel; the
//! output manifest is canonicalized by clip id and the report aggregates
//! counts per reason.
//!
//! Model-backed scorers live behind [`ClipScorers`]; the shipped
//! [`SyntheticScorers`] draws deterministic pseudo-random scores keyed by
//! clip id so fixtures are reproducible without any model.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CoreError, Result};
use crate::numerics::SeededRng;

pub const DEFAULT_MAX_CLIP_S: f64 = 30.0;
pub const DEFAULT_IQA_MIN: f64 = 40.0;
pub const DEFAULT_SYNC_C_MIN: f64 = 5.0;
pub const DEFAULT_BBOX_SCALE: f64 = 1.1;

/// Normalized face box, stored as `[x, y, w, h]` in files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(d)?;
        Ok(Self { x, y, w, h })
    }
}

/// Why a record was dropped. Variant order is stage order, which makes
/// reports read in the order the stages run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Malformed,
    ZeroDuration,
    NoFace,
    PartialFace,
    MultipleHeads,
    LowQuality,
    LipSync,
    Manual,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 8] = [
        RejectionReason::Malformed,
        RejectionReason::ZeroDuration,
        RejectionReason::NoFace,
        RejectionReason::PartialFace,
        RejectionReason::MultipleHeads,
        RejectionReason::LowQuality,
        RejectionReason::LipSync,
        RejectionReason::Manual,
    ];
}

/// One candidate clip. Score fields are optional in files; missing ones
/// are filled by the scorers before any gate runs. Unknown fields survive
/// a round trip untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_partial: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iqa_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_ok: Option<bool>,
    /// Set exactly when the record was rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    /// Kept records get their box widened once; this marker is what makes
    /// a second run leave them alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_expanded: Option<bool>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl ClipRecord {
    /// A record with only identity and duration; scorers fill the rest.
    pub fn bare(clip_id: impl Into<String>, duration_s: f64) -> Self {
        Self {
            clip_id: clip_id.into(),
            duration_s,
            face_count: None,
            face_partial: None,
            bbox: None,
            iqa_score: None,
            sync_c: None,
            manual_ok: None,
            rejection_reason: None,
            bbox_expanded: None,
            extras: Map::new(),
        }
    }
}

/// Gate settings. Every comparison against these is strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub max_clip_s: f64,
    pub iqa_min: f64,
    pub sync_c_min: f64,
    pub bbox_scale: f64,
    pub min_faces: u32,
    pub max_faces: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_clip_s: DEFAULT_MAX_CLIP_S,
            iqa_min: DEFAULT_IQA_MIN,
            sync_c_min: DEFAULT_SYNC_C_MIN,
            bbox_scale: DEFAULT_BBOX_SCALE,
            min_faces: 1,
            max_faces: 1,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_clip_s", self.max_clip_s),
            ("iqa_min", self.iqa_min),
            ("sync_c_min", self.sync_c_min),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::OutOfRange {
                    context: name,
                    value: v,
                    range: "(0, inf)",
                });
            }
        }
        if !(self.bbox_scale.is_finite() && self.bbox_scale >= 1.0) {
            return Err(CoreError::OutOfRange {
                context: "bbox_scale",
                value: self.bbox_scale,
                range: "[1, inf)",
            });
        }
        if self.min_faces > self.max_faces {
            return Err(CoreError::ShapeMismatch {
                context: "Thresholds",
                detail: format!(
                    "min_faces {} exceeds max_faces {}",
                    self.min_faces, self.max_faces
                ),
            });
        }
        Ok(())
    }
}

/// What a face detector reports for one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceObservation {
    pub count: u32,
    pub partial: bool,
    pub bbox: BBox,
}

/// Model-backed scorers, abstracted so the pipeline itself stays pure.
/// Implementations must be deterministic per clip id within a run.
pub trait ClipScorers {
    fn face(&self, clip_id: &str) -> FaceObservation;
    fn iqa(&self, clip_id: &str) -> f64;
    fn sync(&self, clip_id: &str) -> f64;

    /// Cut positions for a clip, strictly increasing, inside (0, duration).
    /// The default cuts evenly into the smallest count whose pieces are all
    /// strictly shorter than the cap; a scene-boundary-aware splitter can
    /// override this.
    fn cut_points(&self, _clip_id: &str, duration_s: f64, max_clip_s: f64) -> Vec<f64> {
        even_cut_points(duration_s, max_clip_s)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic pseudo-random scorers for fixtures and simulations. Same
/// seed and clip id always give the same scores; the ranges straddle the
/// default thresholds so synthetic manifests exercise both sides of every
/// gate.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticScorers {
    pub seed: u64,
}

impl SyntheticScorers {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, clip_id: &str, salt: u64) -> SeededRng {
        SeededRng::new(self.seed ^ fnv1a(clip_id.as_bytes()).rotate_left(salt as u32) ^ salt)
    }
}

impl ClipScorers for SyntheticScorers {
    fn face(&self, clip_id: &str) -> FaceObservation {
        let mut rng = self.rng(clip_id, 0x11);
        let roll = rng.uniform();
        let count = if roll < 0.10 {
            0
        } else if roll < 0.85 {
            1
        } else {
            2
        };
        let partial = rng.uniform() < 0.15;
        let w = 0.1 + 0.3 * rng.uniform();
        let h = 0.1 + 0.3 * rng.uniform();
        let x = (1.0 - w) * rng.uniform();
        let y = (1.0 - h) * rng.uniform();
        FaceObservation { count, partial, bbox: BBox { x, y, w, h } }
    }

    fn iqa(&self, clip_id: &str) -> f64 {
        20.0 + 40.0 * self.rng(clip_id, 0x22).uniform()
    }

    fn sync(&self, clip_id: &str) -> f64 {
        2.0 + 6.0 * self.rng(clip_id, 0x33).uniform()
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Even cut positions for a clip of the given length. Piece count is the
/// smallest n with duration / n strictly below the cap, which is
/// floor(duration / cap) + 1; a clip already short enough yields no cuts.
pub fn even_cut_points(duration_s: f64, max_clip_s: f64) -> Vec<f64> {
    let n = (duration_s / max_clip_s).floor() as usize + 1;
    (1..n).map(|i| duration_s * i as f64 / n as f64).collect()
}

/// Split one record at the given cut positions. A single piece keeps the
/// original id; several pieces get a `#NNNN` suffix so ids stay unique and
/// sort in piece order. Pieces inherit every score, so later gates treat
/// them exactly like their source. Piece durations telescope, which keeps
/// the total within 1e-6 of the original.
pub fn scene_trim(record: &ClipRecord, cuts: &[f64], max_clip_s: f64) -> Result<Vec<ClipRecord>> {
    let d = record.duration_s;
    if !(d.is_finite() && d > 0.0) {
        return Err(CoreError::OutOfRange {
            context: "scene_trim duration_s",
            value: d,
            range: "(0, inf)",
        });
    }
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(0.0);
    bounds.extend_from_slice(cuts);
    bounds.push(d);
    for pair in bounds.windows(2) {
        // Negated so a NaN cut fails validation instead of slipping through.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(pair[1] > pair[0]) {
            return Err(CoreError::ShapeMismatch {
                context: "scene_trim",
                detail: format!("cut points not increasing inside (0, {d})"),
            });
        }
    }
    let mut pieces = Vec::with_capacity(bounds.len() - 1);
    let mut total = 0.0;
    for (k, pair) in bounds.windows(2).enumerate() {
        let len = pair[1] - pair[0];
        if len >= max_clip_s {
            return Err(CoreError::OutOfRange {
                context: "scene_trim piece length",
                value: len,
                range: "(0, max_clip_s)",
            });
        }
        total += len;
        let mut piece = record.clone();
        piece.duration_s = len;
        if cuts.is_empty() {
            pieces.push(piece);
            continue;
        }
        piece.clip_id = format!("{}#{k:04}", record.clip_id);
        pieces.push(piece);
    }
    if (total - d).abs() > 1e-6 {
        return Err(CoreError::ShapeMismatch {
            context: "scene_trim",
            detail: format!("pieces sum to {total}, source is {d}"),
        });
    }
    Ok(pieces)
}

/// Widen a box about its own center, then clamp it into the unit square.
pub fn expand_bbox(b: BBox, scale: f64) -> BBox {
    let cx = b.x + b.w / 2.0;
    let cy = b.y + b.h / 2.0;
    let w = b.w * scale;
    let h = b.h * scale;
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let x0 = clamp(cx - w / 2.0);
    let y0 = clamp(cy - h / 2.0);
    let x1 = clamp(cx + w / 2.0);
    let y1 = clamp(cy + h / 2.0);
    BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
}

/// Exactly one whole face, and its widened crop. A record whose box was
/// already widened passes through unchanged, which is what makes the whole
/// pipeline a fixed point on its own output.
pub fn face_gate(
    record: &ClipRecord,
    t: &Thresholds,
) -> std::result::Result<BBox, RejectionReason> {
    let (count, partial, bbox) = match (record.face_count, record.face_partial, record.bbox) {
        (Some(c), Some(p), Some(b)) => (c, p, b),
        _ => return Err(RejectionReason::Malformed),
    };
    if count < t.min_faces {
        return Err(RejectionReason::NoFace);
    }
    if count > t.max_faces {
        return Err(RejectionReason::MultipleHeads);
    }
    if partial {
        return Err(RejectionReason::PartialFace);
    }
    if record.bbox_expanded == Some(true) {
        Ok(bbox)
    } else {
        Ok(expand_bbox(bbox, t.bbox_scale))
    }
}

/// Keep iff the quality score is strictly above the cut.
pub fn iqa_gate(record: &ClipRecord, t: &Thresholds) -> std::result::Result<(), RejectionReason> {
    match record.iqa_score {
        None => Err(RejectionReason::Malformed),
        Some(s) if s > t.iqa_min => Ok(()),
        Some(_) => Err(RejectionReason::LowQuality),
    }
}

/// Keep iff the sync confidence is strictly above the cut.
pub fn sync_gate(record: &ClipRecord, t: &Thresholds) -> std::result::Result<(), RejectionReason> {
    match record.sync_c {
        None => Err(RejectionReason::Malformed),
        Some(s) if s > t.sync_c_min => Ok(()),
        Some(_) => Err(RejectionReason::LipSync),
    }
}

/// An explicit manual veto beats every score; absence of a flag keeps.
pub fn manual_gate(record: &ClipRecord) -> std::result::Result<(), RejectionReason> {
    if record.manual_ok == Some(false) {
        Err(RejectionReason::Manual)
    } else {
        Ok(())
    }
}

/// Fill any score field the manifest left out. Face fields fill together
/// from one detector observation.
pub fn fill_missing_scores(record: &mut ClipRecord, scorers: &dyn ClipScorers) {
    if record.face_count.is_none() || record.face_partial.is_none() || record.bbox.is_none() {
        let obs = scorers.face(&record.clip_id);
        record.face_count.get_or_insert(obs.count);
        record.face_partial.get_or_insert(obs.partial);
        record.bbox.get_or_insert(obs.bbox);
    }
    if record.iqa_score.is_none() {
        record.iqa_score = Some(scorers.iqa(&record.clip_id));
    }
    if record.sync_c.is_none() {
        record.sync_c = Some(scorers.sync(&record.clip_id));
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// One manifest line: a record, or the reason it would not parse.
#[derive(Debug, Clone)]
pub struct ManifestLine {
    pub line_no: usize,
    pub record: std::result::Result<ClipRecord, String>,
}

/// A parsed line-delimited manifest. Lines that fail to parse are carried
/// along so the pipeline can reject them without aborting the run.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub lines: Vec<ManifestLine>,
}

pub fn malformed_clip_id(line_no: usize) -> String {
    format!("<malformed line {line_no}>")
}

impl Manifest {
    pub fn parse(text: &str) -> Self {
        let mut lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str::<ClipRecord>(raw).map_err(|e| e.to_string());
            lines.push(ManifestLine { line_no, record });
        }
        Self { lines }
    }

    pub fn from_records(records: Vec<ClipRecord>) -> Self {
        let lines = records
            .into_iter()
            .enumerate()
            .map(|(idx, r)| ManifestLine { line_no: idx + 1, record: Ok(r) })
            .collect();
        Self { lines }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Ok(Self::parse(&text))
    }
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ClipRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Aggregated result of one run. Kept plus the rejected counts add up to
/// the post-trim record count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineReport {
    pub input_count: usize,
    pub post_trim_count: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectionReason, usize>,
    pub thresholds_used: Thresholds,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub kept: Vec<ClipRecord>,
    pub rejected: Vec<ClipRecord>,
    pub report: PipelineReport,
}

fn malformed_record(line_no: usize, message: &str) -> ClipRecord {
    let mut record = ClipRecord::bare(malformed_clip_id(line_no), 0.0);
    record.rejection_reason = Some(RejectionReason::Malformed);
    record
        .extras
        .insert("parse_error".into(), Value::String(message.to_string()));
    record
}

fn gate_record(piece: &ClipRecord, t: &Thresholds) -> std::result::Result<BBox, RejectionReason> {
    let bbox = face_gate(piece, t)?;
    iqa_gate(piece, t)?;
    sync_gate(piece, t)?;
    manual_gate(piece)?;
    Ok(bbox)
}

/// Run every stage over a manifest. Kept records come back with the reason
/// field clear and the widened box; rejected ones carry the earliest
/// failing stage's reason. Both lists are sorted by clip id.
pub fn run_pipeline(
    manifest: &Manifest,
    scorers: &dyn ClipScorers,
    t: &Thresholds,
) -> Result<PipelineOutcome> {
    t.validate()?;
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut post_trim_count = 0usize;

    for line in &manifest.lines {
        let record = match &line.record {
            Err(message) => {
                post_trim_count += 1;
                rejected.push(malformed_record(line.line_no, message));
                continue;
            }
            Ok(r) => r,
        };
        let mut record = record.clone();
        record.rejection_reason = None;
        fill_missing_scores(&mut record, scorers);
        if !(record.duration_s.is_finite() && record.duration_s > 0.0) {
            post_trim_count += 1;
            record.rejection_reason = Some(RejectionReason::ZeroDuration);
            rejected.push(record);
            continue;
        }
        let cuts = scorers.cut_points(&record.clip_id, record.duration_s, t.max_clip_s);
        let pieces = scene_trim(&record, &cuts, t.max_clip_s)?;
        post_trim_count += pieces.len();
        for mut piece in pieces {
            match gate_record(&piece, t) {
                Ok(bbox) => {
                    piece.bbox = Some(bbox);
                    piece.bbox_expanded = Some(true);
                    kept.push(piece);
                }
                Err(reason) => {
                    piece.rejection_reason = Some(reason);
                    rejected.push(piece);
                }
            }
        }
    }

    kept.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    rejected.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let mut counts: BTreeMap<RejectionReason, usize> = BTreeMap::new();
    for r in &rejected {
        *counts.entry(r.rejection_reason.expect("rejected records carry a reason")).or_insert(0) +=
            1;
    }
    let report = PipelineReport {
        input_count: manifest.lines.len(),
        post_trim_count,
        kept: kept.len(),
        rejected: counts,
        thresholds_used: t.clone(),
    };
    Ok(PipelineOutcome { kept, rejected, report })
}

pub fn write_report(path: impl AsRef<Path>, report: &PipelineReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// What the oracle thinks should happen to one output record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OracleDecision {
    Keep,
    Reject(RejectionReason),
}

/// Independent re-derivation of every decision as one flat predicate per
/// record, with its own trim expansion. Used to cross-check the staged
/// pipeline: the multiset of (clip id, decision) pairs must match exactly.
pub fn brute_force_decisions(
    manifest: &Manifest,
    scorers: &dyn ClipScorers,
    t: &Thresholds,
) -> Vec<(String, OracleDecision)> {
    let mut out = Vec::new();
    for line in &manifest.lines {
        let record = match &line.record {
            Err(_) => {
                out.push((
                    malformed_clip_id(line.line_no),
                    OracleDecision::Reject(RejectionReason::Malformed),
                ));
                continue;
            }
            Ok(r) => r,
        };
        let face_count = record
            .face_count
            .unwrap_or_else(|| scorers.face(&record.clip_id).count);
        let face_partial = record
            .face_partial
            .unwrap_or_else(|| scorers.face(&record.clip_id).partial);
        let iqa = record.iqa_score.unwrap_or_else(|| scorers.iqa(&record.clip_id));
        let sync = record.sync_c.unwrap_or_else(|| scorers.sync(&record.clip_id));

        if !(record.duration_s.is_finite() && record.duration_s > 0.0) {
            out.push((
                record.clip_id.clone(),
                OracleDecision::Reject(RejectionReason::ZeroDuration),
            ));
            continue;
        }

        // The quality gates are negated so a NaN score rejects the clip.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let decision = if face_count < t.min_faces {
            OracleDecision::Reject(RejectionReason::NoFace)
        } else if face_count > t.max_faces {
            OracleDecision::Reject(RejectionReason::MultipleHeads)
        } else if face_partial {
            OracleDecision::Reject(RejectionReason::PartialFace)
        } else if !(iqa > t.iqa_min) {
            OracleDecision::Reject(RejectionReason::LowQuality)
        } else if !(sync > t.sync_c_min) {
            OracleDecision::Reject(RejectionReason::LipSync)
        } else if record.manual_ok == Some(false) {
            OracleDecision::Reject(RejectionReason::Manual)
        } else {
            OracleDecision::Keep
        };

        let n = (record.duration_s / t.max_clip_s).floor() as usize + 1;
        if n == 1 {
            out.push((record.clip_id.clone(), decision));
        } else {
            for k in 0..n {
                out.push((format!("{}#{k:04}", record.clip_id), decision));
            }
        }
    }
    out.sort();
    out
}

/// The pipeline outcome flattened into the oracle's shape.
pub fn outcome_decisions(outcome: &PipelineOutcome) -> Vec<(String, OracleDecision)> {
    let mut out: Vec<(String, OracleDecision)> = Vec::new();
    for r in &outcome.kept {
        out.push((r.clip_id.clone(), OracleDecision::Keep));
    }
    for r in &outcome.rejected {
        out.push((
            r.clip_id.clone(),
            OracleDecision::Reject(r.rejection_reason.expect("rejected records carry a reason")),
        ));
    }
    out.sort();
    out
}

// ---------------------------------------------------------------------------
// Fixture generator
// ---------------------------------------------------------------------------

/// A reproducible manifest exercising every gate: pinned boundary records
/// first (scores exactly at, just below, and just above each cut, the trim
/// lengths 29/30/31/90, face counts 0/1/2, a partial face, a manual veto,
/// the box-widening example, two records with missing scores, and one
/// unparseable line), then deterministic random records up to `n` lines.
pub fn synthetic_manifest(n: usize, seed: u64) -> String {
    let passing = |id: &str| {
        let mut r = ClipRecord::bare(id, 10.0);
        r.face_count = Some(1);
        r.face_partial = Some(false);
        r.bbox = Some(BBox { x: 0.3, y: 0.3, w: 0.2, h: 0.2 });
        r.iqa_score = Some(50.0);
        r.sync_c = Some(6.0);
        r
    };
    let mut records: Vec<ClipRecord> = Vec::new();
    for (id, iqa) in [("iqa-below", 39.0), ("iqa-at", 40.0), ("iqa-above", 41.0)] {
        let mut r = passing(id);
        r.iqa_score = Some(iqa);
        records.push(r);
    }
    for (id, sync) in [("sync-below", 4.9), ("sync-at", 5.0), ("sync-above", 5.1)] {
        let mut r = passing(id);
        r.sync_c = Some(sync);
        records.push(r);
    }
    for (id, d) in [("dur-29", 29.0), ("dur-30", 30.0), ("dur-31", 31.0), ("dur-90", 90.0)] {
        let mut r = passing(id);
        r.duration_s = d;
        records.push(r);
    }
    for (id, count) in [("face-none", 0u32), ("face-two", 2)] {
        let mut r = passing(id);
        r.face_count = Some(count);
        records.push(r);
    }
    let mut partial = passing("face-partial");
    partial.face_partial = Some(true);
    records.push(partial);
    let mut veto = passing("manual-veto");
    veto.manual_ok = Some(false);
    records.push(veto);
    let mut boxed = passing("bbox-example");
    boxed.bbox = Some(BBox { x: 0.4, y: 0.4, w: 0.2, h: 0.2 });
    records.push(boxed);
    let mut zero = passing("dur-zero");
    zero.duration_s = 0.0;
    records.push(zero);
    records.push(ClipRecord::bare("fill-all", 12.0));
    let mut half = ClipRecord::bare("fill-half", 8.0);
    half.iqa_score = Some(55.0);
    half.extras.insert("source".into(), Value::String("fixture".into()));
    records.push(half);

    let mut lines: Vec<String> =
        records.iter().map(|r| serde_json::to_string(r).expect("fixture serializes")).collect();
    lines.push("{this line is not json".to_string());

    let mut rng = SeededRng::new(seed);
    let mut k = 0;
    while lines.len() < n {
        let mut r = ClipRecord::bare(format!("rand-{k:04}"), 1.0 + 99.0 * rng.uniform());
        k += 1;
        if rng.uniform() < 0.8 {
            r.face_count = Some([0, 1, 1, 1, 2][rng.index(5)]);
            r.face_partial = Some(rng.uniform() < 0.2);
            let w = 0.1 + 0.4 * rng.uniform();
            let h = 0.1 + 0.4 * rng.uniform();
            r.bbox = Some(BBox {
                x: (1.0 - w) * rng.uniform(),
                y: (1.0 - h) * rng.uniform(),
                w,
                h,
            });
        }
        if rng.uniform() < 0.8 {
            r.iqa_score = Some(20.0 + 40.0 * rng.uniform());
        }
        if rng.uniform() < 0.8 {
            r.sync_c = Some(2.0 + 6.0 * rng.uniform());
        }
        if rng.uniform() < 0.2 {
            r.manual_ok = Some(rng.uniform() < 0.5);
        }
        lines.push(serde_json::to_string(&r).expect("fixture serializes"));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    text
}
