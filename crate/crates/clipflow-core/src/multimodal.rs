//! Joint video/audio token attention and emotion-adaptive layer norm.
//!
//! Two attention variants are implemented side by side. Cross attention is
//! the baseline: video tokens query a fixed set of audio tokens. Multimodal
//! attention concatenates both modalities into one sequence and lets every
//! token attend to every other, so audio tokens are reprocessed rather than
//! frozen. Both use plain softmax attention with 1/sqrt(d) scaling; the
//! constant-cost linear form lives in `memory` and serves the temporal path.
//!
//! Emotion conditioning wraps the block as adaptive layer norm: a small
//! network maps an emotion embedding to a scale and shift applied after
//! normalizing each token. The output layer of that network is
//! zero-initialized, so at init the whole thing is exactly layer norm.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::memory::AttentionProjections;
use crate::numerics::{dot, layer_norm_slice, DenseMatrix, SeededRng};

/// Which stream a token belongs to. Tags are fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
}

/// Ordered tokens with per-token modality tags and active masks.
///
/// `mask[i] = true` means token `i` participates in attention. Masked
/// tokens contribute zero weight as keys and receive zeroed, still-masked
/// outputs as queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: DenseMatrix,
    modality: Vec<Modality>,
    mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(tokens: DenseMatrix, modality: Vec<Modality>, mask: Vec<bool>) -> Result<Self> {
        if modality.len() != tokens.rows() || mask.len() != tokens.rows() {
            return Err(CoreError::ShapeMismatch {
                context: "TokenSequence::new",
                detail: format!(
                    "{} tokens, {} modality tags, {} mask entries",
                    tokens.rows(),
                    modality.len(),
                    mask.len()
                ),
            });
        }
        Ok(Self { tokens, modality, mask })
    }

    /// All-video, all-active sequence.
    pub fn video(tokens: DenseMatrix) -> Result<Self> {
        let n = tokens.rows();
        Self::new(tokens, vec![Modality::Video; n], vec![true; n])
    }

    /// All-audio, all-active sequence.
    pub fn audio(tokens: DenseMatrix) -> Result<Self> {
        let n = tokens.rows();
        Self::new(tokens, vec![Modality::Audio; n], vec![true; n])
    }

    /// Joint sequence: video tokens first, audio tokens after.
    pub fn join(video: &TokenSequence, audio: &TokenSequence) -> Result<Self> {
        if video.d() != audio.d() {
            return Err(CoreError::DimMismatch {
                context: "TokenSequence::join",
                expected: video.d(),
                got: audio.d(),
            });
        }
        let mut data = video.tokens.as_slice().to_vec();
        data.extend_from_slice(audio.tokens.as_slice());
        let tokens = DenseMatrix::new(video.len() + audio.len(), video.d(), data)?;
        let mut modality = video.modality.clone();
        modality.extend_from_slice(&audio.modality);
        let mut mask = video.mask.clone();
        mask.extend_from_slice(&audio.mask);
        Self::new(tokens, modality, mask)
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn d(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &DenseMatrix {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &[f64] {
        self.tokens.row(i)
    }

    pub fn modality(&self, i: usize) -> Modality {
        self.modality[i]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Copy with one token masked out. Tags and values are untouched.
    pub fn with_masked(&self, i: usize) -> Result<Self> {
        if i >= self.len() {
            return Err(CoreError::OutOfRange {
                context: "TokenSequence::with_masked",
                value: i as f64,
                range: "[0, len)",
            });
        }
        let mut mask = self.mask.clone();
        mask[i] = false;
        Self::new(self.tokens.clone(), self.modality.clone(), mask)
    }

    pub fn active_count(&self, m: Modality) -> usize {
        self.modality
            .iter()
            .zip(&self.mask)
            .filter(|(tag, active)| **tag == m && **active)
            .count()
    }
}

// ---------------------------------------------------------------------------
// Softmax attention
// ---------------------------------------------------------------------------

/// Softmax attention of `queries` rows over active `keys`/`values` rows.
/// `key_active[j] = false` removes key `j` entirely. Rows of the output
/// for inactive queries are zero.
fn softmax_attend(
    queries: &DenseMatrix,
    query_active: &[bool],
    keys: &DenseMatrix,
    values: &DenseMatrix,
    key_active: &[bool],
) -> Result<DenseMatrix> {
    let d = queries.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = DenseMatrix::zeros(queries.rows(), values.cols());
    for i in 0..queries.rows() {
        if !query_active[i] {
            continue;
        }
        // Stable softmax over active keys only.
        let mut max_score = f64::NEG_INFINITY;
        let mut scores = vec![f64::NEG_INFINITY; keys.rows()];
        for j in 0..keys.rows() {
            if !key_active[j] {
                continue;
            }
            let s = scale * dot(queries.row(i), keys.row(j));
            scores[j] = s;
            max_score = max_score.max(s);
        }
        let mut denom = 0.0;
        let mut num = vec![0.0; values.cols()];
        for j in 0..keys.rows() {
            if !key_active[j] {
                continue;
            }
            let w = (scores[j] - max_score).exp();
            denom += w;
            for (c, o) in num.iter_mut().enumerate() {
                *o += w * values.get(j, c);
            }
        }
        for (c, o) in num.iter().enumerate() {
            out.set(i, c, o / denom);
        }
    }
    Ok(out)
}

/// Baseline conditioning: video tokens query fixed audio tokens.
///
/// Queries come from the video sequence, keys and values from the audio
/// sequence. The output has one token per video token, tagged video, with
/// the video mask carried over.
pub fn cross_attention(
    video: &TokenSequence,
    audio: &TokenSequence,
    proj: &AttentionProjections,
) -> Result<TokenSequence> {
    check_modality(video, Modality::Video, "cross_attention video")?;
    check_modality(audio, Modality::Audio, "cross_attention audio")?;
    if video.active_count(Modality::Video) == 0 {
        return Err(CoreError::EmptyInput { context: "cross_attention: active video tokens" });
    }
    if audio.active_count(Modality::Audio) == 0 {
        return Err(CoreError::EmptyInput { context: "cross_attention: active audio tokens" });
    }
    let vq = proj.project(video.tokens())?;
    let akv = proj.project(audio.tokens())?;
    let out = softmax_attend(vq.q(), video.mask(), akv.k(), akv.v(), audio.mask())?;
    TokenSequence::new(out, vec![Modality::Video; video.len()], video.mask().to_vec())
}

fn check_modality(seq: &TokenSequence, want: Modality, context: &'static str) -> Result<()> {
    if (0..seq.len()).any(|i| seq.modality(i) != want) {
        return Err(CoreError::ShapeMismatch {
            context: "modality tags",
            detail: format!("{context}: sequence contains tokens of the other modality"),
        });
    }
    Ok(())
}

/// Joint attention over a mixed sequence: every active token attends to
/// every active token of either modality.
///
/// Output preserves order, tags, and mask. Masking all audio tokens makes
/// the video outputs identical to video-only self-attention, which is how
/// the unconditional branch is emulated.
pub fn multimodal_attention(
    joint: &TokenSequence,
    proj: &AttentionProjections,
) -> Result<TokenSequence> {
    if joint.mask().iter().all(|a| !a) {
        return Err(CoreError::EmptyInput { context: "multimodal_attention: active tokens" });
    }
    if joint.active_count(Modality::Video) == 0 {
        return Err(CoreError::EmptyInput { context: "multimodal_attention: active video tokens" });
    }
    let qkv = proj.project(joint.tokens())?;
    let out = softmax_attend(qkv.q(), joint.mask(), qkv.k(), qkv.v(), joint.mask())?;
    TokenSequence::new(
        out,
        (0..joint.len()).map(|i| joint.modality(i)).collect(),
        joint.mask().to_vec(),
    )
}

// ---------------------------------------------------------------------------
// Emotion embeddings and adaptive layer norm
// ---------------------------------------------------------------------------

/// Learned embedding per emotion label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionEmbeddingTable {
    table: DenseMatrix, // 8 x d_e
}

/// Default emotion embedding width.
pub const DEFAULT_EMOTION_EMBEDDING_DIM: usize = 32;

impl EmotionEmbeddingTable {
    pub fn random(d_e: usize, scale: f64, rng: &mut SeededRng) -> Self {
        Self { table: rng.normal_matrix(crate::emotion::EMOTION_LABEL_COUNT, d_e, scale) }
    }

    pub fn from_rows(table: DenseMatrix) -> Result<Self> {
        if table.rows() != crate::emotion::EMOTION_LABEL_COUNT {
            return Err(CoreError::DimMismatch {
                context: "EmotionEmbeddingTable::from_rows",
                expected: crate::emotion::EMOTION_LABEL_COUNT,
                got: table.rows(),
            });
        }
        Ok(Self { table })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn embedding(&self, label: crate::emotion::EmotionLabel) -> &[f64] {
        self.table.row(label.index())
    }
}

/// Adaptive layer norm conditioned on an emotion embedding.
///
/// A one-hidden-layer network maps the embedding to a raw scale and a
/// shift; each token becomes `(1 + raw_scale) * layer_norm(token) + shift`.
/// The output layer starts at zero, making the block an exact layer norm
/// until training moves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionModulator {
    w1: DenseMatrix, // hidden x d_e
    b1: Vec<f64>,
    w2: DenseMatrix, // 2d x hidden
    b2: Vec<f64>,
    d: usize,
    ln_eps: f64,
}

impl EmotionModulator {
    /// Standard init: random hidden layer, zeroed output layer.
    pub fn zero_init(d: usize, d_e: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            w1: rng.normal_matrix(hidden, d_e, 1.0 / (d_e as f64).sqrt()),
            b1: vec![0.0; hidden],
            w2: DenseMatrix::zeros(2 * d, hidden),
            b2: vec![0.0; 2 * d],
            d,
            ln_eps: 1e-6,
        }
    }

    /// Fully random init; used where conditioning must visibly act from the
    /// first step, as in untrained simulation runs.
    pub fn random_init(d: usize, d_e: usize, hidden: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let mut m = Self::zero_init(d, d_e, hidden, rng);
        m.w2 = rng.normal_matrix(2 * d, hidden, scale);
        m.b2 = (0..2 * d).map(|_| scale * rng.standard_normal()).collect();
        m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Raw scale and shift for one embedding.
    pub fn scale_shift(&self, emo: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if emo.len() != self.w1.cols() {
            return Err(CoreError::DimMismatch {
                context: "EmotionModulator::scale_shift",
                expected: self.w1.cols(),
                got: emo.len(),
            });
        }
        let hidden: Vec<f64> = (0..self.w1.rows())
            .map(|r| (dot(self.w1.row(r), emo) + self.b1[r]).tanh())
            .collect();
        let mut raw = vec![0.0; 2 * self.d];
        for (r, out) in raw.iter_mut().enumerate() {
            *out = dot(self.w2.row(r), &hidden) + self.b2[r];
        }
        let shift = raw.split_off(self.d);
        Ok((raw, shift))
    }

    /// Apply emotion-adaptive layer norm to every token. Masks and tags are
    /// preserved; masked tokens are modulated all the same, since the mask
    /// speaks to attention participation, not normalization.
    pub fn modulate(&self, x: &TokenSequence, emo: &[f64]) -> Result<TokenSequence> {
        if x.d() != self.d {
            return Err(CoreError::DimMismatch {
                context: "EmotionModulator::modulate",
                expected: self.d,
                got: x.d(),
            });
        }
        let (raw_scale, shift) = self.scale_shift(emo)?;
        let mut data = Vec::with_capacity(x.len() * x.d());
        for i in 0..x.len() {
            let normed = layer_norm_slice(x.token(i), self.ln_eps)?;
            for (c, n) in normed.iter().enumerate() {
                data.push((1.0 + raw_scale[c]) * n + shift[c]);
            }
        }
        TokenSequence::new(
            DenseMatrix::new(x.len(), x.d(), data)?,
            (0..x.len()).map(|i| x.modality(i)).collect(),
            x.mask().to_vec(),
        )
    }
}
