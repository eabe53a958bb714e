//! Rectified-flow primitives: noising, loss weighting, guidance, and the
//! Euler update used at generation time.
//!
//! The forward process is a straight line from data to noise,
//! `z_t = (1 - t) z0 + t eps`, so the true velocity is constant along each
//! path. The training loss predicts the noise sample and reweights the
//! squared error by `1 / (1 - t)^2`, which grows without bound as `t`
//! approaches one; that is why sampling starts just below one and why a
//! robust filter guards the training loop against loss spikes.

use crate::error::{CoreError, Result};
use crate::numerics::{DenseMatrix, SeededRng};

/// Default classifier-free guidance scale.
pub const DEFAULT_CFG_SCALE: f64 = 3.5;

/// Default cap on the weighted per-step loss; anything above is skipped.
pub const DEFAULT_ROBUST_THRESHOLD: f64 = 0.1;

/// Default probability of dropping each condition during training.
pub const DEFAULT_CONDITION_DROP_PROB: f64 = 0.05;

/// Highest time used when sampling; the weight and the velocity conversion
/// are singular at exactly one.
pub const DEFAULT_T_START: f64 = 0.999;

fn check_t(t: f64, context: &'static str) -> Result<()> {
    if !t.is_finite() || !(0.0..=1.0).contains(&t) {
        return Err(CoreError::OutOfRange { context, value: t, range: "[0, 1]" });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Forward process
// ---------------------------------------------------------------------------

/// Point on the straight path from data to noise: `(1 - t) z0 + t eps`.
pub fn interpolate(z0: &DenseMatrix, eps: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    check_t(t, "interpolate t")?;
    if z0.rows() != eps.rows() || z0.cols() != eps.cols() {
        return Err(CoreError::ShapeMismatch {
            context: "interpolate",
            detail: format!(
                "z0 {}x{}, eps {}x{}",
                z0.rows(),
                z0.cols(),
                eps.rows(),
                eps.cols()
            ),
        });
    }
    let data = z0
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    DenseMatrix::new(z0.rows(), z0.cols(), data)
}

/// A training example: clean latent, noise draw, time, and the mixed point.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub z0: DenseMatrix,
    pub eps: DenseMatrix,
    pub t: f64,
    pub z_t: DenseMatrix,
}

impl DiffusionSample {
    pub fn new(z0: DenseMatrix, eps: DenseMatrix, t: f64) -> Result<Self> {
        let z_t = interpolate(&z0, &eps, t)?;
        Ok(Self { z0, eps, t, z_t })
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Time-dependent loss weight `1 / (1 - t)^2`. Defined on `[0, 1)` only.
pub fn loss_weight(t: f64) -> Result<f64> {
    if !t.is_finite() || !(0.0..1.0).contains(&t) {
        return Err(CoreError::OutOfRange {
            context: "loss_weight t",
            value: t,
            range: "[0, 1)",
        });
    }
    let r = 1.0 - t;
    Ok(1.0 / (r * r))
}

/// How squared errors are pooled over a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Plain sum over every entry. The default.
    #[default]
    Sum,
    /// Sum divided by the entry count.
    Mean,
}

/// Squared-error flow loss for one clip.
#[derive(Debug, Clone, Copy)]
pub struct FlowLoss {
    /// Reduced squared error before weighting.
    pub raw: f64,
    /// Weight applied, `1 / (1 - t)^2`.
    pub weight: f64,
    /// `weight * raw`; this is what training thresholds and reports.
    pub weighted: f64,
}

/// Compare a noise prediction against the true noise draw.
pub fn flow_loss(
    pred: &DenseMatrix,
    target: &DenseMatrix,
    t: f64,
    reduction: LossReduction,
) -> Result<FlowLoss> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(CoreError::ShapeMismatch {
            context: "flow_loss",
            detail: format!(
                "pred {}x{}, target {}x{}",
                pred.rows(),
                pred.cols(),
                target.rows(),
                target.cols()
            ),
        });
    }
    let mut raw: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    if reduction == LossReduction::Mean {
        raw /= (pred.rows() * pred.cols()) as f64;
    }
    let weight = loss_weight(t)?;
    Ok(FlowLoss { raw, weight, weighted: weight * raw })
}

// ---------------------------------------------------------------------------
// Guidance
// ---------------------------------------------------------------------------

/// Classifier-free guidance blend: `(1 + w) cond - w uncond`.
///
/// `w = 0` returns the conditional prediction unchanged and `w = -1` the
/// unconditional one; positive `w` extrapolates beyond the conditional
/// output, it does not interpolate between the two.
pub fn cfg_blend(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(CoreError::DimMismatch {
            context: "cfg_blend",
            expected: cond.len(),
            got: uncond.len(),
        });
    }
    if !scale.is_finite() {
        return Err(CoreError::NonFinite { context: "cfg_blend scale" });
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| (1.0 + scale) * c - scale * u)
        .collect())
}

// ---------------------------------------------------------------------------
// Condition dropout
// ---------------------------------------------------------------------------

/// Which of the four conditioning signals are present for a step.
///
/// A `true` field means the condition is active; dropped conditions are
/// replaced by learned null embeddings downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionSet {
    pub audio: bool,
    pub emotion: bool,
    pub reference: bool,
    pub past_frames: bool,
}

impl ConditionSet {
    pub const fn all_active() -> Self {
        Self { audio: true, emotion: true, reference: true, past_frames: true }
    }

    pub const fn none_active() -> Self {
        Self { audio: false, emotion: false, reference: false, past_frames: false }
    }

    /// Bitmask of dropped conditions: audio bit 0, emotion bit 1,
    /// reference bit 2, past frames bit 3. All-active encodes as zero.
    pub fn dropped_mask(&self) -> u8 {
        (!self.audio as u8)
            | ((!self.emotion as u8) << 1)
            | ((!self.reference as u8) << 2)
            | ((!self.past_frames as u8) << 3)
    }

    pub fn from_dropped_mask(mask: u8) -> Result<Self> {
        if mask > 0b1111 {
            return Err(CoreError::OutOfRange {
                context: "ConditionSet mask",
                value: mask as f64,
                range: "[0, 15]",
            });
        }
        Ok(Self {
            audio: mask & 1 == 0,
            emotion: mask & 2 == 0,
            reference: mask & 4 == 0,
            past_frames: mask & 8 == 0,
        })
    }
}

/// Drop each condition independently with probability `p`.
///
/// Draws exactly four uniforms in a fixed order (audio, emotion, reference,
/// past frames) so a seeded run is replayable.
pub fn condition_dropout(p: f64, rng: &mut SeededRng) -> Result<ConditionSet> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(CoreError::OutOfRange {
            context: "condition_dropout p",
            value: p,
            range: "[0, 1]",
        });
    }
    let mut keep = || rng.uniform() >= p;
    let audio = keep();
    let emotion = keep();
    let reference = keep();
    let past_frames = keep();
    Ok(ConditionSet { audio, emotion, reference, past_frames })
}

// ---------------------------------------------------------------------------
// Robust filter
// ---------------------------------------------------------------------------

/// Verdict on one training step's weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    /// Apply the update.
    Keep,
    /// Loss exceeded the threshold; skip the update.
    SkipOutlier,
    /// Loss was NaN or infinite; skip and count as an anomaly.
    SkipNonFinite,
}

/// Decide whether a step's weighted loss is usable.
///
/// The comparison is strict: a loss exactly at the threshold is kept.
pub fn robust_filter(weighted_loss: f64, threshold: f64) -> FilterDecision {
    if !weighted_loss.is_finite() {
        FilterDecision::SkipNonFinite
    } else if weighted_loss > threshold {
        FilterDecision::SkipOutlier
    } else {
        FilterDecision::Keep
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniform time grid from `t_start` down to zero, `steps` intervals.
pub fn timestep_grid(t_start: f64, steps: usize) -> Result<Vec<f64>> {
    if !t_start.is_finite() || t_start <= 0.0 || t_start >= 1.0 {
        return Err(CoreError::OutOfRange {
            context: "timestep_grid t_start",
            value: t_start,
            range: "(0, 1)",
        });
    }
    if steps == 0 {
        return Err(CoreError::EmptyInput { context: "timestep_grid steps" });
    }
    // Endpoints are exact; interior points interpolate between them.
    Ok((0..=steps)
        .map(|i| t_start * (steps - i) as f64 / steps as f64)
        .collect())
}

/// One Euler step of the probability-flow update from `t` to `t_next`.
///
/// The noise prediction is converted to a velocity,
/// `v = (eps_hat - z) / (1 - t)`, and the state moves linearly:
/// `z' = z + (t_next - t) v`. With the true noise this recovers the clean
/// latent exactly in a single step, because the true velocity is constant.
pub fn euler_step(z: &[f64], eps_hat: &[f64], t: f64, t_next: f64) -> Result<Vec<f64>> {
    if z.len() != eps_hat.len() {
        return Err(CoreError::DimMismatch {
            context: "euler_step",
            expected: z.len(),
            got: eps_hat.len(),
        });
    }
    if !t.is_finite() || !(0.0..1.0).contains(&t) {
        return Err(CoreError::OutOfRange {
            context: "euler_step t",
            value: t,
            range: "[0, 1)",
        });
    }
    if !t_next.is_finite() || t_next < 0.0 || t_next >= t {
        return Err(CoreError::OutOfRange {
            context: "euler_step t_next",
            value: t_next,
            range: "[0, t)",
        });
    }
    let dt = t_next - t;
    let inv = 1.0 / (1.0 - t);
    Ok(z.iter()
        .zip(eps_hat)
        .map(|(zi, ei)| zi + dt * (ei - zi) * inv)
        .collect())
}
