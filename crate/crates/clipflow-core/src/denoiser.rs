//! A small, fully differentiable noise predictor for desk-scale training.
//!
//! The network mirrors the shape of the full model in miniature: per-frame
//! q/k/v projections feed the normalized-feature attention from `memory`
//! (optionally guided by a decayed memory or widened over a window of past
//! frames), a residual add, emotion-adaptive layer norm, then a two-layer
//! MLP over the normalized frame, the raw frame, projected audio, the
//! projected reference, and the time scalars. A learned per-channel skip
//! from the noisy input closes the loop; with it the trivial stable
//! predictor (echo the noisy frame) is exactly representable, which is what
//! makes the synthetic task trainable by plain gradient descent.
//!
//! Every condition has a learned null embedding used when it is dropped, so
//! the unconditional branch is a real parameterized path rather than an
//! accident of zeros.
//!
//! Parameters live in one flat vector; the backward pass is derived by hand
//! and checked against central finite differences in the tests.

use serde::{Deserialize, Serialize};

use crate::emotion::{EmotionLabel, EMOTION_LABEL_COUNT};
use crate::error::{CoreError, Result};
use crate::memory::{feature_map, AttentionProjections, MemoryState, DENOM_GUARD};
use crate::numerics::{dot, DenseMatrix, SeededRng};

/// Network dimensions. `d` is the latent width shared by frames, queries,
/// keys, values, and the reference; the rest size the conditioning paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserDims {
    pub d: usize,
    pub d_audio: usize,
    pub d_emotion: usize,
    pub mod_hidden: usize,
    pub hidden: usize,
}

impl Default for DenoiserDims {
    fn default() -> Self {
        Self { d: 8, d_audio: 8, d_emotion: 8, mod_hidden: 8, hidden: 16 }
    }
}

/// Byte-offset map into the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_q: usize,
    w_k: usize,
    w_v: usize,
    emo_table: usize,
    null_emo: usize,
    null_audio: usize,
    null_ref: usize,
    p_audio: usize,
    p_ref: usize,
    mod_w1: usize,
    mod_b1: usize,
    mod_w2: usize,
    mod_b2: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
    skip: usize,
    total: usize,
}

impl Layout {
    fn new(dims: &DenoiserDims) -> Self {
        let DenoiserDims { d, d_audio, d_emotion, mod_hidden, hidden } = *dims;
        let mlp_in = Self::mlp_input_dim(dims);
        let mut off = 0usize;
        let mut take = |len: usize| {
            let start = off;
            off += len;
            start
        };
        let w_q = take(d * d);
        let w_k = take(d * d);
        let w_v = take(d * d);
        let emo_table = take(EMOTION_LABEL_COUNT * d_emotion);
        let null_emo = take(d_emotion);
        let null_audio = take(d_audio);
        let null_ref = take(d);
        let p_audio = take(d * d_audio);
        let p_ref = take(d * d);
        let mod_w1 = take(mod_hidden * d_emotion);
        let mod_b1 = take(mod_hidden);
        let mod_w2 = take(2 * d * mod_hidden);
        let mod_b2 = take(2 * d);
        let mlp_w1 = take(hidden * mlp_in);
        let mlp_b1 = take(hidden);
        let mlp_w2 = take(d * hidden);
        let mlp_b2 = take(d);
        let skip = take(d);
        Layout {
            w_q,
            w_k,
            w_v,
            emo_table,
            null_emo,
            null_audio,
            null_ref,
            p_audio,
            p_ref,
            mod_w1,
            mod_b1,
            mod_w2,
            mod_b2,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            skip,
            total: off,
        }
    }

    /// MLP consumes [modulated frame, raw frame, projected audio,
    /// projected reference, t, 1 - t].
    fn mlp_input_dim(dims: &DenoiserDims) -> usize {
        4 * dims.d + 2
    }
}

/// One denoising request: the noisy clip plus whatever conditions are live.
///
/// `None` fields mean the condition is dropped and its learned null
/// embedding is used instead; for past frames the natural null is an empty
/// history, so `memory` and `extra_window` are simply absent. Supplying
/// both `memory` and `extra_window` is rejected: they are competing views
/// of the same history.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseInput<'a> {
    pub z_t: &'a DenseMatrix,
    pub t: f64,
    pub audio: Option<&'a DenseMatrix>,
    pub emotion: Option<EmotionLabel>,
    pub reference: Option<&'a [f64]>,
    pub memory: Option<&'a MemoryState>,
    pub extra_window: Option<&'a DenseMatrix>,
}

impl<'a> DenoiseInput<'a> {
    /// Input with every condition dropped and no history.
    pub fn unconditional(z_t: &'a DenseMatrix, t: f64) -> Self {
        Self {
            z_t,
            t,
            audio: None,
            emotion: None,
            reference: None,
            memory: None,
            extra_window: None,
        }
    }
}

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x_attn: DenseMatrix,  // window rows then current rows
    out_offset: usize,    // first current row inside x_attn
    phi_q: DenseMatrix,   // current rows only
    phi_k: DenseMatrix,   // all rows
    v: DenseMatrix,       // all rows
    scores: DenseMatrix,  // current x all
    denoms: Vec<f64>,
    guard_active: Vec<bool>,
    attn_out: DenseMatrix,
    sigma: Vec<f64>,
    normed: DenseMatrix,
    e_vec: Vec<f64>,
    h_m: Vec<f64>,
    raw_scale: Vec<f64>,
    a_raw: DenseMatrix,
    r_raw: Vec<f64>,
    mlp_in: DenseMatrix,
    mlp_h: DenseMatrix,
}

const LN_EPS: f64 = 1e-6;

/// The toy noise predictor itself: dimensions plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    dims: DenoiserDims,
    params: Vec<f64>,
}

impl ToyDenoiser {
    /// Training init: random projections and hidden layers, zeroed output
    /// paths. The prediction starts at exactly zero and the modulation
    /// starts as plain layer norm, so early losses are interpretable.
    pub fn new(dims: DenoiserDims, rng: &mut SeededRng) -> Self {
        let mut net = Self::new_random(dims, rng);
        let l = Layout::new(&dims);
        let zero_ranges = [
            (l.mod_w2, 2 * dims.d * dims.mod_hidden),
            (l.mod_b2, 2 * dims.d),
            (l.mlp_w2, dims.d * dims.hidden),
            (l.mlp_b2, dims.d),
            (l.skip, dims.d),
        ];
        for (start, len) in zero_ranges {
            net.params[start..start + len].fill(0.0);
        }
        net
    }

    /// Everything random, output paths included. Used where conditioning
    /// must visibly act without any training, as in simulation runs.
    pub fn new_random(dims: DenoiserDims, rng: &mut SeededRng) -> Self {
        let l = Layout::new(&dims);
        let mut params = vec![0.0; l.total];
        let fills: [(usize, usize, usize); 18] = [
            (l.w_q, dims.d * dims.d, dims.d),
            (l.w_k, dims.d * dims.d, dims.d),
            (l.w_v, dims.d * dims.d, dims.d),
            (l.emo_table, EMOTION_LABEL_COUNT * dims.d_emotion, 1),
            (l.null_emo, dims.d_emotion, 1),
            (l.null_audio, dims.d_audio, 1),
            (l.null_ref, dims.d, 1),
            (l.p_audio, dims.d * dims.d_audio, dims.d_audio),
            (l.p_ref, dims.d * dims.d, dims.d),
            (l.mod_w1, dims.mod_hidden * dims.d_emotion, dims.d_emotion),
            (l.mod_b1, dims.mod_hidden, 1),
            (l.mod_w2, 2 * dims.d * dims.mod_hidden, dims.mod_hidden),
            (l.mod_b2, 2 * dims.d, 1),
            (l.mlp_w1, dims.hidden * Layout::mlp_input_dim(&dims), Layout::mlp_input_dim(&dims)),
            (l.mlp_b1, dims.hidden, 1),
            (l.mlp_w2, dims.d * dims.hidden, dims.hidden),
            (l.mlp_b2, dims.d, 1),
            (l.skip, dims.d, 1),
        ];
        for (start, len, fan_in) in fills {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..start + len] {
                *p = scale * rng.standard_normal();
            }
        }
        Self { dims, params }
    }

    pub fn dims(&self) -> &DenoiserDims {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// The network's q/k/v projections as a standalone object, for building
    /// memory states from frames outside the training graph. Fails if the
    /// parameters have gone non-finite.
    pub fn attention_projections(&self) -> Result<AttentionProjections> {
        let d = self.dims.d;
        let l = Layout::new(&self.dims);
        let take = |off: usize| DenseMatrix::new(d, d, self.params[off..off + d * d].to_vec());
        AttentionProjections::new(take(l.w_q)?, take(l.w_k)?, take(l.w_v)?)
    }

    /// Gradient-descent update: `params -= lr * grads`.
    pub fn apply_update(&mut self, grads: &[f64], lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(CoreError::DimMismatch {
                context: "ToyDenoiser::apply_update",
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
        Ok(())
    }

    fn mat<'p>(&'p self, off: usize, rows: usize, cols: usize) -> impl Fn(usize, usize) -> f64 + 'p {
        let slice = &self.params[off..off + rows * cols];
        move |r, c| slice[r * cols + c]
    }

    fn validate(&self, input: &DenoiseInput) -> Result<()> {
        let DenoiserDims { d, d_audio, .. } = self.dims;
        if input.z_t.cols() != d {
            return Err(CoreError::DimMismatch {
                context: "DenoiseInput z_t width",
                expected: d,
                got: input.z_t.cols(),
            });
        }
        if input.z_t.rows() == 0 {
            return Err(CoreError::EmptyInput { context: "DenoiseInput z_t" });
        }
        if !input.t.is_finite() || !(0.0..1.0).contains(&input.t) {
            return Err(CoreError::OutOfRange {
                context: "DenoiseInput t",
                value: input.t,
                range: "[0, 1)",
            });
        }
        if let Some(a) = input.audio {
            if a.rows() != input.z_t.rows() || a.cols() != d_audio {
                return Err(CoreError::ShapeMismatch {
                    context: "DenoiseInput audio",
                    detail: format!(
                        "audio {}x{}, want {}x{d_audio}",
                        a.rows(),
                        a.cols(),
                        input.z_t.rows()
                    ),
                });
            }
        }
        if let Some(r) = input.reference {
            if r.len() != d {
                return Err(CoreError::DimMismatch {
                    context: "DenoiseInput reference",
                    expected: d,
                    got: r.len(),
                });
            }
        }
        if let Some(m) = input.memory {
            if m.d() != d {
                return Err(CoreError::DimMismatch {
                    context: "DenoiseInput memory",
                    expected: d,
                    got: m.d(),
                });
            }
        }
        if let Some(w) = input.extra_window {
            if w.cols() != d {
                return Err(CoreError::DimMismatch {
                    context: "DenoiseInput extra_window",
                    expected: d,
                    got: w.cols(),
                });
            }
            if input.memory.is_some() {
                return Err(CoreError::ShapeMismatch {
                    context: "DenoiseInput history",
                    detail: "memory and extra_window are mutually exclusive".into(),
                });
            }
        }
        Ok(())
    }

    /// Predict the noise for a clip. Returns the prediction and the cache
    /// the backward pass needs.
    pub fn forward(&self, input: &DenoiseInput) -> Result<(DenseMatrix, ForwardCache)> {
        self.validate(input)?;
        let DenoiserDims { d, d_audio, d_emotion, mod_hidden, hidden } = self.dims;
        let l = Layout::new(&self.dims);
        let n = input.z_t.rows();

        // Rows visible to attention: optional window first, current last.
        let (x_attn, out_offset) = match input.extra_window {
            Some(w) => {
                let mut data = w.as_slice().to_vec();
                data.extend_from_slice(input.z_t.as_slice());
                (DenseMatrix::new(w.rows() + n, d, data)?, w.rows())
            }
            None => (input.z_t.clone(), 0),
        };
        let total = x_attn.rows();

        let w_q = self.mat(l.w_q, d, d);
        let w_k = self.mat(l.w_k, d, d);
        let w_v = self.mat(l.w_v, d, d);

        // Keys and values over every visible row.
        let mut phi_k = DenseMatrix::zeros(total, d);
        let mut v = DenseMatrix::zeros(total, d);
        for j in 0..total {
            let x_j = x_attn.row(j);
            let k_pre: Vec<f64> = (0..d).map(|r| (0..d).map(|c| w_k(r, c) * x_j[c]).sum()).collect();
            let phi = feature_map(&k_pre)?;
            for r in 0..d {
                phi_k.set(j, r, phi[r]);
                v.set(j, r, (0..d).map(|c| w_v(r, c) * x_j[c]).sum());
            }
        }

        // Undecayed sums over visible rows, then the memory's contribution.
        let mut h_kv = DenseMatrix::zeros(d, d);
        let mut h_k = vec![0.0; d];
        for j in 0..total {
            for r in 0..d {
                let p = phi_k.get(j, r);
                for c in 0..d {
                    h_kv.set(r, c, h_kv.get(r, c) + p * v.get(j, c));
                }
                h_k[r] += p;
            }
        }
        if let Some(m) = input.memory {
            for r in 0..d {
                for c in 0..d {
                    h_kv.set(r, c, h_kv.get(r, c) + m.m_kv().get(r, c));
                }
                h_k[r] += m.m_k()[r];
            }
        }

        // Queries and outputs for current frames only.
        let mut phi_q = DenseMatrix::zeros(n, d);
        let mut scores = DenseMatrix::zeros(n, total);
        let mut denoms = vec![0.0; n];
        let mut guard_active = vec![false; n];
        let mut attn_out = DenseMatrix::zeros(n, d);
        for i in 0..n {
            let x_i = x_attn.row(out_offset + i);
            let q_pre: Vec<f64> = (0..d).map(|r| (0..d).map(|c| w_q(r, c) * x_i[c]).sum()).collect();
            let phi = feature_map(&q_pre)?;
            for r in 0..d {
                phi_q.set(i, r, phi[r]);
            }
            for j in 0..total {
                scores.set(i, j, dot(&phi, phi_k.row(j)));
            }
            let raw_den = dot(&phi, &h_k);
            let den = raw_den.max(DENOM_GUARD);
            guard_active[i] = raw_den < DENOM_GUARD;
            denoms[i] = den;
            for c in 0..d {
                let num: f64 = (0..d).map(|r| phi[r] * h_kv.get(r, c)).sum();
                attn_out.set(i, c, num / den);
            }
        }

        // Residual and layer norm.
        let mut u = DenseMatrix::zeros(n, d);
        let mut sigma = vec![0.0; n];
        let mut normed = DenseMatrix::zeros(n, d);
        for i in 0..n {
            for c in 0..d {
                u.set(i, c, input.z_t.get(i, c) + attn_out.get(i, c));
            }
            let mean = u.row(i).iter().sum::<f64>() / d as f64;
            let var = u.row(i).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let s = (var + LN_EPS).sqrt();
            sigma[i] = s;
            for c in 0..d {
                normed.set(i, c, (u.get(i, c) - mean) / s);
            }
        }

        // Emotion-adaptive modulation, shared by every frame of the clip.
        let e_vec: Vec<f64> = match input.emotion {
            Some(label) => {
                let start = l.emo_table + label.index() * d_emotion;
                self.params[start..start + d_emotion].to_vec()
            }
            None => self.params[l.null_emo..l.null_emo + d_emotion].to_vec(),
        };
        let mod_w1 = self.mat(l.mod_w1, mod_hidden, d_emotion);
        let h_m: Vec<f64> = (0..mod_hidden)
            .map(|r| {
                ((0..d_emotion).map(|c| mod_w1(r, c) * e_vec[c]).sum::<f64>()
                    + self.params[l.mod_b1 + r])
                    .tanh()
            })
            .collect();
        let mod_w2 = self.mat(l.mod_w2, 2 * d, mod_hidden);
        let mod_out: Vec<f64> = (0..2 * d)
            .map(|r| {
                (0..mod_hidden).map(|c| mod_w2(r, c) * h_m[c]).sum::<f64>()
                    + self.params[l.mod_b2 + r]
            })
            .collect();
        let (raw_scale, shift) = mod_out.split_at(d);
        let raw_scale = raw_scale.to_vec();

        // Audio rows: live features or the null embedding on every frame.
        let a_raw = match input.audio {
            Some(a) => a.clone(),
            None => {
                let null = &self.params[l.null_audio..l.null_audio + d_audio];
                let mut data = Vec::with_capacity(n * d_audio);
                for _ in 0..n {
                    data.extend_from_slice(null);
                }
                DenseMatrix::new(n, d_audio, data)?
            }
        };
        let p_audio = self.mat(l.p_audio, d, d_audio);
        let mut a_proj = DenseMatrix::zeros(n, d);
        for i in 0..n {
            for r in 0..d {
                a_proj.set(i, r, (0..d_audio).map(|c| p_audio(r, c) * a_raw.get(i, c)).sum());
            }
        }

        // Reference: one vector shared by all frames.
        let r_raw: Vec<f64> = match input.reference {
            Some(r) => r.to_vec(),
            None => self.params[l.null_ref..l.null_ref + d].to_vec(),
        };
        let p_ref = self.mat(l.p_ref, d, d);
        let r_proj: Vec<f64> = (0..d)
            .map(|r| (0..d).map(|c| p_ref(r, c) * r_raw[c]).sum())
            .collect();

        // Per-frame MLP plus the learned skip from the raw frame.
        let mlp_in_dim = Layout::mlp_input_dim(&self.dims);
        let mlp_w1 = self.mat(l.mlp_w1, hidden, mlp_in_dim);
        let mlp_w2 = self.mat(l.mlp_w2, d, hidden);
        let mut mlp_in = DenseMatrix::zeros(n, mlp_in_dim);
        let mut mlp_h = DenseMatrix::zeros(n, hidden);
        let mut eps_hat = DenseMatrix::zeros(n, d);
        for i in 0..n {
            for c in 0..d {
                let y = (1.0 + raw_scale[c]) * normed.get(i, c) + shift[c];
                mlp_in.set(i, c, y);
                mlp_in.set(i, d + c, input.z_t.get(i, c));
                mlp_in.set(i, 2 * d + c, a_proj.get(i, c));
                mlp_in.set(i, 3 * d + c, r_proj[c]);
            }
            mlp_in.set(i, 4 * d, input.t);
            mlp_in.set(i, 4 * d + 1, 1.0 - input.t);
            for r in 0..hidden {
                let pre: f64 = (0..mlp_in_dim).map(|c| mlp_w1(r, c) * mlp_in.get(i, c)).sum::<f64>()
                    + self.params[l.mlp_b1 + r];
                mlp_h.set(i, r, pre.tanh());
            }
            for r in 0..d {
                let out: f64 = (0..hidden).map(|c| mlp_w2(r, c) * mlp_h.get(i, c)).sum::<f64>()
                    + self.params[l.mlp_b2 + r]
                    + self.params[l.skip + r] * input.z_t.get(i, r);
                eps_hat.set(i, r, out);
            }
        }

        let cache = ForwardCache {
            x_attn,
            out_offset,
            phi_q,
            phi_k,
            v,
            scores,
            denoms,
            guard_active,
            attn_out,
            sigma,
            normed,
            e_vec,
            h_m,
            raw_scale,
            a_raw,
            r_raw,
            mlp_in,
            mlp_h,
        };
        Ok((eps_hat, cache))
    }

    /// Parameter gradients for upstream gradient `g_eps` (same shape as the
    /// prediction). The memory accumulators are treated as constants: they
    /// summarize detached past frames.
    pub fn backward(
        &self,
        input: &DenoiseInput,
        cache: &ForwardCache,
        g_eps: &DenseMatrix,
    ) -> Result<Vec<f64>> {
        let DenoiserDims { d, d_audio, d_emotion, mod_hidden, hidden } = self.dims;
        let l = Layout::new(&self.dims);
        let n = input.z_t.rows();
        if g_eps.rows() != n || g_eps.cols() != d {
            return Err(CoreError::ShapeMismatch {
                context: "ToyDenoiser::backward",
                detail: format!("g_eps {}x{}, want {n}x{d}", g_eps.rows(), g_eps.cols()),
            });
        }
        let total = cache.x_attn.rows();
        let mlp_in_dim = Layout::mlp_input_dim(&self.dims);
        let mut g = vec![0.0; self.params.len()];

        let mlp_w1 = self.mat(l.mlp_w1, hidden, mlp_in_dim);
        let mlp_w2 = self.mat(l.mlp_w2, d, hidden);
        let mod_w1 = self.mat(l.mod_w1, mod_hidden, d_emotion);
        let mod_w2 = self.mat(l.mod_w2, 2 * d, mod_hidden);
        let p_audio = self.mat(l.p_audio, d, d_audio);
        let p_ref = self.mat(l.p_ref, d, d);
        // MLP head, skip, and input-block gradients.
        let mut g_y = DenseMatrix::zeros(n, d);
        let mut g_a_proj = DenseMatrix::zeros(n, d);
        let mut g_r_proj = vec![0.0; d];
        for i in 0..n {
            // Output layer and skip.
            let mut g_h = vec![0.0; hidden];
            for r in 0..d {
                let go = g_eps.get(i, r);
                g[l.mlp_b2 + r] += go;
                g[l.skip + r] += go * input.z_t.get(i, r);
                for c in 0..hidden {
                    g[l.mlp_w2 + r * hidden + c] += go * cache.mlp_h.get(i, c);
                    g_h[c] += mlp_w2(r, c) * go;
                }
            }
            // Hidden tanh layer.
            let mut g_in = vec![0.0; mlp_in_dim];
            for r in 0..hidden {
                let h = cache.mlp_h.get(i, r);
                let gp = g_h[r] * (1.0 - h * h);
                g[l.mlp_b1 + r] += gp;
                for c in 0..mlp_in_dim {
                    g[l.mlp_w1 + r * mlp_in_dim + c] += gp * cache.mlp_in.get(i, c);
                    g_in[c] += mlp_w1(r, c) * gp;
                }
            }
            for c in 0..d {
                g_y.set(i, c, g_in[c]);
                g_a_proj.set(i, c, g_in[2 * d + c]);
                g_r_proj[c] += g_in[3 * d + c];
            }
            // g_in[d..2d] flows to the raw input; no parameters upstream.
        }

        // Reference projection; null embedding picks up the gradient when
        // the reference was dropped.
        for r in 0..d {
            for c in 0..d {
                g[l.p_ref + r * d + c] += g_r_proj[r] * cache.r_raw[c];
            }
        }
        if input.reference.is_none() {
            for c in 0..d {
                let back: f64 = (0..d).map(|r| p_ref(r, c) * g_r_proj[r]).sum();
                g[l.null_ref + c] += back;
            }
        }

        // Audio projection; same treatment for the audio null.
        for i in 0..n {
            for r in 0..d {
                let go = g_a_proj.get(i, r);
                for c in 0..d_audio {
                    g[l.p_audio + r * d_audio + c] += go * cache.a_raw.get(i, c);
                }
            }
        }
        if input.audio.is_none() {
            for c in 0..d_audio {
                let mut back = 0.0;
                for i in 0..n {
                    for r in 0..d {
                        back += p_audio(r, c) * g_a_proj.get(i, r);
                    }
                }
                g[l.null_audio + c] += back;
            }
        }

        // Modulation: scale/shift accumulate over frames.
        let mut g_raw_scale = vec![0.0; d];
        let mut g_shift = vec![0.0; d];
        let mut g_normed = DenseMatrix::zeros(n, d);
        for i in 0..n {
            for c in 0..d {
                let gy = g_y.get(i, c);
                g_raw_scale[c] += gy * cache.normed.get(i, c);
                g_shift[c] += gy;
                g_normed.set(i, c, gy * (1.0 + cache.raw_scale[c]));
            }
        }
        // Through the modulation network into the emotion embedding.
        let mut g_hm = vec![0.0; mod_hidden];
        for r in 0..2 * d {
            let go = if r < d { g_raw_scale[r] } else { g_shift[r - d] };
            g[l.mod_b2 + r] += go;
            for c in 0..mod_hidden {
                g[l.mod_w2 + r * mod_hidden + c] += go * cache.h_m[c];
                g_hm[c] += mod_w2(r, c) * go;
            }
        }
        let mut g_e = vec![0.0; d_emotion];
        for r in 0..mod_hidden {
            let h = cache.h_m[r];
            let gp = g_hm[r] * (1.0 - h * h);
            g[l.mod_b1 + r] += gp;
            for c in 0..d_emotion {
                g[l.mod_w1 + r * d_emotion + c] += gp * cache.e_vec[c];
                g_e[c] += mod_w1(r, c) * gp;
            }
        }
        match input.emotion {
            Some(label) => {
                let start = l.emo_table + label.index() * d_emotion;
                for c in 0..d_emotion {
                    g[start + c] += g_e[c];
                }
            }
            None => {
                for c in 0..d_emotion {
                    g[l.null_emo + c] += g_e[c];
                }
            }
        }

        // Layer norm backward, per frame.
        let mut g_attn = DenseMatrix::zeros(n, d);
        for i in 0..n {
            let gn = g_normed.row(i);
            let nv = cache.normed.row(i);
            let mean_gn = gn.iter().sum::<f64>() / d as f64;
            let mean_gn_n = gn.iter().zip(nv).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for c in 0..d {
                let gu = (gn[c] - mean_gn - nv[c] * mean_gn_n) / cache.sigma[i];
                // u = z_t + attention output; only the attention side has
                // parameters upstream.
                g_attn.set(i, c, gu);
            }
        }

        // Attention backward. out_i = N_i / D_i with
        // N_i = sum_j s_ij v_j + M_kv^T phi_q_i and
        // D_i = sum_j s_ij + m_k . phi_q_i.
        let mut g_phi_q = DenseMatrix::zeros(n, d);
        let mut g_phi_k = DenseMatrix::zeros(total, d);
        let mut g_v = DenseMatrix::zeros(total, d);
        for i in 0..n {
            let den = cache.denoms[i];
            let g_n: Vec<f64> = (0..d).map(|c| g_attn.get(i, c) / den).collect();
            let g_d = if cache.guard_active[i] {
                0.0
            } else {
                -(0..d).map(|c| g_attn.get(i, c) * cache.attn_out.get(i, c)).sum::<f64>() / den
            };
            for j in 0..total {
                let s = cache.scores.get(i, j);
                let g_s = (0..d).map(|c| g_n[c] * cache.v.get(j, c)).sum::<f64>() + g_d;
                for r in 0..d {
                    g_v.set(j, r, g_v.get(j, r) + s * g_n[r]);
                    g_phi_q.set(i, r, g_phi_q.get(i, r) + g_s * cache.phi_k.get(j, r));
                    g_phi_k.set(j, r, g_phi_k.get(j, r) + g_s * cache.phi_q.get(i, r));
                }
            }
            if let Some(m) = input.memory {
                for r in 0..d {
                    let mkv_gn: f64 = (0..d).map(|c| m.m_kv().get(r, c) * g_n[c]).sum();
                    g_phi_q.set(i, r, g_phi_q.get(i, r) + mkv_gn + g_d * m.m_k()[r]);
                }
            }
        }

        // Softmax backward for queries, then into w_q.
        for i in 0..n {
            let phi = cache.phi_q.row(i);
            let gp = g_phi_q.row(i);
            let inner: f64 = phi.iter().zip(gp).map(|(p, gg)| p * gg).sum();
            let x_i = cache.x_attn.row(cache.out_offset + i);
            for r in 0..d {
                let g_pre = phi[r] * (gp[r] - inner);
                for c in 0..d {
                    g[l.w_q + r * d + c] += g_pre * x_i[c];
                }
            }
        }
        // Softmax backward for keys plus the value projection, over every
        // visible row, window rows included: they are constants as data but
        // their projections still carry parameter gradients.
        for j in 0..total {
            let phi = cache.phi_k.row(j);
            let gp = g_phi_k.row(j);
            let inner: f64 = phi.iter().zip(gp).map(|(p, gg)| p * gg).sum();
            let x_j = cache.x_attn.row(j);
            for r in 0..d {
                let g_pre = phi[r] * (gp[r] - inner);
                let gv = g_v.get(j, r);
                for c in 0..d {
                    g[l.w_k + r * d + c] += g_pre * x_j[c];
                    g[l.w_v + r * d + c] += gv * x_j[c];
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_loss, LossReduction};
    use crate::memory::{linear_attention, memory_guided_attention, FrameChunk};
    use approx::assert_abs_diff_eq;

    fn tiny_dims() -> DenoiserDims {
        DenoiserDims { d: 3, d_audio: 2, d_emotion: 3, mod_hidden: 3, hidden: 4 }
    }

    fn loss_of(net: &ToyDenoiser, input: &DenoiseInput, target: &DenseMatrix) -> f64 {
        let (pred, _) = net.forward(input).unwrap();
        flow_loss(&pred, target, input.t, LossReduction::Sum).unwrap().weighted
    }

    fn analytic_grads(net: &ToyDenoiser, input: &DenoiseInput, target: &DenseMatrix) -> Vec<f64> {
        let (pred, cache) = net.forward(input).unwrap();
        let weight = crate::flow::loss_weight(input.t).unwrap();
        let mut g_eps = DenseMatrix::zeros(pred.rows(), pred.cols());
        for i in 0..pred.rows() {
            for c in 0..pred.cols() {
                g_eps.set(i, c, 2.0 * weight * (pred.get(i, c) - target.get(i, c)));
            }
        }
        net.backward(input, &cache, &g_eps).unwrap()
    }

    fn check_gradients(net: &ToyDenoiser, input: &DenoiseInput, target: &DenseMatrix) {
        let analytic = analytic_grads(net, input, target);
        let h = 1e-5;
        let mut worst: (f64, usize) = (0.0, 0);
        for p in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params_mut()[p] += h;
            let mut minus = net.clone();
            minus.params_mut()[p] -= h;
            let fd = (loss_of(&plus, input, target) - loss_of(&minus, input, target)) / (2.0 * h);
            let denom = analytic[p].abs().max(fd.abs()).max(1e-8);
            let rel = (analytic[p] - fd).abs() / denom;
            if rel > worst.0 {
                worst = (rel, p);
            }
        }
        assert!(
            worst.0 < 1e-5,
            "gradient mismatch at param {}: rel err {}",
            worst.1,
            worst.0
        );
    }

    struct Fixture {
        z_t: DenseMatrix,
        audio: DenseMatrix,
        reference: Vec<f64>,
        memory: MemoryState,
        window: DenseMatrix,
        target: DenseMatrix,
    }

    fn fixture(rng: &mut SeededRng) -> Fixture {
        let dims = tiny_dims();
        let z_t = rng.normal_matrix(2, dims.d, 1.0);
        let audio = rng.normal_matrix(2, dims.d_audio, 1.0);
        let reference: Vec<f64> = (0..dims.d).map(|_| rng.standard_normal()).collect();
        let mut memory = MemoryState::new(dims.d, 0.8).unwrap();
        let past = FrameChunk::new(
            rng.normal_matrix(3, dims.d, 1.0),
            rng.normal_matrix(3, dims.d, 1.0),
            rng.normal_matrix(3, dims.d, 1.0),
        )
        .unwrap();
        memory.absorb(&past).unwrap();
        let window = rng.normal_matrix(2, dims.d, 1.0);
        let target = rng.normal_matrix(2, dims.d, 1.0);
        Fixture { z_t, audio, reference, memory, window, target }
    }

    #[test]
    fn gradients_match_finite_differences_all_conditions_live() {
        // Ten random parameter points, as many as the contract asks for.
        for seed in 0..10 {
            let mut rng = SeededRng::new(1000 + seed);
            let net = ToyDenoiser::new_random(tiny_dims(), &mut rng);
            let f = fixture(&mut rng);
            let input = DenoiseInput {
                z_t: &f.z_t,
                t: 0.4,
                audio: Some(&f.audio),
                emotion: Some(EmotionLabel::Happy),
                reference: Some(&f.reference),
                memory: Some(&f.memory),
                extra_window: None,
            };
            check_gradients(&net, &input, &f.target);
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_conditions_dropped() {
        for seed in 0..3 {
            let mut rng = SeededRng::new(2000 + seed);
            let net = ToyDenoiser::new_random(tiny_dims(), &mut rng);
            let f = fixture(&mut rng);
            let input = DenoiseInput::unconditional(&f.z_t, 0.6);
            check_gradients(&net, &input, &f.target);
        }
    }

    #[test]
    fn gradients_match_finite_differences_window_mode() {
        for seed in 0..3 {
            let mut rng = SeededRng::new(3000 + seed);
            let net = ToyDenoiser::new_random(tiny_dims(), &mut rng);
            let f = fixture(&mut rng);
            let input = DenoiseInput {
                z_t: &f.z_t,
                t: 0.25,
                audio: Some(&f.audio),
                emotion: Some(EmotionLabel::Sad),
                reference: None,
                memory: None,
                extra_window: Some(&f.window),
            };
            check_gradients(&net, &input, &f.target);
        }
    }

    #[test]
    fn zero_output_init_predicts_zero() {
        let mut rng = SeededRng::new(5);
        let net = ToyDenoiser::new(DenoiserDims::default(), &mut rng);
        let z_t = rng.normal_matrix(4, 8, 1.0);
        let (pred, _) = net.forward(&DenoiseInput::unconditional(&z_t, 0.3)).unwrap();
        assert!(pred.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn attention_block_agrees_with_memory_module() {
        // The in-network attention must be the same function exposed by the
        // memory module when fed the same projections.
        let mut rng = SeededRng::new(6);
        let dims = tiny_dims();
        let net = ToyDenoiser::new_random(dims, &mut rng);
        let z_t = rng.normal_matrix(3, dims.d, 1.0);
        let mut memory = MemoryState::new(dims.d, 0.9).unwrap();
        memory
            .absorb(&FrameChunk::new(
                rng.normal_matrix(2, dims.d, 1.0),
                rng.normal_matrix(2, dims.d, 1.0),
                rng.normal_matrix(2, dims.d, 1.0),
            )
            .unwrap())
            .unwrap();

        let d = dims.d;
        let proj = net.attention_projections().unwrap();
        let chunk = proj.project(&z_t).unwrap();

        let input = DenoiseInput {
            z_t: &z_t,
            t: 0.2,
            audio: None,
            emotion: None,
            reference: None,
            memory: Some(&memory),
            extra_window: None,
        };
        let (_, cache) = net.forward(&input).unwrap();
        let expected = memory_guided_attention(&chunk, &memory).unwrap();
        for i in 0..3 {
            for c in 0..d {
                assert_abs_diff_eq!(cache.attn_out.get(i, c), expected.get(i, c), epsilon = 1e-12);
            }
        }

        let plain_input = DenoiseInput::unconditional(&z_t, 0.2);
        let (_, plain_cache) = net.forward(&plain_input).unwrap();
        let expected_plain = linear_attention(&chunk).unwrap();
        for i in 0..3 {
            for c in 0..d {
                assert_abs_diff_eq!(
                    plain_cache.attn_out.get(i, c),
                    expected_plain.get(i, c),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn emotion_labels_change_the_prediction() {
        let mut rng = SeededRng::new(7);
        let net = ToyDenoiser::new_random(DenoiserDims::default(), &mut rng);
        let z_t = rng.normal_matrix(2, 8, 1.0);
        let happy = DenoiseInput {
            emotion: Some(EmotionLabel::Happy),
            ..DenoiseInput::unconditional(&z_t, 0.5)
        };
        let angry = DenoiseInput {
            emotion: Some(EmotionLabel::Angry),
            ..DenoiseInput::unconditional(&z_t, 0.5)
        };
        let (a, _) = net.forward(&happy).unwrap();
        let (b, _) = net.forward(&angry).unwrap();
        let gap = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap > 1e-9, "labels did not alter the output");
    }

    #[test]
    fn dropped_and_live_conditions_differ() {
        let mut rng = SeededRng::new(8);
        let net = ToyDenoiser::new_random(DenoiserDims::default(), &mut rng);
        let z_t = rng.normal_matrix(2, 8, 1.0);
        let audio = rng.normal_matrix(2, 8, 1.0);
        let with_audio = DenoiseInput {
            audio: Some(&audio),
            ..DenoiseInput::unconditional(&z_t, 0.5)
        };
        let without = DenoiseInput::unconditional(&z_t, 0.5);
        let (a, _) = net.forward(&with_audio).unwrap();
        let (b, _) = net.forward(&without).unwrap();
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn input_validation_rejects_bad_shapes() {
        let mut rng = SeededRng::new(9);
        let dims = tiny_dims();
        let net = ToyDenoiser::new_random(dims, &mut rng);
        let z_t = rng.normal_matrix(2, dims.d, 1.0);
        let wrong_width = rng.normal_matrix(2, dims.d + 1, 1.0);
        assert!(net.forward(&DenoiseInput::unconditional(&wrong_width, 0.5)).is_err());
        assert!(net.forward(&DenoiseInput::unconditional(&z_t, 1.0)).is_err());
        let bad_audio = rng.normal_matrix(3, dims.d_audio, 1.0);
        assert!(net
            .forward(&DenoiseInput {
                audio: Some(&bad_audio),
                ..DenoiseInput::unconditional(&z_t, 0.5)
            })
            .is_err());
        let short_ref = vec![0.0; dims.d - 1];
        assert!(net
            .forward(&DenoiseInput {
                reference: Some(&short_ref),
                ..DenoiseInput::unconditional(&z_t, 0.5)
            })
            .is_err());
        let memory = MemoryState::new(dims.d, 0.9).unwrap();
        let window = rng.normal_matrix(1, dims.d, 1.0);
        assert!(net
            .forward(&DenoiseInput {
                memory: Some(&memory),
                extra_window: Some(&window),
                ..DenoiseInput::unconditional(&z_t, 0.5)
            })
            .is_err());
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let mut rng = SeededRng::new(10);
        let net = ToyDenoiser::new_random(DenoiserDims::default(), &mut rng);
        let z_t = rng.normal_matrix(16, 8, 1.0);
        let input = DenoiseInput::unconditional(&z_t, 0.7);
        let (a, _) = net.forward(&input).unwrap();
        let (b, _) = net.forward(&input).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| x.is_finite()));
    }
}
