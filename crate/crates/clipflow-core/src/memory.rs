//! Decayed key/value memory and the linear attention it feeds.
//!
//! Attention here is the normalized-feature kind: queries and keys pass
//! through a per-frame softmax feature map, the score between frames is the
//! dot product of the mapped features, and the output is the score-weighted
//! average of values. Because scores factor through the feature map, an
//! entire history of frames collapses into two running sums: a d-by-d
//! key/value outer-product accumulator and a d-vector key accumulator. Both
//! are decayed by gamma per frame of age, so the memory footprint is fixed
//! no matter how many frames have been absorbed.
//!
//! Age is counted in frames from the present: a frame absorbed one step ago
//! carries weight gamma, two steps ago gamma squared, and so on. Frames of
//! the chunk currently being attended over are not decayed at all.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::{dot, softmax_slice, DenseMatrix, Vector};

/// Floor applied to attention denominators before dividing.
pub const DENOM_GUARD: f64 = 1e-30;

const MEMORY_MAGIC: &[u8; 4] = b"MEMS";
const MEMORY_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Feature map
// ---------------------------------------------------------------------------

/// Per-frame feature map: softmax across the feature dimension.
///
/// Outputs are strictly positive and sum to one, which keeps every attention
/// denominator strictly positive.
pub fn feature_map(x: &[f64]) -> Result<Vec<f64>> {
    softmax_slice(x)
}

/// Apply [`feature_map`] to every row of a frames-by-features matrix.
pub fn feature_map_rows(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for r in 0..m.rows() {
        data.extend(feature_map(m.row(r))?);
    }
    DenseMatrix::new(m.rows(), m.cols(), data)
}

// ---------------------------------------------------------------------------
// Chunks and projections
// ---------------------------------------------------------------------------

/// A contiguous run of frames with their query, key, and value features.
///
/// Rows are frames ordered oldest to newest. All three matrices share the
/// same shape; `q` is ignored by memory updates, which only read keys and
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameChunk {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
}

impl FrameChunk {
    pub fn new(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let shape = (q.rows(), q.cols());
        if (k.rows(), k.cols()) != shape || (v.rows(), v.cols()) != shape {
            return Err(CoreError::ShapeMismatch {
                context: "FrameChunk::new",
                detail: format!(
                    "q {}x{}, k {}x{}, v {}x{}",
                    q.rows(),
                    q.cols(),
                    k.rows(),
                    k.cols(),
                    v.rows(),
                    v.cols()
                ),
            });
        }
        if q.rows() == 0 || q.cols() == 0 {
            return Err(CoreError::EmptyInput { context: "FrameChunk::new" });
        }
        Ok(Self { q, k, v })
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects zero frames
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn k(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    /// Concatenate two chunks in time order: `self` first, `other` after.
    pub fn concat(&self, other: &FrameChunk) -> Result<FrameChunk> {
        if self.d() != other.d() {
            return Err(CoreError::DimMismatch {
                context: "FrameChunk::concat",
                expected: self.d(),
                got: other.d(),
            });
        }
        let stack = |a: &DenseMatrix, b: &DenseMatrix| {
            let mut data = a.as_slice().to_vec();
            data.extend_from_slice(b.as_slice());
            DenseMatrix::new(a.rows() + b.rows(), a.cols(), data)
        };
        FrameChunk::new(stack(&self.q, &other.q)?, stack(&self.k, &other.k)?, stack(&self.v, &other.v)?)
    }

    /// Slice of frames `[start, end)` as a new chunk.
    pub fn slice(&self, start: usize, end: usize) -> Result<FrameChunk> {
        if start >= end || end > self.len() {
            return Err(CoreError::OutOfRange {
                context: "FrameChunk::slice",
                value: end as f64,
                range: "(start, len]",
            });
        }
        let take = |m: &DenseMatrix| {
            let d = m.cols();
            DenseMatrix::new(end - start, d, m.as_slice()[start * d..end * d].to_vec())
        };
        FrameChunk::new(take(&self.q)?, take(&self.k)?, take(&self.v)?)
    }
}

/// Learned linear maps from raw frame features to query, key, and value.
#[derive(Debug, Clone)]
pub struct AttentionProjections {
    w_q: DenseMatrix,
    w_k: DenseMatrix,
    w_v: DenseMatrix,
}

impl AttentionProjections {
    /// All three maps must share the same output and input dimensions.
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        let shape = (w_q.rows(), w_q.cols());
        if (w_k.rows(), w_k.cols()) != shape || (w_v.rows(), w_v.cols()) != shape {
            return Err(CoreError::ShapeMismatch {
                context: "AttentionProjections::new",
                detail: format!(
                    "w_q {}x{}, w_k {}x{}, w_v {}x{}",
                    w_q.rows(),
                    w_q.cols(),
                    w_k.rows(),
                    w_k.cols(),
                    w_v.rows(),
                    w_v.cols()
                ),
            });
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn random(d_out: usize, d_in: usize, scale: f64, rng: &mut crate::numerics::SeededRng) -> Self {
        Self {
            w_q: rng.normal_matrix(d_out, d_in, scale),
            w_k: rng.normal_matrix(d_out, d_in, scale),
            w_v: rng.normal_matrix(d_out, d_in, scale),
        }
    }

    pub fn d_out(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_q.cols()
    }

    /// Project raw frames (rows) into a q/k/v chunk.
    pub fn project(&self, frames: &DenseMatrix) -> Result<FrameChunk> {
        if frames.cols() != self.d_in() {
            return Err(CoreError::DimMismatch {
                context: "AttentionProjections::project",
                expected: self.d_in(),
                got: frames.cols(),
            });
        }
        let apply = |w: &DenseMatrix| {
            let mut data = Vec::with_capacity(frames.rows() * w.rows());
            for i in 0..frames.rows() {
                for r in 0..w.rows() {
                    data.push(dot(w.row(r), frames.row(i)));
                }
            }
            DenseMatrix::new(frames.rows(), w.rows(), data)
        };
        FrameChunk::new(apply(&self.w_q)?, apply(&self.w_k)?, apply(&self.w_v)?)
    }
}

// ---------------------------------------------------------------------------
// Memory state
// ---------------------------------------------------------------------------

/// Fixed-size summary of all past frames.
///
/// `m_kv[r][c]` accumulates decayed products of mapped-key component `r`
/// with value component `c`; `m_k` accumulates decayed mapped keys. Both
/// shrink geometrically with age, so their norms stay bounded regardless of
/// how long the stream runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    d: usize,
    gamma: f64,
    frames_absorbed: u64,
    m_kv: DenseMatrix,
    m_k: Vector,
}

/// Plain-data image of a [`MemoryState`] used for JSON interchange.
///
/// `m_kv` is row-major. Field values round-trip bit-exactly through JSON
/// because the writer emits shortest-representation decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryStateRecord {
    pub version: u32,
    pub d: usize,
    pub gamma: f64,
    pub frames_absorbed: u64,
    pub m_kv: Vec<f64>,
    pub m_k: Vec<f64>,
}

impl MemoryState {
    /// Empty memory for feature dimension `d` and decay `gamma` in (0, 1].
    ///
    /// `gamma = 1` disables decay and is admitted for limit checks; bounded
    /// norms are only guaranteed strictly below one.
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        if d == 0 {
            return Err(CoreError::OutOfRange {
                context: "MemoryState dimension",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        if !gamma.is_finite() || gamma <= 0.0 || gamma > 1.0 {
            return Err(CoreError::OutOfRange {
                context: "MemoryState gamma",
                value: gamma,
                range: "(0, 1]",
            });
        }
        Ok(Self {
            d,
            gamma,
            frames_absorbed: 0,
            m_kv: DenseMatrix::zeros(d, d),
            m_k: Vector::zeros(d),
        })
    }

    /// Reassemble a state from raw parts, validating shapes and ranges.
    pub fn from_parts(
        d: usize,
        gamma: f64,
        frames_absorbed: u64,
        m_kv: DenseMatrix,
        m_k: Vector,
    ) -> Result<Self> {
        let mut state = MemoryState::new(d, gamma)?;
        if m_kv.rows() != d || m_kv.cols() != d {
            return Err(CoreError::ShapeMismatch {
                context: "MemoryState::from_parts",
                detail: format!("m_kv is {}x{}, want {d}x{d}", m_kv.rows(), m_kv.cols()),
            });
        }
        if m_k.dim() != d {
            return Err(CoreError::DimMismatch {
                context: "MemoryState::from_parts",
                expected: d,
                got: m_k.dim(),
            });
        }
        state.frames_absorbed = frames_absorbed;
        state.m_kv = m_kv;
        state.m_k = m_k;
        Ok(state)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn frames_absorbed(&self) -> u64 {
        self.frames_absorbed
    }

    pub fn m_kv(&self) -> &DenseMatrix {
        &self.m_kv
    }

    pub fn m_k(&self) -> &Vector {
        &self.m_k
    }

    /// Fold a chunk of `a` frames into the memory.
    ///
    /// The existing sums age by `gamma^a`; the chunk's own frames enter with
    /// weights `gamma^1` (newest frame) through `gamma^a` (oldest frame).
    /// Splitting a stream into chunks differently never changes the result:
    /// each frame's final weight depends only on its own age.
    pub fn absorb(&mut self, chunk: &FrameChunk) -> Result<()> {
        if chunk.d() != self.d {
            return Err(CoreError::DimMismatch {
                context: "MemoryState::absorb",
                expected: self.d,
                got: chunk.d(),
            });
        }
        let a = chunk.len();
        let age_all = self.gamma.powi(a as i32);
        self.m_kv.scale_in_place(age_all);
        for x in self.m_k.as_mut_slice() {
            *x *= age_all;
        }
        let d = self.d;
        for idx in 0..a {
            let w = self.gamma.powi((a - idx) as i32);
            let phi = feature_map(chunk.k.row(idx))?;
            let v = chunk.v.row(idx);
            let kv = self.m_kv.as_mut_slice();
            for r in 0..d {
                let wphi = w * phi[r];
                for c in 0..d {
                    kv[r * d + c] += wphi * v[c];
                }
            }
            let mk = self.m_k.as_mut_slice();
            for r in 0..d {
                mk[r] += w * phi[r];
            }
        }
        self.frames_absorbed += a as u64;
        Ok(())
    }

    // -- serialization ------------------------------------------------------

    /// Byte length of the binary encoding for dimension `d`.
    ///
    /// Depends only on `d`: magic, version, header scalars, then the two
    /// accumulators.
    pub const fn serialized_len(d: usize) -> usize {
        4 + 4 + 8 + 8 + 8 + 8 * d * d + 8 * d
    }

    /// Fixed-size little-endian binary encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::serialized_len(self.d));
        out.extend_from_slice(MEMORY_MAGIC);
        out.extend_from_slice(&MEMORY_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.frames_absorbed.to_le_bytes());
        for x in self.m_kv.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in self.m_k.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Decode the binary encoding produced by [`MemoryState::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |detail: String| CoreError::Decode { detail };
        if bytes.len() < 32 {
            return Err(fail(format!("memory blob too short: {} bytes", bytes.len())));
        }
        if &bytes[0..4] != MEMORY_MAGIC {
            return Err(fail("bad magic, not a memory blob".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MEMORY_FORMAT_VERSION {
            return Err(fail(format!("unsupported memory format version {version}")));
        }
        let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != Self::serialized_len(d) {
            return Err(fail(format!(
                "length {} does not match dimension {d} (want {})",
                bytes.len(),
                Self::serialized_len(d)
            )));
        }
        let gamma = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let frames_absorbed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let mut off = 32;
        let mut read_f64s = |n: usize| {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                off += 8;
            }
            out
        };
        let m_kv = DenseMatrix::new(d, d, read_f64s(d * d))?;
        let m_k = Vector::new(read_f64s(d))?;
        MemoryState::from_parts(d, gamma, frames_absorbed, m_kv, m_k)
    }

    /// Plain-data record for JSON interchange.
    pub fn to_record(&self) -> MemoryStateRecord {
        MemoryStateRecord {
            version: MEMORY_FORMAT_VERSION,
            d: self.d,
            gamma: self.gamma,
            frames_absorbed: self.frames_absorbed,
            m_kv: self.m_kv.as_slice().to_vec(),
            m_k: self.m_k.as_slice().to_vec(),
        }
    }

    pub fn from_record(rec: &MemoryStateRecord) -> Result<Self> {
        if rec.version != MEMORY_FORMAT_VERSION {
            return Err(CoreError::Decode {
                detail: format!("unsupported memory record version {}", rec.version),
            });
        }
        MemoryState::from_parts(
            rec.d,
            rec.gamma,
            rec.frames_absorbed,
            DenseMatrix::new(rec.d, rec.d, rec.m_kv.clone())?,
            Vector::new(rec.m_k.clone())?,
        )
    }
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

fn vec_mat(row: &[f64], m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, &x) in row.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o += x * m.get(r, c);
        }
    }
    out
}

/// Accumulate a chunk's undecayed key/value and key sums.
fn chunk_sums(chunk: &FrameChunk) -> Result<(DenseMatrix, Vec<f64>)> {
    let d = chunk.d();
    let mut h_kv = DenseMatrix::zeros(d, d);
    let mut h_k = vec![0.0; d];
    for j in 0..chunk.len() {
        let phi = feature_map(chunk.k.row(j))?;
        let v = chunk.v.row(j);
        let kv = h_kv.as_mut_slice();
        for r in 0..d {
            let p = phi[r];
            for c in 0..d {
                kv[r * d + c] += p * v[c];
            }
            h_k[r] += p;
        }
    }
    Ok((h_kv, h_k))
}

fn attend_with_sums(
    chunk: &FrameChunk,
    kv: &DenseMatrix,
    k_sum: &[f64],
) -> Result<DenseMatrix> {
    let d = chunk.d();
    let mut out = Vec::with_capacity(chunk.len() * d);
    for i in 0..chunk.len() {
        let phi_q = feature_map(chunk.q.row(i))?;
        let num = vec_mat(&phi_q, kv);
        let den = dot(&phi_q, k_sum).max(DENOM_GUARD);
        out.extend(num.into_iter().map(|x| x / den));
    }
    DenseMatrix::new(chunk.len(), d, out)
}

/// Within-chunk linear attention, no history.
///
/// Every frame attends to every frame of the chunk, including itself and
/// frames after it; outputs are convex combinations of the chunk's values.
pub fn linear_attention(chunk: &FrameChunk) -> Result<DenseMatrix> {
    let (h_kv, h_k) = chunk_sums(chunk)?;
    attend_with_sums(chunk, &h_kv, &h_k)
}

/// Linear attention over the current chunk plus decayed memory.
///
/// The chunk contributes undecayed sums; the memory contributes its decayed
/// accumulators. One call costs the same no matter how many frames the
/// memory has absorbed.
pub fn memory_guided_attention(chunk: &FrameChunk, memory: &MemoryState) -> Result<DenseMatrix> {
    if chunk.d() != memory.d() {
        return Err(CoreError::DimMismatch {
            context: "memory_guided_attention",
            expected: memory.d(),
            got: chunk.d(),
        });
    }
    let (mut kv, mut k_sum) = chunk_sums(chunk)?;
    {
        let kv = kv.as_mut_slice();
        for (x, m) in kv.iter_mut().zip(memory.m_kv().as_slice()) {
            *x += m;
        }
    }
    for (x, m) in k_sum.iter_mut().zip(memory.m_k().as_slice()) {
        *x += m;
    }
    attend_with_sums(chunk, &kv, &k_sum)
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Within-chunk attention computed from explicit pairwise scores.
///
/// Same quantity as [`linear_attention`], but built the slow way:
/// `out_i = sum_j s_ij v_j / sum_j s_ij` with `s_ij` the mapped-feature dot
/// product. No shared accumulators, so it cross-checks the factored form.
pub fn pairwise_attention_oracle(chunk: &FrameChunk) -> Result<DenseMatrix> {
    let d = chunk.d();
    let n = chunk.len();
    let phi_q = feature_map_rows(chunk.q())?;
    let phi_k = feature_map_rows(chunk.k())?;
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for j in 0..n {
            let s = dot(phi_q.row(i), phi_k.row(j));
            den += s;
            for (c, o) in num.iter_mut().enumerate() {
                *o += s * chunk.v.get(j, c);
            }
        }
        let den = den.max(DENOM_GUARD);
        out.extend(num.into_iter().map(|x| x / den));
    }
    DenseMatrix::new(n, d, out)
}

/// Memory-guided attention recomputed from the raw history, no running state.
///
/// Flattens every past chunk, weighs each past frame by `gamma` to the power
/// of its age in frames (newest past frame has age one), and evaluates the
/// attention sums directly. Exercising none of the incremental update code,
/// it is the ground truth the streaming path is checked against.
pub fn full_history_oracle(
    past: &[FrameChunk],
    current: &FrameChunk,
    gamma: f64,
) -> Result<DenseMatrix> {
    let d = current.d();
    for chunk in past {
        if chunk.d() != d {
            return Err(CoreError::DimMismatch {
                context: "full_history_oracle",
                expected: d,
                got: chunk.d(),
            });
        }
    }
    let total_past: usize = past.iter().map(FrameChunk::len).sum();
    let phi_q = feature_map_rows(current.q())?;
    let phi_k_cur = feature_map_rows(current.k())?;

    // (weight, phi_k, v) for each past frame, flattened oldest to newest.
    let mut weighted: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(total_past);
    let mut flat_idx = 0usize;
    for chunk in past {
        for j in 0..chunk.len() {
            let age = (total_past - flat_idx) as i32;
            weighted.push((
                gamma.powi(age),
                feature_map(chunk.k.row(j))?,
                chunk.v.row(j).to_vec(),
            ));
            flat_idx += 1;
        }
    }

    let n = current.len();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for j in 0..n {
            let s = dot(phi_q.row(i), phi_k_cur.row(j));
            den += s;
            for (c, o) in num.iter_mut().enumerate() {
                *o += s * current.v.get(j, c);
            }
        }
        for (w, phi_k, v) in &weighted {
            let s = w * dot(phi_q.row(i), phi_k);
            den += s;
            for (c, o) in num.iter_mut().enumerate() {
                *o += s * v[c];
            }
        }
        let den = den.max(DENOM_GUARD);
        out.extend(num.into_iter().map(|x| x / den));
    }
    DenseMatrix::new(n, d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn chunk_1d(values: &[f64]) -> FrameChunk {
        let n = values.len();
        let ones = DenseMatrix::new(n, 1, vec![0.0; n]).unwrap();
        FrameChunk::new(
            ones.clone(),
            ones,
            DenseMatrix::new(n, 1, values.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn random_chunk(rng: &mut SeededRng, n: usize, d: usize) -> FrameChunk {
        FrameChunk::new(
            rng.normal_matrix(n, d, 1.0),
            rng.normal_matrix(n, d, 1.0),
            rng.normal_matrix(n, d, 1.0),
        )
        .unwrap()
    }

    // In one dimension the feature map collapses to [1.0], so every score is
    // one and the accumulators reduce to plain decayed sums of values. That
    // makes exact hand computation possible.

    #[test]
    fn hand_example_two_single_frame_updates() {
        let mut m = MemoryState::new(1, 0.5).unwrap();
        m.absorb(&chunk_1d(&[1.0])).unwrap();
        m.absorb(&chunk_1d(&[2.0])).unwrap();
        // 0.5 * (0.5 * 1) + 0.5 * 2 = 1.25; keys: 0.5 * 0.5 + 0.5 = 0.75.
        assert_eq!(m.m_kv().get(0, 0), 1.25);
        assert_eq!(m.m_k()[0], 0.75);
        assert_eq!(m.frames_absorbed(), 2);
    }

    #[test]
    fn hand_example_one_two_frame_chunk_matches() {
        let mut m = MemoryState::new(1, 0.5).unwrap();
        m.absorb(&chunk_1d(&[1.0, 2.0])).unwrap();
        assert_eq!(m.m_kv().get(0, 0), 1.25);
        assert_eq!(m.m_k()[0], 0.75);
        assert_eq!(m.frames_absorbed(), 2);
    }

    #[test]
    fn hand_example_memory_guided_output() {
        let mut m = MemoryState::new(1, 0.5).unwrap();
        m.absorb(&chunk_1d(&[1.0, 2.0])).unwrap();
        let out = memory_guided_attention(&chunk_1d(&[3.0]), &m).unwrap();
        // (3 + 1.25) / (1 + 0.75) = 4.25 / 1.75.
        assert_abs_diff_eq!(out.get(0, 0), 4.25 / 1.75, epsilon = 1e-12);
    }

    #[test]
    fn single_frame_chunk_attends_to_itself() {
        let mut rng = SeededRng::new(2);
        let chunk = random_chunk(&mut rng, 1, 5);
        let out = linear_attention(&chunk).unwrap();
        for c in 0..5 {
            assert_abs_diff_eq!(out.get(0, c), chunk.v().get(0, c), epsilon = 1e-12);
        }
    }

    #[test]
    fn one_dim_two_frames_average_values() {
        let out = linear_attention(&chunk_1d(&[1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(1, 0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_value_chunk_only_decays_kv_accumulator() {
        let mut rng = SeededRng::new(7);
        let mut m = MemoryState::new(3, 0.8).unwrap();
        m.absorb(&random_chunk(&mut rng, 4, 3)).unwrap();
        let before = m.m_kv().clone();
        let zeros = FrameChunk::new(
            rng.normal_matrix(3, 3, 1.0),
            rng.normal_matrix(3, 3, 1.0),
            DenseMatrix::zeros(3, 3),
        )
        .unwrap();
        m.absorb(&zeros).unwrap();
        let scale = 0.8f64.powi(3);
        for (x, y) in m.m_kv().as_slice().iter().zip(before.as_slice()) {
            assert_abs_diff_eq!(*x, scale * y, epsilon = 1e-12);
        }
        assert_eq!(m.frames_absorbed(), 7);
    }

    #[test]
    fn gamma_one_matches_undecayed_sums() {
        let mut rng = SeededRng::new(9);
        let chunk = random_chunk(&mut rng, 6, 4);
        let mut m = MemoryState::new(4, 1.0).unwrap();
        m.absorb(&chunk).unwrap();
        let (h_kv, h_k) = chunk_sums(&chunk).unwrap();
        for (x, y) in m.m_kv().as_slice().iter().zip(h_kv.as_slice()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
        for (r, y) in h_k.iter().enumerate() {
            assert_abs_diff_eq!(m.m_k()[r], *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_near_one_approaches_undecayed_sums() {
        let mut rng = SeededRng::new(10);
        let chunk = random_chunk(&mut rng, 6, 4);
        let mut m = MemoryState::new(4, 1.0 - 1e-9).unwrap();
        m.absorb(&chunk).unwrap();
        let (h_kv, _) = chunk_sums(&chunk).unwrap();
        for (x, y) in m.m_kv().as_slice().iter().zip(h_kv.as_slice()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-6);
        }
    }

    #[test]
    fn oldest_frame_weight_shrinks_by_gamma_each_step() {
        // d = 1: after the first absorb of value 1, each later absorb of
        // value 0 multiplies the stored contribution by gamma exactly.
        let gamma = 0.7;
        let mut m = MemoryState::new(1, gamma).unwrap();
        m.absorb(&chunk_1d(&[1.0])).unwrap();
        let mut prev = m.m_kv().get(0, 0);
        for _ in 0..5 {
            m.absorb(&chunk_1d(&[0.0])).unwrap();
            let cur = m.m_kv().get(0, 0);
            assert_abs_diff_eq!(cur / prev, gamma, epsilon = 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn norm_stays_bounded_over_long_stream() {
        let d = 4;
        let gamma = 0.9;
        let mut rng = SeededRng::new(13);
        let mut m = MemoryState::new(d, gamma).unwrap();
        let mut max_frame_norm: f64 = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let chunk = random_chunk(&mut rng, 1, d);
            let phi = feature_map(chunk.k().row(0)).unwrap();
            let v = chunk.v().row(0);
            let mut fro2 = 0.0;
            for p in &phi {
                for x in v {
                    fro2 += (p * x) * (p * x);
                }
            }
            max_frame_norm = max_frame_norm.max(fro2.sqrt());
            m.absorb(&chunk).unwrap();
        }
        let bound = max_frame_norm * gamma * (1.0 - gamma.powi(n)) / (1.0 - gamma);
        let norm = m.m_kv().frobenius_norm();
        assert!(norm.is_finite());
        assert!(
            norm <= bound + 1e-9,
            "norm {norm} exceeded geometric bound {bound}"
        );
        assert_eq!(m.frames_absorbed(), n as u64);
    }

    #[test]
    fn saturated_keys_stay_finite() {
        let mut rng = SeededRng::new(17);
        let d = 6;
        let big = rng.normal_matrix(4, d, 1e3);
        let chunk = FrameChunk::new(
            rng.normal_matrix(4, d, 1e3),
            big,
            rng.normal_matrix(4, d, 1.0),
        )
        .unwrap();
        let out = linear_attention(&chunk).unwrap();
        assert!(out.as_slice().iter().all(|x| x.is_finite()));

        let mut m = MemoryState::new(d, 0.9).unwrap();
        m.absorb(&chunk).unwrap();
        let out2 = memory_guided_attention(&chunk, &m).unwrap();
        assert!(out2.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn within_chunk_output_stays_in_value_hull() {
        let mut rng = SeededRng::new(19);
        for _ in 0..20 {
            let chunk = random_chunk(&mut rng, 5, 3);
            let out = linear_attention(&chunk).unwrap();
            for c in 0..3 {
                let lo = (0..5).map(|j| chunk.v().get(j, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..5)
                    .map(|j| chunk.v().get(j, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                for i in 0..5 {
                    let x = out.get(i, c);
                    assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn serialized_size_is_a_function_of_dimension_only() {
        let mut rng = SeededRng::new(23);
        let d = 5;
        let mut m = MemoryState::new(d, 0.9).unwrap();
        let fresh_len = m.to_bytes().len();
        assert_eq!(fresh_len, MemoryState::serialized_len(d));
        for _ in 0..100 {
            m.absorb(&random_chunk(&mut rng, 3, d)).unwrap();
        }
        assert_eq!(m.to_bytes().len(), fresh_len);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = SeededRng::new(29);
        let mut m = MemoryState::new(4, 0.85).unwrap();
        for _ in 0..7 {
            m.absorb(&random_chunk(&mut rng, 2, 4)).unwrap();
        }
        let back = MemoryState::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.d(), m.d());
        assert_eq!(back.gamma().to_bits(), m.gamma().to_bits());
        assert_eq!(back.frames_absorbed(), m.frames_absorbed());
        for (x, y) in back.m_kv().as_slice().iter().zip(m.m_kv().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in back.m_k().as_slice().iter().zip(m.m_k().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = SeededRng::new(31);
        let mut m = MemoryState::new(3, 0.9).unwrap();
        for _ in 0..5 {
            m.absorb(&random_chunk(&mut rng, 4, 3)).unwrap();
        }
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let rec: MemoryStateRecord = serde_json::from_str(&json).unwrap();
        let back = MemoryState::from_record(&rec).unwrap();
        for (x, y) in back.m_kv().as_slice().iter().zip(m.m_kv().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in back.m_k().as_slice().iter().zip(m.m_k().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn decode_rejects_corrupted_blobs() {
        let m = MemoryState::new(2, 0.9).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(MemoryState::from_bytes(&bytes).is_err());

        let mut truncated = m.to_bytes();
        truncated.pop();
        assert!(MemoryState::from_bytes(&truncated).is_err());

        let mut bad_version = m.to_bytes();
        bad_version[4] = 99;
        assert!(MemoryState::from_bytes(&bad_version).is_err());
    }

    #[test]
    fn constructor_rejects_bad_gamma_and_dimension() {
        assert!(MemoryState::new(0, 0.9).is_err());
        assert!(MemoryState::new(2, 0.0).is_err());
        assert!(MemoryState::new(2, -0.5).is_err());
        assert!(MemoryState::new(2, 1.5).is_err());
        assert!(MemoryState::new(2, f64::NAN).is_err());
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let m = MemoryState::new(3, 0.9).unwrap();
        let mut rng = SeededRng::new(37);
        let chunk = random_chunk(&mut rng, 2, 4);
        assert!(memory_guided_attention(&chunk, &m).is_err());
        let mut m2 = m.clone();
        assert!(m2.absorb(&chunk).is_err());
    }

    #[test]
    fn projections_shape_raw_frames_into_chunks() {
        let mut rng = SeededRng::new(41);
        let proj = AttentionProjections::random(3, 5, 0.5, &mut rng);
        let frames = rng.normal_matrix(4, 5, 1.0);
        let chunk = proj.project(&frames).unwrap();
        assert_eq!(chunk.len(), 4);
        assert_eq!(chunk.d(), 3);
        // Spot-check one projected entry against the direct dot product.
        let expect = dot(proj.w_q.row(2), frames.row(1));
        assert_abs_diff_eq!(chunk.q().get(1, 2), expect, epsilon = 1e-12);
    }

    fn chunk_strategy(n: usize, d: usize) -> impl Strategy<Value = FrameChunk> {
        let cell = -3.0f64..3.0f64;
        (
            prop::collection::vec(cell.clone(), n * d),
            prop::collection::vec(cell.clone(), n * d),
            prop::collection::vec(cell, n * d),
        )
            .prop_map(move |(q, k, v)| {
                FrameChunk::new(
                    DenseMatrix::new(n, d, q).unwrap(),
                    DenseMatrix::new(n, d, k).unwrap(),
                    DenseMatrix::new(n, d, v).unwrap(),
                )
                .unwrap()
            })
    }

    proptest! {
        // Absorbing a run of frames as one chunk or as any split into
        // consecutive chunks must give the same accumulators.
        #[test]
        fn chunk_split_invariance(
            (n, d, split_at) in (2usize..10, 1usize..5).prop_flat_map(|(n, d)| {
                (Just(n), Just(d), 1..n)
            }),
            seed in 0u64..1000,
            gamma in 0.05f64..1.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let chunk = random_chunk(&mut rng, n, d);

            let mut whole = MemoryState::new(d, gamma).unwrap();
            whole.absorb(&chunk).unwrap();

            let mut split = MemoryState::new(d, gamma).unwrap();
            split.absorb(&chunk.slice(0, split_at).unwrap()).unwrap();
            split.absorb(&chunk.slice(split_at, n).unwrap()).unwrap();

            prop_assert_eq!(whole.frames_absorbed(), split.frames_absorbed());
            for (x, y) in whole.m_kv().as_slice().iter().zip(split.m_kv().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
            for (x, y) in whole.m_k().as_slice().iter().zip(split.m_k().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        // Streaming accumulation plus one guided-attention call must match
        // the oracle that recomputes everything from the flattened history.
        #[test]
        fn stream_matches_full_history_oracle(
            n_past in 0usize..4,
            seed in 0u64..1000,
            gamma in 0.1f64..1.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let d = 1 + (seed as usize % 4);
            let past: Vec<FrameChunk> = (0..n_past)
                .map(|_| {
                    let frames = 1 + rng.index(4);
                    random_chunk(&mut rng, frames, d)
                })
                .collect();
            let current = random_chunk(&mut rng, 3, d);

            let mut m = MemoryState::new(d, gamma).unwrap();
            for chunk in &past {
                m.absorb(chunk).unwrap();
            }
            let streamed = memory_guided_attention(&current, &m).unwrap();
            let oracle = full_history_oracle(&past, &current, gamma).unwrap();
            for (x, y) in streamed.as_slice().iter().zip(oracle.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()),
                    "streamed {} vs oracle {}", x, y);
            }
        }

        // The factored attention must agree with explicit pairwise scores.
        #[test]
        fn factored_form_matches_pairwise_oracle(chunk in chunk_strategy(6, 3)) {
            let fast = linear_attention(&chunk).unwrap();
            let slow = pairwise_attention_oracle(&chunk).unwrap();
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            }
        }

        // Guided attention with empty memory reduces to within-chunk attention.
        #[test]
        fn empty_memory_is_transparent(chunk in chunk_strategy(4, 3)) {
            let m = MemoryState::new(3, 0.9).unwrap();
            let guided = memory_guided_attention(&chunk, &m).unwrap();
            let plain = linear_attention(&chunk).unwrap();
            for (x, y) in guided.as_slice().iter().zip(plain.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
