//! Autoregressive clip streaming: denoise a clip, fold it into the decayed
//! memory, repeat.
//!
//! Each clip starts from fresh noise and runs a fixed Euler schedule with
//! classifier-free guidance; the unconditional branch drops all four
//! conditions, so its history view is an empty memory. Once a clip is
//! finished it is projected with the network's own key/value maps and
//! absorbed into the memory state that guides every later clip. Ablations
//! replace that memory with nothing at all, or with a sliding window of the
//! previous clip's raw frames.
//!
//! The stream also tracks the largest single-frame update norm it has ever
//! absorbed. Since every frame's contribution is a rank-one matrix scaled
//! by a power of the decay, the memory norm can never exceed the geometric
//! series of that maximum, and [`StreamState::memory_norm_bound`] exposes
//! the bound so tests and traces can check it at runtime.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiseInput, DenoiserDims, ToyDenoiser};
use crate::emotion::{EmotionLabel, EmotionTimeline};
use crate::error::{CoreError, Result};
use crate::flow::{cfg_blend, timestep_grid, euler_step, DEFAULT_CFG_SCALE, DEFAULT_T_START};
use crate::memory::MemoryState;
use crate::numerics::{DenseMatrix, SeededRng};

pub const DEFAULT_FPS: u32 = 30;
pub const DEFAULT_CLIP_LEN: usize = 16;
pub const DEFAULT_DENOISE_STEPS: usize = 20;
pub const DEFAULT_MEMORY_GAMMA: f64 = 0.9;

/// How the stream presents history to the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Decayed memory over everything generated so far.
    #[default]
    Full,
    /// No history at all.
    MemoryOff,
    /// Only the previous clip, as raw frames widened into attention.
    LastClipWindow,
}

/// Settings for one streaming run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub dims: DenoiserDims,
    pub clips: usize,
    pub clip_len: usize,
    pub fps: u32,
    pub gamma: f64,
    pub cfg_scale: f64,
    pub denoise_steps: usize,
    pub t_start: f64,
    pub seed: u64,
    pub ablation: AblationMode,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            dims: DenoiserDims::default(),
            clips: 8,
            clip_len: DEFAULT_CLIP_LEN,
            fps: DEFAULT_FPS,
            gamma: DEFAULT_MEMORY_GAMMA,
            cfg_scale: DEFAULT_CFG_SCALE,
            denoise_steps: DEFAULT_DENOISE_STEPS,
            t_start: DEFAULT_T_START,
            seed: 11,
            ablation: AblationMode::Full,
        }
    }
}

impl GenerationConfig {
    fn validate(&self) -> Result<()> {
        if self.clips == 0 {
            return Err(CoreError::EmptyInput { context: "GenerationConfig clips" });
        }
        if self.clip_len == 0 {
            return Err(CoreError::EmptyInput { context: "GenerationConfig clip_len" });
        }
        if self.fps == 0 {
            return Err(CoreError::EmptyInput { context: "GenerationConfig fps" });
        }
        if self.denoise_steps == 0 {
            return Err(CoreError::EmptyInput { context: "GenerationConfig denoise_steps" });
        }
        if !self.cfg_scale.is_finite() {
            return Err(CoreError::NonFinite { context: "GenerationConfig cfg_scale" });
        }
        // gamma and t_start ranges are enforced by the memory state and the
        // timestep grid they feed.
        Ok(())
    }
}

/// Mutable state carried across clips.
#[derive(Debug, Clone)]
pub struct StreamState {
    memory: MemoryState,
    last_clip: Option<DenseMatrix>,
    clips_done: usize,
    max_frame_update_norm: f64,
}

impl StreamState {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        Ok(Self {
            memory: MemoryState::new(d, gamma)?,
            last_clip: None,
            clips_done: 0,
            max_frame_update_norm: 0.0,
        })
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn clips_done(&self) -> usize {
        self.clips_done
    }

    pub fn last_clip(&self) -> Option<&DenseMatrix> {
        self.last_clip.as_ref()
    }

    /// Largest rank-one update norm absorbed so far.
    pub fn max_frame_update_norm(&self) -> f64 {
        self.max_frame_update_norm
    }

    /// Upper bound on the memory matrix norm implied by decay: the largest
    /// single-frame update times the geometric series over ages.
    pub fn memory_norm_bound(&self) -> f64 {
        let gamma = self.memory.gamma();
        let n = self.memory.frames_absorbed() as f64;
        let series = if gamma < 1.0 {
            (1.0 - gamma.powf(n)) / (1.0 - gamma)
        } else {
            n
        };
        self.max_frame_update_norm * series
    }

    /// Fold a finished clip into the stream's history.
    pub fn advance(&mut self, net: &ToyDenoiser, clip: &DenseMatrix) -> Result<()> {
        let chunk = net.attention_projections()?.project(clip)?;
        for i in 0..chunk.len() {
            let phi = crate::memory::feature_map(chunk.k().row(i))?;
            let phi_norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v_norm = chunk.v().row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            // A rank-one matrix's Frobenius norm is the product of the
            // factor norms.
            self.max_frame_update_norm = self.max_frame_update_norm.max(phi_norm * v_norm);
        }
        self.memory.absorb(&chunk)?;
        self.last_clip = Some(clip.clone());
        self.clips_done += 1;
        Ok(())
    }
}

/// History offered to a single denoising pass.
#[derive(Debug, Clone, Copy)]
pub enum HistoryView<'a> {
    Empty,
    Memory(&'a MemoryState),
    Window(&'a DenseMatrix),
}

/// Conditions for one clip.
#[derive(Debug, Clone, Copy)]
pub struct ClipConditions<'a> {
    pub audio: &'a DenseMatrix,
    pub emotion: EmotionLabel,
    pub reference: &'a [f64],
}

/// Run the guided Euler schedule for one clip, starting from the given
/// noise. The conditional branch sees everything; the unconditional branch
/// sees nothing, history included.
pub fn denoise_clip(
    net: &ToyDenoiser,
    noise: &DenseMatrix,
    conditions: &ClipConditions,
    history: HistoryView,
    cfg_scale: f64,
    t_start: f64,
    steps: usize,
) -> Result<DenseMatrix> {
    let grid = timestep_grid(t_start, steps)?;
    let mut z = noise.clone();
    for (step, pair) in grid.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let cond_input = DenoiseInput {
            z_t: &z,
            t,
            audio: Some(conditions.audio),
            emotion: Some(conditions.emotion),
            reference: Some(conditions.reference),
            memory: match history {
                HistoryView::Memory(m) => Some(m),
                _ => None,
            },
            extra_window: match history {
                HistoryView::Window(w) => Some(w),
                _ => None,
            },
        };
        let (eps_cond, _) = net.forward(&cond_input)?;
        let (eps_uncond, _) = net.forward(&DenoiseInput::unconditional(&z, t))?;
        let blended = cfg_blend(eps_cond.as_slice(), eps_uncond.as_slice(), cfg_scale)?;
        let next = euler_step(z.as_slice(), &blended, t, t_next)?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFiniteDenoise { step, t });
        }
        z = DenseMatrix::new(z.rows(), z.cols(), next)?;
    }
    Ok(z)
}

/// One line of the stream trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipTrace {
    pub clip_index: usize,
    pub emotion: EmotionLabel,
    /// Norm of the memory matrix after this clip was absorbed; zero when
    /// the memory is ablated away.
    pub memory_frobenius_norm: f64,
    /// Mean absolute value over the generated clip's entries.
    pub mean_abs_feature: f64,
    pub seed: u64,
}

/// Everything a stream run produces.
#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub clips: Vec<DenseMatrix>,
    pub traces: Vec<ClipTrace>,
    pub state: StreamState,
}

/// Generate a stream of clips.
///
/// `audio` holds `clips * clip_len` rows of audio features; `emotions` one
/// label per clip; `reference` a single identity frame. Noise for clip `i`
/// is drawn before the clip is denoised, so equal seeds give bit-identical
/// streams regardless of how long they run.
pub fn run_stream(
    net: &ToyDenoiser,
    cfg: &GenerationConfig,
    audio: &DenseMatrix,
    emotions: &[EmotionLabel],
    reference: &[f64],
) -> Result<StreamOutput> {
    cfg.validate()?;
    if net.dims() != &cfg.dims {
        return Err(CoreError::ShapeMismatch {
            context: "run_stream",
            detail: format!("network dims {:?}, config dims {:?}", net.dims(), cfg.dims),
        });
    }
    let want_rows = cfg.clips * cfg.clip_len;
    if audio.rows() != want_rows || audio.cols() != cfg.dims.d_audio {
        return Err(CoreError::ShapeMismatch {
            context: "run_stream audio",
            detail: format!(
                "audio {}x{}, want {}x{}",
                audio.rows(),
                audio.cols(),
                want_rows,
                cfg.dims.d_audio
            ),
        });
    }
    if emotions.len() != cfg.clips {
        return Err(CoreError::DimMismatch {
            context: "run_stream emotions",
            expected: cfg.clips,
            got: emotions.len(),
        });
    }

    let mut rng = SeededRng::new(cfg.seed);
    let mut state = StreamState::new(cfg.dims.d, cfg.gamma)?;
    let mut clips = Vec::with_capacity(cfg.clips);
    let mut traces = Vec::with_capacity(cfg.clips);

    for clip_index in 0..cfg.clips {
        let start = clip_index * cfg.clip_len;
        let audio_rows: Vec<f64> = (start..start + cfg.clip_len)
            .flat_map(|r| audio.row(r).to_vec())
            .collect();
        let clip_audio = DenseMatrix::new(cfg.clip_len, cfg.dims.d_audio, audio_rows)?;
        let noise = rng.normal_matrix(cfg.clip_len, cfg.dims.d, 1.0);

        let history = match cfg.ablation {
            AblationMode::Full => HistoryView::Memory(state.memory()),
            AblationMode::MemoryOff => HistoryView::Empty,
            AblationMode::LastClipWindow => match state.last_clip() {
                Some(w) => HistoryView::Window(w),
                None => HistoryView::Empty,
            },
        };
        let conditions = ClipConditions {
            audio: &clip_audio,
            emotion: emotions[clip_index],
            reference,
        };
        let clip = denoise_clip(
            net,
            &noise,
            &conditions,
            history,
            cfg.cfg_scale,
            cfg.t_start,
            cfg.denoise_steps,
        )?;

        match cfg.ablation {
            AblationMode::Full => state.advance(net, &clip)?,
            // Ablated streams still track progress and the last clip, but
            // leave the memory untouched.
            AblationMode::MemoryOff | AblationMode::LastClipWindow => {
                state.last_clip = Some(clip.clone());
                state.clips_done += 1;
            }
        }

        let mean_abs = clip.as_slice().iter().map(|x| x.abs()).sum::<f64>()
            / (clip.rows() * clip.cols()) as f64;
        traces.push(ClipTrace {
            clip_index,
            emotion: emotions[clip_index],
            memory_frobenius_norm: state.memory().m_kv().frobenius_norm(),
            mean_abs_feature: mean_abs,
            seed: cfg.seed,
        });
        clips.push(clip);
    }

    Ok(StreamOutput { clips, traces, state })
}

/// Per-clip emotion labels for a stream, one per clip, read from a
/// timeline's frame labels at each clip's first frame.
pub fn clip_emotions(
    timeline: &EmotionTimeline,
    clips: usize,
    clip_len: usize,
) -> Result<Vec<EmotionLabel>> {
    let need = clips * clip_len;
    if timeline.frame_count() < need {
        return Err(CoreError::TimelineMismatch {
            detail: format!(
                "timeline has {} frames, stream needs {need}",
                timeline.frame_count()
            ),
        });
    }
    Ok((0..clips).map(|i| timeline.per_frame_labels[i * clip_len]).collect())
}

/// A self-contained demonstration stream: random network, synthetic audio,
/// a fixed or cycling emotion schedule.
pub fn simulate(cfg: &GenerationConfig, emotion: Option<EmotionLabel>) -> Result<StreamOutput> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed ^ 0xC11F_F10A_D335_1000);
    let net = ToyDenoiser::new_random(cfg.dims, &mut rng);
    let audio = rng.normal_matrix(cfg.clips * cfg.clip_len, cfg.dims.d_audio, 1.0);
    let reference: Vec<f64> = (0..cfg.dims.d).map(|_| rng.standard_normal().tanh()).collect();
    let emotions: Vec<EmotionLabel> = (0..cfg.clips)
        .map(|i| match emotion {
            Some(label) => label,
            None => EmotionLabel::ALL[i % EmotionLabel::ALL.len()],
        })
        .collect();
    run_stream(&net, cfg, &audio, &emotions, &reference)
}

// ---------------------------------------------------------------------------
// Trace and clip files
// ---------------------------------------------------------------------------

/// Write one JSON object per line.
pub fn write_trace_jsonl(path: impl AsRef<Path>, traces: &[ClipTrace]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes()).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_trace_jsonl(path: impl AsRef<Path>) -> Result<Vec<ClipTrace>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut traces = Vec::new();
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let trace: ClipTrace = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

const CLIP_DUMP_MAGIC: &[u8; 4] = b"CLPD";
const CLIP_DUMP_VERSION: u32 = 1;

/// Binary clip dump: magic, version, counts, then row-major doubles, all
/// little-endian.
pub fn write_clip_dump(path: impl AsRef<Path>, clips: &[DenseMatrix]) -> Result<()> {
    let path = path.as_ref();
    if clips.is_empty() {
        return Err(CoreError::EmptyInput { context: "write_clip_dump" });
    }
    let (rows, cols) = (clips[0].rows(), clips[0].cols());
    for c in clips {
        if c.rows() != rows || c.cols() != cols {
            return Err(CoreError::ShapeMismatch {
                context: "write_clip_dump",
                detail: format!("{}x{} clip in a {rows}x{cols} dump", c.rows(), c.cols()),
            });
        }
    }
    let mut bytes = Vec::with_capacity(32 + clips.len() * rows * cols * 8);
    bytes.extend_from_slice(CLIP_DUMP_MAGIC);
    bytes.extend_from_slice(&CLIP_DUMP_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(clips.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(rows as u64).to_le_bytes());
    bytes.extend_from_slice(&(cols as u64).to_le_bytes());
    for c in clips {
        for x in c.as_slice() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    f.write_all(&bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_clip_dump(path: impl AsRef<Path>) -> Result<Vec<DenseMatrix>> {
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let take = |off: usize, len: usize| -> Result<&[u8]> {
        bytes.get(off..off + len).ok_or_else(|| CoreError::Decode {
            detail: format!("clip dump truncated at byte {off}"),
        })
    };
    if take(0, 4)? != CLIP_DUMP_MAGIC {
        return Err(CoreError::Decode { detail: "bad clip dump magic".into() });
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != CLIP_DUMP_VERSION {
        return Err(CoreError::Decode { detail: format!("unsupported clip dump version {version}") });
    }
    let read_u64 = |off: usize| -> Result<u64> {
        Ok(u64::from_le_bytes(take(off, 8)?.try_into().unwrap()))
    };
    let n_clips = read_u64(8)? as usize;
    let rows = read_u64(16)? as usize;
    let cols = read_u64(24)? as usize;
    let want = 32 + n_clips * rows * cols * 8;
    if bytes.len() != want {
        return Err(CoreError::Decode {
            detail: format!("clip dump is {} bytes, want {want}", bytes.len()),
        });
    }
    let mut clips = Vec::with_capacity(n_clips);
    let mut off = 32;
    for _ in 0..n_clips {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(off, 8)?.try_into().unwrap()));
            off += 8;
        }
        clips.push(DenseMatrix::new(rows, cols, data)?);
    }
    Ok(clips)
}
