//! Core algorithms for memory-guided clip streaming.
//!
//! The crate has three layers. `numerics` supplies deterministic dense
//! linear algebra and a seeded RNG. On top of that sit the model mechanisms:
//! decayed key/value memory with linear attention (`memory`), rectified-flow
//! noising and training (`flow`, `denoiser`, `training`), cross-modal
//! attention and embedding modulation (`multimodal`). The remaining modules
//! are the surrounding machinery: emotion timelines (`emotion`), the
//! autoregressive clip loop (`generation`), clip curation (`pipeline`), and
//! runnable property checks (`verify`).

// Kernel code walks parallel rows and slices by index on purpose; the
// enumerate() forms clippy suggests read worse next to the sum notation
// they implement.
#![allow(clippy::needless_range_loop)]

pub mod denoiser;
pub mod emotion;
pub mod error;
pub mod flow;
pub mod generation;
pub mod pipeline;
pub mod memory;
pub mod multimodal;
pub mod numerics;
pub mod training;
pub mod verify;

pub use denoiser::{DenoiseInput, DenoiserDims, ForwardCache, ToyDenoiser};
pub use emotion::{
    build_timeline, parse_probability_rows, subsegment_vote, timeline_from_labels,
    timeline_from_probability_rows, window_bounds, AudioTimeline, EmotionLabel, EmotionTimeline,
    LabelMergeTable, DEFAULT_SUBSEGMENT_FRAMES, DEFAULT_WINDOW_SECONDS, EMOTION_LABEL_COUNT,
};
pub use error::{CoreError, Result};
pub use flow::{
    cfg_blend, condition_dropout, euler_step, flow_loss, interpolate, loss_weight, robust_filter,
    timestep_grid, ConditionSet, DiffusionSample, FilterDecision, FlowLoss, LossReduction,
    DEFAULT_CFG_SCALE, DEFAULT_CONDITION_DROP_PROB, DEFAULT_ROBUST_THRESHOLD, DEFAULT_T_START,
};
pub use generation::{
    clip_emotions, denoise_clip, read_clip_dump, read_trace_jsonl, run_stream, simulate,
    write_clip_dump, write_trace_jsonl, AblationMode, ClipConditions, ClipTrace,
    GenerationConfig, HistoryView, StreamOutput, StreamState,
};
pub use memory::{
    feature_map, full_history_oracle, linear_attention, memory_guided_attention,
    pairwise_attention_oracle, AttentionProjections, FrameChunk, MemoryState, MemoryStateRecord,
    DENOM_GUARD,
};
pub use multimodal::{
    cross_attention, multimodal_attention, EmotionEmbeddingTable, EmotionModulator, Modality,
    TokenSequence,
};
pub use pipeline::{
    brute_force_decisions, even_cut_points, expand_bbox, face_gate, fill_missing_scores,
    iqa_gate, manual_gate, outcome_decisions, run_pipeline, scene_trim, sync_gate,
    synthetic_manifest, write_manifest, write_report, BBox, ClipRecord, ClipScorers,
    FaceObservation, Manifest, ManifestLine, OracleDecision, PipelineOutcome, PipelineReport,
    RejectionReason, SyntheticScorers, Thresholds,
};
pub use numerics::{
    layer_norm, matmul, softmax, DenseMatrix, SeededRng, Vector, RNG_ALGORITHM,
};
pub use training::{
    read_curve_csv, train_toy, write_curve_csv, StageSpec, StepRecord, SyntheticTask,
    TrainConfig, TrainRun, TrainSample, TrainState, TOY_ROBUST_THRESHOLD,
};
pub use verify::{
    chunk_invariance_max_error, decay_sign_mutated_update, property_names, run_verification,
    standard_memory_update, write_verify_report, PropertyOutcome, VerifyReport,
};
