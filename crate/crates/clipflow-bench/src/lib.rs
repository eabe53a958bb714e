//! Deterministic input builders shared by the benchmarks, so that runs are
//! comparable across machines and revisions.

use clipflow_core::{FrameChunk, MemoryState, SeededRng};

pub const BENCH_SEED: u64 = 0xBE9C;

/// A random chunk of `frames` frames at width `d`.
pub fn chunk(seed: u64, frames: usize, d: usize) -> FrameChunk {
    let mut rng = SeededRng::new(seed);
    FrameChunk::new(
        rng.normal_matrix(frames, d, 1.0),
        rng.normal_matrix(frames, d, 1.0),
        rng.normal_matrix(frames, d, 1.0),
    )
    .unwrap()
}

/// A history of `chunks` fixed-size chunks plus the current chunk to attend
/// from, as used by the streaming-versus-recompute comparison.
pub fn history(seed: u64, chunks: usize, frames: usize, d: usize) -> (Vec<FrameChunk>, FrameChunk) {
    let past = (0..chunks).map(|i| chunk(seed ^ (i as u64 + 1), frames, d)).collect();
    (past, chunk(seed ^ 0xFFFF, frames, d))
}

/// Memory state with the given history already absorbed.
pub fn absorbed(past: &[FrameChunk], d: usize, gamma: f64) -> MemoryState {
    let mut m = MemoryState::new(d, gamma).unwrap();
    for c in past {
        m.absorb(c).unwrap();
    }
    m
}
