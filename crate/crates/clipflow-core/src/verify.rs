//! Runnable verification: every module's key invariant packaged as a named
//! property with an explicit tolerance, a case count, and a measured error.
//!
//! A property passes iff its worst observed error is at most its tolerance,
//! so a report is machine-checkable: `all_passed` is a fold over exactly
//! that comparison. The chunk-invariance check is parameterized over the
//! memory update so a deliberately broken update (the shipped decay-sign
//! mutation) can demonstrate that the check has teeth.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiseInput, DenoiserDims, ToyDenoiser};
use crate::emotion::{argmax_label, subsegment_vote, EmotionLabel, EMOTION_LABEL_COUNT};
use crate::error::{CoreError, Result};
use crate::flow::{cfg_blend, euler_step, interpolate, loss_weight, robust_filter, FilterDecision};
use crate::generation::{simulate, AblationMode, GenerationConfig};
use crate::memory::{
    full_history_oracle, linear_attention, memory_guided_attention, pairwise_attention_oracle,
    AttentionProjections, FrameChunk, MemoryState,
};
use crate::numerics::SeededRng;
use crate::pipeline::{
    brute_force_decisions, outcome_decisions, run_pipeline, synthetic_manifest, Manifest,
    SyntheticScorers, Thresholds,
};

/// One property's measured result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyOutcome {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases_run: usize,
    pub wall_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyReport {
    pub outcomes: Vec<PropertyOutcome>,
    pub all_passed: bool,
}

impl VerifyReport {
    /// One line per property, fixed-width enough to scan by eye.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "[{status}] {:<44} max_error {:>12.3e}  tol {:>9.1e}  cases {:>5}  {:>8.1} ms\n",
                o.name, o.max_error, o.tolerance, o.cases_run, o.wall_time_ms
            ));
            if let Some(note) = &o.note {
                out.push_str(&format!("       {note}\n"));
            }
        }
        let verdict = if self.all_passed { "all passed" } else { "FAILURES PRESENT" };
        out.push_str(&format!("{} properties, {verdict}\n", self.outcomes.len()));
        out
    }
}

pub fn write_verify_report(path: impl AsRef<Path>, report: &VerifyReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Chunk invariance, parameterized over the update
// ---------------------------------------------------------------------------

/// The genuine update: decay the old state, add the chunk.
pub fn standard_memory_update(state: &MemoryState, chunk: &FrameChunk) -> Result<MemoryState> {
    let mut next = state.clone();
    next.absorb(chunk)?;
    Ok(next)
}

/// A deliberately broken update with the decay exponent's sign flipped:
/// old contents are amplified by gamma^-n instead of damped by gamma^n.
/// Exists so tests can prove the invariance check catches real defects.
pub fn decay_sign_mutated_update(state: &MemoryState, chunk: &FrameChunk) -> Result<MemoryState> {
    let mut fresh = MemoryState::new(state.d(), state.gamma())?;
    fresh.absorb(chunk)?;
    let fresh = fresh.to_record();
    let mut rec = state.to_record();
    let wrong_scale = state.gamma().powi(-(chunk.len() as i32));
    for (dst, add) in rec.m_kv.iter_mut().zip(fresh.m_kv) {
        *dst = *dst * wrong_scale + add;
    }
    for (dst, add) in rec.m_k.iter_mut().zip(fresh.m_k) {
        *dst = *dst * wrong_scale + add;
    }
    rec.frames_absorbed += chunk.len() as u64;
    MemoryState::from_record(&rec)
}

fn random_chunk(rng: &mut SeededRng, n: usize, d: usize) -> Result<FrameChunk> {
    FrameChunk::new(
        rng.normal_matrix(n, d, 1.0),
        rng.normal_matrix(n, d, 1.0),
        rng.normal_matrix(n, d, 1.0),
    )
}

fn state_distance(a: &MemoryState, b: &MemoryState) -> f64 {
    let kv = a
        .m_kv()
        .as_slice()
        .iter()
        .zip(b.m_kv().as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let k = a
        .m_k()
        .as_slice()
        .iter()
        .zip(b.m_k().as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    kv.max(k)
}

/// Absorb the same frame stream whole and in random chunkings; the final
/// states must agree for any correct update. Returns the worst disagreement
/// across all cases.
pub fn chunk_invariance_max_error(
    update: &dyn Fn(&MemoryState, &FrameChunk) -> Result<MemoryState>,
    seed: u64,
    cases: usize,
) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 2 + rng.index(4);
        let n = 4 + rng.index(8);
        let gamma = 0.5 + 0.45 * rng.uniform();
        let stream = random_chunk(&mut rng, n, d)?;

        let whole = update(&MemoryState::new(d, gamma)?, &stream)?;

        let mut split = MemoryState::new(d, gamma)?;
        let mut start = 0;
        while start < n {
            let len = 1 + rng.index(n - start);
            split = update(&split, &stream.slice(start, start + len)?)?;
            start += len;
        }

        let mut framewise = MemoryState::new(d, gamma)?;
        for i in 0..n {
            framewise = update(&framewise, &stream.slice(i, i + 1)?)?;
        }

        worst = worst.max(state_distance(&whole, &split));
        worst = worst.max(state_distance(&whole, &framewise));
    }
    Ok((worst, cases))
}

// ---------------------------------------------------------------------------
// The individual properties
// ---------------------------------------------------------------------------

fn prop_chunk_invariance(seed: u64) -> Result<(f64, usize)> {
    chunk_invariance_max_error(&standard_memory_update, seed, 60)
}

fn prop_stream_matches_full_history(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 40;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 2 + rng.index(4);
        let gamma = 0.5 + 0.45 * rng.uniform();
        let n_past = rng.index(4);
        let mut past = Vec::with_capacity(n_past);
        for _ in 0..n_past {
            let len = 2 + rng.index(5);
            past.push(random_chunk(&mut rng, len, d)?);
        }
        let current_len = 2 + rng.index(5);
        let current = random_chunk(&mut rng, current_len, d)?;

        let mut memory = MemoryState::new(d, gamma)?;
        for chunk in &past {
            memory.absorb(chunk)?;
        }
        let streamed = memory_guided_attention(&current, &memory)?;
        let oracle = full_history_oracle(&past, &current, gamma)?;
        let err = streamed
            .as_slice()
            .iter()
            .zip(oracle.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(err);
    }
    Ok((worst, cases))
}

fn prop_linear_attention_matches_pairwise(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 40;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 2 + rng.index(5);
        let n = 2 + rng.index(8);
        let chunk = random_chunk(&mut rng, n, d)?;
        let fast = linear_attention(&chunk)?;
        let slow = pairwise_attention_oracle(&chunk)?;
        let err = fast
            .as_slice()
            .iter()
            .zip(slow.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(err);
    }
    Ok((worst, cases))
}

fn prop_memory_serialization_round_trip(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 20;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 1 + rng.index(6);
        let mut state = MemoryState::new(d, 0.5 + 0.45 * rng.uniform())?;
        let n = 1 + rng.index(6);
        state.absorb(&random_chunk(&mut rng, n, d)?)?;
        let back = MemoryState::from_bytes(&state.to_bytes())?;
        worst = worst.max(state_distance(&state, &back));
        if back.frames_absorbed() != state.frames_absorbed() || back.gamma() != state.gamma() {
            worst = worst.max(1.0);
        }
        let rec = MemoryState::from_record(&state.to_record())?;
        worst = worst.max(state_distance(&state, &rec));
    }
    Ok((worst, cases))
}

fn prop_interpolation_endpoints(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 30;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + rng.index(16);
        let z0 = rng.normal_matrix(2, n, 1.0);
        let eps = rng.normal_matrix(2, n, 1.0);
        let at0 = interpolate(&z0, &eps, 0.0)?;
        let at1 = interpolate(&z0, &eps, 1.0)?;
        for i in 0..2 * n {
            worst = worst.max((at0.as_slice()[i] - z0.as_slice()[i]).abs());
            worst = worst.max((at1.as_slice()[i] - eps.as_slice()[i]).abs());
        }
    }
    Ok((worst, cases))
}

fn prop_loss_weight_identity(_seed: u64) -> Result<(f64, usize)> {
    let mut worst = 0.0f64;
    let cases = 999;
    for k in 1..=cases {
        let t = k as f64 / 1000.0;
        worst = worst.max((loss_weight(t)? * (1.0 - t) * (1.0 - t) - 1.0).abs());
    }
    Ok((worst, cases))
}

fn prop_cfg_identities(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 30;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + rng.index(12);
        let cond: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let uncond: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let scale = 5.0 * rng.standard_normal();

        let zero = cfg_blend(&cond, &uncond, 0.0)?;
        let same = cfg_blend(&cond, &cond, scale)?;
        let blended = cfg_blend(&cond, &uncond, scale)?;
        for i in 0..n {
            worst = worst.max((zero[i] - cond[i]).abs());
            worst = worst.max((same[i] - cond[i]).abs());
            // Guided output is the conditional branch pushed along the
            // condition direction.
            let expected = cond[i] + scale * (cond[i] - uncond[i]);
            worst = worst.max((blended[i] - expected).abs());
        }
    }
    Ok((worst, cases))
}

fn prop_euler_follows_straight_path(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 30;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + rng.index(12);
        let z0 = rng.normal_matrix(1, n, 1.0);
        let eps = rng.normal_matrix(1, n, 1.0);
        let t = 0.1 + 0.8 * rng.uniform();
        let t_next = t * rng.uniform();
        let z_t = interpolate(&z0, &eps, t)?;
        // With the exact noise, one Euler step of any size stays on the
        // straight interpolation path.
        let stepped = euler_step(z_t.as_slice(), eps.as_slice(), t, t_next)?;
        let expected = interpolate(&z0, &eps, t_next)?;
        for i in 0..n {
            worst = worst.max((stepped[i] - expected.as_slice()[i]).abs());
        }
    }
    Ok((worst, cases))
}

fn prop_denoiser_gradient_check(seed: u64) -> Result<(f64, usize)> {
    let dims = DenoiserDims { d: 3, d_audio: 2, d_emotion: 2, mod_hidden: 2, hidden: 4 };
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for point in 0..2 {
        let net = ToyDenoiser::new_random(dims, &mut rng);
        let frames = 3;
        let z_t = rng.normal_matrix(frames, dims.d, 1.0);
        let audio = rng.normal_matrix(frames, dims.d_audio, 1.0);
        let reference: Vec<f64> = (0..dims.d).map(|_| rng.standard_normal()).collect();
        let mut memory = MemoryState::new(dims.d, 0.9)?;
        memory.absorb(&net.attention_projections()?.project(&rng.normal_matrix(4, dims.d, 1.0))?)?;
        let emotion = EmotionLabel::ALL[point % EMOTION_LABEL_COUNT];
        let g_eps = rng.normal_matrix(frames, dims.d, 1.0);

        let input = DenoiseInput {
            z_t: &z_t,
            t: 0.4,
            audio: Some(&audio),
            emotion: Some(emotion),
            reference: Some(&reference),
            memory: Some(&memory),
            extra_window: None,
        };
        let loss = |net: &ToyDenoiser| -> Result<f64> {
            let (eps_hat, _) = net.forward(&input)?;
            Ok(eps_hat
                .as_slice()
                .iter()
                .zip(g_eps.as_slice())
                .map(|(a, b)| a * b)
                .sum())
        };

        let (_, cache) = net.forward(&input)?;
        let analytic = net.backward(&input, &cache, &g_eps)?;

        let h = 1e-5;
        let mut probe = net.clone();
        for i in 0..analytic.len() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.params_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max((analytic[i] - fd).abs() / denom);
            cases += 1;
        }
    }
    Ok((worst, cases))
}

fn prop_vote_matches_hand_count(seed: u64) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(seed);
    let cases = 200;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + rng.index(40);
        let labels: Vec<EmotionLabel> =
            (0..n).map(|_| EmotionLabel::ALL[rng.index(EMOTION_LABEL_COUNT)]).collect();
        let voted = subsegment_vote(&labels)?;
        // Hand count: scan for the most frequent label, first index wins.
        let mut best = labels[0];
        let mut best_count = 0usize;
        for candidate in EmotionLabel::ALL {
            let count = labels.iter().filter(|l| **l == candidate).count();
            if count > best_count {
                best = candidate;
                best_count = count;
            }
        }
        if voted != best {
            worst = worst.max(1.0);
        }
        // Probability rows reduce to the same argmax convention.
        let mut probs = vec![0.0f64; EMOTION_LABEL_COUNT];
        for l in &labels {
            probs[l.index()] += 1.0 / n as f64;
        }
        let rest = 1.0 - probs.iter().sum::<f64>();
        probs[0] += rest.max(0.0);
        if argmax_label(&probs)? != subsegment_vote_by_probs(&probs)? {
            worst = worst.max(1.0);
        }
    }
    Ok((worst, cases))
}

fn subsegment_vote_by_probs(probs: &[f64]) -> Result<EmotionLabel> {
    let mut best = 0usize;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    EmotionLabel::from_index(best)
}

fn prop_pipeline_matches_oracle(seed: u64) -> Result<(f64, usize)> {
    let text = synthetic_manifest(100, seed);
    let manifest = Manifest::parse(&text);
    let scorers = SyntheticScorers::new(seed ^ 0xABCD);
    let thresholds = Thresholds::default();
    let outcome = run_pipeline(&manifest, &scorers, &thresholds)?;
    let got = outcome_decisions(&outcome);
    let want = brute_force_decisions(&manifest, &scorers, &thresholds);
    let mismatches = if got.len() != want.len() {
        got.len().abs_diff(want.len()) + 1
    } else {
        got.iter().zip(&want).filter(|(a, b)| a != b).count()
    };
    Ok((mismatches as f64, got.len()))
}

fn prop_robust_filter_boundaries(_seed: u64) -> Result<(f64, usize)> {
    let threshold = 10.0;
    let mut violations = 0.0f64;
    let checks: [(f64, FilterDecision); 5] = [
        (9.9, FilterDecision::Keep),
        (10.0, FilterDecision::Keep),
        (10.1, FilterDecision::SkipOutlier),
        (f64::NAN, FilterDecision::SkipNonFinite),
        (f64::INFINITY, FilterDecision::SkipNonFinite),
    ];
    for (loss, want) in checks {
        if robust_filter(loss, threshold) != want {
            violations += 1.0;
        }
    }
    Ok((violations, checks.len()))
}

fn prop_first_clip_ablation_identity(seed: u64) -> Result<(f64, usize)> {
    let base = GenerationConfig {
        dims: DenoiserDims { d: 3, d_audio: 2, d_emotion: 2, mod_hidden: 2, hidden: 4 },
        clips: 1,
        clip_len: 4,
        denoise_steps: 4,
        seed,
        ..GenerationConfig::default()
    };
    let full = simulate(&base, None)?;
    let off = simulate(&GenerationConfig { ablation: AblationMode::MemoryOff, ..base.clone() }, None)?;
    let window =
        simulate(&GenerationConfig { ablation: AblationMode::LastClipWindow, ..base }, None)?;
    let mut worst = 0.0f64;
    for (a, b) in [(&full, &off), (&full, &window)] {
        for (x, y) in a.clips[0].as_slice().iter().zip(b.clips[0].as_slice()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst, 2))
}

fn prop_attention_projection_consistency(seed: u64) -> Result<(f64, usize)> {
    // Projections used by the streaming loop match a hand-rolled x W^T per
    // frame, so memory sees exactly what attention sees.
    let mut rng = SeededRng::new(seed);
    let cases = 20;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d_in = 2 + rng.index(4);
        let d_out = 2 + rng.index(4);
        let w_q = rng.normal_matrix(d_out, d_in, 0.5);
        let w_k = rng.normal_matrix(d_out, d_in, 0.5);
        let w_v = rng.normal_matrix(d_out, d_in, 0.5);
        let proj = AttentionProjections::new(w_q.clone(), w_k.clone(), w_v.clone())?;
        let frames = rng.normal_matrix(3, d_in, 1.0);
        let chunk = proj.project(&frames)?;
        for (weights, got) in [(&w_q, chunk.q()), (&w_k, chunk.k()), (&w_v, chunk.v())] {
            for i in 0..3 {
                for j in 0..d_out {
                    let mut want = 0.0;
                    for l in 0..d_in {
                        want += weights.get(j, l) * frames.get(i, l);
                    }
                    worst = worst.max((got.get(i, j) - want).abs());
                }
            }
        }
    }
    Ok((worst, cases))
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

type PropertyFn = fn(u64) -> Result<(f64, usize)>;

/// Names of every shipped property, in run order.
pub fn property_names() -> Vec<&'static str> {
    property_table().into_iter().map(|(name, _, _)| name).collect()
}

fn property_table() -> Vec<(&'static str, f64, PropertyFn)> {
    vec![
        ("memory.chunk_invariance", 1e-9, prop_chunk_invariance),
        ("memory.stream_matches_full_history", 1e-9, prop_stream_matches_full_history),
        ("memory.linear_attention_matches_pairwise", 1e-11, prop_linear_attention_matches_pairwise),
        ("memory.serialization_round_trip", 0.0, prop_memory_serialization_round_trip),
        ("memory.projection_consistency", 1e-12, prop_attention_projection_consistency),
        ("flow.interpolation_endpoints", 0.0, prop_interpolation_endpoints),
        ("flow.loss_weight_identity", 1e-12, prop_loss_weight_identity),
        ("flow.cfg_identities", 1e-12, prop_cfg_identities),
        ("flow.euler_follows_straight_path", 1e-9, prop_euler_follows_straight_path),
        ("flow.robust_filter_boundaries", 0.0, prop_robust_filter_boundaries),
        (
            "denoiser.gradient_matches_finite_differences",
            1e-4,
            prop_denoiser_gradient_check,
        ),
        ("emotion.vote_matches_hand_count", 0.0, prop_vote_matches_hand_count),
        ("pipeline.matches_brute_force", 0.0, prop_pipeline_matches_oracle),
        ("generation.first_clip_ablation_identity", 0.0, prop_first_clip_ablation_identity),
    ]
}

/// Run every property whose name contains `filter` (all when empty),
/// seeding each one identically for reproducible reports.
pub fn run_verification(filter: Option<&str>, seed: u64) -> VerifyReport {
    let mut outcomes = Vec::new();
    for (name, tolerance, body) in property_table() {
        if let Some(f) = filter {
            if !name.contains(f) {
                continue;
            }
        }
        let start = Instant::now();
        let (max_error, cases_run, note) = match body(seed) {
            Ok((err, cases)) => (err, cases, None),
            Err(e) => (f64::INFINITY, 0, Some(e.to_string())),
        };
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        outcomes.push(PropertyOutcome {
            name: name.to_string(),
            passed: max_error <= tolerance,
            max_error,
            tolerance,
            cases_run,
            wall_time_ms,
            note,
        });
    }
    outcomes.sort_by(|a, b| a.name.cmp(&b.name));
    let all_passed = !outcomes.is_empty() && outcomes.iter().all(|o| o.passed);
    VerifyReport { outcomes, all_passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run_verification(None, 2024);
        assert!(report.all_passed, "{}", report.summary());
        assert_eq!(report.outcomes.len(), property_table().len());
        for o in &report.outcomes {
            assert!(o.cases_run > 0, "{} ran no cases", o.name);
        }
    }

    #[test]
    fn decay_sign_mutation_is_caught() {
        let (broken_err, _) =
            chunk_invariance_max_error(&decay_sign_mutated_update, 7, 30).unwrap();
        let (honest_err, _) = chunk_invariance_max_error(&standard_memory_update, 7, 30).unwrap();
        assert!(
            broken_err > 1e-3,
            "mutated update slipped through with error {broken_err}"
        );
        assert!(honest_err <= 1e-9);
    }

    #[test]
    fn filter_selects_by_substring() {
        let memory_only = run_verification(Some("memory"), 2024);
        assert!(!memory_only.outcomes.is_empty());
        assert!(memory_only.outcomes.iter().all(|o| o.name.contains("memory")));
        let none = run_verification(Some("no-such-property"), 2024);
        assert!(none.outcomes.is_empty());
        assert!(!none.all_passed);
    }

    #[test]
    fn report_round_trips_as_json() {
        let report = run_verification(Some("flow"), 7);
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: VerifyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let summary = report.summary();
        assert!(summary.contains("flow.cfg_identities"));
        assert!(summary.contains("PASS"));
    }

    #[test]
    fn failure_is_reflected_in_the_report() {
        // A report built from a failing measurement must not claim success;
        // simulate one by checking the pass rule directly.
        let outcome = PropertyOutcome {
            name: "synthetic".into(),
            passed: 2.0 <= 1.0,
            max_error: 2.0,
            tolerance: 1.0,
            cases_run: 1,
            wall_time_ms: 0.0,
            note: None,
        };
        assert!(!outcome.passed);
        let report = VerifyReport { all_passed: false, outcomes: vec![outcome] };
        assert!(report.summary().contains("FAIL"));
    }
}
