//! Synthetic workload generation: random KV tensors with planted
//! query-aligned spans (a needle-in-a-haystack analogue), matching token
//! streams with delimiters at span edges, random causal attention maps,
//! and annotated corpora for the boundary-reversal study.

use std::collections::BTreeMap;

use crate::rng::{seeded_rng, SeededRng};
use crate::segment::{BoundarySide, SegmentConfig};
use crate::types::{AttentionTensor, DelimiterTable, KvTensor, TokenSequence};

/// Token id used for planted boundary delimiters in passkey streams.
pub const PASSKEY_DELIMITER_ID: u32 = 7;
/// Filler token ids are drawn from this range and never collide with
/// delimiter ids.
pub const FILLER_ID_BASE: u32 = 1000;
const FILLER_ID_COUNT: u32 = 64;

/// One query-aligned span to hide in the filler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpan {
    /// Relative position of the span start in `[0, 1]`.
    pub depth: f64,
    /// Alignment strength `c`: planted keys are `c * q / |q|` plus small
    /// noise, so dense attention concentrates on them when `c` is large.
    pub strength: f64,
    /// Span length in tokens.
    pub len: usize,
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seq_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub spans: Vec<PlantedSpan>,
    pub seed: u64,
}

/// A generated workload: KV tensors, per-head queries, the planted token
/// indices, and a token stream with delimiters at the span edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub kv: KvTensor,
    /// One query per head.
    pub queries: Vec<Vec<f64>>,
    /// Ascending indices of all planted tokens.
    pub planted: Vec<usize>,
    pub tokens: TokenSequence,
}

/// Table that makes the planted delimiters maximally attractive to the
/// segmenter.
pub fn passkey_table() -> DelimiterTable {
    DelimiterTable::new(BTreeMap::from([(PASSKEY_DELIMITER_ID, 1.0)])).unwrap()
}

/// Generates filler keys/values `~ N(0, I)` and, for every planted span,
/// keys aligned to each head's query. Deterministic in the seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> SyntheticInstance {
    let mut rng = seeded_rng(spec.seed);
    let (s, h, d) = (spec.seq_len, spec.heads, spec.head_dim);

    let queries: Vec<Vec<f64>> = (0..h).map(|_| rng.normal_vec(d)).collect();

    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(h);
    for _ in 0..h {
        let mut k = vec![0.0; s * d];
        let mut v = vec![0.0; s * d];
        rng.fill_normal(&mut k);
        rng.fill_normal(&mut v);
        keys.push(k);
        values.push(v);
    }

    // Resolve span placements; starts stay >= 1 so the opening delimiter
    // (one position before the span) exists.
    let mut placements: Vec<(usize, usize, f64)> = Vec::new();
    let mut planted = Vec::new();
    for span in &spec.spans {
        let len = span.len.max(1).min(s);
        let max_start = s.saturating_sub(len);
        let start = ((span.depth.clamp(0.0, 1.0) * max_start as f64).round() as usize)
            .clamp(1.min(max_start), max_start);
        placements.push((start, len, span.strength));
        planted.extend(start..start + len);
    }
    planted.sort_unstable();
    planted.dedup();

    for head in 0..h {
        let q = &queries[head];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for &(start, len, strength) in &placements {
            for pos in start..start + len {
                for j in 0..d {
                    keys[head][pos * d + j] = strength * q[j] / norm + 0.1 * rng.normal();
                }
            }
        }
    }

    // Token stream: filler ids with a delimiter just before each span and
    // on its last token, so a boundary-aware plan isolates the span.
    let mut tokens: Vec<u32> = (0..s)
        .map(|_| FILLER_ID_BASE + rng.below(FILLER_ID_COUNT as usize) as u32)
        .collect();
    for &(start, len, _) in &placements {
        if start > 0 {
            tokens[start - 1] = PASSKEY_DELIMITER_ID;
        }
        tokens[start + len - 1] = PASSKEY_DELIMITER_ID;
    }

    SyntheticInstance {
        kv: KvTensor::new(h, d, s, keys, values).expect("generated storage is well-shaped"),
        queries,
        planted,
        tokens: TokenSequence::new(tokens),
    }
}

/// A fresh per-step query stream for decode loops: a random walk starting
/// at each head's base query.
pub fn query_walk(
    rng: &mut SeededRng,
    base: &[Vec<f64>],
    steps: usize,
    drift: f64,
) -> Vec<Vec<Vec<f64>>> {
    let mut current: Vec<Vec<f64>> = base.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(current.clone());
        for q in &mut current {
            for slot in q.iter_mut() {
                *slot += drift * rng.normal();
            }
        }
    }
    out
}

/// A random, valid causal attention tensor: each row is an independent
/// normalized vector of exponential draws over the causal range.
pub fn random_causal_attention(
    rng: &mut SeededRng,
    layers: usize,
    heads: usize,
    seq_len: usize,
) -> AttentionTensor {
    let mut values = vec![0.0; layers * heads * seq_len * seq_len];
    for row in 0..layers * heads * seq_len {
        let q = row % seq_len;
        let base = row * seq_len;
        let mut sum = 0.0;
        for k in 0..=q {
            let draw = -(1.0 - rng.uniform()).ln();
            values[base + k] = draw;
            sum += draw;
        }
        for k in 0..=q {
            values[base + k] /= sum;
        }
    }
    AttentionTensor::from_values(layers, heads, seq_len, values).expect("shape by construction")
}

/// Attention whose rows share a stationary distance profile: mass decays
/// geometrically with query-key distance, with mild multiplicative noise.
pub fn stationary_attention(
    rng: &mut SeededRng,
    layers: usize,
    heads: usize,
    seq_len: usize,
    decay: f64,
) -> AttentionTensor {
    let mut values = vec![0.0; layers * heads * seq_len * seq_len];
    for row in 0..layers * heads * seq_len {
        let q = row % seq_len;
        let base = row * seq_len;
        let mut sum = 0.0;
        for k in 0..=q {
            let w = decay.powi((q - k) as i32) * (1.0 + 0.05 * rng.uniform());
            values[base + k] = w;
            sum += w;
        }
        for k in 0..=q {
            values[base + k] /= sum;
        }
    }
    AttentionTensor::from_values(layers, heads, seq_len, values).expect("shape by construction")
}

/// A token sequence with known-good boundary cuts plus distractor
/// delimiters inside every search window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub tokens: TokenSequence,
    /// Ground-truth cut positions (block end positions, in segmenter
    /// convention).
    pub boundaries: Vec<usize>,
}

/// Weight table for the reversal study: the boundary id far outweighs the
/// distractor id.
pub fn boundary_table(boundary_id: u32, distractor_id: u32) -> DelimiterTable {
    DelimiterTable::new(BTreeMap::from([(boundary_id, 0.9), (distractor_id, 0.3)])).unwrap()
}

/// Generates sequences where every search window contains exactly one
/// high-weight delimiter at the intended cut and at least one low-weight
/// distractor at least 3 positions away, so reversing the weight order
/// provably moves the chosen cuts.
pub fn gen_boundary_corpus(
    rng: &mut SeededRng,
    num_seqs: usize,
    target_len: usize,
    cfg: &SegmentConfig,
    boundary_id: u32,
    distractor_id: u32,
) -> Vec<AnnotatedSequence> {
    assert_eq!(
        cfg.boundary_side,
        BoundarySide::After,
        "corpus generator assumes delimiter-terminates-chunk cuts"
    );
    assert!(cfg.max_deviation >= 3, "window too narrow for distractors");
    let (c, dev) = (cfg.chunk_size, cfg.max_deviation);

    fn filler(rng: &mut SeededRng, tokens: &mut Vec<u32>, upto: usize) {
        while tokens.len() < upto {
            tokens.push(FILLER_ID_BASE + rng.below(FILLER_ID_COUNT as usize) as u32);
        }
    }

    (0..num_seqs)
        .map(|_| {
            let mut tokens: Vec<u32> = Vec::with_capacity(target_len + c);
            let mut boundaries = Vec::new();

            let mut cursor = 0usize;
            while cursor + 2 * (c + dev) < target_len {
                // Cut end offset within the reachable range [C-D+1, C+D];
                // the boundary delimiter sits one position before the cut.
                let lo = (c - dev + 1).max(2);
                let offset = lo + rng.below(c + dev - lo + 1);
                let cut = cursor + offset;
                let delimiter_pos = cut - 1;

                // Distractor position inside the same window, >= 3 away.
                let win_lo = cursor + c - dev;
                let win_hi = cursor + c + dev - 1;
                let distractor_pos = loop {
                    let p = win_lo + rng.below(win_hi - win_lo + 1);
                    if p.abs_diff(delimiter_pos) >= 3 {
                        break p;
                    }
                };

                filler(rng, &mut tokens, win_hi + 1);
                tokens[delimiter_pos] = boundary_id;
                tokens[distractor_pos] = distractor_id;
                boundaries.push(cut);
                cursor = cut;
            }
            // Final chunk shorter than C: no further internal cuts.
            filler(rng, &mut tokens, cursor + c - 1);
            AnnotatedSequence {
                tokens: TokenSequence::new(tokens),
                boundaries,
            }
        })
        .collect()
}
