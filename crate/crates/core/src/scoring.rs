//! Attention-based delimiter importance scoring.
//!
//! A good boundary token is one whose *following* tokens attend mostly to
//! the recent retained window rather than to distant context. For each
//! candidate position `i` we split the prefix into a retained region
//! `O_i = {max(0, i-R+1) .. i}` and a dropped region `D_i = {0 .. i-R}`
//! (empty while `i < R`, so the two regions partition the prefix), then
//! average attention mass from the future window `F_i = {i+1 .. min(i+W, S-1)}`
//! into each region across every layer and head:
//!
//! `score_i = overlap_mass_i - penalty * drop_mass_i`

use thiserror::Error;

use crate::types::{AttentionTensor, DelimiterTable, TokenSequence};

/// Parameters for [`score_positions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    /// Future window size `W`: how many following queries are inspected.
    pub future_window: usize,
    /// Overlap size `R`: how many trailing positions count as retained.
    pub overlap_size: usize,
    /// Penalty on mass falling in the dropped region.
    pub penalty: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            future_window: 8,
            overlap_size: 128,
            penalty: 1.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.future_window < 1 || self.overlap_size < 1 || self.penalty < 0.0 {
            return Err(ScoreError::BadConfig {
                future_window: self.future_window,
                overlap_size: self.overlap_size,
                penalty: self.penalty,
            });
        }
        Ok(())
    }
}

/// Importance score for one candidate position.
#[derive(Debug, Clone, PartialEq)]
pub struct DelimiterScore {
    pub position: usize,
    /// `overlap_mass - penalty * drop_mass`; meaningless when `!valid`.
    pub score: f64,
    pub overlap_mass: f64,
    pub drop_mass: f64,
    /// False when the future window is empty (the final position); such
    /// entries are excluded from aggregation rather than treated as zero.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("candidate position {position} out of range for sequence length {seq_len}")]
    CandidateOutOfRange { position: usize, seq_len: usize },
    #[error("bad scoring config: future_window {future_window}, overlap_size {overlap_size}, penalty {penalty}")]
    BadConfig {
        future_window: usize,
        overlap_size: usize,
        penalty: f64,
    },
}

/// Scores candidate positions against the attention tensor. Candidates are
/// deduplicated and results returned in ascending position order.
pub fn score_positions(
    attn: &AttentionTensor,
    candidates: &[usize],
    cfg: &ScoringConfig,
) -> Result<Vec<DelimiterScore>, ScoreError> {
    cfg.validate()?;
    let s = attn.seq_len();
    let mut positions: Vec<usize> = candidates.to_vec();
    positions.sort_unstable();
    positions.dedup();
    if let Some(&bad) = positions.iter().find(|&&p| p >= s) {
        return Err(ScoreError::CandidateOutOfRange {
            position: bad,
            seq_len: s,
        });
    }

    // Per-row prefix sums make each region sum O(1).
    let prefix = RowPrefixSums::new(attn);

    let maps = attn.layers() * attn.heads();
    let mut out = Vec::with_capacity(positions.len());
    for &i in &positions {
        let future_end = (i + cfg.future_window).min(s.saturating_sub(1));
        if i + 1 > future_end {
            out.push(DelimiterScore {
                position: i,
                score: 0.0,
                overlap_mass: 0.0,
                drop_mass: 0.0,
                valid: false,
            });
            continue;
        }
        let overlap_lo = (i + 1).saturating_sub(cfg.overlap_size);
        let drop_hi = if i >= cfg.overlap_size {
            Some(i - cfg.overlap_size)
        } else {
            None
        };

        let mut overlap_sum = 0.0;
        let mut drop_sum = 0.0;
        for layer in 0..attn.layers() {
            for head in 0..attn.heads() {
                for query in i + 1..=future_end {
                    overlap_sum += prefix.range_sum(attn, layer, head, query, overlap_lo, i);
                    if let Some(hi) = drop_hi {
                        drop_sum += prefix.range_sum(attn, layer, head, query, 0, hi);
                    }
                }
            }
        }
        let denom = (maps * (future_end - i)) as f64;
        let overlap_mass = overlap_sum / denom;
        let drop_mass = drop_sum / denom;
        out.push(DelimiterScore {
            position: i,
            score: overlap_mass - cfg.penalty * drop_mass,
            overlap_mass,
            drop_mass,
            valid: true,
        });
    }
    Ok(out)
}

/// Cumulative sums along the key axis of each attention row.
struct RowPrefixSums {
    sums: Vec<f64>,
}

impl RowPrefixSums {
    fn new(attn: &AttentionTensor) -> Self {
        let mut sums = vec![0.0; attn.values().len()];
        let s = attn.seq_len();
        for (row_idx, row) in attn.values().chunks_exact(s).enumerate() {
            let base = row_idx * s;
            let mut acc = 0.0;
            for (k, &v) in row.iter().enumerate() {
                acc += v;
                sums[base + k] = acc;
            }
        }
        Self { sums }
    }

    /// Sum of `A[layer][head][query][lo..=hi]`.
    #[inline]
    fn range_sum(
        &self,
        attn: &AttentionTensor,
        layer: usize,
        head: usize,
        query: usize,
        lo: usize,
        hi: usize,
    ) -> f64 {
        let s = attn.seq_len();
        let base = ((layer * attn.heads() + head) * s + query) * s;
        let upper = self.sums[base + hi];
        if lo == 0 {
            upper
        } else {
            upper - self.sums[base + lo - 1]
        }
    }
}

/// How aggregated per-token means are mapped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Affine map sending the smallest mean to 0 and the largest to 1;
    /// a degenerate spread (all means equal) maps everything to 1.
    MinMax,
    /// Raw means clamped into `[0, 1]`.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableBuildOptions {
    pub normalization: Normalization,
    /// Round weights to one decimal place, the granularity delimiter
    /// tables are usually published at. On by default.
    pub round_to_tenths: bool,
}

impl Default for TableBuildOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            round_to_tenths: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("no valid scores to aggregate")]
    EmptyInput,
    #[error("scored position {position} out of range for sequence length {seq_len}")]
    PositionOutOfRange { position: usize, seq_len: usize },
}

/// Aggregates per-position scores into a per-token-id weight table:
/// valid scores are averaged per token id, normalized into `[0, 1]`, and
/// optionally rounded to tenths.
pub fn build_table(
    scores: &[DelimiterScore],
    tokens: &TokenSequence,
    opts: &TableBuildOptions,
) -> Result<DelimiterTable, BuildError> {
    let mut sums: std::collections::BTreeMap<u32, (f64, usize)> = std::collections::BTreeMap::new();
    for score in scores.iter().filter(|s| s.valid) {
        let Some(&token) = tokens.tokens.get(score.position) else {
            return Err(BuildError::PositionOutOfRange {
                position: score.position,
                seq_len: tokens.len(),
            });
        };
        let entry = sums.entry(token).or_insert((0.0, 0));
        entry.0 += score.score;
        entry.1 += 1;
    }
    if sums.is_empty() {
        return Err(BuildError::EmptyInput);
    }

    let means: Vec<(u32, f64)> = sums
        .into_iter()
        .map(|(token, (sum, count))| (token, sum / count as f64))
        .collect();

    let normalized: Vec<(u32, f64)> = match opts.normalization {
        Normalization::MinMax => {
            let lo = means.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
            let hi = means
                .iter()
                .map(|&(_, m)| m)
                .fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                means.iter().map(|&(t, _)| (t, 1.0)).collect()
            } else {
                means
                    .iter()
                    .map(|&(t, m)| (t, (m - lo) / (hi - lo)))
                    .collect()
            }
        }
        Normalization::Clamp => means.iter().map(|&(t, m)| (t, m.clamp(0.0, 1.0))).collect(),
    };

    let entries = normalized
        .into_iter()
        .map(|(t, w)| {
            let w = if opts.round_to_tenths {
                (w * 10.0).round() / 10.0
            } else {
                w
            };
            (t, w)
        })
        .collect();
    // Normalization keeps weights in [0, 1], so this cannot fail.
    Ok(DelimiterTable::new(entries).expect("normalized weights in range"))
}
