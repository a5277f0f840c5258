//! Dynamic semantic segmentation: greedy, length-regularized splitting of a
//! token stream at weighted delimiter positions, plus the incremental form
//! used during decoding.
//!
//! Each step starts a chunk at `s_c` with ideal end `s_e = s_c + C` and
//! searches the window `s_e ± max_deviation` for the delimiter maximizing
//! `mix * weight + (1 - mix) * proximity`, where
//! `proximity = 1 - |e - s_e| / (max_deviation + 1)`. With no delimiter in
//! the window the chunk falls back to exactly `C` tokens.

use thiserror::Error;

use crate::types::{DelimiterTable, PlanError, SegmentPlan, Span, TokenSequence};

/// Which chunk a chosen delimiter token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundarySide {
    /// The delimiter terminates the chunk it ends: the cut falls *after*
    /// it, so a period stays with its sentence. Default.
    #[default]
    After,
    /// The cut falls at the delimiter itself, which then starts the next
    /// chunk.
    Before,
}

impl std::fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundarySide::After => write!(f, "after"),
            BoundarySide::Before => write!(f, "before"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    /// Desired base chunk size `C`.
    pub chunk_size: usize,
    /// Maximum allowed deviation of the cut from the ideal end; must be
    /// smaller than `chunk_size`.
    pub max_deviation: usize,
    /// Mixing coefficient in `[0, 1]`: 1 scores delimiters purely by
    /// weight, 0 purely by proximity to the ideal end.
    pub boundary_mix: f64,
    pub boundary_side: BoundarySide,
}

impl SegmentConfig {
    /// Defaults: deviation 14 (capped below `chunk_size`), an even
    /// weight/proximity mix, and delimiter-terminates-chunk cuts.
    pub fn new(chunk_size: usize) -> Self {
        Self {
            chunk_size,
            max_deviation: 14.min(chunk_size.saturating_sub(1)),
            boundary_mix: 0.5,
            boundary_side: BoundarySide::After,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.chunk_size < 1
            || self.max_deviation >= self.chunk_size
            || !(0.0..=1.0).contains(&self.boundary_mix)
        {
            return Err(SegmentError::BadConfig {
                chunk_size: self.chunk_size,
                max_deviation: self.max_deviation,
                boundary_mix: self.boundary_mix,
            });
        }
        Ok(())
    }

    /// Proximity credit for a candidate delimiter at `pos` against ideal
    /// end `ideal`: linear in distance, always positive inside the window.
    fn proximity(&self, pos: usize, ideal: usize) -> f64 {
        let dist = pos.abs_diff(ideal);
        1.0 - dist as f64 / (self.max_deviation + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("cannot segment an empty sequence")]
    EmptySequence,
    #[error("bad segmentation config: chunk_size {chunk_size}, max_deviation {max_deviation}, boundary_mix {boundary_mix}")]
    BadConfig {
        chunk_size: usize,
        max_deviation: usize,
        boundary_mix: f64,
    },
    #[error("previous plan inconsistent with prefix: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Segments the whole sequence into semantic blocks.
pub fn segment(
    seq: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
) -> Result<SegmentPlan, SegmentError> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(SegmentError::EmptySequence);
    }
    let mut spans = Vec::new();
    run_greedy(seq, table, cfg, 0, &mut spans);
    Ok(SegmentPlan::new(spans, cfg.chunk_size, cfg.max_deviation)?)
}

/// Re-segments an extended sequence, reusing every block of `prev_plan`
/// whose decision window was already fully inside the old sequence. The
/// result is identical to running [`segment`] on the full sequence.
pub fn segment_incremental(
    prev_plan: &SegmentPlan,
    seq_extended: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
) -> Result<SegmentPlan, SegmentError> {
    cfg.validate()?;
    if seq_extended.is_empty() {
        return Err(SegmentError::EmptySequence);
    }
    prev_plan
        .validate()
        .map_err(|e| SegmentError::PlanMismatch(e.to_string()))?;
    if prev_plan.chunk_size != cfg.chunk_size || prev_plan.max_deviation != cfg.max_deviation {
        return Err(SegmentError::PlanMismatch(format!(
            "plan parameters ({}, {}) differ from config ({}, {})",
            prev_plan.chunk_size, prev_plan.max_deviation, cfg.chunk_size, cfg.max_deviation
        )));
    }
    let prev_len = prev_plan.total_len();
    if prev_len > seq_extended.len() {
        return Err(SegmentError::PlanMismatch(format!(
            "plan covers {prev_len} tokens but sequence holds {}",
            seq_extended.len()
        )));
    }

    // A block starting at s is frozen once positions up to s + C + D
    // (exclusive for Before, inclusive for After) existed when it was cut:
    // nothing a later token arrives at can change its decision.
    let horizon = cfg.chunk_size + cfg.max_deviation;
    let frozen = |start: usize| match cfg.boundary_side {
        BoundarySide::After => start + horizon <= prev_len,
        BoundarySide::Before => start + horizon < prev_len,
    };

    let mut spans: Vec<Span> = prev_plan
        .spans
        .iter()
        .take_while(|span| frozen(span.start))
        .copied()
        .collect();
    let resume = spans.last().map_or(0, |s| s.end);
    run_greedy(seq_extended, table, cfg, resume, &mut spans);
    Ok(SegmentPlan::new(spans, cfg.chunk_size, cfg.max_deviation)?)
}

/// The greedy loop, appending spans from `start` to the end of `seq`.
fn run_greedy(
    seq: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
    start: usize,
    spans: &mut Vec<Span>,
) {
    let len = seq.len();
    let mut cursor = start;
    while cursor < len {
        let ideal = cursor + cfg.chunk_size;
        if ideal >= len {
            spans.push(Span::new(cursor, len));
            break;
        }
        let end = match best_delimiter(seq, table, cfg, cursor, ideal, len) {
            // The cut lands after the delimiter for After, on it for Before.
            Some(pos) => match cfg.boundary_side {
                BoundarySide::After => pos + 1,
                BoundarySide::Before => pos,
            },
            None => ideal,
        };
        spans.push(Span::new(cursor, end));
        cursor = end;
    }
}

/// Highest-scoring delimiter position in the search window, or None when
/// the window holds no table token. Ties break toward the earlier position.
fn best_delimiter(
    seq: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
    cursor: usize,
    ideal: usize,
    len: usize,
) -> Option<usize> {
    // Candidate positions are constrained so the resulting cut deviates
    // from `ideal` by at most max_deviation; for After the cut is pos + 1,
    // which trims the top of the window by one.
    let lo = (ideal - cfg.max_deviation).max(cursor + 1);
    let hi = match cfg.boundary_side {
        BoundarySide::After => ideal + cfg.max_deviation - 1,
        BoundarySide::Before => ideal + cfg.max_deviation,
    }
    .min(len - 1);

    let mut best: Option<(usize, f64)> = None;
    for pos in lo..=hi {
        let Some(weight) = table.weight(seq.tokens[pos]) else {
            continue;
        };
        let score =
            cfg.boundary_mix * weight + (1.0 - cfg.boundary_mix) * cfg.proximity(pos, ideal);
        match best {
            Some((_, best_score)) if score <= best_score => {}
            _ => best = Some((pos, score)),
        }
    }
    best.map(|(pos, _)| pos)
}
