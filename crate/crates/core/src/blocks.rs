//! Variable-to-fixed block machinery: per-block key digests, query-aware
//! block scoring, top-k block selection, and the block-to-token score
//! mapping that turns variable-length blocks into a flat token top-k.
//!
//! The min/max digest gives the usual box bound: its score never
//! underestimates the true maximum inner product of any token in the block.

use thiserror::Error;

use crate::types::{
    BlockDigest, CacheError, DigestSummary, DigestVariant, KvCache, KvTensor, SegmentPlan,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("plan covers {plan_len} tokens but keys hold {seq_len}")]
    PlanCoverageMismatch { plan_len: usize, seq_len: usize },
    #[error("query dimension {query_dim} does not match digest dimension {digest_dim}")]
    DimensionMismatch {
        query_dim: usize,
        digest_dim: usize,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Builds one digest per (head, block) from the key matrices.
pub fn build_digests(
    kv: &KvTensor,
    plan: &SegmentPlan,
    variant: DigestVariant,
) -> Result<Vec<Vec<BlockDigest>>, BlockError> {
    if plan.total_len() != kv.seq_len() {
        return Err(BlockError::PlanCoverageMismatch {
            plan_len: plan.total_len(),
            seq_len: kv.seq_len(),
        });
    }
    let d = kv.head_dim();
    let mut per_head = Vec::with_capacity(kv.heads());
    for head in 0..kv.heads() {
        let mut digests = Vec::with_capacity(plan.block_count());
        for &span in &plan.spans {
            let summary = match variant {
                DigestVariant::MinMax => {
                    let mut key_min = kv.key(head, span.start).to_vec();
                    let mut key_max = key_min.clone();
                    for pos in span.start + 1..span.end {
                        for (j, &v) in kv.key(head, pos).iter().enumerate() {
                            if v < key_min[j] {
                                key_min[j] = v;
                            }
                            if v > key_max[j] {
                                key_max[j] = v;
                            }
                        }
                    }
                    DigestSummary::MinMax { key_min, key_max }
                }
                DigestVariant::Mean => {
                    let mut key_mean = vec![0.0; d];
                    for pos in span.start..span.end {
                        for (j, &v) in kv.key(head, pos).iter().enumerate() {
                            key_mean[j] += v;
                        }
                    }
                    let inv = 1.0 / span.len() as f64;
                    for slot in &mut key_mean {
                        *slot *= inv;
                    }
                    DigestSummary::Mean { key_mean }
                }
            };
            digests.push(BlockDigest {
                span,
                head,
                summary,
            });
        }
        per_head.push(digests);
    }
    Ok(per_head)
}

/// Builds digests and assembles the full cache in one step.
pub fn attach_digests(
    kv: KvTensor,
    plan: SegmentPlan,
    variant: DigestVariant,
) -> Result<KvCache, BlockError> {
    let digests = build_digests(&kv, &plan, variant)?;
    Ok(KvCache::assemble(kv, plan, digests)?)
}

/// Query-dependent importance of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScore {
    pub block: usize,
    pub score: f64,
}

/// Scores every digest against the query. For min/max digests the score is
/// `sum_j max(q_j * max_j, q_j * min_j)`, the box upper bound on the inner
/// product; for mean digests it is the plain dot product.
pub fn score_blocks(query: &[f64], digests: &[BlockDigest]) -> Result<Vec<BlockScore>, BlockError> {
    let mut scores = Vec::with_capacity(digests.len());
    for (block, digest) in digests.iter().enumerate() {
        if digest.summary.dim() != query.len() {
            return Err(BlockError::DimensionMismatch {
                query_dim: query.len(),
                digest_dim: digest.summary.dim(),
            });
        }
        let score = match &digest.summary {
            DigestSummary::MinMax { key_min, key_max } => query
                .iter()
                .zip(key_min.iter().zip(key_max))
                .map(|(&q, (&lo, &hi))| (q * hi).max(q * lo))
                .sum(),
            DigestSummary::Mean { key_mean } => {
                query.iter().zip(key_mean).map(|(&q, &m)| q * m).sum()
            }
        };
        scores.push(BlockScore { block, score });
    }
    Ok(scores)
}

/// The `min(k, n)` highest-scoring block indices, ties broken toward the
/// lower block index, returned in ascending block order.
pub fn select_blocks(scores: &[BlockScore], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(scores.len()));
    order.sort_unstable();
    order
}

/// Smallest block count whose top-scoring blocks cover `token_budget`
/// tokens, plus one spare so the token stage is never starved; capped at
/// the total block count.
pub fn blocks_covering_budget(
    scores: &[BlockScore],
    plan: &SegmentPlan,
    token_budget: usize,
) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then(a.cmp(&b))
    });
    let mut covered = 0usize;
    let mut needed = 0usize;
    for &block in &order {
        if covered >= token_budget {
            break;
        }
        covered += plan.spans[block].len();
        needed += 1;
    }
    (needed + 1).min(scores.len())
}

/// Which end of the marginal block survives when the token budget cuts
/// inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CutSide {
    /// Keep the block's lowest-index tokens. Default.
    #[default]
    Head,
    /// Keep the block's highest-index (most recent) tokens.
    Tail,
}

/// Token indices chosen by [`map_block_to_tokens`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSelection {
    /// Strictly ascending token indices.
    pub indices: Vec<usize>,
    /// True when the selected blocks held fewer tokens than the budget;
    /// everything available was returned.
    pub saturated: bool,
}

/// Assigns each selected block's score to all of its tokens and returns the
/// `token_budget` best token indices. Tokens rank by (block score
/// descending, token index ascending); when the budget cut falls inside a
/// block, `cut_side` picks which end survives.
pub fn map_block_to_tokens(
    selected: &[usize],
    scores: &[BlockScore],
    plan: &SegmentPlan,
    token_budget: usize,
    cut_side: CutSide,
) -> TokenSelection {
    // Rank order: score descending, block index ascending. Because blocks
    // are contiguous spans, this equals the per-token stable sort.
    let mut ranked: Vec<usize> = selected.to_vec();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then(a.cmp(&b))
    });

    let available: usize = ranked.iter().map(|&b| plan.spans[b].len()).sum();
    let saturated = token_budget > available;
    let target = token_budget.min(available);

    let mut indices = Vec::with_capacity(target);
    let mut remaining = target;
    for &block in &ranked {
        if remaining == 0 {
            break;
        }
        let span = plan.spans[block];
        let take = remaining.min(span.len());
        match cut_side {
            CutSide::Head => indices.extend(span.start..span.start + take),
            CutSide::Tail => indices.extend(span.end - take..span.end),
        }
        remaining -= take;
    }
    indices.sort_unstable();
    TokenSelection { indices, saturated }
}
