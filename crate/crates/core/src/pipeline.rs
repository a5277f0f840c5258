//! Per-decode-step plumbing: budgeted token selection over the digest
//! index, sparse and dense attention, cross-step reuse planning, and the
//! multi-step decode loop with load accounting.
//!
//! Softmax uses max-subtraction; the dense and sparse paths share the same
//! formulation so full-budget sparse attention reproduces dense attention
//! bit for bit.

use serde::Serialize;
use thiserror::Error;

use crate::blocks::{
    blocks_covering_budget, map_block_to_tokens, score_blocks, select_blocks, BlockError, CutSide,
};
use crate::types::{KvCache, SelectionResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("expected {expected} per-head queries of dim {dim}, got {got} of dim {got_dim}")]
    QueryShape {
        expected: usize,
        dim: usize,
        got: usize,
        got_dim: usize,
    },
    #[error("selection and cache disagree: {0}")]
    SelectionMismatch(String),
    #[error("empty selection for head {head}")]
    EmptySelection { head: usize },
    #[error("selection head counts differ: {prev} vs {next}")]
    ShapeMismatch { prev: usize, next: usize },
    #[error(transparent)]
    Block(#[from] BlockError),
}

/// One decode step's inputs: the current token's per-head query against an
/// assembled cache.
#[derive(Debug, Clone)]
pub struct DecodeStepInput<'a> {
    /// One query vector per head, each of the cache's head dimension.
    pub queries: &'a [Vec<f64>],
    pub cache: &'a KvCache,
    pub token_budget: usize,
}

/// Knobs for [`select_step_with`]; the defaults reproduce the plain
/// two-stage top-k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    /// Explicit block top-k. None picks enough blocks to cover the token
    /// budget, plus one spare.
    pub blocks_k: Option<usize>,
    pub cut_side: CutSide,
    /// Force-include the last N token indices in every head's selection
    /// (counted against the budget). 0 disables.
    pub keep_recent: usize,
    /// Score tokens across all blocks instead of only the pre-selected
    /// top-k blocks.
    pub global_pool: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            blocks_k: None,
            cut_side: CutSide::Head,
            keep_recent: 0,
            global_pool: false,
        }
    }
}

/// Standard attention scale `1 / sqrt(d)`.
pub fn attention_scale(head_dim: usize) -> f64 {
    1.0 / (head_dim as f64).sqrt()
}

fn check_queries(queries: &[Vec<f64>], cache: &KvCache) -> Result<(), PipelineError> {
    let bad_dim = queries.iter().find(|q| q.len() != cache.head_dim());
    if queries.len() != cache.heads() || bad_dim.is_some() {
        return Err(PipelineError::QueryShape {
            expected: cache.heads(),
            dim: cache.head_dim(),
            got: queries.len(),
            got_dim: bad_dim.map_or(cache.head_dim(), |q| q.len()),
        });
    }
    Ok(())
}

/// Budgeted per-head token selection: score digests, pick top blocks,
/// map block scores onto tokens, take the token top-k.
pub fn select_step(input: &DecodeStepInput) -> Result<SelectionResult, PipelineError> {
    select_step_with(input, &SelectOptions::default())
}

pub fn select_step_with(
    input: &DecodeStepInput,
    opts: &SelectOptions,
) -> Result<SelectionResult, PipelineError> {
    let cache = input.cache;
    check_queries(input.queries, cache)?;
    let plan = cache.plan();

    let mut indices = Vec::with_capacity(cache.heads());
    let mut block_scores = Vec::with_capacity(cache.heads());
    let mut saturated = false;
    for (head, query) in input.queries.iter().enumerate() {
        let scores = score_blocks(query, cache.digests(head))?;
        let selected = if opts.global_pool {
            (0..scores.len()).collect()
        } else {
            let k = opts
                .blocks_k
                .unwrap_or_else(|| blocks_covering_budget(&scores, plan, input.token_budget));
            select_blocks(&scores, k)
        };

        let selection = if opts.keep_recent == 0 {
            map_block_to_tokens(&selected, &scores, plan, input.token_budget, opts.cut_side)
        } else {
            select_with_recent(
                &selected,
                &scores,
                plan,
                input.token_budget,
                opts.cut_side,
                opts.keep_recent,
                cache.seq_len(),
            )
        };
        saturated |= selection.saturated;
        indices.push(selection.indices);
        block_scores.push(scores.iter().map(|s| s.score).collect());
    }
    Ok(SelectionResult {
        seq_len: cache.seq_len(),
        token_budget: input.token_budget,
        indices,
        block_scores,
        saturated,
    })
}

/// Budgeted selection with the most recent `keep_recent` indices pinned;
/// the rest of the budget fills from the block ranking.
fn select_with_recent(
    selected: &[usize],
    scores: &[crate::blocks::BlockScore],
    plan: &crate::types::SegmentPlan,
    token_budget: usize,
    cut_side: CutSide,
    keep_recent: usize,
    seq_len: usize,
) -> crate::blocks::TokenSelection {
    let pinned = keep_recent.min(token_budget).min(seq_len);
    let forced_from = seq_len - pinned;

    let mut ranked: Vec<usize> = selected.to_vec();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then(a.cmp(&b))
    });

    let mut indices: Vec<usize> = (forced_from..seq_len).collect();
    let mut need = token_budget - pinned;
    let mut exhausted = true;
    'blocks: for &block in &ranked {
        let span = plan.spans[block];
        let positions: Box<dyn Iterator<Item = usize>> = match cut_side {
            CutSide::Head => Box::new(span.start..span.end),
            CutSide::Tail => Box::new((span.start..span.end).rev()),
        };
        for pos in positions {
            if pos >= forced_from {
                continue;
            }
            if need == 0 {
                exhausted = false;
                break 'blocks;
            }
            indices.push(pos);
            need -= 1;
        }
    }
    indices.sort_unstable();
    indices.dedup();
    crate::blocks::TokenSelection {
        indices,
        saturated: need > 0 && exhausted,
    }
}

/// Scaled dot-product attention over the full cache, per head. The oracle
/// path for every sparse computation.
pub fn dense_attention(
    queries: &[Vec<f64>],
    cache: &KvCache,
    scale: f64,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    check_queries(queries, cache)?;
    let all: Vec<usize> = (0..cache.seq_len()).collect();
    Ok(queries
        .iter()
        .enumerate()
        .map(|(head, query)| attend(query, cache, head, &all, scale))
        .collect())
}

/// Attention restricted to each head's selected token set.
pub fn sparse_attention(
    queries: &[Vec<f64>],
    cache: &KvCache,
    selection: &SelectionResult,
    scale: f64,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    check_queries(queries, cache)?;
    if selection.heads() != cache.heads() || selection.seq_len != cache.seq_len() {
        return Err(PipelineError::SelectionMismatch(format!(
            "selection is {} heads / seq_len {}, cache is {} / {}",
            selection.heads(),
            selection.seq_len,
            cache.heads(),
            cache.seq_len()
        )));
    }
    let mut out = Vec::with_capacity(cache.heads());
    for (head, query) in queries.iter().enumerate() {
        let indices = &selection.indices[head];
        if indices.is_empty() {
            return Err(PipelineError::EmptySelection { head });
        }
        out.push(attend(query, cache, head, indices, scale));
    }
    Ok(out)
}

/// Softmax(q . K^T * scale) . V over the given token indices.
fn attend(query: &[f64], cache: &KvCache, head: usize, indices: &[usize], scale: f64) -> Vec<f64> {
    let kv = cache.kv();
    let mut logits = Vec::with_capacity(indices.len());
    let mut max_logit = f64::NEG_INFINITY;
    for &pos in indices {
        let logit: f64 = query
            .iter()
            .zip(kv.key(head, pos))
            .map(|(&q, &k)| q * k)
            .sum::<f64>()
            * scale;
        if logit > max_logit {
            max_logit = logit;
        }
        logits.push(logit);
    }
    let mut weights = logits;
    let mut denom = 0.0;
    for w in &mut weights {
        *w = (*w - max_logit).exp();
        denom += *w;
    }
    let mut out = vec![0.0; kv.head_dim()];
    for (&pos, &w) in indices.iter().zip(&weights) {
        let coeff = w / denom;
        for (slot, &v) in out.iter_mut().zip(kv.value(head, pos)) {
            *slot += coeff * v;
        }
    }
    out
}

/// Cross-step reuse: which of the next step's indices were already loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReusePlan {
    /// Per head, exactly `reuse_len` reused indices (ascending).
    pub reused: Vec<Vec<usize>>,
    /// Per head, the remaining freshly loaded indices (ascending).
    pub fresh: Vec<Vec<usize>>,
    /// Uniform reused count: the minimum intersection size across heads.
    pub reuse_len: usize,
}

/// Intersects consecutive selections per head and truncates to the minimum
/// intersection size across heads, so every head reuses the same amount.
pub fn plan_reuse(
    prev: &SelectionResult,
    next: &SelectionResult,
) -> Result<ReusePlan, PipelineError> {
    if prev.heads() != next.heads() || prev.seq_len != next.seq_len {
        return Err(PipelineError::ShapeMismatch {
            prev: prev.heads(),
            next: next.heads(),
        });
    }
    let reusable: Vec<Vec<usize>> = prev
        .indices
        .iter()
        .zip(&next.indices)
        .map(|(a, b)| intersect_sorted(a, b))
        .collect();
    let reuse_len = reusable.iter().map(Vec::len).min().unwrap_or(0);

    let mut reused = Vec::with_capacity(reusable.len());
    let mut fresh = Vec::with_capacity(reusable.len());
    for (head_reusable, next_indices) in reusable.iter().zip(&next.indices) {
        let keep = &head_reusable[..reuse_len];
        reused.push(keep.to_vec());
        fresh.push(
            next_indices
                .iter()
                .copied()
                .filter(|idx| keep.binary_search(idx).is_err())
                .collect(),
        );
    }
    Ok(ReusePlan {
        reused,
        fresh,
        reuse_len,
    })
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Per-step load accounting. Counts are per head (selection sizes and
/// reuse lengths are uniform across heads by construction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub step: usize,
    /// Token entries loaded fresh this step.
    pub fresh: usize,
    /// Token entries carried over from the previous step's selection.
    pub reused: usize,
    /// Digests consulted by the block stage.
    pub blocks_scored: usize,
}

/// Everything a decode loop produces.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Per step, per head attention outputs.
    pub outputs: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<StepStats>,
}

/// Runs selection and sparse attention for each query in turn. Reuse never
/// changes the outputs, only the fresh/reused split in the stats.
pub fn decode_loop(
    cache: &KvCache,
    queries_per_step: &[Vec<Vec<f64>>],
    token_budget: usize,
    reuse: bool,
) -> Result<DecodeOutput, PipelineError> {
    decode_loop_with(
        cache,
        queries_per_step,
        token_budget,
        reuse,
        &SelectOptions::default(),
    )
}

pub fn decode_loop_with(
    cache: &KvCache,
    queries_per_step: &[Vec<Vec<f64>>],
    token_budget: usize,
    reuse: bool,
    opts: &SelectOptions,
) -> Result<DecodeOutput, PipelineError> {
    let scale = attention_scale(cache.head_dim());
    let mut outputs = Vec::with_capacity(queries_per_step.len());
    let mut stats = Vec::with_capacity(queries_per_step.len());
    let mut previous: Option<SelectionResult> = None;
    for (step, queries) in queries_per_step.iter().enumerate() {
        let input = DecodeStepInput {
            queries,
            cache,
            token_budget,
        };
        let selection = select_step_with(&input, opts)?;
        outputs.push(sparse_attention(queries, cache, &selection, scale)?);

        let loaded = selection.indices.first().map_or(0, Vec::len);
        let reused = match (&previous, reuse) {
            (Some(prev), true) => plan_reuse(prev, &selection)?.reuse_len,
            _ => 0,
        };
        stats.push(StepStats {
            step,
            fresh: loaded - reused,
            reused,
            blocks_scored: cache.plan().block_count(),
        });
        previous = Some(selection);
    }
    Ok(DecodeOutput { outputs, stats })
}
