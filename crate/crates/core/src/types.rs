//! Shared domain types: token streams, delimiter weight tables, attention
//! tensors, segmentation plans, block digests, and the KV cache that ties
//! them together.
//!
//! All numeric state is `f64` in memory; the on-disk formats in [`crate::io`]
//! carry 32-bit floats and convert on load/store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A sequence of opaque token ids. The library never tokenizes text; ids
/// come from whatever tokenizer produced the stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("weight {weight} for token {token} is outside [0, 1]")]
    WeightOutOfRange { token: u32, weight: f64 },
}

/// Importance weights for boundary-candidate token ids, each in `[0, 1]`.
///
/// Backed by an ordered map so serialization is byte-stable: identical
/// tables always produce identical JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelimiterTable {
    entries: BTreeMap<u32, f64>,
}

impl DelimiterTable {
    pub fn new(entries: BTreeMap<u32, f64>) -> Result<Self, TableError> {
        let table = Self { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        for (&token, &weight) in &self.entries {
            if !(0.0..=1.0).contains(&weight) {
                return Err(TableError::WeightOutOfRange { token, weight });
            }
        }
        Ok(())
    }

    pub fn weight(&self, token: u32) -> Option<f64> {
        self.entries.get(&token).copied()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.entries.contains_key(&token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(&t, &w)| (t, w))
    }

    /// Weight-reversed copy (`w -> 1 - w`), inverting the importance order.
    pub fn reversed(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(&t, &w)| (t, 1.0 - w)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("value count {got} does not match layers*heads*seq_len^2 = {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("row (layer {layer}, head {head}, query {query}) sums to {sum}, expected 1")]
    RowNotNormalized {
        layer: usize,
        head: usize,
        query: usize,
        sum: f64,
    },
    #[error("non-causal entry at (layer {layer}, head {head}, query {query}, key {key})")]
    NonCausalEntry {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    },
    #[error("negative entry at (layer {layer}, head {head}, query {query}, key {key})")]
    NegativeEntry {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    },
}

/// Tolerance for attention row normalization checks.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Causal attention probability maps, one `S x S` row-stochastic matrix per
/// (layer, head). Values are stored flat in `[layer][head][query][key]`
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    seq_len: usize,
    values: Vec<f64>,
}

impl AttentionTensor {
    /// Wraps raw values without validating; call [`AttentionTensor::validate`]
    /// to check causality and normalization.
    pub fn from_values(
        layers: usize,
        heads: usize,
        seq_len: usize,
        values: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        let expected = layers * heads * seq_len * seq_len;
        if values.len() != expected {
            return Err(AttentionError::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            layers,
            heads,
            seq_len,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    #[inline]
    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        let s = self.seq_len;
        self.values[((layer * self.heads + head) * s + query) * s + key]
    }

    /// One attention row: the distribution of `query` over all keys.
    #[inline]
    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let s = self.seq_len;
        let base = ((layer * self.heads + head) * s + query) * s;
        &self.values[base..base + s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Checks all tensor invariants: entries non-negative, zero above the
    /// diagonal, and each row summing to 1 within [`ROW_SUM_TOLERANCE`].
    pub fn validate(&self) -> Result<(), AttentionError> {
        for layer in 0..self.layers {
            for head in 0..self.heads {
                for query in 0..self.seq_len {
                    let row = self.row(layer, head, query);
                    let mut sum = 0.0;
                    for (key, &v) in row.iter().enumerate() {
                        if v < 0.0 {
                            return Err(AttentionError::NegativeEntry {
                                layer,
                                head,
                                query,
                                key,
                            });
                        }
                        if key > query && v != 0.0 {
                            return Err(AttentionError::NonCausalEntry {
                                layer,
                                head,
                                query,
                                key,
                            });
                        }
                        sum += v;
                    }
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(AttentionError::RowNotNormalized {
                            layer,
                            head,
                            query,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Validates all [`AttentionTensor`] invariants.
pub fn validate_attention(tensor: &AttentionTensor) -> Result<(), AttentionError> {
    tensor.validate()
}

/// A half-open token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "(usize, usize)", from = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        pos >= self.start && pos < self.end
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan has no spans")]
    Empty,
    #[error("span {index} ([{start}, {end})) is empty or out of order")]
    BadSpan {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("spans do not tile the sequence: span {index} starts at {start}, expected {expected}")]
    Gap {
        index: usize,
        start: usize,
        expected: usize,
    },
    #[error("non-final span {index} has length {len}, outside [{min}, {max}]")]
    LengthOutOfBounds {
        index: usize,
        len: usize,
        min: usize,
        max: usize,
    },
    #[error("invalid segmentation parameters: chunk_size {chunk_size}, max_deviation {max_deviation}")]
    BadParams {
        chunk_size: usize,
        max_deviation: usize,
    },
}

/// An ordered, gapless list of block spans covering `[0, L)`, together with
/// the chunking parameters it was built under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub spans: Vec<Span>,
    pub chunk_size: usize,
    pub max_deviation: usize,
}

impl SegmentPlan {
    pub fn new(
        spans: Vec<Span>,
        chunk_size: usize,
        max_deviation: usize,
    ) -> Result<Self, PlanError> {
        let plan = Self {
            spans,
            chunk_size,
            max_deviation,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Fixed intervals of `chunk_size`; the final span may be shorter.
    pub fn fixed(total_len: usize, chunk_size: usize) -> Result<Self, PlanError> {
        if chunk_size == 0 || total_len == 0 {
            return Err(PlanError::BadParams {
                chunk_size,
                max_deviation: 0,
            });
        }
        let spans = (0..total_len)
            .step_by(chunk_size)
            .map(|start| Span::new(start, (start + chunk_size).min(total_len)))
            .collect();
        Self::new(spans, chunk_size, 0)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.chunk_size == 0 || self.max_deviation >= self.chunk_size {
            return Err(PlanError::BadParams {
                chunk_size: self.chunk_size,
                max_deviation: self.max_deviation,
            });
        }
        if self.spans.is_empty() {
            return Err(PlanError::Empty);
        }
        let mut expected = 0usize;
        let last = self.spans.len() - 1;
        for (index, span) in self.spans.iter().enumerate() {
            if span.is_empty() {
                return Err(PlanError::BadSpan {
                    index,
                    start: span.start,
                    end: span.end,
                });
            }
            if span.start != expected {
                return Err(PlanError::Gap {
                    index,
                    start: span.start,
                    expected,
                });
            }
            // Non-final spans obey the length regularization bound; the
            // final span may be arbitrarily short.
            let max = self.chunk_size + self.max_deviation;
            if index != last && !(self.chunk_size - self.max_deviation..=max).contains(&span.len())
            {
                return Err(PlanError::LengthOutOfBounds {
                    index,
                    len: span.len(),
                    min: self.chunk_size - self.max_deviation,
                    max,
                });
            }
            if index == last && span.len() > max {
                return Err(PlanError::LengthOutOfBounds {
                    index,
                    len: span.len(),
                    min: 1,
                    max,
                });
            }
            expected = span.end;
        }
        Ok(())
    }

    /// Total token count covered by the plan.
    pub fn total_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn block_count(&self) -> usize {
        self.spans.len()
    }

    /// Internal cut positions: every span end except the final one.
    pub fn boundaries(&self) -> Vec<usize> {
        self.spans
            .iter()
            .take(self.spans.len().saturating_sub(1))
            .map(|s| s.end)
            .collect()
    }
}

/// Which fixed-size summary a digest carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestVariant {
    /// Element-wise min and max over the block's key vectors.
    MinMax,
    /// Element-wise arithmetic mean over the block's key vectors.
    Mean,
}

impl DigestVariant {
    /// Number of `d`-dimensional vectors stored per digest.
    pub fn vectors_per_digest(self) -> usize {
        match self {
            DigestVariant::MinMax => 2,
            DigestVariant::Mean => 1,
        }
    }
}

impl std::fmt::Display for DigestVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DigestVariant::MinMax => write!(f, "minmax"),
            DigestVariant::Mean => write!(f, "mean"),
        }
    }
}

/// The payload of a [`BlockDigest`].
#[derive(Debug, Clone, PartialEq)]
pub enum DigestSummary {
    MinMax { key_min: Vec<f64>, key_max: Vec<f64> },
    Mean { key_mean: Vec<f64> },
}

impl DigestSummary {
    pub fn variant(&self) -> DigestVariant {
        match self {
            DigestSummary::MinMax { .. } => DigestVariant::MinMax,
            DigestSummary::Mean { .. } => DigestVariant::Mean,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DigestSummary::MinMax { key_min, .. } => key_min.len(),
            DigestSummary::Mean { key_mean } => key_mean.len(),
        }
    }
}

/// Fixed-size summary of one block's key vectors for a single head.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDigest {
    pub span: Span,
    pub head: usize,
    pub summary: DigestSummary,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("head {head}: key/value storage holds {got} values, expected seq_len*head_dim = {expected}")]
    StorageSize {
        head: usize,
        expected: usize,
        got: usize,
    },
    #[error("plan covers {plan_len} tokens but cache holds {seq_len}")]
    PlanCoverageMismatch { plan_len: usize, seq_len: usize },
    #[error("head {head} has {got} digests, plan has {expected} blocks")]
    DigestCount {
        head: usize,
        expected: usize,
        got: usize,
    },
    #[error("head {head}, block {block}: digest span does not match plan span")]
    DigestSpan { head: usize, block: usize },
}

/// Per-head key/value matrices, row-major `S x d` per head.
#[derive(Debug, Clone, PartialEq)]
pub struct KvTensor {
    heads: usize,
    head_dim: usize,
    seq_len: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl KvTensor {
    pub fn new(
        heads: usize,
        head_dim: usize,
        seq_len: usize,
        keys: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, CacheError> {
        let expected = seq_len * head_dim;
        for (head, storage) in keys.iter().chain(values.iter()).enumerate() {
            if storage.len() != expected {
                return Err(CacheError::StorageSize {
                    head: head % heads.max(1),
                    expected,
                    got: storage.len(),
                });
            }
        }
        Ok(Self {
            heads,
            head_dim,
            seq_len,
            keys,
            values,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    #[inline]
    pub fn key(&self, head: usize, pos: usize) -> &[f64] {
        let d = self.head_dim;
        &self.keys[head][pos * d..(pos + 1) * d]
    }

    #[inline]
    pub fn value(&self, head: usize, pos: usize) -> &[f64] {
        let d = self.head_dim;
        &self.values[head][pos * d..(pos + 1) * d]
    }
}

/// A [`KvTensor`] with an attached segmentation plan and the per-head digest
/// index aligned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    kv: KvTensor,
    plan: SegmentPlan,
    digests: Vec<Vec<BlockDigest>>,
}

impl KvCache {
    /// Assembles a cache from parts, checking digest/plan alignment. Most
    /// callers build digests via [`crate::blocks::attach_digests`] instead.
    pub fn assemble(
        kv: KvTensor,
        plan: SegmentPlan,
        digests: Vec<Vec<BlockDigest>>,
    ) -> Result<Self, CacheError> {
        if plan.total_len() != kv.seq_len() {
            return Err(CacheError::PlanCoverageMismatch {
                plan_len: plan.total_len(),
                seq_len: kv.seq_len(),
            });
        }
        if digests.len() != kv.heads() {
            return Err(CacheError::DigestCount {
                head: 0,
                expected: kv.heads(),
                got: digests.len(),
            });
        }
        for (head, head_digests) in digests.iter().enumerate() {
            if head_digests.len() != plan.block_count() {
                return Err(CacheError::DigestCount {
                    head,
                    expected: plan.block_count(),
                    got: head_digests.len(),
                });
            }
            for (block, digest) in head_digests.iter().enumerate() {
                if digest.span != plan.spans[block] {
                    return Err(CacheError::DigestSpan { head, block });
                }
            }
        }
        Ok(Self { kv, plan, digests })
    }

    pub fn kv(&self) -> &KvTensor {
        &self.kv
    }

    pub fn plan(&self) -> &SegmentPlan {
        &self.plan
    }

    pub fn digests(&self, head: usize) -> &[BlockDigest] {
        &self.digests[head]
    }

    pub fn variant(&self) -> DigestVariant {
        self.digests[0][0].summary.variant()
    }

    pub fn heads(&self) -> usize {
        self.kv.heads()
    }

    pub fn head_dim(&self) -> usize {
        self.kv.head_dim()
    }

    pub fn seq_len(&self) -> usize {
        self.kv.seq_len()
    }
}

/// Outcome of one budgeted selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Sequence length the selection indexes into.
    pub seq_len: usize,
    /// Budget the step ran under.
    pub token_budget: usize,
    /// Strictly ascending token indices per head.
    pub indices: Vec<Vec<usize>>,
    /// Digest score per block per head, in block order.
    pub block_scores: Vec<Vec<f64>>,
    /// True when the block stage exposed fewer tokens than the budget
    /// asked for (selection returned everything available).
    pub saturated: bool,
}

impl SelectionResult {
    pub fn heads(&self) -> usize {
        self.indices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn causal_2() -> AttentionTensor {
        AttentionTensor::from_values(1, 1, 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap()
    }

    #[test]
    fn valid_causal_map_passes() {
        assert!(validate_attention(&causal_2()).is_ok());
    }

    #[test]
    fn non_causal_entry_rejected() {
        let t = AttentionTensor::from_values(1, 1, 2, vec![0.9, 0.1, 0.5, 0.5]).unwrap();
        assert_eq!(
            t.validate(),
            Err(AttentionError::NonCausalEntry {
                layer: 0,
                head: 0,
                query: 0,
                key: 1
            })
        );
    }

    #[test]
    fn unnormalized_row_rejected() {
        let t = AttentionTensor::from_values(1, 1, 2, vec![0.9, 0.0, 0.5, 0.5]).unwrap();
        assert!(matches!(
            t.validate(),
            Err(AttentionError::RowNotNormalized { query: 0, .. })
        ));
    }

    #[test]
    fn negative_entry_rejected() {
        let t = AttentionTensor::from_values(1, 1, 2, vec![1.0, 0.0, -0.5, 1.5]).unwrap();
        assert!(matches!(
            t.validate(),
            Err(AttentionError::NegativeEntry { .. })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(
            AttentionTensor::from_values(1, 1, 2, vec![1.0]),
            Err(AttentionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn table_rejects_out_of_range_weight() {
        let mut entries = BTreeMap::new();
        entries.insert(1u32, 1.5);
        assert!(matches!(
            DelimiterTable::new(entries),
            Err(TableError::WeightOutOfRange { token: 1, .. })
        ));
    }

    #[test]
    fn table_reversal_flips_weights() {
        let table =
            DelimiterTable::new(BTreeMap::from([(1u32, 0.9), (2u32, 0.2)])).unwrap();
        let rev = table.reversed();
        assert_eq!(rev.weight(1), Some(1.0 - 0.9));
        assert_eq!(rev.weight(2), Some(0.8));
    }

    #[test]
    fn fixed_plan_tiles_sequence() {
        let plan = SegmentPlan::fixed(10, 4).unwrap();
        assert_eq!(
            plan.spans,
            vec![Span::new(0, 4), Span::new(4, 8), Span::new(8, 10)]
        );
        assert_eq!(plan.total_len(), 10);
        assert_eq!(plan.boundaries(), vec![4, 8]);
    }

    #[test]
    fn plan_gap_rejected() {
        let err = SegmentPlan::new(vec![Span::new(0, 4), Span::new(5, 8)], 4, 0).unwrap_err();
        assert!(matches!(err, PlanError::Gap { index: 1, .. }));
    }

    #[test]
    fn plan_length_bound_enforced() {
        // Non-final span of length 2 violates [C-D, C+D] = [3, 5].
        let err =
            SegmentPlan::new(vec![Span::new(0, 2), Span::new(2, 8)], 4, 1).unwrap_err();
        assert!(matches!(err, PlanError::LengthOutOfBounds { index: 0, .. }));
    }

    #[test]
    fn plan_rejects_bad_params() {
        assert!(matches!(
            SegmentPlan::new(vec![Span::new(0, 4)], 4, 4),
            Err(PlanError::BadParams { .. })
        ));
    }

    #[test]
    fn cache_assembly_checks_alignment() {
        let kv = KvTensor::new(1, 2, 4, vec![vec![0.0; 8]], vec![vec![0.0; 8]]).unwrap();
        let plan = SegmentPlan::fixed(4, 2).unwrap();
        let digests = vec![vec![BlockDigest {
            span: Span::new(0, 2),
            head: 0,
            summary: DigestSummary::Mean {
                key_mean: vec![0.0, 0.0],
            },
        }]];
        // One digest for a two-block plan.
        assert!(matches!(
            KvCache::assemble(kv, plan, digests),
            Err(CacheError::DigestCount { .. })
        ));
    }
}
