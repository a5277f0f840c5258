//! Semantic KV-cache segmentation and budgeted sparse-attention selection,
//! with a synthetic-workload harness for verifying the whole pipeline
//! against dense-attention oracles.
//!
//! The pipeline, end to end:
//!
//! 1. [`scoring`] derives per-delimiter importance weights from attention
//!    maps (how strongly future tokens depend on retained vs. distant
//!    context around a candidate boundary).
//! 2. [`segment`] splits a token stream into semantic blocks by greedily
//!    cutting at the best-weighted delimiter near each ideal chunk end.
//! 3. [`blocks`] summarizes each block's keys into a fixed-size digest
//!    (element-wise min/max box, or mean), scores digests against a query,
//!    and maps block scores back onto tokens for a budgeted token top-k.
//! 4. [`pipeline`] runs per-step selection and sparse attention over the
//!    selected set, plus cross-step reuse planning that never changes
//!    outputs, only load accounting.
//! 5. [`harness`] generates synthetic workloads with planted
//!    query-aligned spans and measures recall, retrieval hits, and
//!    resident bytes against the dense oracle.

pub mod blocks;
pub mod harness;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod segment;
pub mod synth;
pub mod types;

pub use blocks::{
    attach_digests, blocks_covering_budget, build_digests, map_block_to_tokens, score_blocks,
    select_blocks, BlockError, BlockScore, CutSide, TokenSelection,
};
pub use harness::{
    account_memory, account_memory_dims, bench_csv, boundary_f1, build_plan, recall_at_budget,
    run_passkey, run_passkey_sweep, run_reversal_ablation, BenchConfig, MemoryFootprint,
    PasskeyConfig, PlanSource, RunMetrics, BENCH_CSV_HEADER,
};
pub use pipeline::{
    attention_scale, decode_loop, decode_loop_with, dense_attention, plan_reuse, select_step,
    select_step_with, sparse_attention, DecodeOutput, DecodeStepInput, PipelineError, ReusePlan,
    SelectOptions, StepStats,
};
pub use rng::{seeded_rng, SeededRng};
pub use scoring::{
    build_table, score_positions, BuildError, DelimiterScore, Normalization, ScoreError,
    ScoringConfig, TableBuildOptions,
};
pub use segment::{segment, segment_incremental, BoundarySide, SegmentConfig, SegmentError};
pub use synth::{
    gen_synthetic, random_causal_attention, stationary_attention, AnnotatedSequence, PlantedSpan,
    SyntheticInstance, SyntheticSpec,
};
pub use types::{
    validate_attention, AttentionError, AttentionTensor, BlockDigest, CacheError, DelimiterTable,
    DigestSummary, DigestVariant, KvCache, KvTensor, PlanError, SegmentPlan, SelectionResult,
    Span, TableError, TokenSequence,
};
