//! Experiment runners and metrics: the planted-span retrieval task, budget
//! sweeps, the weight-reversal segmentation study, and exact byte
//! accounting for resident KV state.
//!
//! Every runner is a pure function of (spec, seed, config); sweep output is
//! byte-reproducible.

use crate::blocks::attach_digests;
use crate::pipeline::{decode_loop, select_step, DecodeStepInput};
use crate::rng::seeded_rng;
use crate::segment::{segment, SegmentConfig};
use crate::synth::{
    gen_synthetic, passkey_table, query_walk, AnnotatedSequence, SyntheticSpec,
};
use crate::types::{DelimiterTable, DigestVariant, KvCache, SegmentPlan, TokenSequence};

/// How the segmentation plan for an experiment is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanSource {
    /// Fixed intervals of the configured chunk size.
    Fixed,
    /// Weight-driven dynamic segmentation over the token stream.
    DdSelect,
}

impl std::fmt::Display for PlanSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanSource::Fixed => write!(f, "fixed"),
            PlanSource::DdSelect => write!(f, "ddselect"),
        }
    }
}

impl std::str::FromStr for PlanSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(PlanSource::Fixed),
            "ddselect" => Ok(PlanSource::DdSelect),
            other => Err(format!("unknown plan source '{other}'")),
        }
    }
}

/// Metrics from one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Fraction of the dense-attention top-budget tokens captured by the
    /// selection, averaged over heads.
    pub recall_at_budget: f64,
    /// Whether every planted token index was selected on every head.
    pub passkey_hit: bool,
    /// token_budget / seq_len.
    pub kv_usage_rate: f64,
    pub digest_overhead_bytes: u64,
    pub resident_bytes_full: u64,
    pub resident_bytes_compressed: u64,
    /// Only set by the segmentation study.
    pub boundary_f1: Option<f64>,
}

/// Builds the experiment plan for a generated token stream.
pub fn build_plan(
    source: PlanSource,
    tokens: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
) -> SegmentPlan {
    match source {
        PlanSource::Fixed => SegmentPlan::fixed(tokens.len(), cfg.chunk_size)
            .expect("fixed plan over non-empty sequence"),
        PlanSource::DdSelect => segment(tokens, table, cfg).expect("non-empty sequence"),
    }
}

/// Fraction of the dense top-`budget` attention-mass tokens that the
/// selection captured, averaged over heads. The reference set comes from
/// the dense oracle, never from the method under test.
pub fn recall_at_budget(
    queries: &[Vec<f64>],
    cache: &KvCache,
    selection: &crate::types::SelectionResult,
) -> f64 {
    let budget = selection.token_budget.min(cache.seq_len());
    if budget == 0 {
        return 0.0;
    }
    let dense = dense_weights(queries, cache);
    let mut total = 0.0;
    for (head, weights) in dense.iter().enumerate() {
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        order.truncate(budget);
        let captured = order
            .iter()
            .filter(|idx| selection.indices[head].binary_search(idx).is_ok())
            .count();
        total += captured as f64 / budget as f64;
    }
    total / dense.len() as f64
}

/// Dense softmax weights per head (the attention-mass distribution).
fn dense_weights(queries: &[Vec<f64>], cache: &KvCache) -> Vec<Vec<f64>> {
    let scale = crate::pipeline::attention_scale(cache.head_dim());
    let kv = cache.kv();
    queries
        .iter()
        .enumerate()
        .map(|(head, query)| {
            let logits: Vec<f64> = (0..cache.seq_len())
                .map(|pos| {
                    query
                        .iter()
                        .zip(kv.key(head, pos))
                        .map(|(&q, &k)| q * k)
                        .sum::<f64>()
                        * scale
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let denom: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / denom).collect()
        })
        .collect()
}

/// Exact resident-byte arithmetic for a cache under a token budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryFootprint {
    pub resident_bytes_full: u64,
    pub resident_bytes_compressed: u64,
    pub digest_overhead_bytes: u64,
}

/// Full residency is both K and V matrices; compressed residency is the
/// budgeted K/V subset plus the digest index.
pub fn account_memory(cache: &KvCache, token_budget: usize, bytes_per_elem: u64) -> MemoryFootprint {
    account_memory_dims(
        cache.heads(),
        cache.seq_len(),
        cache.head_dim(),
        cache.plan().block_count(),
        cache.variant(),
        token_budget,
        bytes_per_elem,
    )
}

/// The same arithmetic from raw dimensions, for sizing caches that are
/// never materialized.
pub fn account_memory_dims(
    heads: usize,
    seq_len: usize,
    head_dim: usize,
    block_count: usize,
    variant: DigestVariant,
    token_budget: usize,
    bytes_per_elem: u64,
) -> MemoryFootprint {
    let h = heads as u64;
    let s = seq_len as u64;
    let d = head_dim as u64;
    let vectors = variant.vectors_per_digest() as u64;

    let resident_bytes_full = 2 * h * s * d * bytes_per_elem;
    let digest_overhead_bytes = h * block_count as u64 * vectors * d * bytes_per_elem;
    let budget = (token_budget as u64).min(s);
    let resident_bytes_compressed = 2 * h * budget * d * bytes_per_elem + digest_overhead_bytes;
    MemoryFootprint {
        resident_bytes_full,
        resident_bytes_compressed,
        digest_overhead_bytes,
    }
}

/// Runs one planted-span retrieval instance across a budget sweep: one
/// [`RunMetrics`] per budget, in the given budget order.
pub fn run_passkey(
    spec: &SyntheticSpec,
    source: PlanSource,
    budgets: &[usize],
    seg_cfg: &SegmentConfig,
) -> Vec<RunMetrics> {
    let instance = gen_synthetic(spec);
    let table = passkey_table();
    let plan = build_plan(source, &instance.tokens, &table, seg_cfg);
    let cache = attach_digests(instance.kv, plan, DigestVariant::MinMax)
        .expect("plan tiles the generated sequence");

    budgets
        .iter()
        .map(|&budget| {
            let input = DecodeStepInput {
                queries: &instance.queries,
                cache: &cache,
                token_budget: budget,
            };
            let selection = select_step(&input).expect("well-shaped instance");
            let hit = (0..cache.heads()).all(|head| {
                instance
                    .planted
                    .iter()
                    .all(|idx| selection.indices[head].binary_search(idx).is_ok())
            });
            let memory = account_memory(&cache, budget, 4);
            RunMetrics {
                recall_at_budget: recall_at_budget(&instance.queries, &cache, &selection),
                passkey_hit: hit,
                kv_usage_rate: budget as f64 / cache.seq_len() as f64,
                digest_overhead_bytes: memory.digest_overhead_bytes,
                resident_bytes_full: memory.resident_bytes_full,
                resident_bytes_compressed: memory.resident_bytes_compressed,
                boundary_f1: None,
            }
        })
        .collect()
}

/// F1 between predicted and true cut positions with a +-`tolerance`
/// matching window; each true position matches at most one prediction.
pub fn boundary_f1(predicted: &[usize], truth: &[usize], tolerance: usize) -> f64 {
    if predicted.is_empty() && truth.is_empty() {
        return 1.0;
    }
    if predicted.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let mut matched = 0usize;
    let mut t = 0usize;
    for &p in predicted {
        while t < truth.len() && truth[t] + tolerance < p {
            t += 1;
        }
        if t < truth.len() && truth[t].abs_diff(p) <= tolerance {
            matched += 1;
            t += 1;
        }
    }
    let precision = matched as f64 / predicted.len() as f64;
    let recall = matched as f64 / truth.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Boundary-alignment tolerance used by the reversal study: off-by-one cut
/// conventions should not dominate the signal.
pub const BOUNDARY_F1_TOLERANCE: usize = 2;

/// Segments each annotated sequence with the table and with its
/// weight-reversed counterpart; returns mean boundary F1 for (normal,
/// reversed).
pub fn run_reversal_ablation(
    corpus: &[AnnotatedSequence],
    table: &DelimiterTable,
    cfg: &SegmentConfig,
) -> (f64, f64) {
    assert!(!corpus.is_empty(), "empty corpus");
    let reversed = table.reversed();
    let mut normal_sum = 0.0;
    let mut reversed_sum = 0.0;
    for seq in corpus {
        let normal_plan = segment(&seq.tokens, table, cfg).expect("non-empty sequence");
        let reversed_plan = segment(&seq.tokens, &reversed, cfg).expect("non-empty sequence");
        normal_sum += boundary_f1(
            &normal_plan.boundaries(),
            &seq.boundaries,
            BOUNDARY_F1_TOLERANCE,
        );
        reversed_sum += boundary_f1(
            &reversed_plan.boundaries(),
            &seq.boundaries,
            BOUNDARY_F1_TOLERANCE,
        );
    }
    let n = corpus.len() as f64;
    (normal_sum / n, reversed_sum / n)
}

/// Parameters of a multi-seed passkey sweep. The defaults are the desk
/// operating point: narrow heads and small chunks so digest scores
/// separate cleanly, a window wide enough that every position is
/// reachable by some cut, and the usual budget ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct PasskeyConfig {
    pub seq_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub span_len: usize,
    pub strength: f64,
    pub budgets: Vec<usize>,
    pub seg: SegmentConfig,
    pub plan: PlanSource,
    pub seeds: u64,
}

impl Default for PasskeyConfig {
    fn default() -> Self {
        Self {
            seq_len: 10240,
            heads: 4,
            head_dim: 8,
            span_len: 8,
            strength: 10.0,
            budgets: vec![36, 64, 128, 256, 512],
            seg: SegmentConfig {
                chunk_size: 16,
                max_deviation: 14,
                boundary_mix: 0.5,
                boundary_side: crate::segment::BoundarySide::After,
            },
            plan: PlanSource::DdSelect,
            seeds: 100,
        }
    }
}

/// Runs the passkey task across seeds, planting the span at a
/// seed-dependent depth, and returns `(budget, hit_rate)` per budget.
pub fn run_passkey_sweep(cfg: &PasskeyConfig) -> Vec<(usize, f64)> {
    let mut hits = vec![0usize; cfg.budgets.len()];
    for seed in 0..cfg.seeds {
        let mut depth_rng = seeded_rng(seed ^ 0xD1CE);
        let spec = SyntheticSpec {
            seq_len: cfg.seq_len,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            spans: vec![crate::synth::PlantedSpan {
                depth: depth_rng.uniform_in(0.05, 0.95),
                strength: cfg.strength,
                len: cfg.span_len,
            }],
            seed,
        };
        let metrics = run_passkey(&spec, cfg.plan, &cfg.budgets, &cfg.seg);
        for (slot, m) in hits.iter_mut().zip(&metrics) {
            *slot += usize::from(m.passkey_hit);
        }
    }
    cfg.budgets
        .iter()
        .zip(hits)
        .map(|(&b, h)| (b, h as f64 / cfg.seeds as f64))
        .collect()
}

/// Fixed header of the sweep CSV.
pub const BENCH_CSV_HEADER: &str = "seed,S,H,d,C,delta,mix,variant,plan,budget,recall,hit,\
fresh_loads,reused_loads,resident_full,resident_compressed";

/// Parameters of a full sweep over (seed x variant x plan x budget).
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seeds: u64,
    pub seq_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub budgets: Vec<usize>,
    pub seg: SegmentConfig,
    pub steps: usize,
    pub span_len: usize,
    pub strength: f64,
    pub bytes_per_elem: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: 3,
            seq_len: 2048,
            heads: 4,
            head_dim: 8,
            budgets: vec![36, 64, 128, 256, 512],
            seg: SegmentConfig::new(16),
            steps: 8,
            span_len: 8,
            strength: 10.0,
            bytes_per_elem: 4,
        }
    }
}

/// Runs the sweep and renders the CSV. Rows are emitted in canonical
/// (seed, variant, plan, budget) order and the output is byte-reproducible
/// for a fixed config.
pub fn bench_csv(cfg: &BenchConfig) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    let table = passkey_table();
    for seed in 0..cfg.seeds {
        let spec = SyntheticSpec {
            seq_len: cfg.seq_len,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            spans: vec![crate::synth::PlantedSpan {
                depth: 0.3 + 0.4 * (seed as f64 / cfg.seeds.max(1) as f64),
                strength: cfg.strength,
                len: cfg.span_len,
            }],
            seed,
        };
        let instance = gen_synthetic(&spec);
        for variant in [DigestVariant::MinMax, DigestVariant::Mean] {
            for plan_source in [PlanSource::Fixed, PlanSource::DdSelect] {
                let plan = build_plan(plan_source, &instance.tokens, &table, &cfg.seg);
                let cache = attach_digests(instance.kv.clone(), plan, variant)
                    .expect("plan tiles the generated sequence");
                let mut walk_rng = seeded_rng(spec.seed ^ 0x9e3779b97f4a7c15);
                let steps = query_walk(&mut walk_rng, &instance.queries, cfg.steps, 0.05);
                for &budget in &cfg.budgets {
                    let input = DecodeStepInput {
                        queries: &instance.queries,
                        cache: &cache,
                        token_budget: budget,
                    };
                    let selection = select_step(&input).expect("well-shaped instance");
                    let hit = (0..cache.heads()).all(|head| {
                        instance
                            .planted
                            .iter()
                            .all(|idx| selection.indices[head].binary_search(idx).is_ok())
                    });
                    let recall = recall_at_budget(&instance.queries, &cache, &selection);
                    let run = decode_loop(&cache, &steps, budget, true)
                        .expect("well-shaped instance");
                    let fresh: usize = run.stats.iter().map(|s| s.fresh).sum();
                    let reused: usize = run.stats.iter().map(|s| s.reused).sum();
                    let memory = account_memory(&cache, budget, cfg.bytes_per_elem);
                    out.push_str(&format!(
                        "{seed},{},{},{},{},{},{},{variant},{plan_source},{budget},{recall:.6},{},{fresh},{reused},{},{}\n",
                        cfg.seq_len,
                        cfg.heads,
                        cfg.head_dim,
                        cfg.seg.chunk_size,
                        cfg.seg.max_deviation,
                        cfg.seg.boundary_mix,
                        u8::from(hit),
                        memory.resident_bytes_full,
                        memory.resident_bytes_compressed,
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PlantedSpan;

    fn small_spec(seed: u64, strength: f64) -> SyntheticSpec {
        SyntheticSpec {
            seq_len: 512,
            heads: 2,
            head_dim: 8,
            spans: vec![PlantedSpan {
                depth: 0.5,
                strength,
                len: 8,
            }],
            seed,
        }
    }

    #[test]
    fn full_budget_always_hits() {
        let metrics = run_passkey(
            &small_spec(0, 10.0),
            PlanSource::Fixed,
            &[512],
            &SegmentConfig::new(16),
        );
        assert!(metrics[0].passkey_hit);
        assert_eq!(metrics[0].recall_at_budget, 1.0);
        assert_eq!(metrics[0].kv_usage_rate, 1.0);
    }

    #[test]
    fn memory_accounting_closed_form() {
        // Budget = seq_len and zero extra blocks: compressed differs from
        // full only by the digest overhead.
        let spec = small_spec(1, 10.0);
        let instance = gen_synthetic(&spec);
        let plan = SegmentPlan::fixed(512, 16).unwrap();
        let cache = attach_digests(instance.kv, plan, DigestVariant::MinMax).unwrap();
        let m = account_memory(&cache, 512, 4);
        assert_eq!(m.resident_bytes_full, 2 * 2 * 512 * 8 * 4);
        assert_eq!(m.digest_overhead_bytes, 2 * 32 * 2 * 8 * 4);
        assert_eq!(
            m.resident_bytes_compressed,
            m.resident_bytes_full + m.digest_overhead_bytes
        );
    }

    #[test]
    fn mean_digest_overhead_is_half_of_minmax() {
        let spec = small_spec(2, 10.0);
        let instance = gen_synthetic(&spec);
        let plan = SegmentPlan::fixed(512, 16).unwrap();
        let minmax =
            attach_digests(instance.kv.clone(), plan.clone(), DigestVariant::MinMax).unwrap();
        let mean = attach_digests(instance.kv, plan, DigestVariant::Mean).unwrap();
        let a = account_memory(&minmax, 64, 4);
        let b = account_memory(&mean, 64, 4);
        assert_eq!(a.digest_overhead_bytes, 2 * b.digest_overhead_bytes);
    }

    #[test]
    fn boundary_f1_matching_with_tolerance() {
        assert_eq!(boundary_f1(&[10, 20, 30], &[10, 20, 30], 2), 1.0);
        assert_eq!(boundary_f1(&[12, 22, 32], &[10, 20, 30], 2), 1.0);
        assert_eq!(boundary_f1(&[13], &[10], 2), 0.0);
        // One of two predictions lands: precision 0.5, recall 0.5.
        assert_eq!(boundary_f1(&[10, 50], &[10, 20], 2), 0.5);
        assert_eq!(boundary_f1(&[], &[], 2), 1.0);
        assert_eq!(boundary_f1(&[5], &[], 2), 0.0);
    }

    #[test]
    fn single_delimiter_class_makes_reversal_vacuous() {
        let mut rng = seeded_rng(5);
        let cfg = SegmentConfig {
            chunk_size: 32,
            max_deviation: 8,
            boundary_mix: 1.0,
            ..SegmentConfig::new(32)
        };
        // Distractor id equals boundary id: one delimiter class.
        let corpus = crate::synth::gen_boundary_corpus(&mut rng, 3, 300, &cfg, 7, 7);
        let table = crate::synth::boundary_table(7, 9);
        let (normal, reversed) = run_reversal_ablation(&corpus, &table, &cfg);
        assert_eq!(normal, reversed);
    }

    #[test]
    fn bench_csv_is_reproducible() {
        let cfg = BenchConfig {
            seeds: 1,
            seq_len: 256,
            budgets: vec![16, 64],
            steps: 3,
            ..BenchConfig::default()
        };
        let a = bench_csv(&cfg);
        let b = bench_csv(&cfg);
        assert_eq!(a, b);
        assert!(a.starts_with("seed,S,H,d,C,delta,mix,variant,plan,budget"));
        // Header plus 1 seed x 2 variants x 2 plans x 2 budgets.
        assert_eq!(a.trim_end().lines().count(), 1 + 8);
    }
}
