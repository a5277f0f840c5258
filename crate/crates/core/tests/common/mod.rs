//! Brute-force oracles shared by the oracle and acceptance suites. Each
//! is written directly from the operation's definition, independent of
//! the library implementation it checks.

#![allow(dead_code)]

use kvsplit::*;

/// Naive delimiter scorer: loops over every (layer, head, query, key) and
/// tests region membership per key. Returns (score, overlap, drop), or
/// None for an empty future window.
pub fn naive_score(
    attn: &AttentionTensor,
    position: usize,
    window: usize,
    overlap: usize,
    penalty: f64,
) -> Option<(f64, f64, f64)> {
    let s = attn.seq_len();
    let future_hi = (position + window).min(s - 1);
    if position + 1 > future_hi {
        return None;
    }
    let mut overlap_sum = 0.0;
    let mut drop_sum = 0.0;
    let mut triples = 0usize;
    for l in 0..attn.layers() {
        for h in 0..attn.heads() {
            for q in position + 1..=future_hi {
                triples += 1;
                for k in 0..s {
                    let a = attn.get(l, h, q, k);
                    let retained_lo = (position + 1).saturating_sub(overlap);
                    if k >= retained_lo && k <= position {
                        overlap_sum += a;
                    }
                    if position >= overlap && k + overlap <= position {
                        drop_sum += a;
                    }
                }
            }
        }
    }
    let overlap_mass = overlap_sum / triples as f64;
    let drop_mass = drop_sum / triples as f64;
    Some((overlap_mass - penalty * drop_mass, overlap_mass, drop_mass))
}

/// Independent segmenter: scans every sequence position per step, filters
/// by the window rule, and maximizes the combined score with explicit tie
/// handling.
pub fn naive_segment(
    seq: &TokenSequence,
    table: &DelimiterTable,
    cfg: &SegmentConfig,
) -> Vec<(usize, usize)> {
    let len = seq.len();
    let mut spans = Vec::new();
    let mut cursor = 0usize;
    while cursor < len {
        let ideal = cursor + cfg.chunk_size;
        if ideal >= len {
            spans.push((cursor, len));
            break;
        }
        let mut best_pos = None;
        let mut best_score = f64::NEG_INFINITY;
        for pos in 0..len {
            if pos <= cursor || pos >= len {
                continue;
            }
            if pos + cfg.max_deviation < ideal || pos > ideal + cfg.max_deviation {
                continue;
            }
            let cut = match cfg.boundary_side {
                BoundarySide::After => pos + 1,
                BoundarySide::Before => pos,
            };
            // The cut itself may deviate by at most max_deviation.
            if cut > ideal + cfg.max_deviation {
                continue;
            }
            let Some(weight) = table.weight(seq.tokens[pos]) else {
                continue;
            };
            let proximity =
                1.0 - (pos.abs_diff(ideal) as f64) / (cfg.max_deviation as f64 + 1.0);
            let combined = cfg.boundary_mix * weight + (1.0 - cfg.boundary_mix) * proximity;
            if combined > best_score {
                best_score = combined;
                best_pos = Some(pos);
            }
        }
        let end = match (best_pos, cfg.boundary_side) {
            (Some(pos), BoundarySide::After) => pos + 1,
            (Some(pos), BoundarySide::Before) => pos,
            (None, _) => ideal,
        };
        spans.push((cursor, end));
        cursor = end;
    }
    spans
}

/// Materializes (score, token) pairs for all tokens of selected blocks and
/// stable-sorts by score descending (token index breaks ties by
/// stability).
pub fn naive_map(
    selected: &[usize],
    scores: &[BlockScore],
    plan: &SegmentPlan,
    budget: usize,
) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = Vec::new();
    for &block in selected {
        let span = plan.spans[block];
        for token in span.start..span.end {
            pairs.push((scores[block].score, token));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = pairs.into_iter().take(budget).map(|(_, t)| t).collect();
    chosen.sort_unstable();
    chosen
}

/// Plain softmax attention without max-subtraction, written directly from
/// the definition. `allowed = None` attends to the full context.
pub fn naive_attention(
    query: &[f64],
    cache: &KvCache,
    head: usize,
    allowed: Option<&[usize]>,
    scale: f64,
) -> Vec<f64> {
    let kv = cache.kv();
    let s = cache.seq_len();
    let allowed: Vec<usize> = match allowed {
        Some(list) => list.to_vec(),
        None => (0..s).collect(),
    };
    let mut numer = vec![0.0; cache.head_dim()];
    let mut denom = 0.0;
    for &pos in &allowed {
        let mut logit = 0.0;
        for (j, &q) in query.iter().enumerate() {
            logit += q * kv.key(head, pos)[j];
        }
        let w = (logit * scale).exp();
        denom += w;
        for (j, slot) in numer.iter_mut().enumerate() {
            *slot += w * kv.value(head, pos)[j];
        }
    }
    numer.into_iter().map(|x| x / denom).collect()
}

pub fn table_of(entries: &[(u32, f64)]) -> DelimiterTable {
    DelimiterTable::new(entries.iter().copied().collect()).unwrap()
}

/// Random variable-length plan over `[0, total)`.
pub fn random_plan(rng: &mut SeededRng, total: usize) -> SegmentPlan {
    let chunk = 4 + rng.below(29);
    let dev = rng.below(chunk.min(8));
    let mut spans = Vec::new();
    let mut start = 0usize;
    while start < total {
        let lo = chunk - dev;
        let hi = (chunk + dev).min(total - start);
        let len = if lo >= hi { hi } else { lo + rng.below(hi - lo + 1) };
        let len = len.max(1);
        spans.push(Span::new(start, start + len));
        start += len;
    }
    SegmentPlan::new(spans, chunk, dev).unwrap()
}

/// Random (sequence, table, config) triple for segmentation trials.
pub fn random_instance(
    rng: &mut SeededRng,
    max_len: usize,
) -> (TokenSequence, DelimiterTable, SegmentConfig) {
    let len = 1 + rng.below(max_len);
    let id_pool: Vec<u32> = (0..6).map(|i| i * 3 + 1).collect();
    let table = DelimiterTable::new(
        id_pool
            .iter()
            .map(|&id| (id, (rng.below(11) as f64) / 10.0))
            .collect(),
    )
    .unwrap();
    let tokens: Vec<u32> = (0..len)
        .map(|_| {
            if rng.below(4) == 0 {
                id_pool[rng.below(id_pool.len())]
            } else {
                100 + rng.below(20) as u32
            }
        })
        .collect();
    let chunk_size = 8 + rng.below(249);
    let cfg = SegmentConfig {
        chunk_size,
        max_deviation: rng.below(chunk_size),
        boundary_mix: rng.uniform(),
        boundary_side: if rng.below(2) == 0 {
            BoundarySide::After
        } else {
            BoundarySide::Before
        },
    };
    (TokenSequence::new(tokens), table, cfg)
}

/// Random cache with no planted structure, plus matching queries.
pub fn random_cache(
    seed: u64,
    s: usize,
    heads: usize,
    d: usize,
    chunk: usize,
) -> (KvCache, Vec<Vec<f64>>) {
    let spec = SyntheticSpec {
        seq_len: s,
        heads,
        head_dim: d,
        spans: vec![],
        seed,
    };
    let instance = gen_synthetic(&spec);
    let plan = SegmentPlan::fixed(s, chunk).unwrap();
    let cache = attach_digests(instance.kv, plan, DigestVariant::MinMax).unwrap();
    (cache, instance.queries)
}
