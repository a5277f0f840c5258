//! Command-line driver: delimiter scoring, segmentation, decode-loop
//! simulation, passkey sweeps, the full benchmark matrix, and the
//! weight-reversal ablation.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kvsplit::*;

#[derive(Parser)]
#[command(name = "kvsplit", version, about = "Semantic KV segmentation and budgeted selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Minmax,
    Clamp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    After,
    Before,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanArg {
    Fixed,
    Ddselect,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Minmax,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum CutArg {
    Head,
    Tail,
}

impl From<SideArg> for BoundarySide {
    fn from(side: SideArg) -> Self {
        match side {
            SideArg::After => BoundarySide::After,
            SideArg::Before => BoundarySide::Before,
        }
    }
}

impl From<PlanArg> for PlanSource {
    fn from(plan: PlanArg) -> Self {
        match plan {
            PlanArg::Fixed => PlanSource::Fixed,
            PlanArg::Ddselect => PlanSource::DdSelect,
        }
    }
}

impl From<VariantArg> for DigestVariant {
    fn from(variant: VariantArg) -> Self {
        match variant {
            VariantArg::Minmax => DigestVariant::MinMax,
            VariantArg::Mean => DigestVariant::Mean,
        }
    }
}

impl From<CutArg> for CutSide {
    fn from(cut: CutArg) -> Self {
        match cut {
            CutArg::Head => CutSide::Head,
            CutArg::Tail => CutSide::Tail,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score candidate delimiter positions against an attention tensor and
    /// emit a weight table.
    ScoreDelimiters {
        /// Attention tensor file (ATN1 format).
        #[arg(long)]
        attn: PathBuf,
        /// Token stream (JSONL); the first record must match the tensor's
        /// sequence length.
        #[arg(long)]
        tokens: PathBuf,
        /// JSON array of candidate token ids, e.g. [28723, 28725].
        #[arg(long)]
        candidates: PathBuf,
        /// Future window size.
        #[arg(long, default_value_t = 8)]
        window: usize,
        /// Retained-region size.
        #[arg(long, default_value_t = 128)]
        overlap: usize,
        /// Penalty on dropped-region attention mass.
        #[arg(long, default_value_t = 1.0)]
        penalty: f64,
        /// Weight normalization.
        #[arg(long, value_enum, default_value_t = NormArg::Minmax)]
        norm: NormArg,
        /// Keep full precision instead of rounding weights to tenths.
        #[arg(long)]
        no_round: bool,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment token streams into semantic blocks.
    Segment {
        #[arg(long)]
        tokens: PathBuf,
        /// Delimiter weight table (JSON).
        #[arg(long)]
        weights: PathBuf,
        /// Base chunk size.
        #[arg(long)]
        chunk: usize,
        /// Maximum cut deviation from the ideal chunk end.
        #[arg(long, default_value_t = 14)]
        delta: usize,
        /// Weight/proximity mixing coefficient.
        #[arg(long, default_value_t = 0.5)]
        mix: f64,
        /// Which chunk the chosen delimiter belongs to.
        #[arg(long, value_enum, default_value_t = SideArg::After)]
        boundary_side: SideArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a decode loop on a synthetic workload, streaming per-step load
    /// stats as JSON lines.
    Simulate {
        #[arg(long, default_value_t = 2048)]
        seq_len: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 8)]
        head_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        steps: usize,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        #[arg(long, default_value_t = 16)]
        chunk: usize,
        #[arg(long, default_value_t = 14)]
        delta: usize,
        #[arg(long, default_value_t = 0.5)]
        mix: f64,
        #[arg(long, value_enum, default_value_t = PlanArg::Ddselect)]
        plan: PlanArg,
        #[arg(long, value_enum, default_value_t = VariantArg::Minmax)]
        variant: VariantArg,
        /// Disable cross-step KV reuse accounting.
        #[arg(long)]
        no_reuse: bool,
        /// Planted span depth fraction.
        #[arg(long, default_value_t = 0.5)]
        depth: f64,
        /// Planted span alignment strength.
        #[arg(long, default_value_t = 10.0)]
        strength: f64,
        #[arg(long, default_value_t = 8)]
        span_len: usize,
        /// Per-step query drift for the random walk.
        #[arg(long, default_value_t = 0.05)]
        drift: f64,
        /// Which end of the marginal block survives a mid-block budget cut.
        #[arg(long, value_enum, default_value_t = CutArg::Head)]
        cut_side: CutArg,
        /// Always include the last N token indices in every selection.
        #[arg(long, default_value_t = 0)]
        keep_recent: usize,
        /// Rank tokens across all blocks instead of the top-k blocks only.
        #[arg(long)]
        global_pool: bool,
    },
    /// Sweep token budgets on the planted-span retrieval task.
    Passkey {
        #[arg(long, default_value_t = 10240)]
        seq_len: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 8)]
        head_dim: usize,
        #[arg(long, default_value_t = 8)]
        span_len: usize,
        #[arg(long, default_value_t = 10.0)]
        strength: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![36, 64, 128, 256, 512])]
        budgets: Vec<usize>,
        #[arg(long, value_enum, default_value_t = PlanArg::Ddselect)]
        plan: PlanArg,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 16)]
        chunk: usize,
        #[arg(long, default_value_t = 14)]
        delta: usize,
        #[arg(long, default_value_t = 0.5)]
        mix: f64,
    },
    /// Run the full (seed x variant x plan x budget) sweep and emit CSV.
    Bench {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 2048)]
        seq_len: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 8)]
        head_dim: usize,
        #[arg(long, default_value_t = 16)]
        chunk: usize,
        #[arg(long, default_value_t = 14)]
        delta: usize,
        #[arg(long, default_value_t = 0.5)]
        mix: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![36, 64, 128, 256, 512])]
        budgets: Vec<usize>,
        /// Decode-loop steps per sweep cell.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        span_len: usize,
        #[arg(long, default_value_t = 10.0)]
        strength: f64,
        /// Element width for the byte accounting columns.
        #[arg(long, default_value_t = 4)]
        bytes_per_elem: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare boundary F1 under normal and reversed delimiter weights.
    AblateReversal {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 4)]
        seqs_per_seed: usize,
        #[arg(long, default_value_t = 600)]
        seq_len: usize,
        #[arg(long, default_value_t = 32)]
        chunk: usize,
        #[arg(long, default_value_t = 8)]
        delta: usize,
        /// Mixing coefficient; 1 ranks candidates purely by weight.
        #[arg(long, default_value_t = 1.0)]
        mix: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ScoreDelimiters {
            attn,
            tokens,
            candidates,
            window,
            overlap,
            penalty,
            norm,
            no_round,
            out,
        } => score_delimiters(
            attn, tokens, candidates, window, overlap, penalty, norm, no_round, out,
        ),
        Command::Segment {
            tokens,
            weights,
            chunk,
            delta,
            mix,
            boundary_side,
            out,
        } => run_segment(tokens, weights, chunk, delta, mix, boundary_side, out),
        Command::Simulate {
            seq_len,
            heads,
            head_dim,
            seed,
            steps,
            budget,
            chunk,
            delta,
            mix,
            plan,
            variant,
            no_reuse,
            depth,
            strength,
            span_len,
            drift,
            cut_side,
            keep_recent,
            global_pool,
        } => {
            let opts = SelectOptions {
                blocks_k: None,
                cut_side: cut_side.into(),
                keep_recent,
                global_pool,
            };
            simulate(
                seq_len, heads, head_dim, seed, steps, budget, chunk, delta, mix, plan, variant,
                !no_reuse, depth, strength, span_len, drift, opts,
            )
        }
        Command::Passkey {
            seq_len,
            heads,
            head_dim,
            span_len,
            strength,
            budgets,
            plan,
            seeds,
            chunk,
            delta,
            mix,
        } => passkey(
            seq_len, heads, head_dim, span_len, strength, budgets, plan, seeds, chunk, delta, mix,
        ),
        Command::Bench {
            seeds,
            seq_len,
            heads,
            head_dim,
            chunk,
            delta,
            mix,
            budgets,
            steps,
            span_len,
            strength,
            bytes_per_elem,
            out,
        } => bench(
            seeds, seq_len, heads, head_dim, chunk, delta, mix, budgets, steps, span_len,
            strength, bytes_per_elem, out,
        ),
        Command::AblateReversal {
            seeds,
            seqs_per_seed,
            seq_len,
            chunk,
            delta,
            mix,
        } => ablate_reversal(seeds, seqs_per_seed, seq_len, chunk, delta, mix),
    }
}

fn seg_config(chunk: usize, delta: usize, mix: f64, side: BoundarySide) -> Result<SegmentConfig> {
    let cfg = SegmentConfig {
        chunk_size: chunk,
        max_deviation: delta,
        boundary_mix: mix,
        boundary_side: side,
    };
    cfg.validate()
        .with_context(|| "invalid segmentation parameters")?;
    Ok(cfg)
}

fn emit(out: Option<PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(contents.as_bytes())?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_delimiters(
    attn: PathBuf,
    tokens: PathBuf,
    candidates: PathBuf,
    window: usize,
    overlap: usize,
    penalty: f64,
    norm: NormArg,
    no_round: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let tensor = kvsplit::io::read_attention(&attn)
        .with_context(|| format!("reading {}", attn.display()))?;
    validate_attention(&tensor).context("attention tensor failed validation")?;
    let sequences = kvsplit::io::read_token_sequences(&tokens)
        .with_context(|| format!("reading {}", tokens.display()))?;
    let Some(seq) = sequences.first() else {
        bail!("token stream {} is empty", tokens.display());
    };
    if seq.len() != tensor.seq_len() {
        bail!(
            "token stream holds {} tokens but the tensor covers {}",
            seq.len(),
            tensor.seq_len()
        );
    }
    let ids = kvsplit::io::read_candidate_ids(&candidates)
        .with_context(|| format!("reading {}", candidates.display()))?;
    let positions: Vec<usize> = seq
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, token)| ids.contains(token))
        .map(|(pos, _)| pos)
        .collect();
    if positions.is_empty() {
        bail!("no candidate token id occurs in the stream");
    }

    let cfg = ScoringConfig {
        future_window: window,
        overlap_size: overlap,
        penalty,
    };
    let scores = score_positions(&tensor, &positions, &cfg)?;
    let opts = TableBuildOptions {
        normalization: match norm {
            NormArg::Minmax => Normalization::MinMax,
            NormArg::Clamp => Normalization::Clamp,
        },
        round_to_tenths: !no_round,
    };
    let table = build_table(&scores, seq, &opts)?;
    emit(out, &kvsplit::io::delimiter_table_to_json(&table))
}

fn run_segment(
    tokens: PathBuf,
    weights: PathBuf,
    chunk: usize,
    delta: usize,
    mix: f64,
    side: SideArg,
    out: Option<PathBuf>,
) -> Result<()> {
    let sequences = kvsplit::io::read_token_sequences(&tokens)
        .with_context(|| format!("reading {}", tokens.display()))?;
    if sequences.is_empty() {
        bail!("token stream {} is empty", tokens.display());
    }
    let table = kvsplit::io::read_delimiter_table(&weights)
        .with_context(|| format!("reading {}", weights.display()))?;
    let cfg = seg_config(chunk, delta, mix, side.into())?;

    let mut output = String::new();
    for seq in &sequences {
        let plan = segment(seq, &table, &cfg)?;
        let spans: Vec<(usize, usize)> =
            plan.spans.iter().map(|s| (s.start, s.end)).collect();
        output.push_str(&serde_json::to_string(&serde_json::json!({ "spans": spans }))?);
        output.push('\n');
    }
    emit(out, &output)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    seq_len: usize,
    heads: usize,
    head_dim: usize,
    seed: u64,
    steps: usize,
    budget: usize,
    chunk: usize,
    delta: usize,
    mix: f64,
    plan: PlanArg,
    variant: VariantArg,
    reuse: bool,
    depth: f64,
    strength: f64,
    span_len: usize,
    drift: f64,
) -> Result<()> {
    let cfg = seg_config(chunk, delta, mix, BoundarySide::After)?;
    let spec = SyntheticSpec {
        seq_len,
        heads,
        head_dim,
        spans: vec![PlantedSpan {
            depth,
            strength,
            len: span_len,
        }],
        seed,
    };
    let instance = gen_synthetic(&spec);
    let plan = build_plan(plan.into(), &instance.tokens, &kvsplit::synth::passkey_table(), &cfg);
    let cache = attach_digests(instance.kv, plan, variant.into())?;
    let mut walk_rng = seeded_rng(seed ^ 0x9e3779b97f4a7c15);
    let queries = kvsplit::synth::query_walk(&mut walk_rng, &instance.queries, steps, drift);
    let run = decode_loop(&cache, &queries, budget, reuse)?;

    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for stats in &run.stats {
        serde_json::to_writer(&mut lock, stats)?;
        lock.write_all(b"\n")?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn passkey(
    seq_len: usize,
    heads: usize,
    head_dim: usize,
    span_len: usize,
    strength: f64,
    budgets: Vec<usize>,
    plan: PlanArg,
    seeds: u64,
    chunk: usize,
    delta: usize,
    mix: f64,
) -> Result<()> {
    let cfg = PasskeyConfig {
        seq_len,
        heads,
        head_dim,
        span_len,
        strength,
        budgets,
        seg: seg_config(chunk, delta, mix, BoundarySide::After)?,
        plan: plan.into(),
        seeds,
    };
    let sweep = run_passkey_sweep(&cfg);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for (budget, hit_rate) in sweep {
        serde_json::to_writer(
            &mut lock,
            &serde_json::json!({
                "budget": budget,
                "plan": cfg.plan.to_string(),
                "trials": cfg.seeds,
                "hit_rate": hit_rate,
            }),
        )?;
        lock.write_all(b"\n")?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    seeds: u64,
    seq_len: usize,
    heads: usize,
    head_dim: usize,
    chunk: usize,
    delta: usize,
    mix: f64,
    budgets: Vec<usize>,
    steps: usize,
    span_len: usize,
    strength: f64,
    bytes_per_elem: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = BenchConfig {
        seeds,
        seq_len,
        heads,
        head_dim,
        budgets,
        seg: seg_config(chunk, delta, mix, BoundarySide::After)?,
        steps,
        span_len,
        strength,
        bytes_per_elem,
    };
    emit(out, &bench_csv(&cfg))
}

fn ablate_reversal(
    seeds: u64,
    seqs_per_seed: usize,
    seq_len: usize,
    chunk: usize,
    delta: usize,
    mix: f64,
) -> Result<()> {
    let cfg = seg_config(chunk, delta, mix, BoundarySide::After)?;
    let table = kvsplit::synth::boundary_table(7, 9);
    let mut normal_sum = 0.0;
    let mut reversed_sum = 0.0;
    for seed in 0..seeds {
        let mut rng = seeded_rng(seed);
        let corpus =
            kvsplit::synth::gen_boundary_corpus(&mut rng, seqs_per_seed, seq_len, &cfg, 7, 9);
        let (normal, reversed) = run_reversal_ablation(&corpus, &table, &cfg);
        normal_sum += normal;
        reversed_sum += reversed;
    }
    let normal = normal_sum / seeds as f64;
    let reversed = reversed_sum / seeds as f64;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer(
        &mut lock,
        &serde_json::json!({
            "seeds": seeds,
            "f1_normal": normal,
            "f1_reversed": reversed,
            "gap": normal - reversed,
        }),
    )?;
    lock.write_all(b"\n")?;
    Ok(())
}
