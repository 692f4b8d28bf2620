use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use multishot::bench::{self, BenchConfig, Fault, Precision, SummaryKind, VerifyConfig};
use multishot::curation::{
    self, CurationSample, FilterPolicy, HierarchicalPrompt, SampleRecord, SourceShot,
};
use multishot::metrics::{self, EmbeddingProvider, SyntheticEmbeddings, TableEmbeddings};
use multishot::{
    build_cross_mask, plan_to_dense_mask, sparse_flops, CutList, PenaltyPolicy, PlanMode,
    PromptLayout, ShotSpec, SparsePlan, TokenLayout,
};

#[derive(Parser)]
#[command(name = "multishot", version, about = "Multi-shot attention, curation and metric tools")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print attention masks and packed plans for a small layout.
    DemoAttn(DemoArgs),
    /// Check the sparse and windowed kernels against the masked-dense oracle.
    Verify(VerifyArgs),
    /// FLOP and wall-time scaling table as CSV.
    Bench(BenchArgs),
    /// Filter a shot manifest and assemble duration-tier samples.
    Assemble(AssembleArgs),
    /// Render or parse hierarchical prompts.
    Prompt {
        #[command(subcommand)]
        action: PromptAction,
    },
    /// Detect cuts in a per-frame luminance signal.
    DetectCuts(DetectArgs),
    /// Score predicted cuts against ground truth.
    ScoreSca(ScaArgs),
    /// Embedding-based consistency scores.
    ScoreConsistency(ConsistencyArgs),
}

#[derive(Args)]
struct DemoArgs {
    /// Shots as FRAMESxTOKENS_PER_FRAME, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2x2,1x2,2x1", value_parser = parse_shot)]
    shots: Vec<ShotSpec>,
    /// first-frame or first-and-last-frame.
    #[arg(long, default_value = "first-frame")]
    summary: SummaryKind,
    /// dedupe or literal.
    #[arg(long, default_value = "dedupe")]
    mode: PlanMode,
    /// Tokens in the global prompt.
    #[arg(long, default_value_t = 2)]
    global_tokens: usize,
    /// Text tokens per shot prompt; defaults to 2 per shot.
    #[arg(long, value_delimiter = ',')]
    shot_tokens: Option<Vec<usize>>,
    /// Tokens spent on each delimiter between shot prompts.
    #[arg(long, default_value_t = 1)]
    delimiter_tokens: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// TOML file with any verify settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cases: Option<usize>,
    /// single or double.
    #[arg(long)]
    precision: Option<Precision>,
    /// Corrupt each multi-shot plan by dropping one summary key.
    #[arg(long)]
    inject_fault: bool,
    /// Print the full report as JSON instead of a summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML file with any bench settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shot counts to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_shots: Option<Vec<usize>>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    tokens_per_frame: Option<usize>,
    #[arg(long)]
    summary: Option<SummaryKind>,
    #[arg(long)]
    mode: Option<PlanMode>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reject points whose full sequence is longer than this.
    #[arg(long)]
    max_dense_tokens: Option<usize>,
    /// Only count FLOPs; skip timing.
    #[arg(long)]
    no_timing: bool,
    /// Write CSV here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AssembleArgs {
    /// Shot manifest, one JSON record per line ("-" for stdin).
    #[arg(short, long, default_value = "-")]
    input: PathBuf,
    /// Sample records, one JSON record per line (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Duration tiers in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = curation::DEFAULT_TIERS_S)]
    tiers: Vec<f64>,
    /// Tolerance as a fraction of each tier.
    #[arg(long, default_value_t = curation::DEFAULT_TOLERANCE_FRACTION)]
    tolerance: f64,
    #[arg(long, default_value_t = curation::DEFAULT_MAX_SHOTS)]
    max_shots: usize,
    #[arg(long, default_value_t = FilterPolicy::default().min_duration_s)]
    min_duration: f64,
    #[arg(long, default_value_t = FilterPolicy::default().min_luminance)]
    min_luminance: f64,
    #[arg(long, default_value_t = FilterPolicy::default().min_aesthetic)]
    min_aesthetic: f64,
    /// Global description; with it, samples whose shots all carry captions get a prompt.
    #[arg(long)]
    global_caption: Option<String>,
}

#[derive(Subcommand)]
enum PromptAction {
    /// Print the prompt text for a global description and shot descriptions.
    Render {
        #[arg(long)]
        global: String,
        /// One per shot, in order.
        #[arg(long = "shot", required = true)]
        shots: Vec<String>,
    },
    /// Parse prompt text into JSON.
    Parse {
        /// File with the prompt text ("-" for stdin).
        #[arg(default_value = "-")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct DetectArgs {
    /// One value per line, or a JSON list ("-" for stdin).
    #[arg(default_value = "-")]
    input: PathBuf,
    /// Absolute frame-to-frame change that counts as a cut.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
}

#[derive(Args)]
struct ScaArgs {
    /// Predicted cut list, {"f_total": N, "cuts": [...]}.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth cut list.
    #[arg(long)]
    gt: PathBuf,
    /// Fixed cost per unmatched cut instead of the mean ground-truth shot length.
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Args)]
struct ConsistencyArgs {
    /// Job file naming the segments to compare (JSON).
    job: PathBuf,
    /// JSON object mapping segment ids to vectors.
    #[arg(long, conflicts_with = "synthetic_dim")]
    embeddings: Option<PathBuf>,
    /// Use deterministic pseudo-random vectors of this dimension.
    #[arg(long)]
    synthetic_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Which segments to score; every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsistencyJob {
    /// Shot ids plus groups of indices into them depicting the same subject.
    inter: Option<InterJob>,
    /// Frame ids of each shot.
    #[serde(default)]
    intra: Vec<Vec<String>>,
    /// Prompt ids aligned with media ids.
    semantic: Option<SemanticJob>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterJob {
    shots: Vec<String>,
    groups: Vec<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemanticJob {
    prompts: Vec<String>,
    media: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ConsistencyReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    inter_shot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intra_shot: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    intra_shot_per_shot: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semantic: Option<f64>,
}

enum Outcome {
    Success,
    VerificationFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::DemoAttn(args) => demo_attn(args),
        Command::Verify(args) => verify(args),
        Command::Bench(args) => run_bench(args),
        Command::Assemble(args) => assemble(args),
        Command::Prompt { action } => prompt(action),
        Command::DetectCuts(args) => detect_cuts(args),
        Command::ScoreSca(args) => score_sca(args),
        Command::ScoreConsistency(args) => score_consistency(args),
    }
    .map(|()| Outcome::Success)
    .or_else(|e| match e.downcast::<VerificationFailed>() {
        Ok(_) => Ok(Outcome::VerificationFailed),
        Err(e) => Err(e),
    })
}

#[derive(Debug)]
struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

fn parse_shot(s: &str) -> Result<ShotSpec, String> {
    let (frames, tpf) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected FRAMESxTOKENS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    ShotSpec::new(parse(frames)?, parse(tpf)?).map_err(|e| e.to_string())
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text).context("reading stdin")?;
        Ok(text)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn demo_attn(args: DemoArgs) -> Result<()> {
    let layout = TokenLayout::new(args.shots)?;
    let plan = SparsePlan::new(&layout, args.summary.strategy(), args.mode)?;
    let shot_tokens = args
        .shot_tokens
        .unwrap_or_else(|| vec![2; layout.num_shots()]);
    let prompt = PromptLayout::from_counts(args.global_tokens, &shot_tokens, args.delimiter_tokens)?;

    let mut out = io::stdout().lock();
    writeln!(out, "video layout: {} shots, {} tokens", layout.num_shots(), layout.total_tokens())?;
    for (i, (spec, range)) in layout.shots().iter().zip(layout.ranges()).enumerate() {
        writeln!(
            out,
            "  shot {i}: {} frames x {} tokens -> [{}, {})",
            spec.frames, spec.tokens_per_frame, range.start, range.end
        )?;
    }
    writeln!(out, "\nsummary tokens ({:?}):", args.summary)?;
    for (i, s) in plan.summaries().iter().enumerate() {
        writeln!(out, "  shot {i}: {s:?}")?;
    }

    writeln!(out, "\nsparse self-attention plan ({}):", plan.mode())?;
    for seg in plan.manifest() {
        writeln!(
            out,
            "  shot {} queries [{}, {}) kv offset {}: {:?}",
            seg.shot, seg.query_start, seg.query_end, seg.kv_offset, seg.kv
        )?;
    }
    writeln!(out, "  packed offsets: {:?}", plan.offsets())?;
    match plan_to_dense_mask(&plan) {
        Ok(mask) => write!(out, "\nself-attention mask (rows = queries, # = attended):\n{}", mask.render())?,
        Err(e) => writeln!(out, "\nself-attention mask: {e}")?,
    }

    writeln!(out, "\ntext layout: {} tokens, global {:?}", prompt.text_len(), prompt.global())?;
    for (i, r) in prompt.shots().iter().enumerate() {
        writeln!(out, "  shot {i} text {r:?}")?;
    }
    for r in prompt.delimiters() {
        writeln!(out, "  delimiter {r:?}")?;
    }
    let cross = build_cross_mask(&layout, &prompt)?;
    write!(out, "\ncross-attention mask (rows = video tokens, cols = text tokens):\n{}", cross.render())?;

    let flops = sparse_flops(&plan, 1);
    writeln!(
        out,
        "\nFLOPs per unit head dim: sparse {} / dense {} (ratio {:.3})",
        flops.total,
        flops.dense,
        flops.dense_to_sparse_ratio()
    )?;
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let mut config: VerifyConfig = load_toml(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(cases) = args.cases {
        config.cases = cases;
    }
    if let Some(precision) = args.precision {
        config.precision = precision;
    }
    if args.inject_fault {
        config.fault = Some(Fault::DropSummaryKey);
    }
    if config.cases == 0 {
        bail!("cases must be at least 1");
    }

    let report = bench::verify_equivalence(&config)?;
    let mut out = io::stdout().lock();
    if args.json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        writeln!(
            out,
            "{} cases, {} precision (tolerance {:e}): sparse max diff {:.3e}, window max diff {:.3e}",
            report.cases,
            report.precision,
            report.tolerance,
            report.max_diff_sparse,
            report.max_diff_window
        )?;
        for f in &report.failures {
            let injected = report.injected.get(f.case).copied().flatten();
            writeln!(
                out,
                "  case {} {:?}: max diff {:.3e}, query shot {:?}, key shot {:?}{}",
                f.case,
                f.check,
                f.max_diff,
                f.query_shot,
                f.key_shot,
                injected.map_or(String::new(), |(q, k)| format!(" (injected {q}->{k})"))
            )?;
        }
        writeln!(out, "{}", if report.passed { "PASS" } else { "FAIL" })?;
    }
    out.flush()?;
    if report.passed {
        Ok(())
    } else {
        Err(VerificationFailed.into())
    }
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let mut config: BenchConfig = load_toml(args.config.as_deref())?;
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { config.$field = v; })*
        };
    }
    apply!(n_shots, frames, tokens_per_frame, summary, mode, d, precision, repetitions, seed, max_dense_tokens);
    if args.no_timing {
        config.timing = false;
    }
    let rows = bench::bench_scaling(&config)?;
    let mut out = open_output(args.output.as_deref())?;
    bench::write_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn assemble(args: AssembleArgs) -> Result<()> {
    if !(args.tolerance >= 0.0 && args.tolerance < 1.0) {
        bail!("tolerance fraction must be in [0, 1), got {}", args.tolerance);
    }
    let policy = FilterPolicy {
        min_duration_s: args.min_duration,
        min_luminance: args.min_luminance,
        min_aesthetic: args.min_aesthetic,
    };
    let text = read_input(&args.input)?;
    let mut shots = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let shot: SourceShot =
            serde_json::from_str(line).with_context(|| format!("manifest line {}", n + 1))?;
        shot.validate().with_context(|| format!("manifest line {}", n + 1))?;
        shots.push(shot);
    }

    let outcome = curation::filter_shots(shots, &policy);
    for (shot, reason) in &outcome.rejected {
        log::info!("rejected {}: {reason:?}", shot.id);
    }
    log::info!("kept {} shots, rejected {}", outcome.kept.len(), outcome.rejected.len());

    // group by source in order of first appearance; each source is independent
    let mut sources: Vec<(String, Vec<SourceShot>)> = Vec::new();
    for shot in outcome.kept {
        match sources.iter_mut().find(|(id, _)| *id == shot.source_id) {
            Some((_, group)) => group.push(shot),
            None => sources.push((shot.source_id.clone(), vec![shot])),
        }
    }
    for (_, group) in &mut sources {
        group.sort_by_key(|s| s.start_frame);
    }

    let per_source: Vec<Vec<SampleRecord>> = sources
        .par_iter()
        .map(|(source, group)| {
            let mut records = Vec::new();
            for &tier in &args.tiers {
                let samples = curation::assemble_samples(group, tier, args.tolerance * tier, args.max_shots)?;
                for (i, sample) in samples.into_iter().enumerate() {
                    let sample: CurationSample = match &args.global_caption {
                        Some(global) => sample.with_caption_prompt(global)?,
                        None => sample,
                    };
                    records.push(SampleRecord::from_sample(format!("{source}-{tier}s-{i:04}"), &sample)?);
                }
            }
            Ok(records)
        })
        .collect::<multishot::Result<_>>()?;

    let mut out = open_output(args.output.as_deref())?;
    for record in per_source.iter().flatten() {
        serde_json::to_writer(&mut out, record)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn prompt(action: PromptAction) -> Result<()> {
    match action {
        PromptAction::Render { global, shots } => {
            let prompt = HierarchicalPrompt::new(global, shots)?;
            println!("{}", prompt.render()?);
        }
        PromptAction::Parse { input } => {
            let text = read_input(&input)?;
            // a single trailing newline is an artifact of files and echo, not prompt content
            let text = text.strip_suffix('\n').unwrap_or(&text);
            let prompt = HierarchicalPrompt::parse(text)?;
            println!("{}", serde_json::to_string_pretty(&prompt)?);
        }
    }
    Ok(())
}

fn parse_signal(text: &str) -> Result<Vec<f64>> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).context("parsing signal as a JSON list");
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("signal line {}", n + 1))
        })
        .collect()
}

fn detect_cuts(args: DetectArgs) -> Result<()> {
    let signal = parse_signal(&read_input(&args.input)?)?;
    let cuts = curation::detect_cuts(&signal, args.threshold)?;
    println!("{}", serde_json::to_string(&cuts)?);
    Ok(())
}

fn read_cut_list(path: &Path) -> Result<CutList> {
    serde_json::from_str(&read_input(path)?).with_context(|| format!("parsing cut list {}", path.display()))
}

fn score_sca(args: ScaArgs) -> Result<()> {
    let pred = read_cut_list(&args.pred)?;
    let gt = read_cut_list(&args.gt)?;
    let policy = args.penalty.map_or(PenaltyPolicy::default(), PenaltyPolicy::Fixed);
    let report = metrics::shot_cut_accuracy(&pred, &gt, policy)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Embeds `ids`, in parallel only when the provider allows concurrent queries.
fn embed(provider: &(dyn EmbeddingProvider + Sync), ids: &[String]) -> Result<Vec<Vec<f64>>> {
    let vectors = if provider.supports_concurrent_queries() {
        ids.par_iter().map(|id| provider.embed(id)).collect::<multishot::Result<_>>()?
    } else {
        provider.embed_all(ids)?
    };
    Ok(vectors)
}

fn score_consistency(args: ConsistencyArgs) -> Result<()> {
    let job: ConsistencyJob =
        serde_json::from_str(&read_input(&args.job)?).context("parsing consistency job")?;
    let provider: Box<dyn EmbeddingProvider + Sync> = match (&args.embeddings, args.synthetic_dim) {
        (Some(path), _) => Box::new(TableEmbeddings::from_json(&read_input(path)?)?),
        (None, Some(dim)) => Box::new(SyntheticEmbeddings { dim, seed: args.seed }),
        (None, None) => bail!("pass --embeddings FILE or --synthetic-dim N"),
    };
    let provider = provider.as_ref();

    let mut report = ConsistencyReport {
        inter_shot: None,
        intra_shot: None,
        intra_shot_per_shot: Vec::new(),
        semantic: None,
    };
    if let Some(inter) = &job.inter {
        let vectors = embed(provider, &inter.shots)?;
        report.inter_shot = Some(metrics::inter_shot_consistency(&vectors, &inter.groups)?);
    }
    for frames in &job.intra {
        let vectors = embed(provider, frames)?;
        report.intra_shot_per_shot.push(metrics::intra_shot_consistency(&vectors)?);
    }
    if !report.intra_shot_per_shot.is_empty() {
        let n = report.intra_shot_per_shot.len() as f64;
        report.intra_shot = Some(report.intra_shot_per_shot.iter().sum::<f64>() / n);
    }
    if let Some(semantic) = &job.semantic {
        let prompts = embed(provider, &semantic.prompts)?;
        let media = embed(provider, &semantic.media)?;
        report.semantic = Some(metrics::per_shot_semantic_consistency(&prompts, &media)?);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
