//! Scaling benchmarks and the randomized equivalence harness.
//!
//! Random inputs come from `ChaCha8Rng::seed_from_u64(seed)` with the stream
//! number set to the benchmark point or verification case index; values are
//! drawn with `rand_distr::StandardNormal`.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{default_scale, dense_attention, masked_dense_attention, BoolMask, Matrix, Scalar};
use crate::error::{Error, Result};
use crate::layout::{ShotSpec, SummaryStrategy, TokenLayout};
use crate::sparse::{reference_sparse_mask, sparse_flops, sparse_self_attention, PlanMode, SparsePlan};
use crate::window::{build_cross_mask, window_cross_attention, PromptLayout};

pub const DOUBLE_TOLERANCE: f64 = 1e-10;
pub const SINGLE_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MAX_DENSE_TOKENS: usize = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl Precision {
    /// Allowed max-abs-diff against the double-precision reference.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Single => SINGLE_TOLERANCE,
            Precision::Double => DOUBLE_TOLERANCE,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::InvalidParameter(format!("unknown precision {other:?}"))),
        }
    }
}

/// Summary selection usable for layouts of any shot count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryKind {
    #[default]
    FirstFrame,
    FirstAndLastFrame,
}

impl SummaryKind {
    pub fn strategy(self) -> SummaryStrategy {
        match self {
            SummaryKind::FirstFrame => SummaryStrategy::FirstFrame,
            SummaryKind::FirstAndLastFrame => SummaryStrategy::FirstAndLastFrame,
        }
    }
}

impl std::str::FromStr for SummaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-frame" => Ok(SummaryKind::FirstFrame),
            "first-and-last-frame" => Ok(SummaryKind::FirstAndLastFrame),
            other => Err(Error::InvalidParameter(format!("unknown summary strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_shots: Vec<usize>,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub summary: SummaryKind,
    pub mode: PlanMode,
    pub d: usize,
    pub precision: Precision,
    pub repetitions: usize,
    pub seed: u64,
    /// Largest full sequence length a point may have.
    pub max_dense_tokens: usize,
    /// Measure wall times; when false only FLOP columns are filled.
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_shots: vec![1, 2, 4, 8],
            frames: 16,
            tokens_per_frame: 16,
            summary: SummaryKind::FirstFrame,
            mode: PlanMode::Dedupe,
            d: 32,
            precision: Precision::Single,
            repetitions: 3,
            seed: 0,
            max_dense_tokens: DEFAULT_MAX_DENSE_TOKENS,
            timing: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frames", self.frames),
            ("tokens_per_frame", self.tokens_per_frame),
            ("d", self.d),
            ("repetitions", self.repetitions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
        }
        if self.n_shots.is_empty() || self.n_shots.contains(&0) {
            return Err(Error::InvalidParameter(
                "n_shots must be a non-empty list of positive counts".into(),
            ));
        }
        for &n in &self.n_shots {
            let l = n * self.frames * self.tokens_per_frame;
            if l > self.max_dense_tokens {
                return Err(Error::ConfigTooLarge(format!(
                    "{n} shots give {l} tokens, above the limit of {}",
                    self.max_dense_tokens
                )));
            }
        }
        Ok(())
    }
}

/// One CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_shots: usize,
    pub l_shot: usize,
    pub tpf: usize,
    pub s: usize,
    pub d: usize,
    pub mode: PlanMode,
    pub precision: Precision,
    pub flops_sparse: u64,
    pub flops_dense: u64,
    pub wall_ms_sparse: Option<f64>,
    pub wall_ms_dense: Option<f64>,
}

pub const CSV_HEADER: &str = "n_shots,l_shot,tpf,s,d,mode,precision,flops_sparse,flops_dense,wall_ms_sparse,wall_ms_dense";

pub fn bench_scaling(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    config.n_shots.iter().map(|&n| bench_point(config, n)).collect()
}

fn bench_point(config: &BenchConfig, n_shots: usize) -> Result<BenchRow> {
    let spec = ShotSpec::new(config.frames, config.tokens_per_frame)?;
    let layout = TokenLayout::uniform(n_shots, spec)?;
    let plan = SparsePlan::new(&layout, config.summary.strategy(), config.mode)?;
    let flops = sparse_flops(&plan, config.d);
    let (wall_ms_sparse, wall_ms_dense) = if config.timing {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(n_shots as u64);
        let (s, d) = match config.precision {
            Precision::Single => time_point::<f32>(&plan, config.d, config.repetitions, &mut rng)?,
            Precision::Double => time_point::<f64>(&plan, config.d, config.repetitions, &mut rng)?,
        };
        (Some(s), Some(d))
    } else {
        (None, None)
    };
    Ok(BenchRow {
        n_shots,
        l_shot: spec.len(),
        tpf: spec.tokens_per_frame,
        s: plan.summaries()[0].len(),
        d: config.d,
        mode: config.mode,
        precision: config.precision,
        flops_sparse: flops.total,
        flops_dense: flops.dense,
        wall_ms_sparse,
        wall_ms_dense,
    })
}

/// Median wall times (ms) of sparse and dense self-attention on one random input.
pub fn time_point<T: Scalar>(
    plan: &SparsePlan,
    d: usize,
    repetitions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let l = plan.layout().total_tokens();
    let q = Matrix::<T>::random_normal(l, d, rng);
    let k = Matrix::<T>::random_normal(l, d, rng);
    let v = Matrix::<T>::random_normal(l, d, rng);
    let mut sparse = Vec::with_capacity(repetitions);
    let mut dense = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(sparse_self_attention(&q, &k, &v, plan)?);
        sparse.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        std::hint::black_box(dense_attention(&q, &k, &v, default_scale(d))?);
        dense.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(&mut sparse), median(&mut dense)))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Fault injected into sparse plans to check that verification catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Remove one summary token of another shot from a shot's key list.
    DropSummaryKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub cases: usize,
    pub max_shots: usize,
    pub max_frames: usize,
    pub max_tpf: usize,
    pub min_d: usize,
    pub max_d: usize,
    pub precision: Precision,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            max_shots: 6,
            max_frames: 4,
            max_tpf: 8,
            min_d: 4,
            max_d: 32,
            precision: Precision::Double,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Sparse,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseFailure {
    pub case: usize,
    pub check: Check,
    pub max_diff: f64,
    /// Shot whose outputs deviate most.
    pub query_shot: Option<usize>,
    /// Shot owning a key the plan's pattern gets wrong for `query_shot`.
    pub key_shot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub cases: usize,
    pub precision: Precision,
    pub tolerance: f64,
    pub max_diff_sparse: f64,
    pub max_diff_window: f64,
    pub failures: Vec<CaseFailure>,
    /// `(query_shot, key_shot)` of each injected fault, per case.
    pub injected: Vec<Option<(usize, usize)>>,
}

/// One randomized instance: geometry plus inputs for both mechanisms.
#[derive(Debug, Clone)]
pub struct VerifyCase {
    pub layout: TokenLayout,
    pub prompt: PromptLayout,
    pub strategy: SummaryStrategy,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub q_video: Matrix,
    pub k_text: Matrix,
    pub v_text: Matrix,
}

impl VerifyCase {
    /// Case `index` of a run seeded with `seed`. Even cases use first-frame
    /// summaries, odd cases first-and-last-frame.
    pub fn generate(config: &VerifyConfig, index: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let n = rng.random_range(1..=config.max_shots.max(1));
        let shots = (0..n)
            .map(|_| {
                ShotSpec::new(
                    rng.random_range(1..=config.max_frames.max(1)),
                    rng.random_range(1..=config.max_tpf.max(1)),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = TokenLayout::new(shots)?;
        let strategy = if index.is_multiple_of(2) {
            SummaryStrategy::FirstFrame
        } else {
            SummaryStrategy::FirstAndLastFrame
        };
        let d = rng.random_range(config.min_d.max(1)..=config.max_d.max(config.min_d.max(1)));
        let global = rng.random_range(1..=3);
        let shot_text: Vec<usize> = (0..n).map(|_| rng.random_range(0..=4)).collect();
        let delim = rng.random_range(0..=1);
        let prompt = PromptLayout::from_counts(global, &shot_text, delim)?;
        let l = layout.total_tokens();
        let t = prompt.text_len();
        Ok(Self {
            q: Matrix::random_normal(l, d, &mut rng),
            k: Matrix::random_normal(l, d, &mut rng),
            v: Matrix::random_normal(l, d, &mut rng),
            q_video: Matrix::random_normal(l, d, &mut rng),
            k_text: Matrix::random_normal(t, d, &mut rng),
            v_text: Matrix::random_normal(t, d, &mut rng),
            layout,
            prompt,
            strategy,
        })
    }
}

struct CaseOutcome {
    sparse: f64,
    window: f64,
    failures: Vec<CaseFailure>,
    injected: Option<(usize, usize)>,
}

/// Randomized sparse-vs-reference and window-vs-reference checks.
pub fn verify_equivalence(config: &VerifyConfig) -> Result<VerifyReport> {
    if config.cases == 0 {
        return Err(Error::InvalidParameter("cases must be at least 1".into()));
    }
    let tolerance = config.precision.tolerance();
    let outcomes = (0..config.cases)
        .into_par_iter()
        .map(|i| run_case(config, i, tolerance))
        .collect::<Result<Vec<_>>>()?;
    let failures: Vec<CaseFailure> = outcomes.iter().flat_map(|o| o.failures.clone()).collect();
    Ok(VerifyReport {
        passed: failures.is_empty(),
        cases: config.cases,
        precision: config.precision,
        tolerance,
        max_diff_sparse: outcomes.iter().map(|o| o.sparse).fold(0.0, f64::max),
        max_diff_window: outcomes.iter().map(|o| o.window).fold(0.0, f64::max),
        failures,
        injected: outcomes.iter().map(|o| o.injected).collect(),
    })
}

fn run_case(config: &VerifyConfig, index: usize, tolerance: f64) -> Result<CaseOutcome> {
    let case = VerifyCase::generate(config, index)?;
    let mut plan = SparsePlan::new(&case.layout, case.strategy.clone(), PlanMode::Dedupe)?;
    let mut injected = None;
    if config.fault == Some(Fault::DropSummaryKey) && case.layout.num_shots() >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_fa17);
        rng.set_stream(index as u64);
        let n = case.layout.num_shots();
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        plan = plan.without_key(i, plan.summaries()[j][0])?;
        injected = Some((i, j));
    }

    let d = case.q.cols();
    let reference_mask = reference_sparse_mask(&case.layout, &case.strategy)?;
    let expected = masked_dense_attention(&case.q, &case.k, &case.v, &reference_mask, default_scale(d))?;
    let sparse = match config.precision {
        Precision::Double => sparse_self_attention(&case.q, &case.k, &case.v, &plan)?,
        Precision::Single => {
            sparse_self_attention(&case.q.cast::<f32>(), &case.k.cast(), &case.v.cast(), &plan)?.cast()
        }
    };

    let cross_mask = build_cross_mask(&case.layout, &case.prompt)?;
    let expected_x = masked_dense_attention(
        &case.q_video,
        &case.k_text,
        &case.v_text,
        &cross_mask,
        default_scale(d),
    )?;
    let window = match config.precision {
        Precision::Double => window_cross_attention(
            &case.q_video,
            &case.k_text,
            &case.v_text,
            &case.layout,
            &case.prompt,
        )?,
        Precision::Single => window_cross_attention(
            &case.q_video.cast::<f32>(),
            &case.k_text.cast(),
            &case.v_text.cast(),
            &case.layout,
            &case.prompt,
        )?
        .cast(),
    };

    let sparse_diff = sparse.max_abs_diff(&expected)?;
    let window_diff = window.max_abs_diff(&expected_x)?;
    let mut failures = Vec::new();
    if sparse_diff > tolerance {
        let query_shot = worst_shot(&sparse, &expected, &case.layout);
        let key_shot = query_shot.and_then(|qs| locate_key_shot(&plan, &reference_mask, qs));
        failures.push(CaseFailure {
            case: index,
            check: Check::Sparse,
            max_diff: sparse_diff,
            query_shot,
            key_shot,
        });
    }
    if window_diff > tolerance {
        failures.push(CaseFailure {
            case: index,
            check: Check::Window,
            max_diff: window_diff,
            query_shot: worst_shot(&window, &expected_x, &case.layout),
            key_shot: None,
        });
    }
    Ok(CaseOutcome {
        sparse: sparse_diff,
        window: window_diff,
        failures,
        injected,
    })
}

fn worst_shot(got: &Matrix, expected: &Matrix, layout: &TokenLayout) -> Option<usize> {
    layout
        .ranges()
        .iter()
        .map(|r| {
            r.clone()
                .flat_map(|t| got.row(t).iter().zip(expected.row(t)).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max)
        })
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Shot of the first key where the plan's list for `query_shot` disagrees with the reference mask.
fn locate_key_shot(plan: &SparsePlan, reference: &BoolMask, query_shot: usize) -> Option<usize> {
    let layout = plan.layout();
    let t = layout.ranges()[query_shot].start;
    let mut in_plan = vec![false; layout.total_tokens()];
    for &k in plan.kv_list(query_shot) {
        in_plan[k] = true;
    }
    (0..layout.total_tokens())
        .find(|&k| in_plan[k] != reference.get(t, k))
        .and_then(|k| layout.shot_of_token(k).ok())
}
