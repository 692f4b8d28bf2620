//! Sparse inter-shot self-attention.
//!
//! Every query of shot `i` attends densely to all tokens of shot `i` and to
//! the summary tokens of the other shots (the global summary cache). Per-shot
//! key/value lists are packed without padding and evaluated segment by
//! segment.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::{default_scale, dense_flops, BoolMask, Matrix, Scalar};
use crate::error::{Error, Result};
use crate::layout::{SummaryStrategy, TokenLayout};
use crate::packed::{segment_offsets, PackedKv, SegmentRecord};

/// How a shot's own summary tokens enter its key/value list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Union of other shots' summaries and the shot's own tokens; every key once.
    #[default]
    Dedupe,
    /// Summaries of all shots (own included) followed by the shot's own
    /// tokens; own summary tokens appear twice.
    Literal,
}

impl std::fmt::Display for PlanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlanMode::Dedupe => "dedupe",
            PlanMode::Literal => "literal",
        })
    }
}

impl std::str::FromStr for PlanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dedupe" => Ok(PlanMode::Dedupe),
            "literal" => Ok(PlanMode::Literal),
            other => Err(Error::InvalidParameter(format!("unknown plan mode {other:?}"))),
        }
    }
}

/// Per-shot key/value index lists plus packed segment offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePlan {
    layout: TokenLayout,
    strategy: SummaryStrategy,
    mode: PlanMode,
    summaries: Vec<Vec<usize>>,
    kv_lists: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl SparsePlan {
    pub fn new(layout: &TokenLayout, strategy: SummaryStrategy, mode: PlanMode) -> Result<Self> {
        let summaries = layout.summary_token_indices(&strategy)?;
        let kv_lists: Vec<Vec<usize>> = layout
            .ranges()
            .iter()
            .enumerate()
            .map(|(i, own)| match mode {
                PlanMode::Dedupe => {
                    let mut kv: Vec<usize> = summaries
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .flat_map(|(_, s)| s.iter().copied())
                        .chain(own.clone())
                        .collect();
                    kv.sort_unstable();
                    kv
                }
                PlanMode::Literal => summaries
                    .iter()
                    .flatten()
                    .copied()
                    .chain(own.clone())
                    .collect(),
            })
            .collect();
        let offsets = segment_offsets(&kv_lists);
        Ok(Self {
            layout: layout.clone(),
            strategy,
            mode,
            summaries,
            kv_lists,
            offsets,
        })
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn strategy(&self) -> &SummaryStrategy {
        &self.strategy
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn num_shots(&self) -> usize {
        self.layout.num_shots()
    }

    pub fn query_ranges(&self) -> &[Range<usize>] {
        self.layout.ranges()
    }

    pub fn summaries(&self) -> &[Vec<usize>] {
        &self.summaries
    }

    pub fn kv_list(&self, shot: usize) -> &[usize] {
        &self.kv_lists[shot]
    }

    pub fn kv_lists(&self) -> &[Vec<usize>] {
        &self.kv_lists
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Copy of the plan with `key` removed from `shot`'s key/value list.
    /// Breaks the plan invariants on purpose; used to check that verification
    /// catches faulty plans.
    pub fn without_key(&self, shot: usize, key: usize) -> Result<Self> {
        let list = self.kv_lists.get(shot).ok_or(Error::IndexOutOfBounds {
            index: shot,
            len: self.num_shots(),
        })?;
        let pos = list.iter().position(|&k| k == key).ok_or_else(|| {
            Error::PlanLayoutMismatch(format!("key {key} not in shot {shot}'s list"))
        })?;
        let mut out = self.clone();
        out.kv_lists[shot].remove(pos);
        out.offsets = segment_offsets(&out.kv_lists);
        Ok(out)
    }

    /// One record per shot: query range and its ascending key list.
    pub fn manifest(&self) -> Vec<SegmentRecord> {
        self.kv_lists
            .iter()
            .zip(self.query_ranges())
            .enumerate()
            .map(|(shot, (kv, q))| {
                let mut kv = kv.clone();
                kv.sort_unstable();
                SegmentRecord {
                    shot,
                    query_start: q.start,
                    query_end: q.end,
                    kv_offset: self.offsets[shot],
                    kv,
                }
            })
            .collect()
    }
}

/// Gather each shot's key/value rows into contiguous packed segments.
pub fn pack_varlen<T: Scalar>(plan: &SparsePlan, k: &Matrix<T>, v: &Matrix<T>) -> Result<PackedKv<T>> {
    let l = plan.layout.total_tokens();
    if k.rows() != l || v.rows() != l {
        return Err(Error::PlanLayoutMismatch(format!(
            "K/V have {}/{} rows for a layout of {l} tokens",
            k.rows(),
            v.rows()
        )));
    }
    PackedKv::gather(k, v, &plan.kv_lists)
}

/// Sparse self-attention with scale `1/sqrt(d)`.
pub fn sparse_self_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    plan: &SparsePlan,
) -> Result<Matrix<T>> {
    if q.rows() != plan.layout.total_tokens() {
        return Err(Error::ShapeMismatch(format!(
            "{} queries for a layout of {} tokens",
            q.rows(),
            plan.layout.total_tokens()
        )));
    }
    let packed = pack_varlen(plan, k, v)?;
    packed.attend(q, plan.query_ranges(), default_scale(q.cols()))
}

/// Boolean mask equivalent of a deduplicated plan.
pub fn plan_to_dense_mask(plan: &SparsePlan) -> Result<BoolMask> {
    if plan.mode == PlanMode::Literal {
        return Err(Error::UnrepresentableAsMask);
    }
    let l = plan.layout.total_tokens();
    let mut mask = BoolMask::filled(l, l, false);
    for (range, kv) in plan.query_ranges().iter().zip(&plan.kv_lists) {
        for t in range.clone() {
            for &k in kv {
                mask.set(t, k, true);
            }
        }
    }
    Ok(mask)
}

/// Mask of the sparse pattern computed straight from its definition: `t`
/// attends `k` iff both lie in the same shot, or `k` is a summary token of its
/// own shot. Independent of [`SparsePlan`] construction.
pub fn reference_sparse_mask(layout: &TokenLayout, strategy: &SummaryStrategy) -> Result<BoolMask> {
    let summaries = layout.summary_token_indices(strategy)?;
    let l = layout.total_tokens();
    let mut is_summary = vec![false; l];
    for &i in summaries.iter().flatten() {
        is_summary[i] = true;
    }
    let shot_of: Vec<usize> = (0..l)
        .map(|t| layout.shot_of_token(t))
        .collect::<Result<_>>()?;
    Ok(BoolMask::from_fn(l, l, |t, k| {
        shot_of[t] == shot_of[k] || is_summary[k]
    }))
}

/// Exact FLOP accounting of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub per_shot: Vec<u64>,
    pub total: u64,
    /// Closed form for uniform layouts (equal shot length and summary count):
    /// `4 N L_shot (L_shot + (N-1) S) d` in dedupe mode,
    /// `4 N L_shot (L_shot + N S) d` in literal mode.
    pub closed_form: Option<u64>,
    /// Full attention over the whole sequence, for comparison.
    pub dense: u64,
}

impl FlopReport {
    pub fn dense_to_sparse_ratio(&self) -> f64 {
        self.dense as f64 / self.total as f64
    }
}

pub fn sparse_flops(plan: &SparsePlan, d: usize) -> FlopReport {
    let d = d as u64;
    let per_shot: Vec<u64> = plan
        .query_ranges()
        .iter()
        .zip(&plan.kv_lists)
        .map(|(q, kv)| dense_flops(q.len() as u64, kv.len() as u64, d))
        .collect();
    let total = per_shot.iter().sum();
    let l = plan.layout.total_tokens() as u64;
    let s0 = plan.summaries[0].len();
    let closed_form = (plan.layout.is_uniform() && plan.summaries.iter().all(|s| s.len() == s0))
        .then(|| {
            let n = plan.num_shots() as u64;
            let l_shot = plan.layout.shots()[0].len() as u64;
            let s = s0 as u64;
            let others = match plan.mode {
                PlanMode::Dedupe => n - 1,
                PlanMode::Literal => n,
            };
            4 * n * l_shot * (l_shot + others * s) * d
        });
    FlopReport {
        per_shot,
        total,
        closed_form,
        dense: dense_flops(l, l, d),
    }
}
