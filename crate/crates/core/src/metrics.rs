//! Shot Cut Accuracy and embedding-based consistency scores.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly ascending cut frame indices inside `(0, f_total)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCutList")]
pub struct CutList {
    f_total: usize,
    cuts: Vec<usize>,
}

#[derive(Deserialize)]
struct RawCutList {
    f_total: usize,
    cuts: Vec<usize>,
}

impl TryFrom<RawCutList> for CutList {
    type Error = Error;

    fn try_from(raw: RawCutList) -> Result<Self> {
        CutList::new(raw.f_total, raw.cuts)
    }
}

impl CutList {
    pub fn new(f_total: usize, cuts: Vec<usize>) -> Result<Self> {
        if f_total == 0 {
            return Err(Error::InvalidCutList("f_total must be positive".into()));
        }
        if let Some(&c) = cuts.iter().find(|&&c| c == 0 || c >= f_total) {
            return Err(Error::InvalidCutList(format!(
                "cut {c} outside (0, {f_total})"
            )));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCutList("cuts not strictly increasing".into()));
        }
        Ok(Self { f_total, cuts })
    }

    pub fn f_total(&self) -> usize {
        self.f_total
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn num_shots(&self) -> usize {
        self.cuts.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred_idx: usize,
    pub gt_idx: usize,
    pub deviation: usize,
}

/// Optimal order-preserving one-to-one matching between two cut lists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutMatching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    pub e_matched: f64,
    pub e_penalty: f64,
}

/// Minimises `sum |p - g|` over matched pairs plus `penalty` per unmatched cut
/// on either side, over all order-preserving matchings.
pub fn match_cuts(pred: &CutList, gt: &CutList, penalty: f64) -> Result<CutMatching> {
    if pred.f_total != gt.f_total {
        return Err(Error::FrameCountMismatch {
            pred: pred.f_total,
            gt: gt.f_total,
        });
    }
    if !(penalty.is_finite() && penalty > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "unmatched-cut penalty must be positive, got {penalty}"
        )));
    }
    let (p, g) = (pred.cuts(), gt.cuts());
    let (n, m) = (p.len(), g.len());
    // cost[i][j]: best cost aligning p[i..] with g[j..]
    let mut cost = vec![vec![0.0f64; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i][j] = if i == n {
                (m - j) as f64 * penalty
            } else if j == m {
                (n - i) as f64 * penalty
            } else {
                let matched = p[i].abs_diff(g[j]) as f64 + cost[i + 1][j + 1];
                let skip_pred = penalty + cost[i + 1][j];
                let skip_gt = penalty + cost[i][j + 1];
                matched.min(skip_pred).min(skip_gt)
            };
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        let dev = p[i].abs_diff(g[j]);
        if dev as f64 + cost[i + 1][j + 1] <= cost[i][j] {
            pairs.push(MatchedPair {
                pred_idx: i,
                gt_idx: j,
                deviation: dev,
            });
            i += 1;
            j += 1;
        } else if penalty + cost[i + 1][j] <= cost[i][j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let unmatched_pred = n - pairs.len();
    let unmatched_gt = m - pairs.len();
    let e_matched = pairs.iter().map(|p| p.deviation).sum::<usize>() as f64;
    Ok(CutMatching {
        pairs,
        unmatched_pred,
        unmatched_gt,
        e_matched,
        e_penalty: penalty * (unmatched_pred + unmatched_gt) as f64,
    })
}

/// Cost charged per missed or extraneous cut.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyPolicy {
    /// `f_total / (ground-truth cuts + 1)`: the mean ground-truth shot length.
    #[default]
    MeanGtShotLength,
    Fixed(f64),
}

impl PenaltyPolicy {
    pub fn penalty(&self, gt: &CutList) -> f64 {
        match *self {
            PenaltyPolicy::MeanGtShotLength => gt.f_total as f64 / gt.num_shots() as f64,
            PenaltyPolicy::Fixed(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaReport {
    pub f_total: usize,
    pub penalty: f64,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    pub e_matched: f64,
    pub e_penalty: f64,
    pub nsd: f64,
    pub sca: f64,
}

/// `sca = exp(-nsd)` with `nsd = (e_matched + e_penalty) / f_total`.
pub fn shot_cut_accuracy(pred: &CutList, gt: &CutList, policy: PenaltyPolicy) -> Result<ScaReport> {
    let penalty = policy.penalty(gt);
    let m = match_cuts(pred, gt, penalty)?;
    let nsd = (m.e_matched + m.e_penalty) / gt.f_total as f64;
    Ok(ScaReport {
        f_total: gt.f_total,
        penalty,
        pairs: m.pairs,
        unmatched_pred: m.unmatched_pred,
        unmatched_gt: m.unmatched_gt,
        e_matched: m.e_matched,
        e_penalty: m.e_penalty,
        nsd,
        sca: (-nsd).exp(),
    })
}

/// Cosine similarity. Inputs are expected unit-norm but are not required to be.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidEmbedding("zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Mean cosine similarity over all within-group unordered shot pairs, pooled
/// across groups.
pub fn inter_shot_consistency(shot_vectors: &[Vec<f64>], groups: &[Vec<usize>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (g, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::DegenerateGroup(g));
        }
        if let Some(&bad) = group.iter().find(|&&i| i >= shot_vectors.len()) {
            return Err(Error::IndexOutOfBounds {
                index: bad,
                len: shot_vectors.len(),
            });
        }
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                sum += cosine(&shot_vectors[i], &shot_vectors[j])?;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(sum / pairs as f64)
}

/// Mean over frames `t >= 1` of the average of `cos(e_t, e_{t-1})` and `cos(e_t, e_0)`.
pub fn intra_shot_consistency(frame_vectors: &[Vec<f64>]) -> Result<f64> {
    if frame_vectors.len() < 2 {
        return Err(Error::TooFewFrames(frame_vectors.len()));
    }
    let first = &frame_vectors[0];
    let mut sum = 0.0;
    for t in 1..frame_vectors.len() {
        let prev = cosine(&frame_vectors[t], &frame_vectors[t - 1])?;
        let anchor = cosine(&frame_vectors[t], first)?;
        sum += (prev + anchor) / 2.0;
    }
    Ok(sum / (frame_vectors.len() - 1) as f64)
}

pub fn semantic_consistency(prompt_vector: &[f64], media_vector: &[f64]) -> Result<f64> {
    cosine(prompt_vector, media_vector)
}

/// Mean prompt/clip cosine over aligned per-shot lists.
pub fn per_shot_semantic_consistency(prompts: &[Vec<f64>], media: &[Vec<f64>]) -> Result<f64> {
    if prompts.len() != media.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} shot prompts for {} shot clips",
            prompts.len(),
            media.len()
        )));
    }
    if prompts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum = prompts
        .iter()
        .zip(media)
        .map(|(p, m)| cosine(p, m))
        .sum::<Result<f64>>()?;
    Ok(sum / prompts.len() as f64)
}

/// Maps a media or text segment id to a unit-norm feature vector.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;

    fn embed(&self, segment_id: &str) -> Result<Vec<f64>>;

    /// Whether concurrent read-only `embed` calls are allowed.
    fn supports_concurrent_queries(&self) -> bool {
        true
    }

    fn embed_all(&self, ids: &[String]) -> Result<Vec<Vec<f64>>> {
        ids.iter().map(|id| self.embed(id)).collect()
    }
}

/// Scales `v` to unit length; errors on zero or non-finite vectors.
pub fn normalize(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidEmbedding("non-finite component".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidEmbedding("zero vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Hand-specified vectors, normalised on construction.
#[derive(Debug, Clone, Default)]
pub struct TableEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl TableEmbeddings {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        let mut out = HashMap::with_capacity(vectors.len());
        for (id, mut v) in vectors {
            if v.len() != dim {
                return Err(Error::InvalidEmbedding(format!(
                    "{id:?} has dimension {} but expected {dim}",
                    v.len()
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                log::warn!("embedding {id:?} has norm {norm:.6}; normalizing");
            }
            normalize(&mut v).map_err(|e| Error::InvalidEmbedding(format!("{id:?}: {e}")))?;
            out.insert(id, v);
        }
        Ok(Self { dim, vectors: out })
    }

    /// Reads a JSON object mapping segment id to vector.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HashMap<String, Vec<f64>> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidEmbedding(format!("bad embedding file: {e}")))?;
        Self::new(raw)
    }
}

impl EmbeddingProvider for TableEmbeddings {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, segment_id: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(segment_id)
            .cloned()
            .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))
    }
}

/// Deterministic pseudo-random unit vectors keyed by segment id and seed.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticEmbeddings {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingProvider for SyntheticEmbeddings {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, segment_id: &str) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::InvalidEmbedding("zero dimension".into()));
        }
        // FNV-1a so ids hash identically across platforms and runs
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in segment_id.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v)?;
        Ok(v)
    }
}
