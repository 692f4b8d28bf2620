//! Desk-scale dataset curation: luminance cut detection, clip filtering,
//! greedy multi-shot assembly into duration tiers, and the hierarchical
//! `[shot cut]` prompt format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CutList;

/// Separator between consecutive per-shot prompts.
pub const SHOT_DELIMITER: &str = " [shot cut] ";
const DELIMITER_TAG: &str = "[shot cut]";

pub const DEFAULT_TIERS_S: [f64; 3] = [5.0, 15.0, 60.0];
pub const DEFAULT_TOLERANCE_FRACTION: f64 = 0.2;
pub const DEFAULT_MAX_SHOTS: usize = 13;

/// Cuts wherever consecutive frame values differ by more than `threshold`.
pub fn detect_cuts(frame_signal: &[f64], threshold: f64) -> Result<CutList> {
    if frame_signal.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cut threshold must be positive, got {threshold}"
        )));
    }
    if let Some(pos) = frame_signal.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(pos));
    }
    let cuts = frame_signal
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() > threshold)
        .map(|(t, _)| t + 1)
        .collect();
    CutList::new(frame_signal.len(), cuts)
}

/// One detected shot of a source video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceShot {
    pub id: String,
    pub source_id: String,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    pub fps: f64,
    pub mean_luminance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl SourceShot {
    pub fn validate(&self) -> Result<()> {
        if self.end_frame <= self.start_frame {
            return Err(Error::InvalidParameter(format!(
                "shot {:?}: end_frame {} <= start_frame {}",
                self.id, self.end_frame, self.start_frame
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shot {:?}: fps must be positive",
                self.id
            )));
        }
        Ok(())
    }

    pub fn duration_seconds(&self) -> f64 {
        (self.end_frame - self.start_frame) as f64 / self.fps
    }

    /// Same source and starts exactly where `prev` ends.
    pub fn continues(&self, prev: &SourceShot) -> bool {
        self.source_id == prev.source_id && self.start_frame == prev.end_frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_duration_s: f64,
    pub min_luminance: f64,
    pub min_aesthetic: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_duration_s: 1.0,
            min_luminance: 0.05,
            min_aesthetic: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    TooShort,
    TooDark,
    LowAesthetic,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<SourceShot>,
    pub rejected: Vec<(SourceShot, RejectReason)>,
}

/// First rule the shot fails, if any. Rules are checked in the order
/// duration, luminance, aesthetic score.
pub fn check_shot(shot: &SourceShot, policy: &FilterPolicy) -> Option<RejectReason> {
    if shot.duration_seconds() < policy.min_duration_s {
        Some(RejectReason::TooShort)
    } else if shot.mean_luminance < policy.min_luminance {
        Some(RejectReason::TooDark)
    } else if shot.aesthetic_score.is_some_and(|a| a < policy.min_aesthetic) {
        Some(RejectReason::LowAesthetic)
    } else {
        None
    }
}

pub fn filter_shots(shots: Vec<SourceShot>, policy: &FilterPolicy) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for shot in shots {
        match check_shot(&shot, policy) {
            None => out.kept.push(shot),
            Some(reason) => out.rejected.push((shot, reason)),
        }
    }
    out
}

/// A contiguous run of source shots assembled to a duration tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSample {
    pub shots: Vec<SourceShot>,
    pub total_duration: f64,
    pub tier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<HierarchicalPrompt>,
}

impl CurationSample {
    /// Attach a prompt built from the shots' captions, if every shot has one.
    pub fn with_caption_prompt(mut self, global: &str) -> Result<Self> {
        let captions: Option<Vec<String>> = self.shots.iter().map(|s| s.caption.clone()).collect();
        if let Some(per_shot) = captions {
            self.prompt = Some(HierarchicalPrompt::new(global, per_shot)?);
        }
        Ok(self)
    }
}

/// Greedy left-to-right assembly.
///
/// Contiguous shots accumulate until the running total reaches
/// `target_s - tol_s`; the group then closes and is emitted only if its total
/// is at most `target_s + tol_s` and it has at most `max_shots` shots. A break
/// in contiguity (different source, or a gap between frames) also closes the
/// group. Trailing groups that never reach the threshold are dropped.
pub fn assemble_samples(
    shots: &[SourceShot],
    target_s: f64,
    tol_s: f64,
    max_shots: usize,
) -> Result<Vec<CurationSample>> {
    if !(tol_s >= 0.0 && target_s > tol_s && target_s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need target > tolerance >= 0, got target {target_s}, tolerance {tol_s}"
        )));
    }
    if max_shots == 0 {
        return Err(Error::InvalidParameter("max_shots must be at least 1".into()));
    }
    let lo = target_s - tol_s;
    let hi = target_s + tol_s;
    let mut samples = Vec::new();
    let mut group: Vec<SourceShot> = Vec::new();
    let mut total = 0.0;

    let mut close = |group: &mut Vec<SourceShot>, total: &mut f64| {
        if *total >= lo && *total <= hi && group.len() <= max_shots {
            samples.push(CurationSample {
                shots: std::mem::take(group),
                total_duration: *total,
                tier: target_s,
                prompt: None,
            });
        }
        group.clear();
        *total = 0.0;
    };

    for shot in shots {
        shot.validate()?;
        if group.last().is_some_and(|prev| !shot.continues(prev)) {
            close(&mut group, &mut total);
        }
        total += shot.duration_seconds();
        group.push(shot.clone());
        if total >= lo {
            close(&mut group, &mut total);
        }
    }
    Ok(samples)
}

/// Global scene description plus ordered per-shot descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalPrompt {
    pub global: String,
    pub per_shot: Vec<String>,
}

impl HierarchicalPrompt {
    pub fn new(global: impl Into<String>, per_shot: Vec<String>) -> Result<Self> {
        let p = Self {
            global: global.into(),
            per_shot,
        };
        p.validate()?;
        Ok(p)
    }

    /// The global text must be a single line; per-shot texts must be
    /// non-empty; no field may contain the `[shot cut]` tag.
    pub fn validate(&self) -> Result<()> {
        if self.per_shot.is_empty() {
            return Err(Error::MalformedPrompt("no per-shot prompts".into()));
        }
        if self.global.contains('\n') {
            return Err(Error::MalformedPrompt("global prompt spans several lines".into()));
        }
        for field in std::iter::once(&self.global).chain(&self.per_shot) {
            if field.contains(DELIMITER_TAG) {
                return Err(Error::DelimiterCollision(field.clone()));
            }
        }
        if self.per_shot.iter().any(String::is_empty) {
            return Err(Error::MalformedPrompt("empty per-shot prompt".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> Result<String> {
        self.validate()?;
        Ok(format!("{}\n{}", self.global, self.per_shot.join(SHOT_DELIMITER)))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (global, shots) = text
            .split_once('\n')
            .ok_or_else(|| Error::MalformedPrompt("missing newline after global prompt".into()))?;
        let per_shot: Vec<String> = shots.split(SHOT_DELIMITER).map(str::to_string).collect();
        if per_shot.iter().any(String::is_empty) {
            return Err(Error::MalformedPrompt("empty shot segment".into()));
        }
        Self::new(global, per_shot)
    }
}

pub fn render_hierarchical_prompt(prompt: &HierarchicalPrompt) -> Result<String> {
    prompt.render()
}

pub fn parse_hierarchical_prompt(text: &str) -> Result<HierarchicalPrompt> {
    HierarchicalPrompt::parse(text)
}

/// Output record for one assembled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub tier_s: f64,
    pub total_duration_s: f64,
    pub shot_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
}

impl SampleRecord {
    pub fn from_sample(sample_id: String, sample: &CurationSample) -> Result<Self> {
        Ok(Self {
            sample_id,
            tier_s: sample.tier,
            total_duration_s: sample.total_duration,
            shot_ids: sample.shots.iter().map(|s| s.id.clone()).collect(),
            prompt_text: sample.prompt.as_ref().map(|p| p.render()).transpose()?,
        })
    }
}
