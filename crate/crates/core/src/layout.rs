//! Shot / frame / token geometry of a multi-shot latent sequence.
//!
//! Tokens are flattened shot-major, then frame-major, then spatial: token
//! `tokens_per_frame * f + s` of shot `j` sits at `range_j.start + tokens_per_frame * f + s`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latent extent of one shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShotSpec {
    pub frames: usize,
    pub tokens_per_frame: usize,
}

impl ShotSpec {
    pub fn new(frames: usize, tokens_per_frame: usize) -> Result<Self> {
        let spec = Self {
            frames,
            tokens_per_frame,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.tokens_per_frame == 0 {
            return Err(Error::InvalidShotSpec {
                frames: self.frames,
                tokens_per_frame: self.tokens_per_frame,
            });
        }
        Ok(())
    }

    /// Number of tokens in the shot (`L_shot`).
    pub fn len(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered shots plus their contiguous token ranges over the flattened sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    shots: Vec<ShotSpec>,
    ranges: Vec<Range<usize>>,
    total: usize,
}

impl TokenLayout {
    pub fn new(shots: Vec<ShotSpec>) -> Result<Self> {
        if shots.is_empty() {
            return Err(Error::EmptyLayout);
        }
        let mut ranges = Vec::with_capacity(shots.len());
        let mut start = 0;
        for spec in &shots {
            spec.validate()?;
            ranges.push(start..start + spec.len());
            start += spec.len();
        }
        Ok(Self {
            shots,
            ranges,
            total: start,
        })
    }

    /// `n_shots` copies of `spec`.
    pub fn uniform(n_shots: usize, spec: ShotSpec) -> Result<Self> {
        Self::new(vec![spec; n_shots])
    }

    pub fn shots(&self) -> &[ShotSpec] {
        &self.shots
    }

    pub fn num_shots(&self) -> usize {
        self.shots.len()
    }

    /// Sequence length `L`.
    pub fn total_tokens(&self) -> usize {
        self.total
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn shot_range(&self, shot: usize) -> Result<Range<usize>> {
        self.ranges
            .get(shot)
            .cloned()
            .ok_or(Error::IndexOutOfBounds {
                index: shot,
                len: self.shots.len(),
            })
    }

    pub fn shot_of_token(&self, token: usize) -> Result<usize> {
        if token >= self.total {
            return Err(Error::IndexOutOfBounds {
                index: token,
                len: self.total,
            });
        }
        // first range whose end lies beyond the token
        Ok(self.ranges.partition_point(|r| r.end <= token))
    }

    /// True when every shot has the same frame count and tokens per frame.
    pub fn is_uniform(&self) -> bool {
        self.shots.windows(2).all(|w| w[0] == w[1])
    }

    /// Per-shot summary token indices (absolute, ascending, deduplicated).
    pub fn summary_token_indices(&self, strategy: &SummaryStrategy) -> Result<Vec<Vec<usize>>> {
        match strategy {
            SummaryStrategy::FirstFrame => Ok(self
                .shots
                .iter()
                .zip(&self.ranges)
                .map(|(spec, range)| (range.start..range.start + spec.tokens_per_frame).collect())
                .collect()),
            SummaryStrategy::FirstAndLastFrame => Ok(self
                .shots
                .iter()
                .zip(&self.ranges)
                .map(|(spec, range)| {
                    let tpf = spec.tokens_per_frame;
                    let mut idx: Vec<usize> = (range.start..range.start + tpf).collect();
                    if spec.frames > 1 {
                        idx.extend(range.end - tpf..range.end);
                    }
                    idx
                })
                .collect()),
            SummaryStrategy::ExplicitIndices(lists) => {
                if lists.len() != self.num_shots() {
                    return Err(Error::LayoutMismatch(format!(
                        "{} explicit summary lists for {} shots",
                        lists.len(),
                        self.num_shots()
                    )));
                }
                lists
                    .iter()
                    .zip(&self.ranges)
                    .enumerate()
                    .map(|(shot, (list, range))| {
                        if list.is_empty() {
                            return Err(Error::InvalidSummaryIndex {
                                shot,
                                reason: "empty summary list".into(),
                            });
                        }
                        if let Some(bad) = list.iter().find(|i| !range.contains(i)) {
                            return Err(Error::InvalidSummaryIndex {
                                shot,
                                reason: format!("index {bad} outside {range:?}"),
                            });
                        }
                        let mut sorted = list.clone();
                        sorted.sort_unstable();
                        sorted.dedup();
                        Ok(sorted)
                    })
                    .collect()
            }
        }
    }
}

/// How each shot's summary tokens are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryStrategy {
    FirstFrame,
    FirstAndLastFrame,
    /// Absolute token indices, one list per shot. Each index must fall in its shot's range.
    ExplicitIndices(Vec<Vec<usize>>),
}

impl SummaryStrategy {
    /// Every token of every shot; turns sparse attention into full attention.
    pub fn all_tokens(layout: &TokenLayout) -> Self {
        Self::ExplicitIndices(layout.ranges().iter().map(|r| r.clone().collect()).collect())
    }
}
