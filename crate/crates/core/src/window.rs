//! Window cross-attention: each shot's video tokens see the global prompt plus
//! their own shot's prompt, and nothing else.
//!
//! The concatenated text sequence is laid out global-first, then per-shot
//! prompts in shot order, with optional `[shot cut]` delimiter spans between
//! them. Delimiter tokens are never attended.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::{default_scale, BoolMask, Matrix, Scalar};
use crate::error::{Error, Result};
use crate::layout::TokenLayout;
use crate::packed::PackedKv;

/// Token spans of the text sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    global: Range<usize>,
    shots: Vec<Range<usize>>,
    delimiters: Vec<Range<usize>>,
    text_len: usize,
}

impl PromptLayout {
    /// Validates that all spans are disjoint and together cover `[0, text_len)`.
    pub fn new(
        global: Range<usize>,
        shots: Vec<Range<usize>>,
        delimiters: Vec<Range<usize>>,
    ) -> Result<Self> {
        if shots.is_empty() {
            return Err(Error::LayoutMismatch("prompt has no shot spans".into()));
        }
        let mut spans: Vec<Range<usize>> = std::iter::once(global.clone())
            .chain(shots.iter().cloned())
            .chain(delimiters.iter().cloned())
            .filter(|r| !r.is_empty())
            .collect();
        if let Some(bad) = std::iter::once(&global)
            .chain(&shots)
            .chain(&delimiters)
            .find(|r| r.start > r.end)
        {
            return Err(Error::LayoutMismatch(format!("reversed span {bad:?}")));
        }
        spans.sort_by_key(|r| r.start);
        let mut cursor = 0;
        for r in &spans {
            if r.start != cursor {
                return Err(Error::LayoutMismatch(format!(
                    "text spans overlap or leave a gap at token {cursor}"
                )));
            }
            cursor = r.end;
        }
        Ok(Self {
            global,
            shots,
            delimiters,
            text_len: cursor,
        })
    }

    /// Serial layout from token counts: global, shot 0, delimiter, shot 1, ...
    /// `delimiter_tokens` may be zero.
    pub fn from_counts(global: usize, shots: &[usize], delimiter_tokens: usize) -> Result<Self> {
        let mut cursor = global;
        let mut shot_spans = Vec::with_capacity(shots.len());
        let mut delimiters = Vec::new();
        for (i, &n) in shots.iter().enumerate() {
            if i > 0 && delimiter_tokens > 0 {
                delimiters.push(cursor..cursor + delimiter_tokens);
                cursor += delimiter_tokens;
            }
            shot_spans.push(cursor..cursor + n);
            cursor += n;
        }
        Self::new(0..global, shot_spans, delimiters)
    }

    pub fn global(&self) -> Range<usize> {
        self.global.clone()
    }

    pub fn shots(&self) -> &[Range<usize>] {
        &self.shots
    }

    pub fn delimiters(&self) -> &[Range<usize>] {
        &self.delimiters
    }

    pub fn num_shots(&self) -> usize {
        self.shots.len()
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    /// Text tokens visible to shot `i`, ascending.
    pub fn window(&self, shot: usize) -> Vec<usize> {
        self.global.clone().chain(self.shots[shot].clone()).collect()
    }

    fn check_against(&self, video: &TokenLayout) -> Result<()> {
        if self.num_shots() != video.num_shots() {
            return Err(Error::LayoutMismatch(format!(
                "{} prompt shots for {} video shots",
                self.num_shots(),
                video.num_shots()
            )));
        }
        Ok(())
    }
}

/// Video-token by text-token mask realising the per-shot windows.
pub fn build_cross_mask(video: &TokenLayout, prompt: &PromptLayout) -> Result<BoolMask> {
    prompt.check_against(video)?;
    let mut mask = BoolMask::filled(video.total_tokens(), prompt.text_len(), false);
    for (shot, range) in video.ranges().iter().enumerate() {
        for t in range.clone() {
            for k in prompt.window(shot) {
                mask.set(t, k, true);
            }
        }
    }
    Ok(mask)
}

/// Blockwise window cross-attention: each shot's queries attend to the
/// concatenation of the global and own-shot text keys/values.
pub fn window_cross_attention<T: Scalar>(
    q_video: &Matrix<T>,
    k_text: &Matrix<T>,
    v_text: &Matrix<T>,
    video: &TokenLayout,
    prompt: &PromptLayout,
) -> Result<Matrix<T>> {
    prompt.check_against(video)?;
    if q_video.rows() != video.total_tokens() {
        return Err(Error::ShapeMismatch(format!(
            "{} video queries for a layout of {} tokens",
            q_video.rows(),
            video.total_tokens()
        )));
    }
    if k_text.rows() != prompt.text_len() || v_text.rows() != prompt.text_len() {
        return Err(Error::ShapeMismatch(format!(
            "text K/V have {}/{} rows for a prompt of {} tokens",
            k_text.rows(),
            v_text.rows(),
            prompt.text_len()
        )));
    }
    let windows: Vec<Vec<usize>> = (0..video.num_shots()).map(|i| prompt.window(i)).collect();
    if let Some(shot) = windows.iter().position(Vec::is_empty) {
        return Err(Error::EmptyAttentionRow(video.ranges()[shot].start));
    }
    let packed = PackedKv::gather(k_text, v_text, &windows)?;
    packed.attend(q_video, video.ranges(), default_scale(q_video.cols()))
}
