//! Variable-length packed key/value segments.
//!
//! Per-query-group key/value lists are gathered into one contiguous pair of
//! matrices with explicit cumulative offsets and no padding rows.

use std::ops::Range;

use serde::Serialize;

use crate::attention::{attend_rows, Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PackedKv<T = f64> {
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
    /// `offsets[i]..offsets[i + 1]` are segment `i`'s rows.
    pub offsets: Vec<usize>,
}

impl<T: Scalar> PackedKv<T> {
    /// Gather `lists[i]` rows of `k`/`v` into segment `i`.
    pub fn gather(k: &Matrix<T>, v: &Matrix<T>, lists: &[Vec<usize>]) -> Result<Self> {
        if k.rows() != v.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} keys but {} values",
                k.rows(),
                v.rows()
            )));
        }
        let flat: Vec<usize> = lists.iter().flatten().copied().collect();
        if let Some(&bad) = flat.iter().find(|&&i| i >= k.rows()) {
            return Err(Error::PlanLayoutMismatch(format!(
                "key index {bad} but only {} rows",
                k.rows()
            )));
        }
        let offsets = segment_offsets(lists);
        Ok(Self {
            keys: k.gather_rows(&flat)?,
            values: v.gather_rows(&flat)?,
            offsets,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn segment(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Attend each query range to its own segment. Query range `i` pairs with segment `i`.
    pub fn attend(
        &self,
        q: &Matrix<T>,
        query_ranges: &[Range<usize>],
        scale: T,
    ) -> Result<Matrix<T>> {
        if q.cols() != self.keys.cols() {
            return Err(Error::ShapeMismatch(format!(
                "query width {} != key width {}",
                q.cols(),
                self.keys.cols()
            )));
        }
        if query_ranges.len() != self.num_segments() {
            return Err(Error::LayoutMismatch(format!(
                "{} query groups for {} segments",
                query_ranges.len(),
                self.num_segments()
            )));
        }
        let d = q.cols();
        let dv = self.values.cols();
        let mut out = Matrix::zeros(q.rows(), dv);
        for (i, qr) in query_ranges.iter().enumerate() {
            if qr.end > q.rows() {
                return Err(Error::LayoutMismatch(format!(
                    "query range {qr:?} beyond {} rows",
                    q.rows()
                )));
            }
            let seg = self.segment(i);
            if seg.is_empty() && !qr.is_empty() {
                return Err(Error::EmptyAttentionRow(qr.start));
            }
            attend_rows(
                &q.as_slice()[qr.start * d..qr.end * d],
                d,
                &self.keys.as_slice()[seg.start * d..seg.end * d],
                &self.values.as_slice()[seg.start * dv..seg.end * dv],
                seg.len(),
                dv,
                scale,
                out.rows_mut(qr.clone()),
            );
        }
        Ok(out)
    }
}

/// Cumulative lengths `[0, |l0|, |l0|+|l1|, ...]`.
pub fn segment_offsets<L: AsRef<[usize]>>(lists: &[L]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(lists.len() + 1);
    offsets.push(0);
    for l in lists {
        offsets.push(offsets.last().unwrap() + l.as_ref().len());
    }
    offsets
}

/// One packed segment, for human-readable manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentRecord {
    pub shot: usize,
    pub query_start: usize,
    pub query_end: usize,
    pub kv_offset: usize,
    pub kv: Vec<usize>,
}
