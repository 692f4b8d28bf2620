//! Dense scaled dot-product attention with boolean masks.
//!
//! [`masked_dense_attention`] is the straightforward reference every specialised
//! path in this crate is checked against. [`dense_attention`] is the unmasked
//! production kernel used for timing the full-attention baseline.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floating-point element type for attention inputs (`f32` or `f64`).
pub trait Scalar: Float + Send + Sync + Debug + Default + std::iter::Sum + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(pos));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Entries drawn i.i.d. from a standard normal distribution.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                T::from(x).expect("f64 converts to any scalar")
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn rows_mut(&mut self, rows: std::ops::Range<usize>) -> &mut [T] {
        &mut self.data[rows.start * self.cols..rows.end * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    /// New matrix made of the listed rows, in order (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfBounds {
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from(x).expect("finite scalar cast"))
                .collect(),
        }
    }

    /// Largest elementwise absolute difference, evaluated in `f64`.
    pub fn max_abs_diff<U: Scalar>(&self, other: &Matrix<U>) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
            .fold(0.0, f64::max))
    }
}

/// `rows` queries by `cols` keys; `true` means the query may attend to the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMask {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn allowed(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r)
            .iter()
            .enumerate()
            .filter_map(|(c, &ok)| ok.then_some(c))
    }

    pub fn count_allowed(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Compact text rendering: `#` allowed, `.` masked, one line per query.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            out.extend(self.row(r).iter().map(|&b| if b { '#' } else { '.' }));
            out.push('\n');
        }
        out
    }
}

/// `1 / sqrt(d)`.
pub fn default_scale<T: Scalar>(d: usize) -> T {
    T::one() / T::from(d).expect("dimension fits scalar").sqrt()
}

/// Softmax with max subtraction.
pub fn stable_softmax<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(pos) = scores.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(pos));
    }
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn check_attention_shapes<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    Ok(())
}

/// Reference attention: `out[i] = sum_j softmax_j(scale * q_i . k_j) v_j` over allowed `j`.
pub fn masked_dense_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &BoolMask,
    scale: T,
) -> Result<Matrix<T>> {
    check_attention_shapes(q, k, v)?;
    if mask.rows() != q.rows() || mask.cols() != k.rows() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} for {} queries and {} keys",
            mask.rows(),
            mask.cols(),
            q.rows(),
            k.rows()
        )));
    }
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let keys: Vec<usize> = mask.allowed(i).collect();
        if keys.is_empty() {
            return Err(Error::EmptyAttentionRow(i));
        }
        let scores: Vec<T> = keys
            .iter()
            .map(|&j| {
                let dot: T = q.row(i).iter().zip(k.row(j)).map(|(&a, &b)| a * b).sum();
                dot * scale
            })
            .collect();
        let weights = stable_softmax(&scores)?;
        let row = out.row_mut(i);
        for (&j, &w) in keys.iter().zip(&weights) {
            for (o, &x) in row.iter_mut().zip(v.row(j)) {
                *o = *o + w * x;
            }
        }
    }
    Ok(out)
}

/// Unmasked attention of every query against every key.
pub fn dense_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>> {
    check_attention_shapes(q, k, v)?;
    if k.rows() == 0 && q.rows() > 0 {
        return Err(Error::EmptyAttentionRow(0));
    }
    let mut out = Matrix::zeros(q.rows(), v.cols());
    attend_rows(
        q.as_slice(),
        q.cols(),
        k.as_slice(),
        v.as_slice(),
        k.rows(),
        v.cols(),
        scale,
        &mut out.data,
    );
    Ok(out)
}

/// FLOPs of one attention call: `2*l_q*l_kv*d` for `QK^T` plus the same for
/// the weighted sum of values. Softmax and scaling are not counted.
pub fn dense_flops(l_q: u64, l_kv: u64, d: u64) -> u64 {
    4 * l_q * l_kv * d
}

/// Attention of packed query rows (width `d`) against `m` packed key rows
/// (width `d`) and value rows (width `dv`). `out` receives one row of width
/// `dv` per query. All keys are attended.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_rows<T: Scalar>(
    q: &[T],
    d: usize,
    k: &[T],
    v: &[T],
    m: usize,
    dv: usize,
    scale: T,
    out: &mut [T],
) {
    if dv == 0 || out.is_empty() {
        return;
    }
    out.par_chunks_mut(dv).enumerate().for_each_init(
        || vec![T::zero(); m],
        |scores, (i, o)| {
            let qi = &q[i * d..(i + 1) * d];
            let mut max = T::neg_infinity();
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k[j * d..(j + 1) * d]) * scale;
                max = max.max(*s);
            }
            let mut sum = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum = sum + *s;
            }
            o.iter_mut().for_each(|x| *x = T::zero());
            for (j, &p) in scores.iter().enumerate() {
                axpy(p, &v[j * dv..(j + 1) * dv], o);
            }
            let inv = T::one() / sum;
            o.iter_mut().for_each(|x| *x = *x * inv);
        },
    );
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (o, &xi) in y.iter_mut().zip(x) {
        *o = *o + alpha * xi;
    }
}
