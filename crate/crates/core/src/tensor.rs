//! Dense multi-way arrays.
//!
//! Data is stored row-major: the last mode varies fastest. A matricization
//! with row modes `(a, b, ...)` linearizes rows row-major over the row modes in
//! the given order and columns row-major over the remaining modes in
//! ascending order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl FullTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidShape("tensor needs at least one mode".into()));
        }
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Reorders modes so that mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_modes(perm, self.order())?;
        if perm.len() != self.order() {
            return Err(Error::InvalidArgument(format!(
                "permutation {perm:?} does not cover {} modes",
                self.order()
            )));
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let src_strides = self.strides();
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let gather: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; new_shape.len()];
        let mut off = 0usize;
        let last = new_shape.len() - 1;
        for _ in 0..self.len() {
            data.push(self.data[off]);
            // odometer step, tracking the source offset incrementally
            let mut k = last;
            loop {
                idx[k] += 1;
                off += gather[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                off -= gather[k] * idx[k];
                idx[k] = 0;
                if k == 0 {
                    break;
                }
                k -= 1;
            }
        }
        Self::new(new_shape, data)
    }

    /// Matricization with the listed modes as rows.
    pub fn matricize(&self, row_modes: &[usize]) -> Result<Matrix> {
        if row_modes.is_empty() {
            return Err(Error::InvalidArgument("row modes must be nonempty".into()));
        }
        check_modes(row_modes, self.order())?;
        let perm = row_then_rest(row_modes, self.order());
        let rows: usize = row_modes.iter().map(|&m| self.shape[m]).product();
        let cols = self.len() / rows;
        let p = self.permute(&perm)?;
        Ok(Matrix::from_row_slice(rows, cols, &p.data))
    }

    /// Inverse of [`FullTensor::matricize`]: rebuilds a tensor of `shape` from its matricization.
    pub fn from_matricization(m: &Matrix, shape: &[usize], row_modes: &[usize]) -> Result<Self> {
        if row_modes.is_empty() {
            return Err(Error::InvalidArgument("row modes must be nonempty".into()));
        }
        check_modes(row_modes, shape.len())?;
        let perm = row_then_rest(row_modes, shape.len());
        let permuted_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let rows: usize = row_modes.iter().map(|&k| shape[k]).product();
        let total: usize = shape.iter().product();
        if m.nrows() != rows || m.nrows() * m.ncols() != total {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix cannot be folded into {shape:?}",
                m.nrows(),
                m.ncols()
            )));
        }
        let permuted = FullTensor::new(permuted_shape, row_major(m))?;
        permuted.permute(&inverse_permutation(&perm))
    }

    /// Contracts `mode` with the columns of `m`: the result has extent `m.nrows()` at `mode`.
    pub fn mode_multiply(&self, mode: usize, m: &Matrix) -> Result<Self> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange { mode, order: self.order() });
        }
        if m.ncols() != self.shape[mode] {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, mode {mode} has extent {}",
                m.ncols(),
                self.shape[mode]
            )));
        }
        let mat = self.matricize(&[mode])?;
        let prod = m * mat;
        let mut shape = self.shape.clone();
        shape[mode] = m.nrows();
        Self::from_matricization(&prod, &shape, &[mode])
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Row-major odometer increment. Wraps to all zeros after the last index.
pub fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Entries of `m` in row-major order.
pub fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_modes(modes: &[usize], order: usize) -> Result<()> {
    let mut seen = vec![false; order];
    for &m in modes {
        if m >= order {
            return Err(Error::ModeOutOfRange { mode: m, order });
        }
        if seen[m] {
            return Err(Error::DuplicateMode(m));
        }
        seen[m] = true;
    }
    Ok(())
}

fn row_then_rest(row_modes: &[usize], order: usize) -> Vec<usize> {
    let mut perm = row_modes.to_vec();
    perm.extend((0..order).filter(|m| !row_modes.contains(m)));
    perm
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    pub right: Matrix,
    pub retained_rank: usize,
}

impl SvdResult {
    /// Energy discarded by the truncation, `sum_{i > r} s_i^2`.
    pub fn tail_energy(&self) -> f64 {
        self.singular_values[self.retained_rank.min(self.singular_values.len())..]
            .iter()
            .map(|s| s * s)
            .sum()
    }

    /// `left * diag(s) * right^T` restricted to the retained rank.
    pub fn reconstruct(&self) -> Matrix {
        let r = self.retained_rank;
        let mut us = self.left.columns(0, r).into_owned();
        for j in 0..r {
            us.column_mut(j).scale_mut(self.singular_values[j]);
        }
        us * self.right.columns(0, r).transpose()
    }
}

/// Minimal `r` such that the tail energy is at most `tol^2` times the total.
/// Always at least 1.
pub fn tail_rank(singular_values: &[f64], tol: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let budget = tol * tol * total;
    let mut tail = 0.0;
    let mut r = singular_values.len();
    while r > 1 {
        let s = singular_values[r - 1];
        if tail + s * s > budget {
            break;
        }
        tail += s * s;
        r -= 1;
    }
    r.max(1)
}

/// Thin SVD with rank chosen by the relative tail criterion, capped at `max_rank`.
///
/// Singular values are sorted nonincreasing (ties keep their original order) and every
/// right singular vector has its leading nonzero entry made positive. The returned
/// factors have `retained_rank` columns while `singular_values` holds the full spectrum.
pub fn truncated_svd(m: &Matrix, max_rank: Option<usize>, rel_tail_tol: f64) -> Result<SvdResult> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to truncated_svd".into()));
    }
    let (u, s, v) = full_svd(m);
    let mut r = tail_rank(&s, rel_tail_tol);
    if let Some(cap) = max_rank {
        r = r.min(cap.max(1));
    }
    r = r.min(s.len());
    Ok(SvdResult {
        left: u.columns(0, r).into_owned(),
        singular_values: s,
        right: v.columns(0, r).into_owned(),
        retained_rank: r,
    })
}

/// Thin SVD `m = u diag(s) v^T` with k = min(rows, cols) sorted, sign-normalized triplets.
pub fn full_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    // nalgebra is most reliable on tall matrices
    let (u, s, v) = if rows >= cols {
        let svd = m.clone().svd(true, true);
        let vt = svd.v_t.expect("requested");
        (svd.u.expect("requested"), svd.singular_values, vt.transpose())
    } else {
        let svd = m.transpose().svd(true, true);
        let vt = svd.v_t.expect("requested");
        (vt.transpose(), svd.singular_values, svd.u.expect("requested"))
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut uo = Matrix::zeros(rows, k);
    let mut vo = Matrix::zeros(cols, k);
    let mut so = Vec::with_capacity(k);
    for (j, &src) in order.iter().enumerate() {
        let mut uc = u.column(src).into_owned();
        let mut vc = v.column(src).into_owned();
        let lead = vc.iter().find(|x| x.abs() > 1e-300).copied().unwrap_or(1.0);
        if lead < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        uo.set_column(j, &uc);
        vo.set_column(j, &vc);
        so.push(s[src].max(0.0));
    }
    (uo, so, vo)
}

/// Householder QR returning the thin factors `(q, r)` with `q` of size rows x min(rows, cols).
pub fn thin_qr(m: &Matrix) -> (Matrix, Matrix) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(shape: Vec<usize>, seed: u64) -> FullTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FullTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn order_two_matricization_is_identity_layout() {
        let t = FullTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.matricize(&[0]).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn constant_tensor_matricizes_to_constant() {
        let t = FullTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let m = t.matricize(&[0, 2]).unwrap();
        assert_eq!(m.shape(), (4, 2));
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matricize_matches_index_enumeration() {
        let t = seeded(vec![3, 4, 2], 7);
        let m = t.matricize(&[1]).unwrap();
        assert_eq!(m.shape(), (4, 6));
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    assert_eq!(m[(j, i * 2 + k)], t.get(&[i, j, k]));
                }
            }
        }
        let back = FullTensor::from_matricization(&m, t.shape(), &[1]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn row_mode_order_is_respected() {
        let t = seeded(vec![2, 3, 4], 3);
        let m = t.matricize(&[2, 0]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(m[(k * 2 + i, j)], t.get(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn bad_modes_are_rejected() {
        let t = seeded(vec![2, 3], 1);
        assert!(matches!(t.matricize(&[2]), Err(Error::ModeOutOfRange { .. })));
        assert!(matches!(t.matricize(&[0, 0]), Err(Error::DuplicateMode(0))));
        assert!(FullTensor::new(vec![2, 0], vec![]).is_err());
        assert!(FullTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn svd_of_diagonal() {
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let s = truncated_svd(&m, None, 0.0).unwrap();
        assert_eq!(s.retained_rank, 2);
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);
        let s = truncated_svd(&m, None, 0.4).unwrap();
        assert_eq!(s.retained_rank, 1);
    }

    #[test]
    fn svd_of_rank_one() {
        let a = nalgebra::DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let b = nalgebra::DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0]);
        let m = &a * b.transpose();
        for tol in [0.0, 0.3, 0.9] {
            let s = truncated_svd(&m, None, tol).unwrap();
            assert_eq!(s.retained_rank, 1);
            assert!((s.singular_values[0] - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_sign_convention_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::from_fn(5, 7, |_, _| rng.random_range(-1.0..1.0));
        let s = truncated_svd(&m, Some(2), 0.0).unwrap();
        assert_eq!(s.retained_rank, 2);
        for j in 0..2 {
            let lead = s.right.column(j).iter().find(|x| x.abs() > 1e-300).copied().unwrap();
            assert!(lead > 0.0);
        }
        let err = (&m - s.reconstruct()).norm();
        assert!((err - s.tail_energy().sqrt()).abs() < 1e-10 * m.norm());
    }

    #[test]
    fn mode_multiply_matches_loops() {
        let t = seeded(vec![2, 3, 2], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = t.mode_multiply(1, &a).unwrap();
        assert_eq!(r.shape(), &[2, 5, 2]);
        for i in 0..2 {
            for j in 0..5 {
                for k in 0..2 {
                    let expect: f64 = (0..3).map(|l| a[(j, l)] * t.get(&[i, l, k])).sum();
                    assert!((r.get(&[i, j, k]) - expect).abs() < 1e-14);
                }
            }
        }
        assert!(t.mode_multiply(0, &a).is_err());
    }

    #[test]
    fn mode_multiply_identity_and_scalar() {
        let t = seeded(vec![2, 2], 9);
        assert_eq!(t.mode_multiply(0, &Matrix::identity(2, 2)).unwrap(), t);
        let d = t.mode_multiply(0, &(Matrix::identity(2, 2) * 2.0)).unwrap();
        for (a, b) in d.data().iter().zip(t.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}
