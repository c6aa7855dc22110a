//! Least squares on node design matrices with nested-pattern selection.
//!
//! The primary path factors the normal equations once by Cholesky; every leading
//! block pattern then reuses the leading block of the factor. Leverages, fitted
//! values and `trace((AᵀA)^-1)` are all cumulative over the leading rows of
//! `L^-1 Aᵀ` and `L^-1`, so scoring all patterns costs one extra pass.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::PatternSequence;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Columns whose squared norm is below this fraction of the largest are dropped.
const ZERO_COLUMN: f64 = 1e-28;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveFlags {
    /// Normal equations were not positive definite; an SVD pseudo-inverse was used.
    pub pseudo_inverse: bool,
    /// Some pattern had `n <= m`; its score is the plain LOO estimate.
    pub plain_loo: bool,
    /// Zero columns were excluded from the fit.
    pub dropped_columns: bool,
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    /// Full-length coefficient vector; entries outside the pattern are zero.
    pub coeffs: DVector<f64>,
    pub pattern: usize,
    pub pattern_size: usize,
    pub empirical: f64,
    pub loo: f64,
    pub corrected_loo: f64,
    pub flags: SolveFlags,
}

/// Small-sample correction `(1 - m/n)^-1 (1 + trace(G^-1)/n)` for the LOO estimate,
/// with `G` the empirical Gram `AᵀA / n` and the exact Gram taken as identity.
/// Returns `None` when `n <= m`.
pub fn correction_factor(n: usize, m: usize, trace_gram_inv: f64) -> Option<f64> {
    if n <= m {
        return None;
    }
    let (nf, mf) = (n as f64, m as f64);
    Some((1.0 + trace_gram_inv / nf) / (1.0 - mf / nf))
}

/// Mean of `((y - ŷ) / (1 - h))^2`; infinite when some `h` reaches 1.
pub fn loo_from_leverages(y: &[f64], fitted: &[f64], h: &[f64]) -> f64 {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        let denom = 1.0 - h[i];
        if denom <= 1e-12 {
            return f64::INFINITY;
        }
        let e = (y[i] - fitted[i]) / denom;
        s += e * e;
    }
    s / n as f64
}

/// Closed-form leave-one-out risk of the least-squares fit on all columns of `a`.
pub fn loo_risk(a: &Matrix, y: &[f64]) -> Result<f64> {
    let sol = solve_with_pattern_selection(a, y, &PatternSequence::full(a.ncols()))?;
    Ok(sol.loo)
}

/// Corrected leave-one-out risk of the least-squares fit on all columns of `a`.
pub fn corrected_loo_risk(a: &Matrix, y: &[f64]) -> Result<f64> {
    let sol = solve_with_pattern_selection(a, y, &PatternSequence::full(a.ncols()))?;
    Ok(sol.corrected_loo)
}

struct Score {
    empirical: f64,
    loo: f64,
    corrected: f64,
    plain: bool,
}

fn score(y: &[f64], fitted: &[f64], h: &[f64], m: usize, trace_inv: f64) -> Score {
    let n = y.len();
    let empirical = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let loo = loo_from_leverages(y, fitted, h);
    // trace of the inverse empirical Gram (AᵀA/n)^-1 is n·trace((AᵀA)^-1)
    match correction_factor(n, m, n as f64 * trace_inv) {
        Some(f) => Score { empirical, loo, corrected: loo * f, plain: false },
        None => Score { empirical, loo, corrected: loo, plain: true },
    }
}

/// AᵀA, computing the upper triangle by column blocks straight from A's storage.
fn gram(a: &Matrix) -> Matrix {
    const BLOCK: usize = 64;
    let (n, m) = a.shape();
    let mut g = Matrix::zeros(m, m);
    if n == 0 {
        return g;
    }
    let (rs, cs) = a.strides();
    let mut i = 0;
    while i < m {
        let bi = BLOCK.min(m - i);
        // SAFETY: every pointer/stride pair stays inside its column-major buffer:
        // rows i..i+bi of Aᵀ, columns i..m of A, and the block (i, i)..(i+bi, m) of g.
        unsafe {
            let base = a.as_ptr();
            let out = g.as_mut_ptr().add(i + i * m);
            matrixmultiply::dgemm(
                bi,
                n,
                m - i,
                1.0,
                base.add(i * cs),
                cs as isize,
                rs as isize,
                base.add(i * cs),
                rs as isize,
                cs as isize,
                0.0,
                out,
                1,
                m as isize,
            );
        }
        i += bi;
    }
    g.fill_lower_triangle_with_upper_triangle();
    g
}

fn check(a: &Matrix, y: &[f64]) -> Result<(Vec<usize>, SolveFlags)> {
    let (n, m) = a.shape();
    if n == 0 || y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} targets for {} rows", y.len(), n)));
    }
    if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares problem".into()));
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let big = norms.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..m).filter(|&j| norms[j] > ZERO_COLUMN * big && norms[j] > 0.0).collect();
    let flags = SolveFlags { dropped_columns: keep.len() < m, ..Default::default() };
    Ok((keep, flags))
}

/// Solves the least-squares problem on every pattern and keeps the one with the
/// smallest corrected LOO risk; ties go to the smaller pattern.
pub fn solve_with_pattern_selection(a: &Matrix, y: &[f64], patterns: &PatternSequence) -> Result<LsSolution> {
    if patterns.is_empty() {
        return Err(Error::InvalidArgument("no candidate pattern".into()));
    }
    let (keep, mut flags) = check(a, y)?;
    if patterns.is_prefix() {
        if let Some(sol) = cholesky_prefix(a, y, patterns, &keep, &mut flags) {
            return Ok(sol);
        }
        flags.pseudo_inverse = true;
        log::debug!("normal equations not positive definite; falling back to SVD");
    } else {
        flags.pseudo_inverse = true;
    }
    svd_patterns(a, y, patterns, &keep, flags)
}

/// Plain least-squares coefficients on all columns, without risk estimates.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<(DVector<f64>, SolveFlags)> {
    let (keep, mut flags) = check(a, y)?;
    let m = a.ncols();
    let selected;
    let sub = if keep.len() == m {
        a
    } else {
        selected = a.select_columns(&keep);
        &selected
    };
    let rhs = sub.tr_mul(&DVector::from_column_slice(y));
    if let Some(chol) = gram(sub).cholesky() {
        let c = chol.solve(&rhs);
        if c.iter().all(|v| v.is_finite()) {
            let mut coeffs = DVector::zeros(m);
            for (t, &j) in keep.iter().enumerate() {
                coeffs[j] = c[t];
            }
            return Ok((coeffs, flags));
        }
    }
    log::debug!("normal equations not positive definite; falling back to SVD");
    flags.pseudo_inverse = true;
    let sol = svd_patterns(a, y, &PatternSequence::full(m), &keep, flags)?;
    Ok((sol.coeffs, sol.flags))
}

fn select(scores: &[Score]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if s.corrected < scores[best].corrected {
            best = k;
        }
    }
    best
}

fn cholesky_prefix(a: &Matrix, y: &[f64], patterns: &PatternSequence, keep: &[usize], flags: &mut SolveFlags) -> Option<LsSolution> {
    let (n, m) = a.shape();
    let k_all = keep.len();
    let selected;
    let sub = if k_all == m {
        a
    } else {
        selected = a.select_columns(keep);
        &selected
    };
    let yv = DVector::from_column_slice(y);
    // kept columns within each prefix pattern
    let counts: Vec<usize> = patterns.sizes().iter().map(|&s| keep.iter().filter(|&&j| j < s).count()).collect();

    let mut scores = Vec::with_capacity(counts.len());
    let mut fitted = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trace_inv = 0.0;
    let (v, z, linv) = if k_all > 0 {
        let chol = gram(sub).cholesky()?;
        let linv = chol.l().solve_lower_triangular(&Matrix::identity(k_all, k_all))?;
        // columns of v are the rows of L⁻¹Aᵀ, stored contiguously
        let v = sub * linv.transpose();
        let z = v.tr_mul(&yv);
        (v, z, linv)
    } else {
        (Matrix::zeros(n, 0), DVector::zeros(0), Matrix::zeros(0, 0))
    };
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut done = 0;
    for &c in &counts {
        while done < c {
            let col = v.column(done);
            let zj = z[done];
            for ((f, hi), &c) in fitted.iter_mut().zip(h.iter_mut()).zip(col.iter()) {
                *f += zj * c;
                *hi += c * c;
            }
            trace_inv += linv.row(done).columns(0, done + 1).norm_squared();
            done += 1;
        }
        scores.push(score(y, &fitted, &h, c, trace_inv));
    }
    let best = select(&scores);
    let c = counts[best];
    let mut coeffs = DVector::zeros(m);
    if c > 0 {
        let lk = linv.view((0, 0), (c, c));
        // coefficients: L_k^-T z_k
        let sol = lk.transpose() * z.rows(0, c);
        for (t, &j) in keep[..c].iter().enumerate() {
            coeffs[j] = sol[t];
        }
    }
    flags.plain_loo = scores.iter().any(|s| s.plain);
    let s = &scores[best];
    Some(LsSolution {
        coeffs,
        pattern: best,
        pattern_size: patterns.sizes()[best],
        empirical: s.empirical,
        loo: s.loo,
        corrected_loo: s.corrected,
        flags: *flags,
    })
}

fn svd_patterns(a: &Matrix, y: &[f64], patterns: &PatternSequence, keep: &[usize], mut flags: SolveFlags) -> Result<LsSolution> {
    let n = a.nrows();
    let m = a.ncols();
    let yv = DVector::from_column_slice(y);
    let mut best: Option<(Score, DVector<f64>, usize)> = None;
    for (k, set) in patterns.sets().iter().enumerate() {
        let cols: Vec<usize> = set.iter().copied().filter(|j| keep.contains(j)).collect();
        let (coeffs, fitted, h, trace_inv, rank) = if cols.is_empty() {
            (DVector::zeros(0), vec![0.0; n], vec![0.0; n], 0.0, 0)
        } else {
            let sub = a.select_columns(&cols);
            let svd = sub.svd(true, true);
            let u = svd.u.as_ref().expect("requested");
            let vt = svd.v_t.as_ref().expect("requested");
            let s = &svd.singular_values;
            let smax = s.iter().copied().fold(0.0, f64::max);
            let tol = smax * 1e-12 * (n.max(cols.len()) as f64);
            let mut coeffs = DVector::zeros(cols.len());
            let mut fitted = DVector::zeros(n);
            let mut h = vec![0.0; n];
            let mut trace_inv = 0.0;
            let mut rank = 0;
            for j in 0..s.len() {
                if s[j] <= tol {
                    continue;
                }
                rank += 1;
                let uj = u.column(j);
                let proj = uj.dot(&yv);
                fitted += uj * proj;
                coeffs += vt.row(j).transpose() * (proj / s[j]);
                for i in 0..n {
                    h[i] += uj[i] * uj[i];
                }
                trace_inv += 1.0 / (s[j] * s[j]);
            }
            (coeffs, fitted.as_slice().to_vec(), h, trace_inv, rank)
        };
        let sc = score(y, &fitted, &h, rank, trace_inv);
        flags.plain_loo |= sc.plain;
        let mut full = DVector::zeros(m);
        for (t, &j) in cols.iter().enumerate() {
            full[j] = coeffs[t];
        }
        let better = match &best {
            None => true,
            Some((b, _, _)) => sc.corrected < b.corrected,
        };
        if better {
            best = Some((sc, full, k));
        }
    }
    let (s, coeffs, k) = best.expect("at least one pattern");
    Ok(LsSolution {
        coeffs,
        pattern: k,
        pattern_size: patterns.sizes()[k],
        empirical: s.empirical,
        loo: s.loo,
        corrected_loo: s.corrected,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::leaf_patterns;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// LOO by refitting without each point, using an independent SVD solve.
    #[test]
    fn blocked_gram_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (n, m) in [(1, 1), (5, 3), (70, 130), (200, 65)] {
            let a = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let g = gram(&a);
            let want = a.transpose() * &a;
            assert!((g - &want).norm() <= 1e-12 * want.norm());
        }
    }

    fn loo_by_refits(a: &Matrix, y: &[f64]) -> f64 {
        let n = a.nrows();
        let mut s = 0.0;
        for i in 0..n {
            let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let ai = a.select_rows(&rows);
            let yi = DVector::from_iterator(n - 1, rows.iter().map(|&r| y[r]));
            let c = ai.svd(true, true).solve(&yi, 1e-14).unwrap();
            let pred = (a.row(i) * c)[0];
            s += (y[i] - pred).powi(2);
        }
        s / n as f64
    }

    #[test]
    fn constant_model_two_points() {
        let a = Matrix::from_element(2, 1, 1.0);
        let l = loo_risk(&a, &[0.0, 2.0]).unwrap();
        assert!((l - 4.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_is_infinite() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.3, 1.0]);
        assert!(loo_risk(&a, &[1.0, 2.0]).unwrap().is_infinite());
    }

    #[test]
    fn closed_form_matches_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let n = rng.random_range(12..=40);
            let m = rng.random_range(1..=10);
            let a = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let closed = loo_risk(&a, &y).unwrap();
            let refit = loo_by_refits(&a, &y);
            assert!((closed - refit).abs() < 1e-10 * refit.max(1.0), "{closed} vs {refit}");
        }
    }

    #[test]
    fn exact_linear_target_picks_first_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|i| 2.0 * a[(i, 0)]).collect();
        let p = PatternSequence::new(vec![vec![0], vec![0, 1]]).unwrap();
        let s = solve_with_pattern_selection(&a, &y, &p).unwrap();
        assert_eq!(s.pattern, 0);
        assert!(s.loo < 1e-25);
        assert!((s.coeffs[0] - 2.0).abs() < 1e-12 && s.coeffs[1] == 0.0);
    }

    #[test]
    fn noisy_signal_in_second_column_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let a = Matrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| a[(i, 1)] + 0.01 * rng.random_range(-1.0..1.0)).collect();
        let p = leaf_patterns(2, 1);
        let s = solve_with_pattern_selection(&a, &y, &p).unwrap();
        // exhaustive scoring of each pattern through the single-pattern path
        let mut scores = Vec::new();
        for k in 0..3 {
            let sub = a.columns(0, k + 1).into_owned();
            scores.push(corrected_loo_risk(&sub, &y).unwrap());
        }
        let best = (0..3).min_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap()).unwrap();
        assert_eq!(s.pattern, best);
        assert!(s.pattern >= 1);
        assert!((s.corrected_loo - scores[best]).abs() < 1e-12 * scores[best]);
    }

    #[test]
    fn single_pattern_is_ordinary_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix::from_fn(50, 4, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = solve_with_pattern_selection(&a, &y, &PatternSequence::full(4)).unwrap();
        let c = a.clone().svd(true, true).solve(&DVector::from_column_slice(&y), 1e-14).unwrap();
        assert!((s.coeffs - c).norm() < 1e-12);
    }

    #[test]
    fn correction_factor_values() {
        assert_eq!(correction_factor(10, 0, 0.0), Some(1.0));
        // n = 2m with identity Gram: trace = m
        assert!((correction_factor(20, 10, 10.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(correction_factor(5, 5, 1.0), None);
        let mut prev = f64::INFINITY;
        for n in [20usize, 40, 80, 160, 320] {
            let f = correction_factor(n, 10, 10.0).unwrap();
            assert!(f < prev && f > 1.0);
            prev = f;
        }
    }

    #[test]
    fn zero_columns_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = Matrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        a.column_mut(1).fill(0.0);
        let y: Vec<f64> = (0..30).map(|i| a[(i, 0)] - a[(i, 2)]).collect();
        let s = solve_with_pattern_selection(&a, &y, &PatternSequence::full(3)).unwrap();
        assert!(s.flags.dropped_columns);
        assert_eq!(s.coeffs[1], 0.0);
        assert!((s.coeffs[0] - 1.0).abs() < 1e-12 && (s.coeffs[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = Matrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let c0 = a.column(0).into_owned();
        a.set_column(2, &c0);
        let y: Vec<f64> = (0..30).map(|i| a[(i, 0)]).collect();
        let s = solve_with_pattern_selection(&a, &y, &PatternSequence::full(3)).unwrap();
        let fit = &a * &s.coeffs;
        assert!((fit - DVector::from_column_slice(&y)).norm() < 1e-10);
        assert!(s.flags.pseudo_inverse);
    }
}
