//! Orthonormal univariate polynomial bases and nested sparsity patterns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Points this far outside `[-1, 1]` are clamped; farther ones are rejected.
pub const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    /// Legendre polynomials normalized for the uniform measure on `[-1, 1]`.
    Legendre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub family: BasisFamily,
    pub degree: usize,
}

impl FeatureBasis {
    pub fn legendre(degree: usize) -> Self {
        Self { family: BasisFamily::Legendre, degree }
    }

    /// Number of basis functions, `p + 1`.
    pub fn size(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        self.eval_up_to(x, self.degree)
    }

    pub fn eval_up_to(&self, x: f64, degree: usize) -> Result<Vec<f64>> {
        let x = clamp_to_domain(x)?;
        let mut out = vec![0.0; degree + 1];
        fill_legendre(x, &mut out);
        Ok(out)
    }

    /// Row `i` holds the basis evaluated at `xs[i]`.
    pub fn eval_matrix(&self, xs: impl IntoIterator<Item = f64>) -> Result<Matrix> {
        let xs: Vec<f64> = xs.into_iter().collect();
        let p = self.size();
        let mut m = Matrix::zeros(xs.len(), p);
        let mut row = vec![0.0; p];
        for (i, &x) in xs.iter().enumerate() {
            fill_legendre(clamp_to_domain(x)?, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

fn clamp_to_domain(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::OutOfDomain(x));
    }
    if x.abs() <= 1.0 {
        return Ok(x);
    }
    if x.abs() <= 1.0 + DOMAIN_SLACK {
        log::warn!("clamping {x} into [-1, 1]");
        return Ok(x.signum());
    }
    Err(Error::OutOfDomain(x))
}

/// `sqrt(2i+1) P_i(x)` for `i < out.len()` via the three-term recurrence.
fn fill_legendre(x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let (mut p0, mut p1) = (1.0, x);
    out[0] = 1.0;
    if n > 1 {
        out[1] = 3f64.sqrt() * x;
    }
    for i in 2..n {
        let k = i as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        out[i] = (2.0 * k + 1.0).sqrt() * p2;
        p0 = p1;
        p1 = p2;
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, weights summing to 2.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Nested index sets over a node's coefficient indices; the last set is complete.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSequence {
    sets: Vec<Vec<usize>>,
}

impl PatternSequence {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidArgument("pattern sequence must be nonempty".into()));
        }
        for w in sets.windows(2) {
            if w[1].len() <= w[0].len() || !w[0].iter().all(|i| w[1].contains(i)) {
                return Err(Error::InvalidArgument("patterns must be strictly nested".into()));
            }
        }
        Ok(Self { sets })
    }

    /// The single complete pattern over `m` indices.
    pub fn full(m: usize) -> Self {
        Self { sets: vec![(0..m).collect()] }
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// True when every set is a leading block `0..k`.
    pub fn is_prefix(&self) -> bool {
        self.sets.iter().all(|s| s.iter().enumerate().all(|(j, &i)| i == j))
    }
}

/// Leaf patterns: pattern `λ` keeps degrees `0..=λ` for all `r` columns.
/// Coefficients of a leaf core are ordered degree-major, index `i * r + k`.
pub fn leaf_patterns(p: usize, r: usize) -> PatternSequence {
    let sets = (0..=p).map(|lam| (0..(lam + 1) * r).collect()).collect();
    PatternSequence { sets }
}
