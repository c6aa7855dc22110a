//! Orthogonalization, α-singular values and truncation.
//!
//! Gram matrices of the complementary functions are carried in square-root form:
//! for an all-orthogonal network, `Gram(w^β) = Z^β Z^βᵀ` with `Z^root = [1]` and
//! `Z^β = U S` from the SVD of the `β`-slot matricization of `C^γ ×_last Z^γᵀ`.
//! The singular values `S` are the α-singular values of the represented tensor.

use serde::{Deserialize, Serialize};

use super::{OrthState, TreeTensorNetwork};
use crate::error::{Error, Result};
use crate::tensor::{full_svd, row_major, tail_rank, thin_qr, FullTensor, Matrix};
use crate::tree::{admissible_cap, check_admissible};

/// Relative cutoff below which Gram factors are treated as singular.
pub const GRAM_CUTOFF: f64 = 1e-14;

/// Per-slot α-singular values, nonincreasing and padded with zeros to the node's rank.
/// The root entry holds the norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub values: Vec<Vec<f64>>,
}

struct GramFactor {
    /// `r x r` left singular vectors.
    u: Matrix,
    sigma: Vec<f64>,
}

impl GramFactor {
    fn z(&self) -> Matrix {
        let mut z = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            z.column_mut(j).scale_mut(*s);
        }
        z
    }
}

impl TreeTensorNetwork {
    /// Orthonormalizes the node functions of `id` by QR and moves the triangular
    /// factor into the parent core.
    fn qr_push(&mut self, id: usize) {
        let parent = self.tree.parent(id).expect("non-root");
        let slot = self.tree.child_slot(id).expect("non-root");
        let core = &self.cores[id];
        let r = self.rank(id);
        let rest = core.len() / r;
        let m = Matrix::from_row_slice(rest, r, core.data());
        let (mut q, mut rr) = thin_qr(&m);
        let k = q.ncols();
        for j in 0..k {
            if rr[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
                rr.row_mut(j).neg_mut();
            }
        }
        let mut shape = core.shape().to_vec();
        *shape.last_mut().expect("rank mode") = k;
        self.cores[id] = FullTensor::new(shape, row_major(&q)).expect("consistent shape");
        self.cores[parent] = self.cores[parent].mode_multiply(slot, &rr).expect("consistent shape");
    }

    /// Makes every non-root node's functions orthonormal.
    pub fn orthogonalize(&mut self) {
        let root = self.tree.root();
        for id in self.tree.by_decreasing_level() {
            if id != root {
                self.qr_push(id);
            }
        }
        self.orth = OrthState::All;
    }

    pub fn orthogonalized(&self) -> Self {
        let mut n = self.clone();
        n.orthogonalize();
        n
    }

    /// Restores full orthogonality when only `id` and its ascendants may be off.
    pub fn orthogonalize_path(&mut self, id: usize) {
        let root = self.tree.root();
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == root {
                break;
            }
            self.qr_push(c);
            cur = self.tree.parent(c);
        }
        self.orth = OrthState::All;
    }

    pub(crate) fn ensure_all_orthogonal(&mut self) {
        match self.orth {
            OrthState::All => {}
            OrthState::Node(a) => self.orthogonalize_path(a),
            OrthState::None => self.orthogonalize(),
        }
    }

    fn child_gram(&self, child: usize, z_parent: &Matrix) -> GramFactor {
        let p = self.tree.parent(child).expect("non-root");
        let slot = self.tree.child_slot(child).expect("non-root");
        let last = self.cores[p].order() - 1;
        let b = self.cores[p]
            .mode_multiply(last, &z_parent.transpose())
            .expect("consistent shape");
        let x = b.matricize(&[slot]).expect("valid slot");
        let r = x.nrows();
        let x = if x.ncols() < r {
            let mut padded = Matrix::zeros(r, r);
            padded.columns_mut(0, x.ncols()).copy_from(&x);
            padded
        } else {
            x
        };
        let (u, sigma, _) = full_svd(&x);
        GramFactor { u, sigma }
    }

    /// Gram factors along the path from the root to `alpha`; requires all-orthogonal cores.
    fn gram_path(&self, alpha: usize) -> GramFactor {
        let mut path = self.tree.ascendants(alpha);
        path.reverse();
        path.push(alpha);
        let mut g = GramFactor { u: Matrix::identity(1, 1), sigma: vec![1.0] };
        for &id in &path[1..] {
            g = self.child_gram(id, &g.z());
        }
        g
    }

    fn gram_all(&self) -> Vec<Option<GramFactor>> {
        let mut out: Vec<Option<GramFactor>> = (0..self.tree.len()).map(|_| None).collect();
        let mut order = self.tree.by_decreasing_level();
        order.reverse();
        for id in order {
            out[id] = Some(match self.tree.parent(id) {
                None => GramFactor { u: Matrix::identity(1, 1), sigma: vec![1.0] },
                Some(p) => {
                    let z = out[p].as_ref().expect("parent first").z();
                    self.child_gram(id, &z)
                }
            });
        }
        out
    }

    /// Gauge change making `{φ^α ⊗ w^α}` orthonormal. Returns true when the Gram
    /// matrix of `w^α` was singular and a pseudo-inverse was used.
    pub fn alpha_orthogonalize(&mut self, alpha: usize) -> Result<bool> {
        let root = self.tree.root();
        if alpha == root {
            return Err(Error::InvalidArgument("α-orthogonalization needs a non-root node".into()));
        }
        if self.orth == OrthState::Node(alpha) {
            return Ok(false);
        }
        self.ensure_all_orthogonal();
        let g = self.gram_path(alpha);
        let smax = g.sigma.first().copied().unwrap_or(0.0);
        let mut singular = false;
        let r = g.sigma.len();
        let mut lt = g.u.transpose();
        let mut linv = g.u.transpose();
        for j in 0..r {
            let s = g.sigma[j];
            lt.row_mut(j).scale_mut(s);
            if s > GRAM_CUTOFF * smax && s > 0.0 {
                linv.row_mut(j).scale_mut(1.0 / s);
            } else {
                singular = true;
                linv.row_mut(j).fill(0.0);
            }
        }
        if singular {
            log::debug!("singular Gram matrix at node {alpha}; using a pseudo-inverse");
        }
        let p = self.tree.parent(alpha).expect("non-root");
        let slot = self.tree.child_slot(alpha).expect("non-root");
        let last = self.cores[alpha].order() - 1;
        self.cores[alpha] = self.cores[alpha].mode_multiply(last, &lt)?;
        self.cores[p] = self.cores[p].mode_multiply(slot, &linv)?;
        self.orth = OrthState::Node(alpha);
        Ok(singular)
    }

    pub fn alpha_orthogonalized(&self, alpha: usize) -> Result<Self> {
        let mut n = self.clone();
        n.alpha_orthogonalize(alpha)?;
        Ok(n)
    }

    /// L² norm of the represented function.
    pub fn norm(&self) -> f64 {
        match self.orth {
            OrthState::All => self.cores[self.tree.root()].norm(),
            OrthState::Node(a) => self.cores[a].norm(),
            OrthState::None => self.orthogonalized().cores[self.tree.root()].norm(),
        }
    }

    pub fn singular_spectrum(&self) -> SingularSpectrum {
        let mut n = self.clone();
        n.ensure_all_orthogonal();
        let grams = n.gram_all();
        let root = n.tree.root();
        let values = (0..n.tree.len())
            .map(|id| {
                if id == root {
                    vec![n.cores[root].norm()]
                } else {
                    grams[id].as_ref().expect("all nodes").sigma.clone()
                }
            })
            .collect();
        SingularSpectrum { values }
    }

    /// Truncation with per-node ranks chosen by `choose(node, spectrum)`.
    fn truncate_with(&self, choose: impl Fn(usize, &[f64]) -> usize) -> Self {
        let mut n = self.clone();
        n.ensure_all_orthogonal();
        let grams = n.gram_all();
        let root = n.tree.root();
        for id in 0..n.tree.len() {
            if id == root {
                continue;
            }
            let g = grams[id].as_ref().expect("all nodes");
            let m = choose(id, &g.sigma).clamp(1, g.sigma.len());
            if m == g.sigma.len() {
                continue;
            }
            let proj = g.u.columns(0, m).transpose();
            let p = n.tree.parent(id).expect("non-root");
            let slot = n.tree.child_slot(id).expect("non-root");
            let last = n.cores[id].order() - 1;
            n.cores[id] = n.cores[id].mode_multiply(last, &proj).expect("consistent shape");
            n.cores[p] = n.cores[p].mode_multiply(slot, &proj).expect("consistent shape");
        }
        n.orthogonalize();
        n
    }

    /// Truncation at relative precision `eps`: `‖u - u_m‖ ≤ eps ‖u‖`.
    pub fn truncate(&self, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("precision {eps} outside [0, 1)")));
        }
        let edges = (self.tree.len() - 1).max(1) as f64;
        let tol = eps / edges.sqrt();
        self.truncate_with(|_, s| tail_rank(s, tol)).trimmed()
    }

    /// Nodewise truncations can leave a node with more directions than its
    /// neighbours pass on; those carry zero singular values and are dropped here.
    pub(crate) fn trimmed(self) -> Result<Self> {
        let ranks = self.ranks();
        let dims = self.leaf_dims();
        if check_admissible(&self.tree, &ranks, &dims)?.is_none() {
            return Ok(self);
        }
        let capped = admissible_cap(&self.tree, &vec![1; ranks.len()], &ranks, &dims);
        Ok(self.truncate_with(|id, _| capped[id]))
    }

    /// Truncation to the given ranks, keeping the leading singular directions.
    pub fn truncate_to_ranks(&self, ranks: &[usize]) -> Result<Self> {
        let current = self.ranks();
        if ranks.len() != current.len() {
            return Err(Error::MissingRank(ranks.len()));
        }
        if ranks.iter().zip(&current).any(|(a, b)| a > b || *a == 0) {
            return Err(Error::Inadmissible(format!("target ranks {ranks:?} exceed current {current:?}")));
        }
        if let Some(v) = check_admissible(&self.tree, ranks, &self.leaf_dims())? {
            return Err(Error::Inadmissible(v.to_string()));
        }
        Ok(self.truncate_with(|id, _| ranks[id]))
    }
}
