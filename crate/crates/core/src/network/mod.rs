//! Tree-based tensor networks: one core per node of a dimension tree.
//!
//! A leaf core has shape `(N, r)` where `N` is the size of the leaf's feature basis.
//! An interior core has shape `(r_c1, .., r_cs, r)` with children in stored order.
//! The root rank is 1 and its trailing mode is kept.

mod orth;
mod permute;
mod serial;

pub use orth::SingularSpectrum;
pub use permute::DEFAULT_CONTRACTION_CAP;
pub use serial::NetworkDocument;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::FeatureBasis;
use crate::error::{Error, Result};
use crate::tensor::{FullTensor, Matrix};
use crate::tree::{storage_complexity, DimensionTree, RankMap};

/// Guard on the number of entries produced by [`TreeTensorNetwork::assemble_full`].
pub const ASSEMBLE_CAP: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthState {
    None,
    All,
    /// Orthonormal complement at the given slot.
    Node(usize),
}

#[derive(Clone, Debug)]
pub struct TreeTensorNetwork {
    tree: DimensionTree,
    cores: Vec<FullTensor>,
    bases: Vec<FeatureBasis>,
    orth: OrthState,
}

/// Values of the node functions on a batch: `upward[β]` is `n x r_β`.
#[derive(Clone, Debug)]
pub struct NodeFunctionValues {
    pub upward: Vec<Matrix>,
    pub downward: Vec<Option<Matrix>>,
}

impl TreeTensorNetwork {
    pub fn new(tree: DimensionTree, bases: Vec<FeatureBasis>, cores: Vec<FullTensor>) -> Result<Self> {
        let net = Self { tree, cores, bases, orth: OrthState::None };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let t = &self.tree;
        if self.bases.len() != t.dim() {
            return Err(Error::DimensionMismatch(format!("{} bases for dimension {}", self.bases.len(), t.dim())));
        }
        if self.cores.len() != t.len() {
            return Err(Error::DimensionMismatch(format!("{} cores for {} nodes", self.cores.len(), t.len())));
        }
        for id in 0..t.len() {
            let shape = self.cores[id].shape();
            let expect_front: Vec<usize> = match t.leaf_dim(id) {
                Some(k) => vec![self.bases[k].size()],
                None => t.children(id).iter().map(|&c| self.rank(c)).collect(),
            };
            if shape.len() != expect_front.len() + 1 || shape[..expect_front.len()] != expect_front[..] {
                return Err(Error::DimensionMismatch(format!(
                    "core of node {id} has shape {shape:?}, expected {expect_front:?} plus a rank mode"
                )));
            }
        }
        if self.rank(t.root()) != 1 {
            return Err(Error::DimensionMismatch("root rank must be 1".into()));
        }
        Ok(())
    }

    /// Standard normal cores with the given ranks.
    pub fn random<R: Rng + ?Sized>(tree: DimensionTree, bases: Vec<FeatureBasis>, ranks: &[usize], rng: &mut R) -> Result<Self> {
        let cores = core_shapes(&tree, &bases, ranks)?
            .into_iter()
            .map(|shape| FullTensor::from_fn(shape, |_| rng.sample(StandardNormal)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, bases, cores)
    }

    /// The zero function: all ranks 1, leaves select the constant, root core zero.
    pub fn zeros(tree: DimensionTree, bases: Vec<FeatureBasis>) -> Result<Self> {
        let ranks = vec![1; tree.len()];
        let root = tree.root();
        let cores = core_shapes(&tree, &bases, &ranks)?
            .into_iter()
            .enumerate()
            .map(|(id, shape)| {
                let mut t = FullTensor::zeros(shape)?;
                if id != root {
                    t.data_mut()[0] = 1.0;
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::new(tree, bases, cores)?;
        net.orth = OrthState::All;
        Ok(net)
    }

    /// Rank-one network `prod_k f_k(x_k)` from per-dimension coefficient vectors.
    pub fn rank_one(tree: DimensionTree, bases: Vec<FeatureBasis>, leaf_coeffs: &[Vec<f64>]) -> Result<Self> {
        if leaf_coeffs.len() != tree.dim() {
            return Err(Error::DimensionMismatch("one coefficient vector per dimension".into()));
        }
        let ranks = vec![1; tree.len()];
        let shapes = core_shapes(&tree, &bases, &ranks)?;
        let cores = shapes
            .into_iter()
            .enumerate()
            .map(|(id, shape)| match tree.leaf_dim(id) {
                Some(k) => FullTensor::new(shape, leaf_coeffs[k].clone()),
                None => FullTensor::new(shape, vec![1.0]),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, bases, cores)
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn bases(&self) -> &[FeatureBasis] {
        &self.bases
    }

    pub fn core(&self, id: usize) -> &FullTensor {
        &self.cores[id]
    }

    pub fn cores(&self) -> &[FullTensor] {
        &self.cores
    }

    pub fn orth_state(&self) -> OrthState {
        self.orth
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    /// Replaces a core; its shape must match the node's existing shape.
    pub fn set_core(&mut self, id: usize, core: FullTensor) -> Result<()> {
        if core.shape() != self.cores[id].shape() {
            return Err(Error::DimensionMismatch(format!(
                "new core {:?} differs from {:?}",
                core.shape(),
                self.cores[id].shape()
            )));
        }
        self.cores[id] = core;
        self.orth = OrthState::None;
        Ok(())
    }

    pub(crate) fn from_parts(tree: DimensionTree, bases: Vec<FeatureBasis>, cores: Vec<FullTensor>, orth: OrthState) -> Result<Self> {
        let mut net = Self::new(tree, bases, cores)?;
        net.orth = orth;
        Ok(net)
    }

    pub fn rank(&self, id: usize) -> usize {
        *self.cores[id].shape().last().expect("cores have a rank mode")
    }

    pub fn ranks(&self) -> RankMap {
        (0..self.tree.len()).map(|id| self.rank(id)).collect()
    }

    /// Basis size per dimension.
    pub fn leaf_dims(&self) -> Vec<usize> {
        self.bases.iter().map(FeatureBasis::size).collect()
    }

    pub fn storage_complexity(&self) -> usize {
        storage_complexity(&self.tree, &self.ranks(), &self.leaf_dims())
    }

    pub fn scale(&mut self, c: f64) {
        let root = self.tree.root();
        self.cores[root].scale(c);
    }

    /// Feature matrices `Φ_k` (n x N_k) for every dimension; rows of `xs` are points.
    pub fn leaf_features(&self, xs: &Matrix) -> Result<Vec<Matrix>> {
        if xs.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "points have {} coordinates, network has dimension {}",
                xs.ncols(),
                self.dim()
            )));
        }
        (0..self.dim())
            .map(|k| self.bases[k].eval_matrix(xs.column(k).iter().copied()))
            .collect()
    }

    /// `U^β` for one node given its children's values (or the features for a leaf).
    pub fn upward_node(&self, id: usize, phis: &[Matrix], us: &[Matrix]) -> Matrix {
        let core = &self.cores[id];
        let r = self.rank(id);
        match self.tree.leaf_dim(id) {
            Some(k) => {
                let c = Matrix::from_row_slice(core.shape()[0], r, core.data());
                &phis[k] * c
            }
            None => {
                let children: Vec<&Matrix> = self.tree.children(id).iter().map(|&c| &us[c]).collect();
                let kr = khatri_rao_rows(&children);
                let c = Matrix::from_row_slice(core.len() / r, r, core.data());
                kr * c
            }
        }
    }

    /// `U^β` for every node, computed bottom-up.
    pub fn upward(&self, phis: &[Matrix]) -> Vec<Matrix> {
        let n = phis.first().map_or(0, Matrix::nrows);
        let mut us = vec![Matrix::zeros(n, 0); self.tree.len()];
        for id in self.tree.by_decreasing_level() {
            us[id] = self.upward_node(id, phis, &us);
        }
        us
    }

    /// `W^β` of a child given its parent's `W`.
    pub fn downward_child(&self, child: usize, us: &[Matrix], w_parent: &Matrix) -> Matrix {
        let p = self.tree.parent(child).expect("non-root");
        let slot = self.tree.child_slot(child).expect("non-root");
        let mut factors: Vec<&Matrix> = self
            .tree
            .children(p)
            .iter()
            .filter(|&&c| c != child)
            .map(|&c| &us[c])
            .collect();
        factors.push(w_parent);
        let kr = khatri_rao_rows(&factors);
        let m = self.cores[p].matricize(&[slot]).expect("valid slot");
        kr * m.transpose()
    }

    /// `W^α` by walking down from the root.
    pub fn downward_to(&self, alpha: usize, us: &[Matrix]) -> Matrix {
        let n = us.first().map_or(0, Matrix::nrows);
        let mut path = self.tree.ascendants(alpha);
        path.reverse();
        path.push(alpha);
        let mut w = Matrix::from_element(n, 1, 1.0);
        for &id in &path[1..] {
            w = self.downward_child(id, us, &w);
        }
        w
    }

    pub fn node_values(&self, xs: &Matrix) -> Result<NodeFunctionValues> {
        let phis = self.leaf_features(xs)?;
        let upward = self.upward(&phis);
        let n = xs.nrows();
        let mut downward: Vec<Option<Matrix>> = vec![None; self.tree.len()];
        let mut order: Vec<usize> = self.tree.by_decreasing_level();
        order.reverse();
        for id in order {
            let w = match self.tree.parent(id) {
                None => Matrix::from_element(n, 1, 1.0),
                Some(p) => self.downward_child(id, &upward, downward[p].as_ref().expect("parent first")),
            };
            downward[id] = Some(w);
        }
        Ok(NodeFunctionValues { upward, downward })
    }

    /// Design matrix of node `α`: row `i` is `Φ^α(x_i) ⊗ w^α(x_i)` in core order.
    pub fn design_matrix(&self, alpha: usize, phis: &[Matrix], us: &[Matrix], w: &Matrix) -> Matrix {
        match self.tree.leaf_dim(alpha) {
            Some(k) => khatri_rao_rows(&[&phis[k], w]),
            None => {
                let mut f: Vec<&Matrix> = self.tree.children(alpha).iter().map(|&c| &us[c]).collect();
                f.push(w);
                khatri_rao_rows(&f)
            }
        }
    }

    /// Values at the rows of `xs`.
    pub fn evaluate(&self, xs: &Matrix) -> Result<Vec<f64>> {
        let phis = self.leaf_features(xs)?;
        let us = self.upward(&phis);
        Ok(us[self.tree.root()].column(0).iter().copied().collect())
    }

    /// Full coefficient tensor over `N_1 x .. x N_d`.
    pub fn assemble_full(&self) -> Result<FullTensor> {
        let total = self
            .leaf_dims()
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .unwrap_or(usize::MAX);
        let widest = (0..self.tree.len())
            .map(|id| {
                self.tree
                    .subset(id)
                    .iter()
                    .fold(self.rank(id), |acc, &k| acc.saturating_mul(self.bases[k].size()))
            })
            .max()
            .unwrap_or(0);
        let entries = total.max(widest);
        if entries > ASSEMBLE_CAP {
            return Err(Error::SizeGuard { entries, cap: ASSEMBLE_CAP });
        }
        // per node: (tensor with modes leaf-dims then rank, dimension of each leading mode)
        let mut parts: Vec<Option<(FullTensor, Vec<usize>)>> = vec![None; self.tree.len()];
        for id in self.tree.by_decreasing_level() {
            let part = match self.tree.leaf_dim(id) {
                Some(k) => (self.cores[id].clone(), vec![k]),
                None => {
                    let mut t = self.cores[id].clone();
                    let mut dims = Vec::new();
                    let mut shape = Vec::new();
                    for (slot, &c) in self.tree.children(id).iter().enumerate() {
                        let (ct, cd) = parts[c].take().expect("children first");
                        let rows = ct.len() / self.rank(c);
                        let m = Matrix::from_row_slice(rows, self.rank(c), ct.data());
                        t = t.mode_multiply(slot, &m)?;
                        shape.extend(cd.iter().map(|&k| self.bases[k].size()));
                        dims.extend(cd);
                    }
                    shape.push(self.rank(id));
                    (t.reshape(shape)?, dims)
                }
            };
            parts[id] = Some(part);
        }
        let (t, dims) = parts[self.tree.root()].take().expect("root");
        let shape: Vec<usize> = dims.iter().map(|&k| self.bases[k].size()).collect();
        let t = t.reshape(shape)?;
        let mut perm = vec![0; dims.len()];
        for (pos, &k) in dims.iter().enumerate() {
            perm[k] = pos;
        }
        t.permute(&perm)
    }

    /// Sum of two networks on the same tree: ranks add nodewise except at the root.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.tree != other.tree || self.bases != other.bases {
            return Err(Error::InvalidArgument("networks live on different trees or bases".into()));
        }
        let root = self.tree.root();
        let mut cores = Vec::with_capacity(self.tree.len());
        for id in 0..self.tree.len() {
            let a = &self.cores[id];
            let b = &other.cores[id];
            let core = if let Some(k) = self.tree.leaf_dim(id) {
                let n = self.bases[k].size();
                let (ra, rb) = (self.rank(id), other.rank(id));
                FullTensor::from_fn(vec![n, ra + rb], |ix| {
                    if ix[1] < ra {
                        a.get(&[ix[0], ix[1]])
                    } else {
                        b.get(&[ix[0], ix[1] - ra])
                    }
                })?
            } else {
                let sa = a.shape().to_vec();
                let sb = b.shape().to_vec();
                let last = sa.len() - 1;
                let mut shape: Vec<usize> = sa.iter().zip(&sb).map(|(x, y)| x + y).collect();
                if id == root {
                    shape[last] = 1;
                }
                let mut out = FullTensor::zeros(shape)?;
                let strides = out.strides();
                let mut place = |src: &FullTensor, offs: &[usize]| {
                    let mut ix = vec![0usize; src.order()];
                    for &v in src.data() {
                        let off: usize = ix.iter().zip(offs).zip(&strides).map(|((i, o), s)| (i + o) * s).sum();
                        out.data_mut()[off] = v;
                        crate::tensor::increment(&mut ix, src.shape());
                    }
                };
                place(a, &vec![0; sa.len()]);
                let mut offs = sa.clone();
                if id == root {
                    offs[last] = 0;
                }
                place(b, &offs);
                out
            };
            cores.push(core);
        }
        Self::new(self.tree.clone(), self.bases.clone(), cores)
    }
}

/// Shapes of the cores for given ranks.
pub fn core_shapes(tree: &DimensionTree, bases: &[FeatureBasis], ranks: &[usize]) -> Result<Vec<Vec<usize>>> {
    if ranks.len() != tree.len() {
        return Err(Error::MissingRank(ranks.len()));
    }
    if bases.len() != tree.dim() {
        return Err(Error::DimensionMismatch(format!("{} bases for dimension {}", bases.len(), tree.dim())));
    }
    if ranks[tree.root()] != 1 || ranks.contains(&0) {
        return Err(Error::Inadmissible("root rank must be 1 and all ranks positive".into()));
    }
    Ok((0..tree.len())
        .map(|id| {
            let mut s: Vec<usize> = match tree.leaf_dim(id) {
                Some(k) => vec![bases[k].size()],
                None => tree.children(id).iter().map(|&c| ranks[c]).collect(),
            };
            s.push(ranks[id]);
            s
        })
        .collect())
}

/// Row-wise Khatri-Rao product; the first factor's column index varies slowest.
pub fn khatri_rao_rows(factors: &[&Matrix]) -> Matrix {
    let n = factors.first().map_or(0, |m| m.nrows());
    let mut acc = match factors.first() {
        Some(m) => (*m).clone(),
        None => return Matrix::from_element(n, 1, 1.0),
    };
    for f in &factors[1..] {
        let (ca, cb) = (acc.ncols(), f.ncols());
        let mut out = Matrix::zeros(n, ca * cb);
        for ja in 0..ca {
            let a = acc.column(ja);
            for jb in 0..cb {
                let b = f.column(jb);
                let mut o = out.column_mut(ja * cb + jb);
                for i in 0..n {
                    o[i] = a[i] * b[i];
                }
            }
        }
        acc = out;
    }
    acc
}
