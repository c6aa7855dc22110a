//! Change of representation under a node permutation of the tree.

use super::{OrthState, TreeTensorNetwork};
use crate::error::{Error, Result};
use crate::tensor::{row_major, truncated_svd, FullTensor};
use crate::tree::{permute_topology, PermutationMove};

/// Default cap on the entries of the contracted tensor built during a permutation.
pub const DEFAULT_CONTRACTION_CAP: usize = 10_000_000;

/// A tensor whose modes are tree edges, each labeled by the node below the edge.
struct EdgeTensor {
    t: FullTensor,
    legs: Vec<usize>,
}

impl EdgeTensor {
    fn pos(&self, leg: usize) -> usize {
        self.legs.iter().position(|&l| l == leg).expect("leg present")
    }

    /// Replaces the leg `node` by the legs of the core of `node` (children, in order).
    fn absorb(&self, node: usize, core: &FullTensor, child_legs: &[usize], cap: usize) -> Result<EdgeTensor> {
        let p = self.pos(node);
        let big = self.t.matricize(&[p])?;
        let r = core.shape().last().copied().expect("rank mode");
        let small = crate::tensor::Matrix::from_row_slice(core.len() / r, r, core.data());
        let entries = small.nrows().saturating_mul(big.ncols());
        if entries > cap {
            return Err(Error::SizeGuard { entries, cap });
        }
        let prod = small * big;
        let mut shape: Vec<usize> = core.shape()[..core.order() - 1].to_vec();
        let mut legs = child_legs.to_vec();
        for (k, &l) in self.legs.iter().enumerate() {
            if k != p {
                shape.push(self.t.shape()[k]);
                legs.push(l);
            }
        }
        Ok(EdgeTensor { t: FullTensor::new(shape, row_major(&prod))?, legs })
    }
}

impl TreeTensorNetwork {
    /// Representation on the tree with `ν` and `μ` exchanged, accurate to
    /// relative precision `eps`.
    pub fn permute_representation(&self, mv: PermutationMove, eps: f64) -> Result<Self> {
        self.permute_representation_capped(mv, eps, DEFAULT_CONTRACTION_CAP)
    }

    pub fn permute_representation_capped(&self, mv: PermutationMove, eps: f64, cap: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("precision {eps} outside [0, 1)")));
        }
        mv.validate(&self.tree)?;
        if mv.is_sibling_swap(&self.tree) {
            return Ok(self.clone());
        }
        let gamma = mv.gamma(&self.tree);
        let affected = mv.affected(&self.tree);
        let size = mv.contracted_size(&self.tree, &self.ranks());
        if size > cap as f64 {
            return Err(Error::SizeGuard { entries: size.min(usize::MAX as f64) as usize, cap });
        }

        let mut net = self.clone();
        if gamma == net.tree.root() {
            net.ensure_all_orthogonal();
        } else {
            net.alpha_orthogonalize(gamma)?;
        }

        // contract γ with its affected descendants, top-down
        let mut legs: Vec<usize> = net.tree.children(gamma).to_vec();
        legs.push(gamma);
        let mut m = EdgeTensor { t: net.cores[gamma].clone(), legs };
        let mut top_down = affected.clone();
        top_down.reverse();
        for &a in &top_down {
            m = m.absorb(a, &net.cores[a], net.tree.children(a), cap)?;
        }

        let new_tree = permute_topology(&net.tree, mv)?;
        let tol = eps / (affected.len().max(1) as f64).sqrt();
        let mut order = affected.clone();
        order.sort_by_key(|&i| (std::cmp::Reverse(new_tree.level(i)), i));
        for &eta in &order {
            let kids = new_tree.children(eta);
            let rows: Vec<usize> = kids.iter().map(|&c| m.pos(c)).collect();
            let mat = m.t.matricize(&rows)?;
            let svd = truncated_svd(&mat, None, tol)?;
            let k = svd.retained_rank;
            let mut core_shape: Vec<usize> = rows.iter().map(|&p| m.t.shape()[p]).collect();
            core_shape.push(k);
            net.cores[eta] = FullTensor::new(core_shape, row_major(&svd.left))?;
            let mut sv = svd.right.transpose();
            for j in 0..k {
                sv.row_mut(j).scale_mut(svd.singular_values[j]);
            }
            let mut shape = vec![k];
            let mut legs = vec![eta];
            for (p, &l) in m.legs.iter().enumerate() {
                if !rows.contains(&p) {
                    shape.push(m.t.shape()[p]);
                    legs.push(l);
                }
            }
            m = EdgeTensor { t: FullTensor::new(shape, row_major(&sv))?, legs };
        }
        let mut perm: Vec<usize> = new_tree.children(gamma).iter().map(|&c| m.pos(c)).collect();
        perm.push(m.pos(gamma));
        net.cores[gamma] = m.t.permute(&perm)?;
        let orth = if gamma == new_tree.root() { OrthState::All } else { OrthState::Node(gamma) };
        TreeTensorNetwork::from_parts(new_tree, net.bases, net.cores, orth)?.trimmed()
    }
}
