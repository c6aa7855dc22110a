//! Dimension partition trees over `{0, .., d-1}`.
//!
//! Nodes live in slots; a node keeps its slot through node permutations while its
//! subset is recomputed. Dimensions are 0-based internally and printed 1-based.

use std::collections::BTreeSet;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-slot positive ranks, indexed like the tree's nodes.
pub type RankMap = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub subset: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimensionTree {
    nodes: Vec<Node>,
    root: usize,
    dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Balanced,
    Linear,
    Trivial,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relations {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Parent first, root last.
    pub ascendants: Vec<usize>,
    pub descendants: Vec<usize>,
    pub level: usize,
    pub leaves: Vec<usize>,
}

impl DimensionTree {
    pub fn build(kind: TreeKind, d: usize, leaf_order: &[usize]) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidTree(format!("dimension {d} < 2")));
        }
        let mut seen = vec![false; d];
        if leaf_order.len() != d || leaf_order.iter().any(|&k| k >= d || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::InvalidTree(format!("{leaf_order:?} is not a permutation of 0..{d}")));
        }
        let mut nodes = Vec::new();
        match kind {
            TreeKind::Trivial => {
                nodes.push(Node { subset: vec![], parent: None, children: vec![], level: 0 });
                for &k in leaf_order {
                    let id = nodes.len();
                    nodes.push(Node { subset: vec![k], parent: Some(0), children: vec![], level: 1 });
                    nodes[0].children.push(id);
                }
            }
            TreeKind::Balanced => {
                grow(&mut nodes, None, leaf_order, &|n| n.div_ceil(2));
            }
            TreeKind::Linear => {
                grow(&mut nodes, None, leaf_order, &|_| 1);
            }
        }
        let mut tree = Self { nodes, root: 0, dim: d };
        tree.refresh();
        Ok(tree)
    }

    /// Builds a tree from its node subsets (0-based). The parent of each node is the
    /// smallest listed strict superset; children are ordered by their smallest element.
    pub fn from_subsets(d: usize, subsets: &[Vec<usize>]) -> Result<Self> {
        let mut sets: Vec<Vec<usize>> = subsets
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.sort_unstable();
                s
            })
            .collect();
        sets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        sets.dedup();
        if sets.first().map(Vec::len) != Some(d) {
            return Err(Error::InvalidTree("the full dimension set is missing".into()));
        }
        let n = sets.len();
        let mut children = vec![Vec::new(); n];
        for i in 1..n {
            let parent = (0..i)
                .rev()
                .find(|&j| sets[j].len() > sets[i].len() && sets[i].iter().all(|k| sets[j].binary_search(k).is_ok()))
                .ok_or_else(|| Error::InvalidTree(format!("subset {:?} has no superset", sets[i])))?;
            children[parent].push(i);
        }
        for ch in &mut children {
            ch.sort_by_key(|&c| sets[c][0]);
        }
        let leaf_dims = (0..n)
            .map(|i| if children[i].is_empty() { (sets[i].len() == 1).then(|| sets[i][0]) } else { None })
            .collect::<Vec<_>>();
        if (0..n).any(|i| children[i].is_empty() && leaf_dims[i].is_none()) {
            return Err(Error::InvalidTree("a leaf is not a singleton".into()));
        }
        Self::from_children(d, 0, children, leaf_dims)
    }

    /// Builds a tree from explicit parent/children links; subsets and levels are derived.
    pub fn from_children(d: usize, root: usize, children: Vec<Vec<usize>>, leaf_dims: Vec<Option<usize>>) -> Result<Self> {
        let n = children.len();
        if leaf_dims.len() != n || root >= n {
            return Err(Error::InvalidTree("inconsistent node tables".into()));
        }
        let mut nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                subset: leaf_dims[i].map(|k| vec![k]).unwrap_or_default(),
                parent: None,
                children: children[i].clone(),
                level: 0,
            })
            .collect();
        for (i, ch) in children.iter().enumerate() {
            for &c in ch {
                if c >= n || nodes[c].parent.is_some() || c == root {
                    return Err(Error::InvalidTree(format!("bad child link {i} -> {c}")));
                }
                nodes[c].parent = Some(i);
            }
        }
        let mut tree = Self { nodes, root, dim: d };
        tree.refresh();
        tree.validate()?;
        Ok(tree)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn subset(&self, id: usize) -> &[usize] {
        &self.nodes[id].subset
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn level(&self, id: usize) -> usize {
        self.nodes[id].level
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Dimension carried by a leaf.
    pub fn leaf_dim(&self, id: usize) -> Option<usize> {
        self.is_leaf(id).then(|| self.nodes[id].subset[0])
    }

    /// Slot of the leaf carrying dimension `k`.
    pub fn leaf_of_dim(&self, k: usize) -> Option<usize> {
        (0..self.len()).find(|&i| self.is_leaf(i) && self.nodes[i].subset[0] == k)
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn interior(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_leaf(i)).collect()
    }

    /// Position of `id` among its parent's children.
    pub fn child_slot(&self, id: usize) -> Option<usize> {
        let p = self.parent(id)?;
        self.nodes[p].children.iter().position(|&c| c == id)
    }

    pub fn ascendants(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent(id);
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent(p);
        }
        out
    }

    pub fn descendants(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children(id).iter().rev().copied().collect();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.children(c).iter().rev());
        }
        out
    }

    pub fn siblings(&self, id: usize) -> Vec<usize> {
        match self.parent(id) {
            Some(p) => self.children(p).iter().copied().filter(|&c| c != id).collect(),
            None => vec![],
        }
    }

    pub fn relations(&self, id: usize) -> Result<Relations> {
        if id >= self.len() {
            return Err(Error::UnknownNode(id));
        }
        let mut leaves: Vec<usize> = self
            .descendants(id)
            .into_iter()
            .chain(std::iter::once(id))
            .filter(|&c| self.is_leaf(c))
            .collect();
        leaves.sort_by_key(|&c| self.nodes[c].subset[0]);
        Ok(Relations {
            parent: self.parent(id),
            children: self.children(id).to_vec(),
            ascendants: self.ascendants(id),
            descendants: self.descendants(id),
            level: self.level(id),
            leaves,
        })
    }

    pub fn max_level(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Slots sorted by decreasing level, ties by slot id.
    pub fn by_decreasing_level(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.len()).collect();
        ids.sort_by_key(|&i| (std::cmp::Reverse(self.level(i)), i));
        ids
    }

    /// Slot whose subset equals `subset` (0-based, any order).
    pub fn find(&self, subset: &[usize]) -> Option<usize> {
        let mut s = subset.to_vec();
        s.sort_unstable();
        self.nodes.iter().position(|n| n.subset == s)
    }

    pub fn contains_subset(&self, subset: &[usize]) -> bool {
        self.find(subset).is_some()
    }

    /// The tree as a set of subsets.
    pub fn subset_set(&self) -> BTreeSet<Vec<usize>> {
        self.nodes.iter().map(|n| n.subset.clone()).collect()
    }

    pub fn same_subsets(&self, other: &Self) -> bool {
        self.subset_set() == other.subset_set()
    }

    pub fn arity(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    /// Recomputes subsets of interior nodes from their leaves, and all levels.
    fn refresh(&mut self) {
        let mut order = vec![self.root];
        let mut k = 0;
        self.nodes[self.root].level = 0;
        while k < order.len() {
            let id = order[k];
            let lvl = self.nodes[id].level;
            for c in self.nodes[id].children.clone() {
                self.nodes[c].level = lvl + 1;
                order.push(c);
            }
            k += 1;
        }
        for &id in order.iter().rev() {
            if !self.nodes[id].children.is_empty() {
                let mut s: Vec<usize> = self.nodes[id]
                    .children
                    .iter()
                    .flat_map(|&c| self.nodes[c].subset.iter().copied())
                    .collect();
                s.sort_unstable();
                self.nodes[id].subset = s;
            }
        }
    }

    /// Checks the structural invariants of a dimension partition tree.
    pub fn validate(&self) -> Result<()> {
        let root = &self.nodes[self.root];
        if root.parent.is_some() || root.level != 0 {
            return Err(Error::InvalidTree("root has a parent or nonzero level".into()));
        }
        if root.subset != (0..self.dim).collect::<Vec<_>>() {
            return Err(Error::InvalidTree("root subset is not the full dimension set".into()));
        }
        let mut reached = 0;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            reached += 1;
            let n = &self.nodes[id];
            if n.children.is_empty() {
                if n.subset.len() != 1 {
                    return Err(Error::InvalidTree(format!("leaf {id} is not a singleton")));
                }
                continue;
            }
            if n.children.len() < 2 {
                return Err(Error::InvalidTree(format!("node {id} has a single child")));
            }
            let mut union: Vec<usize> = Vec::new();
            for &c in &n.children {
                let cn = &self.nodes[c];
                if cn.parent != Some(id) || cn.level != n.level + 1 {
                    return Err(Error::InvalidTree(format!("inconsistent link {id} -> {c}")));
                }
                union.extend(&cn.subset);
                stack.push(c);
            }
            union.sort_unstable();
            let before = union.len();
            union.dedup();
            if union.len() != before || union != n.subset {
                return Err(Error::InvalidTree(format!("children of {id} do not partition it")));
            }
        }
        if reached != self.nodes.len() {
            return Err(Error::InvalidTree("unreachable nodes".into()));
        }
        Ok(())
    }

    /// Slots listed in canonical order: lexicographic by subset.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.len()).collect();
        ids.sort_by(|&a, &b| self.nodes[a].subset.cmp(&self.nodes[b].subset));
        ids
    }

    /// Text form: one line per node in canonical order, `{subset} -> child indices`.
    /// Children are listed in stored order using canonical indices.
    pub fn to_text(&self) -> String {
        let order = self.canonical_order();
        let mut pos = vec![0; self.len()];
        for (k, &id) in order.iter().enumerate() {
            pos[id] = k;
        }
        let mut out = format!("d={}\n", self.dim);
        for &id in &order {
            let n = &self.nodes[id];
            out.push_str(&format_subset(&n.subset));
            if !n.children.is_empty() {
                out.push_str(" ->");
                for &c in &n.children {
                    out.push_str(&format!(" {}", pos[c]));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`DimensionTree::to_text`] output; slots follow the listed order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let head = lines.next().ok_or_else(|| Error::Parse("empty tree text".into()))?;
        let d: usize = head
            .strip_prefix("d=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad header {head:?}")))?;
        let mut subsets = Vec::new();
        let mut children = Vec::new();
        for line in lines {
            let (set, rest) = match line.split_once("->") {
                Some((a, b)) => (a.trim(), Some(b)),
                None => (line, None),
            };
            let inner = set
                .strip_prefix('{')
                .and_then(|s| s.strip_suffix('}'))
                .ok_or_else(|| Error::Parse(format!("bad subset {set:?}")))?;
            let subset: Vec<usize> = inner
                .split(',')
                .map(|t| t.trim().parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Parse(format!("bad subset {set:?}")))?;
            let ch: Vec<usize> = match rest {
                Some(r) => r
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad child index {t:?}"))))
                    .collect::<Result<_>>()?,
                None => vec![],
            };
            subsets.push(subset);
            children.push(ch);
        }
        let full: Vec<usize> = (0..d).collect();
        let root = subsets
            .iter()
            .position(|s| *s == full)
            .ok_or_else(|| Error::Parse("no root node".into()))?;
        let leaf_dims = subsets
            .iter()
            .zip(&children)
            .map(|(s, c)| c.is_empty().then(|| s.first().copied()).flatten())
            .collect();
        let tree = Self::from_children(d, root, children, leaf_dims)?;
        for (i, s) in subsets.iter().enumerate() {
            if tree.nodes[i].subset != *s {
                return Err(Error::Parse(format!("listed subset of node {i} disagrees with its children")));
            }
        }
        Ok(tree)
    }

    /// Reports subsets 1-based, in canonical order.
    pub fn subsets_display(&self) -> Vec<Vec<usize>> {
        self.canonical_order()
            .into_iter()
            .map(|i| self.nodes[i].subset.iter().map(|k| k + 1).collect())
            .collect()
    }
}

impl fmt::Display for DimensionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub fn format_subset(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|k| (k + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

fn grow(nodes: &mut Vec<Node>, parent: Option<usize>, dims: &[usize], split: &dyn Fn(usize) -> usize) -> usize {
    let id = nodes.len();
    let level = parent.map_or(0, |p| nodes[p].level + 1);
    let subset = if dims.len() == 1 { vec![dims[0]] } else { vec![] };
    nodes.push(Node { subset, parent, children: vec![], level });
    if dims.len() > 1 {
        let k = split(dims.len());
        let left = grow(nodes, Some(id), &dims[..k], split);
        let right = grow(nodes, Some(id), &dims[k..], split);
        nodes[id].children = vec![left, right];
    }
    id
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RootRank,
    ParentSiblings { node: usize },
    Children { node: usize },
    LeafDim { node: usize },
    LeafProduct { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RootRank => write!(f, "root rank must be 1"),
            Violation::ParentSiblings { node } => write!(f, "rank of node {node} exceeds parent rank times sibling ranks"),
            Violation::Children { node } => write!(f, "rank of node {node} exceeds the product of its children's ranks"),
            Violation::LeafDim { node } => write!(f, "rank of leaf {node} exceeds its basis size"),
            Violation::LeafProduct { node } => write!(f, "rank of node {node} exceeds the product of basis sizes below it"),
        }
    }
}

/// First violated admissibility condition, or `None` when the ranks are admissible.
/// `leaf_dims[k]` is the basis size for dimension `k`.
pub fn check_admissible(tree: &DimensionTree, ranks: &[usize], leaf_dims: &[usize]) -> Result<Option<Violation>> {
    if ranks.len() < tree.len() {
        return Err(Error::MissingRank(ranks.len()));
    }
    if leaf_dims.len() != tree.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} basis sizes for a {}-dimensional tree",
            leaf_dims.len(),
            tree.dim()
        )));
    }
    if ranks[tree.root()] != 1 {
        return Ok(Some(Violation::RootRank));
    }
    for id in 0..tree.len() {
        let r = ranks[id];
        if let Some(p) = tree.parent(id) {
            let bound = tree.siblings(id).iter().fold(ranks[p], |acc, &s| acc.saturating_mul(ranks[s]));
            if r > bound {
                return Ok(Some(Violation::ParentSiblings { node: id }));
            }
        }
        if tree.is_leaf(id) {
            if r > leaf_dims[tree.subset(id)[0]] {
                return Ok(Some(Violation::LeafDim { node: id }));
            }
        } else {
            let bound = tree.children(id).iter().fold(1usize, |acc, &c| acc.saturating_mul(ranks[c]));
            if r > bound {
                return Ok(Some(Violation::Children { node: id }));
            }
        }
        let cap = tree.subset(id).iter().fold(1usize, |acc, &k| acc.saturating_mul(leaf_dims[k]));
        if r > cap {
            return Ok(Some(Violation::LeafProduct { node: id }));
        }
    }
    Ok(None)
}

pub fn is_admissible(tree: &DimensionTree, ranks: &[usize], leaf_dims: &[usize]) -> Result<bool> {
    Ok(check_admissible(tree, ranks, leaf_dims)?.is_none())
}

/// Admissible ranks between `lower` and `target`, lowering `target` only where a
/// condition is violated. `lower` must itself be admissible and below `target`.
pub fn admissible_cap(tree: &DimensionTree, lower: &[usize], target: &[usize], leaf_dims: &[usize]) -> RankMap {
    let mut r: Vec<usize> = target.iter().zip(lower).map(|(&t, &l)| t.max(l)).collect();
    r[tree.root()] = 1;
    loop {
        let before = r.clone();
        for id in tree.by_decreasing_level() {
            let cap = match tree.leaf_dim(id) {
                Some(k) => leaf_dims[k],
                None => tree.children(id).iter().fold(1usize, |a, &c| a.saturating_mul(r[c])),
            };
            r[id] = r[id].min(cap).max(lower[id]);
        }
        let mut top = tree.by_decreasing_level();
        top.reverse();
        for id in top {
            if let Some(p) = tree.parent(id) {
                let cap = tree.siblings(id).iter().fold(r[p], |a, &s| a.saturating_mul(r[s]));
                r[id] = r[id].min(cap).max(lower[id]);
            }
        }
        if r == before {
            return r;
        }
    }
}

/// `C(T, r)`: number of entries over all cores.
pub fn storage_complexity(tree: &DimensionTree, ranks: &[usize], leaf_dims: &[usize]) -> usize {
    (0..tree.len())
        .map(|id| {
            if tree.is_leaf(id) {
                leaf_dims[tree.subset(id)[0]] * ranks[id]
            } else {
                tree.children(id).iter().map(|&c| ranks[c]).product::<usize>() * ranks[id]
            }
        })
        .sum()
}

/// Exchange of two disjoint nodes between their parents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationMove {
    pub nu: usize,
    pub mu: usize,
}

impl PermutationMove {
    pub fn new(nu: usize, mu: usize) -> Self {
        Self { nu, mu }
    }

    pub fn validate(&self, tree: &DimensionTree) -> Result<()> {
        for id in [self.nu, self.mu] {
            if id >= tree.len() {
                return Err(Error::UnknownNode(id));
            }
            if id == tree.root() {
                return Err(Error::InvalidMove("the root cannot be permuted".into()));
            }
        }
        let a = tree.subset(self.nu);
        if self.nu == self.mu || tree.subset(self.mu).iter().any(|k| a.contains(k)) {
            return Err(Error::InvalidMove(format!(
                "{} and {} are not disjoint",
                format_subset(a),
                format_subset(tree.subset(self.mu))
            )));
        }
        Ok(())
    }

    pub fn is_sibling_swap(&self, tree: &DimensionTree) -> bool {
        tree.parent(self.nu) == tree.parent(self.mu)
    }

    /// Deepest common ascendant of the two nodes.
    pub fn gamma(&self, tree: &DimensionTree) -> usize {
        let an = tree.ascendants(self.nu);
        let am = tree.ascendants(self.mu);
        *an.iter()
            .find(|a| am.contains(a))
            .expect("non-root nodes share the root")
    }

    /// Ascendants of either node strictly below the common ascendant, by decreasing level.
    pub fn affected(&self, tree: &DimensionTree) -> Vec<usize> {
        let g = self.gamma(tree);
        let mut out: Vec<usize> = Vec::new();
        for id in [self.nu, self.mu] {
            for a in tree.ascendants(id) {
                if a == g {
                    break;
                }
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out.sort_by_key(|&i| (std::cmp::Reverse(tree.level(i)), i));
        out
    }

    /// Nodes whose rank indexes a free leg of the tensor obtained by contracting
    /// the affected cores into the common ascendant's core (excluding its own rank).
    pub fn open_legs(&self, tree: &DimensionTree) -> Vec<usize> {
        let g = self.gamma(tree);
        let inner = self.affected(tree);
        let mut legs = Vec::new();
        let mut stack = vec![g];
        while let Some(id) = stack.pop() {
            for &c in tree.children(id) {
                if inner.contains(&c) {
                    stack.push(c);
                } else {
                    legs.push(c);
                }
            }
        }
        legs.sort_unstable();
        legs
    }

    /// Size of the contracted tensor: `r_gamma` times the ranks of the open legs.
    pub fn contracted_size(&self, tree: &DimensionTree, ranks: &[usize]) -> f64 {
        let g = self.gamma(tree);
        self.open_legs(tree)
            .iter()
            .fold(ranks[g] as f64, |acc, &l| acc * ranks[l] as f64)
    }
}

/// Tree obtained by exchanging the positions of `ν` and `μ`.
pub fn permute_topology(tree: &DimensionTree, mv: PermutationMove) -> Result<DimensionTree> {
    mv.validate(tree)?;
    if mv.is_sibling_swap(tree) {
        return Ok(tree.clone());
    }
    let mut out = tree.clone();
    let pn = tree.parent(mv.nu).expect("non-root");
    let pm = tree.parent(mv.mu).expect("non-root");
    let sn = tree.child_slot(mv.nu).expect("non-root");
    let sm = tree.child_slot(mv.mu).expect("non-root");
    out.nodes[pn].children[sn] = mv.mu;
    out.nodes[pm].children[sm] = mv.nu;
    out.nodes[mv.nu].parent = Some(pm);
    out.nodes[mv.mu].parent = Some(pn);
    out.refresh();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Cap on the number of moves per sequence; `None` means the tree dimension.
    pub m_max: Option<usize>,
    pub max_retries: usize,
}

impl Default for MoveParams {
    fn default() -> Self {
        Self { gamma1: 2.0, gamma2: 2.0, gamma3: 2.0, m_max: None, max_retries: 100 }
    }
}

fn draw_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|w| w.sample(rng))
}

/// Number of moves, `P(m = k) ∝ k^-γ1` on `1..=m_max`.
pub fn draw_move_count<R: Rng + ?Sized>(rng: &mut R, gamma1: f64, m_max: usize) -> usize {
    let w: Vec<f64> = (1..=m_max.max(1)).map(|k| (k as f64).powf(-gamma1)).collect();
    draw_weighted(rng, &w).unwrap_or(0) + 1
}

/// Weights of the first node: non-root nodes, `∝ r_parent^γ2`.
pub fn first_node_weights(tree: &DimensionTree, ranks: &[usize], gamma2: f64) -> Vec<f64> {
    (0..tree.len())
        .map(|id| match tree.parent(id) {
            Some(p) => (ranks[p] as f64).powf(gamma2),
            None => 0.0,
        })
        .collect()
}

/// Weights of the second node given the first: disjoint non-sibling nodes,
/// `∝ size^-γ3` of the tensor the move would have to contract.
pub fn second_node_weights(tree: &DimensionTree, ranks: &[usize], nu: usize, gamma3: f64) -> Vec<f64> {
    (0..tree.len())
        .map(|mu| {
            let mv = PermutationMove::new(nu, mu);
            if mv.validate(tree).is_err() || mv.is_sibling_swap(tree) {
                0.0
            } else {
                mv.contracted_size(tree, ranks).powf(-gamma3)
            }
        })
        .collect()
}

/// Draws one move on `tree`, resampling the first node when it has no partner.
pub fn draw_move<R: Rng + ?Sized>(
    tree: &DimensionTree,
    ranks: &[usize],
    rng: &mut R,
    params: &MoveParams,
) -> Result<PermutationMove> {
    let w1 = first_node_weights(tree, ranks, params.gamma2);
    for _ in 0..params.max_retries.max(1) {
        let nu = draw_weighted(rng, &w1).ok_or(Error::NoEligibleMove(0))?;
        let w2 = second_node_weights(tree, ranks, nu, params.gamma3);
        if let Some(mu) = draw_weighted(rng, &w2) {
            return Ok(PermutationMove::new(nu, mu));
        }
    }
    Err(Error::NoEligibleMove(params.max_retries))
}

/// Draws a sequence of moves, each on the tree produced by the previous ones.
/// Ranks stay attached to slots while the working tree changes.
pub fn draw_move_sequence<R: Rng + ?Sized>(
    tree: &DimensionTree,
    ranks: &[usize],
    rng: &mut R,
    params: &MoveParams,
) -> Result<Vec<PermutationMove>> {
    let m = draw_move_count(rng, params.gamma1, params.m_max.unwrap_or(tree.dim()));
    let mut work = tree.clone();
    let mut moves = Vec::with_capacity(m);
    for _ in 0..m {
        let mv = draw_move(&work, ranks, rng, params)?;
        work = permute_topology(&work, mv)?;
        moves.push(mv);
    }
    Ok(moves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ident(d: usize) -> Vec<usize> {
        (0..d).collect()
    }

    fn set(items: &[&[usize]]) -> BTreeSet<Vec<usize>> {
        items.iter().map(|s| s.iter().map(|k| k - 1).collect()).collect()
    }

    #[test]
    fn balanced_linear_and_trivial_shapes() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        assert_eq!(b.subset_set(), set(&[&[1, 2, 3, 4], &[1, 2], &[3, 4], &[1], &[2], &[3], &[4]]));
        let l = DimensionTree::build(TreeKind::Linear, 4, &ident(4)).unwrap();
        assert_eq!(l.subset_set(), set(&[&[1, 2, 3, 4], &[1], &[2, 3, 4], &[2], &[3, 4], &[3], &[4]]));
        let t = DimensionTree::build(TreeKind::Trivial, 4, &ident(4)).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.children(t.root()).len(), 4);
        assert!(DimensionTree::build(TreeKind::Balanced, 1, &[0]).is_err());
        assert!(DimensionTree::build(TreeKind::Balanced, 3, &[0, 0, 1]).is_err());
    }

    #[test]
    fn leaf_order_is_carried() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &[2, 0, 3, 1]).unwrap();
        assert!(b.contains_subset(&[0, 2]));
        assert!(b.contains_subset(&[1, 3]));
    }

    #[test]
    fn relations_on_small_trees() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let n = b.find(&[0, 1]).unwrap();
        let r = b.relations(n).unwrap();
        assert_eq!(r.parent, Some(b.root()));
        assert_eq!(r.level, 1);
        let ch: Vec<&[usize]> = r.children.iter().map(|&c| b.subset(c)).collect();
        assert_eq!(ch, vec![&[0][..], &[1][..]]);
        let root = b.relations(b.root()).unwrap();
        assert!(root.ascendants.is_empty());
        assert_eq!(root.leaves.len(), 4);

        let l = DimensionTree::build(TreeKind::Linear, 4, &ident(4)).unwrap();
        let n = l.find(&[2, 3]).unwrap();
        let r = l.relations(n).unwrap();
        assert_eq!(r.level, 2);
        let asc: Vec<&[usize]> = r.ascendants.iter().map(|&a| l.subset(a)).collect();
        assert_eq!(asc, vec![&[1, 2, 3][..], &[0, 1, 2, 3][..]]);
        assert!(l.relations(99).is_err());
    }

    #[test]
    fn admissibility_conditions() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let n = vec![2; 4];
        assert!(is_admissible(&b, &vec![1; 7], &n).unwrap());
        let mut r = vec![2; 7];
        r[b.root()] = 1;
        r[b.find(&[0, 1]).unwrap()] = 5;
        let v = check_admissible(&b, &r, &[10; 4]).unwrap();
        assert!(v.is_some());
        let mut r = vec![1; 7];
        r[b.find(&[0]).unwrap()] = 3;
        assert_eq!(
            check_admissible(&b, &r, &n).unwrap(),
            Some(Violation::ParentSiblings { node: b.find(&[0]).unwrap() })
        );
        let mut r = vec![3; 7];
        r[b.root()] = 1;
        r[b.find(&[0, 1]).unwrap()] = 1;
        r[b.find(&[2, 3]).unwrap()] = 1;
        // leaf ranks above N=2 but consistent with siblings
        assert!(matches!(check_admissible(&b, &r, &n).unwrap(), Some(_)));
        let mut r = vec![1; 7];
        r[b.root()] = 2;
        assert_eq!(check_admissible(&b, &r, &n).unwrap(), Some(Violation::RootRank));
        assert!(check_admissible(&b, &[1, 1], &n).is_err());
    }

    #[test]
    fn leaf_cap_is_reported() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let mut r = vec![3; 7];
        r[b.root()] = 1;
        r[b.find(&[0, 1]).unwrap()] = 3;
        r[b.find(&[2, 3]).unwrap()] = 3;
        let leaf = b.find(&[0]).unwrap();
        let v = check_admissible(&b, &r, &[2, 4, 4, 4]).unwrap();
        assert_eq!(v, Some(Violation::LeafDim { node: leaf }));
    }

    #[test]
    fn storage_of_small_balanced_tree() {
        let b = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        assert_eq!(storage_complexity(&b, &vec![1; 7], &[2; 4]), 11);
    }

    #[test]
    fn swaps_within_and_across_branches() {
        let t = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let mv = PermutationMove::new(t.find(&[1]).unwrap(), t.find(&[2]).unwrap());
        let t1 = permute_topology(&t, mv).unwrap();
        assert_eq!(t1.subset_set(), set(&[&[1, 2, 3, 4], &[1, 3], &[2, 4], &[1], &[2], &[3], &[4]]));
        let mv = PermutationMove::new(t.find(&[0]).unwrap(), t.find(&[2, 3]).unwrap());
        let t2 = permute_topology(&t, mv).unwrap();
        assert_eq!(t2.subset_set(), set(&[&[1, 2, 3, 4], &[2, 3, 4], &[3, 4], &[1], &[2], &[3], &[4]]));
        t2.validate().unwrap();
        // applying the same slot swap again restores the original
        let back = permute_topology(&t2, mv).unwrap();
        assert!(back.same_subsets(&t));
    }

    #[test]
    fn sibling_swap_and_overlap() {
        let t = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let mv = PermutationMove::new(t.find(&[0]).unwrap(), t.find(&[1]).unwrap());
        assert_eq!(permute_topology(&t, mv).unwrap(), t);
        let mv = PermutationMove::new(t.find(&[0]).unwrap(), t.find(&[0, 1]).unwrap());
        assert!(permute_topology(&t, mv).is_err());
        let mv = PermutationMove::new(t.root(), t.find(&[0]).unwrap());
        assert!(permute_topology(&t, mv).is_err());
    }

    #[test]
    fn gamma_and_affected() {
        let t = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let mv = PermutationMove::new(t.find(&[0]).unwrap(), t.find(&[2]).unwrap());
        assert_eq!(mv.gamma(&t), t.root());
        let mut aff: Vec<Vec<usize>> = mv.affected(&t).iter().map(|&i| t.subset(i).to_vec()).collect();
        aff.sort();
        assert_eq!(aff, vec![vec![0, 1], vec![2, 3]]);
        let mut legs: Vec<Vec<usize>> = mv.open_legs(&t).iter().map(|&i| t.subset(i).to_vec()).collect();
        legs.sort();
        assert_eq!(legs, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn second_node_weights_by_enumeration() {
        // ranks: leaves 2, {1,2} 3, {3,4} 4
        let t = DimensionTree::build(TreeKind::Balanced, 4, &ident(4)).unwrap();
        let mut r = vec![2; 7];
        r[t.root()] = 1;
        r[t.find(&[0, 1]).unwrap()] = 3;
        r[t.find(&[2, 3]).unwrap()] = 3;
        let nu = t.find(&[0]).unwrap();
        let w = second_node_weights(&t, &r, nu, 1.0);
        for mu in 0..t.len() {
            let s = t.subset(mu);
            let expect = match s {
                // contracting {1,2},{3,4} into the root leaves the four leaves open
                [2] | [3] => 1.0 / 16.0,
                // only {1,2} is affected: open legs {1},{2},{3,4}
                [2, 3] => 1.0 / 12.0,
                _ => 0.0,
            };
            assert!((w[mu] - expect).abs() < 1e-15, "{s:?}");
        }
    }

    #[test]
    fn first_node_weights_uniform_for_equal_ranks() {
        let t = DimensionTree::build(TreeKind::Balanced, 6, &ident(6)).unwrap();
        let w = first_node_weights(&t, &vec![3; t.len()], 2.0);
        let nz: Vec<f64> = w.iter().copied().filter(|&x| x > 0.0).collect();
        assert_eq!(nz.len(), t.len() - 1);
        assert!(nz.iter().all(|&x| x == nz[0]));
    }

    #[test]
    fn move_count_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        for _ in 0..20000 {
            let m = draw_move_count(&mut rng, 2.0, 2);
            counts[m] += 1;
        }
        let ratio = counts[1] as f64 / counts[2] as f64;
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn move_sequences_are_reproducible() {
        let t = DimensionTree::build(TreeKind::Balanced, 8, &ident(8)).unwrap();
        let r = vec![1; t.len()];
        let p = MoveParams::default();
        let a = draw_move_sequence(&t, &r, &mut ChaCha8Rng::seed_from_u64(4), &p).unwrap();
        let b = draw_move_sequence(&t, &r, &mut ChaCha8Rng::seed_from_u64(4), &p).unwrap();
        assert_eq!(a, b);
        let mut work = t.clone();
        for mv in a {
            work = permute_topology(&work, mv).unwrap();
            work.validate().unwrap();
            assert_eq!(work.len(), 2 * 8 - 1);
        }
    }

    #[test]
    fn text_round_trip() {
        let t = DimensionTree::build(TreeKind::Balanced, 5, &[3, 1, 4, 0, 2]).unwrap();
        let s = t.to_text();
        let back = DimensionTree::from_text(&s).unwrap();
        assert_eq!(back.to_text(), s);
        assert!(back.same_subsets(&t));
        assert!(DimensionTree::from_text("d=2\n{1,2} -> 1\n{1}\n").is_err());
    }
}
