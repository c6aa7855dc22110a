//! Checks shared by the property, oracle and acceptance targets.
#![allow(dead_code)]

use nalgebra::DVector;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensortree::basis::{FeatureBasis, PatternSequence};
use tensortree::learning::{loo_risk, solve_with_pattern_selection};
use tensortree::network::TreeTensorNetwork;
use tensortree::tensor::{FullTensor, Matrix};
use tensortree::tree::{admissible_cap, DimensionTree, PermutationMove, TreeKind};

pub const TOL: f64 = 1e-10;

/// Random admissible network with `d ≤ max_d`, ranks ≤ 4 and degree ≤ `max_p`.
pub fn random_net(seed: u64, max_d: usize, max_p: usize) -> TreeTensorNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=max_d);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let kind = if rng.random() { TreeKind::Balanced } else { TreeKind::Linear };
    let tree = DimensionTree::build(kind, d, &order).unwrap();
    let bases: Vec<FeatureBasis> = (0..d).map(|_| FeatureBasis::legendre(rng.random_range(1..=max_p))).collect();
    let dims: Vec<usize> = bases.iter().map(|b| b.size()).collect();
    let wild: Vec<usize> = (0..tree.len()).map(|_| rng.random_range(1..=4)).collect();
    let ranks = admissible_cap(&tree, &vec![1; tree.len()], &wild, &dims);
    TreeTensorNetwork::random(tree, bases, &ranks, &mut rng).unwrap()
}

pub fn points(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn frob(t: &FullTensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Format-algebra invariants of one random network; returns the violations found.
pub fn format_algebra(seed: u64) -> Vec<String> {
    let net = random_net(seed, 6, 4);
    let mut bad = Vec::new();
    let xs = points(1000, net.dim(), seed ^ 0x5eed);
    let reference = net.evaluate(&xs).unwrap();
    let full = net.assemble_full().unwrap();
    let norm = frob(&full);
    let check = |bad: &mut Vec<String>, what: &str, other: &TreeTensorNetwork| {
        let e = rel_diff(&other.evaluate(&xs).unwrap(), &reference);
        if !(e <= TOL) {
            bad.push(format!("seed {seed}: {what} changed evaluations by {e:.2e}"));
        }
    };

    let orth = net.orthogonalized();
    check(&mut bad, "orthogonalize", &orth);
    let e = (orth.core(orth.tree().root()).norm() - norm).abs() / norm;
    if !(e <= TOL) {
        bad.push(format!("seed {seed}: Parseval at the root off by {e:.2e}"));
    }
    for alpha in 0..net.tree().len() {
        if alpha == net.tree().root() {
            continue;
        }
        let a = net.alpha_orthogonalized(alpha).unwrap();
        check(&mut bad, &format!("{alpha}-orthogonalize"), &a);
        // the α-core carries the whole norm
        let e = (a.core(alpha).norm() - norm).abs() / norm;
        if !(e <= TOL) {
            bad.push(format!("seed {seed}: Parseval at node {alpha} off by {e:.2e}"));
        }
    }
    check(&mut bad, "truncate(0)", &net.truncate(0.0).unwrap());

    let tree = net.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moves: Vec<PermutationMove> = (0..tree.len())
        .flat_map(|a| (0..tree.len()).map(move |b| PermutationMove::new(a, b)))
        .filter(|mv| mv.validate(tree).is_ok() && !mv.is_sibling_swap(tree))
        .collect();
    if let Some(&mv) = moves.choose(&mut rng) {
        check(&mut bad, "permute(0)", &net.permute_representation(mv, 0.0).unwrap());
    }

    for eps in [1e-1, 1e-3, 1e-6] {
        let t = net.truncate(eps).unwrap();
        let tf = t.assemble_full().unwrap();
        let err = full.data().iter().zip(tf.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if err > eps * norm * (1.0 + 1e-12) {
            bad.push(format!("seed {seed}: truncate({eps}) error {:.3e} above bound", err / norm));
        }
    }
    bad
}

/// α-singular values against a brute-force SVD of the full coefficient tensor.
pub fn spectrum_oracle(seed: u64) -> Vec<String> {
    let net = random_net(seed, 5, 3);
    let full = net.assemble_full().unwrap();
    let norm = frob(&full);
    let spectrum = net.singular_spectrum();
    let tree = net.tree();
    let mut bad = Vec::new();
    for id in 0..tree.len() {
        if id == tree.root() {
            continue;
        }
        let m = full.matricize(tree.subset(id)).unwrap();
        let mut want: Vec<f64> = m.singular_values().iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let got = &spectrum.values[id];
        for (k, w) in want.iter().enumerate() {
            let g = got.get(k).copied().unwrap_or(0.0);
            if (g - w).abs() > TOL * norm {
                bad.push(format!("seed {seed}: node {id} singular value {k}: {g:.6e} vs {w:.6e}"));
                break;
            }
        }
    }
    bad
}

/// Mean squared leave-one-out error by refitting without each sample.
pub fn loo_by_refits(a: &Matrix, y: &[f64]) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let ai = a.select_rows(&rows);
        let yi = DVector::from_iterator(n - 1, rows.iter().map(|&r| y[r]));
        let c = ai.svd(true, true).solve(&yi, 1e-13).unwrap();
        total += (y[i] - (a.row(i) * c)[0]).powi(2);
    }
    total / n as f64
}

/// Closed-form LOO risk, alone and inside pattern selection, against refits.
pub fn loo_oracle(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=10);
    let n = rng.random_range(m + 2..=40);
    let a = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut bad = Vec::new();
    let want = loo_by_refits(&a, &y);
    let got = loo_risk(&a, &y).unwrap();
    if (got - want).abs() > TOL * want.max(1.0) {
        bad.push(format!("seed {seed}: LOO {got:.12e} vs refits {want:.12e}"));
    }
    let sizes: Vec<Vec<usize>> = (1..=m).map(|s| (0..s).collect()).collect();
    let sol = solve_with_pattern_selection(&a, &y, &PatternSequence::new(sizes).unwrap()).unwrap();
    let cols: Vec<usize> = (0..sol.pattern_size).collect();
    let want = loo_by_refits(&a.select_columns(&cols), &y);
    if (sol.loo - want).abs() > TOL * want.max(1.0) {
        bad.push(format!("seed {seed}: selected-pattern LOO {:.12e} vs refits {want:.12e}", sol.loo));
    }
    bad
}

/// Matricization followed by its inverse reproduces the tensor bit for bit.
pub fn matricization_round_trip(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = rng.random_range(1..=5);
    let shape: Vec<usize> = (0..order).map(|_| rng.random_range(1..=4)).collect();
    let t = FullTensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0)).unwrap();
    let mut modes: Vec<usize> = (0..order).collect();
    modes.shuffle(&mut rng);
    modes.truncate(rng.random_range(1..=order));
    let m = t.matricize(&modes).unwrap();
    let back = FullTensor::from_matricization(&m, &shape, &modes).unwrap();
    if back != t {
        vec![format!("seed {seed}: round trip through modes {modes:?} of {shape:?} is not exact")]
    } else {
        Vec::new()
    }
}
