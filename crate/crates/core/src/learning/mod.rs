//! Empirical risk minimization in a fixed tree-based format.

mod ls;

pub use ls::{
    correction_factor, corrected_loo_risk, least_squares, loo_from_leverages, loo_risk, solve_with_pattern_selection, LsSolution,
    SolveFlags,
};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{leaf_patterns, PatternSequence};
use crate::error::{Error, Result};
use crate::network::TreeTensorNetwork;
use crate::tensor::{FullTensor, Matrix};

/// Points (rows of `xs`) with their target values.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub xs: Matrix,
    pub ys: Vec<f64>,
}

impl Sample {
    pub fn new(xs: Matrix, ys: Vec<f64>) -> Result<Self> {
        if xs.nrows() == 0 {
            return Err(Error::InvalidArgument("empty sample".into()));
        }
        if xs.nrows() != ys.len() {
            return Err(Error::DimensionMismatch(format!("{} points, {} targets", xs.nrows(), ys.len())));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Sample {
        Sample { xs: self.xs.select_rows(rows), ys: rows.iter().map(|&i| self.ys[i]).collect() }
    }
}

/// A sample with an optional hold-out part given by row indices.
#[derive(Clone, Debug)]
pub struct TrainingData {
    sample: Sample,
    validation: Vec<usize>,
}

impl TrainingData {
    pub fn new(sample: Sample, validation: Vec<usize>) -> Result<Self> {
        let n = sample.len();
        let mut seen = vec![false; n];
        for &i in &validation {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!("bad validation index {i}")));
            }
            seen[i] = true;
        }
        if validation.len() == n {
            return Err(Error::InvalidArgument("no training points left".into()));
        }
        Ok(Self { sample, validation })
    }

    /// Holds out a random `fraction` of the points (at least one when `fraction > 0`).
    pub fn with_validation_fraction<R: Rng + ?Sized>(sample: Sample, fraction: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let n = sample.len();
        let k = if fraction > 0.0 { ((fraction * n as f64).round() as usize).clamp(1, n - 1) } else { 0 };
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut v = idx[..k].to_vec();
        v.sort_unstable();
        Self::new(sample, v)
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn validation_indices(&self) -> &[usize] {
        &self.validation
    }

    pub fn training(&self) -> Sample {
        let mut held = vec![false; self.sample.len()];
        for &i in &self.validation {
            held[i] = true;
        }
        let rows: Vec<usize> = (0..self.sample.len()).filter(|&i| !held[i]).collect();
        self.sample.subset(&rows)
    }

    pub fn validation(&self) -> Option<Sample> {
        (!self.validation.is_empty()).then(|| self.sample.subset(&self.validation))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub empirical: f64,
    pub loo: f64,
    pub corrected_loo: f64,
    pub holdout: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub max_sweeps: usize,
    pub stagnation_tol: f64,
    /// Select sparsity patterns at the leaves.
    pub leaf_patterns: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { max_sweeps: 30, stagnation_tol: 1e-10, leaf_patterns: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsReport {
    pub sweeps: usize,
    pub risk: RiskEstimate,
    /// Empirical risk after each node update.
    pub trace: Vec<f64>,
    pub flags: SolveFlags,
}

/// Design matrix of `alpha` on `xs`, after α-orthogonalizing `net` in place.
pub fn node_design_matrix(net: &mut TreeTensorNetwork, alpha: usize, xs: &Matrix) -> Result<Matrix> {
    if alpha >= net.tree().len() {
        return Err(Error::UnknownNode(alpha));
    }
    if alpha == net.tree().root() {
        net.ensure_all_orthogonal();
    } else {
        net.alpha_orthogonalize(alpha)?;
    }
    let phis = net.leaf_features(xs)?;
    let us = net.upward(&phis);
    let w = net.downward_to(alpha, &us);
    Ok(net.design_matrix(alpha, &phis, &us, &w))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Fits cores by alternating least squares, sweeping nodes by decreasing level.
pub fn als_fit(net0: &TreeTensorNetwork, data: &Sample, cfg: &AlsConfig) -> Result<(TreeTensorNetwork, AlsReport)> {
    if data.dim() != net0.dim() {
        return Err(Error::DimensionMismatch(format!("sample dimension {} vs network {}", data.dim(), net0.dim())));
    }
    let mut net = net0.clone();
    net.ensure_all_orthogonal();
    let tree = net.tree().clone();
    let root = tree.root();
    let order = tree.by_decreasing_level();
    let phis = net.leaf_features(&data.xs)?;
    let mut us = net.upward(&phis);
    let fitted = |us: &[Matrix]| -> Vec<f64> { us[root].column(0).iter().copied().collect() };

    let mut risk = mse(&data.ys, &fitted(&us));
    let mut trace = vec![risk];
    let mut flags = SolveFlags::default();
    let mut last = RiskEstimate { empirical: risk, loo: f64::INFINITY, corrected_loo: f64::INFINITY, holdout: None };
    let mut sweeps = 0;
    for _ in 0..cfg.max_sweeps {
        let before = risk;
        sweeps += 1;
        for &alpha in &order {
            if alpha != root {
                // changes C^α and the parent core; both U's are refreshed after the update
                net.alpha_orthogonalize(alpha)?;
            }
            let w = net.downward_to(alpha, &us);
            let a = net.design_matrix(alpha, &phis, &us, &w);
            let patterns = match tree.leaf_dim(alpha) {
                Some(k) if cfg.leaf_patterns => Some(leaf_patterns(net.bases()[k].degree, net.rank(alpha))),
                // risk estimates are only reported for the root, the last node of a sweep
                _ if alpha == root => Some(PatternSequence::full(a.ncols())),
                _ => None,
            };
            let (coeffs, sol_flags) = match patterns {
                Some(p) => {
                    let sol = solve_with_pattern_selection(&a, &data.ys, &p)?;
                    last = RiskEstimate { empirical: sol.empirical, loo: sol.loo, corrected_loo: sol.corrected_loo, holdout: None };
                    (sol.coeffs, sol.flags)
                }
                None => least_squares(&a, &data.ys)?,
            };
            flags.pseudo_inverse |= sol_flags.pseudo_inverse;
            flags.plain_loo |= sol_flags.plain_loo;
            flags.dropped_columns |= sol_flags.dropped_columns;
            let shape = net.core(alpha).shape().to_vec();
            net.set_core(alpha, FullTensor::new(shape, coeffs.as_slice().to_vec())?)?;
            net.orthogonalize_path(alpha);
            let mut cur = Some(alpha);
            while let Some(c) = cur {
                us[c] = net.upward_node(c, &phis, &us);
                cur = tree.parent(c);
            }
            risk = mse(&data.ys, &fitted(&us));
            if !risk.is_finite() {
                return Err(Error::NonFinite(format!("empirical risk after updating node {alpha}")));
            }
            trace.push(risk);
        }
        if risk == 0.0 || (before - risk) < cfg.stagnation_tol * before {
            break;
        }
    }
    log::debug!("als: {sweeps} sweeps, risk {risk:.3e}, {} params", net.storage_complexity());
    Ok((net, AlsReport { sweeps, risk: last, trace, flags }))
}

/// Random cores with the given ranks, orthogonalized.
pub fn random_start<R: Rng + ?Sized>(
    tree: crate::tree::DimensionTree,
    bases: Vec<crate::basis::FeatureBasis>,
    ranks: &[usize],
    rng: &mut R,
) -> Result<TreeTensorNetwork> {
    let mut net = TreeTensorNetwork::random(tree, bases, ranks, rng)?;
    net.orthogonalize();
    Ok(net)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRisks {
    pub empirical: f64,
    /// Relative error, or the absolute RMSE when all targets vanish.
    pub relative_error: f64,
    pub absolute_fallback: bool,
}

pub fn risks_from_predictions(pred: &[f64], ys: &[f64]) -> Result<SampleRisks> {
    if ys.is_empty() || pred.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions, {} targets", pred.len(), ys.len())));
    }
    let sq: f64 = pred.iter().zip(ys).map(|(p, y)| (y - p).powi(2)).sum();
    let ny: f64 = ys.iter().map(|y| y * y).sum();
    let n = ys.len() as f64;
    let (relative_error, absolute_fallback) = if ny > 0.0 { ((sq / ny).sqrt(), false) } else { ((sq / n).sqrt(), true) };
    Ok(SampleRisks { empirical: sq / n, relative_error, absolute_fallback })
}

pub fn risks(net: &TreeTensorNetwork, sample: &Sample) -> Result<SampleRisks> {
    risks_from_predictions(&net.evaluate(&sample.xs)?, &sample.ys)
}
