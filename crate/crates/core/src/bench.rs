//! Synthetic benchmark functions, sampling and multi-trial experiments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adaptive_fit, AdaptConfig, IterationRecord};
use crate::basis::FeatureBasis;
use crate::error::{Error, Result};
use crate::learning::{risks, Sample};
use crate::network::TreeTensorNetwork;
use crate::tensor::Matrix;
use crate::tree::{DimensionTree, TreeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionId {
    I,
    Ii,
    Iii,
    Iv,
    V,
}

impl FunctionId {
    pub const ALL: [FunctionId; 5] = [FunctionId::I, FunctionId::Ii, FunctionId::Iii, FunctionId::Iv, FunctionId::V];

    pub fn dim(self) -> usize {
        match self {
            FunctionId::I => 6,
            FunctionId::Ii | FunctionId::Iii => 10,
            FunctionId::Iv => 16,
            FunctionId::V => 8,
        }
    }

    /// Polynomial degree of the feature spaces used for this function.
    pub fn default_degree(self) -> usize {
        match self {
            FunctionId::I | FunctionId::Iii => 10,
            FunctionId::Ii | FunctionId::Iv => 5,
            FunctionId::V => 8,
        }
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("function {self} takes {} inputs, got {}", self.dim(), x.len())));
        }
        Ok(match self {
            FunctionId::I => {
                let s = 10.0 + 2.0 * x[0] + x[2] + 2.0 * x[3] - x[4];
                1.0 / (s * s)
            }
            FunctionId::Ii => x.chunks(2).map(|p| pair(p[0], p[1])).sum(),
            FunctionId::Iii => {
                let s: f64 = x.chunks(2).map(|p| pair(p[0], p[1])).sum();
                (1.0 + s * s).ln()
            }
            FunctionId::Iv => x.windows(2).map(|p| pair(p[0], p[1])).sum(),
            FunctionId::V => {
                let a = compose(compose(x[0], x[1]), compose(x[2], x[3]));
                let b = compose(compose(x[4], x[5]), compose(x[6], x[7]));
                compose(a, b)
            }
        })
    }

    /// Whether `tree` has the structure that makes this function cheapest to represent.
    /// `None` when no such structure is singled out.
    pub fn tree_is_optimal(self, tree: &DimensionTree) -> Option<bool> {
        match self {
            FunctionId::I => Some(tree.contains_subset(&[0, 2, 3, 4])),
            FunctionId::Ii | FunctionId::Iii => Some((0..self.dim()).step_by(2).all(|k| tree.contains_subset(&[k, k + 1]))),
            FunctionId::Iv => None,
            FunctionId::V => Some(tree.subset_set() == composition_tree().subset_set()),
        }
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionId::I => "i",
            FunctionId::Ii => "ii",
            FunctionId::Iii => "iii",
            FunctionId::Iv => "iv",
            FunctionId::V => "v",
        })
    }
}

impl FromStr for FunctionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(FunctionId::I),
            "ii" => Ok(FunctionId::Ii),
            "iii" => Ok(FunctionId::Iii),
            "iv" => Ok(FunctionId::Iv),
            "v" => Ok(FunctionId::V),
            _ => Err(Error::InvalidArgument(format!("unknown function {s:?}"))),
        }
    }
}

/// `Σ_{i=0..3} (st)^i`.
fn pair(s: f64, t: f64) -> f64 {
    let p = s * t;
    1.0 + p + p * p + p * p * p
}

fn compose(t: f64, s: f64) -> f64 {
    (2.0 + t * s).powi(2) / 9.0
}

/// Balanced binary tree over 8 variables following the composition structure.
pub fn composition_tree() -> DimensionTree {
    DimensionTree::build(TreeKind::Balanced, 8, &(0..8).collect::<Vec<_>>()).expect("valid tree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeFamily {
    Balanced,
    Linear,
}

impl FromStr for TreeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(TreeFamily::Balanced),
            "linear" => Ok(TreeFamily::Linear),
            _ => Err(Error::InvalidArgument(format!("unknown tree family {s:?}"))),
        }
    }
}

impl From<TreeFamily> for TreeKind {
    fn from(f: TreeFamily) -> Self {
        match f {
            TreeFamily::Balanced => TreeKind::Balanced,
            TreeFamily::Linear => TreeKind::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub function: FunctionId,
    #[serde(default)]
    pub degree: Option<usize>,
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_tree")]
    pub tree: TreeFamily,
    /// Permute the leaves of the starting tree at random.
    #[serde(default = "default_true")]
    pub permute_leaves: bool,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adapt: AdaptConfig,
}

fn default_n_test() -> usize {
    10_000
}

fn default_tree() -> TreeFamily {
    TreeFamily::Balanced
}

fn default_true() -> bool {
    true
}

fn default_trials() -> usize {
    1
}

impl ExperimentSpec {
    pub fn new(function: FunctionId, n_train: usize, trials: usize, seed: u64) -> Self {
        Self {
            function,
            degree: None,
            n_train,
            n_test: default_n_test(),
            noise: 0.0,
            tree: TreeFamily::Balanced,
            permute_leaves: true,
            trials,
            seed,
            adapt: AdaptConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise {} must be nonnegative", self.noise)));
        }
        if self.n_train < 2 || self.n_test == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument("sample sizes and trial count must be positive".into()));
        }
        self.adapt.validate()
    }

    pub fn degree(&self) -> usize {
        self.degree.unwrap_or(self.function.default_degree())
    }
}

/// `n` uniform points on `[-1, 1]^d` with targets `u(x) + noise·N(0, 1)`.
pub fn sample_function<R: Rng + ?Sized>(f: FunctionId, n: usize, noise: f64, rng: &mut R) -> Result<Sample> {
    let d = f.dim();
    let xs = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = xs.row(i).iter().copied().collect();
        let mut y = f.eval(&x)?;
        if noise > 0.0 {
            y += noise * rng.sample::<f64, _>(StandardNormal);
        }
        ys.push(y);
    }
    Sample::new(xs, ys)
}

/// Training and test samples for one trial.
pub fn sample_data<R: Rng + ?Sized>(spec: &ExperimentSpec, rng: &mut R) -> Result<(Sample, Sample)> {
    let train = sample_function(spec.function, spec.n_train, spec.noise, rng)?;
    let test = sample_function(spec.function, spec.n_test, spec.noise, rng)?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub test_error: f64,
    /// Squared L² error against the noiseless function, estimated on the test points.
    pub approximation_error: f64,
    pub cv_error: f64,
    pub storage: usize,
    pub starting_tree: Vec<Vec<usize>>,
    pub final_tree: Vec<Vec<usize>>,
    pub ranks: Vec<usize>,
    pub optimal_tree: Option<bool>,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        values.fold(Range { min: f64::INFINITY, max: f64::NEG_INFINITY }, |r, v| Range { min: r.min.min(v), max: r.max.max(v) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub test_error: Range,
    pub cv_error: Range,
    pub storage: Range,
    pub optimal_tree_frequency: Option<f64>,
    pub trials: Vec<TrialReport>,
}

/// Seed of trial `k`, derived from the experiment seed.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k as u64 + 1);
    r.random()
}

pub fn run_trial(spec: &ExperimentSpec, seed: u64) -> Result<(TrialReport, TreeTensorNetwork)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = sample_data(spec, &mut rng)?;
    let d = spec.function.dim();
    let mut order: Vec<usize> = (0..d).collect();
    if spec.permute_leaves {
        order.shuffle(&mut rng);
    }
    let tree = DimensionTree::build(spec.tree.into(), d, &order)?;
    let bases = vec![FeatureBasis::legendre(spec.degree()); d];
    let fit = adaptive_fit(&train, tree.clone(), bases, &spec.adapt, &mut rng)?;
    let net = fit.net;
    let r = risks(&net, &test)?;
    let pred = net.evaluate(&test.xs)?;
    let mut approx = 0.0;
    for (i, p) in pred.iter().enumerate() {
        let x: Vec<f64> = test.xs.row(i).iter().copied().collect();
        approx += (spec.function.eval(&x)? - p).powi(2);
    }
    let order = net.tree().canonical_order();
    let ranks = net.ranks();
    let report = TrialReport {
        seed,
        test_error: r.relative_error,
        approximation_error: approx / test.len() as f64,
        cv_error: fit.records[fit.best].cv_error,
        storage: net.storage_complexity(),
        starting_tree: tree.subsets_display(),
        final_tree: net.tree().subsets_display(),
        ranks: order.iter().map(|&i| ranks[i]).collect(),
        optimal_tree: spec.function.tree_is_optimal(net.tree()),
        iterations: fit.records,
    };
    Ok((report, net))
}

/// Runs all trials (in parallel) and aggregates them.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let trials: Vec<TrialReport> = (0..spec.trials)
        .into_par_iter()
        .map(|k| run_trial(spec, trial_seed(spec.seed, k)).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    Ok(aggregate(spec.clone(), trials))
}

pub fn aggregate(spec: ExperimentSpec, trials: Vec<TrialReport>) -> ExperimentReport {
    let flags: Vec<bool> = trials.iter().filter_map(|t| t.optimal_tree).collect();
    let optimal_tree_frequency =
        (!flags.is_empty()).then(|| flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64);
    ExperimentReport {
        test_error: Range::of(trials.iter().map(|t| t.test_error)),
        cv_error: Range::of(trials.iter().map(|t| t.cv_error)),
        storage: Range::of(trials.iter().map(|t| t.storage as f64)),
        optimal_tree_frequency,
        spec,
        trials,
    }
}

/// Subsets of a tree as a set, 1-based, for comparisons in reports.
pub fn subset_set_display(tree: &DimensionTree) -> BTreeSet<Vec<usize>> {
    tree.subsets_display().into_iter().collect()
}
