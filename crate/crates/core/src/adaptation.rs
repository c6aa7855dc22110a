//! Rank adaptation, stochastic tree optimization and the combined learning scheme.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{als_fit, random_start, AlsConfig, RiskEstimate, Sample, TrainingData};
use crate::network::TreeTensorNetwork;
use crate::tree::{admissible_cap, draw_move, draw_move_count, is_admissible, DimensionTree, MoveParams, PermutationMove};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub theta_star: f64,
    pub moves: MoveParams,
    pub tree_trials: usize,
    pub tree_adaptation: bool,
    /// Stop once the relative validation error falls below this value.
    pub eps_goal: f64,
    pub tau_overfit: f64,
    pub max_iterations: usize,
    /// Fraction of the sample held out for validation; 0 switches to the corrected LOO estimate.
    pub validation_fraction: f64,
    /// Nodes whose estimated truncation error is below this multiple of the norm are not enlarged.
    pub eps_machine: f64,
    pub rank_one_sweeps: usize,
    pub als: AlsConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            theta_star: 0.8,
            moves: MoveParams::default(),
            tree_trials: 100,
            tree_adaptation: true,
            eps_goal: 1e-14,
            tau_overfit: 10.0,
            max_iterations: 30,
            validation_fraction: 0.2,
            eps_machine: 1e-15,
            rank_one_sweeps: 5,
            als: AlsConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_star) {
            return Err(Error::InvalidArgument(format!("theta_star {} outside [0, 1]", self.theta_star)));
        }
        if self.tau_overfit <= 1.0 {
            return Err(Error::InvalidArgument(format!("tau_overfit {} must exceed 1", self.tau_overfit)));
        }
        let m = &self.moves;
        if !(m.gamma1 > 0.0 && m.gamma2 > 0.0 && m.gamma3 > 0.0) {
            return Err(Error::InvalidArgument("move exponents must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {}", self.validation_fraction)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Tree in text form; ranks below follow its node order.
    pub tree: String,
    pub ranks: Vec<usize>,
    pub empirical_risk: f64,
    pub validation_risk: f64,
    /// Relative error from the corrected LOO estimate of the last node update.
    pub cv_error: f64,
    pub storage: usize,
    pub accepted_tree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateNodeSet {
    /// Eligible nodes (slots).
    pub eligible: Vec<usize>,
    /// Nodes whose rank is increased.
    pub selected: Vec<usize>,
    /// Estimated truncation error per slot; zero where not computed.
    pub scores: Vec<f64>,
    pub theta: f64,
}

fn residual_sample(net: &TreeTensorNetwork, data: &Sample) -> Result<Sample> {
    let pred = net.evaluate(&data.xs)?;
    Sample::new(data.xs.clone(), data.ys.iter().zip(&pred).map(|(y, p)| y - p).collect())
}

/// Chooses the nodes whose rank grows. Returns `None` when no node is eligible.
pub fn select_rank_increase<R: Rng + ?Sized>(
    net: &TreeTensorNetwork,
    data: &Sample,
    cfg: &AdaptConfig,
    rng: &mut R,
) -> Result<Option<(CandidateNodeSet, TreeTensorNetwork)>> {
    let tree = net.tree();
    let root = tree.root();
    let leaf_dims = net.leaf_dims();
    let r = net.ranks();

    // rank-one correction of the residual
    let res = residual_sample(net, data)?;
    let ones: Vec<usize> = vec![1; tree.len()];
    let w0 = random_start(tree.clone(), net.bases().to_vec(), &ones, rng)?;
    let one_cfg = AlsConfig { max_sweeps: cfg.rank_one_sweeps, ..cfg.als };
    let (w, _) = als_fit(&w0, &res, &one_cfg)?;

    let plus: Vec<usize> = r.iter().map(|&x| x + 1).collect();
    let enriched_ranks = admissible_cap(tree, &r, &plus, &leaf_dims);
    let start = net.add(&w)?.truncate_to_ranks(&enriched_ranks)?;
    let (enriched, _) = als_fit(&start, data, &cfg.als)?;

    let spectrum = enriched.singular_spectrum();
    let norm = enriched.norm();
    let mut scores = vec![0.0; tree.len()];
    let mut eligible = Vec::new();
    for id in 0..tree.len() {
        if id == root || enriched_ranks[id] != r[id] + 1 {
            continue;
        }
        let eta = spectrum.values[id].get(r[id]).copied().unwrap_or(0.0);
        scores[id] = eta;
        if eta > cfg.eps_machine * norm {
            eligible.push(id);
        }
    }
    if eligible.is_empty() {
        return Ok(None);
    }
    let eta_max = eligible.iter().map(|&i| scores[i]).fold(0.0, f64::max);
    let mut thresholds: Vec<f64> = eligible.iter().map(|&i| scores[i] / eta_max).filter(|&t| t < cfg.theta_star).collect();
    thresholds.push(cfg.theta_star);
    thresholds.push(0.0);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pick = |theta: f64| -> Vec<usize> {
        eligible.iter().copied().filter(|&i| scores[i] >= theta * eta_max).collect()
    };
    for &theta in &thresholds {
        let selected = pick(theta);
        let mut next = r.clone();
        for &i in &selected {
            next[i] += 1;
        }
        if is_admissible(tree, &next, &leaf_dims)? {
            return Ok(Some((CandidateNodeSet { eligible, selected, scores, theta }, enriched)));
        }
    }
    // no threshold gives admissible ranks: keep the admissible part of the full candidate set
    let mut next = r.clone();
    for &i in &eligible {
        next[i] += 1;
    }
    let capped = admissible_cap(tree, &r, &next, &leaf_dims);
    let selected: Vec<usize> = (0..tree.len()).filter(|&i| capped[i] > r[i]).collect();
    if selected.is_empty() {
        return Ok(None);
    }
    Ok(Some((CandidateNodeSet { eligible, selected, scores, theta: 0.0 }, enriched)))
}

#[derive(Clone, Debug)]
pub struct TreeSearch {
    pub net: TreeTensorNetwork,
    pub improved: bool,
    pub complexity: usize,
    pub accepted_moves: Vec<PermutationMove>,
}

fn apply_moves(net: &TreeTensorNetwork, moves: &[PermutationMove], eps: f64) -> Result<TreeTensorNetwork> {
    let mut v = net.clone();
    for &mv in moves {
        v = v.permute_representation(mv, eps)?;
    }
    Ok(v)
}

/// Stochastic search for a tree on which `net` has a smaller storage complexity,
/// up to relative precision `eps`.
pub fn tree_optimize<R: Rng + ?Sized>(
    net: &TreeTensorNetwork,
    eps: f64,
    trials: usize,
    params: &MoveParams,
    rng: &mut R,
) -> Result<TreeSearch> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("precision {eps} outside [0, 1)")));
    }
    let mut best = net.clone();
    let mut c_star = net.storage_complexity();
    let mut sigma: Vec<PermutationMove> = Vec::new();
    let mut m = 0usize;
    let mut new_tree = false;
    let mut v0 = net.clone();
    let m_max = params.m_max.unwrap_or(net.dim());
    for _ in 0..trials {
        let m_old = m;
        m = draw_move_count(rng, params.gamma1, m_max);
        let tol = eps / (m + sigma.len()) as f64;
        if m > m_old || new_tree {
            v0 = apply_moves(net, &sigma, tol)?;
        }
        let mut v = v0.clone();
        let mut moves = Vec::with_capacity(m);
        let mut failed = false;
        for _ in 0..m {
            let mv = match draw_move(v.tree(), &v.ranks(), rng, params) {
                Ok(mv) => mv,
                Err(Error::NoEligibleMove(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            match v.permute_representation(mv, tol) {
                Ok(next) => v = next,
                Err(Error::SizeGuard { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            moves.push(mv);
        }
        let c = v.storage_complexity();
        if !failed && c < c_star {
            new_tree = true;
            c_star = c;
            best = v;
            sigma.extend(moves);
        } else {
            new_tree = false;
        }
    }
    let improved = c_star < net.storage_complexity();
    Ok(TreeSearch { net: best, improved, complexity: c_star, accepted_moves: sigma })
}

#[derive(Clone, Debug)]
pub struct AdaptiveFit {
    pub net: TreeTensorNetwork,
    pub records: Vec<IterationRecord>,
    /// Index of the selected record.
    pub best: usize,
}

struct Evaluator<'a> {
    train: Sample,
    valid: Option<Sample>,
    train_scale: f64,
    valid_scale: f64,
    cfg: &'a AdaptConfig,
}

impl Evaluator<'_> {
    fn record(&self, iteration: usize, net: &TreeTensorNetwork, risk: &RiskEstimate, accepted: bool) -> Result<IterationRecord> {
        let cv_error = (risk.corrected_loo / self.train_scale).sqrt();
        let validation_risk = match &self.valid {
            Some(v) => {
                let p = net.evaluate(&v.xs)?;
                v.ys.iter().zip(&p).map(|(y, q)| (y - q).powi(2)).sum::<f64>() / v.len() as f64
            }
            None => risk.corrected_loo,
        };
        let order = net.tree().canonical_order();
        let ranks = net.ranks();
        Ok(IterationRecord {
            iteration,
            tree: net.tree().to_text(),
            ranks: order.iter().map(|&i| ranks[i]).collect(),
            empirical_risk: risk.empirical,
            validation_risk,
            cv_error,
            storage: net.storage_complexity(),
            accepted_tree: accepted,
        })
    }

    fn reference(&self) -> f64 {
        if self.valid.is_some() {
            self.valid_scale
        } else {
            self.train_scale
        }
    }

    fn fit(&self, start: &TreeTensorNetwork) -> Result<(TreeTensorNetwork, RiskEstimate)> {
        let (net, rep) = als_fit(start, &self.train, &self.cfg.als)?;
        Ok((net, rep.risk))
    }
}

fn mean_square(ys: &[f64]) -> f64 {
    ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64
}

/// Learning with rank adaptation and, when enabled, tree adaptation.
pub fn adaptive_fit<R: Rng + ?Sized>(
    data: &Sample,
    tree: DimensionTree,
    bases: Vec<crate::basis::FeatureBasis>,
    cfg: &AdaptConfig,
    rng: &mut R,
) -> Result<AdaptiveFit> {
    cfg.validate()?;
    let split = TrainingData::with_validation_fraction(data.clone(), cfg.validation_fraction, rng)?;
    adaptive_fit_split(&split, tree, bases, cfg, rng)
}

pub fn adaptive_fit_split<R: Rng + ?Sized>(
    data: &TrainingData,
    tree: DimensionTree,
    bases: Vec<crate::basis::FeatureBasis>,
    cfg: &AdaptConfig,
    rng: &mut R,
) -> Result<AdaptiveFit> {
    cfg.validate()?;
    let train = data.training();
    let valid = data.validation();
    let ev = Evaluator {
        train_scale: mean_square(&train.ys).max(f64::MIN_POSITIVE),
        valid_scale: valid.as_ref().map_or(0.0, |v| mean_square(&v.ys)).max(f64::MIN_POSITIVE),
        train,
        valid,
        cfg,
    };
    let ones = vec![1; tree.len()];
    let start = random_start(tree, bases, &ones, rng)?;
    let (mut u, mut risk) = ev.fit(&start)?;
    let mut nets = vec![u.clone()];
    let mut records = vec![ev.record(1, &u, &risk, false)?];

    loop {
        let last = records.last().expect("nonempty").validation_risk;
        let prev_min = records[..records.len() - 1].iter().map(|r| r.validation_risk).fold(f64::INFINITY, f64::min);
        if records.len() >= cfg.max_iterations
            || (last / ev.reference()).sqrt() <= cfg.eps_goal
            || last >= cfg.tau_overfit * prev_min
        {
            break;
        }
        let Some((cand, enriched)) = select_rank_increase(&u, &ev.train, cfg, rng)? else {
            log::debug!("no node eligible for a rank increase");
            break;
        };
        let mut next = u.ranks();
        for &i in &cand.selected {
            next[i] += 1;
        }
        let init = enriched.truncate_to_ranks(&next)?;
        (u, risk) = ev.fit(&init)?;
        nets.push(u.clone());
        records.push(ev.record(records.len() + 1, &u, &risk, false)?);
        log::info!(
            "iteration {}: storage {}, validation risk {:.3e}, cv error {:.3e}",
            records.len(),
            u.storage_complexity(),
            records.last().expect("nonempty").validation_risk,
            records.last().expect("nonempty").cv_error
        );

        if cfg.tree_adaptation && records.len() < cfg.max_iterations {
            let cv = records.last().expect("nonempty").cv_error;
            let eps = cv.clamp(0.0, 0.5);
            let search = tree_optimize(&u, eps, cfg.tree_trials, &cfg.moves, rng)?;
            if search.improved {
                (u, risk) = ev.fit(&search.net)?;
                nets.push(u.clone());
                records.push(ev.record(records.len() + 1, &u, &risk, true)?);
            }
        }
    }
    let best = (0..records.len())
        .min_by(|&a, &b| records[a].validation_risk.total_cmp(&records[b].validation_risk))
        .expect("nonempty");
    Ok(AdaptiveFit { net: nets.swap_remove(best), records, best })
}

/// Learning on a fixed tree with rank adaptation only.
pub fn rank_adaptive_fit<R: Rng + ?Sized>(
    data: &Sample,
    tree: DimensionTree,
    bases: Vec<crate::basis::FeatureBasis>,
    cfg: &AdaptConfig,
    rng: &mut R,
) -> Result<AdaptiveFit> {
    let cfg = AdaptConfig { tree_adaptation: false, ..cfg.clone() };
    adaptive_fit(data, tree, bases, &cfg, rng)
}
