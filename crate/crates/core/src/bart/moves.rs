//! Tree-structure proposals, their transition and prior ratios, the
//! integrated leaf likelihood, and the conjugate leaf update.
//!
//! The tree prior splits a node at depth `d` with probability
//! `alpha (1 + d)^-beta` when its data admits at least one rule; rules are
//! uniform over admissible features, then uniform over admissible cuts.
//! A cut is admissible at a node when both children receive an observation.
//! Trees with a leaf smaller than `min_node` have prior mass zero.

use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use super::tree::{SplitRule, Tree};
use super::Hyperparams;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];

    fn index(self) -> usize {
        self as usize
    }
}

const BASE_MOVE_PROBS: [f64; 4] = [0.25, 0.25, 0.4, 0.1];

/// Move distribution renormalized over the legal moves. Change is always
/// legal; on a stump it is a no-op.
pub fn move_probabilities(growable: bool, has_internal: bool, swappable: bool) -> [f64; 4] {
    let legal = [growable, has_internal, true, swappable];
    let total: f64 = BASE_MOVE_PROBS
        .iter()
        .zip(legal)
        .filter(|(_, l)| *l)
        .map(|(p, _)| p)
        .sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        if legal[k] {
            out[k] = BASE_MOVE_PROBS[k] / total;
        }
    }
    out
}

/// Fixed quantities shared by every tree update of one run.
#[derive(Clone, Copy, Debug)]
pub struct ModelContext<'a> {
    pub data: &'a TrainingData,
    pub hyper: &'a Hyperparams,
    /// Leaf prior variance on the scaled response.
    pub sigma_mu2: f64,
    /// When false the data term is dropped and the chain targets the prior.
    pub use_likelihood: bool,
}

impl<'a> ModelContext<'a> {
    pub fn new(data: &'a TrainingData, hyper: &'a Hyperparams) -> Self {
        Self {
            data,
            hyper,
            sigma_mu2: hyper.leaf_prior_variance(),
            use_likelihood: true,
        }
    }

    #[inline]
    fn split_prob(&self, depth: usize) -> f64 {
        self.hyper.alpha * (1.0 + depth as f64).powf(-self.hyper.beta)
    }
}

/// Integrated likelihood of one leaf holding `n` residuals summing to `sum`,
/// up to terms shared by every tree over the same data.
#[inline]
pub fn leaf_log_marginal(n: usize, sum: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let denom = sigma2 + n as f64 * sigma_mu2;
    0.5 * (sigma2 / denom).ln() + sigma_mu2 * sum * sum / (2.0 * sigma2 * denom)
}

/// Sum of [`leaf_log_marginal`] over the leaves of `tree`, routing every row
/// of `data.x` by threshold.
pub fn log_marginal_likelihood(
    tree: &Tree,
    data: &TrainingData,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
) -> Result<f64> {
    let mut count = vec![0usize; tree.capacity()];
    let mut sum = vec![0.0; tree.capacity()];
    for (i, r) in residuals.iter().enumerate() {
        let leaf = tree.leaf_for(data.x.row(i));
        count[leaf] += 1;
        sum[leaf] += r;
    }
    let mut total = 0.0;
    for leaf in tree.leaves() {
        if count[leaf] == 0 {
            return Err(Error::Invariant(format!("leaf {leaf} holds no observations")));
        }
        total += leaf_log_marginal(count[leaf], sum[leaf], sigma2, sigma_mu2);
    }
    Ok(total)
}

/// Conjugate normal posterior (mean, variance) of a leaf value.
pub fn leaf_posterior(n: usize, sum: f64, sigma2: f64, sigma_mu2: f64) -> (f64, f64) {
    let denom = sigma2 + n as f64 * sigma_mu2;
    (sigma_mu2 * sum / denom, sigma2 * sigma_mu2 / denom)
}

#[derive(Clone, Copy, Debug, Default)]
struct NodeInfo {
    count: u32,
    splittable: bool,
}

/// Per-node counts, residual sums and feature rank ranges for the
/// observations in one subtree.
#[derive(Clone, Debug)]
struct SubtreeStats {
    p: usize,
    nodes: Vec<usize>,
    count: Vec<u32>,
    sum: Vec<f64>,
    lo: Vec<u32>,
    hi: Vec<u32>,
    /// (observation, leaf) for every routed observation.
    assign: Vec<(u32, u32)>,
}

impl SubtreeStats {
    fn compute(tree: &Tree, root: usize, obs: &[u32], data: &TrainingData, residuals: &[f64]) -> Self {
        let cap = tree.capacity();
        let p = data.n_features();
        let mut s = SubtreeStats {
            p,
            nodes: tree.subtree(root),
            count: vec![0; cap],
            sum: vec![0.0; cap],
            lo: vec![u32::MAX; cap * p],
            hi: vec![0; cap * p],
            assign: Vec::with_capacity(obs.len()),
        };
        for &i in obs {
            let ranks = data.grid.ranks_of(i as usize);
            let r = residuals[i as usize];
            let mut id = root;
            loop {
                s.count[id] += 1;
                s.sum[id] += r;
                let base = id * p;
                for (f, &rk) in ranks.iter().enumerate() {
                    let lo = &mut s.lo[base + f];
                    if rk < *lo {
                        *lo = rk;
                    }
                    let hi = &mut s.hi[base + f];
                    if rk > *hi {
                        *hi = rk;
                    }
                }
                match tree.children(id) {
                    None => break,
                    Some((l, rt)) => {
                        let rule = tree.rule(id).expect("internal");
                        id = if ranks[rule.feature] <= rule.cut { l } else { rt };
                    }
                }
            }
            s.assign.push((i, id as u32));
        }
        s
    }

    #[inline]
    fn range(&self, id: usize, f: usize) -> (u32, u32) {
        (self.lo[id * self.p + f], self.hi[id * self.p + f])
    }

    /// Number of admissible cuts for `f` at `id`.
    #[inline]
    fn n_cuts(&self, id: usize, f: usize) -> u32 {
        let (lo, hi) = self.range(id, f);
        if self.count[id] > 0 && hi > lo {
            hi - lo
        } else {
            0
        }
    }

    fn admissible_features(&self, id: usize) -> Vec<usize> {
        (0..self.p).filter(|&f| self.n_cuts(id, f) > 0).collect()
    }

    fn splittable(&self, id: usize) -> bool {
        (0..self.p).any(|f| self.n_cuts(id, f) > 0)
    }

    fn log_prior(&self, tree: &Tree, ctx: &ModelContext) -> f64 {
        let mut total = 0.0;
        for &id in &self.nodes {
            let node = tree.node(id);
            let ps = ctx.split_prob(node.depth);
            match tree.rule(id) {
                None => {
                    if (self.count[id] as usize) < ctx.hyper.min_node {
                        return f64::NEG_INFINITY;
                    }
                    if self.splittable(id) {
                        total += (1.0 - ps).ln();
                    }
                }
                Some(rule) => {
                    let (lo, hi) = self.range(id, rule.feature);
                    if self.count[id] == 0 || rule.cut < lo || rule.cut >= hi {
                        return f64::NEG_INFINITY;
                    }
                    let nf = self.admissible_features(id).len() as f64;
                    total += ps.ln() - nf.ln() - ((hi - lo) as f64).ln();
                }
            }
        }
        total
    }

    fn log_marginal(&self, tree: &Tree, sigma2: f64, sigma_mu2: f64) -> f64 {
        self.nodes
            .iter()
            .filter(|&&id| tree.node(id).is_leaf())
            .map(|&id| leaf_log_marginal(self.count[id] as usize, self.sum[id], sigma2, sigma_mu2))
            .sum()
    }

    fn splittable_leaves(&self, tree: &Tree) -> usize {
        self.nodes
            .iter()
            .filter(|&&id| tree.node(id).is_leaf() && self.splittable(id))
            .count()
    }
}

/// A proposed replacement for the current tree and the three log ratios
/// entering its acceptance probability.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub kind: MoveKind,
    pub tree: Tree,
    /// Root of the subtree that differs from the current tree.
    pub root: usize,
    pub log_transition_ratio: f64,
    pub log_prior_ratio: f64,
    pub log_likelihood_ratio: f64,
    stats: Option<SubtreeStats>,
    growable_after: usize,
}

impl Proposal {
    pub fn log_acceptance(&self) -> f64 {
        let a = self.log_likelihood_ratio + self.log_prior_ratio + self.log_transition_ratio;
        if a.is_nan() {
            f64::NEG_INFINITY
        } else {
            a
        }
    }

    /// A no-op proposal is always accepted and changes nothing.
    pub fn is_identity(&self) -> bool {
        self.stats.is_none()
    }
}

/// Metropolis-Hastings decision for `proposal`.
pub fn mh_accept(proposal: &Proposal, rng: &mut RandomStream) -> bool {
    if proposal.is_identity() {
        return true;
    }
    let a = proposal.log_acceptance();
    if a >= 0.0 {
        return true;
    }
    if a == f64::NEG_INFINITY {
        return false;
    }
    rng.uniform().ln() < a
}

/// One tree with its observation-to-leaf routing and per-node bookkeeping.
#[derive(Clone, Debug)]
pub struct TreeFit {
    tree: Tree,
    leaf_of: Vec<u32>,
    info: Vec<NodeInfo>,
    growable: usize,
}

impl TreeFit {
    /// Route every observation of `data` through `tree` from scratch.
    pub fn new(tree: Tree, data: &TrainingData) -> Self {
        let n = data.n_obs();
        let obs: Vec<u32> = (0..n as u32).collect();
        let zeros = vec![0.0; n];
        let stats = SubtreeStats::compute(&tree, 0, &obs, data, &zeros);
        let mut fit = TreeFit {
            leaf_of: vec![0; n],
            info: Vec::new(),
            growable: 0,
            tree,
        };
        fit.absorb(&stats);
        fit.growable = fit
            .tree
            .leaves()
            .filter(|&l| fit.info[l].splittable)
            .count();
        fit
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn leaf_of(&self, obs: usize) -> usize {
        self.leaf_of[obs] as usize
    }

    /// Leaves with at least one admissible rule.
    pub fn growable_leaves(&self) -> usize {
        self.growable
    }

    pub fn node_count(&self, id: usize) -> usize {
        self.info[id].count as usize
    }

    fn absorb(&mut self, stats: &SubtreeStats) {
        if self.info.len() < self.tree.capacity() {
            self.info.resize(self.tree.capacity(), NodeInfo::default());
        }
        self.info.truncate(self.tree.capacity());
        for &(i, leaf) in &stats.assign {
            self.leaf_of[i as usize] = leaf;
        }
        for &id in &stats.nodes {
            self.info[id] = NodeInfo {
                count: stats.count[id],
                splittable: stats.splittable(id),
            };
        }
    }

    fn gather(&self, root: usize) -> Vec<u32> {
        if root == 0 {
            return (0..self.leaf_of.len() as u32).collect();
        }
        let mut member = vec![false; self.tree.capacity()];
        for id in self.tree.subtree(root) {
            member[id] = true;
        }
        self.leaf_of
            .iter()
            .enumerate()
            .filter(|(_, &l)| member[l as usize])
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn current_probs(&self) -> [f64; 4] {
        move_probabilities(
            self.growable > 0,
            self.tree.n_internal() > 0,
            !self.tree.swappable_pairs().is_empty(),
        )
    }

    fn draw_rule(stats: &SubtreeStats, id: usize, data: &TrainingData, rng: &mut RandomStream) -> (SplitRule, f64) {
        let feats = stats.admissible_features(id);
        let f = feats[rng.index(feats.len())];
        let (lo, hi) = stats.range(id, f);
        let cut = lo + rng.index((hi - lo) as usize) as u32;
        let rule = SplitRule {
            feature: f,
            cut,
            threshold: data.grid.threshold(f, cut),
        };
        let log_q = -(feats.len() as f64).ln() - ((hi - lo) as f64).ln();
        (rule, log_q)
    }

    /// Draw a proposal. With `kind = None` the move type is sampled from
    /// [`move_probabilities`]; a forced kind that is illegal yields `None`.
    pub fn propose(
        &self,
        kind: Option<MoveKind>,
        residuals: &[f64],
        sigma2: f64,
        ctx: &ModelContext,
        rng: &mut RandomStream,
    ) -> Option<Proposal> {
        let probs = self.current_probs();
        let kind = match kind {
            Some(k) => {
                if probs[k.index()] == 0.0 {
                    return None;
                }
                k
            }
            None => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut chosen = MoveKind::Change;
                for k in MoveKind::ALL {
                    acc += probs[k.index()];
                    if u < acc && probs[k.index()] > 0.0 {
                        chosen = k;
                        break;
                    }
                }
                chosen
            }
        };
        let data = ctx.data;
        let tree = &self.tree;
        let mut new_tree = tree.clone();
        let (root, log_forward_extra, log_reverse_extra);
        match kind {
            MoveKind::Grow => {
                let cands: Vec<usize> = tree.leaves().filter(|&l| self.info[l].splittable).collect();
                root = cands[rng.index(cands.len())];
                let obs = self.gather(root);
                let old = SubtreeStats::compute(tree, root, &obs, data, residuals);
                let (rule, log_q_rule) = Self::draw_rule(&old, root, data, rng);
                new_tree.grow(root, rule);
                let new = SubtreeStats::compute(&new_tree, root, &obs, data, residuals);
                let growable_after = self.growable - 1 + new.splittable_leaves(&new_tree);
                let probs_after = move_probabilities(
                    growable_after > 0,
                    true,
                    !new_tree.swappable_pairs().is_empty(),
                );
                let w_after = new_tree.prunable().count() as f64;
                log_forward_extra = probs[0].ln() - (cands.len() as f64).ln() + log_q_rule;
                log_reverse_extra = probs_after[1].ln() - w_after.ln();
                Some(self.finish(kind, new_tree, root, old, new, growable_after, log_reverse_extra - log_forward_extra, sigma2, ctx))
            }
            MoveKind::Prune => {
                let cands: Vec<usize> = tree.prunable().collect();
                root = cands[rng.index(cands.len())];
                let obs = self.gather(root);
                let old = SubtreeStats::compute(tree, root, &obs, data, residuals);
                let rule = *tree.rule(root).expect("internal");
                new_tree.prune(root);
                let new = SubtreeStats::compute(&new_tree, root, &obs, data, residuals);
                let growable_after = self.growable - old.splittable_leaves(tree) + new.splittable_leaves(&new_tree);
                let probs_after = move_probabilities(
                    growable_after > 0,
                    new_tree.n_internal() > 0,
                    !new_tree.swappable_pairs().is_empty(),
                );
                let nf = old.admissible_features(root).len() as f64;
                let nc = old.n_cuts(root, rule.feature) as f64;
                log_forward_extra = probs[1].ln() - (cands.len() as f64).ln();
                log_reverse_extra = probs_after[0].ln() - (growable_after as f64).ln() - nf.ln() - nc.ln();
                Some(self.finish(kind, new_tree, root, old, new, growable_after, log_reverse_extra - log_forward_extra, sigma2, ctx))
            }
            MoveKind::Change => {
                let cands: Vec<usize> = tree.internal_nodes().collect();
                if cands.is_empty() {
                    return Some(Proposal {
                        kind,
                        tree: new_tree,
                        root: 0,
                        log_transition_ratio: 0.0,
                        log_prior_ratio: 0.0,
                        log_likelihood_ratio: 0.0,
                        stats: None,
                        growable_after: self.growable,
                    });
                }
                root = cands[rng.index(cands.len())];
                let obs = self.gather(root);
                let old = SubtreeStats::compute(tree, root, &obs, data, residuals);
                let old_rule = *tree.rule(root).expect("internal");
                let (rule, _) = Self::draw_rule(&old, root, data, rng);
                new_tree.set_rule(root, rule);
                let new = SubtreeStats::compute(&new_tree, root, &obs, data, residuals);
                let growable_after = self.growable - old.splittable_leaves(tree) + new.splittable_leaves(&new_tree);
                let probs_after = move_probabilities(
                    growable_after > 0,
                    true,
                    !new_tree.swappable_pairs().is_empty(),
                );
                let nc_old = old.n_cuts(root, old_rule.feature) as f64;
                let nc_new = old.n_cuts(root, rule.feature) as f64;
                let log_tr = probs_after[2].ln() - probs[2].ln() - nc_old.ln() + nc_new.ln();
                Some(self.finish(kind, new_tree, root, old, new, growable_after, log_tr, sigma2, ctx))
            }
            MoveKind::Swap => {
                let pairs = tree.swappable_pairs();
                let (parent, child) = pairs[rng.index(pairs.len())];
                root = parent;
                let obs = self.gather(root);
                let old = SubtreeStats::compute(tree, root, &obs, data, residuals);
                let pr = *tree.rule(parent).expect("internal");
                let cr = *tree.rule(child).expect("internal");
                new_tree.set_rule(parent, cr);
                new_tree.set_rule(child, pr);
                let new = SubtreeStats::compute(&new_tree, root, &obs, data, residuals);
                let growable_after = self.growable - old.splittable_leaves(tree) + new.splittable_leaves(&new_tree);
                let probs_after = move_probabilities(growable_after > 0, true, true);
                let log_tr = probs_after[3].ln() - probs[3].ln();
                Some(self.finish(kind, new_tree, root, old, new, growable_after, log_tr, sigma2, ctx))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        kind: MoveKind,
        new_tree: Tree,
        root: usize,
        old: SubtreeStats,
        new: SubtreeStats,
        growable_after: usize,
        log_transition_ratio: f64,
        sigma2: f64,
        ctx: &ModelContext,
    ) -> Proposal {
        let log_prior_ratio = new.log_prior(&new_tree, ctx) - old.log_prior(&self.tree, ctx);
        let log_likelihood_ratio = if ctx.use_likelihood && log_prior_ratio > f64::NEG_INFINITY {
            new.log_marginal(&new_tree, sigma2, ctx.sigma_mu2) - old.log_marginal(&self.tree, sigma2, ctx.sigma_mu2)
        } else {
            0.0
        };
        Proposal {
            kind,
            tree: new_tree,
            root,
            log_transition_ratio,
            log_prior_ratio,
            log_likelihood_ratio,
            stats: Some(new),
            growable_after,
        }
    }

    /// Replace the current tree by an accepted proposal.
    pub fn apply(&mut self, proposal: Proposal) {
        let Some(stats) = proposal.stats else {
            return;
        };
        self.tree = proposal.tree;
        self.absorb(&stats);
        self.growable = proposal.growable_after;
    }

    /// Redraw every leaf value from its conjugate normal posterior given the
    /// partial residuals, then write the tree's fitted values into `fit`.
    pub fn draw_leaf_values(
        &mut self,
        residuals: &[f64],
        sigma2: f64,
        sigma_mu2: f64,
        rng: &mut RandomStream,
        fit: &mut [f64],
    ) -> Result<()> {
        let cap = self.tree.capacity();
        let mut count = vec![0usize; cap];
        let mut sum = vec![0.0; cap];
        for (i, &leaf) in self.leaf_of.iter().enumerate() {
            count[leaf as usize] += 1;
            sum[leaf as usize] += residuals[i];
        }
        let mut value = vec![0.0; cap];
        let leaves: Vec<usize> = self.tree.leaves().collect();
        for leaf in leaves {
            if count[leaf] == 0 {
                return Err(Error::Invariant(format!("leaf {leaf} holds no observations")));
            }
            let (mean, var) = leaf_posterior(count[leaf], sum[leaf], sigma2, sigma_mu2);
            let v = mean + var.sqrt() * rng.standard_normal();
            self.tree.set_leaf_value(leaf, v);
            value[leaf] = v;
        }
        for (f, &leaf) in fit.iter_mut().zip(&self.leaf_of) {
            *f = value[leaf as usize];
        }
        Ok(())
    }

    /// Set leaf values directly (used to initialise a chain).
    pub fn fill_leaves(&mut self, v: f64, fit: &mut [f64]) {
        let leaves: Vec<usize> = self.tree.leaves().collect();
        for leaf in leaves {
            self.tree.set_leaf_value(leaf, v);
        }
        fit.iter_mut().for_each(|f| *f = v);
    }

    /// Smallest leaf population.
    pub fn min_leaf_count(&self) -> usize {
        let mut count = vec![0usize; self.tree.capacity()];
        for &l in &self.leaf_of {
            count[l as usize] += 1;
        }
        self.tree.leaves().map(|l| count[l]).min().unwrap_or(0)
    }
}
