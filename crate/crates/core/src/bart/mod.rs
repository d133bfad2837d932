//! Sum-of-trees regression fit by backfitting MCMC.

pub mod data;
pub mod forest;
pub mod moves;
pub mod sampler;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{CutGrid, Scaling, TrainingData};
pub use forest::{Forest, Posterior};
pub use moves::{
    leaf_log_marginal, leaf_posterior, log_marginal_likelihood, mh_accept, move_probabilities, ModelContext,
    MoveKind, Proposal, TreeFit,
};
pub use sampler::{calibrate_lambda, draw_sigma, run_sampler, sigma_baseline, SampleTrace, Sampler};
pub use tree::{Node, NodeKind, SplitRule, Tree};

/// Prior and chain settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Number of trees.
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Leaf prior scale: the ensemble sits in the scaled response range with
    /// prior probability tied to `k` standard deviations.
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub n_burn: usize,
    pub n_post: usize,
    pub min_node: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            m: 50,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.9,
            n_burn: 250,
            n_post: 1000,
            min_node: 5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHyperparams(msg.to_string()));
        if self.m < 1 {
            return bad("m must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be finite and non-negative");
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return bad("k must be positive");
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return bad("nu must be positive");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if self.n_post < 1 {
            return bad("n_post must be at least 1");
        }
        if self.min_node < 1 {
            return bad("min_node must be at least 1");
        }
        Ok(())
    }

    /// Leaf prior variance `sigma_mu^2` on the `[-0.5, 0.5]` response scale.
    pub fn leaf_prior_variance(&self) -> f64 {
        let s = 1.0 / (2.0 * self.k * (self.m as f64).sqrt());
        s * s
    }
}
