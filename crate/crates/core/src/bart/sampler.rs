//! Backfitting Gibbs sampler.
//!
//! Each sweep visits the trees in order. Tree `t` sees the partial residual
//! `y - sum_{s != t} g_s`, takes one Metropolis-Hastings structure step with
//! its leaf values integrated out, then redraws its leaves. The noise
//! variance is redrawn once per sweep from its inverse-gamma conditional.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::data::TrainingData;
use super::forest::{Forest, Posterior};
use super::moves::{mh_accept, ModelContext, MoveKind, TreeFit};
use super::tree::Tree;
use super::Hyperparams;
use crate::collinearity::ols_fit;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats;

/// Tolerance of the per-sweep accounting identity.
pub const ACCOUNTING_TOL: f64 = 1e-10;

/// Prior scale `lambda` placing probability `q` on `sigma^2 < sigma_hat2`
/// under `sigma^2 ~ nu lambda / chi^2_nu`.
pub fn calibrate_lambda(sigma_hat2: f64, nu: f64, q: f64) -> Result<f64> {
    if !(sigma_hat2 > 0.0) || !(nu > 0.0) || !(q > 0.0 && q < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "lambda calibration needs sigma_hat2 > 0, nu > 0, 0 < q < 1 (got {sigma_hat2}, {nu}, {q})"
        )));
    }
    let chi = ChiSquared::new(nu).map_err(|e| Error::ParameterDomain(e.to_string()))?;
    Ok(sigma_hat2 * chi.inverse_cdf(1.0 - q) / nu)
}

/// Draw `sigma^2 ~ InvGamma((nu + n)/2, (nu lambda + sum r^2)/2)`.
pub fn draw_sigma(residuals: &[f64], nu: f64, lambda: f64, rng: &mut RandomStream) -> f64 {
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    let shape = 0.5 * (nu + residuals.len() as f64);
    let scale = (0.5 * (nu * lambda + ss)).max(f64::MIN_POSITIVE);
    1.0 / rng.gamma(shape, 1.0 / scale)
}

/// Residual variance of a linear fit of the scaled response with an
/// intercept, dropping linearly dependent columns. Falls back to the sample
/// variance of the scaled response when no linear fit is possible.
pub fn sigma_baseline(data: &TrainingData) -> f64 {
    let n = data.n_obs();
    let y = &data.y_scaled;
    let fallback = stats::variance(y);
    let mut names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain((0..data.n_features()).map(|j| format!("x{j}")))
        .collect();
    let mut columns: Vec<Vec<f64>> = std::iter::once(vec![1.0; n])
        .chain((0..data.n_features()).map(|j| data.x.column(j)))
        .collect();
    loop {
        if n <= columns.len() {
            return fallback;
        }
        match ols_fit(&columns, &names, y) {
            Ok(fit) => {
                let sse: f64 = fit.residuals.iter().map(|r| r * r).sum();
                let s2 = sse / (n - columns.len()) as f64;
                return s2.max(1e-12 * fallback.max(f64::MIN_POSITIVE));
            }
            Err(Error::SingularDesign { columns: bad }) if !bad.is_empty() => {
                let keep: Vec<usize> = (0..names.len()).filter(|&j| !bad.contains(&names[j])).collect();
                if keep.len() == names.len() || keep.is_empty() {
                    return fallback;
                }
                columns = keep.iter().map(|&j| columns[j].clone()).collect();
                names = keep.iter().map(|&j| names[j].clone()).collect();
            }
            Err(_) => return fallback,
        }
    }
}

/// Per-move proposal and acceptance tallies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTrace {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
    /// `sigma^2` on the scaled response after every sweep, burn-in included.
    pub sigma2: Vec<f64>,
}

impl SampleTrace {
    pub fn acceptance_rate(&self, kind: MoveKind) -> Option<f64> {
        let i = kind as usize;
        (self.proposed[i] > 0).then(|| self.accepted[i] as f64 / self.proposed[i] as f64)
    }
}

/// Mutable chain state over one training set.
pub struct Sampler<'a> {
    ctx: ModelContext<'a>,
    lambda: f64,
    fits: Vec<TreeFit>,
    tree_fit: Vec<Vec<f64>>,
    resid: Vec<f64>,
    partial: Vec<f64>,
    sigma2: f64,
    rng: RandomStream,
    strict: bool,
    trace: SampleTrace,
}

impl<'a> Sampler<'a> {
    /// Stumps valued `mean(y_scaled) / m`, `sigma^2` at the linear baseline.
    pub fn new(data: &'a TrainingData, hyper: &'a Hyperparams, rng: RandomStream) -> Result<Self> {
        hyper.validate()?;
        let n = data.n_obs();
        let min_n = 10.max(2 * hyper.min_node);
        if n < min_n {
            return Err(Error::SampleSize { n, min: min_n, max: usize::MAX });
        }
        let sigma_hat2 = sigma_baseline(data);
        let lambda = calibrate_lambda(sigma_hat2, hyper.nu, hyper.q)?;
        let start = stats::mean(&data.y_scaled) / hyper.m as f64;
        let mut fits = Vec::with_capacity(hyper.m);
        let mut tree_fit = Vec::with_capacity(hyper.m);
        for _ in 0..hyper.m {
            let mut f = TreeFit::new(Tree::stump(start), data);
            let mut v = vec![0.0; n];
            f.fill_leaves(start, &mut v);
            fits.push(f);
            tree_fit.push(v);
        }
        let resid = data.y_scaled.iter().map(|y| y - start * hyper.m as f64).collect();
        Ok(Sampler {
            ctx: ModelContext::new(data, hyper),
            lambda,
            fits,
            tree_fit,
            resid,
            partial: vec![0.0; n],
            sigma2: sigma_hat2,
            rng,
            strict: false,
            trace: SampleTrace::default(),
        })
    }

    /// Drop the data term: structure moves then target the tree prior.
    pub fn prior_only(mut self) -> Self {
        self.ctx.use_likelihood = false;
        self
    }

    /// Also re-route every observation through every tree at each sweep.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn residuals(&self) -> &[f64] {
        &self.resid
    }

    pub fn tree_fits(&self) -> &[Vec<f64>] {
        &self.tree_fit
    }

    pub fn fits(&self) -> &[TreeFit] {
        &self.fits
    }

    pub fn trace(&self) -> &SampleTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SampleTrace {
        self.trace
    }

    /// One full pass over the trees followed by a `sigma^2` draw. Returns
    /// the accounting discrepancy `max_j |sum_t fit_tj + r_j - y_j|`.
    pub fn gibbs_sweep(&mut self) -> Result<f64> {
        let sigma_mu2 = self.ctx.sigma_mu2;
        for t in 0..self.fits.len() {
            for ((p, r), f) in self.partial.iter_mut().zip(&self.resid).zip(&self.tree_fit[t]) {
                *p = r + f;
            }
            if let Some(prop) = self.fits[t].propose(None, &self.partial, self.sigma2, &self.ctx, &mut self.rng) {
                let k = prop.kind as usize;
                self.trace.proposed[k] += 1;
                if mh_accept(&prop, &mut self.rng) {
                    self.trace.accepted[k] += 1;
                    self.fits[t].apply(prop);
                }
            }
            if self.ctx.use_likelihood {
                self.fits[t].draw_leaf_values(&self.partial, self.sigma2, sigma_mu2, &mut self.rng, &mut self.tree_fit[t])?;
            } else {
                let fit = &mut self.tree_fit[t];
                let tf = &self.fits[t];
                for (i, v) in fit.iter_mut().enumerate() {
                    *v = tf.tree().leaf_value(tf.leaf_of(i));
                }
            }
            for ((r, p), f) in self.resid.iter_mut().zip(&self.partial).zip(&self.tree_fit[t]) {
                *r = p - f;
            }
        }
        if self.ctx.use_likelihood {
            self.sigma2 = draw_sigma(&self.resid, self.ctx.hyper.nu, self.lambda, &mut self.rng);
        }
        self.trace.sigma2.push(self.sigma2);
        let err = self.check_accounting()?;
        // Resynchronise so rounding does not accumulate across sweeps.
        let y = &self.ctx.data.y_scaled;
        for (j, r) in self.resid.iter_mut().enumerate() {
            let total: f64 = self.tree_fit.iter().map(|f| f[j]).sum();
            *r = y[j] - total;
        }
        Ok(err)
    }

    /// Verify the cached fits against the trees and the residual identity.
    pub fn check_accounting(&self) -> Result<f64> {
        let data = self.ctx.data;
        let mut worst = 0.0f64;
        for (t, tf) in self.fits.iter().enumerate() {
            if tf.min_leaf_count() < self.ctx.hyper.min_node && tf.tree().n_leaves() > 1 {
                return Err(Error::Invariant(format!("tree {t} has a leaf below min_node")));
            }
            for i in 0..data.n_obs() {
                let leaf = if self.strict {
                    let l = tf.tree().leaf_for(data.x.row(i));
                    if l != tf.leaf_of(i) {
                        return Err(Error::Invariant(format!("tree {t} routes row {i} to {l}, cache says {}", tf.leaf_of(i))));
                    }
                    l
                } else {
                    tf.leaf_of(i)
                };
                let cached = self.tree_fit[t][i];
                if cached != tf.tree().leaf_value(leaf) {
                    return Err(Error::Invariant(format!("tree {t} row {i}: cached fit {cached} disagrees with leaf")));
                }
            }
        }
        for j in 0..data.n_obs() {
            let total: f64 = self.tree_fit.iter().map(|f| f[j]).sum();
            worst = worst.max((total + self.resid[j] - data.y_scaled[j]).abs());
        }
        if !(worst < ACCOUNTING_TOL) {
            return Err(Error::Invariant(format!("accounting identity off by {worst:e}")));
        }
        Ok(worst)
    }

    /// Snapshot of the current ensemble.
    pub fn forest(&self) -> Forest {
        Forest::new(
            self.fits.iter().map(|f| f.tree().compact()).collect(),
            self.sigma2,
            self.ctx.data.scaling,
        )
    }
}

/// `n_burn` sweeps followed by `n_post` captured draws.
pub fn run_sampler(data: &TrainingData, hyper: &Hyperparams, rng: RandomStream) -> Result<Posterior> {
    let mut sampler = Sampler::new(data, hyper, rng)?;
    for _ in 0..hyper.n_burn {
        sampler.gibbs_sweep()?;
    }
    let mut forests = Vec::with_capacity(hyper.n_post);
    for _ in 0..hyper.n_post {
        sampler.gibbs_sweep()?;
        forests.push(sampler.forest());
    }
    let trace = sampler.into_trace();
    Ok(Posterior::new(forests, data.n_features(), trace))
}
