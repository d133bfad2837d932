//! Posterior interpretation: partial dependence with credible bands,
//! Shapley attributions, variable inclusion and interaction counts, and
//! permutation significance tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bart::{Forest, Hyperparams, Posterior};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{fit, Dataset, FitResult, Predictor};
use crate::parallel;
use crate::rng::RandomStream;
use crate::stats;

/// 5%, 10%, ..., 95%.
pub fn default_pdp_quantiles() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpResult {
    pub feature: String,
    pub level: f64,
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Strictly increasing grid from training quantiles of column `j`.
pub fn pdp_grid(x: &Matrix, j: usize, name: &str, quantiles: &[f64]) -> Result<Vec<f64>> {
    let mut col = x.column(j);
    col.sort_by(f64::total_cmp);
    if col.is_empty() || col[0] == col[col.len() - 1] {
        return Err(Error::DegenerateGrid(name.to_string()));
    }
    let mut grid: Vec<f64> = quantiles
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::ParameterDomain(format!("grid quantile {q} outside [0, 1]")));
            }
            Ok(stats::quantile_sorted(&col, q))
        })
        .collect::<Result<_>>()?;
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 {
        return Err(Error::DegenerateGrid(name.to_string()));
    }
    Ok(grid)
}

/// Per-forest mean over rows of the forest with column `j` set to each
/// grid value: `out[k][g]`.
///
/// Trees that never split on `j` contribute the same amount at every grid
/// value, so they are evaluated once per row.
fn pdp_forest_means(forests: &[Forest], x: &Matrix, j: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let n = x.n_rows() as f64;
    parallel::map_units(forests.len(), |k| {
        let f = &forests[k];
        let (uses, fixed): (Vec<_>, Vec<_>) = f
            .trees()
            .iter()
            .partition(|t| t.internal_nodes().any(|id| t.rule(id).unwrap().feature == j));
        let base: f64 = x.rows().map(|r| fixed.iter().map(|t| t.predict(r)).sum::<f64>()).sum::<f64>() / n;
        let mut row = vec![0.0; x.n_cols()];
        grid.iter()
            .map(|&g| {
                let mut acc = 0.0;
                for r in x.rows() {
                    row.copy_from_slice(r);
                    row[j] = g;
                    acc += uses.iter().map(|t| t.predict(&row)).sum::<f64>();
                }
                f.scaling().unscale(base + acc / n)
            })
            .collect()
    })
}

fn band(per_forest: &[Vec<f64>], level: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_grid = per_forest[0].len();
    let tail = 0.5 * (1.0 - level);
    let (mut mean, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    let mut col = Vec::with_capacity(per_forest.len());
    for g in 0..n_grid {
        col.clear();
        col.extend(per_forest.iter().map(|c| c[g]));
        let m = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        mean.push(m);
        lower.push(stats::quantile_sorted(&col, tail).min(m));
        upper.push(stats::quantile_sorted(&col, 1.0 - tail).max(m));
    }
    (mean, lower, upper)
}

/// Partial dependence of the fit on `feature`, averaged over the training
/// rows, with equal-tailed credible bands over posterior draws.
pub fn pdp(fit: &FitResult, feature: &str, quantiles: &[f64], level: f64) -> Result<PdpResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::ParameterDomain(format!("credible level {level} outside (0, 1)")));
    }
    let j = fit.feature_index(feature)?;
    let grid = pdp_grid(&fit.x, j, feature, quantiles)?;
    let per_forest = pdp_forest_means(&fit.posterior.forests, &fit.x, j, &grid);
    let (mean_curve, lower, upper) = band(&per_forest, level);
    Ok(PdpResult {
        feature: feature.to_string(),
        level,
        grid,
        mean_curve,
        lower,
        upper,
    })
}

/// Straight triple loop over grid, forests and rows. Reference for [`pdp`].
pub fn pdp_brute_force(fit: &FitResult, feature: &str, quantiles: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let j = fit.feature_index(feature)?;
    let grid = pdp_grid(&fit.x, j, feature, quantiles)?;
    let mut curve = Vec::with_capacity(grid.len());
    for &g in &grid {
        let mut total = 0.0;
        for f in &fit.posterior.forests {
            let mut s = 0.0;
            for i in 0..fit.x.n_rows() {
                let mut row = fit.x.row(i).to_vec();
                row[j] = g;
                s += f.predict(&row);
            }
            total += s / fit.x.n_rows() as f64;
        }
        curve.push(total / fit.posterior.len() as f64);
    }
    Ok((grid, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    pub phi: Vec<f64>,
    /// Mean prediction over the background rows.
    pub baseline: f64,
    pub prediction: f64,
}

impl ShapValues {
    pub fn additivity_gap(&self) -> f64 {
        self.baseline + self.phi.iter().sum::<f64>() - self.prediction
    }
}

/// Largest feature count for exact enumeration.
pub const SHAP_EXACT_MAX_FEATURES: usize = 12;

fn check_background(model: &dyn Predictor, x: &[f64], background: &Matrix) -> Result<()> {
    if background.n_rows() == 0 {
        return Err(Error::EmptyInput("SHAP background"));
    }
    if background.n_cols() != x.len() || (model.n_features() > x.len()) {
        return Err(Error::Shape(format!(
            "row has {} features, background {}, model needs {}",
            x.len(),
            background.n_cols(),
            model.n_features()
        )));
    }
    Ok(())
}

/// Exact interventional Shapley values by enumerating all coalitions.
pub fn shap_exact(model: &dyn Predictor, x: &[f64], background: &Matrix) -> Result<ShapValues> {
    let p = x.len();
    if p > SHAP_EXACT_MAX_FEATURES {
        return Err(Error::EnumerationBound {
            features: p,
            bound: SHAP_EXACT_MAX_FEATURES,
        });
    }
    check_background(model, x, background)?;
    let b = background.n_rows() as f64;
    let n_masks = 1usize << p;
    let value: Vec<f64> = parallel::map_units(n_masks, |mask| {
        let mut row = vec![0.0; p];
        let mut acc = 0.0;
        for z in background.rows() {
            for j in 0..p {
                row[j] = if mask >> j & 1 == 1 { x[j] } else { z[j] };
            }
            acc += model.predict_row(&row);
        }
        acc / b
    });
    // weight(s) = s! (p - s - 1)! / p!
    let mut weight = vec![0.0; p];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / p as f64;
        let r = p - 1;
        // 1 / (p * C(p-1, s))
        let mut c = 1.0;
        for i in 0..s {
            c = c * (r - i) as f64 / (i + 1) as f64;
        }
        v /= c;
        *w = v;
    }
    let mut phi = vec![0.0; p];
    for mask in 0..n_masks {
        let s = mask.count_ones() as usize;
        for (j, ph) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *ph += weight[s] * (value[mask | 1 << j] - value[mask]);
            }
        }
    }
    Ok(ShapValues {
        phi,
        baseline: value[0],
        prediction: model.predict_row(x),
    })
}

/// Mean background prediction.
pub fn shap_baseline(model: &dyn Predictor, background: &Matrix) -> f64 {
    background.rows().map(|z| model.predict_row(z)).sum::<f64>() / background.n_rows() as f64
}

/// Permutation-sampling estimate before the additivity correction.
pub fn shap_mc_raw(
    model: &dyn Predictor,
    x: &[f64],
    background: &Matrix,
    n_samples: usize,
    rng: &mut RandomStream,
) -> Result<ShapValues> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    check_background(model, x, background)?;
    let p = x.len();
    let mut phi = vec![0.0; p];
    let mut with_j = vec![0.0; p];
    let mut without_j = vec![0.0; p];
    let mut order: Vec<usize> = (0..p).collect();
    for (j, ph) in phi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for _ in 0..n_samples {
            rng.shuffle(&mut order);
            let z = background.row(rng.index(background.n_rows()));
            let mut before = true;
            for &f in &order {
                if f == j {
                    before = false;
                    with_j[f] = x[f];
                    without_j[f] = z[f];
                } else if before {
                    with_j[f] = x[f];
                    without_j[f] = x[f];
                } else {
                    with_j[f] = z[f];
                    without_j[f] = z[f];
                }
            }
            acc += model.predict_row(&with_j) - model.predict_row(&without_j);
        }
        *ph = acc / n_samples as f64;
    }
    Ok(ShapValues {
        phi,
        baseline: shap_baseline(model, background),
        prediction: model.predict_row(x),
    })
}

/// Spread the additivity gap over features in proportion to `|phi|`
/// (equally when every estimate is zero).
pub fn normalize_additivity(mut s: ShapValues) -> ShapValues {
    let gap = s.prediction - s.baseline - s.phi.iter().sum::<f64>();
    let total: f64 = s.phi.iter().map(|v| v.abs()).sum();
    let p = s.phi.len() as f64;
    for v in &mut s.phi {
        *v += if total > 0.0 { gap * v.abs() / total } else { gap / p };
    }
    s
}

/// Monte-Carlo Shapley values with the additivity correction applied.
pub fn shap_mc(
    model: &dyn Predictor,
    x: &[f64],
    background: &Matrix,
    n_samples: usize,
    rng: &mut RandomStream,
) -> Result<ShapValues> {
    shap_mc_raw(model, x, background, n_samples, rng).map(normalize_additivity)
}

/// Background rows: all of `x`, or a seeded subsample of `cap` rows.
pub fn background_rows(x: &Matrix, cap: usize, rng: &mut RandomStream) -> Matrix {
    if x.n_rows() <= cap {
        return x.clone();
    }
    let mut idx = rng.permutation(x.n_rows());
    idx.truncate(cap);
    idx.sort_unstable();
    x.select_rows(&idx)
}

/// Split share of every feature over all trees and draws of one posterior.
pub fn inclusion_from_posterior(posterior: &Posterior) -> Vec<f64> {
    let mut counts = vec![0u64; posterior.n_features];
    for f in &posterior.forests {
        for (c, v) in counts.iter_mut().zip(f.split_counts(posterior.n_features)) {
            *c += v;
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
        .collect()
}

/// Parent-child distinct-feature split pairs summed over all draws.
pub fn interactions_from_posterior(posterior: &Posterior) -> BTreeMap<(usize, usize), u64> {
    let mut out = BTreeMap::new();
    for f in &posterior.forests {
        for (k, v) in f.interaction_pairs() {
            *out.entry(k).or_insert(0) += v;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Mean and central 95% percentile interval.
    pub fn of(values: &[f64]) -> Interval {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Interval {
            mean: stats::mean(values),
            lower: stats::quantile_sorted(&s, 0.025),
            upper: stats::quantile_sorted(&s, 0.975),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub name: String,
    #[serde(flatten)]
    pub proportion: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub builds: usize,
    /// In the dataset's column order.
    pub rows: Vec<ImportanceRow>,
    /// `per_build[b][j]`.
    pub per_build: Vec<Vec<f64>>,
}

impl ImportanceReport {
    /// Rows by decreasing mean proportion.
    pub fn ranked(&self) -> Vec<&ImportanceRow> {
        let mut r: Vec<&ImportanceRow> = self.rows.iter().collect();
        r.sort_by(|a, b| b.proportion.mean.total_cmp(&a.proportion.mean).then_with(|| a.name.cmp(&b.name)));
        r
    }
}

/// Column order sorted by name. Repeated-build statistics are computed on
/// this canonical layout so that reordering the input columns only reorders
/// the report.
fn canonical(data: &Dataset) -> (Dataset, Vec<usize>) {
    let mut order: Vec<usize> = (0..data.n_features()).collect();
    order.sort_by(|&a, &b| data.names[a].cmp(&data.names[b]));
    let cols: Vec<Vec<f64>> = order.iter().map(|&j| data.x.column(j)).collect();
    let x = Matrix::from_columns(&cols).expect("same shape");
    let names = order.iter().map(|&j| data.names[j].clone()).collect();
    (
        Dataset {
            names,
            x,
            y: data.y.clone(),
        },
        order,
    )
}

fn repeated_fits<T: Send>(
    data: &Dataset,
    hyper: &Hyperparams,
    builds: usize,
    rng: &RandomStream,
    f: impl Fn(&FitResult) -> T + Sync + Send,
) -> Result<Vec<T>> {
    parallel::try_map_units(builds, |b| fit(data, hyper, rng.substream(b as u64)).map(|r| f(&r)))
}

/// Inclusion proportions over `builds` independently seeded fits.
pub fn inclusion_proportions(data: &Dataset, hyper: &Hyperparams, builds: usize, rng: &RandomStream) -> Result<ImportanceReport> {
    if builds < 2 {
        return Err(Error::InvalidArgument("at least 2 builds are required".into()));
    }
    let (canon, order) = canonical(data);
    let canon_props = repeated_fits(&canon, hyper, builds, rng, |r| inclusion_from_posterior(&r.posterior))?;
    let p = data.n_features();
    let per_build: Vec<Vec<f64>> = canon_props
        .iter()
        .map(|cp| {
            let mut v = vec![0.0; p];
            for (ci, &j) in order.iter().enumerate() {
                v[j] = cp[ci];
            }
            v
        })
        .collect();
    let rows = (0..p)
        .map(|j| ImportanceRow {
            name: data.names[j].clone(),
            proportion: Interval::of(&per_build.iter().map(|v| v[j]).collect::<Vec<_>>()),
        })
        .collect();
    Ok(ImportanceReport { builds, rows, per_build })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRow {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub count: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub builds: usize,
    /// Up to `top_k` pairs by decreasing mean count.
    pub top: Vec<InteractionRow>,
    /// Every pair, same ordering.
    pub all: Vec<InteractionRow>,
}

/// Interaction counts over `builds` independently seeded fits.
pub fn interaction_counts(
    data: &Dataset,
    hyper: &Hyperparams,
    builds: usize,
    top_k: usize,
    rng: &RandomStream,
) -> Result<InteractionReport> {
    if data.n_features() < 2 {
        return Err(Error::InvalidArgument("interaction counts need at least 2 features".into()));
    }
    if builds < 1 {
        return Err(Error::InvalidArgument("at least 1 build is required".into()));
    }
    let (canon, _) = canonical(data);
    let per_build = repeated_fits(&canon, hyper, builds, rng, |r| interactions_from_posterior(&r.posterior))?;
    let p = canon.n_features();
    let mut all = Vec::with_capacity(p * (p - 1) / 2);
    for a in 0..p {
        for b in a + 1..p {
            let v: Vec<f64> = per_build.iter().map(|m| *m.get(&(a, b)).unwrap_or(&0) as f64).collect();
            // report each pair in the caller's column order
            let (ia, ib) = (data.feature_index(&canon.names[a])?, data.feature_index(&canon.names[b])?);
            let (x, y) = if ia < ib { (a, b) } else { (b, a) };
            all.push(InteractionRow {
                a: canon.names[x].clone(),
                b: canon.names[y].clone(),
                count: Interval::of(&v),
            });
        }
    }
    all.sort_by(|r, s| {
        s.count
            .mean
            .total_cmp(&r.count.mean)
            .then_with(|| (&r.a, &r.b).cmp(&(&s.a, &s.b)))
    });
    let top = all.iter().take(top_k).cloned().collect();
    Ok(InteractionReport { builds, top, all })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "feature")]
pub enum PermutationMode {
    Omnibus,
    Covariate(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub mode: PermutationMode,
    pub observed: f64,
    pub null: Vec<f64>,
    pub p_value: f64,
}

/// Smallest replicate count giving a resolution of 0.05.
pub const MIN_REPLICATES: usize = 19;

/// `(1 + #{null >= observed}) / (1 + P)`.
pub fn add_one_p_value(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v >= observed).count();
    (1 + hits) as f64 / (1 + null.len()) as f64
}

/// Permutation test of the whole model (response permuted, statistic the
/// in-sample pseudo-R^2) or of one covariate (that column permuted,
/// statistic its inclusion proportion).
pub fn permutation_test(
    data: &Dataset,
    hyper: &Hyperparams,
    mode: &PermutationMode,
    replicates: usize,
    rng: &RandomStream,
) -> Result<PermutationTestResult> {
    if replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "{replicates} replicates; at least {MIN_REPLICATES} are required"
        )));
    }
    let col = match mode {
        PermutationMode::Omnibus => None,
        PermutationMode::Covariate(name) => Some(data.feature_index(name)?),
    };
    let statistic = |r: &FitResult| -> f64 {
        match col {
            None => r.metrics.map_or(f64::NAN, |m| m.pseudo_r2),
            Some(j) => inclusion_from_posterior(&r.posterior)[j],
        }
    };
    let observed = statistic(&fit(data, hyper, rng.substream(0))?);
    let n = data.n_rows();
    let null = parallel::try_map_units(replicates, |r| -> Result<f64> {
        let unit = rng.substream(1 + r as u64);
        let perm = unit.substream(0).permutation(n);
        let shuffled = match col {
            None => data.with_response(perm.iter().map(|&i| data.y[i]).collect()),
            Some(j) => {
                let v = data.x.column(j);
                data.with_column(j, &perm.iter().map(|&i| v[i]).collect::<Vec<_>>())
            }
        };
        Ok(statistic(&fit(&shuffled, hyper, unit.substream(1))?))
    })?;
    Ok(PermutationTestResult {
        mode: mode.clone(),
        observed,
        p_value: add_one_p_value(observed, &null),
        null,
    })
}
