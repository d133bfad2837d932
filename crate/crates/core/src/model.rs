//! Fit, predict and evaluate, with cross-validation, grid-search tuning and
//! residual diagnostics.

use serde::{Deserialize, Serialize};

use crate::bart::{run_sampler, Hyperparams, Posterior, Scaling, TrainingData};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::parallel;
use crate::rng::RandomStream;
use crate::stats::{self, ShapiroWilk};

/// Named feature columns plus a response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        if names.len() != x.n_cols() {
            return Err(Error::Shape(format!("{} names for {} columns", names.len(), x.n_cols())));
        }
        if x.n_rows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} responses", x.n_rows(), y.len())));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Schema(format!("duplicate feature `{a}`")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("response must be finite".into()));
        }
        Ok(Dataset { names, x, y })
    }

    pub fn from_columns(names: &[&str], columns: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        Self::new(names.iter().map(|s| s.to_string()).collect(), Matrix::from_columns(columns)?, y)
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature `{name}` (have {})", self.names.join(", "))))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: &[f64]) -> Dataset {
        let mut out = self.clone();
        out.x.set_column(j, values);
        out
    }

    pub fn with_response(&self, y: Vec<f64>) -> Dataset {
        Dataset { y, ..self.clone() }
    }
}

/// Anything that maps a feature row to a prediction.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> f64;
}

impl Predictor for Posterior {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Posterior mean.
    fn predict_row(&self, row: &[f64]) -> f64 {
        self.forests.iter().map(|f| f.predict(row)).sum::<f64>() / self.forests.len() as f64
    }
}

impl Predictor for crate::bart::Forest {
    fn n_features(&self) -> usize {
        self.trees()
            .iter()
            .flat_map(|t| t.internal_nodes().map(move |id| t.rule(id).unwrap().feature + 1))
            .max()
            .unwrap_or(0)
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(row)
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnPredictor<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub pseudo_r2: f64,
}

/// RMSE and `1 - SSE/SST`.
pub fn evaluate(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} responses but {} predictions", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::SampleSize { n: y.len(), min: 2, max: usize::MAX });
    }
    let n = y.len() as f64;
    let ybar = stats::mean(y);
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = y.iter().map(|a| (a - ybar) * (a - ybar)).sum();
    if sst == 0.0 {
        return Err(Error::ConstantResponse);
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        pseudo_r2: 1.0 - sse / sst,
    })
}

/// Posterior draws together with their training data.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub posterior: Posterior,
    pub hyper: Hyperparams,
    pub names: Vec<String>,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub scaling: Scaling,
    /// In-sample metrics of the posterior-mean prediction.
    pub metrics: Option<Metrics>,
}

impl FitResult {
    /// Assemble a fit from externally built draws (e.g. a reloaded posterior).
    pub fn from_posterior(posterior: Posterior, hyper: Hyperparams, data: &Dataset) -> Result<Self> {
        if posterior.is_empty() {
            return Err(Error::EmptyInput("posterior has no draws"));
        }
        if posterior.n_features != data.n_features() {
            return Err(Error::Schema(format!(
                "posterior has {} features, data has {}",
                posterior.n_features,
                data.n_features()
            )));
        }
        let scaling = posterior.forests[0].scaling();
        let fitted = posterior.mean_prediction(&data.x);
        let metrics = evaluate(&data.y, &fitted).ok();
        Ok(FitResult {
            posterior,
            hyper,
            names: data.names.clone(),
            x: data.x.clone(),
            y: data.y.clone(),
            scaling,
            metrics,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn dataset(&self) -> Dataset {
        Dataset {
            names: self.names.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }

    pub fn fitted(&self) -> Vec<f64> {
        self.posterior.mean_prediction(&self.x)
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("feature `{name}` is not in the fitted model")))
    }
}

impl Predictor for FitResult {
    fn n_features(&self) -> usize {
        self.names.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.posterior.predict_row(row)
    }
}

/// Run the sampler on `data`.
pub fn fit(data: &Dataset, hyper: &Hyperparams, rng: RandomStream) -> Result<FitResult> {
    if data.n_features() == 0 {
        return Err(Error::Shape("no features".into()));
    }
    let training = TrainingData::new(data.x.clone(), &data.y)?;
    let posterior = run_sampler(&training, hyper, rng)?;
    let fitted = posterior.mean_prediction(&data.x);
    let metrics = evaluate(&data.y, &fitted).ok();
    Ok(FitResult {
        posterior,
        hyper: hyper.clone(),
        names: data.names.clone(),
        x: data.x.clone(),
        y: data.y.clone(),
        scaling: training.scaling,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub level: f64,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Reorder `x` (columns named `names`) into the order `want`.
pub fn align_columns(want: &[String], names: &[String], x: &Matrix) -> Result<Matrix> {
    let missing: Vec<&str> = want.iter().filter(|w| !names.contains(w)).map(String::as_str).collect();
    let extra: Vec<&str> = names.iter().filter(|n| !want.contains(n)).map(String::as_str).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema(format!(
            "columns differ from the training schema: missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if names.len() != x.n_cols() {
        return Err(Error::Shape(format!("{} names for {} columns", names.len(), x.n_cols())));
    }
    let order: Vec<usize> = want.iter().map(|w| names.iter().position(|n| n == w).unwrap()).collect();
    let cols: Vec<Vec<f64>> = order.iter().map(|&j| x.column(j)).collect();
    Matrix::from_columns(&cols)
}

/// Posterior mean and equal-tailed credible bounds per row.
pub fn predict_posterior(
    posterior: &Posterior,
    train_names: &[String],
    names: &[String],
    rows: &Matrix,
    level: f64,
) -> Result<PredictionSummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::ParameterDomain(format!("credible level {level} outside (0, 1)")));
    }
    let x = align_columns(train_names, names, rows)?;
    let draws = posterior.draws(&x);
    let k = draws.len() as f64;
    let mut out = PredictionSummary {
        level,
        mean: Vec::with_capacity(x.n_rows()),
        lower: Vec::with_capacity(x.n_rows()),
        upper: Vec::with_capacity(x.n_rows()),
    };
    let tail = 0.5 * (1.0 - level);
    let mut col = Vec::with_capacity(draws.len());
    for i in 0..x.n_rows() {
        col.clear();
        col.extend(draws.iter().map(|d| d[i]));
        let mean = col.iter().sum::<f64>() / k;
        col.sort_by(f64::total_cmp);
        let lo = stats::quantile_sorted(&col, tail);
        let hi = stats::quantile_sorted(&col, 1.0 - tail);
        out.mean.push(mean);
        out.lower.push(lo.min(mean));
        out.upper.push(hi.max(mean));
    }
    Ok(out)
}

pub fn predict(fit: &FitResult, names: &[String], rows: &Matrix, level: f64) -> Result<PredictionSummary> {
    predict_posterior(&fit.posterior, &fit.names, names, rows, level)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub rows: Vec<usize>,
    pub predictions: Vec<f64>,
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub rmse: f64,
    pub pseudo_r2: f64,
    /// Out-of-fold prediction for every row, in row order.
    pub predictions: Vec<f64>,
    pub folds: Vec<FoldDetail>,
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, rng: &mut RandomStream) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::SampleSize { n, min: k.max(2), max: usize::MAX });
    }
    let perm = rng.permutation(n);
    let mut folds = vec![Vec::new(); k];
    for (pos, &i) in perm.iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// k-fold cross-validation with pooled out-of-fold metrics. Folds run in
/// parallel, each on its own substream.
pub fn k_fold_cv(data: &Dataset, hyper: &Hyperparams, k: usize, rng: &RandomStream) -> Result<CvResult> {
    let n = data.n_rows();
    let folds = fold_assignment(n, k, &mut rng.substream(0))?;
    let details = parallel::try_map_units(k, |f| -> Result<FoldDetail> {
        let test = &folds[f];
        let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        let fitted = fit(&data.select_rows(&train), hyper, rng.substream(1 + f as u64))?;
        let predictions = fitted.posterior.mean_prediction(&data.x.select_rows(test));
        let y: Vec<f64> = test.iter().map(|&i| data.y[i]).collect();
        Ok(FoldDetail {
            rows: test.clone(),
            metrics: evaluate(&y, &predictions).ok(),
            predictions,
        })
    })?;
    let mut pooled = vec![f64::NAN; n];
    for d in &details {
        for (&i, &p) in d.rows.iter().zip(&d.predictions) {
            pooled[i] = p;
        }
    }
    let m = evaluate(&data.y, &pooled)?;
    Ok(CvResult {
        k,
        rmse: m.rmse,
        pseudo_r2: m.pseudo_r2,
        predictions: pooled,
        folds: details,
    })
}

/// Cross-product grid over `k`, `(nu, q)` and `m`, other settings from `base`.
pub fn default_grid(base: &Hyperparams) -> Vec<Hyperparams> {
    let mut out = Vec::new();
    for k in [2.0, 3.0, 5.0] {
        for (nu, q) in [(3.0, 0.9), (3.0, 0.99), (10.0, 0.75)] {
            for m in [50, 200] {
                out.push(Hyperparams { k, nu, q, m, ..base.clone() });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub hyper: Hyperparams,
    pub cv_rmse: f64,
    pub cv_pseudo_r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: Hyperparams,
    pub leaderboard: Vec<GridEntry>,
}

/// Candidate with the smallest CV-RMSE; ties go to smaller `m`, then to the
/// earlier candidate. Every candidate sees the same folds.
pub fn grid_search(data: &Dataset, grid: &[Hyperparams], k: usize, rng: &RandomStream) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }
    let mut leaderboard = Vec::with_capacity(grid.len());
    for h in grid {
        let cv = k_fold_cv(data, h, k, rng)?;
        leaderboard.push(GridEntry {
            hyper: h.clone(),
            cv_rmse: cv.rmse,
            cv_pseudo_r2: cv.pseudo_r2,
        });
    }
    let mut best = 0;
    for (i, e) in leaderboard.iter().enumerate().skip(1) {
        let b = &leaderboard[best];
        if e.cv_rmse < b.cv_rmse || (e.cv_rmse == b.cv_rmse && e.hyper.m < b.hyper.m) {
            best = i;
        }
    }
    Ok(GridSearchResult {
        best_index: best,
        best: leaderboard[best].hyper.clone(),
        leaderboard,
    })
}

/// Spread ratio above which residuals are reported as heteroskedastic.
pub const SPREAD_FLAG: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// (theoretical normal quantile, sorted residual).
    pub qq_points: Vec<(f64, f64)>,
    /// (fitted, residual) in row order.
    pub residual_vs_fitted: Vec<(f64, f64)>,
    pub shapiro: Option<ShapiroWilk>,
    pub shapiro_error: Option<String>,
    /// Residual sd in the top tercile of fitted values over the bottom tercile.
    pub spread_ratio: Option<f64>,
    pub heteroskedastic: bool,
}

/// Diagnostics for residuals `y - fitted`.
pub fn diagnose_residuals(y: &[f64], fitted: &[f64]) -> Result<ResidualDiagnostics> {
    if y.len() != fitted.len() {
        return Err(Error::Shape("responses and fitted values differ in length".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("residual diagnostics"));
    }
    let n = y.len();
    let residuals: Vec<f64> = y.iter().zip(fitted).map(|(a, b)| a - b).collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let qq_points = sorted
        .iter()
        .enumerate()
        .map(|(i, r)| (stats::normal_quantile((i as f64 + 0.5) / n as f64), *r))
        .collect();
    let (shapiro, shapiro_error) = match stats::shapiro_wilk(&residuals) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitted[a].total_cmp(&fitted[b]));
    let third = n / 3;
    let spread_ratio = if third >= 2 {
        let sd = |idx: &[usize]| {
            let r: Vec<f64> = idx.iter().map(|&i| residuals[i]).collect();
            stats::variance(&r).sqrt()
        };
        let lo = sd(&order[..third]);
        let hi = sd(&order[n - third..]);
        (lo > 0.0).then(|| hi / lo)
    } else {
        None
    };
    Ok(ResidualDiagnostics {
        residual_vs_fitted: fitted.iter().zip(&residuals).map(|(f, r)| (*f, *r)).collect(),
        heteroskedastic: spread_ratio.is_some_and(|s| s > SPREAD_FLAG),
        residuals,
        fitted: fitted.to_vec(),
        qq_points,
        shapiro,
        shapiro_error,
        spread_ratio,
    })
}

/// Diagnostics for the posterior-mean fit on `data`.
pub fn residual_diagnostics(fit: &FitResult, data: &Dataset) -> Result<ResidualDiagnostics> {
    let x = align_columns(&fit.names, &data.names, &data.x)?;
    let fitted = fit.posterior.mean_prediction(&x);
    diagnose_residuals(&data.y, &fitted)
}
