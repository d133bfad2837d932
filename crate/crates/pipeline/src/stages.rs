//! Pipeline stages. Each stage rebuilds the cheap, deterministic preparation
//! (ingest, indices, screens) in memory, reads the expensive upstream results
//! it needs from the output directory and writes `stages/<name>.json` plus
//! its CSV plot data.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bartlab_core::bart::{Hyperparams, MoveKind, Posterior};
use bartlab_core::interpret::{
    background_rows, inclusion_proportions, interaction_counts, pdp, permutation_test, shap_mc, ImportanceReport,
    InteractionReport, Interval, PdpResult, PermutationMode, PermutationTestResult,
};
use bartlab_core::model::{
    evaluate, fit, grid_search, k_fold_cv, predict, predict_posterior, residual_diagnostics, FitResult, GridEntry,
    Metrics,
};
use bartlab_core::stats::ShapiroWilk;
use bartlab_core::RandomStream;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    dataset_digest, manifest, num, read_json, sha256_hex, stage_path, write_csv, write_json, write_text,
    ManifestEntry, OutputLock, CUSTOM_PREDICTIONS_FILE, FOREST_FILE, INCOMPLETE_FILE, LOG_FILE, REPORT_FILE,
};
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::ingest::read_features;
use crate::prepare::{index_rows, load_panel, prepare, screen, IndicesArtifact, Prepared, ScreenArtifact};

const STREAM_FIT: u64 = 1;
const STREAM_CV: u64 = 2;
const STREAM_TUNE: u64 = 3;
const STREAM_SHAP: u64 = 5;
const STREAM_IMPORTANCE: u64 = 6;
const STREAM_INTERACTIONS: u64 = 7;
const STREAM_PERMTEST: u64 = 8;

pub const REPORT_FORMAT: &str = "bartlab-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Indices,
    Screen,
    Fit,
    Cv,
    Tune,
    Predict,
    Diagnose,
    Pdp,
    Shap,
    Importance,
    Interactions,
    Permtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Indices,
        Stage::Screen,
        Stage::Fit,
        Stage::Cv,
        Stage::Tune,
        Stage::Predict,
        Stage::Diagnose,
        Stage::Pdp,
        Stage::Shap,
        Stage::Importance,
        Stage::Interactions,
        Stage::Permtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Indices => "indices",
            Stage::Screen => "screen",
            Stage::Fit => "fit",
            Stage::Cv => "cv",
            Stage::Tune => "tune",
            Stage::Predict => "predict",
            Stage::Diagnose => "diagnose",
            Stage::Pdp => "pdp",
            Stage::Shap => "shap",
            Stage::Importance => "importance",
            Stage::Interactions => "interactions",
            Stage::Permtest => "permtest",
            Stage::Report => "report",
        }
    }
}

/// Per-invocation overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct StageOptions {
    pub pdp_features: Option<Vec<String>>,
    pub forest: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub options: StageOptions,
}

impl Context {
    pub fn new(mut cfg: PipelineConfig, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.paths.output = o;
        }
        Context {
            out: cfg.paths.output.clone(),
            cfg,
            options: StageOptions::default(),
        }
    }

    fn rng(&self, stream: u64) -> RandomStream {
        RandomStream::new(self.cfg.seed, stream)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub hyper: Hyperparams,
    pub train_rows: usize,
    pub train_digest: String,
    pub metrics: Metrics,
    /// Posterior of the noise sd, response units.
    pub sigma: Interval,
    /// Acceptance rate per move kind over burn-in and sampling.
    pub acceptance: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvArtifact {
    pub hyper: Hyperparams,
    pub k: usize,
    pub rmse: f64,
    pub pseudo_r2: f64,
    pub fold_sizes: Vec<usize>,
    pub train_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneArtifact {
    pub k: usize,
    pub leaderboard: Vec<GridEntry>,
    pub best_index: usize,
    pub best: Hyperparams,
    pub train_digest: String,
    pub train_metrics: Metrics,
    pub test_rows: usize,
    pub test_metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictArtifact {
    pub level: f64,
    pub rows: usize,
    pub metrics: Metrics,
    /// Share of test responses inside their credible interval.
    pub interval_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseArtifact {
    pub rows: usize,
    pub rmse: f64,
    pub shapiro: Option<ShapiroWilk>,
    pub shapiro_error: Option<String>,
    pub spread_ratio: Option<f64>,
    pub heteroskedastic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    /// Grid value with the highest mean curve.
    pub argmax: f64,
    #[serde(flatten)]
    pub curve: PdpResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpArtifact {
    pub curves: Vec<PdpCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapArtifact {
    pub rows: usize,
    pub samples: usize,
    pub background: usize,
    pub baseline: f64,
    pub mean_abs: Vec<NamedValue>,
    pub max_additivity_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermtestArtifact {
    pub replicates: usize,
    pub hyper: Hyperparams,
    pub results: Vec<PermutationTestResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageCheck {
    pub index_weights: bool,
    pub screen: bool,
    pub training_rows: bool,
    /// Digest of the training matrix rebuilt from a copy holding only
    /// training-window rows.
    pub filtered_train_digest: String,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub input_sha256: String,
    /// Digest of the configuration with paths removed.
    pub config_sha256: String,
    pub stages: BTreeMap<String, serde_json::Value>,
    pub leakage: LeakageCheck,
    pub manifest: Vec<ManifestEntry>,
}

fn save<T: Serialize>(ctx: &Context, stage: Stage, value: &T) -> Result<()> {
    write_json(&stage_path(&ctx.out, stage.name()), value)
}

fn load<T: for<'de> Deserialize<'de>>(ctx: &Context, stage: Stage) -> Result<T> {
    read_json(&stage_path(&ctx.out, stage.name()), stage.name())
}

fn need_metrics(f: &FitResult) -> Result<Metrics> {
    f.metrics.ok_or(PipelineError::Core(bartlab_core::Error::ConstantResponse))
}

fn row_ids(prep: &Prepared, rows: &[usize], i: usize) -> (String, String, String) {
    let r = rows[i];
    (
        prep.panel.province[r].clone(),
        prep.panel.year[r].to_string(),
        prep.panel.region[r].to_string(),
    )
}

fn stage_indices(ctx: &Context, prep: &Prepared) -> Result<()> {
    let p = &prep.panel;
    let cols = [crate::prepare::RESPONSE, crate::prepare::GFI, crate::prepare::CPRI].map(|c| p.require(c));
    let [cei, gfi, cpri] = cols;
    let (cei, gfi, cpri) = (cei?, gfi?, cpri?);
    write_csv(
        &ctx.path("indices.csv"),
        &["province", "year", "region", "CEI", "GFI", "CPRI"],
        (0..p.n_rows()).map(|i| {
            vec![
                p.province[i].clone(),
                p.year[i].to_string(),
                p.region[i].to_string(),
                num(cei[i]),
                num(gfi[i]),
                num(cpri[i]),
            ]
        }),
    )?;
    save(ctx, Stage::Indices, &prep.indices)
}

fn stage_screen(ctx: &Context, prep: &Prepared) -> Result<()> {
    let s = &prep.screen;
    write_csv(
        &ctx.path("skewness.csv"),
        &["column", "skewness", "transformed"],
        s.transform.entries.iter().map(|e| {
            vec![
                e.column.clone(),
                e.skewness.map(num).unwrap_or_default(),
                e.transformed.to_string(),
            ]
        }),
    )?;
    write_csv(
        &ctx.path("vif.csv"),
        &["round", "name", "df", "gvif", "agsif", "flag"],
        s.vif_rounds.iter().enumerate().flat_map(|(k, r)| {
            r.rows.iter().map(move |row| {
                vec![
                    k.to_string(),
                    row.name.clone(),
                    row.df.to_string(),
                    num(row.gvif),
                    num(row.agsif),
                    format!("{:?}", row.flag).to_lowercase(),
                ]
            })
        }),
    )?;
    save(ctx, Stage::Screen, s)
}

fn stage_fit(ctx: &Context, prep: &Prepared) -> Result<()> {
    let hyper = &ctx.cfg.model.hyper;
    let f = fit(&prep.train, hyper, ctx.rng(STREAM_FIT))?;
    let trace = &f.posterior.trace;
    let acceptance = MoveKind::ALL
        .iter()
        .map(|&k| (format!("{k:?}").to_lowercase(), trace.acceptance_rate(k)))
        .collect();
    let art = FitArtifact {
        hyper: hyper.clone(),
        train_rows: prep.train.n_rows(),
        train_digest: dataset_digest(&prep.train),
        metrics: need_metrics(&f)?,
        sigma: Interval::of(&f.posterior.sigma_draws()),
        acceptance,
    };
    save(ctx, Stage::Fit, &art)
}

fn stage_cv(ctx: &Context, prep: &Prepared) -> Result<()> {
    let hyper = &ctx.cfg.model.hyper;
    let k = ctx.cfg.model.cv_folds;
    let cv = k_fold_cv(&prep.train, hyper, k, &ctx.rng(STREAM_CV))?;
    let mut rows = Vec::new();
    for (fi, fold) in cv.folds.iter().enumerate() {
        for (&i, &p) in fold.rows.iter().zip(&fold.predictions) {
            let (prov, year, _) = row_ids(prep, &prep.train_rows, i);
            rows.push(vec![prov, year, fi.to_string(), num(prep.train.y[i]), num(p)]);
        }
    }
    write_csv(&ctx.path("cv_predictions.csv"), &["province", "year", "fold", "y", "prediction"], rows)?;
    save(
        ctx,
        Stage::Cv,
        &CvArtifact {
            hyper: hyper.clone(),
            k,
            rmse: cv.rmse,
            pseudo_r2: cv.pseudo_r2,
            fold_sizes: cv.folds.iter().map(|f| f.rows.len()).collect(),
            train_digest: dataset_digest(&prep.train),
        },
    )
}

fn stage_tune(ctx: &Context, prep: &Prepared) -> Result<()> {
    let k = ctx.cfg.model.cv_folds;
    let rng = ctx.rng(STREAM_TUNE);
    let search = grid_search(&prep.train, &ctx.cfg.model.candidates(), k, &rng.substream(0))?;
    let tuned = fit(&prep.train, &search.best, rng.substream(1))?;
    let test_pred = tuned.posterior.mean_prediction(&prep.test.x);
    let art = TuneArtifact {
        k,
        best_index: search.best_index,
        best: search.best.clone(),
        train_digest: dataset_digest(&prep.train),
        train_metrics: need_metrics(&tuned)?,
        test_rows: prep.test.n_rows(),
        test_metrics: evaluate(&prep.test.y, &test_pred)?,
        leaderboard: search.leaderboard,
    };
    write_csv(
        &ctx.path("tune_leaderboard.csv"),
        &["candidate", "m", "alpha", "beta", "k", "nu", "q", "cv_rmse", "cv_pseudo_r2"],
        art.leaderboard.iter().enumerate().map(|(i, e)| {
            let h = &e.hyper;
            vec![
                i.to_string(),
                h.m.to_string(),
                num(h.alpha),
                num(h.beta),
                num(h.k),
                num(h.nu),
                num(h.q),
                num(e.cv_rmse),
                num(e.cv_pseudo_r2),
            ]
        }),
    )?;
    let mut text = tuned.posterior.to_json(&prep.train.names)?;
    text.push('\n');
    write_text(&ctx.path(FOREST_FILE), &text)?;
    save(ctx, Stage::Tune, &art)
}

/// The tuned model as saved by `tune`.
pub fn load_tuned(ctx: &Context, prep: &Prepared) -> Result<FitResult> {
    let tune: TuneArtifact = load(ctx, Stage::Tune)?;
    let path = ctx.path(FOREST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(_) => return Err(PipelineError::MissingArtifact { path, stage: "tune" }),
    };
    let (posterior, names) = Posterior::from_json(&text)?;
    if names != prep.train.names {
        return Err(PipelineError::Core(bartlab_core::Error::Schema(format!(
            "saved forest has features {names:?}, the prepared data has {:?}",
            prep.train.names
        ))));
    }
    Ok(FitResult::from_posterior(posterior, tune.best, &prep.train)?)
}

fn stage_predict(ctx: &Context, prep: &Prepared) -> Result<()> {
    let level = ctx.cfg.model.level;
    if let (Some(forest), Some(features)) = (&ctx.options.forest, &ctx.options.features) {
        let text = fs::read_to_string(forest).map_err(|e| PipelineError::io(forest, e))?;
        let (posterior, names) = Posterior::from_json(&text)?;
        let table = read_features(features)?;
        let p = predict_posterior(&posterior, &names, &table.names, &table.x, level)?;
        return write_csv(
            &ctx.path(CUSTOM_PREDICTIONS_FILE),
            &["province", "year", "mean", "lower", "upper"],
            table.ids.iter().enumerate().map(|(i, (prov, year))| {
                vec![prov.clone(), year.clone(), num(p.mean[i]), num(p.lower[i]), num(p.upper[i])]
            }),
        );
    }
    let tuned = load_tuned(ctx, prep)?;
    let p = predict(&tuned, &prep.test.names, &prep.test.x, level)?;
    let y = &prep.test.y;
    let inside = (0..y.len()).filter(|&i| p.lower[i] <= y[i] && y[i] <= p.upper[i]).count();
    write_csv(
        &ctx.path("predictions.csv"),
        &["province", "year", "region", "y", "mean", "lower", "upper"],
        (0..y.len()).map(|i| {
            let (prov, year, region) = row_ids(prep, &prep.test_rows, i);
            vec![prov, year, region, num(y[i]), num(p.mean[i]), num(p.lower[i]), num(p.upper[i])]
        }),
    )?;
    save(
        ctx,
        Stage::Predict,
        &PredictArtifact {
            level,
            rows: y.len(),
            metrics: evaluate(y, &p.mean)?,
            interval_coverage: inside as f64 / y.len() as f64,
        },
    )
}

fn stage_diagnose(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tuned = load_tuned(ctx, prep)?;
    let d = residual_diagnostics(&tuned, &prep.train)?;
    write_csv(
        &ctx.path("fig1_qq.csv"),
        &["theoretical", "residual"],
        d.qq_points.iter().map(|(t, r)| vec![num(*t), num(*r)]),
    )?;
    write_csv(
        &ctx.path("fig1_residual_vs_fitted.csv"),
        &["province", "year", "fitted", "residual"],
        d.residual_vs_fitted.iter().enumerate().map(|(i, (f, r))| {
            let (prov, year, _) = row_ids(prep, &prep.train_rows, i);
            vec![prov, year, num(*f), num(*r)]
        }),
    )?;
    let sse: f64 = d.residuals.iter().map(|r| r * r).sum();
    save(
        ctx,
        Stage::Diagnose,
        &DiagnoseArtifact {
            rows: d.residuals.len(),
            rmse: (sse / d.residuals.len() as f64).sqrt(),
            shapiro: d.shapiro,
            shapiro_error: d.shapiro_error,
            spread_ratio: d.spread_ratio,
            heteroskedastic: d.heteroskedastic,
        },
    )
}

fn stage_pdp(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tuned = load_tuned(ctx, prep)?;
    let features = ctx.options.pdp_features.clone().unwrap_or_else(|| ctx.cfg.interpret.pdp_features.clone());
    let mut curves = Vec::new();
    for f in &features {
        let r = pdp(&tuned, f, &ctx.cfg.interpret.pdp_quantiles, ctx.cfg.model.level)?;
        write_csv(
            &ctx.path(&format!("fig4_pdp_{f}.csv")),
            &["value", "mean", "lower", "upper"],
            (0..r.grid.len()).map(|i| vec![num(r.grid[i]), num(r.mean_curve[i]), num(r.lower[i]), num(r.upper[i])]),
        )?;
        let best = (0..r.grid.len())
            .max_by(|&a, &b| r.mean_curve[a].total_cmp(&r.mean_curve[b]).then(b.cmp(&a)))
            .expect("non-empty grid");
        curves.push(PdpCurve { argmax: r.grid[best], curve: r });
    }
    save(ctx, Stage::Pdp, &PdpArtifact { curves })
}

fn stage_shap(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tuned = load_tuned(ctx, prep)?;
    let spec = &ctx.cfg.interpret.shap;
    let rng = ctx.rng(STREAM_SHAP);
    let n = prep.train.n_rows();
    let mut targets: Vec<usize> = rng.substream(0).permutation(n);
    targets.truncate(spec.max_rows.min(n));
    targets.sort_unstable();
    let background = background_rows(&prep.train.x, spec.background, &mut rng.substream(1));
    let values = bartlab_core::parallel::try_map_units(targets.len(), |t| {
        let mut r = rng.substream(2 + t as u64);
        shap_mc(&tuned, prep.train.x.row(targets[t]), &background, spec.samples, &mut r)
    })?;
    let names = &prep.train.names;
    let mut long = Vec::new();
    for (t, s) in targets.iter().zip(&values) {
        let (prov, year, region) = row_ids(prep, &prep.train_rows, *t);
        for (j, name) in names.iter().enumerate() {
            long.push(vec![
                prov.clone(),
                year.clone(),
                region.clone(),
                name.clone(),
                num(prep.train.x.row(*t)[j]),
                num(s.phi[j]),
            ]);
        }
    }
    write_csv(&ctx.path("fig5_shap.csv"), &["province", "year", "region", "feature", "value", "shap"], long)?;
    if let Some((a, b)) = &spec.interaction {
        let ia = tuned.feature_index(a)?;
        let ib = tuned.feature_index(b)?;
        let (sa, sb) = (format!("shap_{a}"), format!("shap_{b}"));
        write_csv(
            &ctx.path("fig6_shap_interaction.csv"),
            &["province", "year", "region", a, b, &sa, &sb],
            targets.iter().zip(&values).map(|(t, s)| {
                let (prov, year, region) = row_ids(prep, &prep.train_rows, *t);
                let row = prep.train.x.row(*t);
                vec![prov, year, region, num(row[ia]), num(row[ib]), num(s.phi[ia]), num(s.phi[ib])]
            }),
        )?;
    }
    let k = values.len() as f64;
    let mean_abs = names
        .iter()
        .enumerate()
        .map(|(j, name)| NamedValue {
            name: name.clone(),
            value: values.iter().map(|s| s.phi[j].abs()).sum::<f64>() / k,
        })
        .collect();
    save(
        ctx,
        Stage::Shap,
        &ShapArtifact {
            rows: values.len(),
            samples: spec.samples,
            background: background.n_rows(),
            baseline: values.first().map_or(0.0, |s| s.baseline),
            mean_abs,
            max_additivity_gap: values.iter().map(|s| s.additivity_gap().abs()).fold(0.0, f64::max),
        },
    )
}

fn stage_importance(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tune: TuneArtifact = load(ctx, Stage::Tune)?;
    let rep: ImportanceReport =
        inclusion_proportions(&prep.train, &tune.best, ctx.cfg.interpret.builds, &ctx.rng(STREAM_IMPORTANCE))?;
    write_csv(
        &ctx.path("fig2_inclusion.csv"),
        &["rank", "feature", "mean", "lower", "upper"],
        rep.ranked().iter().enumerate().map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.name.clone(),
                num(r.proportion.mean),
                num(r.proportion.lower),
                num(r.proportion.upper),
            ]
        }),
    )?;
    save(ctx, Stage::Importance, &rep)
}

fn stage_interactions(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tune: TuneArtifact = load(ctx, Stage::Tune)?;
    let it = &ctx.cfg.interpret;
    let rep: InteractionReport = interaction_counts(
        &prep.train,
        &tune.best,
        it.builds,
        it.top_interactions,
        &ctx.rng(STREAM_INTERACTIONS),
    )?;
    write_csv(
        &ctx.path("fig3_interactions.csv"),
        &["rank", "a", "b", "mean", "lower", "upper"],
        rep.top.iter().enumerate().map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.a.clone(),
                r.b.clone(),
                num(r.count.mean),
                num(r.count.lower),
                num(r.count.upper),
            ]
        }),
    )?;
    save(ctx, Stage::Interactions, &rep)
}

fn stage_permtest(ctx: &Context, prep: &Prepared) -> Result<()> {
    let tune: TuneArtifact = load(ctx, Stage::Tune)?;
    let it = &ctx.cfg.interpret;
    let mut modes = vec![PermutationMode::Omnibus];
    modes.extend(it.permtest_covariates.iter().cloned().map(PermutationMode::Covariate));
    let rng = ctx.rng(STREAM_PERMTEST);
    let mut results = Vec::with_capacity(modes.len());
    for (i, mode) in modes.iter().enumerate() {
        results.push(permutation_test(&prep.train, &tune.best, mode, it.replicates, &rng.substream(i as u64))?);
    }
    write_csv(
        &ctx.path("permtest.csv"),
        &["mode", "feature", "observed", "p_value"],
        results.iter().map(|r| match &r.mode {
            PermutationMode::Omnibus => vec!["omnibus".into(), String::new(), num(r.observed), num(r.p_value)],
            PermutationMode::Covariate(f) => vec!["covariate".into(), f.clone(), num(r.observed), num(r.p_value)],
        }),
    )?;
    save(
        ctx,
        Stage::Permtest,
        &PermtestArtifact {
            replicates: it.replicates,
            hyper: tune.best,
            results,
        },
    )
}

/// Rebuild the training-side artifacts from a copy holding only
/// training-window rows and compare with what the run used.
pub fn leakage_check(ctx: &Context) -> Result<LeakageCheck> {
    let raw = load_panel(&ctx.cfg)?;
    let keep: Vec<usize> = (0..raw.n_rows())
        .filter(|&i| raw.year[i] <= ctx.cfg.split.train_year_max)
        .collect();
    let filtered = raw.select_rows(&keep);
    let all: Vec<usize> = (0..filtered.n_rows()).collect();
    let p = screen(index_rows(&filtered, &ctx.cfg, all, Vec::new())?, &ctx.cfg)?;

    let indices: IndicesArtifact = load(ctx, Stage::Indices)?;
    let scr: ScreenArtifact = load(ctx, Stage::Screen)?;
    let fit: FitArtifact = load(ctx, Stage::Fit)?;
    let cv: CvArtifact = load(ctx, Stage::Cv)?;
    let tune: TuneArtifact = load(ctx, Stage::Tune)?;
    let digest = dataset_digest(&p.train);
    let index_weights = p.indices.gfi == indices.gfi && p.indices.cpri == indices.cpri;
    let screen_ok = p.screen == scr;
    let training_rows = [&fit.train_digest, &cv.train_digest, &tune.train_digest]
        .iter()
        .all(|d| **d == digest);
    Ok(LeakageCheck {
        ok: index_weights && screen_ok && training_rows,
        index_weights,
        screen: screen_ok,
        training_rows,
        filtered_train_digest: digest,
    })
}

fn config_digest(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.paths.input = PathBuf::new();
    c.paths.output = PathBuf::new();
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

fn stage_report(ctx: &Context) -> Result<()> {
    let mut stages = BTreeMap::new();
    for s in Stage::ALL.iter().filter(|s| **s != Stage::Report) {
        let v: serde_json::Value = load(ctx, *s)?;
        stages.insert(s.name().to_string(), v);
    }
    let leakage = leakage_check(ctx)?;
    let input = fs::read(&ctx.cfg.paths.input).map_err(|e| PipelineError::io(&ctx.cfg.paths.input, e))?;
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        seed: ctx.cfg.seed,
        input_sha256: sha256_hex(&input),
        config_sha256: config_digest(&ctx.cfg)?,
        stages,
        manifest: manifest(&ctx.out)?,
        leakage: leakage.clone(),
    };
    write_json(&ctx.path(REPORT_FILE), &report)?;
    if !leakage.ok {
        return Err(PipelineError::Leakage(format!("{leakage:?}")));
    }
    Ok(())
}

fn execute(ctx: &Context, stage: Stage) -> Result<()> {
    if stage == Stage::Report {
        return stage_report(ctx);
    }
    let prep = prepare(&ctx.cfg)?;
    match stage {
        Stage::Indices => stage_indices(ctx, &prep),
        Stage::Screen => stage_screen(ctx, &prep),
        Stage::Fit => stage_fit(ctx, &prep),
        Stage::Cv => stage_cv(ctx, &prep),
        Stage::Tune => stage_tune(ctx, &prep),
        Stage::Predict => stage_predict(ctx, &prep),
        Stage::Diagnose => stage_diagnose(ctx, &prep),
        Stage::Pdp => stage_pdp(ctx, &prep),
        Stage::Shap => stage_shap(ctx, &prep),
        Stage::Importance => stage_importance(ctx, &prep),
        Stage::Interactions => stage_interactions(ctx, &prep),
        Stage::Permtest => stage_permtest(ctx, &prep),
        Stage::Report => unreachable!(),
    }
}

fn log_line(out: &Path, line: &str) -> Result<()> {
    let path = out.join(LOG_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| PipelineError::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| PipelineError::io(&path, e))
}

/// Run `stages` in order under the output lock. While a stage runs the
/// output directory carries an `INCOMPLETE` marker; on failure the marker
/// stays and names the stage.
pub fn run_stages(ctx: &Context, stages: &[Stage]) -> Result<()> {
    let _lock = OutputLock::acquire(&ctx.out)?;
    let marker = ctx.path(INCOMPLETE_FILE);
    for &stage in stages {
        write_text(&marker, &format!("stage {} running\n", stage.name()))?;
        let start = Instant::now();
        let outcome = execute(ctx, stage);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => log_line(&ctx.out, &format!("{} ok {secs:.3}s", stage.name()))?,
            Err(e) => {
                let _ = log_line(&ctx.out, &format!("{} failed {secs:.3}s: {e}", stage.name()));
                let _ = write_text(&marker, &format!("stage {} failed: {e}\n", stage.name()));
                return Err(PipelineError::Stage {
                    stage: stage.name(),
                    source: Box::new(e),
                });
            }
        }
    }
    fs::remove_file(&marker).map_err(|e| PipelineError::io(&marker, e))
}

pub fn run_all(ctx: &Context) -> Result<()> {
    run_stages(ctx, &Stage::ALL)
}
