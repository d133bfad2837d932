//! JSON run configuration. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use bartlab_core::bart::Hyperparams;
use bartlab_core::collinearity::VifThresholds;
use bartlab_core::interpret::MIN_REPLICATES;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub split: Split,
    pub indices: IndexSpec,
    /// Raw control columns entering the model (after screening).
    pub controls: Vec<String>,
    #[serde(default)]
    pub transform: TransformSpec,
    #[serde(default)]
    pub vif: VifSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub interpret: InterpretSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train_year_max: i32,
    pub test_years: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSpec {
    #[serde(default = "default_co2")]
    pub co2_column: String,
    #[serde(default = "default_gdp")]
    pub gdp_column: String,
    pub gfi_columns: Vec<String>,
    pub cpri_columns: Vec<String>,
    /// Defaults to equal weights.
    #[serde(default)]
    pub cpri_weights: Option<Vec<f64>>,
}

fn default_co2() -> String {
    "CO2".into()
}

fn default_gdp() -> String {
    "GDP".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSpec {
    pub threshold: f64,
    /// Columns eligible for the log screen; the controls when absent.
    pub candidates: Option<Vec<String>>,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec { threshold: 2.0, candidates: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VifAction {
    Warn,
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VifSpec {
    pub thresholds: VifThresholds,
    pub action: VifAction,
    /// Groups never dropped.
    pub protect: Vec<String>,
}

impl Default for VifSpec {
    fn default() -> Self {
        VifSpec {
            thresholds: VifThresholds::default(),
            action: VifAction::Drop,
            protect: vec!["GFI".into(), "CPRI".into()],
        }
    }
}

/// One grid candidate: fields left out come from `model.hyper`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridPoint {
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<f64>,
    pub nu: Option<f64>,
    pub q: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            m: self.m.unwrap_or(base.m),
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            k: self.k.unwrap_or(base.k),
            nu: self.nu.unwrap_or(base.nu),
            q: self.q.unwrap_or(base.q),
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hyper: Hyperparams,
    /// Tuning candidates; the built-in 18-point grid when absent.
    pub grid: Option<Vec<GridPoint>>,
    pub cv_folds: usize,
    /// Credible level for intervals and bands.
    pub level: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hyper: Hyperparams::default(),
            grid: None,
            cv_folds: 5,
            level: 0.95,
        }
    }
}

impl ModelSpec {
    pub fn candidates(&self) -> Vec<Hyperparams> {
        match &self.grid {
            Some(points) => points.iter().map(|p| p.apply(&self.hyper)).collect(),
            None => bartlab_core::model::default_grid(&self.hyper),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapSpec {
    /// Training rows explained (seeded subsample when fewer than available).
    pub max_rows: usize,
    pub samples: usize,
    pub background: usize,
    /// Feature pair exported for the interaction-dependence plot.
    pub interaction: Option<(String, String)>,
}

impl Default for ShapSpec {
    fn default() -> Self {
        ShapSpec {
            max_rows: 100,
            samples: 200,
            background: 100,
            interaction: Some(("TEC".into(), "GFI".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretSpec {
    pub pdp_features: Vec<String>,
    pub pdp_quantiles: Vec<f64>,
    pub shap: ShapSpec,
    /// Repeated model builds for inclusion and interaction summaries.
    pub builds: usize,
    pub top_interactions: usize,
    pub replicates: usize,
    pub permtest_covariates: Vec<String>,
}

impl Default for InterpretSpec {
    fn default() -> Self {
        InterpretSpec {
            pdp_features: vec!["GFI".into()],
            pdp_quantiles: bartlab_core::interpret::default_pdp_quantiles(),
            shap: ShapSpec::default(),
            builds: 25,
            top_interactions: 10,
            replicates: 99,
            permtest_covariates: vec!["GFI".into(), "CPRI".into()],
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    /// Parse and validate; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.input, &mut cfg.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        if s.test_years.is_empty() {
            return Err(invalid("split.test_years is empty"));
        }
        if s.test_years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("split.test_years must be strictly increasing"));
        }
        if let Some(y) = s.test_years.iter().find(|&&y| y <= s.train_year_max) {
            return Err(invalid(format!(
                "test year {y} lies inside the training window (train_year_max = {})",
                s.train_year_max
            )));
        }
        let ix = &self.indices;
        if ix.gfi_columns.is_empty() || ix.cpri_columns.is_empty() {
            return Err(invalid("indices need at least one gfi and one cpri column"));
        }
        if let Some(w) = &ix.cpri_weights {
            if w.len() != ix.cpri_columns.len() {
                return Err(invalid(format!(
                    "{} cpri weights for {} cpri columns",
                    w.len(),
                    ix.cpri_columns.len()
                )));
            }
        }
        if self.controls.is_empty() {
            return Err(invalid("controls is empty"));
        }
        let mut names: Vec<&String> = self.controls.iter().collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("controls contain a duplicate"));
        }
        if !(self.transform.threshold.is_finite()) {
            return Err(invalid("transform.threshold must be finite"));
        }
        self.model.hyper.validate()?;
        for h in self.model.candidates() {
            h.validate()?;
        }
        if self.model.cv_folds < 2 {
            return Err(invalid("model.cv_folds must be at least 2"));
        }
        if !(self.model.level > 0.0 && self.model.level < 1.0) {
            return Err(invalid("model.level must lie in (0, 1)"));
        }
        let it = &self.interpret;
        if it.builds < 2 {
            return Err(invalid("interpret.builds must be at least 2"));
        }
        if it.replicates < MIN_REPLICATES {
            return Err(invalid(format!("interpret.replicates must be at least {MIN_REPLICATES}")));
        }
        if it.shap.samples == 0 || it.shap.max_rows == 0 || it.shap.background == 0 {
            return Err(invalid("interpret.shap sizes must be positive"));
        }
        if it.pdp_quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(invalid("interpret.pdp_quantiles must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Raw numeric columns the input CSV must provide.
    pub fn required_columns(&self) -> Vec<String> {
        let ix = &self.indices;
        let mut out: Vec<String> = vec![ix.co2_column.clone(), ix.gdp_column.clone()];
        out.extend(ix.gfi_columns.iter().cloned());
        out.extend(ix.cpri_columns.iter().cloned());
        out.extend(self.controls.iter().cloned());
        let mut seen = std::collections::BTreeSet::new();
        out.retain(|c| seen.insert(c.clone()));
        out
    }

    pub fn cpri_weights(&self) -> Vec<f64> {
        let k = self.indices.cpri_columns.len();
        self.indices
            .cpri_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / k as f64; k])
    }
}
