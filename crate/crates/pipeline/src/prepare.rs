//! Ingest, index construction, log screen, GVIF screen and the year split.
//!
//! Every statistic that shapes the features (min-max ranges, entropy weights,
//! skewness, GVIF) is computed on training-window rows only and then applied
//! to all rows.

use bartlab_core::collinearity::{drop_flagged, gvif_report, PredictorGroup, VifReport};
use bartlab_core::index::{apply_log_transform, compose_index, compute_cei, entropy_weights, screen_skewness, ScreenReport};
use bartlab_core::model::Dataset;
use bartlab_core::panel::{PanelDataset, Region};
use bartlab_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, VifAction};
use crate::error::{PipelineError, Result};
use crate::ingest::ingest;

pub const RESPONSE: &str = "CEI";
pub const GFI: &str = "GFI";
pub const CPRI: &str = "CPRI";
pub const REGION_GROUP: &str = "Region";

pub fn region_column(r: Region) -> String {
    format!("Region_{}", r.as_str())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexWeights {
    pub columns: Vec<String>,
    pub weights: Vec<f64>,
    /// Training-window min-max ranges used to standardize each column.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicesArtifact {
    pub train_rows: usize,
    pub test_rows: usize,
    pub gfi: IndexWeights,
    pub cpri: IndexWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenArtifact {
    pub transform: ScreenReport,
    pub vif_action: VifAction,
    pub vif_rounds: Vec<VifReport>,
    pub dropped: Vec<String>,
    pub features: Vec<String>,
}

/// Panel carrying the response and both indices.
pub struct Indexed {
    pub panel: PanelDataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub artifact: IndicesArtifact,
}

pub struct Prepared {
    pub panel: PanelDataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub indices: IndicesArtifact,
    pub screen: ScreenArtifact,
    pub train: Dataset,
    pub test: Dataset,
}

fn min_max(train: &[f64]) -> (f64, f64) {
    train
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Min-max standardize `columns` with ranges from `train_rows`.
fn standardized(panel: &PanelDataset, columns: &[String], train_rows: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::with_capacity(columns.len());
    let (mut mins, mut maxs) = (Vec::new(), Vec::new());
    for name in columns {
        let col = panel.require(name)?;
        let train: Vec<f64> = train_rows.iter().map(|&i| col[i]).collect();
        let (lo, hi) = min_max(&train);
        let span = hi - lo;
        out.push(col.iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect());
        mins.push(lo);
        maxs.push(hi);
    }
    Ok((out, mins, maxs))
}

fn split_rows(panel: &PanelDataset, cfg: &PipelineConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let train: Vec<usize> = (0..panel.n_rows()).filter(|&i| panel.year[i] <= cfg.split.train_year_max).collect();
    let test: Vec<usize> = (0..panel.n_rows()).filter(|&i| cfg.split.test_years.contains(&panel.year[i])).collect();
    if train.is_empty() {
        return Err(PipelineError::Config(format!(
            "no rows at or before train_year_max = {}",
            cfg.split.train_year_max
        )));
    }
    if test.is_empty() {
        return Err(PipelineError::Config(format!("no rows in test years {:?}", cfg.split.test_years)));
    }
    Ok((train, test))
}

pub fn load_panel(cfg: &PipelineConfig) -> Result<PanelDataset> {
    ingest(&cfg.paths.input, &cfg.required_columns())
}

/// Response, GFI (entropy weights) and CPRI (configured weights).
pub fn build_indices(raw: &PanelDataset, cfg: &PipelineConfig) -> Result<Indexed> {
    let (train_rows, test_rows) = split_rows(raw, cfg)?;
    index_rows(raw, cfg, train_rows, test_rows)
}

/// As [`build_indices`] with an explicit split.
pub fn index_rows(raw: &PanelDataset, cfg: &PipelineConfig, train_rows: Vec<usize>, test_rows: Vec<usize>) -> Result<Indexed> {
    let mut panel = raw.clone();
    let co2 = raw.require(&cfg.indices.co2_column)?;
    let gdp = raw.require(&cfg.indices.gdp_column)?;
    let mut cei = Vec::with_capacity(raw.n_rows());
    for i in 0..raw.n_rows() {
        cei.push(compute_cei(co2[i], gdp[i]).map_err(|e| PipelineError::Config(format!("{}: {e}", raw.row_label(i))))?);
    }
    panel.set_column(RESPONSE, cei)?;

    let gfi_cols = &cfg.indices.gfi_columns;
    let (gfi_std, gmin, gmax) = standardized(raw, gfi_cols, &train_rows)?;
    let train_std: Vec<Vec<f64>> = gfi_std.iter().map(|c| train_rows.iter().map(|&i| c[i]).collect()).collect();
    let gfi_w = entropy_weights(&train_std)?;
    panel.set_column(GFI, compose_index(GFI, &gfi_std, &gfi_w)?.values)?;

    let cpri_cols = &cfg.indices.cpri_columns;
    let (cpri_std, cmin, cmax) = standardized(raw, cpri_cols, &train_rows)?;
    let cpri_w = cfg.cpri_weights();
    panel.set_column(CPRI, compose_index(CPRI, &cpri_std, &cpri_w)?.values)?;

    Ok(Indexed {
        artifact: IndicesArtifact {
            train_rows: train_rows.len(),
            test_rows: test_rows.len(),
            gfi: IndexWeights { columns: gfi_cols.clone(), weights: gfi_w, min: gmin, max: gmax },
            cpri: IndexWeights { columns: cpri_cols.clone(), weights: cpri_w, min: cmin, max: cmax },
        },
        panel,
        train_rows,
        test_rows,
    })
}

fn vif_groups(panel: &PanelDataset, numeric: &[String], rows: &[usize]) -> Result<Vec<PredictorGroup>> {
    let mut groups = Vec::with_capacity(numeric.len() + 1);
    for name in numeric {
        let col = panel.require(name)?;
        groups.push(PredictorGroup::numeric(name, rows.iter().map(|&i| col[i]).collect()));
    }
    // treatment contrasts against the first level present
    let present: Vec<Region> = Region::ALL
        .into_iter()
        .filter(|r| rows.iter().any(|&i| panel.region[i] == *r))
        .collect();
    if present.len() > 1 {
        let columns = present[1..]
            .iter()
            .map(|r| rows.iter().map(|&i| if panel.region[i] == *r { 1.0 } else { 0.0 }).collect())
            .collect();
        groups.push(PredictorGroup { name: REGION_GROUP.into(), columns });
    }
    Ok(groups)
}

fn dataset(panel: &PanelDataset, features: &[String], rows: &[usize]) -> Result<Dataset> {
    let cols: Vec<&[f64]> = features.iter().map(|f| panel.require(f)).collect::<bartlab_core::Result<_>>()?;
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|c| c[i]).collect()).collect();
    let y_col = panel.require(RESPONSE)?;
    let y = rows.iter().map(|&i| y_col[i]).collect();
    let x = if rows.is_empty() {
        Matrix::new(0, features.len(), Vec::new())?
    } else {
        Matrix::from_rows(&x)?
    };
    Ok(Dataset::new(features.to_vec(), x, y)?)
}

/// Log screen, GVIF screen and model matrices.
pub fn screen(indexed: Indexed, cfg: &PipelineConfig) -> Result<Prepared> {
    let Indexed { panel, train_rows, test_rows, artifact } = indexed;
    let candidates = cfg.transform.candidates.clone().unwrap_or_else(|| cfg.controls.clone());
    let train_panel = panel.select_rows(&train_rows);
    let transform = screen_skewness(&train_panel, &candidates, cfg.transform.threshold)?;
    let mut panel = apply_log_transform(&panel, &transform)?;

    let mut numeric = vec![GFI.to_string(), CPRI.to_string()];
    numeric.extend(cfg.controls.iter().cloned());
    let groups = vif_groups(&panel, &numeric, &train_rows)?;
    let (vif_rounds, dropped): (Vec<VifReport>, Vec<String>) = match cfg.vif.action {
        VifAction::Drop => {
            let out = drop_flagged(&groups, cfg.vif.thresholds, &cfg.vif.protect)?;
            (out.rounds, out.dropped)
        }
        VifAction::Warn => (vec![gvif_report(&groups, cfg.vif.thresholds)?], Vec::new()),
    };

    let mut features: Vec<String> = numeric.into_iter().filter(|n| !dropped.contains(n)).collect();
    if !dropped.iter().any(|d| d == REGION_GROUP) {
        for r in Region::ALL {
            let name = region_column(r);
            let col = panel.region.iter().map(|&x| if x == r { 1.0 } else { 0.0 }).collect();
            panel.set_column(&name, col)?;
            features.push(name);
        }
    }
    let train = dataset(&panel, &features, &train_rows)?;
    let test = dataset(&panel, &features, &test_rows)?;
    Ok(Prepared {
        screen: ScreenArtifact {
            transform,
            vif_action: cfg.vif.action,
            vif_rounds,
            dropped,
            features,
        },
        panel,
        train_rows,
        test_rows,
        indices: artifact,
        train,
        test,
    })
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    screen(build_indices(&load_panel(cfg)?, cfg)?, cfg)
}
