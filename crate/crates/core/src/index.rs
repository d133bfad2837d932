//! Response and composite-index construction: carbon intensity, entropy-weighted
//! indices, weighted-average indices and the skewness-driven log screen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::stats::summary;

/// Natural log of emissions per unit of output.
pub fn compute_cei(co2: f64, gdp: f64) -> Result<f64> {
    if !(co2 > 0.0) || !(gdp > 0.0) {
        return Err(Error::Domain(format!(
            "carbon intensity needs co2 > 0 and gdp > 0, got ({co2}, {gdp})"
        )));
    }
    Ok((co2 / gdp).ln())
}

/// Entropy weights for non-negative (min-max standardized) columns.
///
/// Columns summing to zero carry no information and get weight 0, as do
/// constant columns (their entropy is exactly 1).
pub fn entropy_weights(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = columns.first() else {
        return Err(Error::EmptyInput("entropy weights need at least one column"));
    };
    let n = first.len();
    if n < 2 {
        return Err(Error::SampleSize { n, min: 2, max: usize::MAX });
    }
    let ln_n = (n as f64).ln();
    let mut divergence = Vec::with_capacity(columns.len());
    for (j, col) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Shape(format!("column {j} has {} rows, expected {n}", col.len())));
        }
        if let Some(bad) = col.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "entropy weights need finite non-negative entries; column {j} holds {bad}"
            )));
        }
        let total: f64 = col.iter().sum();
        let entropy = if total == 0.0 || col.iter().all(|&v| v == col[0]) {
            1.0
        } else {
            let h: f64 = col
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / total;
                    p * p.ln()
                })
                .sum();
            -h / ln_n
        };
        divergence.push((1.0 - entropy).max(0.0));
    }
    let total: f64 = divergence.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(divergence.into_iter().map(|d| d / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeIndex {
    pub name: String,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

/// Row-wise weighted sum of sub-indicator columns.
pub fn compose_index(name: &str, columns: &[Vec<f64>], weights: &[f64]) -> Result<CompositeIndex> {
    if columns.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} sub-indicators",
            weights.len(),
            columns.len()
        )));
    }
    if columns.is_empty() {
        return Err(Error::EmptyInput("composite index"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::ParameterDomain("index weights must be non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::ParameterDomain(format!("index weights sum to {sum}, not 1")));
    }
    let n = columns[0].len();
    if let Some(j) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::Shape(format!("sub-indicator {j} length differs from the first")));
    }
    let values = (0..n)
        .map(|i| columns.iter().zip(weights).map(|(c, w)| w * c[i]).sum())
        .collect();
    Ok(CompositeIndex {
        name: name.to_string(),
        weights: weights.to_vec(),
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub column: String,
    pub skewness: Option<f64>,
    pub transformed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub threshold: f64,
    pub entries: Vec<ScreenEntry>,
}

impl ScreenReport {
    pub fn transformed(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.transformed)
            .map(|e| e.column.as_str())
    }
}

/// Decide which candidate columns exceed the skewness threshold on `stats_rows`.
pub fn screen_skewness(stats_rows: &PanelDataset, candidates: &[String], threshold: f64) -> Result<ScreenReport> {
    let mut entries = Vec::with_capacity(candidates.len());
    for name in candidates {
        let col = stats_rows.require(name)?;
        let skewness = summary(col)?.skewness;
        entries.push(ScreenEntry {
            column: name.clone(),
            skewness,
            transformed: skewness.is_some_and(|s| s > threshold),
        });
    }
    Ok(ScreenReport { threshold, entries })
}

/// Replace every column the report marks as transformed by its natural log.
pub fn apply_log_transform(dataset: &PanelDataset, report: &ScreenReport) -> Result<PanelDataset> {
    let mut out = dataset.clone();
    for name in report.transformed() {
        let col = dataset.require(name)?;
        let mut logged = Vec::with_capacity(col.len());
        for (i, &v) in col.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::Domain(format!(
                    "cannot log-transform `{name}` at {}: value {v} is not positive",
                    dataset.row_label(i)
                )));
            }
            logged.push(v.ln());
        }
        out.set_column(name, logged)?;
    }
    Ok(out)
}

/// Screen and transform using the same rows for statistics and output.
pub fn log_transform_screen(
    dataset: &PanelDataset,
    candidates: &[String],
    threshold: f64,
) -> Result<(PanelDataset, ScreenReport)> {
    let report = screen_skewness(dataset, candidates, threshold)?;
    let out = apply_log_transform(dataset, &report)?;
    Ok((out, report))
}
