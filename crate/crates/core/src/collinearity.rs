//! Least squares and generalized variance-inflation screening.
//!
//! GVIF for a group of columns `j` is `det(R_jj) det(R_-j) / det(R)` on the
//! predictor correlation matrix `R` (intercept excluded). The adjusted
//! root `GVIF^(1/(2 df))` puts groups of different width on one scale.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest acceptable condition number of the predictor correlation matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `1 - SSE/SST` with a centered SST; `None` for a constant response.
    pub r_squared: Option<f64>,
}

/// Least squares via Householder QR. `columns` are the design columns,
/// `names` label them for rank-deficiency diagnostics.
pub fn ols_fit(columns: &[Vec<f64>], names: &[String], y: &[f64]) -> Result<OlsFit> {
    let p = columns.len();
    let n = y.len();
    if p == 0 {
        return Err(Error::EmptyInput("design matrix has no columns"));
    }
    if names.len() != p {
        return Err(Error::Shape(format!("{} names for {p} columns", names.len())));
    }
    if let Some(j) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::Shape(format!("column `{}` length != response length {n}", names[j])));
    }
    if n <= p {
        return Err(Error::SampleSize { n, min: p + 1, max: usize::MAX });
    }
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..p)
        .filter(|&j| {
            let norm = x.column(j).norm();
            r[(j, j)].abs() <= 1e-10 * norm.max(f64::MIN_POSITIVE)
        })
        .map(|j| names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::SingularDesign { columns: dependent });
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign { columns: names.to_vec() })?;
    let fitted = &x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let r_squared = (sst > 0.0).then(|| 1.0 - sse / sst);
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        residuals,
        r_squared,
    })
}

/// A named predictor occupying one or more design columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorGroup {
    pub name: String,
    pub columns: Vec<Vec<f64>>,
}

impl PredictorGroup {
    pub fn numeric(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            columns: vec![values],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VifThresholds {
    /// (moderate, severe) cut-offs on GVIF.
    pub gvif: (f64, f64),
    /// (moderate, severe) cut-offs on the adjusted root.
    pub agsif: (f64, f64),
}

impl Default for VifThresholds {
    fn default() -> Self {
        Self {
            gvif: (5.0, 10.0),
            agsif: (2.2, 3.2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VifFlag {
    None,
    Moderate,
    Severe,
}

impl VifThresholds {
    /// A level is reached only when both GVIF and its adjusted root cross it,
    /// so wide groups are judged on the df-adjusted scale as well.
    pub fn classify(&self, gvif: f64, agsif: f64) -> VifFlag {
        if gvif >= self.gvif.1 && agsif >= self.agsif.1 {
            VifFlag::Severe
        } else if gvif >= self.gvif.0 && agsif >= self.agsif.0 {
            VifFlag::Moderate
        } else {
            VifFlag::None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VifRow {
    pub name: String,
    pub df: usize,
    pub gvif: f64,
    pub agsif: f64,
    pub flag: VifFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    pub thresholds: VifThresholds,
    pub condition_number: f64,
    pub rows: Vec<VifRow>,
}

impl VifReport {
    pub fn flagged(&self) -> impl Iterator<Item = &VifRow> {
        self.rows.iter().filter(|r| r.flag != VifFlag::None)
    }
}

fn correlation_matrix(cols: &[&Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = cols[0].len();
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|v| v - m).collect::<Vec<f64>>()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::CollinearityDegenerate {
            condition: f64::INFINITY,
        });
    }
    let k = cols.len();
    Ok(DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / (norms[a] * norms[b])
        }
    }))
}

fn submatrix(r: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| r[(idx[a], idx[b])])
}

fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().full_piv_lu().determinant()
    }
}

pub fn gvif_report(groups: &[PredictorGroup], thresholds: VifThresholds) -> Result<VifReport> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "GVIF needs at least 2 predictor groups, got {}",
            groups.len()
        )));
    }
    let mut owner = Vec::new();
    let mut cols = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        if group.columns.is_empty() {
            return Err(Error::Shape(format!("group `{}` has no columns", group.name)));
        }
        for c in &group.columns {
            owner.push(g);
            cols.push(c);
        }
    }
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("predictor columns differ in length".into()));
    }
    let r = correlation_matrix(&cols)?;
    let eig = SymmetricEigen::new(r.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::CollinearityDegenerate { condition });
    }
    let det_all = det(&r);
    let rows = groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let inside: Vec<usize> = (0..cols.len()).filter(|&c| owner[c] == g).collect();
            let outside: Vec<usize> = (0..cols.len()).filter(|&c| owner[c] != g).collect();
            let gvif = det(&submatrix(&r, &inside)) * det(&submatrix(&r, &outside)) / det_all;
            let df = inside.len();
            let agsif = gvif.powf(1.0 / (2.0 * df as f64));
            VifRow {
                name: group.name.clone(),
                df,
                gvif,
                agsif,
                flag: thresholds.classify(gvif, agsif),
            }
        })
        .collect();
    Ok(VifReport {
        thresholds,
        condition_number: condition,
        rows,
    })
}

/// Outcome of repeated screening with removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropOutcome {
    /// Reports in screening order; the last one has no droppable flag left.
    pub rounds: Vec<VifReport>,
    /// Groups removed, in order.
    pub dropped: Vec<String>,
}

/// Screen, drop the flagged group with the largest GVIF (never one listed in
/// `protect`), and repeat until nothing droppable is flagged.
pub fn drop_flagged(groups: &[PredictorGroup], thresholds: VifThresholds, protect: &[String]) -> Result<DropOutcome> {
    let mut live: Vec<PredictorGroup> = groups.to_vec();
    let mut rounds = Vec::new();
    let mut dropped = Vec::new();
    loop {
        let report = gvif_report(&live, thresholds)?;
        let victim = report
            .flagged()
            .filter(|r| !protect.contains(&r.name))
            .max_by(|a, b| a.gvif.total_cmp(&b.gvif))
            .map(|r| r.name.clone());
        rounds.push(report);
        match victim {
            Some(name) if live.len() > 2 => {
                live.retain(|g| g.name != name);
                dropped.push(name);
            }
            _ => break,
        }
    }
    Ok(DropOutcome { rounds, dropped })
}
