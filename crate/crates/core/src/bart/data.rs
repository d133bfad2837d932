use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Affine map between the response and its sampler scale `[-0.5, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub y_min: f64,
    pub y_range: f64,
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling {
            y_min: -0.5,
            y_range: 1.0,
        }
    }

    pub fn from_response(y: &[f64]) -> Result<Self> {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain("response must be finite".into()));
        }
        if !(hi > lo) {
            return Err(Error::ConstantResponse);
        }
        Ok(Scaling {
            y_min: lo,
            y_range: hi - lo,
        })
    }

    #[inline]
    pub fn scale(&self, y: f64) -> f64 {
        (y - self.y_min) / self.y_range - 0.5
    }

    #[inline]
    pub fn unscale(&self, s: f64) -> f64 {
        (s + 0.5) * self.y_range + self.y_min
    }
}

/// Candidate thresholds per feature plus each observation's rank among the
/// feature's distinct values. Cut `k` of a feature lies between distinct
/// values `k` and `k + 1`, so `x < threshold_k` iff `rank <= k`.
#[derive(Clone, Debug)]
pub struct CutGrid {
    thresholds: Vec<Vec<f64>>,
    ranks: Vec<u32>,
    n_features: usize,
}

impl CutGrid {
    pub fn new(x: &Matrix) -> Self {
        let (n, p) = (x.n_rows(), x.n_cols());
        let mut thresholds = Vec::with_capacity(p);
        let mut ranks = vec![0u32; n * p];
        for f in 0..p {
            let mut distinct = x.column(f);
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let cuts = distinct
                .windows(2)
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]);
                    if mid > w[0] {
                        mid
                    } else {
                        w[1]
                    }
                })
                .collect();
            for i in 0..n {
                let v = x.get(i, f);
                let r = distinct.partition_point(|d| *d < v);
                ranks[i * p + f] = r as u32;
            }
            thresholds.push(cuts);
        }
        CutGrid {
            thresholds,
            ranks,
            n_features: p,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_cuts(&self, feature: usize) -> usize {
        self.thresholds[feature].len()
    }

    pub fn threshold(&self, feature: usize, cut: u32) -> f64 {
        self.thresholds[feature][cut as usize]
    }

    #[inline]
    pub fn rank(&self, obs: usize, feature: usize) -> u32 {
        self.ranks[obs * self.n_features + feature]
    }

    #[inline]
    pub(crate) fn ranks_of(&self, obs: usize) -> &[u32] {
        &self.ranks[obs * self.n_features..(obs + 1) * self.n_features]
    }
}

/// Features, scaled response and cut grid for one sampler run.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub x: Matrix,
    pub y_scaled: Vec<f64>,
    pub scaling: Scaling,
    pub grid: CutGrid,
}

impl TrainingData {
    pub fn new(x: Matrix, y: &[f64]) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} responses",
                x.n_rows(),
                y.len()
            )));
        }
        if x.n_cols() == 0 {
            return Err(Error::Shape("no features".into()));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        let scaling = Scaling::from_response(y)?;
        Self::with_scaling(x, y, scaling)
    }

    /// Use a fixed scaling instead of deriving one from `y`.
    pub fn with_scaling(x: Matrix, y: &[f64], scaling: Scaling) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Shape("rows and responses differ in length".into()));
        }
        let grid = CutGrid::new(&x);
        Ok(TrainingData {
            y_scaled: y.iter().map(|v| scaling.scale(*v)).collect(),
            x,
            scaling,
            grid,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y_scaled.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }
}
