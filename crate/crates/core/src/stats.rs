//! Summary statistics, standardization, quantiles and the Shapiro-Wilk test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub sd: f64,
    /// Adjusted Fisher-Pearson skewness; `None` when n < 3 or the sample is constant.
    pub skewness: Option<f64>,
    pub min: f64,
    pub max: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the n - 1 denominator.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn summary(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("summary"));
    }
    let n = values.len();
    let nf = n as f64;
    let m = mean(values);
    let (mut m2, mut m3) = (0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
        min = min.min(v);
        max = max.max(v);
    }
    let sd = if n > 1 { (m2 / (nf - 1.0)).sqrt() } else { 0.0 };
    let skewness = if n >= 3 && m2 > 0.0 {
        let (m2, m3) = (m2 / nf, m3 / nf);
        let g1 = m3 / m2.powf(1.5);
        Some(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
    } else {
        None
    };
    Ok(SummaryStats {
        n,
        mean: m,
        sd,
        skewness,
        min,
        max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    Zscore,
    Minmax,
}

/// Per-column location/scale learned from one table and applicable to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mode: StandardizeMode,
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns with no spread; they map to all zeros.
    pub constant: Vec<bool>,
}

impl ColumnScaler {
    pub fn fit(columns: &[Vec<f64>], mode: StandardizeMode) -> Result<Self> {
        let mut location = Vec::with_capacity(columns.len());
        let mut scale = Vec::with_capacity(columns.len());
        let mut constant = Vec::with_capacity(columns.len());
        for col in columns {
            if col.is_empty() {
                return Err(Error::EmptyInput("standardize column"));
            }
            let (loc, sc) = match mode {
                StandardizeMode::Zscore => (mean(col), variance(col).sqrt()),
                StandardizeMode::Minmax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
            };
            let is_const = col.iter().all(|&v| v == col[0]) || !(sc > 0.0);
            location.push(loc);
            scale.push(if is_const { 1.0 } else { sc });
            constant.push(is_const);
        }
        Ok(Self {
            mode,
            location,
            scale,
            constant,
        })
    }

    pub fn apply(&self, columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if columns.len() != self.location.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} columns, applied to {}",
                self.location.len(),
                columns.len()
            )));
        }
        Ok(columns
            .iter()
            .enumerate()
            .map(|(j, col)| {
                if self.constant[j] {
                    vec![0.0; col.len()]
                } else {
                    col.iter()
                        .map(|v| (v - self.location[j]) / self.scale[j])
                        .collect()
                }
            })
            .collect())
    }
}

/// Standardized columns plus a per-column constant flag.
pub fn standardize(columns: &[Vec<f64>], mode: StandardizeMode) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let scaler = ColumnScaler::fit(columns, mode)?;
    let out = scaler.apply(columns)?;
    Ok((out, scaler.constant))
}

/// Type-7 (linear interpolation) quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::ParameterDomain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

/// Type-7 quantile of an already ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p: f64,
}

fn poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Shapiro-Wilk normality test (Royston's AS R94 approximation).
pub fn shapiro_wilk(values: &[f64]) -> Result<ShapiroWilk> {
    const SMALL: f64 = 1e-19;
    const G: [f64; 2] = [-2.273, 0.459];
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::SampleSize { n, min: 3, max: 5000 });
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range >= SMALL) {
        return Err(Error::DegenerateSample("all values identical"));
    }

    let nf = n as f64;
    let half = n / 2;
    // Coefficients for the upper half of the order statistics, largest first.
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=half)
            .map(|i| normal_quantile((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / nf.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let first;
        let fac;
        if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            first = 2;
        } else {
            fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            first = 1;
        }
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // Full antisymmetric coefficient vector aligned with ascending x.
    let coef: Vec<f64> = (0..n)
        .map(|i| {
            let j = n - 1 - i;
            if i < j {
                -a[i]
            } else if i > j {
                a[j]
            } else {
                0.0
            }
        })
        .collect();

    // W as the squared correlation between data and coefficients.
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sx = mean(&xs);
    let sa = mean(&coef);
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (ai, xi) in coef.iter().zip(&xs) {
        let asa = ai - sa;
        let xsx = xi - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    // 1 - W, computed to avoid cancellation near W = 1.
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        let p = (PI6 * (w.sqrt().asin() - STQR)).max(0.0);
        return Ok(ShapiroWilk { w, p });
    }

    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, nf);
        if y >= gamma {
            return Ok(ShapiroWilk { w, p: 1e-99 });
        }
        y = -(gamma - y).ln();
        (poly(&C3, nf), poly(&C4, nf).exp())
    } else {
        let ln_n = nf.ln();
        (poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    let p = 1.0 - normal_cdf((y - m) / s);
    Ok(ShapiroWilk { w, p })
}
