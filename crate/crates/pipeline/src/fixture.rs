//! Synthetic province-year panel with a known generator.
//!
//! 30 units over 2000..=2022. The log intensity carries an inverted U in the
//! latent green-finance level, a Friedman-style block in the controls and a
//! null climate-risk effect. Output and population are log-normal (skewed),
//! and output tracks population and energy use closely enough to trip the
//! GVIF screen.

use std::fmt::Write as _;
use std::path::Path;

use bartlab_core::panel::Region;
use bartlab_core::RandomStream;

use crate::error::{PipelineError, Result};

pub const UNITS: usize = 30;
pub const FIRST_YEAR: i32 = 2000;
pub const LAST_YEAR: i32 = 2022;

pub const GFI_COLUMNS: [&str; 7] = [
    "green_bond",
    "green_fund",
    "green_credit",
    "green_insurance",
    "green_equity",
    "green_support",
    "green_investment",
];
pub const CPRI_COLUMNS: [&str; 4] = ["heat_days", "cold_days", "rain_days", "drought_days"];
pub const CONTROLS: [&str; 9] = [
    "TEC",
    "GDP",
    "FDI",
    "industry",
    "urbanize",
    "population",
    "RDI",
    "govern",
    "environment",
];

fn region_of(unit: usize) -> Region {
    match unit {
        0..=10 => Region::Eastern,
        11..=18 => Region::Central,
        _ => Region::Western,
    }
}

/// Render the panel as CSV text.
pub fn panel_csv(seed: u64) -> String {
    let mut rng = RandomStream::new(seed, 0);
    let mut out = String::new();
    let mut header = vec!["province", "year", "region", "CO2"];
    header.extend(CONTROLS);
    header.extend(GFI_COLUMNS);
    header.extend(CPRI_COLUMNS);
    out.push_str(&header.join(","));
    out.push('\n');

    for unit in 0..UNITS {
        let region = region_of(unit);
        let (wealth, pace) = match region {
            Region::Eastern => (1.4, 0.045),
            Region::Central => (1.0, 0.036),
            Region::Western => (0.8, 0.030),
        };
        let pop0 = (8.0 + 0.8 * rng.standard_normal()).exp();
        let pc0 = wealth * (0.9 + 0.2 * rng.uniform());
        let gfi_effect = 0.1 * rng.standard_normal();
        let ind0 = 0.35 + 0.1 * rng.uniform();
        let tec_scale = (0.3 * rng.standard_normal()).exp();
        let env_scale = (1.0 * rng.standard_normal()).exp();
        let fdi0 = 0.01 + 0.03 * rng.uniform();
        let rdi0 = 0.5 + 1.5 * rng.uniform();
        let gov0 = 0.12 + 0.1 * rng.uniform();
        let urb0 = 0.25 + 0.2 * rng.uniform();
        for t in 0..=(LAST_YEAR - FIRST_YEAR) as usize {
            let tf = t as f64;
            let population = pop0 * (1.0 + 0.006 * tf) * (0.02 * rng.standard_normal()).exp();
            let gdp = population * pc0 * (0.08 * tf + 0.03 * rng.standard_normal()).exp();
            let tec = gdp.powf(0.7) * tec_scale * (0.3 * rng.standard_normal()).exp();
            let industry = (ind0 - 0.004 * tf + 0.02 * rng.standard_normal()).clamp(0.1, 0.7);
            let urbanize = (urb0 + 0.018 * tf + 0.02 * rng.standard_normal()).clamp(0.1, 0.95);
            let fdi = (fdi0 + 0.005 * rng.standard_normal()).max(0.001);
            let rdi = (rdi0 + 0.04 * tf + 0.1 * rng.standard_normal()).max(0.05);
            let govern = (gov0 + 0.02 * rng.standard_normal()).max(0.02);
            let environment = env_scale * (0.05 * tf + 0.3 * rng.standard_normal()).exp();
            let g = (0.02 + pace * tf + gfi_effect + 0.03 * rng.standard_normal()).clamp(0.0, 1.0);

            let u4 = (tec / gdp).ln();
            let friedman = 10.0 * (std::f64::consts::PI * urbanize * g).sin()
                + 20.0 * (industry - 0.4).powi(2)
                + 4.0 * (u4 + 2.5)
                + 5.0 * rdi / 3.0;
            let cei = -1.0 + 0.05 * friedman + (4.0 * g - 8.0 * g * g) + 0.05 * rng.standard_normal();
            let co2 = gdp * cei.exp();

            let mut row = vec![
                format!("P{:02}", unit + 1),
                (FIRST_YEAR + t as i32).to_string(),
                region.as_str().to_string(),
                co2.to_string(),
            ];
            for v in [tec, gdp, fdi, industry, urbanize, population, rdi, govern, environment] {
                row.push(v.to_string());
            }
            for k in 0..GFI_COLUMNS.len() {
                let scale = 1.0 + k as f64;
                let v = (scale * (0.05 + g + 0.04 * rng.standard_normal())).max(0.001);
                row.push(v.to_string());
            }
            for _ in CPRI_COLUMNS {
                row.push(((30.0 * rng.uniform()).round()).to_string());
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    out
}

pub fn write_panel(path: &Path, seed: u64) -> Result<()> {
    std::fs::write(path, panel_csv(seed)).map_err(|e| PipelineError::io(path, e))
}
