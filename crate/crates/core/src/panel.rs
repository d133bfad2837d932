//! Province-year panel tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Eastern,
    Central,
    Western,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Eastern, Region::Central, Region::Western];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Eastern => "Eastern",
            Region::Central => "Central",
            Region::Western => "Western",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eastern" | "east" => Ok(Region::Eastern),
            "central" => Ok(Region::Central),
            "western" | "west" => Ok(Region::Western),
            other => Err(Error::Domain(format!("unknown region `{other}`"))),
        }
    }
}

/// One province-year observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelRecord {
    pub province: String,
    pub year: i32,
    pub region: Region,
    pub values: BTreeMap<String, f64>,
}

/// Columnar panel: identifier columns plus named numeric columns of equal length.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PanelDataset {
    pub province: Vec<String>,
    pub year: Vec<i32>,
    pub region: Vec<Region>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl PanelDataset {
    /// Build from records. All records must carry the same numeric fields and
    /// `(province, year)` must be unique.
    pub fn from_records(records: Vec<PanelRecord>) -> Result<Self> {
        let names: Vec<String> = records
            .first()
            .map(|r| r.values.keys().cloned().collect())
            .unwrap_or_default();
        let mut ds = PanelDataset {
            names: names.clone(),
            columns: vec![Vec::with_capacity(records.len()); names.len()],
            ..Default::default()
        };
        let mut seen: HashMap<(String, i32), usize> = HashMap::new();
        for (i, rec) in records.into_iter().enumerate() {
            if let Some(prev) = seen.insert((rec.province.clone(), rec.year), i) {
                return Err(Error::Domain(format!(
                    "duplicate (province, year) = ({}, {}) in records {} and {}",
                    rec.province, rec.year, prev, i
                )));
            }
            if rec.values.len() != names.len() {
                return Err(Error::Schema(format!(
                    "record {i} has {} numeric fields, expected {}",
                    rec.values.len(),
                    names.len()
                )));
            }
            for (j, name) in names.iter().enumerate() {
                let v = rec.values.get(name).ok_or_else(|| {
                    Error::Schema(format!("record {i} lacks field `{name}`"))
                })?;
                ds.columns[j].push(*v);
            }
            ds.province.push(rec.province);
            ds.year.push(rec.year);
            ds.region.push(rec.region);
        }
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.year.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }

    /// Insert a new column or replace an existing one.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} values, dataset has {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        match self.names.iter().position(|n| n == name) {
            Some(j) => self.columns[j] = values,
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
            }
        }
        Ok(())
    }

    pub fn drop_column(&mut self, name: &str) -> bool {
        match self.names.iter().position(|n| n == name) {
            Some(j) => {
                self.names.remove(j);
                self.columns.remove(j);
                true
            }
            None => false,
        }
    }

    pub fn record(&self, i: usize) -> PanelRecord {
        PanelRecord {
            province: self.province[i].clone(),
            year: self.year[i],
            region: self.region[i],
            values: self
                .names
                .iter()
                .zip(&self.columns)
                .map(|(n, c)| (n.clone(), c[i]))
                .collect(),
        }
    }

    /// Rows for which `keep` returns true, in original order.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> PanelDataset {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| keep(i)).collect();
        self.select_rows(&idx)
    }

    pub fn select_rows(&self, idx: &[usize]) -> PanelDataset {
        PanelDataset {
            province: idx.iter().map(|&i| self.province[i].clone()).collect(),
            year: idx.iter().map(|&i| self.year[i]).collect(),
            region: idx.iter().map(|&i| self.region[i]).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Describe row `i` for diagnostics.
    pub fn row_label(&self, i: usize) -> String {
        format!("row {} ({}, {})", i, self.province[i], self.year[i])
    }
}
