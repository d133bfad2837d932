//! CSV ingestion into a typed panel.
//!
//! Numbers are parsed locale-independently: a decimal comma such as `1,23`
//! is an error, never a silent 1 or 123.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use bartlab_core::panel::{PanelDataset, PanelRecord, Region};
use bartlab_core::Matrix;

use crate::error::{PipelineError, Result};

pub const PROVINCE: &str = "province";
pub const YEAR: &str = "year";
pub const REGION: &str = "region";

fn cell_error(path: &Path, row: u64, column: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Cell {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parse one numeric cell: dot decimal, finite, non-empty.
pub fn parse_number(raw: &str) -> std::result::Result<f64, String> {
    let s = raw.trim();
    if s.is_empty() {
        return Err("missing value".into());
    }
    if s.contains(',') {
        return Err(format!("cannot parse `{s}` as a number (use `.` as the decimal separator)"));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("`{s}` is not a finite number")),
        Err(_) => Err(format!("cannot parse `{s}` as a number")),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::Headers)
        .from_path(path)
        .map_err(|e| PipelineError::Ingest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Read a panel with the identifier columns plus `numeric`. Other columns are
/// ignored. Row numbers in errors are file line numbers (the header is line 1).
pub fn ingest(path: &Path, numeric: &[String]) -> Result<PanelDataset> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let locate = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| PipelineError::Ingest {
            path: path.to_path_buf(),
            message: format!("missing required column `{name}`"),
        })
    };
    let (ip, iy, ir) = (locate(PROVINCE)?, locate(YEAR)?, locate(REGION)?);
    let cols: Vec<(String, usize)> = numeric
        .iter()
        .map(|n| Ok((n.clone(), locate(n)?)))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut seen: HashMap<(String, i32), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let get = |j: usize| rec.get(j).unwrap_or("").trim();
        let province = get(ip).to_string();
        if province.is_empty() {
            return Err(cell_error(path, row, PROVINCE, "missing value"));
        }
        let year: i32 = get(iy)
            .parse()
            .map_err(|_| cell_error(path, row, YEAR, format!("`{}` is not an integer year", get(iy))))?;
        if get(ir).is_empty() {
            return Err(cell_error(path, row, REGION, "missing value"));
        }
        let region: Region = get(ir)
            .parse()
            .map_err(|e: bartlab_core::Error| cell_error(path, row, REGION, e.to_string()))?;
        if let Some(prev) = seen.insert((province.clone(), year), row) {
            return Err(PipelineError::Ingest {
                path: path.to_path_buf(),
                message: format!("duplicate (province, year) = ({province}, {year}) at rows {prev} and {row}"),
            });
        }
        let mut values = BTreeMap::new();
        for (name, j) in &cols {
            let v = parse_number(get(*j)).map_err(|m| cell_error(path, row, name, m))?;
            values.insert(name.clone(), v);
        }
        records.push(PanelRecord { province, year, region, values });
    }
    if records.is_empty() {
        return Err(PipelineError::Ingest {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(PanelDataset::from_records(records)?)
}

/// Feature table for `predict`: every column except the identifiers is numeric.
pub struct FeatureTable {
    pub names: Vec<String>,
    pub ids: Vec<(String, String)>,
    pub x: Matrix,
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let ip = headers.iter().position(|h| h == PROVINCE);
    let iy = headers.iter().position(|h| h == YEAR);
    let ir = headers.iter().position(|h| h == REGION);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|j| Some(*j) != ip && Some(*j) != iy && Some(*j) != ir)
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|&j| headers[j].to_string()).collect();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let mut r = Vec::with_capacity(feature_cols.len());
        for (&j, name) in feature_cols.iter().zip(&names) {
            r.push(parse_number(rec.get(j).unwrap_or("")).map_err(|m| cell_error(path, row, name, m))?);
        }
        let id = |k: Option<usize>| k.and_then(|k| rec.get(k)).unwrap_or("").trim().to_string();
        ids.push((id(ip), id(iy)));
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(PipelineError::Ingest {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(FeatureTable {
        x: Matrix::from_rows(&rows)?,
        names,
        ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn cols() -> Vec<String> {
        vec!["co2".into(), "gdp".into()]
    }

    #[test]
    fn three_row_fixture() {
        let f = write("province,year,region,co2,gdp,extra\nA,2000,Eastern,1.5,2,x\nA,2001,Eastern,1.25,2.5,y\nB,2000,west,3,4e1,z\n");
        let ds = ingest(f.path(), &cols()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.column("gdp").unwrap(), &[2.0, 2.5, 40.0]);
        assert_eq!(ds.region[2], Region::Western);
    }

    #[test]
    fn duplicate_key_names_both_rows() {
        let f = write("province,year,region,co2,gdp\nA,2000,Eastern,1,2\nB,2000,Central,1,2\nA,2000,Eastern,1,2\n");
        let err = ingest(f.path(), &cols()).unwrap_err().to_string();
        assert!(err.contains("rows 2 and 4"), "{err}");
    }

    #[test]
    fn decimal_comma_is_a_located_parse_error() {
        let f = write("province,year,region,co2,gdp\nA,2000,Eastern,1,2\nA,2001,Eastern,\"1,23\",2\n");
        match ingest(f.path(), &cols()).unwrap_err() {
            PipelineError::Cell { row, column, message, .. } => {
                assert_eq!((row, column.as_str()), (3, "co2"));
                assert!(message.contains("1,23"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_column_and_cell() {
        let f = write("province,year,region,co2\nA,2000,Eastern,1\n");
        assert!(ingest(f.path(), &cols()).unwrap_err().to_string().contains("`gdp`"));
        let f = write("province,year,region,co2,gdp\nA,2000,Eastern,,2\n");
        assert!(matches!(ingest(f.path(), &cols()), Err(PipelineError::Cell { row: 2, .. })));
        let f = write("province,year,region,co2,gdp\nA,2000,,1,2\n");
        assert!(matches!(ingest(f.path(), &cols()), Err(PipelineError::Cell { .. })));
    }

    #[test]
    fn number_parsing() {
        assert_eq!(parse_number(" 2.5 "), Ok(2.5));
        assert!(parse_number("NaN").is_err());
        assert!(parse_number("inf").is_err());
        assert!(parse_number("1.2.3").is_err());
    }
}
