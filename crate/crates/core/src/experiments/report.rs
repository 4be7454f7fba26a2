//! Study reports and their on-disk form.
//!
//! `emit_report` writes `report.json` (everything), `rows.csv` (one line per
//! λ and replicate) and any attached files. Every file goes to a temporary
//! name first and is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{loglog_fit, mean, median, quantile, variance, LinearFit};

use super::config::StudyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub lambda: f64,
    pub replicate: u32,
    pub values: Vec<f64>,
}

/// Summary of one column at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub lambda: f64,
    pub column: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Aggregate {
    pub fn from_values(lambda: f64, column: &str, xs: &[f64]) -> Self {
        let sd = if xs.len() > 1 { variance(xs).sqrt() } else { 0.0 };
        Self {
            lambda,
            column: column.to_string(),
            count: xs.len(),
            mean: mean(xs),
            sd,
            median: median(xs),
            q05: quantile(xs, 0.05),
            q95: quantile(xs, 0.95),
        }
    }
}

/// Least-squares fit of `ln y` against `ln λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub name: String,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Exponent predicted by the asymptotic theory.
    pub target: f64,
}

impl SlopeFit {
    pub fn fit(name: &str, lambdas: &[f64], values: &[f64], target: f64) -> Result<Self> {
        let LinearFit { slope, intercept, slope_se } = loglog_fit(lambdas, values)?;
        Ok(Self {
            name: name.to_string(),
            lambdas: lambdas.to_vec(),
            values: values.to_vec(),
            slope,
            intercept,
            slope_se,
            target,
        })
    }
}

/// A statistic compared against a closed bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        // NaN fails every comparison
        let passed = lower.map_or(!value.is_nan(), |l| value >= l) && upper.map_or(!value.is_nan(), |u| value <= u);
        Self { name: name.to_string(), value, lower, upper, passed }
    }

    pub fn within(name: &str, value: f64, lower: f64, upper: f64) -> Self {
        Self::new(name, value, Some(lower), Some(upper))
    }

    pub fn at_most(name: &str, value: f64, upper: f64) -> Self {
        Self::new(name, value, None, Some(upper))
    }

    pub fn at_least(name: &str, value: f64, lower: f64) -> Self {
        Self::new(name, value, Some(lower), None)
    }

    /// Pass/fail flag recorded as 1/0.
    pub fn flag(name: &str, ok: bool) -> Self {
        Self::within(name, if ok { 1.0 } else { 0.0 }, 1.0, 1.0)
    }

    pub fn describe(&self) -> String {
        let b = |v: Option<f64>, inf: &str| v.map_or(inf.to_string(), |v| format!("{v}"));
        format!("{} = {:.6} in [{}, {}]", self.name, self.value, b(self.lower, "-inf"), b(self.upper, "inf"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: String,
    pub provenance: Provenance,
    pub config: StudyConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub fits: Vec<SlopeFit>,
    pub statistics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    /// Extra files written next to the report; not embedded in the JSON.
    #[serde(skip)]
    pub attachments: Vec<Attachment>,
    pub attachment_names: Vec<String>,
}

impl StudyReport {
    pub fn new(config: &StudyConfig, columns: &[&str]) -> Result<Self> {
        Ok(Self {
            kind: config.kind.name().to_string(),
            provenance: Provenance {
                config_hash: config.hash()?,
                seed: config.seed,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            config: config.clone(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            aggregates: Vec::new(),
            fits: Vec::new(),
            statistics: BTreeMap::new(),
            checks: Vec::new(),
            attachments: Vec::new(),
            attachment_names: Vec::new(),
        })
    }

    pub fn push_row(&mut self, lambda: f64, replicate: u32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::DimensionMismatch { expected: self.columns.len(), found: values.len() });
        }
        self.rows.push(Row { lambda, replicate, values });
        Ok(())
    }

    pub fn column_index(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::invalid(format!("no column named {column}")))
    }

    /// Distinct λ values in row order.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.lambda) {
                out.push(r.lambda);
            }
        }
        out
    }

    pub fn column_at(&self, lambda: f64, column: &str) -> Result<Vec<f64>> {
        let j = self.column_index(column)?;
        Ok(self.rows.iter().filter(|r| r.lambda == lambda).map(|r| r.values[j]).collect())
    }

    /// Per-λ aggregates of every column, recomputed from the rows.
    pub fn compute_aggregates(&self) -> Vec<Aggregate> {
        let mut out = Vec::new();
        for l in self.lambdas() {
            for (j, c) in self.columns.iter().enumerate() {
                let xs: Vec<f64> = self.rows.iter().filter(|r| r.lambda == l).map(|r| r.values[j]).collect();
                out.push(Aggregate::from_values(l, c, &xs));
            }
        }
        out
    }

    pub fn aggregate(&self, lambda: f64, column: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.lambda == lambda && a.column == column)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn attach(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.attachment_names.push(name.to_string());
        self.attachments.push(Attachment { name: name.to_string(), contents: contents.into() });
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["lambda".to_string(), "replicate".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.lambda.to_string(), r.replicate.to_string()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Builds a CSV document from a header and numeric columns of equal length.
pub fn columns_csv(header: &[&str], columns: &[&[f64]]) -> Result<String> {
    if header.len() != columns.len() {
        return Err(Error::DimensionMismatch { expected: header.len(), found: columns.len() });
    }
    let n = columns.first().map_or(0, |c| c.len());
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.len() });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string())).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}

/// Parses a CSV written by this module back into a header and columns.
pub fn read_columns_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for (c, field) in cols.iter_mut().zip(rec.iter()) {
            c.push(field.parse::<f64>().map_err(|e| Error::Format(format!("{field}: {e}")))?);
        }
    }
    Ok((header, cols))
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Writes the report files into `dir` (created if needed) and returns their
/// paths.
pub fn emit_report(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json", report.to_json()?.as_bytes())?;
    put("rows.csv", report.rows_csv()?.as_bytes())?;
    for a in &report.attachments {
        put(&a.name, &a.contents)?;
    }
    Ok(written)
}
