//! Field dump format: a CSV with header `t_1,…,t_N,x_1,…,x_n`, one row per site in
//! lexicographic order, plus a JSON sidecar with the same stem.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Clock, FieldWindow, MultiIndex, Window};
use crate::error::{Error, Result};
use crate::numfmt::f17;
use crate::transforms::TransformRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub clock: Clock,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<TransformRecord>,
}

impl Sidecar {
    pub fn for_field(field: &FieldWindow, seed: Option<u64>) -> Self {
        Sidecar {
            big_n: field.dim(),
            n: field.n(),
            lo: field.window().lo.0.clone(),
            hi: field.window().hi.0.clone(),
            clock: field.clock(),
            seed,
            transforms: Vec::new(),
        }
    }

    pub fn window(&self) -> Result<Window> {
        Window::new(MultiIndex(self.lo.clone()), MultiIndex(self.hi.clone()))
    }
}

/// CSV path and the sidecar path next to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldFiles {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
}

impl FieldFiles {
    pub fn from_csv(csv: impl Into<PathBuf>) -> Self {
        let csv = csv.into();
        let sidecar = csv.with_extension("json");
        FieldFiles { csv, sidecar }
    }
}

fn csv_text(field: &FieldWindow) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=field.dim())
        .map(|l| format!("t_{l}"))
        .chain((1..=field.n()).map(|k| format!("x_{k}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (p, t) in field.window().sites().enumerate() {
        for c in &t.0 {
            let _ = write!(out, "{c},");
        }
        let row: Vec<String> = field.at(p).iter().map(|v| f17(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_field(csv_path: &Path, field: &FieldWindow, sidecar: &Sidecar) -> Result<FieldFiles> {
    let files = FieldFiles::from_csv(csv_path);
    if let Some(parent) = files.csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(&files.csv, csv_text(field)).map_err(|e| Error::io(&files.csv, e))?;
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(&files.sidecar, json + "\n").map_err(|e| Error::io(&files.sidecar, e))?;
    Ok(files)
}

/// Reads a field and its sidecar, validating that rows enumerate the sidecar
/// window in lexicographic order.
pub fn read_field(csv_path: &Path) -> Result<(FieldWindow, Sidecar)> {
    let files = FieldFiles::from_csv(csv_path);
    let side_text = fs::read_to_string(&files.sidecar).map_err(|e| Error::io(&files.sidecar, e))?;
    let sidecar: Sidecar = serde_json::from_str(&side_text)?;
    let window = sidecar.window()?;
    if window.dim() != sidecar.big_n {
        return Err(Error::Format(format!(
            "sidecar N = {} but bounds have length {}",
            sidecar.big_n,
            window.dim()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&files.csv)?;
    let header = reader.headers()?.clone();
    if header.len() != sidecar.big_n + sidecar.n {
        return Err(Error::Format(format!(
            "{}: header has {} columns, expected N + n = {}",
            files.csv.display(),
            header.len(),
            sidecar.big_n + sidecar.n
        )));
    }
    let mut values = Vec::with_capacity(window.volume() * sidecar.n);
    let expected_sites: Vec<MultiIndex> = window.sites().collect();
    let mut sites = expected_sites.into_iter();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let expected = sites.next().ok_or_else(|| {
            Error::Format(format!("{}: more rows than window sites", files.csv.display()))
        })?;
        let t: Vec<i64> = (0..sidecar.big_n)
            .map(|l| record[l].trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("row {}: bad index: {e}", row_no + 1)))?;
        if t != expected.0 {
            return Err(Error::Format(format!(
                "row {}: site {} out of lexicographic order (expected {})",
                row_no + 1,
                MultiIndex(t),
                expected
            )));
        }
        for k in 0..sidecar.n {
            let v = record[sidecar.big_n + k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: bad value: {e}", row_no + 1)))?;
            values.push(v);
        }
    }
    if sites.next().is_some() {
        return Err(Error::Format(format!(
            "{}: fewer rows than window sites ({})",
            files.csv.display(),
            window.volume()
        )));
    }
    let field = FieldWindow::new(window, sidecar.n, sidecar.clock, values)?;
    Ok((field, sidecar))
}
