//! Expression matrices: loading, validation and preprocessing.
//!
//! Rows are cells and columns are genes. Inputs are densified on load.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::fmt17;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    values: Array2<f64>,
    cell_ids: Vec<String>,
    gene_ids: Vec<String>,
    is_preprocessed: bool,
}

impl ExpressionMatrix {
    /// Build a raw (unpreprocessed) matrix. Entries must be finite and nonnegative.
    pub fn new(values: Array2<f64>, cell_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        let m = Self { values, cell_ids, gene_ids, is_preprocessed: false };
        m.validate()?;
        Ok(m)
    }

    /// Wrap values that are already in model-ready form. Negative entries are
    /// allowed here (e.g. externally standardized data).
    pub fn preprocessed(values: Array2<f64>, cell_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        let m = Self { values, cell_ids, gene_ids, is_preprocessed: true };
        m.validate()?;
        Ok(m)
    }

    /// Raw matrix with generated ids `cell_<i>` / `gene_<j>`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        Self::new(values, default_ids("cell", n), default_ids("gene", m))
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.values.dim();
        let min_genes = if self.is_preprocessed { 1 } else { 2 };
        if n < 2 || m < min_genes {
            return Err(Error::Validation(format!(
                "expression matrix must have at least 2 cells and {min_genes} genes, got {n}x{m}"
            )));
        }
        if self.cell_ids.len() != n {
            return Err(Error::shape(format!("{n} cell ids"), self.cell_ids.len()));
        }
        if self.gene_ids.len() != m {
            return Err(Error::shape(format!("{m} gene ids"), self.gene_ids.len()));
        }
        for ((i, j), &v) in self.values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {v} at cell {} gene {}",
                    self.cell_ids[i], self.gene_ids[j]
                )));
            }
            if !self.is_preprocessed && v < 0.0 {
                return Err(Error::Validation(format!(
                    "negative value {v} at cell {} gene {}",
                    self.cell_ids[i], self.gene_ids[j]
                )));
            }
        }
        check_unique("cell", &self.cell_ids)?;
        check_unique("gene", &self.gene_ids)?;
        Ok(())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn is_preprocessed(&self) -> bool {
        self.is_preprocessed
    }

    pub fn n_cells(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    /// Same values with the preprocessed flag cleared, so `preprocess` can run again.
    pub fn into_raw(mut self) -> Result<Self> {
        self.is_preprocessed = false;
        self.validate()?;
        Ok(self)
    }

    /// Write as `cell_id,<genes...>` CSV with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        write!(w, "cell_id").map_err(io)?;
        for g in &self.gene_ids {
            write!(w, ",{g}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for (cell, row) in self.cell_ids.iter().zip(self.values.axis_iter(Axis(0))) {
            write!(w, "{cell}").map_err(io)?;
            for &v in row {
                write!(w, ",{}", fmt17(v)).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn default_ids(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}_{i}")).collect()
}

fn check_unique(kind: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {kind} id {id:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Csv,
    MatrixMarket,
}

impl MatrixFormat {
    /// `.mtx` means Matrix Market; anything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("mtx") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::Csv,
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<ExpressionMatrix> {
    match format {
        MatrixFormat::Csv => load_csv(path),
        MatrixFormat::MatrixMarket => load_matrix_market(path),
    }
}

fn parse_number(s: &str, what: impl Fn() -> String) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("invalid number {s:?} at {}", what())))
}

/// CSV with a `cell_id,<gene_1>,...` header and one row per cell.
pub fn load_csv(path: &Path) -> Result<ExpressionMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Parse(format!("{}: header has no gene columns", path.display())));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let m = gene_ids.len();
    let mut cell_ids = Vec::new();
    let mut data = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let cell = record.get(0).unwrap_or_default().trim().to_string();
        for (j, field) in record.iter().skip(1).enumerate() {
            data.push(parse_number(field, || format!("row {} column {}", line + 2, j + 2))?);
        }
        cell_ids.push(cell);
    }
    let n = cell_ids.len();
    let values = Array2::from_shape_vec((n, m), data).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    ExpressionMatrix::new(values, cell_ids, gene_ids)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.with_extension("");
    let mut s = stem.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_ids(path: &Path, expected: usize, prefix: &str) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(default_ids(prefix, expected));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if !line.is_empty() {
            ids.push(line.to_string());
        }
    }
    if ids.len() != expected {
        return Err(Error::Parse(format!("{}: expected {expected} ids, found {}", path.display(), ids.len())));
    }
    Ok(ids)
}

/// Matrix Market (`coordinate` or `array`, `real`/`integer`/`pattern`,
/// `general`/`symmetric`). Rows are cells, columns genes. Optional
/// `<name>.cells.txt` and `<name>.genes.txt` sidecars supply ids.
pub fn load_matrix_market(path: &Path) -> Result<ExpressionMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let perr = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));

    let banner = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(perr("empty file".into())),
    };
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(perr(format!("bad banner {banner:?}")));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(perr(format!("unsupported layout {other}"))),
    };
    let pattern = match tokens[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" if coordinate => true,
        other => return Err(perr(format!("unsupported field {other}"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(perr(format!("unsupported symmetry {other}"))),
    };

    let mut body = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        body.push(t.to_string());
    }
    let mut body = body.into_iter();
    let size_line = body.next().ok_or_else(|| perr("missing size line".into()))?;
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|_| perr(format!("bad size line {size_line:?}"))))
        .collect::<Result<_>>()?;

    let values = if coordinate {
        if sizes.len() != 3 {
            return Err(perr(format!("bad size line {size_line:?}")));
        }
        let (n, m, nnz) = (sizes[0], sizes[1], sizes[2]);
        let mut values = Array2::zeros((n, m));
        let mut count = 0;
        for entry in body {
            let f: Vec<&str> = entry.split_whitespace().collect();
            let want = if pattern { 2 } else { 3 };
            if f.len() != want {
                return Err(perr(format!("bad entry {entry:?}")));
            }
            let idx = |s: &str, bound: usize| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(k) if k >= 1 && k <= bound => Ok(k - 1),
                    _ => Err(perr(format!("index {s:?} out of range 1..={bound}"))),
                }
            };
            let (i, j) = (idx(f[0], n)?, idx(f[1], m)?);
            let v = if pattern { 1.0 } else { parse_number(f[2], || format!("entry {entry:?}"))? };
            values[[i, j]] += v;
            if symmetric && i != j {
                if j >= n || i >= m {
                    return Err(perr("symmetric matrix must be square".into()));
                }
                values[[j, i]] += v;
            }
            count += 1;
        }
        if count != nnz {
            return Err(perr(format!("expected {nnz} entries, found {count}")));
        }
        values
    } else {
        if sizes.len() != 2 {
            return Err(perr(format!("bad size line {size_line:?}")));
        }
        let (n, m) = (sizes[0], sizes[1]);
        let raw: Vec<f64> = body
            .flat_map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .map(|s| parse_number(&s, || "array body".into()))
            .collect::<Result<_>>()?;
        let mut values = Array2::zeros((n, m));
        if symmetric {
            if n != m || raw.len() != n * (n + 1) / 2 {
                return Err(perr("bad symmetric array body".into()));
            }
            let mut it = raw.into_iter();
            for j in 0..m {
                for i in j..n {
                    let v = it.next().unwrap_or_default();
                    values[[i, j]] = v;
                    values[[j, i]] = v;
                }
            }
        } else {
            if raw.len() != n * m {
                return Err(perr(format!("expected {} values, found {}", n * m, raw.len())));
            }
            // column-major
            for (k, v) in raw.into_iter().enumerate() {
                values[[k % n, k / n]] = v;
            }
        }
        values
    };

    let (n, m) = values.dim();
    let cell_ids = read_ids(&sidecar(path, ".cells.txt"), n, "cell")?;
    let gene_ids = read_ids(&sidecar(path, ".genes.txt"), m, "gene")?;
    ExpressionMatrix::new(values, cell_ids, gene_ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub do_library_normalize: bool,
    pub target_sum: f64,
    pub do_log1p: bool,
    /// Keep this many highest-variance genes; all genes are kept when the
    /// matrix has no more than this many.
    pub hvg_count: Option<usize>,
    pub min_cells_per_gene: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            do_library_normalize: true,
            target_sum: 1e4,
            do_log1p: true,
            hvg_count: Some(2000),
            min_cells_per_gene: 3,
        }
    }
}

impl PreprocessConfig {
    /// All steps off: `preprocess` only flips the flag.
    pub fn identity() -> Self {
        Self { do_library_normalize: false, target_sum: 1e4, do_log1p: false, hvg_count: None, min_cells_per_gene: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_sum.is_finite() && self.target_sum > 0.0) {
            return Err(Error::Config(format!("target_sum must be positive, got {}", self.target_sum)));
        }
        if self.hvg_count == Some(0) {
            return Err(Error::Config("hvg_count must be positive".into()));
        }
        Ok(())
    }
}

fn select_columns(values: &Array2<f64>, genes: &[String], keep: &[usize]) -> (Array2<f64>, Vec<String>) {
    (values.select(Axis(1), keep), keep.iter().map(|&j| genes[j].clone()).collect())
}

/// Population variance of each column.
pub fn column_variances(values: &Array2<f64>) -> Vec<f64> {
    let n = values.nrows() as f64;
    values
        .axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect()
}

/// Gene filter, library-size normalization, log1p and HVG selection, each optional.
pub fn preprocess(x: &ExpressionMatrix, cfg: &PreprocessConfig) -> Result<ExpressionMatrix> {
    cfg.validate()?;
    if x.is_preprocessed {
        return Err(Error::Validation("matrix is already preprocessed".into()));
    }
    let mut values = x.values.clone();
    let mut genes = x.gene_ids.clone();

    if cfg.min_cells_per_gene > 0 {
        let keep: Vec<usize> = values
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| col.iter().filter(|&&v| v > 0.0).count() >= cfg.min_cells_per_gene)
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return Err(Error::Validation(format!(
                "only {} gene(s) are expressed in at least {} cells",
                keep.len(),
                cfg.min_cells_per_gene
            )));
        }
        if keep.len() < genes.len() {
            (values, genes) = select_columns(&values, &genes, &keep);
        }
    }

    if cfg.do_library_normalize {
        let sums = values.sum_axis(Axis(1));
        let dead: Vec<String> =
            sums.iter().zip(&x.cell_ids).filter(|(&s, _)| s <= 0.0).map(|(_, id)| id.clone()).collect();
        if !dead.is_empty() {
            return Err(Error::DegenerateInput { cells: dead });
        }
        for (mut row, &s) in values.axis_iter_mut(Axis(0)).zip(sums.iter()) {
            let scale = cfg.target_sum / s;
            row.mapv_inplace(|v| v * scale);
        }
    }

    if cfg.do_log1p {
        values.mapv_inplace(f64::ln_1p);
    }

    if let Some(k) = cfg.hvg_count {
        if k < genes.len() {
            let var = column_variances(&values);
            let mut order: Vec<usize> = (0..var.len()).collect();
            order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
            let mut keep = order[..k].to_vec();
            keep.sort_unstable();
            (values, genes) = select_columns(&values, &genes, &keep);
        }
    }

    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("preprocessing produced non-finite values".into()));
    }
    ExpressionMatrix::preprocessed(values, x.cell_ids.clone(), genes)
}
