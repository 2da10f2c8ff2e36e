//! Run artifacts on disk, label files, and the timing harness.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use super::config::{ClusterCount, RunConfig};
use super::synth::synth_blobs;
use super::train::{train, LossRecord, PhaseTimings, RunResult};
use crate::error::{Error, Result};
use crate::linalg::fmt17;
use crate::metrics::Metrics;

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path).map(std::io::BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_assignments(path: &Path, cell_ids: &[String], labels: &[usize]) -> Result<()> {
    if cell_ids.len() != labels.len() {
        return Err(Error::LengthMismatch(cell_ids.len(), labels.len()));
    }
    let mut w = create(path)?;
    let mut body = String::from("cell_id,cluster\n");
    for (id, l) in cell_ids.iter().zip(labels) {
        body.push_str(&format!("{id},{l}\n"));
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// One row per cell, no header, 17 significant digits.
pub fn write_embedding(path: &Path, h: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    for row in h.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

/// Disabled loss terms are left empty.
pub fn write_losses(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    let mut w = create(path)?;
    writeln!(w, "epoch,phase,l_res,l_ncut,l_kl,total").map_err(|e| Error::io(path, e))?;
    for r in trace {
        writeln!(w, "{},{},{},{},{},{}", r.epoch, r.phase, opt(r.l_res), opt(r.l_ncut), opt(r.l_kl), fmt17(r.total))
            .map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    n_cells: usize,
    k: usize,
    metrics: Option<&'a Metrics>,
    timings_seconds: &'a PhaseTimings,
}

/// Writes every run artifact into `dir`, creating it if needed.
pub fn write_run_outputs(dir: &Path, res: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_assignments(&dir.join("assignments.csv"), &res.cell_ids, &res.labels)?;
    write_embedding(&dir.join("embedding.csv"), &res.embedding)?;
    write_losses(&dir.join("losses.csv"), &res.trace)?;
    let m = MetricsFile {
        n_cells: res.labels.len(),
        k: res.k,
        metrics: res.metrics.as_ref(),
        timings_seconds: &res.timings,
    };
    let path = dir.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&m).expect("serializable") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    let path = dir.join("checkpoint.bin");
    fs::write(&path, res.checkpoint.to_bytes()?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config.resolved.json");
    fs::write(&path, res.config.to_json_pretty() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

const HEADER_NAMES: [&str; 7] = ["label", "labels", "cluster", "class", "truth", "cell_type", "y"];

/// Reads a label file: one label per line, optionally headed, or a
/// `cell_id,<label>` two-column file whose last column is used.
///
/// Non-integer labels are mapped to integers in sorted order.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path).map_err(|e| match e
        .into_kind()
    {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let mut raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let field = rec.get(rec.len() - 1).unwrap_or("").trim().to_string();
        if i == 0 {
            let first = rec.get(0).unwrap_or("").trim().to_ascii_lowercase();
            if HEADER_NAMES.contains(&field.to_ascii_lowercase().as_str()) || first == "cell_id" {
                continue;
            }
        }
        raw.push(field);
    }
    if raw.is_empty() {
        return Err(Error::Parse(format!("{}: no labels", path.display())));
    }
    if let Ok(ints) = raw.iter().map(|s| s.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>() {
        return Ok(ints);
    }
    let mut names = raw.clone();
    names.sort();
    names.dedup();
    Ok(raw.iter().map(|s| names.binary_search(s).expect("present")).collect())
}

/// Single-column label file with a `label` header.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut body = String::from("label\n");
    for l in labels {
        body.push_str(&format!("{l}\n"));
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRow {
    pub n: usize,
    pub genes: usize,
    pub k: usize,
    pub timings: PhaseTimings,
}

/// Wall-clock timings of full runs on synthetic data of growing size.
pub fn efficiency_report(
    sizes: &[usize],
    genes: usize,
    k: usize,
    separation: f64,
    base: &RunConfig,
) -> Result<Vec<TimingRow>> {
    sizes
        .iter()
        .map(|&n| {
            let (x, truth) = synth_blobs(n, genes, k, separation, 0.0, base.seed)?;
            let cfg = RunConfig { k: ClusterCount::Fixed(k), ..base.clone() };
            let res = train(&x, Some(&truth), &cfg)?;
            Ok(TimingRow { n, genes, k, timings: res.timings })
        })
        .collect()
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "n,genes,k,preprocess_s,graphs_s,pretrain_s,kmeans_s,train_s,total_s")
        .map_err(|e| Error::io(path, e))?;
    for r in rows {
        let t = &r.timings;
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.n, r.genes, r.k, t.preprocess, t.graphs, t.pretrain, t.kmeans, t.train, t.total
        )
        .map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}
