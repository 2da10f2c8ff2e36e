//! Component ablations over a shared seed list.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use super::config::{RunConfig, TargetStrategy};
use super::train::train;
use crate::error::{Error, Result};
use crate::expr::ExpressionMatrix;
use crate::metrics::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoNcut,
    NoKl,
    NoRes,
    NoPmg,
    NoSmg,
    /// Neither graph channel, so no cut term at all.
    NoGraph,
    NoOrt,
    /// Squared-frequency target instead of optimal transport.
    NoOt,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoNcut,
        Variant::NoKl,
        Variant::NoRes,
        Variant::NoPmg,
        Variant::NoSmg,
        Variant::NoGraph,
        Variant::NoOrt,
        Variant::NoOt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNcut => "w/o NCut",
            Variant::NoKl => "w/o KL",
            Variant::NoRes => "w/o Res",
            Variant::NoPmg => "w/o PMG",
            Variant::NoSmg => "w/o SMG",
            Variant::NoGraph => "w/o Graph",
            Variant::NoOrt => "w/o Ort",
            Variant::NoOt => "w/o OT",
        }
    }

    /// `base` with this variant's switch flipped.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoNcut => cfg.use_ncut = false,
            Variant::NoKl => cfg.use_kl = false,
            Variant::NoRes => cfg.use_recon = false,
            Variant::NoPmg => cfg.use_pmg = false,
            Variant::NoSmg => cfg.use_smg = false,
            Variant::NoGraph => {
                cfg.use_pmg = false;
                cfg.use_smg = false;
                cfg.use_ncut = false;
            }
            Variant::NoOrt => cfg.use_orthogonality = false,
            Variant::NoOt => cfg.target_strategy = TargetStrategy::Sdcn,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed: Vec<(u64, Metrics)>,
    pub acc: Summary,
    pub nmi: Summary,
    pub ari: Summary,
}

impl AblationRow {
    fn new(variant: Variant, per_seed: Vec<(u64, Metrics)>) -> Self {
        let col = |f: fn(&Metrics) -> f64| Summary::of(&per_seed.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
        Self { variant, acc: col(|m| m.acc), nmi: col(|m| m.nmi), ari: col(|m| m.ari), per_seed }
    }
}

/// Train every variant on every seed (concurrently) and aggregate the metrics.
pub fn run_ablation_suite(
    x: &ExpressionMatrix,
    truth: &[usize],
    base: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    run_variants(x, truth, base, seeds, &Variant::ALL)
}

pub fn run_variants(
    x: &ExpressionMatrix,
    truth: &[usize],
    base: &RunConfig,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<(usize, u64, Metrics)> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let cfg = RunConfig { seed, ..variants[v].apply(base) };
            let res = train(x, Some(truth), &cfg)?;
            Ok((v, seed, res.metrics.expect("truth supplied")))
        })
        .collect::<Result<_>>()?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let per_seed = results.iter().filter(|r| r.0 == v).map(|r| (r.1, r.2)).collect();
            AblationRow::new(variant, per_seed)
        })
        .collect())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let to_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["variant", "seeds", "acc_mean", "acc_std", "nmi_mean", "nmi_std", "ari_mean", "ari_std"])
        .map_err(to_err)?;
    for r in rows {
        let mut rec = vec![r.variant.name().to_string(), r.per_seed.len().to_string()];
        for s in [r.acc, r.nmi, r.ari] {
            rec.push(format!("{:.6}", s.mean));
            rec.push(format!("{:.6}", s.std));
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
