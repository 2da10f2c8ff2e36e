//! Synthetic count-like data with planted clusters.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::expr::ExpressionMatrix;
use crate::rng;

/// Standard deviation of the per-entry log-scale noise.
pub const NOISE_SD: f64 = 0.5;

/// Named separation levels accepted wherever a separation is parsed.
pub const SEPARATION_LEVELS: [(&str, f64); 3] = [("low", 4.0), ("medium", 10.0), ("high", 25.0)];

/// `"low" | "medium" | "high"` or a positive number.
pub fn parse_separation(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some(&(_, v)) = SEPARATION_LEVELS.iter().find(|(name, _)| name.eq_ignore_ascii_case(s)) {
        return Ok(v);
    }
    let v: f64 =
        s.parse().map_err(|_| Error::Config(format!("separation must be low/medium/high or a number, got {s:?}")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("separation must be positive, got {v}")));
    }
    Ok(v)
}

fn min_pairwise_distance(centers: &Array2<f64>) -> f64 {
    let k = centers.nrows();
    let mut best = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            best = best.min(crate::linalg::sq_dist(centers.row(a), centers.row(b)).sqrt());
        }
    }
    best
}

/// Gaussian blobs in log space, exponentiated, with dropout zeros.
///
/// Cluster centers are drawn from a standard normal and rescaled so the
/// closest pair sits exactly `separation` apart. Each entry is
/// `exp(base_g + center_g + ε)` with `ε ~ N(0, NOISE_SD²)`; each entry is then
/// zeroed independently with probability `dropout_rate` from a separate
/// random stream. Labels are balanced and shuffled.
pub fn synth_blobs(
    n: usize,
    genes: usize,
    k: usize,
    separation: f64,
    dropout_rate: f64,
    seed: u64,
) -> Result<(ExpressionMatrix, Vec<usize>)> {
    if n == 0 || genes < 2 {
        return Err(Error::Config(format!("need n >= 1 and genes >= 2, got n={n}, genes={genes}")));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in 1..={n}, got {k}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be positive, got {separation}")));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
    }

    let mut rng = rng::stream(seed, "synth");
    let mut centers = Array2::from_shape_simple_fn((k, genes), || rng.sample::<f64, _>(StandardNormal));
    if k > 1 {
        let d = min_pairwise_distance(&centers);
        // nudge above 1 so rounding never leaves a pair just short of the target
        centers *= separation / d * (1.0 + 1e-12);
    } else {
        centers.fill(0.0);
    }
    let base: Vec<f64> = (0..genes).map(|_| rng.gen_range(1.0..3.0)).collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let mut values = Array2::zeros((n, genes));
    for (i, &l) in labels.iter().enumerate() {
        for g in 0..genes {
            let eps: f64 = rng.sample(StandardNormal);
            values[[i, g]] = (base[g] + centers[[l, g]] + NOISE_SD * eps).exp();
        }
    }

    let mut drop = rng::stream(seed, "dropout");
    if dropout_rate > 0.0 {
        values.mapv_inplace(|v| if drop.gen::<f64>() < dropout_rate { 0.0 } else { v });
    }

    let x = ExpressionMatrix::from_values(values)?;
    Ok((x, labels))
}
