//! Small dense helpers shared by the graph, loss and assignment code.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

#[inline]
pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric Gram matrix `A Aᵀ`, filling the upper triangle and mirroring it
/// so the result is exactly symmetric.
///
/// Every entry is the same sequential dot product regardless of `parallel`,
/// so both modes give bit-identical output.
pub fn gram(a: ArrayView2<f64>, parallel: bool) -> Array2<f64> {
    let n = a.nrows();
    let row_upper = |i: usize| -> Vec<f64> {
        let ri = a.row(i);
        (i..n).map(|j| dot(ri, a.row(j))).collect()
    };
    let upper: Vec<Vec<f64>> =
        if parallel { (0..n).into_par_iter().map(row_upper).collect() } else { (0..n).map(row_upper).collect() };
    let mut g = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

pub fn max_abs_asymmetry(w: ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..w.nrows() {
        for j in (i + 1)..w.ncols() {
            worst = worst.max((w[[i, j]] - w[[j, i]]).abs());
        }
    }
    worst
}

/// Largest absolute deviation of a row sum from 1.
pub fn row_stochastic_violation(m: ArrayView2<f64>) -> (usize, f64) {
    m.axis_iter(Axis(0)).enumerate().map(|(i, r)| (i, r.sum())).fold((0, 1.0), |best, (i, s)| {
        if (s - 1.0).abs() > (best.1 - 1.0).abs() {
            (i, s)
        } else {
            best
        }
    })
}

/// Row-wise argmax, first index wins on ties.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Format with 17 significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
