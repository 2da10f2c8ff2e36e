//! Cell-cell affinity graphs and their normalized Laplacians.
//!
//! Two channels are built from the preprocessed matrix `X`:
//!
//! * the inner-product ("probability metric") graph `C = X Xᵀ`, negatives clamped to 0;
//! * the cosine ("spatial metric") graph `S_ij = <x_i, x_j> / (|x_i| |x_j|)`, clamped to `[0, 1]`.
//!
//! Both are kept dense unless top-k sparsification is requested.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ExpressionMatrix;
use crate::linalg::gram;

/// Self-loop weight given to isolated nodes.
pub const DEFAULT_DEGREE_REPAIR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphOptions {
    /// Keep each row's `k` largest affinities, then resymmetrize with `max(w_ij, w_ji)`.
    pub sparsify_top_k: Option<usize>,
    /// Self-loop weight added to zero-degree nodes; `None` makes them an error.
    pub degree_repair: Option<f64>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { sparsify_top_k: None, degree_repair: Some(DEFAULT_DEGREE_REPAIR) }
    }
}

#[derive(Debug, Clone)]
pub struct GraphPair {
    pub c_matrix: Array2<f64>,
    pub s_matrix: Array2<f64>,
    pub deg_c: Array1<f64>,
    pub deg_s: Array1<f64>,
    pub lap_c: Array2<f64>,
    pub lap_s: Array2<f64>,
}

impl GraphPair {
    pub fn n(&self) -> usize {
        self.lap_c.nrows()
    }

    /// `alpha * L_C + (1 - alpha) * L_S`.
    pub fn mixed_laplacian(&self, alpha: f64) -> Array2<f64> {
        if alpha == 1.0 {
            return self.lap_c.clone();
        }
        if alpha == 0.0 {
            return self.lap_s.clone();
        }
        let mut out = self.lap_c.mapv(|v| alpha * v);
        out.scaled_add(1.0 - alpha, &self.lap_s);
        out
    }
}

fn require_preprocessed(x: &ExpressionMatrix) -> Result<()> {
    if x.is_preprocessed() {
        Ok(())
    } else {
        Err(Error::Validation("graph construction needs a preprocessed matrix".into()))
    }
}

fn inner_products_to_affinity(g: &Array2<f64>) -> Array2<f64> {
    g.mapv(|v| v.max(0.0))
}

fn inner_products_to_cosine(g: &Array2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let norms: Vec<f64> = (0..n).map(|i| g[[i, i]].max(0.0).sqrt()).collect();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        s[[i, i]] = 1.0;
        if norms[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..n {
            if norms[j] == 0.0 {
                continue;
            }
            let v = (g[[i, j]] / (norms[i] * norms[j])).clamp(0.0, 1.0);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    s
}

/// `C = X Xᵀ` with negative entries clamped to 0.
pub fn probability_metric_matrix(x: &ExpressionMatrix) -> Result<Array2<f64>> {
    require_preprocessed(x)?;
    Ok(inner_products_to_affinity(&gram(x.values().view(), true)))
}

/// Pairwise cosine similarity. Zero-norm rows get 0 off the diagonal and 1 on it.
pub fn spatial_metric_matrix(x: &ExpressionMatrix) -> Result<Array2<f64>> {
    require_preprocessed(x)?;
    Ok(inner_products_to_cosine(&gram(x.values().view(), true)))
}

/// `L = I - D^{-1/2} W D^{-1/2}`, returned together with the (repaired) degree vector.
pub fn normalized_laplacian(w: ArrayView2<f64>, degree_repair: Option<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::shape("square matrix", format!("{}x{}", n, w.ncols())));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!("affinity {bad} is negative or non-finite")));
    }
    let mut deg = w.sum_axis(Axis(1));
    let mut self_loops = vec![0.0; n];
    for (i, d) in deg.iter_mut().enumerate() {
        if *d <= 0.0 {
            match degree_repair {
                Some(eps) if eps > 0.0 => {
                    *d = eps;
                    self_loops[i] = eps;
                }
                _ => return Err(Error::DegenerateGraph { node: i }),
            }
        }
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut lap = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let wij = if i == j { w[[i, i]] + self_loops[i] } else { w[[i, j]] };
            let v = -wij * inv_sqrt[i] * inv_sqrt[j];
            if i == j {
                lap[[i, i]] = 1.0 + v;
            } else {
                lap[[i, j]] = v;
                lap[[j, i]] = v;
            }
        }
    }
    Ok((lap, deg))
}

/// Exact normalized cut `½ Σ_k cut(V_k, V̄_k) / vol(V_k)` of a labeling.
///
/// Labels that never occur are ignored; a present cluster with zero volume is an error.
pub fn ncut_value(labels: &[usize], w: ArrayView2<f64>) -> Result<f64> {
    let n = w.nrows();
    if labels.len() != n || w.ncols() != n {
        return Err(Error::shape(
            format!("{n} labels and a square {n}x{n} matrix"),
            format!("{} labels, {}x{} matrix", labels.len(), w.nrows(), w.ncols()),
        ));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut vol = vec![0.0; k];
    let mut cut = vec![0.0; k];
    let mut present = vec![false; k];
    for i in 0..n {
        let li = labels[i];
        present[li] = true;
        for j in 0..n {
            let wij = w[[i, j]];
            vol[li] += wij;
            if labels[j] != li {
                cut[li] += wij;
            }
        }
    }
    let mut total = 0.0;
    for c in 0..k {
        if !present[c] {
            continue;
        }
        if vol[c] <= 0.0 {
            return Err(Error::EmptyVolume { cluster: c });
        }
        total += cut[c] / vol[c];
    }
    Ok(0.5 * total)
}

/// Keep each row's `k` largest entries, then symmetrize with the elementwise max.
pub fn sparsify_top_k(w: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = w.nrows();
    if k >= n {
        return w.clone();
    }
    let mut kept = Array2::zeros((n, n));
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let row = w.row(i);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            kept[[i, j]] = row[j];
        }
    }
    let mut out = kept.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = kept[[i, j]].max(kept[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Both affinity channels, their degrees and normalized Laplacians.
pub fn build_graph_pair(x: &ExpressionMatrix, opts: &GraphOptions) -> Result<GraphPair> {
    require_preprocessed(x)?;
    if opts.sparsify_top_k == Some(0) {
        return Err(Error::Config("sparsify_top_k must be positive".into()));
    }
    let g = gram(x.values().view(), true);
    let mut c_matrix = inner_products_to_affinity(&g);
    let mut s_matrix = inner_products_to_cosine(&g);
    if let Some(k) = opts.sparsify_top_k {
        c_matrix = sparsify_top_k(&c_matrix, k);
        s_matrix = sparsify_top_k(&s_matrix, k);
    }
    let (lap_c, deg_c) = normalized_laplacian(c_matrix.view(), opts.degree_repair)?;
    let (lap_s, deg_s) = normalized_laplacian(s_matrix.view(), opts.degree_repair)?;
    Ok(GraphPair { c_matrix, s_matrix, deg_c, deg_s, lap_c, lap_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn pre(values: Array2<f64>) -> ExpressionMatrix {
        let (n, m) = values.dim();
        ExpressionMatrix::preprocessed(
            values,
            (0..n).map(|i| format!("c{i}")).collect(),
            (0..m).map(|j| format!("g{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn probability_metric_examples() {
        let c = probability_metric_matrix(&pre(Array2::eye(2))).unwrap();
        assert_eq!(c, Array2::<f64>::eye(2));
        let c = probability_metric_matrix(&pre(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])).unwrap();
        assert_eq!(c, array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]]);
        let c = probability_metric_matrix(&pre(Array2::zeros((3, 2)))).unwrap();
        assert_eq!(c, Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn probability_metric_clamps_negatives() {
        let c = probability_metric_matrix(&pre(array![[1.0, 0.0], [-1.0, 0.0]])).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn raw_matrix_rejected() {
        let x = ExpressionMatrix::from_values(Array2::eye(2)).unwrap();
        assert!(probability_metric_matrix(&x).is_err());
        assert!(build_graph_pair(&x, &GraphOptions::default()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let s = spatial_metric_matrix(&pre(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])).unwrap();
        assert_eq!(s[[0, 1]], 1.0);
        assert_eq!(s[[0, 2]], 0.0);
        assert_abs_diff_eq!(s[[0, 3]], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        for i in 0..4 {
            assert_eq!(s[[i, i]], 1.0);
        }
    }

    #[test]
    fn cosine_zero_rows() {
        let s = spatial_metric_matrix(&pre(array![[0.0, 0.0], [1.0, 2.0]])).unwrap();
        assert_eq!(s, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn laplacian_of_k2() {
        let (l, d) = normalized_laplacian(array![[0.0, 1.0], [1.0, 0.0]].view(), None).unwrap();
        assert_eq!(l, array![[1.0, -1.0], [-1.0, 1.0]]);
        assert_eq!(d, array![1.0, 1.0]);
    }

    #[test]
    fn laplacian_of_self_loops_is_zero() {
        let (l, _) = normalized_laplacian(Array2::<f64>::eye(3).view(), None).unwrap();
        assert_eq!(l, Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn isolated_node_repair_or_error() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(normalized_laplacian(w.view(), None), Err(Error::DegenerateGraph { node: 2 })));
        let (l, d) = normalized_laplacian(w.view(), Some(1e-8)).unwrap();
        assert_eq!(d[2], 1e-8);
        assert_abs_diff_eq!(l[[2, 2]], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn laplacian_rejects_negative_weights() {
        assert!(normalized_laplacian(array![[0.0, -1.0], [-1.0, 0.0]].view(), None).is_err());
    }

    #[test]
    fn laplacian_null_vector_is_sqrt_degree() {
        let w = array![[0.5, 1.0, 0.2], [1.0, 0.0, 3.0], [0.2, 3.0, 1.0]];
        let (l, d) = normalized_laplacian(w.view(), None).unwrap();
        let v = d.mapv(f64::sqrt);
        for x in l.dot(&v).iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ncut_examples() {
        let k2 = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(ncut_value(&[0, 0], k2.view()).unwrap(), 0.0);
        assert_eq!(ncut_value(&[0, 1], k2.view()).unwrap(), 1.0);

        let mut cliques = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                if i != j && (i < 3) == (j < 3) {
                    cliques[[i, j]] = 1.0;
                }
            }
        }
        assert_eq!(ncut_value(&[0, 0, 0, 1, 1, 1], cliques.view()).unwrap(), 0.0);
        assert!(ncut_value(&[0, 1, 0, 1, 0, 1], cliques.view()).unwrap() > 0.0);
    }

    #[test]
    fn ncut_empty_volume() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(ncut_value(&[0, 0, 1], w.view()), Err(Error::EmptyVolume { cluster: 1 })));
    }

    #[test]
    fn sparsify_full_k_is_identity() {
        let x = pre(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.5]]);
        let dense = build_graph_pair(&x, &GraphOptions::default()).unwrap();
        let full = build_graph_pair(&x, &GraphOptions { sparsify_top_k: Some(4), ..Default::default() }).unwrap();
        assert_eq!(dense.lap_c, full.lap_c);
        assert_eq!(dense.lap_s, full.lap_s);
    }

    #[test]
    fn sparsify_symmetrizes_by_max() {
        let w = array![[1.0, 0.9, 0.1], [0.9, 1.0, 0.2], [0.1, 0.2, 1.0]];
        let s = sparsify_top_k(&w, 2);
        assert_eq!(s, array![[1.0, 0.9, 0.0], [0.9, 1.0, 0.2], [0.0, 0.2, 1.0]]);
    }

    #[test]
    fn mixed_laplacian_endpoints() {
        let x = pre(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let g = build_graph_pair(&x, &GraphOptions::default()).unwrap();
        assert_eq!(g.mixed_laplacian(1.0), g.lap_c);
        assert_eq!(g.mixed_laplacian(0.0), g.lap_s);
        let half = g.mixed_laplacian(0.5);
        assert_abs_diff_eq!(half[[0, 2]], 0.5 * (g.lap_c[[0, 2]] + g.lap_s[[0, 2]]), epsilon = 1e-15);
    }
}
