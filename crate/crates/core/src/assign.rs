//! Soft cluster assignment and target distributions.
//!
//! `Q` comes from a Student-t kernel between embeddings and centroids. The
//! training target is either the squared-frequency sharpening of `Q` or the
//! entropic optimal-transport plan whose rows sum to 1 and whose columns sum
//! to `N π`, found by Sinkhorn scaling of `Q^λ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax_rows, sq_dist};
use crate::objective::{check_row_stochastic, LOG_FLOOR};
use crate::rng;

/// Lower bound applied to mixing proportions before renormalization.
pub const PI_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Array2<f64>,
    pub pi: Array1<f64>,
    pub hard_labels: Vec<usize>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPair {
    pub q: Array2<f64>,
    pub p_hat: Array2<f64>,
}

fn check_dims(h: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<()> {
    if h.ncols() != centroids.ncols() {
        return Err(Error::shape(format!("centroids of width {}", h.ncols()), centroids.ncols()));
    }
    if centroids.nrows() == 0 {
        return Err(Error::shape("at least one centroid", 0));
    }
    Ok(())
}

/// Student-t soft assignment `q_ij ∝ (1 + ‖h_i − c_j‖²/θ)^{−(1+θ)/2}`.
pub fn soft_assign(h: ArrayView2<f64>, centroids: ArrayView2<f64>, theta: f64) -> Result<Array2<f64>> {
    check_dims(h, centroids)?;
    let (n, k) = (h.nrows(), centroids.nrows());
    let exponent = -(1.0 + theta) / 2.0;
    let mut q = Array2::zeros((n, k));
    for (i, mut row) in q.axis_iter_mut(Axis(0)).enumerate() {
        let hi = h.row(i);
        for j in 0..k {
            row[j] = exponent * (sq_dist(hi, centroids.row(j)) / theta).ln_1p();
        }
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Ok(q)
}

/// Pull an upstream gradient on `Q` back to the embeddings and centroids.
pub fn soft_assign_backward(
    h: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    q: ArrayView2<f64>,
    theta: f64,
    grad_q: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dims(h, centroids)?;
    let (n, k) = (h.nrows(), centroids.nrows());
    if q.dim() != (n, k) || grad_q.dim() != (n, k) {
        return Err(Error::shape(format!("({n}, {k})"), format!("{:?} / {:?}", q.dim(), grad_q.dim())));
    }
    let slope = -(1.0 + theta) / (2.0 * theta);
    let mut grad_h = Array2::zeros(h.raw_dim());
    let mut grad_c = Array2::zeros(centroids.raw_dim());
    for i in 0..n {
        let hi = h.row(i);
        let mean: f64 = (0..k).map(|j| q[[i, j]] * grad_q[[i, j]]).sum();
        for j in 0..k {
            let cj = centroids.row(j);
            // d L / d log k_ij, then d log k_ij / d ‖h_i − c_j‖²
            let r = q[[i, j]] * (grad_q[[i, j]] - mean);
            let s = slope / (1.0 + sq_dist(hi, cj) / theta);
            let coef = 2.0 * r * s;
            for t in 0..h.ncols() {
                let diff = hi[t] - cj[t];
                grad_h[[i, t]] += coef * diff;
                grad_c[[j, t]] -= coef * diff;
            }
        }
    }
    Ok((grad_h, grad_c))
}

/// Squared-frequency target `p_ij ∝ q_ij² / f_j`, `f_j = Σ_i q_ij`.
pub fn sdcn_target(q: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_row_stochastic(q, 1e-6)?;
    let f = q.sum_axis(Axis(0));
    let mut p = q.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        for (v, &fj) in row.iter_mut().zip(f.iter()) {
            *v = if fj > 0.0 { *v * *v / fj } else { 0.0 };
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// When the alternating iterations run out, finish with damped Newton
    /// steps on the column potentials instead of failing.
    pub polish: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 1000, polish: true }
    }
}

/// Newton steps allowed after the alternating iterations.
pub const MAX_POLISH_STEPS: usize = 50;

const MAX_POTENTIAL_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornReport {
    /// Alternating iterations plus any Newton steps.
    pub iterations: usize,
    /// Worst absolute row or column marginal violation of the returned plan.
    pub violation: f64,
    pub log_domain: bool,
    pub polished: bool,
}

const SCALING_MIN: f64 = 1e-150;
const SCALING_MAX: f64 = 1e150;

fn validate_pi(pi: ArrayView1<f64>, k: usize) -> Result<()> {
    if pi.len() != k {
        return Err(Error::shape(format!("pi of length {k}"), pi.len()));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::Validation("mixing proportions must be positive".into()));
    }
    let s = pi.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("mixing proportions sum to {s}, not 1")));
    }
    Ok(())
}

/// Worst marginal violation of `diag(u) K diag(v)` for rows → 1, columns → `col_target`.
fn plan_violation(kernel: &Array2<f64>, u: &[f64], v: &[f64], col_target: &[f64]) -> f64 {
    let (n, k) = kernel.dim();
    let mut cols = vec![0.0; k];
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut r = 0.0;
        for j in 0..k {
            let p = u[i] * kernel[[i, j]] * v[j];
            r += p;
            cols[j] += p;
        }
        worst = worst.max((r - 1.0).abs());
    }
    for j in 0..k {
        worst = worst.max((cols[j] - col_target[j]).abs());
    }
    worst
}

enum Outcome {
    Converged(Array2<f64>, SinkhornReport),
    /// Carries the achieved violation and the last log column scaling.
    Exhausted(f64, Vec<f64>),
    Underflow,
}

fn sinkhorn_plain(kernel: &Array2<f64>, col_target: &[f64], opts: &SinkhornOptions) -> Outcome {
    let (n, k) = kernel.dim();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; k];
    let in_range = |x: f64| x.is_finite() && (SCALING_MIN..=SCALING_MAX).contains(&x);
    let mut violation = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for i in 0..n {
            let s: f64 = (0..k).map(|j| kernel[[i, j]] * v[j]).sum();
            u[i] = 1.0 / s;
        }
        for j in 0..k {
            let s: f64 = (0..n).map(|i| kernel[[i, j]] * u[i]).sum();
            v[j] = col_target[j] / s;
        }
        if !u.iter().chain(v.iter()).all(|&x| in_range(x)) {
            return Outcome::Underflow;
        }
        violation = plan_violation(kernel, &u, &v, col_target);
        if violation < opts.tol {
            let mut plan = kernel.clone();
            for ((i, j), p) in plan.indexed_iter_mut() {
                *p *= u[i] * v[j];
            }
            let report = SinkhornReport { iterations: it, violation, log_domain: false, polished: false };
            return Outcome::Converged(plan, report);
        }
    }
    Outcome::Exhausted(violation, v.iter().map(|x| x.ln()).collect())
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(log_kernel: &Array2<f64>, col_target: &[f64], opts: &SinkhornOptions) -> Outcome {
    let (n, k) = log_kernel.dim();
    let log_b: Vec<f64> = col_target.iter().map(|b| b.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];
    let mut plan = Array2::zeros((n, k));
    let mut violation = f64::INFINITY;
    let ones_u = vec![1.0; n];
    let ones_v = vec![1.0; k];
    for it in 1..=opts.max_iter {
        for i in 0..n {
            f[i] = -logsumexp((0..k).map(|j| log_kernel[[i, j]] + g[j]));
        }
        for j in 0..k {
            g[j] = log_b[j] - logsumexp((0..n).map(|i| log_kernel[[i, j]] + f[i]));
        }
        if !f.iter().chain(g.iter()).all(|x| x.is_finite()) {
            return Outcome::Underflow;
        }
        for ((i, j), p) in plan.indexed_iter_mut() {
            *p = (log_kernel[[i, j]] + f[i] + g[j]).exp();
        }
        violation = plan_violation(&plan, &ones_u, &ones_v, col_target);
        if violation < opts.tol {
            let report = SinkhornReport { iterations: it, violation, log_domain: true, polished: false };
            return Outcome::Converged(plan, report);
        }
    }
    Outcome::Exhausted(violation, g)
}

/// Row-normalized plan for column potentials `a`, and the dual objective
/// `Σ_i log Σ_j K_ij e^{a_j} − Σ_j b_j a_j`.
fn plan_from_potentials(log_kernel: &Array2<f64>, a: &[f64], col_target: &[f64]) -> (Array2<f64>, f64) {
    let (n, k) = log_kernel.dim();
    let mut plan = Array2::zeros((n, k));
    let mut value = -a.iter().zip(col_target).map(|(x, b)| x * b).sum::<f64>();
    for i in 0..n {
        let lse = logsumexp((0..k).map(|j| log_kernel[[i, j]] + a[j]));
        value += lse;
        for j in 0..k {
            plan[[i, j]] = (log_kernel[[i, j]] + a[j] - lse).exp();
        }
    }
    (plan, value)
}

/// Solve `m x = rhs` by Gaussian elimination with partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = rhs.len();
    for c in 0..k {
        let p = (c..k).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        rhs.swap(c, p);
        for r in c + 1..k {
            let f = m[r][c] / m[c][c];
            for cc in c..k {
                m[r][cc] -= f * m[c][cc];
            }
            rhs[r] -= f * rhs[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

/// Damped Newton on the column potentials. Rows are normalized exactly at
/// every step, so only the column marginals have to be driven to `col_target`.
fn sinkhorn_newton(
    log_kernel: &Array2<f64>,
    col_target: &[f64],
    mut a: Vec<f64>,
    opts: &SinkhornOptions,
    log_domain: bool,
) -> Outcome {
    let (n, k) = log_kernel.dim();
    let ones_u = vec![1.0; n];
    let ones_v = vec![1.0; k];
    let (mut plan, mut value) = plan_from_potentials(log_kernel, &a, col_target);
    let mut violation = f64::INFINITY;
    for step in 1..=MAX_POLISH_STEPS {
        violation = plan_violation(&plan, &ones_u, &ones_v, col_target);
        if violation < opts.tol {
            let report = SinkhornReport { iterations: opts.max_iter + step - 1, violation, log_domain, polished: true };
            return Outcome::Converged(plan, report);
        }
        let cols = plan.sum_axis(Axis(0));
        let grad: Vec<f64> = (0..k).map(|j| cols[j] - col_target[j]).collect();
        // Hessian diag(c) − PᵀP is singular along the all-ones direction;
        // adding a multiple of 11ᵀ pins that gauge without affecting steps orthogonal to it.
        let gauge = cols.iter().cloned().fold(0.0, f64::max) / k as f64;
        let mut hess = vec![vec![gauge; k]; k];
        for (j, row) in hess.iter_mut().enumerate() {
            row[j] += cols[j] + 1e-12 * gauge;
            for (l, h) in row.iter_mut().enumerate() {
                *h -= plan.column(j).dot(&plan.column(l));
            }
        }
        let Some(mut dir) = solve_dense(hess, grad.iter().map(|g| -g).collect()) else {
            break;
        };
        // near-empty columns make the Hessian nearly singular; bound each
        // potential's move to a factor of e^MAX_POTENTIAL_STEP per step
        let longest = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if longest > MAX_POTENTIAL_STEP {
            dir.iter_mut().for_each(|d| *d *= MAX_POTENTIAL_STEP / longest);
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let (p, v) = plan_from_potentials(log_kernel, &trial, col_target);
            if v <= value + 1e-4 * t * slope || t < 1e-10 {
                a = trial;
                plan = p;
                value = v;
                break;
            }
            t *= 0.5;
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Outcome::Underflow;
        }
    }
    Outcome::Exhausted(violation, a)
}

/// Optimal-transport target: `P̂ = diag(u) Q^λ diag(v)` with unit row sums
/// and column sums `N π`.
///
/// Alternates `u ← 1 ⊘ (K v)`, `v ← Nπ ⊘ (Kᵀ u)` from `v = 1`, restarting in
/// the log domain if a scaling entry leaves `[1e-150, 1e150]`. If `max_iter`
/// passes without reaching `tol` and `opts.polish` is set, Newton steps on
/// the column potentials finish the solve.
pub fn sinkhorn_target(
    q: ArrayView2<f64>,
    pi: ArrayView1<f64>,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<(Array2<f64>, SinkhornReport)> {
    let (n, k) = q.dim();
    validate_pi(pi, k)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config("sinkhorn tol and max_iter must be positive".into()));
    }
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation("assignment matrix has negative or non-finite entries".into()));
    }
    let col_target: Vec<f64> = pi.iter().map(|p| n as f64 * p).collect();

    // Each row is divided by its maximum before the power; the scaling
    // absorbs the factor so the fixed point is unchanged.
    let mut log_kernel = Array2::zeros((n, k));
    for (i, row) in q.axis_iter(Axis(0)).enumerate() {
        let log_max = row.fold(LOG_FLOOR, |a, &b| a.max(b)).ln();
        for j in 0..k {
            log_kernel[[i, j]] = lambda * (row[j].max(LOG_FLOOR).ln() - log_max);
        }
    }
    let kernel = log_kernel.mapv(f64::exp);

    let finish = |outcome: Outcome, log_domain: bool| -> Option<Result<(Array2<f64>, SinkhornReport)>> {
        match outcome {
            Outcome::Converged(p, r) => Some(Ok((p, r))),
            Outcome::Exhausted(violation, a) if opts.polish => {
                match sinkhorn_newton(&log_kernel, &col_target, a, opts, log_domain) {
                    Outcome::Converged(p, r) => Some(Ok((p, r))),
                    Outcome::Exhausted(v, _) => Some(Err(Error::NoConvergence {
                        iterations: opts.max_iter + MAX_POLISH_STEPS,
                        violation: v.min(violation),
                    })),
                    Outcome::Underflow => Some(Err(Error::NoConvergence { iterations: opts.max_iter, violation })),
                }
            }
            Outcome::Exhausted(violation, _) => {
                Some(Err(Error::NoConvergence { iterations: opts.max_iter, violation }))
            }
            Outcome::Underflow => None,
        }
    };
    if let Some(r) = finish(sinkhorn_plain(&kernel, &col_target, opts), false) {
        return r;
    }
    finish(sinkhorn_log(&log_kernel, &col_target, opts), true).unwrap_or_else(|| {
        Err(Error::NumericalUnderflow("sinkhorn scalings left the representable range in the log domain".into()))
    })
}

/// Label frequencies floored at `floor` and renormalized.
pub fn proportions_from_labels(labels: &[usize], k: usize, floor: f64) -> Array1<f64> {
    let mut counts = Array1::zeros(k);
    for &l in labels {
        counts[l] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    // floor in count units so unfloored entries come out as exactly count / n
    let floored = counts.mapv(|c: f64| c.max(floor * n));
    let s = floored.sum();
    floored.mapv(|c| c / s)
}

/// Mixing proportions from the row-wise argmax of `Q`.
pub fn estimate_pi(q: ArrayView2<f64>, floor: f64) -> Array1<f64> {
    proportions_from_labels(&argmax_rows(q), q.ncols(), floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the largest squared centroid shift falls below this.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub state: ClusterState,
    pub wcss: f64,
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng>(h: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = h.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(h.row(i), h.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // all remaining mass is zero (duplicates): take any unused point
            Err(_) => {
                let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                unused[rng.gen_range(0..unused.len())]
            }
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(h.row(i), h.row(next)));
        }
    }
    h.select(Axis(0), &chosen)
}

fn lloyd(h: ArrayView2<f64>, mut centroids: Array2<f64>, opts: &KMeansOptions) -> (Array2<f64>, Vec<usize>, f64) {
    let (n, d) = h.dim();
    let k = centroids.nrows();
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    for _ in 0..opts.max_iter {
        for i in 0..n {
            (labels[i], dists[i]) = nearest(h.row(i), &centroids);
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(labels[i]).scaled_add(1.0, &h.row(i));
            counts[labels[i]] += 1;
        }
        // empty clusters take the point farthest from its current centroid
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n).filter(|&i| counts[labels[i]] > 1).max_by(|&a, &b| dists[a].total_cmp(&dists[b]));
                if let Some(i) = far {
                    let old = labels[i];
                    sums.row_mut(old).scaled_add(-1.0, &h.row(i));
                    counts[old] -= 1;
                    sums.row_mut(j).assign(&h.row(i));
                    counts[j] = 1;
                    labels[i] = j;
                    dists[i] = 0.0;
                }
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new = sums.row(j).mapv(|v| v / counts[j] as f64);
            shift = shift.max(sq_dist(new.view(), centroids.row(j)));
            centroids.row_mut(j).assign(&new);
        }
        if shift <= opts.tol {
            break;
        }
    }
    let mut wcss = 0.0;
    for i in 0..n {
        let (l, dd) = nearest(h.row(i), &centroids);
        labels[i] = l;
        wcss += dd;
    }
    (centroids, labels, wcss)
}

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by WCSS.
pub fn kmeans(h: ArrayView2<f64>, k: usize, opts: &KMeansOptions, seed: u64) -> Result<KMeansResult> {
    let n = h.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in 1..={n}, got {k}")));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("embedding has non-finite entries".into()));
    }
    let mut rng = rng::stream(seed, "kmeans");
    let mut best: Option<(Array2<f64>, Vec<usize>, f64)> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = plus_plus_seed(h, k, &mut rng);
        let run = lloyd(h, init, opts);
        if best.as_ref().map_or(true, |b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (centroids, hard_labels, wcss) = best.expect("at least one restart");
    let pi = proportions_from_labels(&hard_labels, k, PI_FLOOR);
    Ok(KMeansResult { state: ClusterState { centroids, pi, hard_labels }, wcss })
}
