//! Loss terms and their gradients.
//!
//! * reconstruction: `(1/2N) ‖X − X̂‖²_F`
//! * relaxed cut: `β Tr(Hᵀ L H) + γ ‖HᵀH − I‖²_F` with `L = αL_C + (1−α)L_S`
//! * clustering: `KL(P̂ ‖ Q)` summed over all entries, `P̂` fixed
//!
//! The total is `μ L_res + σ L_cut + τ L_KL`. Because the cut loss already
//! carries `β` and `γ`, its effective weights in the total are `σβ` and `σγ`.
//! The orthogonality penalty is the *squared* Frobenius norm.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphPair;

/// Logarithms clamp their argument from below at this value.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Balance between the inner-product graph (1) and the cosine graph (0).
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    /// Student-t degrees of freedom.
    pub theta: f64,
    /// Sinkhorn smoothness (exponent applied to Q).
    pub lambda_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.1, gamma: 0.1, mu: 1.0, sigma: 1e-5, tau: 1.0, theta: 1.0, lambda_smooth: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.beta, self.gamma, self.mu, self.sigma, self.tau];
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("beta, gamma, mu, sigma, tau must be nonnegative".into()));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.lambda_smooth > 0.0 && self.lambda_smooth.is_finite()) {
            return Err(Error::Config(format!("lambda_smooth must be positive, got {}", self.lambda_smooth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub res: f64,
    pub ncut: f64,
    pub kl: f64,
}

pub fn recon_loss(x: ArrayView2<f64>, x_hat: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if x.dim() != x_hat.dim() {
        return Err(Error::shape(format!("{:?}", x.dim()), format!("{:?}", x_hat.dim())));
    }
    let n = x.nrows() as f64;
    let diff = &x_hat - &x;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * n);
    Ok((value, diff / n))
}

/// Relaxed cut loss against an already mixed Laplacian.
pub fn ncut_loss_with_laplacian(
    h: ArrayView2<f64>,
    lap: ArrayView2<f64>,
    beta: f64,
    gamma: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = h.nrows();
    if lap.dim() != (n, n) {
        return Err(Error::shape(format!("{n}x{n} Laplacian"), format!("{:?}", lap.dim())));
    }
    let mut value = 0.0;
    let mut grad = Array2::zeros(h.raw_dim());
    if beta != 0.0 {
        let lh = lap.dot(&h);
        value += beta * (&h * &lh).sum();
        grad.scaled_add(2.0 * beta, &lh);
    }
    if gamma != 0.0 {
        let d = h.ncols();
        let mut gram = h.t().dot(&h);
        for i in 0..d {
            gram[[i, i]] -= 1.0;
        }
        value += gamma * gram.iter().map(|v| v * v).sum::<f64>();
        grad.scaled_add(4.0 * gamma, &h.dot(&gram));
    }
    Ok((value, grad))
}

pub fn ncut_loss(h: ArrayView2<f64>, graphs: &GraphPair, w: &LossWeights) -> Result<(f64, Array2<f64>)> {
    let lap = graphs.mixed_laplacian(w.alpha);
    ncut_loss_with_laplacian(h, lap.view(), w.beta, w.gamma)
}

pub fn check_row_stochastic(m: ArrayView2<f64>, tol: f64) -> Result<()> {
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        let s = row.sum();
        if !((s - 1.0).abs() <= tol) || row.iter().any(|&v| v < 0.0) {
            return Err(Error::NotStochastic { row: i, sum: s });
        }
    }
    Ok(())
}

/// `KL(P̂ ‖ Q)` and its gradient with respect to `Q`.
pub fn kl_loss(p_hat: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if p_hat.dim() != q.dim() {
        return Err(Error::shape(format!("{:?}", p_hat.dim()), format!("{:?}", q.dim())));
    }
    check_row_stochastic(p_hat, 1e-6)?;
    check_row_stochastic(q, 1e-6)?;
    let mut value = 0.0;
    let mut grad = Array2::zeros(q.raw_dim());
    ndarray::Zip::from(&mut grad).and(p_hat).and(q).for_each(|g, &p, &qv| {
        let qc = qv.max(LOG_FLOOR);
        if p > 0.0 {
            value += p * (p.max(LOG_FLOOR).ln() - qc.ln());
        }
        *g = -p / qc;
    });
    Ok((value, grad))
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.mu * parts.res + w.sigma * parts.ncut + w.tau * parts.kl
}
