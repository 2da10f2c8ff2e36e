use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied as `θ -= lr * wd * θ` before the adaptive step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("epsilon must be positive and weight_decay nonnegative".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam over a list of flat parameter blocks.
///
/// Moment buffers are allocated lazily per block, so blocks appended later
/// (centroids joining in the second training phase) get fresh zero moments
/// while existing ones carry over.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} gradient blocks", params.len()), grads.len()));
        }
        if params.len() < self.first.len() {
            return Err(Error::shape(format!("at least {} parameter blocks", self.first.len()), params.len()));
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("block {b} of length {}", p.len()), g.len()));
            }
            if let Some(m) = self.first.get(b) {
                if m.len() != p.len() {
                    return Err(Error::shape(format!("block {b} of length {}", m.len()), p.len()));
                }
            }
        }
        while self.first.len() < params.len() {
            let len = params[self.first.len()].len();
            self.first.push(vec![0.0; len]);
            self.second.push(vec![0.0; len]);
        }

        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, epsilon, weight_decay } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[b];
            let v = &mut self.second[b];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                if weight_decay != 0.0 {
                    p[i] *= decay;
                }
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.first.iter().chain(&self.second).flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = AdamState::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.step_count, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamState::new(AdamConfig::default());
        let mut p = vec![0.5];
        opt.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = AdamConfig { weight_decay: 0.1, lr: 0.01, ..AdamConfig::default() };
        let mut opt = AdamState::new(cfg);
        let mut p = vec![2.0];
        opt.step(&mut [&mut p], &[&[0.0]]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_reimplementation() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut opt = AdamState::new(cfg);
        let mut p = vec![1.0];

        // independent scalar oracle
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=5 {
            let g = 2.0 * p[0];
            opt.step(&mut [&mut p], &[&[g]]).unwrap();

            let go = 2.0 * theta;
            m = 0.9 * m + 0.1 * go;
            v = 0.999 * v + 0.001 * go * go;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.1 * mh / (vh.sqrt() + 1e-8);

            assert!((p[0] - theta).abs() < 1e-12);
            assert!(p[0].abs() < prev);
            prev = p[0].abs();
        }
    }

    #[test]
    fn new_blocks_get_fresh_moments() {
        let mut opt = AdamState::new(AdamConfig::default());
        let mut a = vec![1.0, 1.0];
        opt.step(&mut [&mut a], &[&[1.0, 1.0]]).unwrap();
        let mut c = vec![0.0];
        opt.step(&mut [&mut a, &mut c], &[&[1.0, 1.0], &[1.0]]).unwrap();
        assert_eq!(opt.first.len(), 2);
        assert_eq!(opt.first[1].len(), 1);
        assert!(opt.step(&mut [&mut a], &[&[1.0, 1.0]]).is_err());
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut opt = AdamState::new(AdamConfig::default());
        let mut a = vec![1.0, 1.0];
        assert!(opt.step(&mut [&mut a], &[&[1.0]]).is_err());
        assert!(opt.step(&mut [&mut a], &[]).is_err());
    }
}
