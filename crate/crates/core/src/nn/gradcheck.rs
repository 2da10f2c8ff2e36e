//! Central-difference gradient checking over parameter blocks.

use rand::seq::index::sample;

use super::autoencoder::ParamBlocks;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per block; blocks at most this long are checked exhaustively.
    pub samples_per_block: usize,
    /// Denominator floor of the relative error, so near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_block: 200, abs_floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` against central differences of `loss` at `params`.
///
/// `analytic` must have the same block layout as `params`.
pub fn gradcheck<P, F>(
    params: &P,
    analytic: &[&[f64]],
    mut loss: F,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    P: ParamBlocks + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let lens: Vec<usize> = probe.blocks().iter().map(|b| b.len()).collect();
    assert_eq!(lens.len(), analytic.len(), "gradient block count differs from parameters");
    let mut rng = rng::stream(opts.seed, "gradcheck");
    let mut blocks = Vec::with_capacity(lens.len());
    for (b, &len) in lens.iter().enumerate() {
        assert_eq!(analytic[b].len(), len, "gradient block {b} has the wrong length");
        let coords: Vec<usize> = if len <= opts.samples_per_block {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.samples_per_block).into_vec();
            c.sort_unstable();
            c
        };
        let mut report = BlockReport { block: b, checked: coords.len(), max_rel_error: 0.0, worst_index: 0 };
        for &i in &coords {
            let orig = probe.blocks()[b][i];
            probe.blocks_mut()[b][i] = orig + opts.step;
            let plus = loss(&probe);
            probe.blocks_mut()[b][i] = orig - opts.step;
            let minus = loss(&probe);
            probe.blocks_mut()[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic[b][i], numeric, opts.abs_floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = i;
            }
        }
        blocks.push(report);
    }
    GradCheckReport { tolerance, blocks }
}

/// Plain vector-of-blocks parameters, handy for checking free-standing functions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<Vec<f64>>);

impl ParamBlocks for FlatParams {
    fn blocks(&self) -> Vec<&[f64]> {
        self.0.iter().map(Vec::as_slice).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.iter_mut().map(Vec::as_mut_slice).collect()
    }
}
