//! Two-phase training: cut-regularized pretraining, k-means, then joint
//! self-supervised clustering.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use super::config::{ClusterCount, RunConfig, TargetStrategy};
use crate::assign::{
    estimate_pi, kmeans, sdcn_target, sinkhorn_target, soft_assign, soft_assign_backward, SinkhornReport, PI_FLOOR,
};
use crate::error::{Error, Result};
use crate::expr::{preprocess, ExpressionMatrix};
use crate::graph::build_graph_pair;
use crate::linalg::argmax_rows;
use crate::metrics::Metrics;
use crate::nn::{AdamState, Autoencoder, AutoencoderGrads, Checkpoint, ParamBlocks};
use crate::objective::{check_row_stochastic, kl_loss, ncut_loss_with_laplacian, recon_loss, LossParts, LossWeights};
use crate::rng;

/// Network plus (once clustering starts) centroids, as one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Autoencoder,
    pub centroids: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub net: AutoencoderGrads,
    pub centroids: Option<Array2<f64>>,
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

impl ParamBlocks for Model {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.net.blocks();
        b.extend(self.centroids.as_ref().map(flat));
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.net.blocks_mut();
        b.extend(self.centroids.as_mut().map(|c| c.as_slice_mut().expect("standard layout")));
        b
    }
}

impl ParamBlocks for ModelGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.net.blocks();
        b.extend(self.centroids.as_ref().map(flat));
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.net.blocks_mut();
        b.extend(self.centroids.as_mut().map(|c| c.as_slice_mut().expect("standard layout")));
        b
    }
}

/// Which loss terms are active, with the fixed inputs they need.
#[derive(Debug, Clone, Copy)]
pub struct Terms<'a> {
    pub recon: bool,
    /// Mixed Laplacian for the cut term.
    pub ncut: Option<ArrayView2<'a, f64>>,
    /// Fixed target distribution for the clustering term.
    pub kl: Option<ArrayView2<'a, f64>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Only active terms are populated.
    pub parts: [Option<f64>; 3],
    pub total: f64,
    pub grads: ModelGrads,
    pub latent: Array2<f64>,
    pub q: Option<Array2<f64>>,
}

impl Evaluation {
    pub fn loss_parts(&self) -> LossParts {
        LossParts {
            res: self.parts[0].unwrap_or(0.0),
            ncut: self.parts[1].unwrap_or(0.0),
            kl: self.parts[2].unwrap_or(0.0),
        }
    }
}

/// Weighted objective `μ L_res + σ L_cut + τ L_KL` over the active terms, and
/// its gradient with respect to every parameter of `model`.
///
/// `w.gamma` is used as given; callers zero it to drop the orthogonality penalty.
pub fn evaluate(model: &Model, x: ArrayView2<f64>, terms: &Terms, w: &LossWeights) -> Result<Evaluation> {
    let cache = model.net.forward(x)?;
    let h = cache.latent.view();
    let mut grad_h = Array2::zeros(h.raw_dim());
    let mut grad_recon = Array2::zeros(cache.reconstruction.raw_dim());
    let mut parts = [None; 3];
    let mut total = 0.0;

    if terms.recon {
        let (v, g) = recon_loss(x, cache.reconstruction.view())?;
        grad_recon.scaled_add(w.mu, &g);
        parts[0] = Some(v);
        total += w.mu * v;
    }
    if let Some(lap) = terms.ncut {
        let (v, g) = ncut_loss_with_laplacian(h, lap, w.beta, w.gamma)?;
        grad_h.scaled_add(w.sigma, &g);
        parts[1] = Some(v);
        total += w.sigma * v;
    }
    let mut grad_c = None;
    let mut q_out = None;
    if let Some(centroids) = &model.centroids {
        let q = soft_assign(h, centroids.view(), w.theta)?;
        let mut gc = Array2::zeros(centroids.raw_dim());
        if let Some(p_hat) = terms.kl {
            let (v, gq) = kl_loss(p_hat, q.view())?;
            let (dh, dc) = soft_assign_backward(h, centroids.view(), q.view(), w.theta, gq.view())?;
            grad_h.scaled_add(w.tau, &dh);
            gc.scaled_add(w.tau, &dc);
            parts[2] = Some(v);
            total += w.tau * v;
        }
        grad_c = Some(gc);
        q_out = Some(q);
    } else if terms.kl.is_some() {
        return Err(Error::Config("clustering loss requested before centroids exist".into()));
    }
    let net = model.net.backward(&cache, grad_h.view(), grad_recon.view())?;
    Ok(Evaluation { parts, total, grads: ModelGrads { net, centroids: grad_c }, latent: cache.latent, q: q_out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: u8,
    pub l_res: Option<f64>,
    pub l_ncut: Option<f64>,
    pub l_kl: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefreshRecord {
    pub epoch: usize,
    pub pi: Vec<f64>,
    /// Worst deviation of the target's column sums from `N π`.
    pub column_violation: f64,
    /// Absent for the squared-frequency target.
    pub sinkhorn: Option<SinkhornReport>,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub preprocess: f64,
    pub graphs: f64,
    pub pretrain: f64,
    pub kmeans: f64,
    pub train: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub labels: Vec<usize>,
    pub embedding: Array2<f64>,
    pub q: Array2<f64>,
    pub cell_ids: Vec<String>,
    pub k: usize,
    pub trace: Vec<LossRecord>,
    pub refreshes: Vec<RefreshRecord>,
    pub metrics: Option<Metrics>,
    pub timings: PhaseTimings,
    pub checkpoint: Checkpoint,
    /// The input config with `k` resolved.
    pub config: RunConfig,
}

/// The matrix training sees: `x` as is when already preprocessed or when
/// `skip_preprocess` is set, otherwise the output of the configured preprocessing.
pub fn prepare_input(x: &ExpressionMatrix, cfg: &RunConfig) -> Result<ExpressionMatrix> {
    if x.is_preprocessed() {
        Ok(x.clone())
    } else if cfg.skip_preprocess {
        ExpressionMatrix::preprocessed(x.values().clone(), x.cell_ids().to_vec(), x.gene_ids().to_vec())
    } else {
        preprocess(x, &cfg.preprocess)
    }
}

/// Number of distinct labels.
pub fn distinct_labels(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn resolve_k(cfg: &RunConfig, truth: Option<&[usize]>, n: usize) -> Result<usize> {
    let k = match (cfg.k, truth) {
        (ClusterCount::Fixed(k), _) => k,
        (ClusterCount::FromLabels, Some(t)) => distinct_labels(t),
        (ClusterCount::FromLabels, None) => {
            return Err(Error::Config("k = from-labels needs ground-truth labels".into()))
        }
    };
    if k < 2 || k > n {
        return Err(Error::Config(format!("k must lie in 2..={n}, got {k}")));
    }
    Ok(k)
}

fn step(adam: &mut AdamState, model: &mut Model, grads: &ModelGrads) -> Result<()> {
    let g = grads.blocks();
    adam.step(&mut model.blocks_mut(), &g)
}

fn ensure_finite(total: f64, epoch: usize) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalUnderflow(format!("loss became non-finite at epoch {epoch}")))
    }
}

/// Train on `x`; metrics are computed when `truth` is given.
///
/// With `strict_sequential` the whole run executes on one thread.
pub fn train(x: &ExpressionMatrix, truth: Option<&[usize]>, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.strict_sequential {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| train_inner(x, truth, cfg))
    } else {
        train_inner(x, truth, cfg)
    }
}

fn train_inner(x: &ExpressionMatrix, truth: Option<&[usize]>, cfg: &RunConfig) -> Result<RunResult> {
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let n = x.n_cells();
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::LengthMismatch(n, t.len()));
        }
    }
    let k = resolve_k(cfg, truth, n)?;
    let mut resolved = cfg.clone();
    resolved.k = ClusterCount::Fixed(k);

    let t0 = Instant::now();
    let x = prepare_input(x, cfg)?;
    timings.preprocess = t0.elapsed().as_secs_f64();
    let values = x.values().view();

    let t0 = Instant::now();
    let lap = if cfg.use_ncut {
        let graphs = build_graph_pair(&x, &cfg.graph)?;
        Some(graphs.mixed_laplacian(cfg.effective_alpha()))
    } else {
        None
    };
    timings.graphs = t0.elapsed().as_secs_f64();

    let weights = LossWeights { gamma: cfg.effective_gamma(), ..cfg.weights };
    let net = Autoencoder::new(x.n_genes(), &cfg.layers, &mut rng::stream(cfg.seed, "init"))?;
    let mut model = Model { net, centroids: None };
    let mut adam = AdamState::new(cfg.optimizer);
    let mut trace = Vec::with_capacity(cfg.pretrain_epochs + cfg.train_epochs);

    let t0 = Instant::now();
    let phase1 = Terms { recon: cfg.use_recon, ncut: lap.as_ref().map(|l| l.view()), kl: None };
    for epoch in 1..=cfg.pretrain_epochs {
        let ev = evaluate(&model, values, &phase1, &weights)?;
        ensure_finite(ev.total, epoch)?;
        trace.push(LossRecord {
            epoch,
            phase: 1,
            l_res: ev.parts[0],
            l_ncut: ev.parts[1],
            l_kl: None,
            total: ev.total,
        });
        step(&mut adam, &mut model, &ev.grads)?;
    }
    timings.pretrain = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let h = model.net.encode(values)?;
    let km = kmeans(h.view(), k, &cfg.kmeans, cfg.seed)?;
    model.centroids = Some(km.state.centroids);
    timings.kmeans = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let blocks: Vec<(bool, bool, bool)> = if cfg.sequential_phase2 {
        vec![(false, true, false), (true, false, false), (false, false, true)]
    } else {
        vec![(true, true, true)]
    };
    let mut refreshes = Vec::new();
    let mut p_hat: Option<Array2<f64>> = None;
    let mut epoch = cfg.pretrain_epochs;
    for (use_res, use_cut, use_kl) in blocks {
        let use_res = use_res && cfg.use_recon;
        let use_kl = use_kl && cfg.use_kl;
        for local in 0..cfg.train_epochs {
            epoch += 1;
            if use_kl && local % cfg.target_refresh_every == 0 {
                let h = model.net.encode(values)?;
                let centroids = model.centroids.as_ref().expect("centroids set");
                let q = soft_assign(h.view(), centroids.view(), weights.theta)?;
                let (target, record) = refresh_target(q.view(), epoch, cfg)?;
                refreshes.push(record);
                p_hat = Some(target);
            }
            let terms = Terms {
                recon: use_res,
                ncut: lap.as_ref().filter(|_| use_cut).map(|l| l.view()),
                kl: p_hat.as_ref().filter(|_| use_kl).map(|p| p.view()),
            };
            let ev = evaluate(&model, values, &terms, &weights)?;
            ensure_finite(ev.total, epoch)?;
            trace.push(LossRecord {
                epoch,
                phase: 2,
                l_res: ev.parts[0],
                l_ncut: ev.parts[1],
                l_kl: ev.parts[2],
                total: ev.total,
            });
            step(&mut adam, &mut model, &ev.grads)?;
        }
    }
    timings.train = t0.elapsed().as_secs_f64();

    let embedding = model.net.encode(values)?;
    let centroids = model.centroids.clone().expect("centroids set");
    let q = soft_assign(embedding.view(), centroids.view(), weights.theta)?;
    check_row_stochastic(q.view(), 1e-6)?;
    let labels = argmax_rows(q.view());
    let metrics = truth.map(|t| Metrics::compute(&labels, t)).transpose()?;
    timings.total = start.elapsed().as_secs_f64();

    Ok(RunResult {
        labels,
        embedding,
        q,
        cell_ids: x.cell_ids().to_vec(),
        k,
        trace,
        refreshes,
        metrics,
        timings,
        checkpoint: Checkpoint { autoencoder: model.net, centroids: Some(centroids), adam },
        config: resolved,
    })
}

fn refresh_target(q: ArrayView2<f64>, epoch: usize, cfg: &RunConfig) -> Result<(Array2<f64>, RefreshRecord)> {
    let n = q.nrows() as f64;
    let pi = estimate_pi(q, PI_FLOOR);
    let (target, report) = match cfg.target_strategy {
        TargetStrategy::Ot => {
            let (p, r) = sinkhorn_target(q, pi.view(), cfg.weights.lambda_smooth, &cfg.sinkhorn)?;
            (p, Some(r))
        }
        TargetStrategy::Sdcn => (sdcn_target(q)?, None),
    };
    let cols: Array1<f64> = target.sum_axis(ndarray::Axis(0));
    let column_violation = cols.iter().zip(pi.iter()).map(|(c, p)| (c - n * p).abs()).fold(0.0, f64::max);
    Ok((target, RefreshRecord { epoch, pi: pi.to_vec(), column_violation, sinkhorn: report }))
}
