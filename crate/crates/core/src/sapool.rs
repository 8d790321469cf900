//! Importance-based graph simplification.
//!
//! One pooling step projects node features with a bias-free two-layer MLP,
//! propagates them with APPNP over the re-normalized adjacency, scores every
//! node against a learnable direction `h`, keeps the top fraction `k`, and
//! gates the kept rows by `sigmoid(score)`. The step repeats with a growing
//! `k` until the graph has at most `T` nodes.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induced_edges, validate_selection, LabeledGraph, NormalizedAdjacency};
use crate::ops::{self, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KSchedule {
    pub start: f64,
    pub step: f64,
    pub cap: f64,
}

impl Default for KSchedule {
    fn default() -> Self {
        KSchedule {
            start: 0.1,
            step: 0.1,
            cap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub threshold_t: usize,
    pub appnp_l: usize,
    pub appnp_alpha: f64,
    pub k_schedule: KSchedule,
    pub max_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            threshold_t: 40,
            appnp_l: 8,
            appnp_alpha: 0.2,
            k_schedule: KSchedule::default(),
            max_iters: 16,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let k = &self.k_schedule;
        if self.threshold_t == 0 {
            return Err(Error::config("refine.threshold_t must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.appnp_alpha) {
            return Err(Error::config("refine.appnp_alpha must lie in [0, 1]"));
        }
        if !(k.start > 0.0 && k.start <= k.cap && k.cap < 1.0) {
            return Err(Error::config("refine.k_schedule needs 0 < start <= cap < 1"));
        }
        if k.step < 0.0 {
            return Err(Error::config("refine.k_schedule.step must be non-negative"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("refine.max_iters must be at least 1"));
        }
        Ok(())
    }

    /// Pooling ratio used at the `step`-th (0-based) pooling iteration.
    pub fn k_at(&self, step: usize) -> f64 {
        let s = &self.k_schedule;
        let raw = s.start + step as f64 * s.step;
        // snap to a 1e-12 grid so 0.1 + 2 * 0.1 reads as 0.3
        ((raw * 1e12).round() / 1e12).min(s.cap)
    }
}

/// Number of nodes kept from `n` at ratio `k`: `max(1, ceil(k n))`.
pub fn keep_count(n: usize, k: f64) -> usize {
    ((k * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Learnable projector and scoring parameters, shared by every pooling step.
#[derive(Debug, Clone, PartialEq)]
pub struct SAPoolParams {
    /// First projector layer for raw input features (`in × hidden`).
    pub w_m2_in: Array2<f64>,
    /// First projector layer for already-pooled features (`hidden × hidden`).
    pub w_m2_hidden: Array2<f64>,
    pub w_m1: Array2<f64>,
    pub h: Array1<f64>,
    pub dropout_rate: f64,
}

impl SAPoolParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, hidden: usize, dropout_rate: f64) -> Self {
        SAPoolParams {
            w_m2_in: ops::glorot(rng, in_dim, hidden),
            w_m2_hidden: ops::glorot(rng, hidden, hidden),
            w_m1: ops::glorot(rng, hidden, hidden),
            h: ops::glorot_vec(rng, hidden),
            dropout_rate,
        }
    }

    pub fn zeros_like(&self) -> Self {
        SAPoolParams {
            w_m2_in: Array2::zeros(self.w_m2_in.raw_dim()),
            w_m2_hidden: Array2::zeros(self.w_m2_hidden.raw_dim()),
            w_m1: Array2::zeros(self.w_m1.raw_dim()),
            h: Array1::zeros(self.h.len()),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_m2_in.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_m1.ncols()
    }

    fn first_layer(&self, stage: PoolStage) -> &Array2<f64> {
        match stage {
            PoolStage::First => &self.w_m2_in,
            PoolStage::Repeat => &self.w_m2_hidden,
        }
    }
}

/// Which first projector layer a pooling step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolStage {
    /// Input is the raw feature matrix.
    First,
    /// Input is the gated output of an earlier step.
    Repeat,
}

struct ProjectorCache {
    pre: Array2<f64>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
}

fn project_with_cache<R: Rng + ?Sized>(
    x: &Array2<f64>,
    p: &SAPoolParams,
    stage: PoolStage,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<f64>, ProjectorCache)> {
    let w2 = p.first_layer(stage);
    if x.ncols() != w2.nrows() {
        return Err(Error::input(format!(
            "projector expects {} input columns, got {}",
            w2.nrows(),
            x.ncols()
        )));
    }
    let pre = x.dot(w2);
    let act = ops::relu(&pre);
    let mut out = act.dot(&p.w_m1);
    let mask = if training && p.dropout_rate > 0.0 {
        let m = ops::dropout_mask(rng, out.dim(), p.dropout_rate);
        out *= &m;
        Some(m)
    } else {
        None
    };
    Ok((out, ProjectorCache { pre, act, mask }))
}

/// `Dropout(ReLU(X W_M2) W_M1)` with inverted dropout in training mode only.
pub fn project_features<R: Rng + ?Sized>(
    x: &Array2<f64>,
    p: &SAPoolParams,
    stage: PoolStage,
    training: bool,
    rng: &mut R,
) -> Result<Array2<f64>> {
    project_with_cache(x, p, stage, training, rng).map(|(out, _)| out)
}

/// `l` steps of `X ← (1-α) Â X + α X⁰`.
pub fn appnp_propagate(
    x0: &Array2<f64>,
    norm_adj: &NormalizedAdjacency,
    l: usize,
    alpha: f64,
) -> Result<Array2<f64>> {
    if norm_adj.n() != x0.nrows() {
        return Err(Error::input(format!(
            "APPNP operator is {}x{} but features have {} rows",
            norm_adj.n(),
            norm_adj.n(),
            x0.nrows()
        )));
    }
    let teleport = x0 * alpha;
    let mut x = x0.clone();
    for _ in 0..l {
        let mut next = norm_adj.matmul(x.view());
        next *= 1.0 - alpha;
        next += &teleport;
        x = next;
    }
    Ok(x)
}

/// Backward of [`appnp_propagate`]; returns the gradient for `x0`.
fn appnp_backward(grad: &Array2<f64>, norm_adj: &NormalizedAdjacency, l: usize, alpha: f64) -> Array2<f64> {
    let mut g = grad.clone();
    let mut g0 = Array2::zeros(grad.raw_dim());
    for _ in 0..l {
        g0.scaled_add(alpha, &g);
        let mut prev = norm_adj.matmul(g.view());
        prev *= 1.0 - alpha;
        g = prev;
    }
    g0 += &g;
    g0
}

/// `z = X h / ||h||`.
pub fn score_nodes(x: &Array2<f64>, h: &Array1<f64>) -> Result<Array1<f64>> {
    if x.ncols() != h.len() {
        return Err(Error::input("score vector width differs from feature width"));
    }
    let norm = ops::l2_norm(h.view());
    if norm <= f64::MIN_POSITIVE || !norm.is_finite() {
        return Err(Error::Numerical("scoring vector has zero norm".into()));
    }
    Ok(x.dot(&(h / norm)))
}

/// Ascending indices of the `max(1, ceil(k N))` highest scores; ties go to
/// the lower index.
pub fn select_topk(z: &Array1<f64>, k: f64) -> Result<Vec<usize>> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::input(format!("pooling ratio {k} outside (0, 1)")));
    }
    if z.is_empty() {
        return Err(Error::input("cannot select from an empty score vector"));
    }
    let m = keep_count(z.len(), k);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        z[b].partial_cmp(&z[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    if m < order.len() {
        order.select_nth_unstable_by(m - 1, cmp);
        order.truncate(m);
    }
    order.sort_unstable();
    Ok(order)
}

/// Saved forward state of one pooling step.
pub(crate) struct PoolCache {
    stage: PoolStage,
    input: Array2<f64>,
    projector: ProjectorCache,
    adj: NormalizedAdjacency,
    propagated: Array2<f64>,
    h_unit: Array1<f64>,
    h_norm: f64,
    idx: Vec<usize>,
    gate: Array1<f64>,
}

pub(crate) struct PoolOutput {
    pub features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub idx: Vec<usize>,
    pub cache: PoolCache,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pool_step<R: Rng + ?Sized>(
    features: Array2<f64>,
    edges: &[(usize, usize)],
    params: &SAPoolParams,
    cfg: &RefineConfig,
    stage: PoolStage,
    k: f64,
    training: bool,
    rng: &mut R,
    forced_idx: Option<&[usize]>,
) -> Result<PoolOutput> {
    let n = features.nrows();
    let (projected, projector) = project_with_cache(&features, params, stage, training, rng)?;
    let adj = NormalizedAdjacency::from_edges(n, edges);
    let propagated = appnp_propagate(&projected, &adj, cfg.appnp_l, cfg.appnp_alpha)?;
    let z = score_nodes(&propagated, &params.h)?;
    let idx = match forced_idx {
        Some(idx) => {
            validate_selection(idx, n)?;
            idx.to_vec()
        }
        None => select_topk(&z, k)?,
    };
    let gate: Array1<f64> = idx.iter().map(|&i| sigmoid(z[i])).collect();
    let mut out = propagated.select(Axis(0), &idx);
    out *= &gate.view().insert_axis(Axis(1));
    let new_edges = induced_edges(n, edges, &idx);
    let h_norm = ops::l2_norm(params.h.view());
    Ok(PoolOutput {
        features: out,
        edges: new_edges,
        idx: idx.clone(),
        cache: PoolCache {
            stage,
            input: features,
            projector,
            adj,
            h_unit: &params.h / h_norm,
            h_norm,
            propagated,
            idx,
            gate,
        },
    })
}

/// Backpropagates through one pooling step. Accumulates parameter gradients
/// into `grads` and returns the gradient for the step's input features.
pub(crate) fn pool_step_backward(
    grad_out: &Array2<f64>,
    cache: &PoolCache,
    params: &SAPoolParams,
    cfg: &RefineConfig,
    grads: &mut SAPoolParams,
) -> Array2<f64> {
    let n = cache.propagated.nrows();
    let width = cache.propagated.ncols();
    let mut g_prop = Array2::<f64>::zeros((n, width));
    let mut g_z = Array1::<f64>::zeros(n);
    for (p, &i) in cache.idx.iter().enumerate() {
        let s = cache.gate[p];
        let go = grad_out.row(p);
        let xr = cache.propagated.row(i);
        g_prop.row_mut(i).scaled_add(s, &go);
        g_z[i] = go.dot(&xr) * s * (1.0 - s);
    }
    // z = X ĥ
    for (mut row, &gz) in g_prop.rows_mut().into_iter().zip(g_z.iter()) {
        if gz != 0.0 {
            row.scaled_add(gz, &cache.h_unit);
        }
    }
    let g_hunit = cache.propagated.t().dot(&g_z);
    let radial = cache.h_unit.dot(&g_hunit);
    grads.h.scaled_add(1.0 / cache.h_norm, &(&g_hunit - &(&cache.h_unit * radial)));

    let mut g_proj = appnp_backward(&g_prop, &cache.adj, cfg.appnp_l, cfg.appnp_alpha);
    if let Some(mask) = &cache.projector.mask {
        g_proj *= mask;
    }
    let g_act = ops::linear_backward(&g_proj, cache.projector.act.view(), &params.w_m1, &mut grads.w_m1);
    let g_pre = ops::relu_backward(&g_act, &cache.projector.pre);
    let (w2, gw2) = match cache.stage {
        PoolStage::First => (&params.w_m2_in, &mut grads.w_m2_in),
        PoolStage::Repeat => (&params.w_m2_hidden, &mut grads.w_m2_hidden),
    };
    ops::linear_backward(&g_pre, cache.input.view(), w2, gw2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BelowThreshold,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub n_before: usize,
    pub n_after: usize,
    pub k_used: f64,
    /// Indices into the step's input graph, ascending.
    pub kept_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub steps: Vec<RefineStep>,
    pub terminated_by: Termination,
}

impl RefineTrace {
    /// Original node indices that survive every step, ascending.
    pub fn surviving_nodes(&self, n: usize) -> Vec<usize> {
        let mut alive: Vec<usize> = (0..n).collect();
        for step in &self.steps {
            alive = step.kept_indices.iter().map(|&i| alive[i]).collect();
        }
        alive
    }

    pub fn final_count(&self, n: usize) -> usize {
        self.steps.last().map_or(n, |s| s.n_after)
    }
}

pub(crate) struct RefineOutput {
    pub features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub trace: RefineTrace,
    pub caches: Vec<PoolCache>,
}

/// Runs the adaptive pooling loop. `forced` pins the selection of each step
/// (used to differentiate along a fixed selection path).
pub(crate) fn refine_forward<R: Rng + ?Sized>(
    features: &Array2<f64>,
    edges: &[(usize, usize)],
    params: &SAPoolParams,
    cfg: &RefineConfig,
    training: bool,
    rng: &mut R,
    forced: Option<&[Vec<usize>]>,
) -> Result<RefineOutput> {
    let mut feats = features.clone();
    let mut cur_edges = edges.to_vec();
    let mut steps = Vec::new();
    let mut caches = Vec::new();
    let mut terminated_by = Termination::BelowThreshold;
    while feats.nrows() > cfg.threshold_t {
        if steps.len() == cfg.max_iters {
            terminated_by = Termination::MaxIters;
            break;
        }
        if let Some(f) = forced {
            if steps.len() == f.len() {
                break;
            }
        }
        let k = cfg.k_at(steps.len());
        let stage = if steps.is_empty() {
            PoolStage::First
        } else {
            PoolStage::Repeat
        };
        let n_before = feats.nrows();
        let forced_idx = forced.map(|f| f[steps.len()].as_slice());
        let out = pool_step(feats, &cur_edges, params, cfg, stage, k, training, rng, forced_idx)?;
        steps.push(RefineStep {
            n_before,
            n_after: out.idx.len(),
            k_used: k,
            kept_indices: out.idx,
        });
        caches.push(out.cache);
        feats = out.features;
        cur_edges = out.edges;
    }
    Ok(RefineOutput {
        features: feats,
        edges: cur_edges,
        trace: RefineTrace {
            steps,
            terminated_by,
        },
        caches,
    })
}

pub(crate) fn refine_backward(
    grad_out: &Array2<f64>,
    caches: &[PoolCache],
    params: &SAPoolParams,
    cfg: &RefineConfig,
    grads: &mut SAPoolParams,
) {
    let mut g = grad_out.clone();
    for cache in caches.iter().rev() {
        g = pool_step_backward(&g, cache, params, cfg, grads);
    }
}

/// One pooling step on a labeled graph at ratio `k`. Returns the simplified
/// graph (gated hidden features, induced edges, sliced metadata) and the
/// kept indices.
pub fn pool_once<R: Rng + ?Sized>(
    g: &LabeledGraph,
    params: &SAPoolParams,
    cfg: &RefineConfig,
    stage: PoolStage,
    k: f64,
    training: bool,
    rng: &mut R,
) -> Result<(LabeledGraph, Vec<usize>)> {
    let out = pool_step(g.features().clone(), g.edges(), params, cfg, stage, k, training, rng, None)?;
    let sub = crate::graph::induced_subgraph(g, &out.idx)?.with_features(out.features)?;
    Ok((sub, out.idx))
}

/// Simplifies `g` until it has at most `threshold_t` nodes (or the iteration
/// bound is hit). Graphs already small enough come back unchanged with an
/// empty trace.
pub fn refine_graph<R: Rng + ?Sized>(
    g: &LabeledGraph,
    params: &SAPoolParams,
    cfg: &RefineConfig,
    training: bool,
    rng: &mut R,
) -> Result<(LabeledGraph, RefineTrace)> {
    cfg.validate()?;
    let out = refine_forward(g.features(), g.edges(), params, cfg, training, rng, None)?;
    if out.trace.steps.is_empty() {
        return Ok((g.clone(), out.trace));
    }
    let alive = out.trace.surviving_nodes(g.node_count());
    let sub = crate::graph::induced_subgraph(g, &alive)?.with_features(out.features)?;
    Ok((sub, out.trace))
}
