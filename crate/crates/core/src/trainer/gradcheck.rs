use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_grad_logit, bce_loss};
use super::model::{backward, forward_with_cache, Ablation, Mode, Model};
use crate::error::Result;
use crate::graph::LabeledGraph;
use crate::sapool::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `||a - n|| / max(||a||, ||n||, NORM_FLOOR)`.
    pub rel_error: f64,
    /// Probes whose step-`h` and step-`h/2` differences disagree, i.e. the
    /// probe straddles a ReLU or clamp kink and the central difference is
    /// invalid.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub kinked_probes: usize,
    /// Pooling selections the check was pinned to.
    pub selections: Vec<Vec<usize>>,
}

/// Below this gradient norm a central difference at the usual step sizes is
/// dominated by rounding, so errors are measured against the floor instead.
pub const NORM_FLOOR: f64 = 1e-6;

/// Relative disagreement between the step-`h` and step-`h/2` probes above
/// which a probe is treated as straddling a kink.
const KINK_TOL: f64 = 1e-4;

fn single_loss(model: &Model, g: &LabeledGraph, refine: &RefineConfig, ab: Ablation, forced: &[Vec<usize>]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (p, _) = forward_with_cache(model, g, refine, ab, Mode::Eval, &mut rng, Some(forced))?;
    bce_loss(&[p.probability], &[g.label()])
}

/// Compares backpropagated gradients of the single-graph BCE loss with
/// central differences. The top-k selection found at the unperturbed point is
/// held fixed so the loss is smooth along every probe.
pub fn check_gradients(
    model: &Model,
    g: &LabeledGraph,
    refine: &RefineConfig,
    ablation: Ablation,
    step: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (pred, cache) = forward_with_cache(model, g, refine, ablation, Mode::Eval, &mut rng, None)?;
    let selections: Vec<Vec<usize>> = pred.trace.steps.iter().map(|s| s.kept_indices.clone()).collect();
    let mut grads = model.zeros_like();
    backward(model, &cache, refine, bce_grad_logit(pred.probability, g.label()), &mut grads);
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors_mut()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let base = single_loss(model, g, refine, ablation, &selections)?;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        if !Model::is_active(name, ablation) {
            continue;
        }
        let mut numeric = vec![0.0; a.len()];
        let mut kinks = 0;
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors_mut()[ti].data[j];
            let mut at = |delta: f64| -> Result<f64> {
                probe.tensors_mut()[ti].data[j] = orig + delta;
                single_loss(&probe, g, refine, ablation, &selections)
            };
            let (up, down) = (at(step)?, at(-step)?);
            let (up2, down2) = (at(step / 2.0)?, at(-step / 2.0)?);
            probe.tensors_mut()[ti].data[j] = orig;
            let central = (up - down) / (2.0 * step);
            *slot = central;
            // Smooth losses make both residuals O(h^2); a ReLU or clamp
            // boundary inside the probe makes at least one O(slope change).
            let r1 = central - (up2 - down2) / step;
            let r2 = ((up + down - 2.0 * base) - 4.0 * (up2 + down2 - 2.0 * base)) / step;
            if r1.abs().max(r2.abs()) > KINK_TOL * central.abs() + 1e-9 {
                kinks += 1;
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let (an, nn) = (norm(a), norm(&numeric));
        let rel_error = norm(&diff) / an.max(nn).max(NORM_FLOOR);
        tensors.push(TensorCheck {
            name: name.clone(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_error,
            kinks,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    let kinked_probes = tensors.iter().map(|t| t.kinks).sum();
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        kinked_probes,
        selections,
    })
}
