//! Training loop, evaluation helpers and model persistence.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod split;

pub use checkpoint::{config_hash, Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckReport, TensorCheck, NORM_FLOOR};
pub use loss::{bce_grad_logit, bce_loss, BCE_EPS};
pub use model::{classify, forward, Ablation, ClassifierParams, Mode, Model, ModelConfig, Prediction, TensorMut};
pub use optim::{AdamW, AdamWConfig};
pub use split::{split_dataset, split_indices, SplitIndices};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::metrics::{compute_metrics, Metrics};
use crate::sapool::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total optimizer steps.
    pub max_iterations: usize,
    pub optimizer: AdamWConfig,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Probability at or above which a graph is labeled vulnerable.
    pub threshold: f64,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            max_iterations: 3000,
            optimizer: AdamWConfig::default(),
            split: [0.7, 0.1, 0.2],
            threshold: 0.5,
            patience: None,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("train.max_iterations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("train.threshold must lie in [0, 1]"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("train.patience must be positive when set"));
        }
        self.optimizer.validate()?;
        split_indices(0, self.split, 0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub step: usize,
    pub val: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl History {
    /// One row per step; validation columns are filled on steps where a
    /// validation ran.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,val_accuracy,val_precision,val_recall,val_f1\n");
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            out.push_str(&format!("{},{},{}", s.step, s.epoch, s.loss));
            match evals.peek() {
                Some(e) if e.step == s.step => {
                    let m = &e.val;
                    out.push_str(&format!(",{},{},{},{}\n", m.accuracy, m.precision, m.recall, m.f1));
                    evals.next();
                }
                _ => out.push_str(",,,,\n"),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the validation with the highest F1 (first one on ties).
    pub best: Model,
    pub best_step: usize,
    pub best_val_f1: f64,
    pub last: Model,
    pub history: History,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

/// Runs `f` on a pool with `jobs` threads (0 = rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Evaluation-mode predictions in input order, labeled at `threshold`.
pub fn predict_all(
    model: &Model,
    graphs: &[LabeledGraph],
    refine: &RefineConfig,
    ablation: Ablation,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    graphs
        .par_iter()
        .map(|g| {
            let mut p = forward(model, g, refine, ablation, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
            p.predicted_label = (p.probability >= threshold) as u8;
            Ok(p)
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    graphs: &[LabeledGraph],
    refine: &RefineConfig,
    ablation: Ablation,
    threshold: f64,
) -> Result<Metrics> {
    let preds = predict_all(model, graphs, refine, ablation, threshold)?;
    let p: Vec<u8> = preds.iter().map(|p| p.predicted_label).collect();
    let y: Vec<u8> = graphs.iter().map(|g| g.label()).collect();
    compute_metrics(&p, &y)
}

/// Fixed partition of a batch so gradient sums do not depend on thread count.
const GRAD_CHUNKS: usize = 16;

/// Mean batch loss and summed gradients (already divided by batch size).
fn batch_gradients(
    model: &Model,
    batch: &[&LabeledGraph],
    refine: &RefineConfig,
    ablation: Ablation,
    seed: u64,
    step: usize,
) -> Result<(f64, Model)> {
    let b = batch.len() as f64;
    let chunk = batch.len().div_ceil(GRAD_CHUNKS).max(1);
    let parts: Vec<Result<(f64, Model)>> = batch
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, graphs)| {
            let mut grads = model.zeros_like();
            let mut loss = 0.0;
            for (k, g) in graphs.iter().enumerate() {
                let pos = (ci * chunk + k) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, step as u64, pos));
                let (pred, cache) =
                    model::forward_with_cache(model, g, refine, ablation, Mode::Train, &mut rng, None)?;
                loss += bce_loss(&[pred.probability], &[g.label()])?;
                let gl = bce_grad_logit(pred.probability, g.label()) / b;
                model::backward(model, &cache, refine, gl, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = model.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, mut g) = part?;
        loss += l;
        total.add_scaled(&mut g, 1.0);
    }
    Ok((loss / b, total))
}

/// Mini-batch AdamW on `train_set`, validating at every epoch end and at the
/// final step. When `val_set` is empty the training set is used for
/// validation.
pub fn train(
    train_set: &[LabeledGraph],
    val_set: &[LabeledGraph],
    mut model: Model,
    refine: &RefineConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    refine.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::input("training set is empty"))?
        .label();
    if train_set.iter().all(|g| g.label() == first) {
        return Err(Error::SingleClass(first));
    }
    let val = if val_set.is_empty() { train_set } else { val_set };
    let ablation = cfg.ablation;
    let mut opt = AdamW::new(cfg.optimizer);
    let mut history = History::default();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut epoch = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    loop {
        epoch += 1;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, u64::MAX, epoch as u64)));
        let mut done = false;
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&LabeledGraph> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, refine, ablation, seed, step)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} at step {step}")));
            }
            {
                let mut ps: Vec<&mut [f64]> = Vec::new();
                let mut gs: Vec<&[f64]> = Vec::new();
                let mut pt = model.tensors_mut();
                let gt = grads.tensors_mut();
                for (p, g) in pt.iter_mut().zip(gt) {
                    ps.push(&mut *p.data);
                    gs.push(g.data);
                }
                opt.step(&mut ps, &gs);
            }
            history.steps.push(StepRecord { step, epoch, loss });
            if step == cfg.max_iterations {
                done = true;
                break;
            }
        }
        let m = evaluate(&model, val, refine, ablation, cfg.threshold)?;
        history.evals.push(EvalRecord { epoch, step, val: m });
        if best.as_ref().is_none_or(|b| m.f1 > b.2) {
            best = Some((model.clone(), step, m.f1));
            stale = 0;
        } else {
            stale += 1;
        }
        if done || cfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    let (best_model, best_step, best_val_f1) = best.expect("at least one validation ran");
    Ok(TrainOutcome {
        best: best_model,
        best_step,
        best_val_f1,
        last: model,
        history,
    })
}
