//! Full model: refinement, input adapters, encoder and classification head,
//! with a single forward/backward path shared by training, evaluation and
//! gradient checking.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, BlockSwitches, EncoderConfig, EncoderParams, GraphEmbedding};
use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, NormalizedAdjacency};
use crate::ops::{self, sigmoid};
use crate::sapool::{self, RefineConfig, RefineTrace, SAPoolParams};

/// Which mechanisms are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub use_hgr: bool,
    pub use_gnn: bool,
    pub use_gt: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_hgr: true,
            use_gnn: true,
            use_gt: true,
        }
    }
}

impl Ablation {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn switches(&self) -> BlockSwitches {
        BlockSwitches {
            gnn: self.use_gnn,
            gt: self.use_gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Dropout after the refinement projector.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Two-layer bias-free head producing a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w_c1: Array2<f64>,
    pub w_c2: Array1<f64>,
}

/// `sigmoid(w_c2 · ReLU(o W_c1))`.
pub fn classify(o: &GraphEmbedding, params: &ClassifierParams) -> f64 {
    let o = Array1::from_vec(o.0.clone());
    let hidden = o.dot(&params.w_c1).mapv(|v| v.max(0.0));
    sigmoid(hidden.dot(&params.w_c2))
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub sapool: SAPoolParams,
    /// Maps raw features (graphs that skipped refinement) to the encoder width.
    pub adapter_raw: Array2<f64>,
    /// Maps refined hidden features to the encoder width.
    pub adapter_refined: Array2<f64>,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

/// Mutable view of one named tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn push2<'a>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut Array2<f64>) {
    let shape = a.shape().to_vec();
    out.push(TensorMut {
        name,
        shape,
        data: a.as_slice_mut().expect("contiguous tensor"),
    });
}

fn push1<'a>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut Array1<f64>) {
    let shape = a.shape().to_vec();
    out.push(TensorMut {
        name,
        shape,
        data: a.as_slice_mut().expect("contiguous tensor"),
    });
}

impl Model {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 {
            return Err(Error::config("input feature width must be positive"));
        }
        let h = cfg.encoder.hidden;
        let sapool = SAPoolParams::init(rng, in_dim, h, cfg.dropout);
        let adapter_raw = ops::glorot(rng, in_dim, h);
        let adapter_refined = ops::glorot(rng, h, h);
        let encoder = EncoderParams::init(rng, &cfg.encoder)?;
        let classifier = ClassifierParams {
            w_c1: ops::glorot(rng, h, h),
            w_c2: ops::glorot_vec(rng, h),
        };
        Ok(Model {
            sapool,
            adapter_raw,
            adapter_refined,
            encoder,
            classifier,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            sapool: self.sapool.zeros_like(),
            adapter_raw: Array2::zeros(self.adapter_raw.raw_dim()),
            adapter_refined: Array2::zeros(self.adapter_refined.raw_dim()),
            encoder: self.encoder.zeros_like(),
            classifier: ClassifierParams {
                w_c1: Array2::zeros(self.classifier.w_c1.raw_dim()),
                w_c2: Array1::zeros(self.classifier.w_c2.len()),
            },
        }
    }

    pub fn in_dim(&self) -> usize {
        self.adapter_raw.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.adapter_raw.ncols()
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        push2(&mut out, "sapool.w_m2_in".into(), &mut self.sapool.w_m2_in);
        push2(&mut out, "sapool.w_m2_hidden".into(), &mut self.sapool.w_m2_hidden);
        push2(&mut out, "sapool.w_m1".into(), &mut self.sapool.w_m1);
        push1(&mut out, "sapool.h".into(), &mut self.sapool.h);
        push2(&mut out, "adapter.raw".into(), &mut self.adapter_raw);
        push2(&mut out, "adapter.refined".into(), &mut self.adapter_refined);
        for (b, block) in self.encoder.blocks.iter_mut().enumerate() {
            push2(&mut out, format!("encoder.block{b}.w_g"), &mut block.w_g);
            for (i, head) in block.heads.iter_mut().enumerate() {
                push2(&mut out, format!("encoder.block{b}.head{i}.w_q"), &mut head.w_q);
                push2(&mut out, format!("encoder.block{b}.head{i}.w_k"), &mut head.w_k);
                push2(&mut out, format!("encoder.block{b}.head{i}.w_v"), &mut head.w_v);
            }
            let ffn = &mut block.ffn;
            push2(&mut out, format!("encoder.block{b}.ffn.w_f1"), &mut ffn.w_f1);
            push2(&mut out, format!("encoder.block{b}.ffn.w_f2"), &mut ffn.w_f2);
            push1(&mut out, format!("encoder.block{b}.ffn.ln1.scale"), &mut ffn.ln1.scale);
            push1(&mut out, format!("encoder.block{b}.ffn.ln1.shift"), &mut ffn.ln1.shift);
            push1(&mut out, format!("encoder.block{b}.ffn.ln2.scale"), &mut ffn.ln2.scale);
            push1(&mut out, format!("encoder.block{b}.ffn.ln2.shift"), &mut ffn.ln2.shift);
        }
        push2(&mut out, "classifier.w_c1".into(), &mut self.classifier.w_c1);
        push1(&mut out, "classifier.w_c2".into(), &mut self.classifier.w_c2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.clone().tensors_mut().iter().map(|t| t.data.len()).sum()
    }

    /// Whether a tensor takes part in the forward pass under `ablation`.
    pub fn is_active(name: &str, ablation: Ablation) -> bool {
        if name.starts_with("sapool.") || name == "adapter.refined" {
            return ablation.use_hgr;
        }
        if name.starts_with("encoder.") {
            return if name.ends_with(".w_g") {
                ablation.use_gnn
            } else {
                ablation.use_gt
            };
        }
        true
    }

    pub fn active_parameter_count(&self, ablation: Ablation) -> usize {
        self.clone()
            .tensors_mut()
            .iter()
            .filter(|t| Self::is_active(&t.name, ablation))
            .map(|t| t.data.len())
            .sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &mut Model, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors_mut()) {
            a.data.iter_mut().zip(b.data.iter()).for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Output of a forward pass on one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    /// `probability >= 0.5` from [`forward`]; batch helpers relabel at the
    /// configured threshold.
    pub predicted_label: u8,
    pub logit: f64,
    pub embedding: GraphEmbedding,
    pub trace: RefineTrace,
}

pub(crate) struct ForwardCache {
    refine: Option<Vec<sapool::PoolCache>>,
    adapter_input: Array2<f64>,
    encoder: encoder::EncoderCache,
    o: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
}

pub(crate) fn forward_with_cache<R: Rng + ?Sized>(
    model: &Model,
    g: &LabeledGraph,
    refine: &RefineConfig,
    ablation: Ablation,
    mode: Mode,
    rng: &mut R,
    forced: Option<&[Vec<usize>]>,
) -> Result<(Prediction, ForwardCache)> {
    if g.feature_dim() != model.in_dim() {
        return Err(Error::input(format!(
            "graph '{}' has feature width {}, model expects {}",
            g.name(),
            g.feature_dim(),
            model.in_dim()
        )));
    }
    let training = mode == Mode::Train;
    let (features, edges, trace, caches) = if ablation.use_hgr {
        let out = sapool::refine_forward(
            g.features(),
            g.edges(),
            &model.sapool,
            refine,
            training,
            rng,
            forced,
        )?;
        if out.trace.steps.is_empty() {
            (g.features().clone(), g.edges().to_vec(), out.trace, None)
        } else {
            (out.features, out.edges, out.trace, Some(out.caches))
        }
    } else {
        (
            g.features().clone(),
            g.edges().to_vec(),
            RefineTrace {
                steps: Vec::new(),
                terminated_by: sapool::Termination::BelowThreshold,
            },
            None,
        )
    };
    let adapter = if caches.is_some() {
        &model.adapter_refined
    } else {
        &model.adapter_raw
    };
    let x = features.dot(adapter);
    let adj = NormalizedAdjacency::from_edges(x.nrows(), &edges);
    let (o, enc_cache) = encoder::encoder_forward(&x, adj, &model.encoder, ablation.switches());
    let hidden_pre = o.dot(&model.classifier.w_c1);
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let logit = hidden.dot(&model.classifier.w_c2);
    let probability = sigmoid(logit);
    let pred = Prediction {
        probability,
        predicted_label: (probability >= 0.5) as u8,
        logit,
        embedding: GraphEmbedding(o.to_vec()),
        trace,
    };
    Ok((
        pred,
        ForwardCache {
            refine: caches,
            adapter_input: features,
            encoder: enc_cache,
            o,
            hidden_pre,
            hidden,
        },
    ))
}

/// Accumulates parameter gradients for `d loss / d logit = grad_logit`.
pub(crate) fn backward(
    model: &Model,
    cache: &ForwardCache,
    refine: &RefineConfig,
    grad_logit: f64,
    grads: &mut Model,
) {
    let cls = &model.classifier;
    grads.classifier.w_c2.scaled_add(grad_logit, &cache.hidden);
    let mut g_pre = &cls.w_c2 * grad_logit;
    g_pre.zip_mut_with(&cache.hidden_pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let o_col = cache.o.view().insert_axis(ndarray::Axis(1));
    let g_row = g_pre.view().insert_axis(ndarray::Axis(0));
    ndarray::linalg::general_mat_mul(1.0, &o_col, &g_row, 1.0, &mut grads.classifier.w_c1);
    let g_o = cls.w_c1.dot(&g_pre);

    let g_x = encoder::encoder_backward(&g_o, &cache.encoder, &model.encoder, &mut grads.encoder);
    match &cache.refine {
        Some(caches) => {
            let g_feat = ops::linear_backward(
                &g_x,
                cache.adapter_input.view(),
                &model.adapter_refined,
                &mut grads.adapter_refined,
            );
            sapool::refine_backward(&g_feat, caches, &model.sapool, refine, &mut grads.sapool);
        }
        None => {
            ndarray::linalg::general_mat_mul(
                1.0,
                &cache.adapter_input.t(),
                &g_x,
                1.0,
                &mut grads.adapter_raw,
            );
        }
    }
}

/// Refinement → adapter → encoder → head for one graph.
pub fn forward<R: Rng + ?Sized>(
    model: &Model,
    g: &LabeledGraph,
    refine: &RefineConfig,
    ablation: Ablation,
    mode: Mode,
    rng: &mut R,
) -> Result<Prediction> {
    forward_with_cache(model, g, refine, ablation, mode, rng, None).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden: 8,
                layers: 2,
                heads: 2,
            },
            dropout: 0.2,
        }
    }

    fn graph(r: &mut ChaCha8Rng, n: usize, d: usize) -> LabeledGraph {
        let x = Array2::from_shape_simple_fn((n, d), || r.random::<f64>() - 0.5);
        let e: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
        LabeledGraph::new("g", x, &e, 1).unwrap()
    }

    #[test]
    fn zero_classifier_gives_half() {
        let emb = GraphEmbedding(vec![1.0, -2.0, 3.0]);
        let p = ClassifierParams {
            w_c1: Array2::zeros((3, 3)),
            w_c2: Array1::zeros(3),
        };
        assert_eq!(classify(&emb, &p), 0.5);
        let p = ClassifierParams {
            w_c1: Array2::eye(3),
            w_c2: ndarray::array![10.0, 0.0, 10.0],
        };
        assert!(classify(&emb, &p) >= 1.0 - 1e-9);
    }

    #[test]
    fn eval_forward_is_deterministic_and_skips_small_graphs() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let m = Model::init(&mut r, 5, &tiny_cfg()).unwrap();
        let g = graph(&mut r, 12, 5);
        let refine = RefineConfig::default();
        let a = forward(&m, &g, &refine, Ablation::full(), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = forward(&m, &g, &refine, Ablation::full(), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.steps.is_empty());
        assert_eq!(a.predicted_label, (a.probability >= 0.5) as u8);
    }

    #[test]
    fn ablations_reduce_active_parameters() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let m = Model::init(&mut r, 5, &tiny_cfg()).unwrap();
        let full = m.active_parameter_count(Ablation::full());
        assert_eq!(full, m.parameter_count());
        for ab in [
            Ablation { use_hgr: false, ..Ablation::full() },
            Ablation { use_gnn: false, ..Ablation::full() },
            Ablation { use_gt: false, ..Ablation::full() },
        ] {
            assert!(m.active_parameter_count(ab) < full);
        }
    }

    #[test]
    fn no_gnn_no_gt_depends_only_on_adapter_readout_head() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let m = Model::init(&mut r, 5, &tiny_cfg()).unwrap();
        let g = graph(&mut r, 10, 5);
        let ab = Ablation {
            use_hgr: false,
            use_gnn: false,
            use_gt: false,
        };
        let p = forward(&m, &g, &RefineConfig::default(), ab, Mode::Eval, &mut r).unwrap();
        let o = ops::mean_rows(&g.features().dot(&m.adapter_raw));
        let want = classify(&GraphEmbedding(o.to_vec()), &m.classifier);
        assert!((p.probability - want).abs() < 1e-14);
    }

    #[test]
    fn wrong_feature_width_is_an_input_error() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let m = Model::init(&mut r, 5, &tiny_cfg()).unwrap();
        let g = graph(&mut r, 4, 3);
        let res = forward(&m, &g, &RefineConfig::default(), Ablation::full(), Mode::Eval, &mut r);
        assert!(matches!(res, Err(Error::Input(_))));
    }
}
