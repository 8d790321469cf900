//! Local/global encoder: stacked blocks of graph convolution, dense
//! multi-head self-attention and a layer-normalized feed-forward sublayer,
//! followed by a mean readout.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, NormalizedAdjacency};
use crate::ops::{self, LayerNormCache};

pub const FFN_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 5,
            heads: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::config("encoder hidden, layers and heads must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "encoder hidden {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl LayerNormParams {
    pub fn identity(width: usize) -> Self {
        LayerNormParams {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w_f1: Array2<f64>,
    pub w_f2: Array2<f64>,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_g: Array2<f64>,
    pub heads: Vec<HeadParams>,
    pub ffn: FeedForwardParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let dh = h / cfg.heads;
        let wide = FFN_EXPANSION * h;
        let blocks = (0..cfg.layers)
            .map(|_| BlockParams {
                w_g: ops::glorot(rng, h, h),
                heads: (0..cfg.heads)
                    .map(|_| HeadParams {
                        w_q: ops::glorot(rng, h, dh),
                        w_k: ops::glorot(rng, h, dh),
                        w_v: ops::glorot(rng, h, dh),
                    })
                    .collect(),
                ffn: FeedForwardParams {
                    w_f1: ops::glorot(rng, h, wide),
                    w_f2: ops::glorot(rng, wide, h),
                    ln1: LayerNormParams::identity(h),
                    ln2: LayerNormParams::identity(wide),
                },
            })
            .collect();
        Ok(EncoderParams { blocks })
    }

    pub fn hidden(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.w_g.nrows())
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        let zln = |l: &LayerNormParams| LayerNormParams {
            scale: z1(&l.scale),
            shift: z1(&l.shift),
        };
        EncoderParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    w_g: z2(&b.w_g),
                    heads: b
                        .heads
                        .iter()
                        .map(|hd| HeadParams {
                            w_q: z2(&hd.w_q),
                            w_k: z2(&hd.w_k),
                            w_v: z2(&hd.w_v),
                        })
                        .collect(),
                    ffn: FeedForwardParams {
                        w_f1: z2(&b.ffn.w_f1),
                        w_f2: z2(&b.ffn.w_f2),
                        ln1: zln(&b.ffn.ln1),
                        ln2: zln(&b.ffn.ln2),
                    },
                })
                .collect(),
        }
    }
}

/// Which sublayers of every block are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSwitches {
    pub gnn: bool,
    pub gt: bool,
}

impl Default for BlockSwitches {
    fn default() -> Self {
        BlockSwitches { gnn: true, gt: true }
    }
}

/// Graph-level embedding produced by the mean readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEmbedding(pub Vec<f64>);

impl GraphEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_width(x: &Array2<f64>, want: usize, what: &str) -> Result<()> {
    if x.ncols() != want {
        return Err(Error::input(format!(
            "{what} expects width {want}, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

struct GcnCache {
    agg: Array2<f64>,
    pre: Array2<f64>,
}

fn gcn_forward(x: &Array2<f64>, adj: &NormalizedAdjacency, w_g: &Array2<f64>) -> (Array2<f64>, GcnCache) {
    let agg = adj.matmul(x.view());
    let pre = agg.dot(w_g);
    (ops::relu(&pre), GcnCache { agg, pre })
}

/// `ReLU(Â X W_G)`.
pub fn gcn_layer(x: &Array2<f64>, adj: &NormalizedAdjacency, w_g: &Array2<f64>) -> Result<Array2<f64>> {
    check_width(x, w_g.nrows(), "graph convolution")?;
    if adj.n() != x.nrows() {
        return Err(Error::input("graph convolution operator/feature row mismatch"));
    }
    Ok(gcn_forward(x, adj, w_g).0)
}

struct HeadCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
}

fn mha_forward(x: &Array2<f64>, heads: &[HeadParams]) -> (Array2<f64>, Vec<HeadCache>) {
    let n = x.nrows();
    let dh = heads[0].w_q.ncols();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((n, dh * heads.len()));
    let mut caches = Vec::with_capacity(heads.len());
    for (i, hp) in heads.iter().enumerate() {
        let q = x.dot(&hp.w_q);
        let k = x.dot(&hp.w_k);
        let v = x.dot(&hp.w_v);
        let scores = q.dot(&k.t()) * scale;
        let attn = ops::softmax_rows(&scores);
        out.slice_mut(ndarray::s![.., i * dh..(i + 1) * dh])
            .assign(&attn.dot(&v));
        caches.push(HeadCache { q, k, v, attn });
    }
    (out, caches)
}

/// Row-softmax attention matrices of every head, in head order.
pub fn attention_matrices(x: &Array2<f64>, heads: &[HeadParams]) -> Vec<Array2<f64>> {
    mha_forward(x, heads).1.into_iter().map(|c| c.attn).collect()
}

/// Dense multi-head self-attention with per-head scale `1/√(h/H)`; head
/// outputs are concatenated in head order.
pub fn multi_head_attention(x: &Array2<f64>, heads: &[HeadParams]) -> Result<Array2<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| Error::input("attention needs at least one head"))?;
    check_width(x, first.w_q.nrows(), "attention")?;
    let dh = first.w_q.ncols();
    if dh * heads.len() != x.ncols() {
        return Err(Error::input("head widths do not concatenate to the hidden width"));
    }
    Ok(mha_forward(x, heads).0)
}

struct FfnCache {
    ln1: LayerNormCache,
    normed1: Array2<f64>,
    pre: Array2<f64>,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
}

fn ffn_forward(x: &Array2<f64>, p: &FeedForwardParams) -> (Array2<f64>, FfnCache) {
    let (normed1, ln1) = ops::layer_norm(x, &p.ln1.scale, &p.ln1.shift);
    let pre = normed1.dot(&p.w_f1);
    let act = ops::relu(&pre);
    let (normed2, ln2) = ops::layer_norm(&act, &p.ln2.scale, &p.ln2.shift);
    let out = normed2.dot(&p.w_f2);
    (
        out,
        FfnCache {
            ln1,
            normed1,
            pre,
            ln2,
            normed2,
        },
    )
}

/// `W_F2 · LN₂(ReLU(W_F1 · LN₁(x)))`.
pub fn feed_forward(x: &Array2<f64>, p: &FeedForwardParams) -> Result<Array2<f64>> {
    check_width(x, p.w_f1.nrows(), "feed-forward")?;
    Ok(ffn_forward(x, p).0)
}

pub(crate) struct BlockCache {
    gcn: Option<GcnCache>,
    x1: Array2<f64>,
    heads: Option<Vec<HeadCache>>,
    ffn: Option<FfnCache>,
}

fn block_forward(
    x: &Array2<f64>,
    adj: &NormalizedAdjacency,
    p: &BlockParams,
    sw: BlockSwitches,
) -> (Array2<f64>, BlockCache) {
    let (x1, gcn) = if sw.gnn {
        let (y, c) = gcn_forward(x, adj, &p.w_g);
        (y, Some(c))
    } else {
        (x.clone(), None)
    };
    if !sw.gt {
        let out = x1.clone();
        return (
            out,
            BlockCache {
                gcn,
                x1,
                heads: None,
                ffn: None,
            },
        );
    }
    let (att, heads) = mha_forward(&x1, &p.heads);
    let x2 = att + &x1;
    let (f, ffn) = ffn_forward(&x2, &p.ffn);
    let out = f + &x2;
    (
        out,
        BlockCache {
            gcn,
            x1,
            heads: Some(heads),
            ffn: Some(ffn),
        },
    )
}

/// One block: `x₁ = GCN(x)`, `x₂ = MHA(x₁) + x₁`, `out = FFN(x₂) + x₂`.
pub fn gnn_gt_block(x: &Array2<f64>, adj: &NormalizedAdjacency, p: &BlockParams) -> Result<Array2<f64>> {
    check_width(x, p.w_g.nrows(), "encoder block")?;
    if adj.n() != x.nrows() {
        return Err(Error::input("encoder block operator/feature row mismatch"));
    }
    Ok(block_forward(x, adj, p, BlockSwitches::default()).0)
}

fn block_backward(
    grad: &Array2<f64>,
    cache: &BlockCache,
    adj: &NormalizedAdjacency,
    p: &BlockParams,
    g: &mut BlockParams,
) -> Array2<f64> {
    let mut g_x1 = grad.clone();
    if let (Some(heads), Some(ffn)) = (&cache.heads, &cache.ffn) {
        // out = FFN(x2) + x2
        let fp = &p.ffn;
        let gf = &mut g.ffn;
        let g_n2 = ops::linear_backward(grad, ffn.normed2.view(), &fp.w_f2, &mut gf.w_f2);
        let g_act = ops::layer_norm_backward(&g_n2, &ffn.ln2, &fp.ln2.scale, &mut gf.ln2.scale, &mut gf.ln2.shift);
        let g_pre = ops::relu_backward(&g_act, &ffn.pre);
        let g_n1 = ops::linear_backward(&g_pre, ffn.normed1.view(), &fp.w_f1, &mut gf.w_f1);
        let g_x2 = ops::layer_norm_backward(&g_n1, &ffn.ln1, &fp.ln1.scale, &mut gf.ln1.scale, &mut gf.ln1.shift)
            + grad;

        // x2 = MHA(x1) + x1
        let dh = heads[0].q.ncols();
        let scale = 1.0 / (dh as f64).sqrt();
        g_x1 = g_x2.clone();
        for (i, (hc, (hp, hg))) in heads
            .iter()
            .zip(p.heads.iter().zip(g.heads.iter_mut()))
            .enumerate()
        {
            let g_out = g_x2.slice(ndarray::s![.., i * dh..(i + 1) * dh]).to_owned();
            let g_attn = g_out.dot(&hc.v.t());
            let g_v = hc.attn.t().dot(&g_out);
            let g_scores = ops::softmax_rows_backward(&g_attn, &hc.attn) * scale;
            let g_q = g_scores.dot(&hc.k);
            let g_k = g_scores.t().dot(&hc.q);
            g_x1 += &ops::linear_backward(&g_q, cache.x1.view(), &hp.w_q, &mut hg.w_q);
            g_x1 += &ops::linear_backward(&g_k, cache.x1.view(), &hp.w_k, &mut hg.w_k);
            g_x1 += &ops::linear_backward(&g_v, cache.x1.view(), &hp.w_v, &mut hg.w_v);
        }
    }
    match &cache.gcn {
        Some(gc) => {
            let g_pre = ops::relu_backward(&g_x1, &gc.pre);
            let g_agg = ops::linear_backward(&g_pre, gc.agg.view(), &p.w_g, &mut g.w_g);
            adj.matmul(g_agg.view())
        }
        None => g_x1,
    }
}

pub(crate) struct EncoderCache {
    adj: NormalizedAdjacency,
    blocks: Vec<BlockCache>,
    n: usize,
}

pub(crate) fn encoder_forward(
    x: &Array2<f64>,
    adj: NormalizedAdjacency,
    p: &EncoderParams,
    sw: BlockSwitches,
) -> (Array1<f64>, EncoderCache) {
    let mut h = x.clone();
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for bp in &p.blocks {
        let (next, cache) = block_forward(&h, &adj, bp, sw);
        blocks.push(cache);
        h = next;
    }
    let o = ops::mean_rows(&h);
    (
        o,
        EncoderCache {
            adj,
            blocks,
            n: x.nrows(),
        },
    )
}

/// Backward from the readout gradient to the encoder input.
pub(crate) fn encoder_backward(
    grad_o: &Array1<f64>,
    cache: &EncoderCache,
    p: &EncoderParams,
    g: &mut EncoderParams,
) -> Array2<f64> {
    let row = grad_o / cache.n as f64;
    let mut grad = row.broadcast((cache.n, row.len())).expect("broadcast").to_owned();
    for ((bc, bp), bg) in cache
        .blocks
        .iter()
        .zip(&p.blocks)
        .zip(g.blocks.iter_mut())
        .rev()
    {
        grad = block_backward(&grad, bc, &cache.adj, bp, bg);
    }
    grad
}

/// Runs every block on the graph's normalized adjacency and mean-pools the
/// node states. Features must already be at the encoder width.
pub fn encode_graph(g: &LabeledGraph, p: &EncoderParams) -> Result<GraphEmbedding> {
    encode_graph_with(g, p, BlockSwitches::default())
}

pub fn encode_graph_with(g: &LabeledGraph, p: &EncoderParams, sw: BlockSwitches) -> Result<GraphEmbedding> {
    check_width(g.features(), p.hidden(), "encoder")?;
    let (o, _) = encoder_forward(g.features(), g.normalized_adjacency(), p, sw);
    Ok(GraphEmbedding(o.to_vec()))
}

/// Node states after every block, for inspection.
pub fn node_states(g: &LabeledGraph, p: &EncoderParams) -> Result<Array2<f64>> {
    check_width(g.features(), p.hidden(), "encoder")?;
    let adj = g.normalized_adjacency();
    let mut h = g.features().clone();
    for bp in &p.blocks {
        h = block_forward(&h, &adj, bp, BlockSwitches::default()).0;
    }
    Ok(h)
}
