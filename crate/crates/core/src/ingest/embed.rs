//! Token embedders: a seeded hash embedder and a skip-gram trainer with
//! negative sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDER_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EMBED_DIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    #[default]
    Hash,
    Skipgram,
}

/// Skip-gram training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum EmbedderState {
    Hash,
    Skipgram {
        vocab: Vec<String>,
        /// Row-major `vocab.len() × dim`.
        vectors: Vec<f64>,
    },
}

/// Maps tokens to fixed-length vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedder {
    version: u32,
    dim: usize,
    seed: u64,
    state: EmbedderState,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl TokenEmbedder {
    /// Hash embedder: every token maps to a pseudo-random unit vector
    /// derived from a seeded hash of its bytes.
    pub fn hash(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("embedding dimension must be at least 1"));
        }
        Ok(TokenEmbedder {
            version: EMBEDDER_FORMAT_VERSION,
            dim,
            seed,
            state: EmbedderState::Hash,
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> EmbedderMode {
        match self.state {
            EmbedderState::Hash => EmbedderMode::Hash,
            EmbedderState::Skipgram { .. } => EmbedderMode::Skipgram,
        }
    }

    pub fn vocab_len(&self) -> usize {
        match &self.state {
            EmbedderState::Hash => 0,
            EmbedderState::Skipgram { vocab, .. } => vocab.len(),
        }
    }

    /// Writes the embedding of `token` into `out` (length `dim`).
    /// Tokens unknown to a skip-gram vocabulary embed as zero.
    pub fn embed_into(&self, token: &str, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.state {
            EmbedderState::Hash => {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(fnv1a(token.as_bytes()) ^ self.seed));
                let mut norm = 0.0;
                for o in out.iter_mut() {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    *o = v;
                    norm += v * v;
                }
                let norm = norm.sqrt();
                if norm > 0.0 {
                    out.iter_mut().for_each(|o| *o /= norm);
                }
            }
            EmbedderState::Skipgram { vectors, .. } => match self.index.get(token) {
                Some(&row) => out.copy_from_slice(&vectors[row * self.dim..(row + 1) * self.dim]),
                None => out.iter_mut().for_each(|o| *o = 0.0),
            },
        }
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(token, &mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut emb: TokenEmbedder = serde_json::from_str(text)?;
        if emb.version != EMBEDDER_FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported embedder format version {}",
                emb.version
            )));
        }
        emb.rebuild_index()?;
        Ok(emb)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        if let EmbedderState::Skipgram { vocab, vectors } = &self.state {
            if vectors.len() != vocab.len() * self.dim {
                return Err(Error::input("embedder vector table has the wrong size"));
            }
            self.index = vocab
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i))
                .collect();
        }
        Ok(())
    }
}

/// Fits a token embedder.
///
/// Hash mode ignores the corpus. Skip-gram mode trains input vectors with
/// negative sampling (unigram^0.75 noise, linearly decaying learning rate)
/// and is deterministic given `seed`.
pub fn fit_token_embeddings(
    corpus: &[Vec<String>],
    dim: usize,
    mode: EmbedderMode,
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<TokenEmbedder> {
    if dim == 0 {
        return Err(Error::input("embedding dimension must be at least 1"));
    }
    if mode == EmbedderMode::Hash {
        return TokenEmbedder::hash(dim, seed);
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::input("skip-gram training needs a non-empty corpus"));
    }
    if cfg.window == 0 || cfg.epochs == 0 || cfg.lr <= 0.0 {
        return Err(Error::config("skip-gram window, epochs and lr must be positive"));
    }

    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sent in corpus {
        for tok in sent {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let v = vocab.len();

    // cumulative noise distribution
    let weights: Vec<f64> = vocab.iter().map(|(_, c)| (*c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(v);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let draw_noise = |rng: &mut ChaCha8Rng| -> usize {
        let u: f64 = rng.random();
        cdf.partition_point(|&c| c < u).min(v - 1)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input: Vec<f64> = (0..v * dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0f64; v * dim];

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| index[t.as_str()]).collect())
        .collect();
    let total_words: usize = sentences.iter().map(Vec::len).sum();
    let total_steps = (total_words * cfg.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut grad_in = vec![0.0f64; dim];

    for _ in 0..cfg.epochs {
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = (cfg.lr * (1.0 - processed as f64 / total_steps)).max(cfg.lr * 1e-4);
                processed += 1;
                let shrink = rng.random_range(0..cfg.window);
                let reach = cfg.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sent.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sent[ctx_pos];
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for s in 0..=cfg.negatives {
                        let (target, label) = if s == 0 {
                            (context, 1.0)
                        } else {
                            let t = draw_noise(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let vin = &input[center * dim..(center + 1) * dim];
                        let vout = &mut output[target * dim..(target + 1) * dim];
                        let dot: f64 = vin.iter().zip(vout.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - crate::ops::sigmoid(dot)) * lr;
                        for k in 0..dim {
                            grad_in[k] += g * vout[k];
                            vout[k] += g * vin[k];
                        }
                    }
                    for (w, g) in input[center * dim..(center + 1) * dim].iter_mut().zip(&grad_in) {
                        *w += g;
                    }
                }
            }
        }
    }

    let mut emb = TokenEmbedder {
        version: EMBEDDER_FORMAT_VERSION,
        dim,
        seed,
        state: EmbedderState::Skipgram {
            vocab: vocab.iter().map(|(t, _)| t.to_string()).collect(),
            vectors: input,
        },
        index: HashMap::new(),
    };
    emb.rebuild_index()?;
    Ok(emb)
}
