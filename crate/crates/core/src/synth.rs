//! Seeded synthetic corpora with long-tailed graph sizes and planted motifs.
//!
//! Every graph is a random tree plus sparse noise edges. Vulnerable graphs
//! carry a motif: a clique of `motif_size` key nodes. In memory, background
//! node features are standard Gaussian and key-node features are drawn around
//! a fixed shift `mu` with a wider spread. The JSON-lines form carries the same
//! structure with code strings (background statements versus a small
//! buffer-copy vocabulary on key nodes) for the ingest pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ndarray::{Array1, Array2};
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, NodeMeta};
use crate::ingest::{EdgeType, RawEdge, RawGraphRecord, RawNode};

/// Norm of the feature shift shared by all key nodes.
pub const MOTIF_SHIFT_NORM: f64 = 3.0;
/// Per-coordinate standard deviation of key-node features around the shift.
pub const MOTIF_SCALE: f64 = 3.0;

const SHIFT_SALT: u64 = 0x5f3c_a1d2_77e1_0b4d;
const FEATURE_SALT: u64 = 0x1b87_3593_cc9e_2d51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeLaw {
    pub pareto_shape: f64,
    pub min_n: usize,
    pub max_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_graphs: usize,
    pub size_law: SizeLaw,
    pub motif_size: usize,
    pub feature_dim: usize,
    pub vulnerable_fraction: f64,
    pub noise_edge_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // shape 0.3 on [10, 600] gives a mean size close to 100
        SynthConfig {
            n_graphs: 2000,
            size_law: SizeLaw {
                pareto_shape: 0.3,
                min_n: 10,
                max_n: 600,
            },
            motif_size: 6,
            feature_dim: 100,
            vulnerable_fraction: 0.4,
            noise_edge_prob: 0.002,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let law = &self.size_law;
        if self.n_graphs == 0 {
            return Err(Error::config("synth.n_graphs must be at least 1"));
        }
        if self.motif_size < 2 {
            return Err(Error::config("synth.motif_size must be at least 2"));
        }
        if law.min_n < self.motif_size {
            return Err(Error::config("synth.size_law.min_n must be >= motif_size"));
        }
        if law.max_n < law.min_n {
            return Err(Error::config("synth.size_law.max_n must be >= min_n"));
        }
        if !(law.pareto_shape > 0.0 && law.pareto_shape.is_finite()) {
            return Err(Error::config("synth.size_law.pareto_shape must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("synth.feature_dim must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.vulnerable_fraction) {
            return Err(Error::config("synth.vulnerable_fraction must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.noise_edge_prob) {
            return Err(Error::config("synth.noise_edge_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

const IDENTS: [&str; 24] = [
    "i", "j", "k", "n", "count", "idx", "flag", "ret", "err", "ptr", "node", "head", "tmp",
    "val", "size", "mode", "state", "ctx", "dev", "cfg", "offset", "mask", "total", "res",
];
const FUNCS: [&str; 10] = [
    "init", "update", "lookup", "release", "check", "notify", "parse", "emit", "reset", "visit",
];
const ARITH: [&str; 6] = ["+", "-", "*", "&", "|", "^"];
const CMP: [&str; 5] = ["<", ">", "==", "!=", "<="];
const KINDS: [&str; 5] = ["assign", "call", "cond", "decl", "return"];

const MOTIF_TEMPLATES: [&str; 6] = [
    "memcpy ( dst_buf , src_buf , len ) ;",
    "len = strlen ( src_buf ) ;",
    "dst_buf [ len ] = {id} ;",
    "if ( len > buf_size )",
    "dst_buf = alloca ( len ) ;",
    "src_buf = {fn} ( {id} , len ) ;",
];
const MOTIF_KINDS: [&str; 6] = ["call", "assign", "assign", "cond", "assign", "call"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn background_statement<R: Rng>(rng: &mut R) -> (String, &'static str) {
    let kind = pick(rng, &KINDS);
    let code = match kind {
        "assign" => format!(
            "{} = {} {} {} ;",
            pick(rng, &IDENTS),
            pick(rng, &IDENTS),
            pick(rng, &ARITH),
            rng.random_range(0..16)
        ),
        "call" => format!(
            "{} ( {} , {} ) ;",
            pick(rng, &FUNCS),
            pick(rng, &IDENTS),
            pick(rng, &IDENTS)
        ),
        "cond" => format!(
            "if ( {} {} {} )",
            pick(rng, &IDENTS),
            pick(rng, &CMP),
            pick(rng, &IDENTS)
        ),
        "decl" => format!("int {} ;", pick(rng, &IDENTS)),
        _ => format!("return {} ;", pick(rng, &IDENTS)),
    };
    (code, kind)
}

fn motif_statement<R: Rng>(rng: &mut R, slot: usize) -> (String, &'static str) {
    let t = slot % MOTIF_TEMPLATES.len();
    let code = MOTIF_TEMPLATES[t]
        .replace("{id}", pick(rng, &IDENTS))
        .replace("{fn}", pick(rng, &FUNCS));
    (code, MOTIF_KINDS[t])
}

fn graph_seed(seed: u64, index: usize) -> u64 {
    let mut x = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Draws a node count from the Pareto law truncated to `[min_n, max_n]`.
pub fn sample_size<R: Rng>(rng: &mut R, law: &SizeLaw) -> usize {
    if law.min_n == law.max_n {
        return law.min_n;
    }
    let (lo, hi, a) = (law.min_n as f64, law.max_n as f64, law.pareto_shape);
    let u: f64 = rng.random();
    let x = lo / (1.0 - u * (1.0 - (lo / hi).powf(a))).powf(1.0 / a);
    (x.floor() as usize).clamp(law.min_n, law.max_n)
}

fn generate_one(cfg: &SynthConfig, index: usize) -> RawGraphRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed(cfg.seed, index));
    let n = sample_size(&mut rng, &cfg.size_law);
    let vulnerable = rng.random::<f64>() < cfg.vulnerable_fraction;

    let mut is_key = vec![false; n];
    let motif: Vec<usize> = if vulnerable {
        let mut m = rand::seq::index::sample(&mut rng, n, cfg.motif_size).into_vec();
        m.sort_unstable();
        m.iter().for_each(|&i| is_key[i] = true);
        m
    } else {
        Vec::new()
    };

    let nodes: Vec<RawNode> = (0..n)
        .scan(0usize, |slot, i| {
            let (code, kind) = if is_key[i] {
                *slot += 1;
                motif_statement(&mut rng, *slot - 1)
            } else {
                background_statement(&mut rng)
            };
            Some(RawNode {
                id: i as i64,
                code,
                kind: kind.to_string(),
                line: Some(i as i64 + 1),
                key: Some(is_key[i]),
            })
        })
        .collect();

    let mut edges = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        edges.push(RawEdge {
            src: parent as i64,
            dst: i as i64,
            etype: EdgeType::Ast,
        });
    }
    let pairs = (n * (n - 1) / 2) as u64;
    if cfg.noise_edge_prob > 0.0 && pairs > 0 {
        let extra = Binomial::new(pairs, cfg.noise_edge_prob)
            .expect("probability validated")
            .sample(&mut rng);
        for _ in 0..extra {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n - 1);
            let b = if b >= a { b + 1 } else { b };
            edges.push(RawEdge {
                src: a as i64,
                dst: b as i64,
                etype: EdgeType::Cfg,
            });
        }
    }
    for (p, &a) in motif.iter().enumerate() {
        for &b in &motif[p + 1..] {
            edges.push(RawEdge {
                src: a as i64,
                dst: b as i64,
                etype: EdgeType::Pdg,
            });
        }
    }

    RawGraphRecord {
        name: format!("synth-{}-{index:05}", cfg.seed),
        label: vulnerable as u8,
        nodes,
        edges,
    }
}

/// Generates the corpus in record form (the JSON-lines representation).
pub fn generate_records(cfg: &SynthConfig) -> Result<Vec<RawGraphRecord>> {
    cfg.validate()?;
    Ok((0..cfg.n_graphs).map(|i| generate_one(cfg, i)).collect())
}

fn motif_shift(cfg: &SynthConfig) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed(cfg.seed ^ SHIFT_SALT, 0));
    let mu: Array1<f64> = (0..cfg.feature_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = mu.dot(&mu).sqrt().max(f64::MIN_POSITIVE);
    mu * (MOTIF_SHIFT_NORM / norm)
}

/// Background rows ~ N(0, I); key rows ~ N(mu, MOTIF_SCALE^2 I).
fn gaussian_features(cfg: &SynthConfig, index: usize, key: &[bool], mu: &Array1<f64>) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed(cfg.seed ^ FEATURE_SALT, index));
    let mut x = Array2::zeros((key.len(), cfg.feature_dim));
    for (mut row, &is_key) in x.rows_mut().into_iter().zip(key) {
        for (v, m) in row.iter_mut().zip(mu) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = if is_key { m + MOTIF_SCALE * e } else { e };
        }
    }
    x
}

/// Generates the corpus as labeled graphs with Gaussian node features of
/// width `feature_dim`. Structure, labels, key masks and node metadata match
/// [`generate_records`] for the same config.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledGraph>> {
    let records = generate_records(cfg)?;
    let mu = motif_shift(cfg);
    records
        .iter()
        .enumerate()
        .map(|(index, rec)| {
            let key: Vec<bool> = rec.nodes.iter().map(|n| n.key == Some(true)).collect();
            let edges: Vec<(usize, usize)> = rec
                .edges
                .iter()
                .map(|e| (e.src as usize, e.dst as usize))
                .collect();
            let meta = rec
                .nodes
                .iter()
                .map(|n| NodeMeta {
                    kind: n.kind.clone(),
                    line: n.line,
                    code: n.code.clone(),
                })
                .collect();
            let x = gaussian_features(cfg, index, &key, &mu);
            LabeledGraph::new(rec.name.clone(), x, &edges, rec.label)?
                .with_key_mask(key)?
                .with_node_meta(meta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_corpus_jsonl, to_labeled_graph, write_corpus_jsonl, TokenEmbedder};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_graphs: 60,
            size_law: SizeLaw {
                pareto_shape: 1.0,
                min_n: 8,
                max_n: 80,
            },
            feature_dim: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_vulnerable_fraction_gives_clean_corpus() {
        let cfg = SynthConfig {
            vulnerable_fraction: 0.0,
            ..small(1)
        };
        for g in generate_corpus(&cfg).unwrap() {
            assert_eq!(g.label(), 0);
            assert_eq!(g.key_node_count(), 0);
        }
    }

    #[test]
    fn degenerate_size_law() {
        let mut cfg = small(2);
        cfg.size_law.min_n = 10;
        cfg.size_law.max_n = 10;
        assert!(generate_corpus(&cfg).unwrap().iter().all(|g| g.node_count() == 10));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = write_corpus_jsonl(&generate_records(&small(7)).unwrap()).unwrap();
        let b = write_corpus_jsonl(&generate_records(&small(7)).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = write_corpus_jsonl(&generate_records(&small(8)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn motif_popcount_matches_label() {
        let cfg = small(3);
        let corpus = generate_corpus(&cfg).unwrap();
        assert!(corpus.iter().any(|g| g.label() == 1));
        for g in &corpus {
            let expect = if g.label() == 1 { cfg.motif_size } else { 0 };
            assert_eq!(g.key_node_count(), expect);
        }
    }

    #[test]
    fn graphs_are_connected() {
        for g in generate_corpus(&small(4)).unwrap() {
            let n = g.node_count();
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                if p[x] != x {
                    let r = find(p, p[x]);
                    p[x] = r;
                }
                p[x]
            }
            for &(a, b) in g.edges() {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
            let root = find(&mut parent, 0);
            assert!((0..n).all(|i| find(&mut parent, i) == root));
        }
    }

    #[test]
    fn jsonl_form_shares_structure() {
        let cfg = small(5);
        let text = write_corpus_jsonl(&generate_records(&cfg).unwrap()).unwrap();
        let emb = TokenEmbedder::hash(cfg.feature_dim, 0).unwrap();
        let reloaded: Vec<LabeledGraph> = load_corpus_jsonl(text.as_bytes())
            .unwrap()
            .iter()
            .map(|r| to_labeled_graph(r, &emb).unwrap())
            .collect();
        let memory = generate_corpus(&cfg).unwrap();
        assert_eq!(reloaded.len(), memory.len());
        for (a, b) in reloaded.iter().zip(&memory) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.label(), b.label());
            assert_eq!(a.edges(), b.edges());
            assert_eq!(a.key_mask(), b.key_mask());
            assert_eq!(a.node_meta(), b.node_meta());
            assert_eq!(a.feature_dim(), b.feature_dim());
        }
    }

    #[test]
    fn key_rows_carry_the_shift() {
        let cfg = SynthConfig {
            n_graphs: 200,
            vulnerable_fraction: 1.0,
            ..small(6)
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let d = cfg.feature_dim;
        let (mut key_sum, mut bg_sum) = (Array1::<f64>::zeros(d), Array1::<f64>::zeros(d));
        let (mut key_sq, mut bg_sq, mut nk, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for g in &corpus {
            let mask = g.key_mask().unwrap();
            for (row, &k) in g.features().rows().into_iter().zip(mask) {
                if k {
                    key_sum += &row;
                    key_sq += row.dot(&row);
                    nk += 1.0;
                } else {
                    bg_sum += &row;
                    bg_sq += row.dot(&row);
                    nb += 1.0;
                }
            }
        }
        let key_mean = key_sum / nk;
        let bg_mean = bg_sum / nb;
        let shift = key_mean.dot(&key_mean).sqrt();
        assert!((shift - MOTIF_SHIFT_NORM).abs() < 0.5, "shift {shift}");
        assert!(bg_mean.dot(&bg_mean).sqrt() < 0.2);
        // E||x||^2 is d for background rows and ||mu||^2 + d s^2 for key rows
        let bg_ms = bg_sq / nb;
        let key_ms = key_sq / nk;
        assert!((bg_ms / d as f64 - 1.0).abs() < 0.05, "background {bg_ms}");
        let expect = MOTIF_SHIFT_NORM.powi(2) + d as f64 * MOTIF_SCALE.powi(2);
        assert!((key_ms / expect - 1.0).abs() < 0.05, "key {key_ms} vs {expect}");
    }

    #[test]
    fn sizes_are_right_skewed() {
        let cfg = SynthConfig {
            n_graphs: 1000,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sizes: Vec<usize> = (0..cfg.n_graphs)
            .map(|_| sample_size(&mut rng, &cfg.size_law))
            .collect();
        sizes.sort_unstable();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        let median = sizes[sizes.len() / 2] as f64;
        assert!(mean > median, "mean {mean} median {median}");
        assert!(sizes.iter().all(|&s| (10..=600).contains(&s)));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SynthConfig {
                n_graphs: 0,
                ..small(0)
            },
            SynthConfig {
                motif_size: 1,
                ..small(0)
            },
            SynthConfig {
                vulnerable_fraction: 1.5,
                ..small(0)
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_records(&cfg), Err(Error::Config(_))));
        }
        let mut cfg = small(0);
        cfg.size_law.min_n = 3;
        assert!(generate_records(&cfg).is_err());
    }
}
