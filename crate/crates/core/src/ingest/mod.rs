//! Labeled-graph JSON ingestion and node feature initialization.
//!
//! One graph is a JSON object:
//!
//! ```text
//! {"name": str, "label": 0|1,
//!  "nodes": [{"id": int, "code": str, "kind": str, "line": int?, "key": bool?}, ...],
//!  "edges": [{"src": int, "dst": int, "etype": "AST"|"CFG"|"PDG"}, ...]}
//! ```
//!
//! Corpora are JSON-lines files with one such object per line.

mod embed;
mod tokenize;

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use embed::{
    fit_token_embeddings, EmbedderMode, SkipGramConfig, TokenEmbedder, DEFAULT_EMBED_DIM,
    EMBEDDER_FORMAT_VERSION,
};
pub use tokenize::tokenize;

use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, NodeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "AST")]
    Ast,
    #[serde(rename = "CFG")]
    Cfg,
    #[serde(rename = "PDG")]
    Pdg,
}

impl EdgeType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "AST" => Some(EdgeType::Ast),
            "CFG" => Some(EdgeType::Cfg),
            "PDG" => Some(EdgeType::Pdg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub id: i64,
    pub code: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEdge {
    pub src: i64,
    pub dst: i64,
    pub etype: EdgeType,
}

/// A parsed, validated graph record. After loading, node ids are the dense
/// positions `0..N` and edge endpoints refer to those positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGraphRecord {
    pub name: String,
    pub label: u8,
    pub nodes: Vec<RawNode>,
    pub edges: Vec<RawEdge>,
}

// Loose wire form so validation can name the offending position.
#[derive(Deserialize)]
struct WireRecord {
    name: String,
    label: i64,
    nodes: Vec<RawNode>,
    edges: Vec<WireEdge>,
}

#[derive(Deserialize)]
struct WireEdge {
    src: i64,
    dst: i64,
    etype: String,
}

impl RawGraphRecord {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Record restricted to the nodes at positions `keep` (ascending), with
    /// every edge between surviving nodes kept and renumbered.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        crate::graph::validate_selection(keep, self.nodes.len())?;
        let mut pos = vec![usize::MAX; self.nodes.len()];
        for (p, &i) in keep.iter().enumerate() {
            pos[i] = p;
        }
        let nodes = keep
            .iter()
            .enumerate()
            .map(|(p, &i)| RawNode {
                id: p as i64,
                ..self.nodes[i].clone()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let (s, d) = (pos[e.src as usize], pos[e.dst as usize]);
                (s != usize::MAX && d != usize::MAX).then_some(RawEdge {
                    src: s as i64,
                    dst: d as i64,
                    etype: e.etype,
                })
            })
            .collect();
        Ok(RawGraphRecord {
            name: self.name.clone(),
            label: self.label,
            nodes,
            edges,
        })
    }
}

fn validate(wire: WireRecord) -> Result<RawGraphRecord> {
    let name = wire.name;
    if wire.label != 0 && wire.label != 1 {
        return Err(Error::input(format!(
            "graph '{name}': label must be 0 or 1, got {}",
            wire.label
        )));
    }
    if wire.nodes.is_empty() {
        return Err(Error::input(format!("graph '{name}': no nodes")));
    }
    let mut remap: HashMap<i64, usize> = HashMap::with_capacity(wire.nodes.len());
    for (pos, node) in wire.nodes.iter().enumerate() {
        if let Some(first) = remap.insert(node.id, pos) {
            return Err(Error::input(format!(
                "graph '{name}': node {pos} repeats id {} (first at node {first})",
                node.id
            )));
        }
    }
    let mut edges = Vec::with_capacity(wire.edges.len());
    for (pos, e) in wire.edges.iter().enumerate() {
        let etype = EdgeType::parse(&e.etype).ok_or_else(|| {
            Error::input(format!(
                "graph '{name}': edge {pos} has unknown etype '{}'",
                e.etype
            ))
        })?;
        let lookup = |id: i64| {
            remap.get(&id).copied().ok_or_else(|| {
                Error::input(format!(
                    "graph '{name}': edge {pos} references missing node id {id}"
                ))
            })
        };
        let (src, dst) = (lookup(e.src)?, lookup(e.dst)?);
        edges.push(RawEdge {
            src: src as i64,
            dst: dst as i64,
            etype,
        });
    }
    let nodes = wire
        .nodes
        .into_iter()
        .enumerate()
        .map(|(pos, n)| RawNode { id: pos as i64, ..n })
        .collect();
    Ok(RawGraphRecord {
        name,
        label: wire.label as u8,
        nodes,
        edges,
    })
}

/// Parses and validates one graph document.
pub fn load_graph_json(bytes: &[u8]) -> Result<RawGraphRecord> {
    let wire: WireRecord =
        serde_json::from_slice(bytes).map_err(|e| Error::input(format!("malformed graph JSON: {e}")))?;
    validate(wire)
}

/// Parses a JSON-lines corpus. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_corpus_jsonl(bytes: &[u8]) -> Result<Vec<RawGraphRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::input(format!("corpus is not UTF-8: {e}")))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = load_graph_json(line.as_bytes())
            .map_err(|e| Error::input(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus_jsonl(records: &[RawGraphRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json()?);
        out.push('\n');
    }
    Ok(out)
}

/// Token sequences of every node in every record, for embedder fitting.
pub fn token_corpus(records: &[RawGraphRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .flat_map(|r| r.nodes.iter().map(|n| tokenize(&n.code)))
        .collect()
}

/// Converts a record to a [`LabeledGraph`]: each node's feature row is the
/// mean embedding of its tokens (zero for token-free nodes), all edge types
/// merge into one undirected adjacency.
pub fn to_labeled_graph(rec: &RawGraphRecord, emb: &TokenEmbedder) -> Result<LabeledGraph> {
    let n = rec.nodes.len();
    let dim = emb.dim();
    let mut features = Array2::zeros((n, dim));
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, node) in rec.nodes.iter().enumerate() {
        let tokens = tokenize(&node.code);
        if tokens.is_empty() {
            continue;
        }
        let mut row = features.row_mut(i);
        for tok in &tokens {
            let v = cache.entry(tok.clone()).or_insert_with(|| emb.embed(tok));
            row.iter_mut().zip(v.iter()).for_each(|(r, x)| *r += x);
        }
        let inv = 1.0 / tokens.len() as f64;
        row.mapv_inplace(|v| v * inv);
    }
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
    let mut g = LabeledGraph::new(rec.name.clone(), features, &edges, rec.label)?.with_node_meta(meta)?;
    if rec.nodes.iter().any(|n| n.key.is_some()) {
        let mask = rec.nodes.iter().map(|n| n.key.unwrap_or(false)).collect();
        g = g.with_key_mask(mask)?;
    }
    Ok(g)
}
