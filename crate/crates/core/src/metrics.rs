//! Classification metrics, size-bucketed accuracy and embedding export.

use serde::{Deserialize, Serialize};

use crate::encoder::GraphEmbedding;
use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_EDGES: [f64; 6] = [0.0, 25.0, 50.0, 100.0, 200.0, 300.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Metrics whose denominator was zero; they are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.accuracy || self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionCounts,
    pub degenerate: Degenerate,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn check_binary(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(v) = preds.iter().chain(labels).find(|&&v| v > 1) {
        return Err(Error::input(format!("value {v} is not a binary label")));
    }
    Ok(())
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    check_binary(preds, labels)?;
    let mut c = ConfusionCounts::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Positive class is label 1.
pub fn compute_metrics(preds: &[u8], labels: &[u8]) -> Result<Metrics> {
    let c = confusion(preds, labels)?;
    Ok(metrics_from_counts(c))
}

pub fn metrics_from_counts(c: ConfusionCounts) -> Metrics {
    let (accuracy, da) = ratio(c.tp + c.tn, c.total());
    let (precision, dp) = ratio(c.tp, c.tp + c.fp);
    let (recall, dr) = ratio(c.tp, c.tp + c.fn_);
    let (f1, df) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        confusion: c,
        degenerate: Degenerate {
            accuracy: da,
            precision: dp,
            recall: dr,
            f1: df,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lower: f64,
    /// `None` for the open-ended last bucket.
    pub upper: Option<f64>,
    pub count: usize,
    pub correct: usize,
    /// `None` when the bucket is empty.
    pub accuracy: Option<f64>,
}

impl BucketRow {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("({}, {}]", self.lower, u),
            None => format!("({}, inf)", self.lower),
        }
    }
}

/// Buckets are `(e_i, e_{i+1}]` plus `(e_last, inf)`. Sizes at or below the
/// first edge fall into the first bucket.
pub fn bucket_index(size: usize, edges: &[f64]) -> usize {
    let s = size as f64;
    for i in 1..edges.len() {
        if s <= edges[i] {
            return i - 1;
        }
    }
    edges.len() - 1
}

pub fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.is_empty() || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::config("bucket edges must be a non-empty list of finite numbers"));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("bucket edges must be strictly increasing"));
    }
    Ok(())
}

pub fn bucketed_accuracy(sizes: &[usize], preds: &[u8], labels: &[u8], edges: &[f64]) -> Result<Vec<BucketRow>> {
    validate_edges(edges)?;
    check_binary(preds, labels)?;
    if sizes.len() != preds.len() {
        return Err(Error::input(format!("{} sizes for {} predictions", sizes.len(), preds.len())));
    }
    let mut rows: Vec<BucketRow> = (0..edges.len())
        .map(|i| BucketRow {
            lower: edges[i],
            upper: edges.get(i + 1).copied(),
            count: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    for ((&n, &p), &y) in sizes.iter().zip(preds).zip(labels) {
        let row = &mut rows[bucket_index(n, edges)];
        row.count += 1;
        row.correct += (p == y) as usize;
    }
    for row in &mut rows {
        if row.count > 0 {
            row.accuracy = Some(row.correct as f64 / row.count as f64);
        }
    }
    Ok(rows)
}

pub fn buckets_to_csv(rows: &[BucketRow]) -> String {
    let mut out = String::from("bucket,lower,upper,count,correct,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.label(),
            r.lower,
            r.upper.map_or(String::new(), |u| u.to_string()),
            r.count,
            r.correct,
            r.accuracy.map_or(String::new(), |a| a.to_string())
        ));
    }
    out
}

/// Tab-separated `name, label, e0..e{h-1}`, one row per graph.
pub fn export_embeddings(names: &[&str], labels: &[u8], embeddings: &[GraphEmbedding]) -> Result<String> {
    if names.len() != labels.len() || names.len() != embeddings.len() {
        return Err(Error::input("names, labels and embeddings differ in length"));
    }
    let width = embeddings.first().map_or(0, |e| e.len());
    if embeddings.iter().any(|e| e.len() != width) {
        return Err(Error::input("embeddings differ in width"));
    }
    let mut out = String::from("name\tlabel");
    for i in 0..width {
        out.push_str(&format!("\te{i}"));
    }
    out.push('\n');
    for ((name, label), emb) in names.iter().zip(labels).zip(embeddings) {
        if name.contains(['\t', '\n']) {
            return Err(Error::input(format!("graph name {name:?} contains a tab or newline")));
        }
        out.push_str(name);
        out.push_str(&format!("\t{label}"));
        for v in emb.as_slice() {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}
