//! Estimation-accuracy metrics over a split: mean absolute error and
//! root-mean-squared error on `(prediction, target)` pairs, accumulated in
//! 64-bit with a fixed summation order so reports are reproducible.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, DynamicGraph, SplitAssignment, SplitTag};
use crate::model::{forward, predict_edge, ModelConfig, ModelParameters};

/// `sum |target - prediction| / n`.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "mae needs at least one (prediction, target) pair".into(),
        ));
    }
    let total: f64 = pairs.iter().map(|(p, y)| (y - p).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// `sqrt(sum (target - prediction)^2 / n)`.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "rmse needs at least one (prediction, target) pair".into(),
        ));
    }
    let total: f64 = pairs.iter().map(|(p, y)| (y - p) * (y - p)).sum();
    Ok((total / pairs.len() as f64).sqrt())
}

/// Metrics for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricsReport {
    /// One CSV row: `split,count,mae,rmse`.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.split, self.count, self.mae, self.rmse)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.csv_row())
    }
}

/// Run one forward pass and score every observed entry carrying `tag`.
pub fn evaluate(
    params: &ModelParameters,
    config: &ModelConfig,
    graph: &DynamicGraph,
    splits: &SplitAssignment,
    tag: SplitTag,
) -> Result<MetricsReport> {
    let entries = splits.entries(graph, tag);
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split `{tag}` holds no entries"
        )));
    }
    let adj = normalize_adjacency(graph.adjacency());
    let f = forward(params, &adj, config)?;
    let mut pairs = Vec::with_capacity(entries.len());
    for e in &entries {
        let pred = predict_edge(
            &f,
            e.i,
            e.j,
            e.t,
            &params.head_concat,
            &params.head_bias,
            &params.head_regressor,
        )?;
        pairs.push((pred, e.weight));
    }
    Ok(MetricsReport {
        split: tag.to_string(),
        count: pairs.len(),
        mae: mae(&pairs)?,
        rmse: rmse(&pairs)?,
    })
}
