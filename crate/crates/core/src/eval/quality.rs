//! Signed clustering quality: positive edges kept inside clusters and
//! negative edges cut between them.

use super::{EvalError, Result};
use crate::graphstore::{Sign, SignedGraph};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    /// Fraction of positive edges inside a cluster.
    pub pos_in: f64,
    /// Fraction of negative edges between clusters.
    pub neg_out: f64,
    /// `pos_in + neg_out`.
    pub q: f64,
    /// `pos_in` was set to 1 because the graph has no positive edges.
    pub pos_in_vacuous: bool,
    /// `neg_out` was set to 1 because the graph has no negative edges.
    pub neg_out_vacuous: bool,
}

/// Edge counts split by sign and by whether the endpoints share a label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeCounts {
    pub pos_within: usize,
    pub pos_between: usize,
    pub neg_within: usize,
    pub neg_between: usize,
}

pub fn edge_counts(g: &SignedGraph, labels: &[usize]) -> Result<EdgeCounts> {
    if labels.len() != g.node_count() {
        return Err(EvalError::Length {
            what: "labels",
            expected: g.node_count(),
            got: labels.len(),
        });
    }
    let mut c = EdgeCounts::default();
    for e in g.edges() {
        let within = labels[e.u] == labels[e.v];
        match (e.sign, within) {
            (Sign::Positive, true) => c.pos_within += 1,
            (Sign::Positive, false) => c.pos_between += 1,
            (Sign::Negative, true) => c.neg_within += 1,
            (Sign::Negative, false) => c.neg_between += 1,
        }
    }
    Ok(c)
}

pub fn cluster_quality(g: &SignedGraph, labels: &[usize]) -> Result<ClusterQuality> {
    let c = edge_counts(g, labels)?;
    let ratio = |num: usize, other: usize| {
        let den = num + other;
        if den == 0 {
            (1.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (pos_in, pos_in_vacuous) = ratio(c.pos_within, c.pos_between);
    let (neg_out, neg_out_vacuous) = ratio(c.neg_between, c.neg_within);
    Ok(ClusterQuality {
        pos_in,
        neg_out,
        q: pos_in + neg_out,
        pos_in_vacuous,
        neg_out_vacuous,
    })
}
