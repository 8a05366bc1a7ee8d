//! Signed edge lists: ingest, preprocessing into an undirected [`SignedGraph`],
//! dataset statistics, and stratified train/test splits.

mod load;
mod split;
mod stats;
mod synth;

pub use load::{load_edge_list, parse_edge_list, write_edge_list, write_raw_edge_list, Delimiter, EdgeListFormat};
pub use split::{split_edges, EdgeSplit};
pub use stats::{component_count, graph_stats, triangle_count, GraphStats};
pub use synth::{read_labels, SyntheticGraph, SyntheticSpec};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no {0} edges available")]
    EmptySignClass(Sign),
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn from_weight(w: f64) -> Self {
        if w < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
        })
    }
}

/// One record of an edge list, exactly as read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawEdge {
    pub source: i64,
    pub target: i64,
    pub weight: f64,
}

/// Edge records in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawEdgeList {
    pub records: Vec<RawEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedEdge {
    pub u: usize,
    pub v: usize,
    pub sign: Sign,
}

/// An undirected signed graph over nodes `0..n`.
///
/// Edges are stored once with `u < v`; adjacency is sorted and split by sign.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGraph {
    n: usize,
    pos_adj: Vec<Vec<usize>>,
    neg_adj: Vec<Vec<usize>>,
    edges: Vec<SignedEdge>,
    node_ids: Vec<i64>,
}

impl SignedGraph {
    /// Builds a graph over `0..n` and checks every structural invariant.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = SignedEdge>) -> Result<Self> {
        Self::with_node_ids(n, edges, (0..n as i64).collect())
    }

    pub fn with_node_ids(n: usize, edges: impl IntoIterator<Item = SignedEdge>, node_ids: Vec<i64>) -> Result<Self> {
        if node_ids.len() != n {
            return Err(GraphError::Invalid(format!("{} node ids for {n} nodes", node_ids.len())));
        }
        let mut seen = HashSet::new();
        let mut edges: Vec<SignedEdge> = edges
            .into_iter()
            .map(|e| {
                let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
                SignedEdge { u, v, sign: e.sign }
            })
            .collect();
        let mut pos_adj = vec![Vec::new(); n];
        let mut neg_adj = vec![Vec::new(); n];
        for e in &edges {
            if e.v >= n {
                return Err(GraphError::Invalid(format!("edge ({}, {}) outside 0..{n}", e.u, e.v)));
            }
            if e.u == e.v {
                return Err(GraphError::Invalid(format!("self-loop at {}", e.u)));
            }
            if !seen.insert((e.u, e.v)) {
                return Err(GraphError::Invalid(format!("duplicate edge ({}, {})", e.u, e.v)));
            }
            let adj = match e.sign {
                Sign::Positive => &mut pos_adj,
                Sign::Negative => &mut neg_adj,
            };
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        pos_adj.iter_mut().chain(neg_adj.iter_mut()).for_each(|a| a.sort_unstable());
        edges.sort_unstable();
        Ok(Self {
            n,
            pos_adj,
            neg_adj,
            edges,
            node_ids,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[SignedEdge] {
        &self.edges
    }

    /// `N_i^+` for every node.
    pub fn pos_adj(&self) -> &[Vec<usize>] {
        &self.pos_adj
    }

    /// `N_i^-` for every node.
    pub fn neg_adj(&self) -> &[Vec<usize>] {
        &self.neg_adj
    }

    /// Original identifier of each dense node index.
    pub fn node_ids(&self) -> &[i64] {
        &self.node_ids
    }

    pub fn degree(&self, i: usize) -> usize {
        self.pos_adj[i].len() + self.neg_adj[i].len()
    }

    pub fn edges_with_sign(&self, sign: Sign) -> impl Iterator<Item = &SignedEdge> {
        self.edges.iter().filter(move |e| e.sign == sign)
    }

    pub fn count_sign(&self, sign: Sign) -> usize {
        self.edges_with_sign(sign).count()
    }

    /// All neighbors of `i` regardless of sign, sorted.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut all: Vec<usize> = self.pos_adj[i].iter().chain(&self.neg_adj[i]).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.pos_adj[i].binary_search(&j).is_ok() || self.neg_adj[i].binary_search(&j).is_ok()
    }

    /// The same nodes with a different edge set (e.g. training edges only).
    pub fn with_edge_subset(&self, edges: &[SignedEdge]) -> Result<Self> {
        Self::with_node_ids(self.n, edges.iter().copied(), self.node_ids.clone())
    }

    /// Dense signed adjacency: `+1`, `−1` or `0`.
    pub fn dense_adjacency(&self) -> crate::tensor::Tensor {
        let mut a = crate::tensor::Tensor::zeros(self.n, self.n);
        for e in &self.edges {
            let s = f64::from(e.sign.as_i8());
            a.set(e.u, e.v, s);
            a.set(e.v, e.u, s);
        }
        a
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n || perm.iter().collect::<BTreeSet<_>>().len() != self.n {
            return Err(GraphError::Invalid("not a permutation".into()));
        }
        let mut ids = vec![0; self.n];
        for (i, &p) in perm.iter().enumerate() {
            ids[p] = self.node_ids[i];
        }
        let edges = self.edges.iter().map(|e| SignedEdge {
            u: perm[e.u],
            v: perm[e.v],
            sign: e.sign,
        });
        Self::with_node_ids(self.n, edges, ids)
    }
}

/// Drops self-loops, keeps the first record of every unordered pair, maps
/// weight ≥ 0 to positive, and densely reindexes surviving node ids in
/// ascending order of the original ids.
pub fn preprocess(raw: &RawEdgeList) -> SignedGraph {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for r in &raw.records {
        if r.source == r.target {
            continue;
        }
        let key = (r.source.min(r.target), r.source.max(r.target));
        if seen.insert(key) {
            kept.push((key.0, key.1, Sign::from_weight(r.weight)));
        }
    }
    let ids: Vec<i64> = kept
        .iter()
        .flat_map(|&(a, b, _)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |id: i64| ids.binary_search(&id).expect("id collected above");
    let edges: Vec<SignedEdge> = kept
        .iter()
        .map(|&(a, b, sign)| SignedEdge {
            u: index(a),
            v: index(b),
            sign,
        })
        .collect();
    SignedGraph::with_node_ids(ids.len(), edges, ids).expect("preprocessing yields a valid graph")
}

/// Encodes a graph back into raw records (original ids, weights ±1).
pub fn encode(g: &SignedGraph) -> RawEdgeList {
    RawEdgeList {
        records: g
            .edges()
            .iter()
            .map(|e| RawEdge {
                source: g.node_ids()[e.u],
                target: g.node_ids()[e.v],
                weight: f64::from(e.sign.as_i8()),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(rs: &[(i64, i64, f64)]) -> RawEdgeList {
        RawEdgeList {
            records: rs
                .iter()
                .map(|&(source, target, weight)| RawEdge { source, target, weight })
                .collect(),
        }
    }

    #[test]
    fn self_loop_dropped_first_pair_kept() {
        let g = preprocess(&raw(&[(0, 0, 5.0), (0, 1, -1.0), (1, 0, 3.0)]));
        assert_eq!(g.node_count(), 2);
        assert_eq!(
            g.edges(),
            &[SignedEdge {
                u: 0,
                v: 1,
                sign: Sign::Negative
            }]
        );
    }

    #[test]
    fn neutral_is_positive_and_reindexed() {
        let g = preprocess(&raw(&[(4, 7, 0.0)]));
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.node_ids(), &[4, 7]);
        assert_eq!(
            g.edges(),
            &[SignedEdge {
                u: 0,
                v: 1,
                sign: Sign::Positive
            }]
        );
    }

    #[test]
    fn empty_input_empty_graph() {
        let g = preprocess(&RawEdgeList::default());
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn from_edges_rejects_bad_structure() {
        let e = |u, v| SignedEdge {
            u,
            v,
            sign: Sign::Positive,
        };
        assert!(SignedGraph::from_edges(3, [e(1, 1)]).is_err());
        assert!(SignedGraph::from_edges(3, [e(0, 1), e(1, 0)]).is_err());
        assert!(SignedGraph::from_edges(2, [e(0, 2)]).is_err());
    }

    fn arb_raw() -> impl Strategy<Value = RawEdgeList> {
        prop::collection::vec((0i64..25, 0i64..25, -3i32..4), 0..80)
            .prop_map(|v| raw(&v.into_iter().map(|(a, b, w)| (a, b, f64::from(w))).collect::<Vec<_>>()))
    }

    proptest! {
        #[test]
        fn preprocess_invariants(r in arb_raw()) {
            let g = preprocess(&r);
            let n = g.node_count();
            for i in 0..n {
                prop_assert!(!g.pos_adj()[i].contains(&i));
                prop_assert!(!g.neg_adj()[i].contains(&i));
                prop_assert!(g.pos_adj()[i].iter().all(|j| g.neg_adj()[i].binary_search(j).is_err()));
                prop_assert!(g.degree(i) > 0);
            }
            for e in g.edges() {
                prop_assert!(e.u < e.v && e.v < n);
            }
            let mut ids = g.node_ids().to_vec();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert!(g.node_ids().windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn preprocess_is_idempotent(r in arb_raw()) {
            let g = preprocess(&r);
            prop_assert_eq!(preprocess(&encode(&g)), g);
        }
    }
}
