//! Planted-partition signed graphs with known community labels.

use super::{GraphError, Result, Sign, SignedEdge, SignedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Nodes are split into `blocks` equal groups. Each within-block pair is a
/// positive edge with probability `p_pos_within`; each between-block pair is
/// a negative edge with probability `p_neg_between`. Every generated edge then
/// has its sign flipped with probability `noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_pos_within: f64,
    pub p_neg_between: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            nodes_per_block: 20,
            p_pos_within: 0.5,
            p_neg_between: 0.5,
            noise: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return Err(GraphError::Spec("blocks and nodes_per_block must be positive".into()));
        }
        for (name, p) in [
            ("p_pos_within", self.p_pos_within),
            ("p_neg_between", self.p_neg_between),
            ("noise", self.noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraphError::Spec(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    /// Number of within-block and between-block node pairs.
    pub fn pair_counts(&self) -> (usize, usize) {
        let b = self.nodes_per_block;
        let within = self.blocks * b * (b.saturating_sub(1)) / 2;
        let n = self.node_count();
        (within, n * (n - 1) / 2 - within)
    }

    /// Expected fraction (in percent) of negative edges, as a ratio of
    /// expected counts.
    pub fn expected_pct_negative(&self) -> f64 {
        let (w, b) = self.pair_counts();
        let ew = w as f64 * self.p_pos_within;
        let eb = b as f64 * self.p_neg_between;
        if ew + eb == 0.0 {
            return 0.0;
        }
        100.0 * (eb * (1.0 - self.noise) + ew * self.noise) / (ew + eb)
    }

    pub fn generate(&self) -> Result<SyntheticGraph> {
        self.validate()?;
        let n = self.node_count();
        let labels: Vec<usize> = (0..n).map(|i| i / self.nodes_per_block).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut edges = Vec::new();
        let mut planted = [0usize; 2];
        for u in 0..n {
            for v in u + 1..n {
                let same = labels[u] == labels[v];
                let (p, sign) = if same {
                    (self.p_pos_within, Sign::Positive)
                } else {
                    (self.p_neg_between, Sign::Negative)
                };
                // Both draws are always taken so the stream layout does not depend on p.
                let keep = rng.gen::<f64>() < p;
                let flip = rng.gen::<f64>() < self.noise;
                if !keep {
                    continue;
                }
                let sign = match (sign, flip) {
                    (s, false) => s,
                    (Sign::Positive, true) => Sign::Negative,
                    (Sign::Negative, true) => Sign::Positive,
                };
                planted[usize::from(sign == Sign::Negative)] += 1;
                edges.push(SignedEdge { u, v, sign });
            }
        }
        Ok(SyntheticGraph {
            graph: SignedGraph::from_edges(n, edges)?,
            labels,
            planted_positive: planted[0],
            planted_negative: planted[1],
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticGraph {
    pub graph: SignedGraph,
    /// Ground-truth block of every node.
    pub labels: Vec<usize>,
    pub planted_positive: usize,
    pub planted_negative: usize,
}

impl SyntheticGraph {
    /// Writes `node,label` rows keyed by original node id.
    pub fn write_labels(&self, path: &Path) -> Result<()> {
        let io = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "node,label").map_err(io)?;
        for (id, l) in self.graph.node_ids().iter().zip(&self.labels) {
            writeln!(w, "{id},{l}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a `node,label` sidecar back into labels indexed like `g`.
pub fn read_labels(path: &Path, g: &SignedGraph) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = vec![None; g.node_count()];
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| GraphError::Malformed { line: i + 1, msg };
        let (id, label) = line.split_once(',').ok_or_else(|| bad("expected node,label".into()))?;
        let id: i64 = id.trim().parse().map_err(|_| bad(format!("bad node id {id:?}")))?;
        let label: usize = label.trim().parse().map_err(|_| bad(format!("bad label {label:?}")))?;
        if let Ok(k) = g.node_ids().binary_search(&id) {
            labels[k] = Some(label);
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(k, l)| l.ok_or_else(|| GraphError::Invalid(format!("no label for node {}", g.node_ids()[k]))))
        .collect()
}
