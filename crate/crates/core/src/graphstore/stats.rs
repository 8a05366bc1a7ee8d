use super::{GraphError, Result, Sign, SignedGraph};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

/// Dataset statistics. `vertices`, `edges`, `cycles` and `components`
/// describe the whole graph; every `lcc_*`-derived field (density, triads,
/// degrees, negative share) is computed on the largest connected component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub vertices: usize,
    pub edges: usize,
    pub components: usize,
    /// `edges − vertices + components` (cycle rank).
    pub cycles: usize,
    pub lcc_vertices: usize,
    pub lcc_edges: usize,
    pub density: f64,
    pub triads: u64,
    pub avg_degree: f64,
    pub median_degree: usize,
    pub max_degree: usize,
    pub pct_negative: f64,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

fn components(g: &SignedGraph) -> (usize, Vec<usize>) {
    let n = g.node_count();
    let mut uf = UnionFind::new(n);
    for e in g.edges() {
        uf.union(e.u, e.v);
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let count = (0..n).filter(|&i| roots[i] == i).count();
    (count, roots)
}

pub fn component_count(g: &SignedGraph) -> usize {
    components(g).0
}

/// Undirected triangles, counted once each via ordered common neighbours.
pub fn triangle_count(g: &SignedGraph) -> u64 {
    let adj: Vec<Vec<usize>> = (0..g.node_count()).map(|i| g.neighbors(i)).collect();
    let mut count = 0u64;
    for e in g.edges() {
        let (a, b) = (&adj[e.u], &adj[e.v]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    if a[i] > e.v {
                        count += 1;
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    count
}

pub fn graph_stats(g: &SignedGraph) -> Result<GraphStats> {
    let n = g.node_count();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let (ncomp, roots) = components(g);
    let mut sizes = vec![0usize; n];
    roots.iter().for_each(|&r| sizes[r] += 1);
    // Largest component; ties go to the one containing the smallest node.
    let mut best = roots[0];
    for &r in &roots {
        if sizes[r] > sizes[best] {
            best = r;
        }
    }
    let members: Vec<usize> = (0..n).filter(|&i| roots[i] == best).collect();
    let mut remap = vec![usize::MAX; n];
    members.iter().enumerate().for_each(|(k, &i)| remap[i] = k);
    let lcc_edges: Vec<_> = g
        .edges()
        .iter()
        .filter(|e| roots[e.u] == best)
        .map(|e| super::SignedEdge {
            u: remap[e.u],
            v: remap[e.v],
            sign: e.sign,
        })
        .collect();
    let lcc = SignedGraph::from_edges(members.len(), lcc_edges)?;

    let ln = lcc.node_count();
    let le = lcc.edge_count();
    let mut degrees: Vec<usize> = (0..ln).map(|i| lcc.degree(i)).collect();
    degrees.sort_unstable();
    let density = if ln > 1 {
        2.0 * le as f64 / (ln as f64 * (ln as f64 - 1.0))
    } else {
        0.0
    };
    let pct_negative = if le > 0 {
        100.0 * lcc.count_sign(Sign::Negative) as f64 / le as f64
    } else {
        0.0
    };
    Ok(GraphStats {
        vertices: n,
        edges: g.edge_count(),
        components: ncomp,
        cycles: g.edge_count() + ncomp - n,
        lcc_vertices: ln,
        lcc_edges: le,
        density,
        triads: triangle_count(&lcc),
        avg_degree: 2.0 * le as f64 / ln as f64,
        median_degree: degrees[(ln - 1) / 2],
        max_degree: *degrees.last().expect("lcc is nonempty"),
        pct_negative,
    })
}

impl GraphStats {
    pub const HEADER: [&'static str; 10] = [
        "Graph", "Vertices", "Edges", "Cycles", "Density", "Triads", "Avg Deg.", "Median deg.", "Max deg.", "% of e-",
    ];

    pub fn table_cells(&self, name: &str) -> Vec<String> {
        vec![
            name.to_string(),
            self.vertices.to_string(),
            self.edges.to_string(),
            self.cycles.to_string(),
            format!("{:.3}", self.density),
            self.triads.to_string(),
            format!("{:.2}", self.avg_degree),
            self.median_degree.to_string(),
            self.max_degree.to_string(),
            format!("{:.2}", self.pct_negative),
        ]
    }

    /// Aligned text table with one row per named dataset.
    pub fn render_table(rows: &[(String, GraphStats)]) -> String {
        let mut cells = vec![Self::HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        cells.extend(rows.iter().map(|(name, s)| s.table_cells(name)));
        crate::eval::render_aligned(&cells)
    }
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        let _ = write!(s, "{}", Self::render_table(&[("graph".into(), self.clone())]));
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::super::SignedEdge;
    use super::*;
    use proptest::prelude::*;

    fn edge(u: usize, v: usize, neg: bool) -> SignedEdge {
        SignedEdge {
            u,
            v,
            sign: if neg { Sign::Negative } else { Sign::Positive },
        }
    }

    #[test]
    fn triangle_graph() {
        let g = SignedGraph::from_edges(3, [edge(0, 1, false), edge(1, 2, false), edge(0, 2, false)]).unwrap();
        let s = graph_stats(&g).unwrap();
        assert_eq!(s.cycles, 1);
        assert_eq!(s.triads, 1);
        assert_eq!(s.density, 1.0);
        assert_eq!(s.pct_negative, 0.0);
    }

    #[test]
    fn lcc_fields_ignore_small_components() {
        // Path 0-1-2-3 plus isolated pair 4-5 (negative).
        let g = SignedGraph::from_edges(
            6,
            [edge(0, 1, false), edge(1, 2, true), edge(2, 3, false), edge(4, 5, true)],
        )
        .unwrap();
        let s = graph_stats(&g).unwrap();
        assert_eq!((s.vertices, s.edges, s.components, s.cycles), (6, 4, 2, 0));
        assert_eq!((s.lcc_vertices, s.lcc_edges), (4, 3));
        assert_eq!(s.median_degree, 1);
        assert_eq!(s.max_degree, 2);
        assert!((s.pct_negative - 100.0 / 3.0).abs() < 1e-12);
        assert!((s.avg_degree - 1.5).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_is_error() {
        let g = SignedGraph::from_edges(0, []).unwrap();
        assert!(graph_stats(&g).is_err());
    }

    fn brute_triangles(g: &SignedGraph) -> u64 {
        let n = g.node_count();
        let mut c = 0;
        for a in 0..n {
            for b in a + 1..n {
                for d in b + 1..n {
                    if g.is_adjacent(a, b) && g.is_adjacent(b, d) && g.is_adjacent(a, d) {
                        c += 1;
                    }
                }
            }
        }
        c
    }

    /// Component count by depth-first search, independent of the union-find.
    fn dfs_components(g: &SignedGraph) -> usize {
        let n = g.node_count();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(x) = stack.pop() {
                for y in g.neighbors(x) {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        count
    }

    fn arb_graph() -> impl Strategy<Value = SignedGraph> {
        (2usize..50).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n, any::<bool>()), 0..(3 * n)).prop_map(move |es| {
                let mut seen = std::collections::HashSet::new();
                let edges: Vec<SignedEdge> = es
                    .into_iter()
                    .filter(|&(a, b, _)| a != b && seen.insert((a.min(b), a.max(b))))
                    .map(|(a, b, neg)| edge(a, b, neg))
                    .collect();
                SignedGraph::from_edges(n, edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn triangles_match_brute_force(g in arb_graph()) {
            prop_assert_eq!(triangle_count(&g), brute_triangles(&g));
        }

        #[test]
        fn cycle_rank_matches_independent_components(g in arb_graph()) {
            let s = graph_stats(&g).unwrap();
            prop_assert_eq!(s.cycles, g.edge_count() + dfs_components(&g) - g.node_count());
            prop_assert!((0.0..=100.0).contains(&s.pct_negative));
        }
    }
}
