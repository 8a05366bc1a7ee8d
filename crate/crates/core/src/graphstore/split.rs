use super::{GraphError, Result, Sign, SignedEdge, SignedGraph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub train_edges: Vec<SignedEdge>,
    pub test_edges: Vec<SignedEdge>,
    pub seed: u64,
}

/// Stratified split: each sign class independently sends
/// `round(test_frac × class size)` edges to the test set.
///
/// Both output lists keep the graph's canonical edge order.
pub fn split_edges(g: &SignedGraph, test_frac: f64, seed: u64) -> Result<EdgeSplit> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(GraphError::Invalid(format!("test fraction {test_frac} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; g.edge_count()];
    for sign in [Sign::Positive, Sign::Negative] {
        let mut idx: Vec<usize> = (0..g.edge_count()).filter(|&i| g.edges()[i].sign == sign).collect();
        if idx.is_empty() {
            return Err(GraphError::EmptySignClass(sign));
        }
        let take = (test_frac * idx.len() as f64).round() as usize;
        idx.shuffle(&mut rng);
        idx[..take].iter().for_each(|&i| in_test[i] = true);
    }
    let (test, train): (Vec<_>, Vec<_>) = g.edges().iter().zip(&in_test).partition(|(_, &t)| t);
    Ok(EdgeSplit {
        train_edges: train.into_iter().map(|(e, _)| *e).collect(),
        test_edges: test.into_iter().map(|(e, _)| *e).collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn graph(pos: usize, neg: usize) -> SignedGraph {
        // A path; signs assigned along it.
        let edges = (0..pos + neg).map(|i| SignedEdge {
            u: i,
            v: i + 1,
            sign: if i < pos { Sign::Positive } else { Sign::Negative },
        });
        SignedGraph::from_edges(pos + neg + 1, edges).unwrap()
    }

    #[test]
    fn ten_and_ten() {
        let s = split_edges(&graph(10, 10), 0.2, 3).unwrap();
        let neg = s.test_edges.iter().filter(|e| e.sign == Sign::Negative).count();
        assert_eq!((s.test_edges.len() - neg, neg), (2, 2));
        assert_eq!(s.train_edges.len(), 16);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let g = graph(40, 40);
        assert_eq!(split_edges(&g, 0.2, 9).unwrap(), split_edges(&g, 0.2, 9).unwrap());
        assert_ne!(split_edges(&g, 0.2, 9).unwrap(), split_edges(&g, 0.2, 10).unwrap());
    }

    #[test]
    fn empty_class_is_named() {
        let err = split_edges(&graph(5, 0), 0.2, 0).unwrap_err();
        assert!(matches!(err, GraphError::EmptySignClass(Sign::Negative)));
        assert!(err.to_string().contains("negative"));
    }

    #[test]
    fn bad_fraction() {
        assert!(split_edges(&graph(3, 3), 0.0, 0).is_err());
        assert!(split_edges(&graph(3, 3), 1.0, 0).is_err());
    }

    #[test]
    fn partition_is_exact() {
        let g = graph(31, 19);
        let s = split_edges(&g, 0.2, 5).unwrap();
        let all: BTreeSet<_> = g.edges().iter().copied().collect();
        let train: BTreeSet<_> = s.train_edges.iter().copied().collect();
        let test: BTreeSet<_> = s.test_edges.iter().copied().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.union(&test).copied().collect::<BTreeSet<_>>(), all);
        // round(6.2) = 6, round(3.8) = 4
        assert_eq!(test.len(), 10);
    }
}
