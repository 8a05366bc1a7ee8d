//! Row-wise cosine agreement between two embeddings of the same nodes.

use super::{EvalError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSimilarity {
    /// Mean cosine over the rows where both embeddings are nonzero.
    pub mean: f64,
    /// Rows skipped because either side has zero norm.
    pub skipped: usize,
}

pub fn avg_cosine_similarity(a: &Tensor, b: &Tensor) -> Result<CosineSimilarity> {
    if a.shape() != b.shape() {
        return Err(EvalError::Shape {
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (mut sum, mut used) = (0.0, 0usize);
    for r in 0..a.rows() {
        let (x, y) = (a.row(r), b.row(r));
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        sum += dot / (nx * ny);
        used += 1;
    }
    if used == 0 {
        return Err(EvalError::NoComparableRows);
    }
    Ok(CosineSimilarity {
        mean: sum / used as f64,
        skipped: a.rows() - used,
    })
}
