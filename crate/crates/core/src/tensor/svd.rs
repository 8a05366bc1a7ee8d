//! Randomized truncated SVD: Gaussian range finder with power iterations,
//! followed by an exact one-sided Jacobi SVD of the small projected matrix.

use super::{Result, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OVERSAMPLES: usize = 10;

/// `A ≈ u · diag(s) · vt`, singular values descending.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub vt: Tensor,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Tensor {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            us.row_mut(r).iter_mut().zip(&self.s).for_each(|(v, s)| *v *= s);
        }
        us.matmul(&self.vt).expect("factor shapes agree")
    }

    /// `U_k · Σ_k`, the projection of the rows of `A` on the top-k right
    /// singular directions.
    pub fn scaled_left(&self) -> Tensor {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            us.row_mut(r).iter_mut().zip(&self.s).for_each(|(v, s)| *v *= s);
        }
        us
    }
}

/// Rank-`k` factors of `a` using `iters` power iterations.
pub fn truncated_svd_factors(a: &Tensor, k: usize, iters: usize, seed: u64) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let full = m.min(n);
    if k > full {
        return Err(TensorError::Rank { k, n: full });
    }
    let l = (k + OVERSAMPLES).min(full);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Tensor::random_normal(n, l, 1.0, &mut rng);

    let at = a.transpose();
    let mut q = orthonormalize_columns(&a.matmul(&omega)?);
    for _ in 0..iters {
        let z = orthonormalize_columns(&at.matmul(&q)?);
        q = orthonormalize_columns(&a.matmul(&z)?);
    }
    // B = Qᵀ A is l × n; Jacobi-decompose Bᵀ = W Σ Vᵀ so that A ≈ (Q V) Σ Wᵀ.
    let bt = at.matmul(&q)?;
    let (w, sigma, v) = jacobi_svd(&bt);
    let left = q.matmul(&v)?;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    order.truncate(k);

    let mut u = Tensor::zeros(m, k);
    let mut vt = Tensor::zeros(k, n);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        // Deterministic sign: the largest-magnitude entry of each left vector is positive.
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for r in 0..m {
            let x = left.get(r, src);
            if x.abs() > best.abs() + 1e-12 {
                best = x;
                sign = if x < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for r in 0..m {
            u.set(r, dst, sign * left.get(r, src));
        }
        for c in 0..n {
            vt.set(dst, c, sign * w.get(c, src));
        }
        s.push(sigma[src]);
    }
    Ok(SvdFactors { u, s, vt })
}

/// `U_k Σ_k` of `a`; the spectral feature matrix.
pub fn truncated_svd(a: &Tensor, k: usize, iters: usize, seed: u64) -> Result<Tensor> {
    Ok(truncated_svd_factors(a, k, iters, seed)?.scaled_left())
}

/// Modified Gram–Schmidt applied twice. Columns that are numerically in the
/// span of earlier ones come back as zero columns.
pub fn orthonormalize_columns(a: &Tensor) -> Tensor {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a.get(r, c)).collect()).collect();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tiny = scale * 1e-12;
    for j in 0..n {
        let orig = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _pass in 0..2 {
            for i in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let qi = &head[i];
                let dot: f64 = qi.iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
                tail[0].iter_mut().zip(qi).for_each(|(v, q)| *v -= dot * q);
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tiny || norm <= orig * 1e-10 {
            cols[j].iter_mut().for_each(|v| *v = 0.0);
        } else {
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Tensor::from_fn(m, n, |r, c| cols[c][r])
}

/// One-sided Jacobi SVD of a tall `m × l` matrix: `M = W · diag(σ) · Vᵀ`.
/// Returns `(W, σ, V)`, unsorted. Columns of `W` belonging to zero singular
/// values are zero.
fn jacobi_svd(mat: &Tensor) -> (Tensor, Vec<f64>, Tensor) {
    let (m, l) = mat.shape();
    let mut cols: Vec<Vec<f64>> = (0..l).map(|c| (0..m).map(|r| mat.get(r, c)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..l).map(|c| (0..l).map(|r| if r == c { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..l {
            for q in p + 1..l {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a * b).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let w = Tensor::from_fn(m, l, |r, c| if sigma[c] > 0.0 { cols[c][r] / sigma[c] } else { 0.0 });
    let vt = Tensor::from_fn(l, l, |r, c| v[c][r]);
    (w, sigma, vt)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_singular_values() {
        let f = truncated_svd_factors(&Tensor::identity(5), 5, 10, 1).unwrap();
        for s in &f.s {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_is_exact() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.1, -0.7, 2.0];
        let a = Tensor::from_fn(4, 4, |r, c| u[r] * v[c]);
        let f = truncated_svd_factors(&a, 1, 10, 7).unwrap();
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-8);
    }

    #[test]
    fn k_above_dimension_is_error() {
        assert!(matches!(
            truncated_svd(&Tensor::identity(3), 4, 1, 0),
            Err(TensorError::Rank { k: 4, n: 3 })
        ));
    }

    #[test]
    fn zero_matrix_gives_zero_features() {
        let f = truncated_svd(&Tensor::zeros(6, 6), 3, 10, 0).unwrap();
        assert_eq!(f, Tensor::zeros(6, 3));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = Tensor::from_fn(9, 9, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let x = truncated_svd(&a, 3, 4, 11).unwrap();
        let y = truncated_svd(&a, 3, 4, 11).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn range_basis_is_orthonormal() {
        let a = Tensor::from_fn(12, 7, |r, c| ((r * 13 + c * 5) % 11) as f64 * 0.1 - 0.4);
        let q = orthonormalize_columns(&a);
        let g = q.transpose().matmul(&q).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let col_zero = (0..12).all(|r| q.get(r, i) == 0.0);
                let want = if i == j && !col_zero { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-8);
            }
        }
    }
}
