//! Cox–de Boor evaluation of B-spline bases on a knot vector.

use crate::tensor::Tensor;

/// Uniform knots covering `range` with `order` extra knots on each side:
/// `grid_size + 2·order + 1` values, giving `grid_size + order` basis functions.
pub fn uniform_knots(grid_size: usize, order: usize, range: [f64; 2]) -> Vec<f64> {
    let h = (range[1] - range[0]) / grid_size as f64;
    (0..=grid_size + 2 * order)
        .map(|m| range[0] + (m as f64 - order as f64) * h)
        .collect()
}

/// Number of basis functions of the given order on `knots`.
pub fn basis_count(knots: &[f64], order: usize) -> usize {
    knots.len().saturating_sub(order + 1)
}

/// Orders below this evaluate on stack buffers.
const STACK_ORDER: usize = 16;

/// Values of every degree-`order` basis function at `x`, written into `out`
/// (length [`basis_count`]). When `deriv` is given it receives `dB_i/dx`.
///
/// Only the `order + 1` functions supported on the knot span holding `x` are
/// nonzero, so the recursion runs over that window alone.
pub fn eval_point(x: f64, knots: &[f64], order: usize, out: &mut [f64], mut deriv: Option<&mut [f64]>) {
    let nb = basis_count(knots, order);
    out[..nb].iter_mut().for_each(|v| *v = 0.0);
    if let Some(d) = deriv.as_deref_mut() {
        d[..nb].iter_mut().for_each(|v| *v = 0.0);
    }
    let m = knots.len() - 1;
    let s = knots.partition_point(|&t| t <= x);
    if s == 0 || s > m {
        return;
    }
    let s = s - 1;
    if order < STACK_ORDER {
        let mut b = [0.0; STACK_ORDER + 1];
        let mut prev = [0.0; STACK_ORDER + 1];
        local_window(x, knots, order, s, out, deriv, &mut b, &mut prev);
    } else {
        let (mut b, mut prev) = (vec![0.0; order + 2], vec![0.0; order + 2]);
        local_window(x, knots, order, s, out, deriv, &mut b, &mut prev);
    }
}

/// Cox–de Boor over the window of functions `s − order ..= s`; slot `j` of
/// `b` and `prev` holds function `s − order + j`, and slot `order + 1` stays
/// zero.
#[allow(clippy::too_many_arguments)]
fn local_window(
    x: f64,
    knots: &[f64],
    order: usize,
    s: usize,
    out: &mut [f64],
    deriv: Option<&mut [f64]>,
    b: &mut [f64],
    prev: &mut [f64],
) {
    let m = knots.len() - 1;
    let nb = basis_count(knots, order);
    let lo = s as isize - order as isize;
    b[order] = 1.0;
    for p in 1..=order {
        if p == order {
            prev.copy_from_slice(b);
        }
        for j in order - p..=order {
            let i = lo + j as isize;
            if i < 0 || i as usize >= m - p {
                continue;
            }
            let i = i as usize;
            let left = (x - knots[i]) / (knots[i + p] - knots[i]) * b[j];
            let right = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * b[j + 1];
            b[j] = left + right;
        }
    }
    for j in 0..=order {
        let i = lo + j as isize;
        if i >= 0 && (i as usize) < nb {
            out[i as usize] = b[j];
        }
    }
    if let Some(d) = deriv {
        if order == 0 {
            return;
        }
        let k = order as f64;
        for j in 0..=order {
            let i = lo + j as isize;
            if i < 0 || i as usize >= nb {
                continue;
            }
            let i = i as usize;
            let l = k / (knots[i + order] - knots[i]) * prev[j];
            let r = k / (knots[i + order + 1] - knots[i + 1]) * prev[j + 1];
            d[i] = l - r;
        }
    }
}

/// `len(x) × basis_count` matrix of basis values.
pub fn bspline_basis(x: &[f64], knots: &[f64], order: usize) -> Tensor {
    let nb = basis_count(knots, order);
    let mut out = Tensor::zeros(x.len(), nb);
    for (r, &xv) in x.iter().enumerate() {
        eval_point(xv, knots, order, out.row_mut(r), None);
    }
    out
}

/// Basis values and derivatives for every entry of `x` (n × in), laid out
/// as n × (in·nb) with input `i` occupying columns `i·nb..(i+1)·nb`.
pub fn expand_inputs(x: &Tensor, knots: &[f64], order: usize) -> (Tensor, Tensor) {
    let nb = basis_count(knots, order);
    let (n, inp) = x.shape();
    let mut vals = Tensor::zeros(n, inp * nb);
    let mut ders = Tensor::zeros(n, inp * nb);
    for r in 0..n {
        for i in 0..inp {
            let xv = x.get(r, i);
            let span = i * nb..(i + 1) * nb;
            let d = &mut ders.row_mut(r)[span.clone()];
            eval_point(xv, knots, order, &mut vals.row_mut(r)[span], Some(d));
        }
    }
    (vals, ders)
}
