//! Kolmogorov–Arnold layers: `y_j = Σ_i φ_ji(x_i)` with learnable univariate
//! functions drawn from one of four bases.

mod bspline;
mod checkpoint;

pub use bspline::{basis_count, bspline_basis, eval_point, expand_inputs, uniform_knots};
pub use checkpoint::{load_named, read_named, save_named, write_named, NamedTensors};

use crate::tensor::{softplus, Kernel, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum KanError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid KAN config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KanError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseActivation {
    #[default]
    Silu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KanBasis {
    Bspline,
    Fourier,
    Laplace,
    Wavelet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanConfig {
    /// Number of grid intervals (B-spline) or basis terms (other bases).
    pub grid_size: usize,
    pub spline_order: usize,
    pub scale_noise: f64,
    pub scale_base: f64,
    pub scale_spline: f64,
    pub grid_range: [f64; 2],
    /// Accepted for compatibility; the grid is static so this has no effect.
    pub grid_eps: f64,
    pub base_activation: BaseActivation,
}

impl Default for KanConfig {
    fn default() -> Self {
        Self {
            grid_size: 5,
            spline_order: 3,
            scale_noise: 0.1,
            scale_base: 1.0,
            scale_spline: 1.0,
            grid_range: [-1.0, 1.0],
            grid_eps: 0.02,
            base_activation: BaseActivation::Silu,
        }
    }
}

impl KanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(KanError::Config("grid_size must be at least 1".into()));
        }
        let [lo, hi] = self.grid_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(KanError::Config(format!("grid_range [{lo}, {hi}] is not an increasing interval")));
        }
        for (name, v) in [
            ("scale_noise", self.scale_noise),
            ("scale_base", self.scale_base),
            ("scale_spline", self.scale_spline),
            ("grid_eps", self.grid_eps),
        ] {
            if !v.is_finite() {
                return Err(KanError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn knots(&self) -> Vec<f64> {
        uniform_knots(self.grid_size, self.spline_order, self.grid_range)
    }
}

/// `φ(x) = w_b·SiLU(x) + w_s·Σ_k c_k B_k(x)` for every (output, input) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BsplineKanLayer {
    pub knots: Vec<f64>,
    pub order: usize,
    /// `out × in`.
    pub base_weight: Tensor,
    /// `out × (in·nb)`; input `i` owns columns `i·nb..(i+1)·nb`.
    pub spline_weight: Tensor,
    /// `out × in`.
    pub spline_scaler: Tensor,
}

/// `φ(x) = Σ_{k=1..G} a_k cos(kx) + b_k sin(kx)`, plus one bias per output.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierKanLayer {
    pub grid_size: usize,
    /// `out × (in·G)`.
    pub cos_coef: Tensor,
    pub sin_coef: Tensor,
    /// `1 × out`.
    pub bias: Tensor,
}

/// `φ(x) = Σ_k w_k·κ(x; c_k, softplus(ρ_k))` for a fixed kernel κ.
///
/// Laplace: `κ = exp(−λ|x − μ|)` with `c = μ`, `λ = softplus(ρ)`.
/// Wavelet: Ricker `κ = (1 − u²)·exp(−u²/2)`, `u = (x − t)/s` with `c = t`,
/// `s = softplus(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelKanLayer {
    pub kernel: Kernel,
    pub grid_size: usize,
    /// All three are `out × (in·G)`.
    pub amplitude: Tensor,
    pub center: Tensor,
    pub raw_scale: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KanLayer {
    Bspline(BsplineKanLayer),
    Fourier(FourierKanLayer),
    Laplace(KernelKanLayer),
    Wavelet(KernelKanLayer),
}

/// Inverse of softplus, for initializing a positive quantity at `y`.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Cholesky solve of the SPD system `m·x = b`, `m` given row-major `d × d`.
fn solve_spd(m: &[f64], b: &mut [f64], d: usize) -> Result<()> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = m[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return Err(KanError::Config("spline interpolation system is singular".into()));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    for i in 0..d {
        b[i] = (b[i] - (0..i).map(|k| l[i * d + k] * b[k]).sum::<f64>()) / l[i * d + i];
    }
    for i in (0..d).rev() {
        b[i] = (b[i] - (i + 1..d).map(|k| l[k * d + i] * b[k]).sum::<f64>()) / l[i * d + i];
    }
    Ok(())
}

/// Minimum-norm map from values at the `G + 1` grid points to spline
/// coefficients: `Aᵀ(AAᵀ)⁻¹`, returned as `nb × (G+1)`.
fn interpolation_operator(config: &KanConfig, knots: &[f64]) -> Result<Tensor> {
    let g = config.grid_size;
    let [lo, hi] = config.grid_range;
    let pts: Vec<f64> = (0..=g).map(|p| lo + (hi - lo) * p as f64 / g as f64).collect();
    let a = bspline_basis(&pts, knots, config.spline_order);
    let aat = a.matmul_t(&a)?;
    let d = g + 1;
    let mut inv = Tensor::zeros(d, d);
    for col in 0..d {
        let mut e = vec![0.0; d];
        e[col] = 1.0;
        solve_spd(aat.data(), &mut e, d)?;
        (0..d).for_each(|r| inv.set(r, col, e[r]));
    }
    Ok(a.transpose().matmul(&inv)?)
}

impl KanLayer {
    /// Builds a layer with the initialization for `basis`, drawing from `rng`.
    pub fn init<R: Rng + ?Sized>(
        basis: KanBasis,
        config: &KanConfig,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || out_dim == 0 {
            return Err(KanError::Config(format!("layer dims {in_dim}→{out_dim} must be positive")));
        }
        let g = config.grid_size;
        let [lo, hi] = config.grid_range;
        Ok(match basis {
            KanBasis::Bspline => {
                let knots = config.knots();
                let nb = basis_count(&knots, config.spline_order);
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt() * config.scale_base;
                let base_weight = Tensor::random_uniform(out_dim, in_dim, -bound, bound, rng);
                let op = interpolation_operator(config, &knots)?;
                let mut spline_weight = Tensor::zeros(out_dim, in_dim * nb);
                for j in 0..out_dim {
                    for i in 0..in_dim {
                        let noise: Vec<f64> = (0..=g)
                            .map(|_| (rng.gen::<f64>() - 0.5) * config.scale_noise / g as f64)
                            .collect();
                        for b in 0..nb {
                            let c: f64 = op.row(b).iter().zip(&noise).map(|(m, y)| m * y).sum();
                            spline_weight.set(j, i * nb + b, c);
                        }
                    }
                }
                KanLayer::Bspline(BsplineKanLayer {
                    knots,
                    order: config.spline_order,
                    base_weight,
                    spline_weight,
                    spline_scaler: Tensor::full(out_dim, in_dim, config.scale_spline),
                })
            }
            KanBasis::Fourier => {
                let std = 1.0 / (in_dim as f64 * (g as f64).sqrt());
                KanLayer::Fourier(FourierKanLayer {
                    grid_size: g,
                    cos_coef: Tensor::random_normal(out_dim, in_dim * g, std, rng),
                    sin_coef: Tensor::random_normal(out_dim, in_dim * g, std, rng),
                    bias: Tensor::zeros(1, out_dim),
                })
            }
            KanBasis::Laplace | KanBasis::Wavelet => {
                let std = 1.0 / ((in_dim * g) as f64).sqrt();
                let amplitude = Tensor::random_normal(out_dim, in_dim * g, std, rng);
                let center = Tensor::random_uniform(out_dim, in_dim * g, lo, hi, rng);
                let raw_scale = Tensor::full(out_dim, in_dim * g, softplus_inv(1.0));
                let (kernel, wrap): (Kernel, fn(KernelKanLayer) -> KanLayer) = match basis {
                    KanBasis::Laplace => (Kernel::Laplace, KanLayer::Laplace),
                    _ => (Kernel::Ricker, KanLayer::Wavelet),
                };
                wrap(KernelKanLayer {
                    kernel,
                    grid_size: g,
                    amplitude,
                    center,
                    raw_scale,
                })
            }
        })
    }

    pub fn basis(&self) -> KanBasis {
        match self {
            KanLayer::Bspline(_) => KanBasis::Bspline,
            KanLayer::Fourier(_) => KanBasis::Fourier,
            KanLayer::Laplace(_) => KanBasis::Laplace,
            KanLayer::Wavelet(_) => KanBasis::Wavelet,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            KanLayer::Bspline(l) => l.base_weight.cols(),
            KanLayer::Fourier(l) => l.cos_coef.cols() / l.grid_size,
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => l.amplitude.cols() / l.grid_size,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            KanLayer::Bspline(l) => l.base_weight.rows(),
            KanLayer::Fourier(l) => l.cos_coef.rows(),
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => l.amplitude.rows(),
        }
    }

    /// Named parameters in a fixed order; [`KanLayer::forward`] expects tape
    /// variables in the same order.
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            KanLayer::Bspline(l) => vec![
                ("base_weight", &l.base_weight),
                ("spline_weight", &l.spline_weight),
                ("spline_scaler", &l.spline_scaler),
            ],
            KanLayer::Fourier(l) => vec![("cos_coef", &l.cos_coef), ("sin_coef", &l.sin_coef), ("bias", &l.bias)],
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => vec![
                ("amplitude", &l.amplitude),
                ("center", &l.center),
                ("raw_scale", &l.raw_scale),
            ],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            KanLayer::Bspline(l) => vec![&mut l.base_weight, &mut l.spline_weight, &mut l.spline_scaler],
            KanLayer::Fourier(l) => vec![&mut l.cos_coef, &mut l.sin_coef, &mut l.bias],
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => vec![&mut l.amplitude, &mut l.center, &mut l.raw_scale],
        }
    }

    /// Records the layer applied to `x` (n × in). `params` are the tape
    /// variables holding [`KanLayer::parameters`], in order.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let inp = tape.value(x).cols();
        if inp != self.in_dim() {
            return Err(TensorError::Shape {
                op: "kan_forward",
                lhs: tape.value(x).shape(),
                rhs: (inp, self.in_dim()),
            }
            .into());
        }
        if params.len() != 3 {
            return Err(KanError::Config(format!("expected 3 parameter vars, got {}", params.len())));
        }
        Ok(match self {
            KanLayer::Bspline(l) => {
                let nb = basis_count(&l.knots, l.order);
                let (vals, ders) = expand_inputs(tape.value(x), &l.knots, l.order);
                let basis = tape.expand(x, nb, vals, ders)?;
                let scaler = tape.repeat_cols(params[2], nb)?;
                let coef = tape.mul(params[1], scaler)?;
                let spline = tape.matmul_t(basis, coef)?;
                let act = tape.silu(x)?;
                let base = tape.matmul_t(act, params[0])?;
                tape.add(base, spline)?
            }
            KanLayer::Fourier(l) => {
                let (cos, sin) = fourier_features(tape.value(x), l.grid_size);
                let cx = tape.expand(x, l.grid_size, cos.0, cos.1)?;
                let sx = tape.expand(x, l.grid_size, sin.0, sin.1)?;
                let yc = tape.matmul_t(cx, params[0])?;
                let ys = tape.matmul_t(sx, params[1])?;
                let y = tape.add(yc, ys)?;
                tape.add_row(y, params[2])?
            }
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => {
                let scale = tape.softplus(params[2])?;
                tape.kernel_sum(x, params[0], params[1], scale, l.grid_size, l.kernel)?
            }
        })
    }

    /// Forward pass outside of training.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let params: Vec<Var> = self.parameters().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let y = self.forward(&mut tape, xv, &params)?;
        Ok(tape.value(y).clone())
    }

    /// Positive scale parameters of kernel layers (`softplus` of the raw values).
    pub fn kernel_scales(&self) -> Option<Tensor> {
        match self {
            KanLayer::Laplace(l) | KanLayer::Wavelet(l) => Some(l.raw_scale.map(softplus)),
            _ => None,
        }
    }
}

type Features = (Tensor, Tensor);

/// `(cos(kx), d/dx)` and `(sin(kx), d/dx)` for `k = 1..=g`, laid out per input.
fn fourier_features(x: &Tensor, g: usize) -> (Features, Features) {
    let (n, inp) = x.shape();
    let mut c = (Tensor::zeros(n, inp * g), Tensor::zeros(n, inp * g));
    let mut s = (Tensor::zeros(n, inp * g), Tensor::zeros(n, inp * g));
    for r in 0..n {
        for i in 0..inp {
            let xv = x.get(r, i);
            for k in 1..=g {
                let col = i * g + k - 1;
                let kf = k as f64;
                let (sn, cs) = (kf * xv).sin_cos();
                c.0.set(r, col, cs);
                c.1.set(r, col, -kf * sn);
                s.0.set(r, col, sn);
                s.1.set(r, col, kf * cs);
            }
        }
    }
    (c, s)
}
