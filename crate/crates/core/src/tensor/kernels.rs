//! Inner loops of `kernel_sum`, written so the compiler can vectorize them.
//! On x86-64 a copy specialised for AVX-512 or AVX2 with FMA is selected at
//! runtime.

use super::tape::Kernel;

const LOG2E: f64 = std::f64::consts::LOG2_E;
// Cody-Waite split of ln 2, written to full published precision.
#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
#[allow(clippy::excessive_precision)]
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Adding this rounds a double of magnitude < 2^51 to the nearest integer.
const ROUND: f64 = 6_755_399_441_055_744.0;
/// `2^52 + 1023`: the low mantissa bits of `k + BIAS` hold the exponent field.
const BIAS: f64 = 4_503_599_627_370_496.0 + 1023.0;

/// Branch-free `exp` accurate to a few ulp on `[-700, 700]`; inputs outside
/// are clamped.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let x = x.clamp(-700.0, 700.0);
    let k = (x * LOG2E + ROUND) - ROUND;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12; |r| ≤ ln2/2 keeps the remainder below 2e-16.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits((k + BIAS).to_bits() << 52);
    p * scale
}

/// A kernel split into its one transcendental call and the cheap algebra
/// around it, so the exponential can be cached between passes.
trait Shape {
    /// `ia` is `1/a`, precomputed by the caller.
    fn exponential(d: f64, a: f64, ia: f64) -> f64;
    /// `(f, ∂f/∂x, ∂f/∂a)` at offset `d = x − c` given `e = exponential(d, a)`;
    /// `∂f/∂c = −∂f/∂x`.
    fn terms(d: f64, a: f64, ia: f64, e: f64) -> (f64, f64, f64);
}

struct Laplace;
struct Ricker;

impl Shape for Laplace {
    #[inline(always)]
    fn exponential(d: f64, a: f64, _ia: f64) -> f64 {
        exp(-a * d.abs())
    }

    #[inline(always)]
    fn terms(d: f64, a: f64, _ia: f64, e: f64) -> (f64, f64, f64) {
        let sg = f64::from(u8::from(d > 0.0)) - f64::from(u8::from(d < 0.0));
        (e, -a * e * sg, -e * d.abs())
    }
}

impl Shape for Ricker {
    #[inline(always)]
    fn exponential(d: f64, _a: f64, ia: f64) -> f64 {
        let u = d * ia;
        exp(-0.5 * u * u)
    }

    #[inline(always)]
    fn terms(d: f64, _a: f64, ia: f64, e: f64) -> (f64, f64, f64) {
        let inv = ia;
        let u = d * inv;
        let u2 = u * u;
        let fp = u * (u2 - 3.0) * e;
        ((1.0 - u2) * e, fp * inv, -fp * u * inv)
    }
}

/// `Σ_m w[m]·f(xe[m] − c[m], a[m])`. The exponentials land in `e`, which the
/// caller may keep for [`row_backward`].
#[inline(always)]
fn forward_body<K: Shape>(
    xe: &[f64],
    w: &[f64],
    c: &[f64],
    a: &[f64],
    ia: &[f64],
    e: &mut [f64],
    buf: &mut [f64],
) -> f64 {
    let n = xe.len();
    let (w, c, a, ia, e, buf) = (&w[..n], &c[..n], &a[..n], &ia[..n], &mut e[..n], &mut buf[..n]);
    for m in 0..n {
        e[m] = K::exponential(xe[m] - c[m], a[m], ia[m]);
    }
    for m in 0..n {
        let d = xe[m] - c[m];
        buf[m] = w[m] * K::terms(d, a[m], ia[m], e[m]).0;
    }
    let mut acc = [0.0f64; 8];
    let mut chunks = buf.chunks_exact(8);
    for ch in &mut chunks {
        for l in 0..8 {
            acc[l] += ch[l];
        }
    }
    acc.iter().sum::<f64>() + chunks.remainder().iter().sum::<f64>()
}

/// Accumulates gradients of `gy · Σ_m w[m]·f(...)` into the slices, reusing
/// the exponentials from the forward pass.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn backward_body<K: Shape>(
    gy: f64,
    xe: &[f64],
    w: &[f64],
    c: &[f64],
    a: &[f64],
    ia: &[f64],
    e: &[f64],
    gxe: &mut [f64],
    gw: &mut [f64],
    gc: &mut [f64],
    ga: &mut [f64],
) {
    let n = xe.len();
    let (w, c, a, ia, e) = (&w[..n], &c[..n], &a[..n], &ia[..n], &e[..n]);
    let (gxe, gw, gc, ga) = (&mut gxe[..n], &mut gw[..n], &mut gc[..n], &mut ga[..n]);
    for m in 0..n {
        let (v, fx, fa) = K::terms(xe[m] - c[m], a[m], ia[m], e[m]);
        let wk = w[m] * gy;
        gxe[m] += wk * fx;
        gw[m] += gy * v;
        gc[m] -= wk * fx;
        ga[m] += wk * fa;
    }
}

/// Exponentials only, for a backward pass that did not keep them.
#[inline(always)]
fn exponentials_body<K: Shape>(xe: &[f64], c: &[f64], a: &[f64], ia: &[f64], e: &mut [f64]) {
    let n = xe.len();
    let (c, a, ia, e) = (&c[..n], &a[..n], &ia[..n], &mut e[..n]);
    for m in 0..n {
        e[m] = K::exponential(xe[m] - c[m], a[m], ia[m]);
    }
}

macro_rules! dispatch {
    ($name:ident, $avx512:ident, $avx:ident, $body:ident, ($($arg:ident: $ty:ty),*) -> $ret:ty) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f,avx2,fma")]
        unsafe fn $avx512(kernel: Kernel, $($arg: $ty),*) -> $ret {
            match kernel {
                Kernel::Laplace => $body::<Laplace>($($arg),*),
                Kernel::Ricker => $body::<Ricker>($($arg),*),
            }
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        unsafe fn $avx(kernel: Kernel, $($arg: $ty),*) -> $ret {
            match kernel {
                Kernel::Laplace => $body::<Laplace>($($arg),*),
                Kernel::Ricker => $body::<Ricker>($($arg),*),
            }
        }

        pub(crate) fn $name(kernel: Kernel, $($arg: $ty),*) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { $avx512(kernel, $($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { $avx(kernel, $($arg),*) };
                }
            }
            match kernel {
                Kernel::Laplace => $body::<Laplace>($($arg),*),
                Kernel::Ricker => $body::<Ricker>($($arg),*),
            }
        }
    };
}

dispatch!(row_forward, row_forward_avx512, row_forward_avx2, forward_body, (xe: &[f64], w: &[f64], c: &[f64], a: &[f64], ia: &[f64], e: &mut [f64], buf: &mut [f64]) -> f64);
dispatch!(
    row_backward,
    row_backward_avx512,
    row_backward_avx2,
    backward_body,
    (gy: f64, xe: &[f64], w: &[f64], c: &[f64], a: &[f64], ia: &[f64], e: &[f64], gxe: &mut [f64], gw: &mut [f64], gc: &mut [f64], ga: &mut [f64]) -> ()
);
dispatch!(row_exponentials, row_exponentials_avx512, row_exponentials_avx2, exponentials_body, (xe: &[f64], c: &[f64], a: &[f64], ia: &[f64], e: &mut [f64]) -> ());
