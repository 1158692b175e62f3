//! Radial interaction kernels.
//!
//! Every family is a function of the squared distance `q = |x - y|²`, so a
//! kernel is stored as its radial profile `φ(q)` together with the slope
//! `φ'(q)`. The gradient in the first argument is then `2 φ'(q) (x - y)`,
//! which is what the energy and sampler hot loops consume.
//!
//! | family | `K(x, y)` | `sup K(x, x)` |
//! |--------|-----------|---------------|
//! | Gaussian | `exp(-q / 2ℓ²)` | `1` |
//! | truncated Riesz | `(q + ε²)^(-s)` | `ε^(-2s)` |
//! | truncated log | `-log(q + ε²)` | `-2 log ε` |
//! | truncated multiquadric | `(1 + q/ε²)^(-s)` | `1` |
//!
//! All values are multiplied by an amplitude (1 unless stated), which lets a
//! test switch the interaction off entirely with amplitude 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian { lengthscale: f64 },
    TruncatedRiesz { epsilon: f64, exponent: f64 },
    TruncatedLog { epsilon: f64 },
    TruncatedMultiquadric { epsilon: f64, exponent: f64 },
}

/// A symmetric kernel on `R^d` with closed-form value and gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    amplitude: f64,
}

/// Default exponent of the Riesz and multiquadric families, `(d - 2) / 2`.
pub fn default_exponent(dim: usize) -> f64 {
    (dim as f64 - 2.0) / 2.0
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        match family {
            KernelFamily::Gaussian { lengthscale } => {
                if !(lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::invalid(
                        "lengthscale",
                        format!("must be positive and finite, got {lengthscale}"),
                    ));
                }
            }
            KernelFamily::TruncatedRiesz { epsilon, exponent }
            | KernelFamily::TruncatedMultiquadric { epsilon, exponent } => {
                check_epsilon(epsilon)?;
                if !exponent.is_finite() {
                    return Err(Error::invalid("exponent", "must be finite"));
                }
            }
            KernelFamily::TruncatedLog { epsilon } => check_epsilon(epsilon)?,
        }
        Ok(Self {
            family,
            dim,
            amplitude: 1.0,
        })
    }

    pub fn gaussian(dim: usize, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { lengthscale }, dim)
    }

    /// Truncated Riesz kernel; `exponent` defaults to `(d - 2) / 2`.
    pub fn truncated_riesz(dim: usize, epsilon: f64, exponent: Option<f64>) -> Result<Self> {
        let exponent = exponent.unwrap_or_else(|| default_exponent(dim));
        Self::new(KernelFamily::TruncatedRiesz { epsilon, exponent }, dim)
    }

    pub fn truncated_log(dim: usize, epsilon: f64) -> Result<Self> {
        Self::new(KernelFamily::TruncatedLog { epsilon }, dim)
    }

    pub fn truncated_multiquadric(dim: usize, epsilon: f64, exponent: Option<f64>) -> Result<Self> {
        let exponent = exponent.unwrap_or_else(|| default_exponent(dim));
        Self::new(KernelFamily::TruncatedMultiquadric { epsilon, exponent }, dim)
    }

    /// Scales the kernel by `amplitude`. Amplitude 0 gives `K ≡ 0`.
    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if !amplitude.is_finite() {
            return Err(Error::invalid("amplitude", "must be finite"));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// True when the kernel is non-negative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        self.amplitude >= 0.0 && !matches!(self.family, KernelFamily::TruncatedLog { .. })
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<()> {
        for len in [x.len(), y.len()] {
            if len != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: len,
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// `∇_x K(x, y)`.
    pub fn grad1(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, y)?;
        let (_, slope) = self.profile_with_slope(sq_dist(x, y));
        Ok(x.iter().zip(y).map(|(a, b)| 2.0 * slope * (a - b)).collect())
    }

    /// `C = sup_x K(x, x)`.
    pub fn diag_bound(&self) -> f64 {
        self.profile(0.0)
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.profile(sq_dist(x, y))
    }

    /// Radial profile `φ(q)` at squared distance `q`.
    #[inline]
    pub fn profile(&self, q: f64) -> f64 {
        let a = self.amplitude;
        match self.family {
            KernelFamily::Gaussian { lengthscale } => {
                a * (-q / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelFamily::TruncatedRiesz { epsilon, exponent } => {
                a * pow_neg(q + epsilon * epsilon, exponent)
            }
            KernelFamily::TruncatedLog { epsilon } => -a * (q + epsilon * epsilon).ln(),
            KernelFamily::TruncatedMultiquadric { epsilon, exponent } => {
                a * pow_neg(1.0 + q / (epsilon * epsilon), exponent)
            }
        }
    }

    /// `(φ(q), φ'(q))`; the gradient in the first argument is `2 φ'(q) (x - y)`.
    #[inline]
    pub fn profile_with_slope(&self, q: f64) -> (f64, f64) {
        let a = self.amplitude;
        match self.family {
            KernelFamily::Gaussian { lengthscale } => {
                let inv = 1.0 / (2.0 * lengthscale * lengthscale);
                let v = a * (-q * inv).exp();
                (v, -v * inv)
            }
            KernelFamily::TruncatedRiesz { epsilon, exponent } => {
                let u = q + epsilon * epsilon;
                let p = pow_neg(u, exponent);
                (a * p, -a * exponent * p / u)
            }
            KernelFamily::TruncatedLog { epsilon } => {
                let u = q + epsilon * epsilon;
                (-a * u.ln(), -a / u)
            }
            KernelFamily::TruncatedMultiquadric { epsilon, exponent } => {
                let e2 = epsilon * epsilon;
                let u = 1.0 + q / e2;
                let p = pow_neg(u, exponent);
                (a * p, -a * exponent * p / (u * e2))
            }
        }
    }

    /// Slope `φ'(q)` alone; skips the logarithm of the log family.
    #[inline]
    pub fn slope(&self, q: f64) -> f64 {
        match self.family {
            KernelFamily::TruncatedLog { epsilon } => -self.amplitude / (q + epsilon * epsilon),
            _ => self.profile_with_slope(q).1,
        }
    }

    /// Gram matrix over `points`, row-major `n × n`. Each off-diagonal pair is
    /// evaluated once and mirrored.
    pub fn gram(&self, points: &[&[f64]]) -> Result<Vec<f64>> {
        let n = points.len();
        for p in points {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: p.len(),
                });
            }
        }
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            g[i * n + i] = self.eval_unchecked(points[i], points[i]);
            for j in (i + 1)..n {
                let v = self.eval_unchecked(points[i], points[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        Ok(g)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "epsilon",
            format!("must be positive and finite, got {epsilon}"),
        ))
    }
}

/// `u^(-s)` with fast paths for the exponents used in practice.
#[inline]
fn pow_neg(u: f64, s: f64) -> f64 {
    if s == 0.5 {
        1.0 / u.sqrt()
    } else if s == 1.0 {
        1.0 / u
    } else if s == 0.0 {
        1.0
    } else if s == 1.5 {
        1.0 / (u * u.sqrt())
    } else {
        u.powf(-s)
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Radial profile specialised per family for the hot loops.
trait Radial {
    /// When set, `eval` returns `(u, φ'(q))` with `φ(q) = -a ln u`, so that
    /// logarithms can be taken of block products.
    const LOG: bool;
    fn eval(&self, q: f64) -> (f64, f64);
    fn amplitude(&self) -> f64;
}

struct GaussianProfile {
    a: f64,
    inv: f64,
}

impl Radial for GaussianProfile {
    const LOG: bool = false;
    #[inline(always)]
    fn eval(&self, q: f64) -> (f64, f64) {
        let v = self.a * (-q * self.inv).exp();
        (v, -v * self.inv)
    }
    fn amplitude(&self) -> f64 {
        self.a
    }
}

struct PowerProfile {
    a: f64,
    /// Riesz: `u = q + shift`; multiquadric: `u = 1 + q·scale`.
    shift: f64,
    scale: f64,
    s: f64,
}

impl Radial for PowerProfile {
    const LOG: bool = false;
    #[inline(always)]
    fn eval(&self, q: f64) -> (f64, f64) {
        let u = self.shift + q * self.scale;
        let inv = 1.0 / u;
        let p = if self.s == 0.5 { inv.sqrt() } else { pow_neg(u, self.s) };
        (self.a * p, -self.a * self.s * p * self.scale * inv)
    }
    fn amplitude(&self) -> f64 {
        self.a
    }
}

struct LogProfile {
    a: f64,
    e2: f64,
}

impl Radial for LogProfile {
    const LOG: bool = true;
    #[inline(always)]
    fn eval(&self, q: f64) -> (f64, f64) {
        let u = q + self.e2;
        (u, -self.a / u)
    }
    fn amplitude(&self) -> f64 {
        self.a
    }
}

const LOG_BLOCK: usize = 8;

#[inline(always)]
fn row_impl<R: Radial, const D: usize>(
    r: &R,
    dim: usize,
    x: &[f64],
    ys: &[f64],
    w: f64,
    gx: &mut [f64],
    mut gys: Option<&mut [f64]>,
) -> f64 {
    let d = if D > 0 { D } else { dim };
    let m = ys.len() / d;
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut block: [f64; LOG_BLOCK] = [1.0; LOG_BLOCK];
    let mut filled = 0;
    let mut acc = [0.0f64; 8];
    let mut acc_dyn = if D == 0 { vec![0.0; d] } else { Vec::new() };
    for j in 0..m {
        let y = &ys[j * d..(j + 1) * d];
        let mut q = 0.0;
        for c in 0..d {
            let t = x[c] - y[c];
            q += t * t;
        }
        let (v, slope) = r.eval(q);
        if R::LOG {
            block[filled] = v;
            prod *= v;
            filled += 1;
            if filled == LOG_BLOCK {
                sum += block_log(prod, &block);
                prod = 1.0;
                filled = 0;
            }
        } else {
            sum += v;
        }
        let f = 2.0 * w * slope;
        if let Some(g) = gys.as_deref_mut() {
            let gj = &mut g[j * d..(j + 1) * d];
            for c in 0..d {
                let t = f * (x[c] - y[c]);
                if D > 0 {
                    acc[c] += t;
                } else {
                    acc_dyn[c] += t;
                }
                gj[c] -= t;
            }
        } else {
            for c in 0..d {
                let t = f * (x[c] - y[c]);
                if D > 0 {
                    acc[c] += t;
                } else {
                    acc_dyn[c] += t;
                }
            }
        }
    }
    if R::LOG {
        if filled > 0 {
            sum += block_log(prod, &block[..filled]);
        }
        sum *= -r.amplitude();
    }
    for c in 0..d {
        gx[c] += if D > 0 { acc[c] } else { acc_dyn[c] };
    }
    sum
}

/// `Σ ln u_i` from the product of a block, unless it left the normal range.
#[inline(always)]
fn block_log(prod: f64, block: &[f64]) -> f64 {
    if prod.is_normal() {
        prod.ln()
    } else {
        block.iter().map(|u| u.ln()).sum()
    }
}

fn row_dispatch<R: Radial>(r: &R, x: &[f64], ys: &[f64], w: f64, gx: &mut [f64], gys: Option<&mut [f64]>) -> f64 {
    match x.len() {
        1 => row_impl::<R, 1>(r, 1, x, ys, w, gx, gys),
        2 => row_impl::<R, 2>(r, 2, x, ys, w, gx, gys),
        3 => row_impl::<R, 3>(r, 3, x, ys, w, gx, gys),
        d => row_impl::<R, 0>(r, d, x, ys, w, gx, gys),
    }
}

impl KernelSpec {
    /// `Σ_j K(x, y_j)` over the rows `y_j` of the row-major slice `ys`. Each
    /// term's scaled gradient `w ∇₁K(x, y_j)` is added to `gx` and, when
    /// `gys` is given, subtracted from row `j` of `gys`.
    pub(crate) fn row_sum_with_grad(
        &self,
        x: &[f64],
        ys: &[f64],
        w: f64,
        gx: &mut [f64],
        gys: Option<&mut [f64]>,
    ) -> f64 {
        debug_assert_eq!(ys.len() % x.len(), 0);
        let a = self.amplitude;
        match self.family {
            KernelFamily::Gaussian { lengthscale } => {
                let r = GaussianProfile {
                    a,
                    inv: 1.0 / (2.0 * lengthscale * lengthscale),
                };
                row_dispatch(&r, x, ys, w, gx, gys)
            }
            KernelFamily::TruncatedRiesz { epsilon, exponent } => {
                let r = PowerProfile {
                    a,
                    shift: epsilon * epsilon,
                    scale: 1.0,
                    s: exponent,
                };
                row_dispatch(&r, x, ys, w, gx, gys)
            }
            KernelFamily::TruncatedMultiquadric { epsilon, exponent } => {
                let r = PowerProfile {
                    a,
                    shift: 1.0,
                    scale: 1.0 / (epsilon * epsilon),
                    s: exponent,
                };
                row_dispatch(&r, x, ys, w, gx, gys)
            }
            KernelFamily::TruncatedLog { epsilon } => {
                let r = LogProfile { a, e2: epsilon * epsilon };
                row_dispatch(&r, x, ys, w, gx, gys)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_families(dim: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::gaussian(dim, 0.7).unwrap(),
            KernelSpec::truncated_riesz(dim, 0.1, Some(0.5)).unwrap(),
            KernelSpec::truncated_riesz(dim, 0.3, Some(1.3)).unwrap(),
            KernelSpec::truncated_log(dim, 1e-2).unwrap(),
            KernelSpec::truncated_multiquadric(dim, 0.5, Some(0.75)).unwrap(),
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn values_on_the_diagonal() {
        let g = KernelSpec::gaussian(2, 1.0).unwrap();
        assert_eq!(g.eval(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 1.0);

        let r = KernelSpec::truncated_riesz(3, 0.1, None).unwrap();
        assert_relative_eq!(r.eval(&[0.0; 3], &[0.0; 3]).unwrap(), 10.0, epsilon = 1e-12);

        let l = KernelSpec::truncated_log(2, 1e-2).unwrap();
        assert_relative_eq!(l.eval(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 9.210340371976184, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_bounds() {
        assert_eq!(KernelSpec::gaussian(4, 2.0).unwrap().diag_bound(), 1.0);
        assert_relative_eq!(
            KernelSpec::truncated_riesz(3, 0.1, Some(0.5)).unwrap().diag_bound(),
            10.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            KernelSpec::truncated_log(2, 1e-2).unwrap().diag_bound(),
            -2.0 * 1e-2f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(KernelSpec::truncated_multiquadric(2, 0.2, Some(2.0)).unwrap().diag_bound(), 1.0);
    }

    #[test]
    fn gaussian_gradient_closed_form() {
        let g = KernelSpec::gaussian(1, 1.0).unwrap();
        let grad = g.grad1(&[1.0], &[0.0]).unwrap();
        assert_relative_eq!(grad[0], -(-0.5f64).exp(), epsilon = 1e-15);
        let log = KernelSpec::truncated_log(2, 0.1).unwrap();
        let grad = log.grad1(&[0.3, 0.0], &[0.0, 0.4]).unwrap();
        let u = 0.25 + 0.01;
        assert_relative_eq!(grad[0], -2.0 * 0.3 / u, epsilon = 1e-14);
        assert_relative_eq!(grad[1], -2.0 * -0.4 / u, epsilon = 1e-14);
    }

    #[test]
    fn gradient_vanishes_on_the_diagonal() {
        for k in all_families(3) {
            let x = [0.2, -0.4, 1.1];
            assert!(k.grad1(&x, &x).unwrap().iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        assert!(matches!(
            k.eval(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(k.grad1(&[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(KernelSpec::truncated_log(2, -0.1).is_err());
        assert!(KernelSpec::truncated_riesz(3, 0.0, None).is_err());
        assert!(KernelSpec::gaussian(2, 0.0).is_err());
        assert!(KernelSpec::gaussian(0, 1.0).is_err());
    }

    #[test]
    fn symmetric_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in all_families(3) {
            for _ in 0..100 {
                let x = random_point(&mut rng, 3);
                let y = random_point(&mut rng, 3);
                assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in 1..=3 {
            for k in all_families(dim) {
                for _ in 0..100 {
                    let x = random_point(&mut rng, dim);
                    let y = random_point(&mut rng, dim);
                    let grad = k.grad1(&x, &y).unwrap();
                    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    for c in 0..dim {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[c] += h;
                        xm[c] -= h;
                        let fd = (k.eval(&xp, &y).unwrap() - k.eval(&xm, &y).unwrap()) / (2.0 * h);
                        let err = (fd - grad[c]).abs() / norm.max(1e-3);
                        assert!(err < 1e-6, "{k:?}: fd {fd} vs {} (rel {err})", grad[c]);
                    }
                }
            }
        }
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [
            KernelSpec::gaussian(3, 0.8).unwrap(),
            KernelSpec::truncated_riesz(3, 0.1, None).unwrap(),
        ] {
            for _ in 0..50 {
                let n = rng.random_range(1..=20);
                let pts: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, 3)).collect();
                let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
                let g = k.gram(&refs).unwrap();
                let m = nalgebra::DMatrix::from_row_slice(n, n, &g);
                let min_eig = m.symmetric_eigenvalues().min();
                assert!(min_eig > -1e-8 * k.diag_bound(), "{k:?}: {min_eig}");
            }
        }
    }

    #[test]
    fn row_sums_match_pointwise_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for d in 1..=4 {
            for k in [
                KernelSpec::gaussian(d, 0.7).unwrap(),
                KernelSpec::truncated_riesz(d, 0.1, Some(0.8)).unwrap(),
                KernelSpec::truncated_log(d, 0.01).unwrap().with_amplitude(2.0).unwrap(),
                KernelSpec::truncated_multiquadric(d, 0.3, None).unwrap(),
            ] {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let ys: Vec<f64> = (0..19 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut gx = vec![0.0; d];
                let mut gys = vec![0.0; ys.len()];
                let total = k.row_sum_with_grad(&x, &ys, 0.5, &mut gx, Some(&mut gys));
                let mut expect = 0.0;
                let mut expect_gx = vec![0.0; d];
                for (j, y) in ys.chunks_exact(d).enumerate() {
                    expect += k.eval(&x, y).unwrap();
                    let g = k.grad1(&x, y).unwrap();
                    for c in 0..d {
                        expect_gx[c] += 0.5 * g[c];
                        assert_relative_eq!(gys[j * d + c], -0.5 * g[c], max_relative = 1e-12, epsilon = 1e-14);
                    }
                }
                assert_relative_eq!(total, expect, max_relative = 1e-12);
                for c in 0..d {
                    assert_relative_eq!(gx[c], expect_gx[c], max_relative = 1e-12, epsilon = 1e-14);
                }
            }
        }
    }
}
