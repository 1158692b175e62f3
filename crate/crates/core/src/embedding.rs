//! Kernel embedding of the target and the confining potential built from it.
//!
//! With `Û(z) = M⁻¹ Σ_i K(z, z_i)` estimated from an MH chain targeting π, the
//! equilibrated potential is
//!
//! ```text
//! V(z) = -Û(z)                    for |z| ≤ R
//! V(z) = -Û(z) + |z|² - R²        for |z| > R
//! ```
//!
//! whose equilibrium measure is (the chain's approximation of) π. `V` is
//! continuous on the sphere `|z| = R`; its gradient there is taken from the
//! inside branch.

use std::sync::Arc;

use crate::energy::{Compensated, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::kernels::{sq_dist, KernelSpec};
use crate::measures::TargetMeasure;
use crate::rng::Rng;
use crate::samplers::random_walk_chain;

/// Reference points `z_1..z_M` and the kernel they are averaged against.
#[derive(Clone, Debug)]
pub struct EmbeddingEstimate {
    points: ParticleConfiguration,
    kernel: KernelSpec,
    table: Option<EmbeddingTable>,
}

impl EmbeddingEstimate {
    pub fn new(points: ParticleConfiguration, kernel: KernelSpec) -> Result<Self> {
        if points.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: points.dim(),
            });
        }
        Ok(Self {
            points,
            kernel,
            table: None,
        })
    }

    pub fn points(&self) -> &ParticleConfiguration {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    /// `Û(z)`, always from the reference points.
    pub fn value_exact(&self, z: &[f64]) -> f64 {
        let mut acc = Compensated::default();
        for p in self.points.points() {
            acc.add(self.kernel.profile(sq_dist(z, p)));
        }
        acc.value() / self.len() as f64
    }

    /// `Û(z)` and `∇Û(z)` (written into `grad`), always from the reference points.
    pub fn value_and_grad_exact(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = Compensated::default();
        // Rows in blocks keep the plain partial sums short.
        let d = z.len();
        for block in self.points.coords().chunks(256 * d) {
            acc.add(self.kernel.row_sum_with_grad(z, block, 1.0, grad, None));
        }
        let inv_m = 1.0 / self.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv_m);
        acc.value() * inv_m
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match &self.table {
            Some(t) if t.contains(z) => t.interpolate(z, None),
            _ => self.value_exact(z),
        }
    }

    pub fn value_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        match &self.table {
            Some(t) if t.contains(z) => t.interpolate(z, Some(grad)),
            _ => self.value_and_grad_exact(z, grad),
        }
    }

    /// Precomputes `Û` and `∇Û` on a regular grid over `[-half_width, half_width]^d`
    /// with `nodes_per_axis` nodes per axis. Inside the box, evaluations become
    /// multilinear interpolations of the node values (`O(2^d)` instead of
    /// `O(M)`); outside they fall back to the exact sum.
    pub fn tabulate(mut self, half_width: f64, nodes_per_axis: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("half_width", "must be positive"));
        }
        if nodes_per_axis < 2 {
            return Err(Error::invalid("nodes_per_axis", "need at least 2 nodes per axis"));
        }
        let d = self.kernel.dim();
        let total = nodes_per_axis
            .checked_pow(d as u32)
            .filter(|t| *t <= 50_000_000)
            .ok_or_else(|| Error::invalid("nodes_per_axis", "grid too large for this dimension"))?;
        let step = 2.0 * half_width / (nodes_per_axis - 1) as f64;
        let mut values = Vec::with_capacity(total);
        let mut grads = vec![0.0; total * d];
        let mut z = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            for c in 0..d {
                z[c] = -half_width + step * (rem % nodes_per_axis) as f64;
                rem /= nodes_per_axis;
            }
            values.push(self.value_and_grad_exact(&z, &mut grads[idx * d..(idx + 1) * d]));
        }
        self.table = Some(EmbeddingTable {
            dim: d,
            half_width,
            step,
            nodes: nodes_per_axis,
            values,
            grads,
        });
        Ok(self)
    }
}

/// Regular-grid tabulation of `Û` and `∇Û`; node `(i_1, .., i_d)` is stored
/// at `Σ_c i_c · nodes^c`.
#[derive(Clone, Debug)]
struct EmbeddingTable {
    dim: usize,
    half_width: f64,
    step: f64,
    nodes: usize,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl EmbeddingTable {
    fn contains(&self, z: &[f64]) -> bool {
        z.iter().all(|v| v.abs() <= self.half_width)
    }

    fn interpolate(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut frac = [0.0f64; 8];
        let mut strides = [0usize; 8];
        for c in 0..d {
            let t = (z[c] + self.half_width) / self.step;
            let i = (t.floor() as usize).min(self.nodes - 2);
            frac[c] = t - i as f64;
            base += i * stride;
            strides[c] = stride;
            stride *= self.nodes;
        }
        let mut value = 0.0;
        let mut g = [0.0f64; 8];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for c in 0..d {
                if corner >> c & 1 == 1 {
                    w *= frac[c];
                    idx += strides[c];
                } else {
                    w *= 1.0 - frac[c];
                }
            }
            value += w * self.values[idx];
            for c in 0..d {
                g[c] += w * self.grads[idx * d + c];
            }
        }
        if let Some(out) = grad {
            out.copy_from_slice(&g[..d]);
        }
        value
    }
}

/// The confining potential of the Gibbs measure.
#[derive(Clone, Debug)]
pub enum Potential {
    /// `V ≡ 0`.
    Zero,
    /// `V(x) = |x|²/2`.
    Quadratic,
    /// `V = -Û + Φ` with `Φ(z) = (|z|² - R²)₊`.
    Equilibrated(Arc<EquilibratedPotential>),
}

#[derive(Clone, Debug)]
pub struct EquilibratedPotential {
    embedding: EmbeddingEstimate,
    radius: f64,
}

impl EquilibratedPotential {
    pub fn embedding(&self) -> &EmbeddingEstimate {
        &self.embedding
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Potential {
    /// `V^π` from an embedding estimate and a support radius `R`.
    pub fn equilibrated(embedding: EmbeddingEstimate, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
        }
        Ok(Potential::Equilibrated(Arc::new(EquilibratedPotential {
            embedding,
            radius,
        })))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Potential::Equilibrated(p) => Some(p.embedding.kernel.dim()),
            _ => None,
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic => 0.5 * z.iter().map(|v| v * v).sum::<f64>(),
            Potential::Equilibrated(p) => {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                let outside = r2 - p.radius * p.radius;
                let phi = if outside > 0.0 { outside } else { 0.0 };
                -p.embedding.value(z) + phi
            }
        }
    }

    /// `V(z)`, with `∇V(z)` written into `grad`.
    pub fn value_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Potential::Zero => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                0.0
            }
            Potential::Quadratic => {
                grad.copy_from_slice(z);
                0.5 * z.iter().map(|v| v * v).sum::<f64>()
            }
            Potential::Equilibrated(p) => {
                let u = p.embedding.value_and_grad(z, grad);
                grad.iter_mut().for_each(|g| *g = -*g);
                let r2: f64 = z.iter().map(|v| v * v).sum();
                let outside = r2 - p.radius * p.radius;
                if outside > 0.0 {
                    for (g, v) in grad.iter_mut().zip(z) {
                        *g += 2.0 * v;
                    }
                    -u + outside
                } else {
                    -u
                }
            }
        }
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.value_and_grad(z, &mut g);
        g
    }
}

/// Estimates the kernel embedding of `target` from a random-walk MH chain of
/// length `m` (isotropic Gaussian proposals with standard deviation
/// `proposal_std`), started at an exact draw. Every state is kept.
pub fn estimate_embedding(
    target: &TargetMeasure,
    kernel: &KernelSpec,
    m: usize,
    proposal_std: f64,
    rng: &mut Rng,
) -> Result<EmbeddingEstimate> {
    estimate_tempered_embedding(target, 1.0, kernel, m, proposal_std, rng)
}

/// As [`estimate_embedding`], for the tempered target `π^t ∝ exp(t log π)`.
pub fn estimate_tempered_embedding(
    target: &TargetMeasure,
    exponent: f64,
    kernel: &KernelSpec,
    m: usize,
    proposal_std: f64,
    rng: &mut Rng,
) -> Result<EmbeddingEstimate> {
    if m == 0 {
        return Err(Error::invalid("m", "embedding needs at least one reference point"));
    }
    if target.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: target.dim(),
        });
    }
    let start = target.exact_sample(rng)?;
    let chain = random_walk_chain(
        |x| exponent * target.log_density_unnorm(x),
        start,
        m,
        proposal_std,
        rng,
    )?;
    EmbeddingEstimate::new(chain.states, *kernel)
}
