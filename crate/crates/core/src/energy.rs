//! Discrete energies of node configurations.
//!
//! Two diagonal conventions coexist and must not be mixed up:
//!
//! * [`hamiltonian`] follows the Gibbs energy
//!   `H_n(X) = (1/2n²) Σ_{i≠j} K(x_i, x_j) + (1/n) Σ_i V(x_i)` and excludes
//!   the diagonal `i = j`;
//! * [`interaction_energy`] is the energy `I_K(μ_X)` of the empirical measure
//!   `μ_X = n⁻¹ Σ δ_{x_i}`, a double sum over all ordered pairs including the
//!   diagonal.
//!
//! They are linked by `n² H_int + ½ Σ_i K(x_i, x_i) = (n²/2) I_K(μ_X)`.
//!
//! Scalar sums use Neumaier compensation; the summation order is fixed by
//! point order, so results are deterministic.

use crate::embedding::Potential;
use crate::error::{Error, Result};
use crate::kernels::{sq_dist, KernelSpec};

/// An ordered list of `n` points in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleConfiguration {
    dim: usize,
    coords: Vec<f64>,
}

impl ParticleConfiguration {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::invalid(
                "coords",
                format!("{} values do not form a non-empty set of {dim}-dimensional points", coords.len()),
            ));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coords", "values must be finite"));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, points.concat())
    }

    /// Wraps coordinates without the finiteness check; used for MALA proposals,
    /// which may overflow and are then rejected.
    pub(crate) fn from_raw(dim: usize, coords: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && coords.len() % dim == 0);
        Self { dim, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn to_points(&self) -> Vec<Vec<f64>> {
        self.points().map(|p| p.to_vec()).collect()
    }

    /// Returns the configuration with its points reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let coords = perm.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Self::from_raw(self.dim, coords)
    }
}

/// The two summands of `H_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub confinement: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(interaction: f64, confinement: f64) -> Self {
        Self {
            interaction,
            confinement,
            total: interaction + confinement,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn check_kernel_dim(x: &ParticleConfiguration, k: &KernelSpec) -> Result<()> {
    if x.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

fn check_potential_dim(x: &ParticleConfiguration, v: &Potential) -> Result<()> {
    match v.dim() {
        Some(d) if d != x.dim() => Err(Error::DimensionMismatch {
            expected: d,
            got: x.dim(),
        }),
        _ => Ok(()),
    }
}

/// `Σ_{i<j} K(x_i, x_j)`.
fn upper_pair_sum(x: &ParticleConfiguration, k: &KernelSpec) -> f64 {
    let n = x.len();
    let mut acc = Compensated::default();
    if k.amplitude() == 0.0 {
        return 0.0;
    }
    for i in 0..n {
        let xi = x.point(i);
        for j in (i + 1)..n {
            acc.add(k.profile(sq_dist(xi, x.point(j))));
        }
    }
    acc.value()
}

/// `H_n(X)` split into its pairwise and confinement parts.
pub fn hamiltonian(x: &ParticleConfiguration, k: &KernelSpec, v: &Potential) -> Result<EnergyBreakdown> {
    check_kernel_dim(x, k)?;
    check_potential_dim(x, v)?;
    let n = x.len() as f64;
    let interaction = upper_pair_sum(x, k) / (n * n);
    let mut conf = Compensated::default();
    for p in x.points() {
        conf.add(v.value(p));
    }
    Ok(EnergyBreakdown::new(interaction, conf.value() / n))
}

/// `H_n(X)` and `∇H_n(X)` in a single pass over the pairs. `grad` must hold
/// `n·d` values and is overwritten. Dimensions are assumed consistent.
pub fn hamiltonian_with_grad(
    x: &ParticleConfiguration,
    k: &KernelSpec,
    v: &Potential,
    grad: &mut [f64],
) -> EnergyBreakdown {
    let n = x.len();
    let d = x.dim();
    debug_assert_eq!(grad.len(), n * d);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv_n = 1.0 / n as f64;
    let pair_scale = inv_n * inv_n;

    let mut pairs = Compensated::default();
    if k.amplitude() != 0.0 {
        let coords = x.coords();
        for i in 0..n.saturating_sub(1) {
            let xi = &coords[i * d..(i + 1) * d];
            let (head, tail) = grad.split_at_mut((i + 1) * d);
            let row = k.row_sum_with_grad(xi, &coords[(i + 1) * d..], pair_scale, &mut head[i * d..], Some(tail));
            pairs.add(row);
        }
    }

    let mut conf = Compensated::default();
    let mut scratch = vec![0.0; d];
    for (i, p) in x.points().enumerate() {
        conf.add(v.value_and_grad(p, &mut scratch));
        for (g, s) in grad[i * d..(i + 1) * d].iter_mut().zip(&scratch) {
            *g += inv_n * s;
        }
    }
    EnergyBreakdown::new(pairs.value() * inv_n * inv_n, conf.value() * inv_n)
}

/// `∇H_n(X)`, one gradient vector per point.
pub fn grad_hamiltonian(x: &ParticleConfiguration, k: &KernelSpec, v: &Potential) -> Result<Vec<Vec<f64>>> {
    check_kernel_dim(x, k)?;
    check_potential_dim(x, v)?;
    let mut grad = vec![0.0; x.coords().len()];
    hamiltonian_with_grad(x, k, v, &mut grad);
    Ok(grad.chunks_exact(x.dim()).map(|g| g.to_vec()).collect())
}

/// `I_K(μ_X) = n⁻² Σ_i Σ_j K(x_i, x_j)`, diagonal included.
pub fn interaction_energy(x: &ParticleConfiguration, k: &KernelSpec) -> Result<f64> {
    check_kernel_dim(x, k)?;
    let n = x.len() as f64;
    let mut acc = Compensated::default();
    acc.add(2.0 * upper_pair_sum(x, k));
    for p in x.points() {
        acc.add(k.eval_unchecked(p, p));
    }
    Ok(acc.value() / (n * n))
}

/// `I_K(μ_X, μ_Y) = (nm)⁻¹ Σ_i Σ_j K(x_i, y_j)`.
pub fn cross_energy(x: &ParticleConfiguration, y: &ParticleConfiguration, k: &KernelSpec) -> Result<f64> {
    check_kernel_dim(x, k)?;
    check_kernel_dim(y, k)?;
    let mut acc = Compensated::default();
    for p in x.points() {
        for q in y.points() {
            acc.add(k.eval_unchecked(p, q));
        }
    }
    Ok(acc.value() / (x.len() as f64 * y.len() as f64))
}

/// Squared worst-case integration error over the unit ball of the RKHS between
/// the empirical measures of `x` and `y`:
/// `I_K(μ_X) - 2 I_K(μ_X, μ_Y) + I_K(μ_Y)`.
pub fn mmd_squared(x: &ParticleConfiguration, y: &ParticleConfiguration, k: &KernelSpec) -> Result<f64> {
    let xx = interaction_energy(x, k)?;
    let yy = interaction_energy(y, k)?;
    let xy = cross_energy(x, y, k)?;
    Ok(combine_mmd(xx, xy, yy))
}

fn combine_mmd(xx: f64, xy: f64, yy: f64) -> f64 {
    let mut acc = Compensated::default();
    acc.add(xx);
    acc.add(-2.0 * xy);
    acc.add(yy);
    acc.value()
}

/// A fixed node set standing in for the target measure, with its self-energy
/// computed once so that repeated MMD evaluations against it cost `O(nm)`.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    nodes: ParticleConfiguration,
    kernel: KernelSpec,
    self_energy: f64,
}

impl ReferenceSet {
    pub fn new(nodes: ParticleConfiguration, kernel: KernelSpec) -> Result<Self> {
        let self_energy = interaction_energy(&nodes, &kernel)?;
        Ok(Self {
            nodes,
            kernel,
            self_energy,
        })
    }

    pub fn nodes(&self) -> &ParticleConfiguration {
        &self.nodes
    }

    pub fn self_energy(&self) -> f64 {
        self.self_energy
    }

    pub fn mmd_squared(&self, x: &ParticleConfiguration) -> Result<f64> {
        let xx = interaction_energy(x, &self.kernel)?;
        let xy = cross_energy(x, &self.nodes, &self.kernel)?;
        Ok(combine_mmd(xx, xy, self.self_energy))
    }
}
