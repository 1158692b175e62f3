//! Compactly supported target distributions.
//!
//! Densities are unnormalized, except that mixture components carry their own
//! truncated-Gaussian normalizer so that mixture weights mean what they say.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

const REJECTION_BUDGET: usize = 1_000_000;

/// One hard-truncated isotropic Gaussian: `N(center, variance I)` restricted
/// to the ball `B(center, trunc_radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub center: Vec<f64>,
    pub variance: f64,
    pub trunc_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetFamily {
    /// Uniform on the closed ball `B(0, radius)`.
    UniformBall { radius: f64 },
    TruncatedGaussian(TruncatedGaussian),
    TruncatedGaussianMixture {
        components: Vec<TruncatedGaussian>,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetMeasure {
    family: TargetFamily,
    dim: usize,
    support_radius: f64,
    /// Per-component `log w_j - log Z_j` for mixtures.
    log_mass: Vec<f64>,
}

impl TargetMeasure {
    pub fn uniform_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        check_positive("radius", radius)?;
        Ok(Self {
            family: TargetFamily::UniformBall { radius },
            dim,
            support_radius: radius,
            log_mass: Vec::new(),
        })
    }

    pub fn truncated_gaussian(center: Vec<f64>, variance: f64, trunc_radius: f64) -> Result<Self> {
        let component = TruncatedGaussian {
            center,
            variance,
            trunc_radius,
        };
        check_component(&component)?;
        let dim = component.center.len();
        let support_radius = norm(&component.center) + trunc_radius;
        Ok(Self {
            family: TargetFamily::TruncatedGaussian(component),
            dim,
            support_radius,
            log_mass: Vec::new(),
        })
    }

    pub fn mixture(components: Vec<TruncatedGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("components", "mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} components", weights.len(), components.len()),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", "must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights", format!("must sum to 1, got {total}")));
        }
        let dim = components[0].center.len();
        for c in &components {
            check_component(c)?;
            if c.center.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.center.len(),
                });
            }
        }
        let support_radius = components
            .iter()
            .map(|c| norm(&c.center) + c.trunc_radius)
            .fold(0.0, f64::max);
        let log_mass = components
            .iter()
            .zip(&weights)
            .map(|(c, w)| w.ln() - log_truncated_normalizer(c))
            .collect();
        Ok(Self {
            family: TargetFamily::TruncatedGaussianMixture {
                components,
                weights,
            },
            dim,
            support_radius,
            log_mass,
        })
    }

    /// Balanced mixture of `k` truncated Gaussians in the plane whose centers
    /// are evenly spaced on the circle of radius `circle_radius`.
    pub fn mixture_on_circle(
        k: usize,
        circle_radius: f64,
        variance: f64,
        trunc_radius: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "need at least one component"));
        }
        let components = (0..k)
            .map(|j| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                TruncatedGaussian {
                    center: vec![circle_radius * angle.cos(), circle_radius * angle.sin()],
                    variance,
                    trunc_radius,
                }
            })
            .collect();
        Self::mixture(components, vec![1.0 / k as f64; k])
    }

    pub fn family(&self) -> &TargetFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius `R` of a centered ball containing the support.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Components of a mixture, or the single Gaussian; empty for the ball.
    pub fn components(&self) -> &[TruncatedGaussian] {
        match &self.family {
            TargetFamily::UniformBall { .. } => &[],
            TargetFamily::TruncatedGaussian(c) => std::slice::from_ref(c),
            TargetFamily::TruncatedGaussianMixture { components, .. } => components,
        }
    }

    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.family {
            TargetFamily::UniformBall { radius } => {
                if norm_sq(x) <= radius * radius {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            TargetFamily::TruncatedGaussian(c) => component_log_kernel(c, x),
            TargetFamily::TruncatedGaussianMixture { components, .. } => {
                let terms = components
                    .iter()
                    .zip(&self.log_mass)
                    .map(|(c, m)| m + component_log_kernel(c, x));
                log_sum_exp(terms)
            }
        }
    }

    pub fn exact_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match &self.family {
            TargetFamily::UniformBall { radius } => Ok(uniform_in_ball(rng, self.dim, *radius)),
            TargetFamily::TruncatedGaussian(c) => sample_component(c, rng),
            TargetFamily::TruncatedGaussianMixture { components, weights } => {
                let pick = WeightedIndex::new(weights)
                    .map_err(|e| Error::invalid("weights", e.to_string()))?;
                sample_component(&components[pick.sample(rng)], rng)
            }
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::invalid("dimension", "must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
    }
}

fn check_component(c: &TruncatedGaussian) -> Result<()> {
    check_dim(c.center.len())?;
    check_positive("variance", c.variance)?;
    check_positive("trunc_radius", c.trunc_radius)?;
    if c.center.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("center", "must be finite"));
    }
    Ok(())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn norm(x: &[f64]) -> f64 {
    norm_sq(x).sqrt()
}

fn component_log_kernel(c: &TruncatedGaussian, x: &[f64]) -> f64 {
    let q = crate::kernels::sq_dist(x, &c.center);
    if q <= c.trunc_radius * c.trunc_radius {
        -q / (2.0 * c.variance)
    } else {
        f64::NEG_INFINITY
    }
}

/// `log ∫_{|x-c| ≤ ρ} exp(-|x-c|²/2σ²) dx`.
fn log_truncated_normalizer(c: &TruncatedGaussian) -> f64 {
    let d = c.center.len() as f64;
    let mass = gamma_lr(d / 2.0, c.trunc_radius * c.trunc_radius / (2.0 * c.variance));
    0.5 * d * (2.0 * std::f64::consts::PI * c.variance).ln() + mass.ln()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub(crate) fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut dir = standard_normal_vec(rng, dim);
    let mut len = norm(&dir);
    while len == 0.0 {
        dir = standard_normal_vec(rng, dim);
        len = norm(&dir);
    }
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    dir.iter().map(|v| v / len * r).collect()
}

fn sample_component<R: Rng + ?Sized>(c: &TruncatedGaussian, rng: &mut R) -> Result<Vec<f64>> {
    let d = c.center.len();
    let sigma = c.variance.sqrt();
    let rho2 = c.trunc_radius * c.trunc_radius;
    // Gaussian proposals are accepted with probability P(|Z| ≤ ρ); uniform-ball
    // proposals with probability at least exp(-ρ²/2σ²). Use whichever is larger.
    let gaussian_rate = gamma_lr(d as f64 / 2.0, rho2 / (2.0 * c.variance));
    let ball_rate = (-rho2 / (2.0 * c.variance)).exp();
    for _ in 0..REJECTION_BUDGET {
        if gaussian_rate >= ball_rate {
            let z = standard_normal_vec(rng, d);
            if norm_sq(&z) * c.variance <= rho2 {
                return Ok(c.center.iter().zip(&z).map(|(m, v)| m + sigma * v).collect());
            }
        } else {
            let offset = uniform_in_ball(rng, d, c.trunc_radius);
            let accept = (-norm_sq(&offset) / (2.0 * c.variance)).exp();
            if rng.random::<f64>() < accept {
                return Ok(c.center.iter().zip(&offset).map(|(m, v)| m + v).collect());
            }
        }
    }
    Err(Error::RejectionBudget {
        budget: REJECTION_BUDGET,
    })
}
