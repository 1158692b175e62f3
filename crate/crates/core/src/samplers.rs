//! MCMC samplers: MALA on node configurations targeting the Gibbs measure
//! `∝ exp(-β_n H_n)`, random-walk Metropolis–Hastings on `R^d` targeting π,
//! step-size tuning and the tempered annealing driver.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{estimate_tempered_embedding, Potential};
use crate::energy::{hamiltonian_with_grad, EnergyBreakdown, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::measures::TargetMeasure;
use crate::rng::{stream, Rng};

/// Inverse temperature as a function of the number of nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSchedule {
    /// `β_n = n^p`.
    Power(f64),
    Explicit(f64),
}

impl BetaSchedule {
    pub fn beta(&self, n: usize) -> f64 {
        match *self {
            BetaSchedule::Power(p) => (n as f64).powf(p),
            BetaSchedule::Explicit(b) => b,
        }
    }

    /// Canonical tag: `n^3/2`, `n^2`, `n^3`, `n^<p>` or the explicit value.
    pub fn tag(&self) -> String {
        match *self {
            BetaSchedule::Power(p) if p == 1.5 => "n^3/2".to_string(),
            BetaSchedule::Power(p) if p.fract() == 0.0 => format!("n^{}", p as i64),
            BetaSchedule::Power(p) => format!("n^{p}"),
            BetaSchedule::Explicit(b) => format!("{b}"),
        }
    }
}

impl fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for BetaSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(exp) = s.strip_prefix("n^") {
            let p = match exp.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a.parse().map_err(|_| format!("bad exponent in `{s}`"))?;
                    let b: f64 = b.parse().map_err(|_| format!("bad exponent in `{s}`"))?;
                    a / b
                }
                None => exp.parse().map_err(|_| format!("bad exponent in `{s}`"))?,
            };
            if !(p.is_finite()) {
                return Err(format!("bad exponent in `{s}`"));
            }
            return Ok(BetaSchedule::Power(p));
        }
        let b: f64 = s.parse().map_err(|_| format!("unknown schedule `{s}`"))?;
        if b > 0.0 && b.is_finite() {
            Ok(BetaSchedule::Explicit(b))
        } else {
            Err(format!("inverse temperature must be positive, got {b}"))
        }
    }
}

/// How the MALA chain is initialized.
#[derive(Clone, Debug)]
pub enum Initialization {
    /// i.i.d. `N(mean, std² I)` coordinates.
    ColdGaussian { mean: f64, std: f64 },
    /// i.i.d. exact draws from a target.
    FromTarget(TargetMeasure),
    Given(ParticleConfiguration),
}

/// Bracketing step-size search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub pilot_steps: usize,
    pub band: (f64, f64),
    /// Pilots pooled to confirm a nominated step size.
    pub confirmations: usize,
    pub max_rounds: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            pilot_steps: 200,
            band: (0.4, 0.6),
            confirmations: 5,
            max_rounds: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GibbsRunConfig {
    pub n: usize,
    pub dim: usize,
    pub beta: BetaSchedule,
    /// Step-size seed; the MALA step is `α = α₀ / β_n`.
    pub alpha0: f64,
    pub iterations: usize,
    pub seed: u64,
    pub init: Initialization,
    /// `None` runs with `alpha0` as given.
    pub tune: Option<TuneSettings>,
    /// Number of rungs `l` of the tempering ladder used by
    /// [`sample_gibbs_annealed`].
    pub anneal_levels: Option<usize>,
    /// Global iteration counts at which to record the chain state.
    pub snapshots: Vec<usize>,
}

impl GibbsRunConfig {
    pub fn new(n: usize, dim: usize, beta: BetaSchedule, iterations: usize, seed: u64) -> Self {
        Self {
            n,
            dim,
            beta,
            alpha0: 1.0,
            iterations,
            seed,
            init: Initialization::ColdGaussian { mean: 0.0, std: 1.0 },
            tune: Some(TuneSettings::default()),
            anneal_levels: None,
            snapshots: Vec::new(),
        }
    }

    pub fn beta_value(&self) -> f64 {
        self.beta.beta(self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "need at least one node"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        let beta = self.beta_value();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be positive and finite, got {beta}")));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::invalid("alpha0", "must be positive"));
        }
        if let Some(t) = &self.tune {
            if t.pilot_steps == 0 || t.max_rounds == 0 || !(0.0 < t.band.0 && t.band.0 < t.band.1 && t.band.1 < 1.0) {
                return Err(Error::invalid("tune", "pilot steps, rounds and a band inside (0, 1) are required"));
            }
        }
        Ok(())
    }

    fn initial_configuration(&self, rng: &mut Rng) -> Result<ParticleConfiguration> {
        match &self.init {
            Initialization::ColdGaussian { mean, std } => {
                let coords = (0..self.n * self.dim)
                    .map(|_| mean + std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect();
                ParticleConfiguration::new(self.dim, coords)
            }
            Initialization::FromTarget(target) => {
                if target.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: target.dim(),
                    });
                }
                let mut coords = Vec::with_capacity(self.n * self.dim);
                for _ in 0..self.n {
                    coords.extend(target.exact_sample(rng)?);
                }
                ParticleConfiguration::new(self.dim, coords)
            }
            Initialization::Given(config) => {
                if config.len() != self.n || config.dim() != self.dim {
                    return Err(Error::invalid(
                        "init",
                        format!(
                            "initial configuration has {}×{} values, expected {}×{}",
                            config.len(),
                            config.dim(),
                            self.n,
                            self.dim
                        ),
                    ));
                }
                Ok(config.clone())
            }
        }
    }
}

/// Current MALA state with its cached energy and gradient, plus the proposal
/// buffers reused across steps.
#[derive(Clone, Debug)]
pub struct MalaState {
    config: ParticleConfiguration,
    energy: EnergyBreakdown,
    grad: Vec<f64>,
    proposal: ParticleConfiguration,
    proposal_grad: Vec<f64>,
}

impl MalaState {
    pub fn new(config: ParticleConfiguration, kernel: &KernelSpec, potential: &Potential) -> Self {
        let mut grad = vec![0.0; config.coords().len()];
        let energy = hamiltonian_with_grad(&config, kernel, potential, &mut grad);
        Self {
            proposal: config.clone(),
            proposal_grad: grad.clone(),
            config,
            energy,
            grad,
        }
    }

    pub fn config(&self) -> &ParticleConfiguration {
        &self.config
    }

    pub fn into_config(self) -> ParticleConfiguration {
        self.config
    }

    pub fn energy(&self) -> EnergyBreakdown {
        self.energy
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// The proposal had a non-finite energy or gradient and was rejected.
    pub nonfinite: bool,
    pub log_accept_ratio: f64,
}

/// One MALA transition kernel: proposal
/// `y ~ N(x - αβ ∇H(x), 2α I)` with `α = α₀/β`, followed by the
/// Metropolis–Hastings correction for the asymmetric proposal.
#[derive(Clone, Copy, Debug)]
pub struct Mala<'a> {
    kernel: &'a KernelSpec,
    potential: &'a Potential,
    beta: f64,
    alpha0: f64,
}

impl<'a> Mala<'a> {
    pub fn new(kernel: &'a KernelSpec, potential: &'a Potential, beta: f64, alpha0: f64) -> Self {
        Self {
            kernel,
            potential,
            beta,
            alpha0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha0 / self.beta
    }

    pub fn with_alpha0(self, alpha0: f64) -> Self {
        Self { alpha0, ..self }
    }

    /// `x - αβ ∇H(x)`.
    pub fn proposal_mean(&self, state: &MalaState) -> Vec<f64> {
        state
            .config
            .coords()
            .iter()
            .zip(&state.grad)
            .map(|(x, g)| x - self.alpha0 * g)
            .collect()
    }

    pub fn step(&self, state: &mut MalaState, noise: &mut Vec<f64>, rng: &mut Rng) -> StepOutcome {
        noise.clear();
        noise.extend((0..state.config.coords().len()).map(|_| -> f64 { StandardNormal.sample(rng) }));
        let u: f64 = rng.random();
        self.step_with(state, noise, u)
    }

    /// Transition driven by explicit standard-normal `noise` and a uniform
    /// `u ∈ [0, 1)` for the accept test.
    pub fn step_with(&self, state: &mut MalaState, noise: &[f64], u: f64) -> StepOutcome {
        let alpha = self.alpha();
        let scale = (2.0 * alpha).sqrt();
        let dim = state.config.dim();
        {
            let coords = state.proposal.coords_mut();
            for (((y, x), g), z) in coords
                .iter_mut()
                .zip(state.config.coords())
                .zip(&state.grad)
                .zip(noise)
            {
                *y = x - self.alpha0 * g + scale * z;
            }
        }
        let proposed = hamiltonian_with_grad(&state.proposal, self.kernel, self.potential, &mut state.proposal_grad);

        let finite = proposed.total.is_finite()
            && state.proposal.coords().iter().all(|v| v.is_finite())
            && state.proposal_grad.iter().all(|g| g.is_finite());
        if !finite {
            return StepOutcome {
                accepted: false,
                nonfinite: true,
                log_accept_ratio: f64::NEG_INFINITY,
            };
        }

        // log q(x | y) - log q(y | x), q(· | a) = N(a - α₀∇H(a), 2α I).
        let mut forward = 0.0;
        let mut backward = 0.0;
        for i in 0..state.config.coords().len() {
            let x = state.config.coords()[i];
            let y = state.proposal.coords()[i];
            let f = y - x + self.alpha0 * state.grad[i];
            let b = x - y + self.alpha0 * state.proposal_grad[i];
            forward += f * f;
            backward += b * b;
        }
        let log_q_ratio = (forward - backward) / (4.0 * alpha);
        let log_ratio = -self.beta * (proposed.total - state.energy.total) + log_q_ratio;
        let accepted = log_ratio >= 0.0 || u.ln() < log_ratio;
        if accepted {
            std::mem::swap(&mut state.config, &mut state.proposal);
            std::mem::swap(&mut state.grad, &mut state.proposal_grad);
            state.energy = proposed;
        }
        debug_assert_eq!(state.config.dim(), dim);
        StepOutcome {
            accepted,
            nonfinite: false,
            log_accept_ratio: log_ratio,
        }
    }
}

/// One MALA transition from `x`; returns the next configuration and whether
/// the proposal was accepted.
pub fn mala_step(
    x: &ParticleConfiguration,
    beta: f64,
    alpha0: f64,
    kernel: &KernelSpec,
    potential: &Potential,
    rng: &mut Rng,
) -> (ParticleConfiguration, bool) {
    let mut state = MalaState::new(x.clone(), kernel, potential);
    let mut noise = Vec::new();
    let out = Mala::new(kernel, potential, beta, alpha0).step(&mut state, &mut noise, rng);
    (state.into_config(), out.accepted)
}

/// Diagnostics of a [`sample_gibbs`] run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    /// `accepted / iterations` over the main run (pilots excluded).
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub iterations: usize,
    pub nonfinite_rejections: usize,
    pub tuned_alpha0: f64,
    /// `(α₀, acceptance)` of every pilot round.
    pub tuning_trace: Vec<(f64, f64)>,
    /// `H_n` of the initial configuration.
    pub initial_energy: f64,
    /// `H_n` after every main iteration.
    pub energy_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GibbsSample {
    pub nodes: ParticleConfiguration,
    pub diagnostics: ChainDiagnostics,
    /// `(iteration, state)` for every requested snapshot.
    pub snapshots: Vec<(usize, ParticleConfiguration)>,
}

/// Result of a step-size search.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub alpha0: f64,
    pub acceptance: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Ratio of bracket ends below which a bracket counts as collapsed.
const COLLAPSED_BRACKET: f64 = 1.05;

/// Bracketing search for a step size: double or halve until the band is
/// bracketed, then bisect on `log α₀`. `measure` runs a pilot at the given `α₀`
/// and returns its acceptance rate.
///
/// Single pilots are noisy, so a pilot inside `settings.band` only nominates
/// its `α₀`. The search stops once `settings.confirmations` pilots at that
/// `α₀` pool to an acceptance in the central half of the band; otherwise the
/// pooled rate bounds the bracket like any other measurement. Pilots advance
/// a chain that may still be drifting, so a bound contradicted by a newer
/// measurement is dropped, and a bracket that collapses without reaching the
/// band is reopened around the newest bound. If the rounds run out after the
/// band has been bracketed, the midpoint of the final bracket is returned;
/// failing to bracket at all is an error.
pub fn tune_step_size<F>(initial: f64, settings: &TuneSettings, mut measure: F) -> Result<TuneOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo_band, hi_band) = settings.band;
    let margin = 0.25 * (hi_band - lo_band);
    let (lo_inner, hi_inner) = (lo_band + margin, hi_band - margin);
    let confirmations = settings.confirmations.max(1);
    let mut alpha = initial;
    // `small`: largest α₀ seen with acceptance above the band;
    // `large`: smallest α₀ seen with acceptance below it.
    let mut small: Option<f64> = None;
    let mut large: Option<f64> = None;
    let (mut seen_above, mut seen_below) = (false, false);
    let mut trace = Vec::new();
    let mut pooled: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    for _ in 0..settings.max_rounds {
        let acc = measure(alpha)?;
        trace.push((alpha, acc));
        let rate = if pooled.is_empty() && !(lo_band..=hi_band).contains(&acc) {
            acc
        } else {
            pooled.push(acc);
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let hopeless = pooled.len() >= 2 && !(lo_band..=hi_band).contains(&mean);
            if pooled.len() < confirmations && !hopeless {
                continue;
            }
            pooled.clear();
            if (lo_inner..=hi_inner).contains(&mean) {
                return Ok(TuneOutcome {
                    alpha0: alpha,
                    acceptance: mean,
                    trace,
                });
            }
            mean
        };
        last = rate;
        let above = rate > hi_inner;
        if above {
            seen_above = true;
            small = Some(alpha);
            if large.is_some_and(|l| l <= alpha) {
                large = None;
            }
        } else {
            seen_below = true;
            large = Some(alpha);
            if small.is_some_and(|s| s >= alpha) {
                small = None;
            }
        }
        if let (Some(s), Some(l)) = (small, large) {
            if l / s < COLLAPSED_BRACKET {
                if above {
                    large = Some(2.0 * alpha);
                } else {
                    small = Some(0.5 * alpha);
                }
            }
        }
        alpha = match (small, large) {
            (Some(s), Some(l)) => (s * l).sqrt(),
            (Some(s), None) => 2.0 * s,
            (None, Some(l)) => 0.5 * l,
            (None, None) => unreachable!("every round sets a bound"),
        };
    }
    if seen_above && seen_below {
        warn!("step-size search used all {} rounds; keeping alpha0={alpha:.4e}", settings.max_rounds);
        return Ok(TuneOutcome {
            alpha0: alpha,
            acceptance: last,
            trace,
        });
    }
    Err(Error::Tuning {
        rounds: settings.max_rounds,
        trace,
    })
}

/// Tunes `α₀` with pilot runs of `settings.pilot_steps` MALA steps. Pilots
/// advance `state`, so tuning doubles as burn-in.
pub fn tune_alpha0(
    state: &mut MalaState,
    mala: Mala<'_>,
    settings: &TuneSettings,
    rng: &mut Rng,
) -> Result<TuneOutcome> {
    let mut noise = Vec::new();
    tune_step_size(mala.alpha0, settings, |alpha0| {
        let pilot = mala.with_alpha0(alpha0);
        let mut accepted = 0usize;
        for _ in 0..settings.pilot_steps {
            if pilot.step(state, &mut noise, rng).accepted {
                accepted += 1;
            }
        }
        let acc = accepted as f64 / settings.pilot_steps as f64;
        debug!("pilot alpha0={alpha0:.4e} acceptance={acc:.3}");
        Ok(acc)
    })
}

struct RunTotals {
    accepted: usize,
    nonfinite: usize,
}

fn run_main(
    state: &mut MalaState,
    mala: Mala<'_>,
    iterations: usize,
    offset: usize,
    snapshot_at: &[usize],
    trace: &mut Vec<f64>,
    snapshots: &mut Vec<(usize, ParticleConfiguration)>,
    rng: &mut Rng,
) -> RunTotals {
    let mut noise = Vec::new();
    let mut totals = RunTotals {
        accepted: 0,
        nonfinite: 0,
    };
    for it in 1..=iterations {
        let out = mala.step(state, &mut noise, rng);
        totals.accepted += out.accepted as usize;
        totals.nonfinite += out.nonfinite as usize;
        trace.push(state.energy.total);
        if snapshot_at.contains(&(offset + it)) {
            snapshots.push((offset + it, state.config.clone()));
        }
    }
    if totals.nonfinite > 0 {
        warn!("{} proposals with non-finite energy were rejected", totals.nonfinite);
    }
    totals
}

/// Approximate draw from the Gibbs measure: initialize, optionally tune
/// `α₀`, run `iterations` MALA steps and keep only the final state.
///
/// Randomness comes from the streams `("gibbs/init", 0)` and
/// `("gibbs/chain", 0)` of `cfg.seed`.
pub fn sample_gibbs(cfg: &GibbsRunConfig, kernel: &KernelSpec, potential: &Potential) -> Result<GibbsSample> {
    cfg.validate()?;
    check_dims(cfg, kernel, potential)?;
    let init = cfg.initial_configuration(&mut stream(cfg.seed, "gibbs/init", 0))?;
    let mut rng = stream(cfg.seed, "gibbs/chain", 0);
    let mut state = MalaState::new(init, kernel, potential);
    let initial_energy = state.energy.total;
    let beta = cfg.beta_value();
    let mut mala = Mala::new(kernel, potential, beta, cfg.alpha0);
    let mut tuning_trace = Vec::new();
    if let Some(settings) = &cfg.tune {
        let tuned = tune_alpha0(&mut state, mala, settings, &mut rng)?;
        tuning_trace = tuned.trace;
        mala = mala.with_alpha0(tuned.alpha0);
    }
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut snapshots = Vec::new();
    let totals = run_main(&mut state, mala, cfg.iterations, 0, &cfg.snapshots, &mut trace, &mut snapshots, &mut rng);
    Ok(GibbsSample {
        nodes: state.into_config(),
        diagnostics: ChainDiagnostics {
            acceptance_rate: totals.accepted as f64 / cfg.iterations as f64,
            accepted: totals.accepted,
            iterations: cfg.iterations,
            nonfinite_rejections: totals.nonfinite,
            tuned_alpha0: mala.alpha0,
            tuning_trace,
            initial_energy,
            energy_trace: trace,
        },
        snapshots,
    })
}

fn check_dims(cfg: &GibbsRunConfig, kernel: &KernelSpec, potential: &Potential) -> Result<()> {
    for d in [Some(kernel.dim()), potential.dim()].into_iter().flatten() {
        if d != cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.dim,
                got: d,
            });
        }
    }
    Ok(())
}

/// Tempering exponents `t_k = k / l`, `k = 1..l`.
pub fn anneal_ladder(levels: usize) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::invalid("anneal_levels", "need at least one rung"));
    }
    Ok((1..=levels).map(|k| k as f64 / levels as f64).collect())
}

/// How the equilibrated potential is estimated for a target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSettings {
    /// Chain length `M`.
    pub size: usize,
    pub proposal_std: f64,
    /// Optional grid `(half_width, nodes_per_axis)` over which `Û` is
    /// tabulated; see [`crate::embedding::EmbeddingEstimate::tabulate`].
    pub grid: Option<(f64, usize)>,
}

/// Random stream used to estimate the embedding of rung `rung` (0-based) of
/// the annealing ladder.
pub fn annealing_embedding_stream(seed: u64, rung: usize) -> Rng {
    stream(seed, "anneal/embedding", rung as u64)
}

/// Builds `V^{π^t}` for the tempered target with exponent `t`.
pub fn tempered_potential(
    target: &TargetMeasure,
    exponent: f64,
    kernel: &KernelSpec,
    settings: &EmbeddingSettings,
    rng: &mut Rng,
) -> Result<Potential> {
    let mut embedding =
        estimate_tempered_embedding(target, exponent, kernel, settings.size, settings.proposal_std, rng)?;
    if let Some((half_width, nodes)) = settings.grid {
        embedding = embedding.tabulate(half_width, nodes)?;
    }
    Potential::equilibrated(embedding, target.support_radius())
}

/// Annealed sampling: for each rung `t_k` of the ladder, estimate the
/// embedding of `π^{t_k}`, rebuild the potential and run `T/l` MALA steps
/// started from the previous rung's final state. The last rung targets π.
/// Rung `k` uses chain stream `("gibbs/chain", k)`, so a single-rung ladder
/// reproduces [`sample_gibbs`] with the rung-0 potential.
pub fn sample_gibbs_annealed(
    cfg: &GibbsRunConfig,
    kernel: &KernelSpec,
    target: &TargetMeasure,
    embedding: &EmbeddingSettings,
) -> Result<GibbsSample> {
    cfg.validate()?;
    let ladder = anneal_ladder(cfg.anneal_levels.unwrap_or(1))?;
    let levels = ladder.len();
    if cfg.iterations < levels {
        return Err(Error::invalid("iterations", "fewer iterations than annealing rungs"));
    }
    let mut config = cfg.initial_configuration(&mut stream(cfg.seed, "gibbs/init", 0))?;
    let beta = cfg.beta_value();
    let mut alpha0 = cfg.alpha0;
    let mut diagnostics = ChainDiagnostics::default();
    let mut snapshots = Vec::new();
    let mut done = 0usize;
    for (rung, t) in ladder.iter().enumerate() {
        let potential = tempered_potential(target, *t, kernel, embedding, &mut annealing_embedding_stream(cfg.seed, rung))?;
        check_dims(cfg, kernel, &potential)?;
        let mut rng = stream(cfg.seed, "gibbs/chain", rung as u64);
        let mut state = MalaState::new(config, kernel, &potential);
        if rung == 0 {
            diagnostics.initial_energy = state.energy.total;
        }
        let mut mala = Mala::new(kernel, &potential, beta, alpha0);
        if let Some(settings) = &cfg.tune {
            let tuned = tune_alpha0(&mut state, mala, settings, &mut rng)?;
            diagnostics.tuning_trace.extend(tuned.trace);
            alpha0 = tuned.alpha0;
            mala = mala.with_alpha0(alpha0);
        }
        let steps = if rung + 1 == levels {
            cfg.iterations - done
        } else {
            cfg.iterations / levels
        };
        let totals = run_main(
            &mut state,
            mala,
            steps,
            done,
            &cfg.snapshots,
            &mut diagnostics.energy_trace,
            &mut snapshots,
            &mut rng,
        );
        debug!("rung t={t:.2}: {} / {steps} accepted", totals.accepted);
        diagnostics.accepted += totals.accepted;
        diagnostics.nonfinite_rejections += totals.nonfinite;
        done += steps;
        config = state.into_config();
    }
    diagnostics.iterations = done;
    diagnostics.acceptance_rate = diagnostics.accepted as f64 / done as f64;
    diagnostics.tuned_alpha0 = alpha0;
    Ok(GibbsSample {
        nodes: config,
        diagnostics,
        snapshots,
    })
}

/// States of a random-walk Metropolis–Hastings chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub states: ParticleConfiguration,
    pub accepted: usize,
}

/// Random-walk MH with isotropic Gaussian proposals of standard deviation
/// `proposal_std`, returning `len` states (the first is `start`). Proposals
/// with log-density `-∞` are always rejected.
pub fn random_walk_chain<F>(
    log_density: F,
    start: Vec<f64>,
    len: usize,
    proposal_std: f64,
    rng: &mut Rng,
) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> f64,
{
    if len == 0 {
        return Err(Error::invalid("len", "chain needs at least one state"));
    }
    if !(proposal_std >= 0.0 && proposal_std.is_finite()) {
        return Err(Error::invalid("proposal_std", "must be non-negative"));
    }
    let dim = start.len();
    let mut current = start;
    let mut current_lp = log_density(&current);
    if current_lp == f64::NEG_INFINITY || current_lp.is_nan() {
        return Err(Error::invalid("start", "chain must start inside the support"));
    }
    let mut coords = Vec::with_capacity(len * dim);
    coords.extend_from_slice(&current);
    let mut proposal = vec![0.0; dim];
    let mut accepted = 0;
    for _ in 1..len {
        for (p, x) in proposal.iter_mut().zip(&current) {
            let z: f64 = StandardNormal.sample(rng);
            *p = x + proposal_std * z;
        }
        let lp = log_density(&proposal);
        let u: f64 = rng.random();
        if lp > f64::NEG_INFINITY && (lp >= current_lp || u.ln() < lp - current_lp) {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        coords.extend_from_slice(&current);
    }
    Ok(ChainOutput {
        states: ParticleConfiguration::new(dim, coords)?,
        accepted,
    })
}

/// Baseline node set: the `n` states of a random-walk MH chain targeting π,
/// started at an exact draw.
pub fn mh_baseline_chain(
    target: &TargetMeasure,
    n: usize,
    proposal_std: f64,
    rng: &mut Rng,
) -> Result<ParticleConfiguration> {
    let start = target.exact_sample(rng)?;
    Ok(random_walk_chain(|x| target.log_density_unnorm(x), start, n, proposal_std, rng)?.states)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_tags_round_trip() {
        for (tag, beta) in [("n^3/2", 1000f64.powf(1.5)), ("n^2", 1e6), ("n^3", 1e9)] {
            let s: BetaSchedule = tag.parse().unwrap();
            assert_eq!(s.tag(), tag);
            assert!((s.beta(1000) - beta).abs() <= 1e-9 * beta);
        }
        let s: BetaSchedule = "64".parse().unwrap();
        assert_eq!(s, BetaSchedule::Explicit(64.0));
        assert_eq!(s.beta(8), 64.0);
        assert!("n^x".parse::<BetaSchedule>().is_err());
        assert!("-3".parse::<BetaSchedule>().is_err());
    }

    #[test]
    fn ladder() {
        let l = anneal_ladder(10).unwrap();
        assert_eq!(l.len(), 10);
        for (k, t) in l.iter().enumerate() {
            assert!((t - (k + 1) as f64 / 10.0).abs() < 1e-15);
        }
        assert_eq!(anneal_ladder(1).unwrap(), vec![1.0]);
        assert!(anneal_ladder(0).is_err());
    }

    #[test]
    fn tuner_on_a_monotone_curve() {
        let settings = TuneSettings::default();
        let out = tune_step_size(1.0, &settings, |a| Ok((-a).exp())).unwrap();
        let acc = (-out.alpha0).exp();
        assert!((0.4..=0.6).contains(&acc));
        for start in [1e-3, 1e3] {
            let out = tune_step_size(start, &settings, |a| Ok((-a).exp())).unwrap();
            assert!((0.4..=0.6).contains(&(-out.alpha0).exp()));
        }
    }

    #[test]
    fn tuner_recovers_from_a_stale_bracket() {
        // The first pilot sees an easier regime than all later ones.
        let mut calls = 0;
        let out = tune_step_size(1.0, &TuneSettings::default(), |a| {
            calls += 1;
            Ok(if calls == 1 { 0.8 } else { (-20.0 * a).exp() })
        })
        .unwrap();
        assert!((0.4..=0.6).contains(&(-20.0 * out.alpha0).exp()));
    }

    #[test]
    fn tuner_keeps_an_in_band_guess() {
        let out = tune_step_size(0.7, &TuneSettings::default(), |a| Ok((-a).exp())).unwrap();
        assert_eq!(out.alpha0, 0.7);
        assert_eq!(out.trace, vec![(0.7, (-0.7f64).exp()); 5]);
    }

    #[test]
    fn tuner_keeps_the_bracket_midpoint_when_rounds_run_out() {
        // A step curve never lands in the band but is bracketed around 1.
        let settings = TuneSettings {
            max_rounds: 12,
            ..TuneSettings::default()
        };
        let out = tune_step_size(0.3, &settings, |a| Ok(if a < 1.0 { 0.9 } else { 0.1 })).unwrap();
        assert!((0.7..1.42).contains(&out.alpha0), "alpha0 {}", out.alpha0);
        assert_eq!(out.trace.len(), 12);
    }

    #[test]
    fn tuner_averages_out_pilot_noise() {
        let mut rng = stream(5, "noisy-pilots", 0);
        for _ in 0..50 {
            let out = tune_step_size(1.0, &TuneSettings::default(), |a| {
                Ok((0.5 - 0.4 * a.ln() + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0))
            })
            .unwrap();
            assert!((0.4..=0.6).contains(&(0.5 - 0.4 * out.alpha0.ln())), "alpha0 {}", out.alpha0);
        }
    }

    #[test]
    fn tuner_reports_failure_with_trace() {
        let settings = TuneSettings {
            max_rounds: 5,
            ..TuneSettings::default()
        };
        match tune_step_size(1.0, &settings, |_| Ok(1.0)) {
            Err(Error::Tuning { rounds, trace }) => {
                assert_eq!(rounds, 5);
                assert_eq!(trace.len(), 5);
            }
            other => panic!("expected tuning error, got {other:?}"),
        }
    }

    #[test]
    fn zero_noise_proposal_is_the_drift() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        let v = Potential::Quadratic;
        let x = ParticleConfiguration::new(2, vec![0.5, -0.3, 1.0, 0.2, -0.7, 0.1]).unwrap();
        let mut state = MalaState::new(x.clone(), &k, &v);
        let beta = 9.0;
        let mala = Mala::new(&k, &v, beta, 0.3);
        let mean = mala.proposal_mean(&state);
        let grad = state.grad().to_vec();
        for i in 0..6 {
            assert_eq!(mean[i], x.coords()[i] - mala.alpha() * beta * grad[i]);
        }
        // u = 0 accepts any finite proposal; the new state is exactly the drift.
        let out = mala.step_with(&mut state, &[0.0; 6], 0.0);
        assert!(out.accepted);
        assert_eq!(state.config().coords(), mean.as_slice());
    }

    #[test]
    fn stationary_zero_noise_proposal_is_accepted_surely() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap().with_amplitude(0.0).unwrap();
        let v = Potential::Quadratic;
        let x = ParticleConfiguration::new(2, vec![0.0; 4]).unwrap();
        let mut state = MalaState::new(x.clone(), &k, &v);
        let out = Mala::new(&k, &v, 4.0, 1.0).step_with(&mut state, &[0.0; 4], 0.999_999);
        assert!(out.accepted);
        assert_eq!(out.log_accept_ratio, 0.0);
        assert_eq!(state.config(), &x);
    }

    #[test]
    fn overflowing_proposals_are_rejected() {
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let v = Potential::Quadratic;
        let x = ParticleConfiguration::new(1, vec![1e300, -1e300]).unwrap();
        let mut state = MalaState::new(x.clone(), &k, &v);
        let out = Mala::new(&k, &v, 1.0, 1.0).step_with(&mut state, &[0.0, 0.0], 0.5);
        assert!(out.nonfinite && !out.accepted);
        assert_eq!(state.config(), &x);
    }

    #[test]
    fn huge_step_with_single_iteration_keeps_initial_state() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        let mut cfg = GibbsRunConfig::new(5, 2, BetaSchedule::Explicit(100.0), 1, 3);
        cfg.alpha0 = 1e12;
        cfg.tune = None;
        let init = cfg.initial_configuration(&mut stream(3, "gibbs/init", 0)).unwrap();
        let out = sample_gibbs(&cfg, &k, &Potential::Quadratic).unwrap();
        assert_eq!(out.nodes, init);
        assert_eq!(out.diagnostics.accepted, 0);
        assert_eq!(out.diagnostics.acceptance_rate, 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let k = KernelSpec::truncated_log(2, 1e-2).unwrap();
        let cfg = GibbsRunConfig::new(20, 2, BetaSchedule::Power(2.0), 300, 11);
        let a = sample_gibbs(&cfg, &k, &Potential::Quadratic).unwrap();
        let b = sample_gibbs(&cfg, &k, &Potential::Quadratic).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.diagnostics, b.diagnostics);
        let d = &a.diagnostics;
        assert_eq!(d.acceptance_rate, d.accepted as f64 / d.iterations as f64);
        assert_eq!(d.energy_trace.len(), 300);
    }

    #[test]
    fn snapshots_are_recorded_at_requested_iterations() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        let mut cfg = GibbsRunConfig::new(4, 2, BetaSchedule::Explicit(16.0), 30, 2);
        cfg.snapshots = vec![10, 30];
        cfg.tune = None;
        let out = sample_gibbs(&cfg, &k, &Potential::Quadratic).unwrap();
        assert_eq!(out.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![10, 30]);
        assert_eq!(out.snapshots[1].1, out.nodes);
    }

    #[test]
    fn degenerate_random_walk_stays_put() {
        let target = TargetMeasure::uniform_ball(2, 1.0).unwrap();
        let mut rng = stream(1, "test", 0);
        let chain = mh_baseline_chain(&target, 50, 0.0, &mut rng).unwrap();
        let first = chain.point(0).to_vec();
        assert!(chain.points().all(|p| p == first.as_slice()));
    }

    #[test]
    fn baseline_moment_and_support() {
        let target = TargetMeasure::uniform_ball(3, 1.0).unwrap();
        let mut rng = stream(2, "test", 0);
        let n = 100_000;
        let chain = mh_baseline_chain(&target, n, 0.05f64.sqrt(), &mut rng).unwrap();
        let sq: Vec<f64> = chain.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
        assert!(sq.iter().all(|s| *s <= 1.0));
        let mean = sq.iter().sum::<f64>() / n as f64;
        // Standard error of a correlated chain: batch means over 100 batches.
        let batches: Vec<f64> = sq.chunks(n / 100).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect();
        let bm = batches.iter().sum::<f64>() / 100.0;
        let se = (batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / 99.0 / 100.0).sqrt();
        assert!((mean - 0.6).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn single_rung_annealing_matches_plain_sampling() {
        let target = TargetMeasure::uniform_ball(2, 1.0).unwrap();
        let k = KernelSpec::gaussian(2, 0.5).unwrap();
        let settings = EmbeddingSettings {
            size: 100,
            proposal_std: 0.2,
            grid: None,
        };
        let mut cfg = GibbsRunConfig::new(10, 2, BetaSchedule::Power(2.0), 200, 5);
        cfg.anneal_levels = Some(1);
        let annealed = sample_gibbs_annealed(&cfg, &k, &target, &settings).unwrap();
        let v = tempered_potential(&target, 1.0, &k, &settings, &mut annealing_embedding_stream(5, 0)).unwrap();
        let plain = sample_gibbs(&cfg, &k, &v).unwrap();
        assert_eq!(annealed.nodes, plain.nodes);
        assert_eq!(annealed.diagnostics.accepted, plain.diagnostics.accepted);
    }
}
