//! Experiment drivers: crystallization, energy decay, single-integrand
//! variance, concentration tails and the multimodal study.
//!
//! Drivers are pure computations: each returns a typed result holding an
//! [`ExperimentOutput`] (JSON report plus point clouds, figures and tables)
//! that the CLI persists. Wall-clock timings are kept apart from the report
//! so that reports are byte-identical across reruns.
//!
//! Stream tags used with [`crate::rng::stream`]: `"embedding"` (the shared
//! embedding chain), `"reference"` (the shared reference chain), and one tag
//! per experiment and method for the cells, indexed by grid position and
//! replicate.

use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, InitConfig, PotentialConfig, RunConfig, StartVariant};
use crate::embedding::{estimate_embedding, EmbeddingEstimate, Potential};
use crate::energy::{ParticleConfiguration, ReferenceSet};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::measures::TargetMeasure;
use crate::output::read_points_csv;
use crate::rng::{derive_seed, from_seed, stream};
use crate::samplers::{
    mh_baseline_chain, sample_gibbs, sample_gibbs_annealed, BetaSchedule, EmbeddingSettings, GibbsRunConfig,
    GibbsSample, Initialization,
};
use crate::svg::{Axes, Series};

/// Where the confining potential comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSource {
    Zero,
    Quadratic,
    Equilibrated(EmbeddingSettings),
}

/// Everything a driver needs, resolved from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Setup {
    pub seed: u64,
    pub kernel: KernelSpec,
    pub target: Option<TargetMeasure>,
    /// Per-cell runs copy this and override `n`, `beta`, `seed`.
    pub template: GibbsRunConfig,
    pub potential: PotentialSource,
    pub config_hash: String,
}

impl Setup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let kernel = cfg.kernel_spec()?;
        let target = cfg.target_measure()?;
        let g = &cfg.gibbs;
        let init = match &g.init {
            InitConfig::ColdGaussian { mean, std } => Initialization::ColdGaussian { mean: *mean, std: *std },
            InitConfig::WarmFromTarget => Initialization::FromTarget(
                target
                    .clone()
                    .ok_or_else(|| Error::invalid("target", "warm start needs a target"))?,
            ),
            InitConfig::FromFile { path } => Initialization::Given(read_points_csv(path.as_ref())?),
        };
        let potential = match &g.potential {
            PotentialConfig::Zero => PotentialSource::Zero,
            PotentialConfig::Quadratic => PotentialSource::Quadratic,
            PotentialConfig::Equilibrated { .. } => {
                PotentialSource::Equilibrated(cfg.embedding_settings().expect("equilibrated potential"))
            }
        };
        Ok(Self {
            seed: cfg.seed,
            kernel,
            target,
            template: GibbsRunConfig {
                n: g.n,
                dim: g.dimension,
                beta: g.beta,
                alpha0: g.alpha0,
                iterations: g.iterations,
                seed: cfg.seed,
                init,
                tune: g.tune.settings(),
                anneal_levels: g.anneal_levels,
                snapshots: g.snapshots.clone(),
            },
            potential,
            config_hash: cfg.hash(),
        })
    }

    pub fn target(&self) -> Result<&TargetMeasure> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::invalid("target", "this run needs a target measure"))
    }

    /// Builds the potential; the embedding (if any) is estimated from the
    /// `"embedding"` stream and returned so it can be persisted.
    pub fn build_potential(&self) -> Result<(Potential, Option<EmbeddingEstimate>)> {
        match &self.potential {
            PotentialSource::Zero => Ok((Potential::Zero, None)),
            PotentialSource::Quadratic => Ok((Potential::Quadratic, None)),
            PotentialSource::Equilibrated(settings) => {
                let target = self.target()?;
                let embedding = self.estimate_embedding(settings)?;
                let potential = Potential::equilibrated(embedding.clone(), target.support_radius())?;
                Ok((potential, Some(embedding)))
            }
        }
    }

    pub fn estimate_embedding(&self, settings: &EmbeddingSettings) -> Result<EmbeddingEstimate> {
        let target = self.target()?;
        let mut rng = stream(self.seed, "embedding", 0);
        let mut embedding = estimate_embedding(target, &self.kernel, settings.size, settings.proposal_std, &mut rng)?;
        if let Some((half_width, nodes)) = settings.grid {
            embedding = embedding.tabulate(half_width, nodes)?;
        }
        Ok(embedding)
    }

    /// Independent MH chain of `size` states targeting π, from the
    /// `"reference"` stream.
    pub fn reference_set(&self, size: usize, proposal_std: f64) -> Result<ReferenceSet> {
        let chain = mh_baseline_chain(self.target()?, size, proposal_std, &mut stream(self.seed, "reference", 0))?;
        ReferenceSet::new(chain, self.kernel.clone())
    }

    pub fn cell_config(&self, n: usize, beta: BetaSchedule, seed: u64) -> GibbsRunConfig {
        GibbsRunConfig {
            n,
            beta,
            seed,
            ..self.template.clone()
        }
    }
}

/// One grid cell of a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd2: Option<f64>,
    /// Equal-weight node average of the integrand.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuned_alpha0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_cv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<Vec<usize>>,
}

impl Cell {
    fn new(n: usize, method: &str, replicate: usize, seed: u64) -> Self {
        Self {
            n,
            method: method.to_string(),
            replicate,
            seed,
            ..Self::default()
        }
    }

    fn with_chain(mut self, sample: &GibbsSample) -> Self {
        self.acceptance = Some(sample.diagnostics.acceptance_rate);
        self.tuned_alpha0 = Some(sample.diagnostics.tuned_alpha0);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub cells: Vec<Cell>,
    pub summary: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub name: String,
    pub axes: Axes,
    pub series: Vec<Series>,
}

/// Two-column numeric table written as CSV.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub header: (String, String),
    pub rows: Vec<(f64, f64)>,
}

/// Per-chain diagnostics record written to `diagnostics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub label: String,
    pub acceptance_rate: f64,
    pub tuned_alpha0: f64,
    pub nonfinite_rejections: usize,
    /// Table holding the energy trace, relative to the run directory.
    pub energy_trace_path: Option<String>,
}

impl DiagnosticsRecord {
    pub fn from_run(label: &str, run: &GibbsSample, trace: Option<String>) -> Self {
        Self {
            label: label.to_string(),
            acceptance_rate: run.diagnostics.acceptance_rate,
            tuned_alpha0: run.diagnostics.tuned_alpha0,
            nonfinite_rejections: run.diagnostics.nonfinite_rejections,
            energy_trace_path: trace,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub clouds: Vec<(String, ParticleConfiguration)>,
    pub figures: Vec<Figure>,
    pub tables: Vec<Table>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub timings: Vec<Timing>,
}

impl ExperimentOutput {
    fn new(setup: &Setup, experiment: &str, cells: Vec<Cell>, summary: impl Serialize) -> Result<Self> {
        Ok(Self {
            report: ExperimentReport {
                experiment: experiment.to_string(),
                config_hash: setup.config_hash.clone(),
                seed: setup.seed,
                version: concat!("repulse-quad ", env!("CARGO_PKG_VERSION")).to_string(),
                cells,
                summary: serde_json::to_value(summary)?,
            },
            clouds: Vec::new(),
            figures: Vec::new(),
            tables: Vec::new(),
            diagnostics: Vec::new(),
            timings: Vec::new(),
        })
    }
}

fn timed<T>(label: String, timings: &mut Vec<Timing>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.push(Timing {
        label,
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Runs `f` over `items` in parallel; results (and timings) keep item order.
fn par_cells<I: Sync, T: Send>(
    items: &[I],
    label: impl Fn(&I) -> String + Sync,
    f: impl Fn(&I) -> Result<T> + Sync,
) -> Result<(Vec<T>, Vec<Timing>)> {
    let results: Vec<Result<(T, Timing)>> = items
        .par_iter()
        .map(|item| {
            let start = Instant::now();
            let out = f(item)?;
            Ok((
                out,
                Timing {
                    label: label(item),
                    seconds: start.elapsed().as_secs_f64(),
                },
            ))
        })
        .collect();
    let mut outs = Vec::with_capacity(results.len());
    let mut timings = Vec::with_capacity(results.len());
    for r in results {
        let (o, t) = r?;
        outs.push(o);
        timings.push(t);
    }
    Ok((outs, timings))
}

/// Distance from each point to its nearest neighbour.
pub fn nearest_neighbor_distances(x: &ParticleConfiguration) -> Vec<f64> {
    let n = x.len();
    let mut best = vec![f64::INFINITY; n];
    for i in 0..n {
        let xi = x.point(i);
        for j in (i + 1)..n {
            let q: f64 = xi.iter().zip(x.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            best[i] = best[i].min(q);
            best[j] = best[j].min(q);
        }
    }
    best.into_iter().map(f64::sqrt).collect()
}

/// Population mean and standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Coefficient of variation (std / mean) of nearest-neighbour distances.
pub fn nn_coefficient_of_variation(x: &ParticleConfiguration) -> f64 {
    let (m, s) = mean_std(&nearest_neighbor_distances(x));
    s / m
}

pub fn max_radius(x: &ParticleConfiguration) -> f64 {
    x.points()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless all values are
/// positive and at least two distinct `x` are given.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn schedule_slug(s: &BetaSchedule) -> String {
    s.tag().replace("n^", "n").replace('/', "_")
}

fn require_target(setup: &Setup) -> Result<()> {
    setup.target().map(|_| ())
}

// ---------------------------------------------------------------------------
// Crystallization

#[derive(Clone, Debug, Serialize)]
pub struct CrystallizationSchedule {
    pub schedule: String,
    pub beta: f64,
    pub nn_cv: f64,
    pub max_radius: f64,
    pub acceptance: f64,
    pub tuned_alpha0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrystallizationSummary {
    pub schedules: Vec<CrystallizationSchedule>,
    /// Nearest-neighbour CV strictly decreasing along the schedule list.
    pub cv_strictly_decreasing: bool,
    pub max_radius: f64,
}

#[derive(Clone, Debug)]
pub struct Crystallization {
    pub summary: CrystallizationSummary,
    pub output: ExperimentOutput,
}

/// Runs one Gibbs chain per schedule (stream tag `"crystallize"`, index =
/// schedule position) with the setup's potential, and records the
/// nearest-neighbour spacing statistics of the final configurations.
pub fn run_crystallization(setup: &Setup, schedules: &[BetaSchedule]) -> Result<Crystallization> {
    if setup.template.dim != 2 {
        return Err(Error::invalid("dimension", "the crystallization study is two-dimensional"));
    }
    let (potential, _) = setup.build_potential()?;
    let items: Vec<(usize, BetaSchedule)> = schedules.iter().copied().enumerate().collect();
    let (runs, timings) = par_cells(
        &items,
        |(_, s)| format!("gibbs {}", s.tag()),
        |(i, s)| {
            let cfg = setup.cell_config(setup.template.n, *s, derive_seed(setup.seed, "crystallize", *i as u64));
            sample_gibbs(&cfg, &setup.kernel, &potential).map(|r| (cfg.seed, r))
        },
    )?;
    let n = setup.template.n;
    let mut cells = Vec::new();
    let mut per_schedule = Vec::new();
    for ((_, s), (seed, run)) in items.iter().zip(&runs) {
        let cv = nn_coefficient_of_variation(&run.nodes);
        let radius = max_radius(&run.nodes);
        let mut cell = Cell::new(n, "gibbs", 0, *seed).with_chain(run);
        cell.schedule = Some(s.tag());
        cell.nn_cv = Some(cv);
        cell.max_radius = Some(radius);
        cells.push(cell);
        per_schedule.push(CrystallizationSchedule {
            schedule: s.tag(),
            beta: s.beta(n),
            nn_cv: cv,
            max_radius: radius,
            acceptance: run.diagnostics.acceptance_rate,
            tuned_alpha0: run.diagnostics.tuned_alpha0,
        });
    }
    let summary = CrystallizationSummary {
        cv_strictly_decreasing: per_schedule.windows(2).all(|w| w[1].nn_cv < w[0].nn_cv),
        max_radius: per_schedule.iter().map(|s| s.max_radius).fold(0.0, f64::max),
        schedules: per_schedule,
    };
    let mut output = ExperimentOutput::new(setup, "crystallize", cells, &summary)?;
    for ((_, s), (_, run)) in items.iter().zip(runs) {
        let slug = schedule_slug(s);
        let trace = format!("energy_trace_beta_{slug}");
        output
            .diagnostics
            .push(DiagnosticsRecord::from_run(&s.tag(), &run, Some(format!("{trace}.csv"))));
        output.tables.push(energy_table(&trace, &run));
        output.clouds.push((format!("nodes_beta_{slug}"), run.nodes));
    }
    output.timings = timings;
    Ok(Crystallization { summary, output })
}

pub fn energy_table(name: &str, run: &GibbsSample) -> Table {
    Table {
        name: name.to_string(),
        header: ("iteration".into(), "energy".into()),
        rows: run
            .diagnostics
            .energy_trace
            .iter()
            .enumerate()
            .map(|(i, e)| ((i + 1) as f64, *e))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Energy decay

#[derive(Clone, Debug, Serialize)]
pub struct EnergyDecaySummary {
    /// `(n, mmd²)` of the Gibbs samples.
    pub gibbs: Vec<(usize, f64)>,
    /// `(n, mmd²)` of the MH baselines.
    pub mh: Vec<(usize, f64)>,
    pub gibbs_slope: Option<f64>,
    pub mh_slope: Option<f64>,
    /// Geometric mean over the grid of MH mmd² / Gibbs mmd².
    pub ratio_geomean: Option<f64>,
    pub reference_size: usize,
}

#[derive(Clone, Debug)]
pub struct EnergyDecay {
    pub summary: EnergyDecaySummary,
    pub output: ExperimentOutput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Gibbs,
    Mh,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Gibbs => "gibbs",
            Method::Mh => "mh",
        }
    }
}

/// For each `n`, squared MMD to a shared reference chain of
/// `reference_size` states for a Gibbs sample (stream tag
/// `"energy-decay/gibbs"`, index `n`) and an MH chain of length `n`
/// (`"energy-decay/mh"`, index `n`).
pub fn run_energy_decay(
    setup: &Setup,
    n_grid: &[usize],
    reference_size: usize,
    baseline_std: f64,
) -> Result<EnergyDecay> {
    require_target(setup)?;
    let mut timings = Vec::new();
    let (potential, embedding) = timed("embedding".into(), &mut timings, || setup.build_potential())?;
    let reference = timed("reference".into(), &mut timings, || setup.reference_set(reference_size, baseline_std))?;
    let items: Vec<(usize, Method)> = n_grid
        .iter()
        .flat_map(|&n| [(n, Method::Gibbs), (n, Method::Mh)])
        .collect();
    let (cells, cell_timings) = par_cells(
        &items,
        |(n, m)| format!("{} n={n}", m.name()),
        |&(n, m)| {
            let (seed, nodes, chain) = match m {
                Method::Gibbs => {
                    let seed = derive_seed(setup.seed, "energy-decay/gibbs", n as u64);
                    let cfg = setup.cell_config(n, setup.template.beta, seed);
                    let run = sample_gibbs(&cfg, &setup.kernel, &potential)?;
                    (seed, run.nodes.clone(), Some(run))
                }
                Method::Mh => {
                    let seed = derive_seed(setup.seed, "energy-decay/mh", n as u64);
                    let nodes = mh_baseline_chain(setup.target()?, n, baseline_std, &mut from_seed(seed))?;
                    (seed, nodes, None)
                }
            };
            let mut cell = Cell::new(n, m.name(), 0, seed);
            if let Some(run) = &chain {
                cell = cell.with_chain(run);
            }
            cell.mmd2 = Some(reference.mmd_squared(&nodes)?);
            Ok(cell)
        },
    )?;
    timings.extend(cell_timings);
    let pick = |m: Method| -> Vec<(usize, f64)> {
        cells
            .iter()
            .filter(|c| c.method == m.name())
            .map(|c| (c.n, c.mmd2.unwrap_or(f64::NAN)))
            .collect()
    };
    let gibbs = pick(Method::Gibbs);
    let mh = pick(Method::Mh);
    let as_f = |v: &[(usize, f64)]| v.iter().map(|&(n, y)| (n as f64, y)).collect::<Vec<_>>();
    let ratio_geomean = if gibbs.iter().chain(&mh).all(|p| p.1 > 0.0) {
        let s: f64 = gibbs.iter().zip(&mh).map(|(g, m)| (m.1 / g.1).ln()).sum();
        Some((s / gibbs.len() as f64).exp())
    } else {
        None
    };
    let summary = EnergyDecaySummary {
        gibbs_slope: loglog_slope(&as_f(&gibbs)),
        mh_slope: loglog_slope(&as_f(&mh)),
        ratio_geomean,
        gibbs: gibbs.clone(),
        mh: mh.clone(),
        reference_size,
    };
    let mut output = ExperimentOutput::new(setup, "energy_decay", cells, &summary)?;
    if let Some(e) = embedding {
        output.clouds.push(("embedding".into(), e.points().clone()));
    }
    if gibbs.iter().chain(&mh).all(|p| p.1 > 0.0) {
        output.figures.push(Figure {
            name: "energy_decay".into(),
            axes: Axes::LogLog,
            series: vec![
                Series {
                    label: "Gibbs".into(),
                    points: as_f(&gibbs),
                },
                Series {
                    label: "MH".into(),
                    points: as_f(&mh),
                },
            ],
        });
    }
    output.timings = timings;
    Ok(EnergyDecay { summary, output })
}

// ---------------------------------------------------------------------------
// Variance

/// `n⁻¹ Σ K(x_i, 0)`.
pub fn kernel_at_origin_average(x: &ParticleConfiguration, k: &KernelSpec) -> f64 {
    let origin = vec![0.0; x.dim()];
    x.points().map(|p| k.eval_unchecked(p, &origin)).sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMethod {
    Gibbs,
    Mh,
}

impl VarianceMethod {
    fn name(self) -> &'static str {
        match self {
            VarianceMethod::Gibbs => "gibbs",
            VarianceMethod::Mh => "mh",
        }
    }
}

/// Node average of `K(·, 0)` for one replicate run from `seed`.
pub fn replicate_estimate(
    setup: &Setup,
    potential: &Potential,
    n: usize,
    method: VarianceMethod,
    baseline_std: f64,
    seed: u64,
) -> Result<(f64, Option<GibbsSample>)> {
    match method {
        VarianceMethod::Gibbs => {
            let cfg = setup.cell_config(n, setup.template.beta, seed);
            let run = sample_gibbs(&cfg, &setup.kernel, potential)?;
            Ok((kernel_at_origin_average(&run.nodes, &setup.kernel), Some(run)))
        }
        VarianceMethod::Mh => {
            let nodes = mh_baseline_chain(setup.target()?, n, baseline_std, &mut from_seed(seed))?;
            Ok((kernel_at_origin_average(&nodes, &setup.kernel), None))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceRow {
    pub n: usize,
    pub gibbs_variance: f64,
    pub mh_variance: f64,
    /// Gibbs variance / MH variance.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceSummary {
    pub rows: Vec<VarianceRow>,
    pub mh_slope: Option<f64>,
    pub gibbs_slope: Option<f64>,
    pub replicates: usize,
}

#[derive(Clone, Debug)]
pub struct VarianceComparison {
    pub summary: VarianceSummary,
    pub output: ExperimentOutput,
}

/// Empirical variance across `replicates` independent runs of the node
/// average of `K(·, 0)`, for Gibbs samples (stream tag `"variance/gibbs"`)
/// and MH chains (`"variance/mh"`); the stream index packs `n` and the
/// replicate number.
pub fn run_variance_comparison(
    setup: &Setup,
    n_grid: &[usize],
    replicates: usize,
    baseline_std: f64,
) -> Result<VarianceComparison> {
    require_target(setup)?;
    if replicates < 2 {
        return Err(Error::invalid("replicates", "a variance needs at least two replicates"));
    }
    let mut timings = Vec::new();
    let (potential, embedding) = timed("embedding".into(), &mut timings, || setup.build_potential())?;
    let items: Vec<(usize, VarianceMethod, usize)> = n_grid
        .iter()
        .flat_map(|&n| {
            [VarianceMethod::Gibbs, VarianceMethod::Mh]
                .into_iter()
                .flat_map(move |m| (0..replicates).map(move |r| (n, m, r)))
        })
        .collect();
    let (cells, cell_timings) = par_cells(
        &items,
        |(n, m, r)| format!("{} n={n} replicate={r}", m.name()),
        |&(n, m, r)| {
            let index = ((n as u64) << 32) | r as u64;
            let seed = derive_seed(setup.seed, &format!("variance/{}", m.name()), index);
            let (estimate, run) = replicate_estimate(setup, &potential, n, m, baseline_std, seed)?;
            let mut cell = Cell::new(n, m.name(), r, seed);
            if let Some(run) = &run {
                cell = cell.with_chain(run);
            }
            cell.estimate = Some(estimate);
            Ok(cell)
        },
    )?;
    timings.extend(cell_timings);
    let variance_of = |n: usize, m: VarianceMethod| {
        let v: Vec<f64> = cells
            .iter()
            .filter(|c| c.n == n && c.method == m.name())
            .filter_map(|c| c.estimate)
            .collect();
        sample_variance(&v)
    };
    let rows: Vec<VarianceRow> = n_grid
        .iter()
        .map(|&n| {
            let g = variance_of(n, VarianceMethod::Gibbs);
            let m = variance_of(n, VarianceMethod::Mh);
            VarianceRow {
                n,
                gibbs_variance: g,
                mh_variance: m,
                ratio: g / m,
            }
        })
        .collect();
    let mh_pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mh_variance)).collect();
    let gibbs_pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.gibbs_variance)).collect();
    let summary = VarianceSummary {
        mh_slope: loglog_slope(&mh_pts),
        gibbs_slope: loglog_slope(&gibbs_pts),
        rows,
        replicates,
    };
    let mut output = ExperimentOutput::new(setup, "variance", cells, &summary)?;
    if let Some(e) = embedding {
        output.clouds.push(("embedding".into(), e.points().clone()));
    }
    if mh_pts.iter().chain(&gibbs_pts).all(|p| p.1 > 0.0) {
        output.figures.push(Figure {
            name: "variance".into(),
            axes: Axes::LogLog,
            series: vec![
                Series {
                    label: "Gibbs".into(),
                    points: gibbs_pts,
                },
                Series {
                    label: "MH".into(),
                    points: mh_pts,
                },
            ],
        });
    }
    output.timings = timings;
    Ok(VarianceComparison { summary, output })
}

// ---------------------------------------------------------------------------
// Concentration

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub r: f64,
    pub calibrated: bool,
    /// `P(mmd² > r²)` per schedule, in schedule order.
    pub tails: Vec<f64>,
    pub non_increasing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationSummary {
    pub n: usize,
    pub schedules: Vec<String>,
    pub rows: Vec<TailRow>,
    /// Median mmd² per schedule.
    pub median_mmd2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Concentration {
    pub summary: ConcentrationSummary,
    /// `mmd2[s][r]`: squared MMD of replicate `r` under schedule `s`.
    pub mmd2: Vec<Vec<f64>>,
    pub output: ExperimentOutput,
}

/// Fraction of `values` strictly above `threshold`.
pub fn tail_fraction(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64
}

/// Empirical tails `P(mmd² > r²)` over `replicates` Gibbs samples of size
/// `setup.template.n` per schedule (stream tag `"concentration"`, index packs
/// the schedule position and replicate), measured against a shared reference
/// chain. With `calibrate_quantile = Some(q)` an extra radius
/// `r = sqrt(q-quantile of mmd²)` under the first schedule is added.
pub fn run_concentration_tail(
    setup: &Setup,
    schedules: &[BetaSchedule],
    replicates: usize,
    reference_size: usize,
    baseline_std: f64,
    radii: &[f64],
    calibrate_quantile: Option<f64>,
) -> Result<Concentration> {
    require_target(setup)?;
    if schedules.is_empty() || replicates == 0 {
        return Err(Error::invalid("concentration", "need at least one schedule and one replicate"));
    }
    let n = setup.template.n;
    let mut timings = Vec::new();
    let (potential, _) = timed("embedding".into(), &mut timings, || setup.build_potential())?;
    let reference = timed("reference".into(), &mut timings, || setup.reference_set(reference_size, baseline_std))?;
    let items: Vec<(usize, usize)> = (0..schedules.len())
        .flat_map(|s| (0..replicates).map(move |r| (s, r)))
        .collect();
    let (cells, cell_timings) = par_cells(
        &items,
        |(s, r)| format!("gibbs {} replicate={r}", schedules[*s].tag()),
        |&(s, r)| {
            let seed = derive_seed(setup.seed, "concentration", ((s as u64) << 32) | r as u64);
            let cfg = setup.cell_config(n, schedules[s], seed);
            let run = sample_gibbs(&cfg, &setup.kernel, &potential)?;
            let mut cell = Cell::new(n, "gibbs", r, seed).with_chain(&run);
            cell.schedule = Some(schedules[s].tag());
            cell.mmd2 = Some(reference.mmd_squared(&run.nodes)?);
            Ok(cell)
        },
    )?;
    timings.extend(cell_timings);
    let mmd2: Vec<Vec<f64>> = cells
        .chunks(replicates)
        .map(|chunk| chunk.iter().map(|c| c.mmd2.unwrap_or(f64::NAN)).collect())
        .collect();
    let mut all_radii: Vec<(f64, bool)> = radii.iter().map(|&r| (r, false)).collect();
    if let Some(q) = calibrate_quantile {
        all_radii.push((quantile(&mmd2[0], q).max(0.0).sqrt(), true));
    }
    let rows = all_radii
        .into_iter()
        .map(|(r, calibrated)| {
            let tails: Vec<f64> = mmd2.iter().map(|v| tail_fraction(v, r * r)).collect();
            TailRow {
                r,
                calibrated,
                non_increasing: tails.windows(2).all(|w| w[1] <= w[0]),
                tails,
            }
        })
        .collect();
    let summary = ConcentrationSummary {
        n,
        schedules: schedules.iter().map(|s| s.tag()).collect(),
        rows,
        median_mmd2: mmd2.iter().map(|v| quantile(v, 0.5)).collect(),
    };
    let mut output = ExperimentOutput::new(setup, "concentration", cells, &summary)?;
    output.timings = timings;
    let mut curves = Vec::new();
    for (s, values) in schedules.iter().zip(&mmd2) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // Empirical tail P(mmd² > r²) just after each observed radius.
        let r = sorted.len() as f64;
        let points: Vec<(f64, f64)> = sorted
            .iter()
            .enumerate()
            .map(|(i, v)| (v.max(0.0).sqrt(), 1.0 - (i + 1) as f64 / r))
            .collect();
        output.tables.push(Table {
            name: format!("tail_beta_{}", schedule_slug(s)),
            header: ("r".into(), "tail".into()),
            rows: points.clone(),
        });
        curves.push(Series { label: s.tag(), points });
    }
    output.figures.push(Figure {
        name: "concentration_tails".into(),
        axes: Axes::Linear,
        series: curves,
    });
    Ok(Concentration { summary, mmd2, output })
}

// ---------------------------------------------------------------------------
// Multimodal

/// Points per mixture component: a point counts for the nearest component
/// center among those whose truncation ball contains it. The last entry
/// counts points outside every component.
pub fn mode_occupancy(x: &ParticleConfiguration, target: &TargetMeasure) -> Vec<usize> {
    let comps = target.components();
    let mut counts = vec![0usize; comps.len() + 1];
    for p in x.points() {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in comps.iter().enumerate() {
            let q: f64 = p.iter().zip(&c.center).map(|(a, b)| (a - b) * (a - b)).sum();
            if q <= c.trunc_radius * c.trunc_radius && best.is_none_or(|(_, bq)| q < bq) {
                best = Some((i, q));
            }
        }
        match best {
            Some((i, _)) => counts[i] += 1,
            None => counts[comps.len()] += 1,
        }
    }
    counts
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    /// Occupancy (per component, then unassigned) at each snapshot.
    pub snapshots: Vec<(usize, Vec<usize>)>,
    pub final_occupancy: Vec<usize>,
    pub min_mode_count: usize,
    /// Every mode holds at least `n / 12` points.
    pub all_modes_populated: bool,
    /// Every mode holds between 0.5 and 1.5 times `n / k` points.
    pub balanced: bool,
    pub acceptance: f64,
    pub ladder: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultimodalSummary {
    pub variants: Vec<VariantSummary>,
}

#[derive(Clone, Debug)]
pub struct Multimodal {
    pub summary: MultimodalSummary,
    pub output: ExperimentOutput,
}

/// Runs the requested start variants against a mixture target and records
/// mode occupancy at each snapshot. Cold and warm variants share the
/// embedding from the `"embedding"` stream; the annealed variant estimates
/// one embedding per rung. Each variant's chain seed is
/// `derive_seed(seed, "multimodal", variant index)`.
pub fn run_multimodal(
    setup: &Setup,
    variants: &[StartVariant],
    snapshots: &[usize],
    anneal_levels: usize,
) -> Result<Multimodal> {
    let target = setup.target()?.clone();
    if target.components().is_empty() {
        return Err(Error::invalid("target", "the multimodal study needs a mixture target"));
    }
    let settings = match &setup.potential {
        PotentialSource::Equilibrated(s) => *s,
        _ => return Err(Error::invalid("potential", "the multimodal study uses the equilibrated potential")),
    };
    let needs_plain = variants.iter().any(|v| *v != StartVariant::Annealed);
    let mut timings = Vec::new();
    let plain = if needs_plain {
        Some(timed("embedding".into(), &mut timings, || setup.build_potential())?.0)
    } else {
        None
    };
    let n = setup.template.n;
    let k = target.components().len();
    let items: Vec<(usize, StartVariant)> = variants.iter().copied().enumerate().collect();
    let (runs, cell_timings) = par_cells(
        &items,
        |(_, v)| format!("{} start", v.name()),
        |&(i, v)| {
            let mut cfg = setup.cell_config(n, setup.template.beta, derive_seed(setup.seed, "multimodal", i as u64));
            cfg.snapshots = snapshots.to_vec();
            match v {
                StartVariant::Cold => {
                    cfg.init = Initialization::ColdGaussian { mean: 0.0, std: 1.0 };
                    sample_gibbs(&cfg, &setup.kernel, plain.as_ref().expect("plain potential"))
                }
                StartVariant::Warm => {
                    cfg.init = Initialization::FromTarget(target.clone());
                    sample_gibbs(&cfg, &setup.kernel, plain.as_ref().expect("plain potential"))
                }
                StartVariant::Annealed => {
                    cfg.init = Initialization::ColdGaussian { mean: 0.0, std: 1.0 };
                    cfg.anneal_levels = Some(anneal_levels);
                    sample_gibbs_annealed(&cfg, &setup.kernel, &target, &settings)
                }
            }
        },
    )?;
    timings.extend(cell_timings);
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    let mut clouds = Vec::new();
    for ((i, v), run) in items.iter().zip(runs) {
        let seed = derive_seed(setup.seed, "multimodal", *i as u64);
        let mut snaps = Vec::new();
        for (it, nodes) in &run.snapshots {
            let occ = mode_occupancy(nodes, &target);
            let mut cell = Cell::new(n, v.name(), 0, seed).with_chain(&run);
            cell.iteration = Some(*it);
            cell.occupancy = Some(occ.clone());
            cells.push(cell);
            snaps.push((*it, occ));
            clouds.push((format!("nodes_{}_t{it}", v.name()), nodes.clone()));
        }
        let final_occupancy = mode_occupancy(&run.nodes, &target);
        let modes = &final_occupancy[..k];
        let min_mode_count = modes.iter().copied().min().unwrap_or(0);
        let share = n as f64 / k as f64;
        summaries.push(VariantSummary {
            variant: v.name().to_string(),
            snapshots: snaps,
            min_mode_count,
            all_modes_populated: modes.iter().all(|&c| 12 * c >= n),
            balanced: modes.iter().all(|&c| (c as f64) >= 0.5 * share && (c as f64) <= 1.5 * share),
            final_occupancy,
            acceptance: run.diagnostics.acceptance_rate,
            ladder: (*v == StartVariant::Annealed)
                .then(|| crate::samplers::anneal_ladder(anneal_levels))
                .transpose()?,
        });
        clouds.push((format!("nodes_{}_final", v.name()), run.nodes));
    }
    let summary = MultimodalSummary { variants: summaries };
    let mut output = ExperimentOutput::new(setup, "multimodal", cells, &summary)?;
    output.clouds = clouds;
    output.timings = timings;
    Ok(Multimodal { summary, output })
}

/// Dispatches the experiment section of a config.
pub fn run_configured(cfg: &RunConfig) -> Result<ExperimentOutput> {
    let setup = Setup::from_config(cfg)?;
    let experiment = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| Error::invalid("experiment", "the config has no experiment section"))?;
    info!("running {} (config {})", experiment.kind(), setup.config_hash);
    Ok(match experiment {
        ExperimentConfig::Crystallize { schedules } => run_crystallization(&setup, schedules)?.output,
        ExperimentConfig::EnergyDecay {
            n_grid,
            reference_size,
            baseline_proposal_std,
        } => run_energy_decay(&setup, n_grid, *reference_size, *baseline_proposal_std)?.output,
        ExperimentConfig::Variance {
            n_grid,
            replicates,
            baseline_proposal_std,
            ..
        } => run_variance_comparison(&setup, n_grid, *replicates, *baseline_proposal_std)?.output,
        ExperimentConfig::Concentration {
            schedules,
            replicates,
            reference_size,
            radii,
            calibrate_quantile,
        } => run_concentration_tail(
            &setup,
            schedules,
            *replicates,
            *reference_size,
            0.05f64.sqrt(),
            radii,
            *calibrate_quantile,
        )?
        .output,
        ExperimentConfig::Multimodal {
            variants,
            snapshots,
            anneal_levels,
        } => run_multimodal(&setup, variants, snapshots, *anneal_levels)?.output,
    })
}
