//! Command-line front end.
//!
//! Every subcommand reads a run config, writes its outputs under
//! `<output_dir>/<config hash>/` (the root can be overridden with the
//! `REPULSE_QUAD_OUT` environment variable) and prints a one-line summary.
//! Exit status: 0 on success, 2 on usage or configuration errors, 1 on any
//! other failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{energy_table, run_configured, DiagnosticsRecord, ExperimentOutput, Setup, Table};
use crate::output::{write_json, write_points_csv, write_series_csv};
use crate::samplers::{sample_gibbs, sample_gibbs_annealed};
use crate::svg::{emit_pointcloud_svg, emit_series_svg};

pub const OUTPUT_ENV: &str = "REPULSE_QUAD_OUT";

#[derive(Debug, Parser)]
#[command(name = "repulse-quad", version, about = "Quadrature nodes from repulsive Gibbs measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spacing statistics across inverse-temperature schedules.
    Crystallize(Common),
    /// Squared MMD of Gibbs and MH node sets across sample sizes.
    EnergyDecay(Common),
    /// Replicate variance of a single node average.
    Variance(Common),
    /// Mode occupancy on a mixture target.
    Multimodal(Common),
    /// Empirical MMD tails across schedules.
    Concentration(Common),
    /// Draw one Gibbs sample.
    Sample(SampleArgs),
    /// Estimate and store the kernel embedding of the target.
    Embed(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Where to write the sampled nodes (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Crystallize(c)
            | Command::EnergyDecay(c)
            | Command::Variance(c)
            | Command::Multimodal(c)
            | Command::Concentration(c)
            | Command::Embed(c) => c,
            Command::Sample(s) => &s.common,
        }
    }

    /// Experiment kind expected in the config, for experiment subcommands.
    fn experiment_kind(&self) -> Option<&'static str> {
        match self {
            Command::Crystallize(_) => Some("crystallize"),
            Command::EnergyDecay(_) => Some("energy_decay"),
            Command::Variance(_) => Some("variance"),
            Command::Multimodal(_) => Some("multimodal"),
            Command::Concentration(_) => Some("concentration"),
            Command::Sample(_) | Command::Embed(_) => None,
        }
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit status.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let common = cli.command.common();
    let mut cfg = match RunConfig::from_path(&common.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = cli.command.experiment_kind() {
        let found = cfg.experiment.as_ref().map(|e| e.kind());
        if found != Some(kind) {
            eprintln!(
                "error: invalid configuration: /experiment/kind: this subcommand needs \"{kind}\", found {}",
                found.map(|f| format!("\"{f}\"")).unwrap_or_else(|| "no experiment section".into())
            );
            return 2;
        }
    }
    let root = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
    let dir = cfg.run_dir(root.as_deref());

    let run = || match &cli.command {
        Command::Sample(args) => run_sample(&cfg, &dir, args.out.as_deref()),
        Command::Embed(_) => run_embed(&cfg, &dir),
        _ => run_experiment(&cfg, &dir),
    };
    let started = std::time::Instant::now();
    let result = match common.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start worker pool: {e}");
                return 1;
            }
        },
        None => run(),
    };
    match result {
        Ok(line) => {
            println!("{line} ({:.1} s)", started.elapsed().as_secs_f64());
            0
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Writes every artifact of `out` into `dir` and returns the file count.
/// Wall-clock timings go to the log, not to disk, so reruns are
/// byte-identical.
pub fn write_output(out: &ExperimentOutput, dir: &Path) -> Result<usize> {
    let mut files = 0;
    write_json(&out.report, &dir.join("report.json"))?;
    files += 1;
    for t in &out.timings {
        log::info!("{}: {:.3} s", t.label, t.seconds);
    }
    if !out.diagnostics.is_empty() {
        write_json(&out.diagnostics, &dir.join("diagnostics.json"))?;
        files += 1;
    }
    for (name, cloud) in &out.clouds {
        write_points_csv(cloud, &dir.join(format!("{name}.csv")))?;
        files += 1;
        if cloud.dim() >= 2 {
            emit_pointcloud_svg(cloud, &dir.join(format!("{name}.svg")))?;
            files += 1;
        }
    }
    for fig in &out.figures {
        emit_series_svg(&fig.series, fig.axes, &dir.join(format!("{}.svg", fig.name)))?;
        files += 1;
    }
    for t in &out.tables {
        write_table(t, dir)?;
        files += 1;
    }
    Ok(files)
}

fn write_table(t: &Table, dir: &Path) -> Result<()> {
    write_series_csv(
        (&t.header.0, &t.header.1),
        &t.rows,
        &dir.join(format!("{}.csv", t.name)),
    )
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_json(&cfg.canonical_value(), &dir.join("config.json"))
}

fn run_experiment(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let out = run_configured(cfg)?;
    write_config(cfg, dir)?;
    let files = write_output(&out, dir)? + 1;
    Ok(format!(
        "{}: wrote {files} files to {}",
        out.report.experiment,
        dir.display()
    ))
}

fn run_sample(cfg: &RunConfig, dir: &Path, out: Option<&Path>) -> Result<String> {
    let setup = Setup::from_config(cfg)?;
    let run = match (setup.template.anneal_levels, &cfg.embedding_settings()) {
        (Some(_), Some(settings)) => sample_gibbs_annealed(&setup.template, &setup.kernel, setup.target()?, settings)?,
        _ => {
            let (potential, _) = setup.build_potential()?;
            sample_gibbs(&setup.template, &setup.kernel, &potential)?
        }
    };
    write_config(cfg, dir)?;
    let nodes_path = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("nodes.csv"));
    write_points_csv(&run.nodes, &nodes_path)?;
    if run.nodes.dim() >= 2 {
        emit_pointcloud_svg(&run.nodes, &dir.join("nodes.svg"))?;
    }
    let trace = energy_table("energy_trace", &run);
    write_table(&trace, dir)?;
    for (it, snap) in &run.snapshots {
        write_points_csv(snap, &dir.join(format!("nodes_t{it}.csv")))?;
    }
    let record = DiagnosticsRecord::from_run("sample", &run, Some("energy_trace.csv".into()));
    write_json(&record, &dir.join("diagnostics.json"))?;
    Ok(format!(
        "sample: {} nodes in dimension {} (acceptance {:.3}, alpha0 {:.4e}) -> {}",
        run.nodes.len(),
        run.nodes.dim(),
        run.diagnostics.acceptance_rate,
        run.diagnostics.tuned_alpha0,
        nodes_path.display()
    ))
}

#[derive(Serialize)]
struct EmbedSummary {
    size: usize,
    dimension: usize,
    tabulated: bool,
    config_hash: String,
}

fn run_embed(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let setup = Setup::from_config(cfg)?;
    let settings = cfg
        .embedding_settings()
        .ok_or_else(|| Error::invalid("potential", "`embed` needs an equilibrated potential section"))?;
    let embedding = setup.estimate_embedding(&settings)?;
    write_config(cfg, dir)?;
    let path = dir.join("embedding.csv");
    write_points_csv(embedding.points(), &path)?;
    if embedding.points().dim() >= 2 {
        emit_pointcloud_svg(embedding.points(), &dir.join("embedding.svg"))?;
    }
    write_json(
        &EmbedSummary {
            size: embedding.len(),
            dimension: embedding.points().dim(),
            tabulated: embedding.is_tabulated(),
            config_hash: setup.config_hash.clone(),
        },
        &dir.join("embedding.json"),
    )?;
    Ok(format!("embed: {} reference points -> {}", embedding.len(), path.display()))
}
