//! Run configuration files.
//!
//! A run is described by one JSON document with the sections `seed`,
//! `output_dir`, `kernel`, `target`, `gibbs` and `experiment`. Parsing is
//! strict: unknown keys are errors, and every problem found is reported with
//! the JSON pointer of the offending value. Optional fields and their
//! defaults:
//!
//! | pointer | default |
//! |---|---|
//! | `/kernel/exponent` | `(d - 2) / 2` |
//! | `/kernel/amplitude` | `1` |
//! | `/target` | absent (only needed by equilibrated runs and baselines) |
//! | `/gibbs/init` | cold Gaussian, mean 0, std 1 |
//! | `/gibbs/tune/*` | enabled, 200 pilot steps, band `[0.4, 0.6]`, 5 confirmations, 30 rounds |
//! | `/gibbs/anneal_levels` | none |
//! | `/gibbs/snapshots` | `[]` |
//! | `/gibbs/potential/grid` | none (exact embedding evaluation) |
//! | `/experiment` | none (`sample` and `embed` do not need it) |
//!
//! Experiment sections document their own defaults on [`ExperimentConfig`].
//!
//! The canonical form is the re-serialization of the parsed document with
//! every default made explicit and keys sorted; it is a fixed point of
//! parse-then-serialize. The config hash is the SHA-256 of the canonical form
//! without `output_dir`, so moving the output root does not change it.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{default_exponent, KernelFamily, KernelSpec};
use crate::measures::TargetMeasure;
use crate::samplers::{BetaSchedule, EmbeddingSettings, TuneSettings};

/// One validation problem, located by a JSON pointer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pointer = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{pointer}: {}", self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub kernel: KernelConfig,
    pub target: Option<TargetConfig>,
    pub gibbs: GibbsConfig,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TargetConfig {
    UniformBall {
        radius: f64,
    },
    TruncatedGaussian {
        center: Vec<f64>,
        variance: f64,
        truncation_radius: f64,
    },
    MixtureOnCircle {
        components: usize,
        circle_radius: f64,
        variance: f64,
        truncation_radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GibbsConfig {
    pub n: usize,
    pub dimension: usize,
    #[serde(serialize_with = "serialize_schedule")]
    pub beta: BetaSchedule,
    pub alpha0: f64,
    pub iterations: usize,
    pub init: InitConfig,
    pub tune: TuneConfig,
    pub anneal_levels: Option<usize>,
    pub snapshots: Vec<usize>,
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    ColdGaussian { mean: f64, std: f64 },
    WarmFromTarget,
    FromFile { path: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TuneConfig {
    pub enabled: bool,
    pub pilot_steps: usize,
    pub band: (f64, f64),
    pub confirmations: usize,
    pub max_rounds: usize,
}

impl TuneConfig {
    pub fn settings(&self) -> Option<TuneSettings> {
        self.enabled.then_some(TuneSettings {
            pilot_steps: self.pilot_steps,
            band: self.band,
            confirmations: self.confirmations,
            max_rounds: self.max_rounds,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Zero,
    /// `V(x) = |x|² / 2`.
    Quadratic,
    /// `V^π` from an embedding chain of `embedding_size` states.
    Equilibrated {
        embedding_size: usize,
        proposal_std: f64,
        grid: Option<GridConfig>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub half_width: f64,
    pub nodes: usize,
}

/// Variant of the multimodal study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartVariant {
    Cold,
    Warm,
    Annealed,
}

impl StartVariant {
    pub fn name(&self) -> &'static str {
        match self {
            StartVariant::Cold => "cold",
            StartVariant::Warm => "warm",
            StartVariant::Annealed => "annealed",
        }
    }
}

/// Integrand of the variance study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    /// `f(x) = K(x, 0)`.
    KernelAtOrigin,
}

/// Experiment parameters. Defaults: `schedules` = `["n^3/2", "n^2", "n^3"]`,
/// `reference_size` = 10 000, `baseline_proposal_std` = `sqrt(0.05)`,
/// `integrand` = `"kernel_at_origin"`, `radii` = `[]`,
/// `calibrate_quantile` = 0.5, multimodal `variants` = all three,
/// `snapshots` = `[5000, 10000, 15000]`, `anneal_levels` = 10.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Crystallize {
        #[serde(serialize_with = "serialize_schedules")]
        schedules: Vec<BetaSchedule>,
    },
    EnergyDecay {
        n_grid: Vec<usize>,
        reference_size: usize,
        baseline_proposal_std: f64,
    },
    Variance {
        n_grid: Vec<usize>,
        replicates: usize,
        integrand: Integrand,
        baseline_proposal_std: f64,
    },
    Concentration {
        #[serde(serialize_with = "serialize_schedules")]
        schedules: Vec<BetaSchedule>,
        replicates: usize,
        reference_size: usize,
        radii: Vec<f64>,
        /// Adds `r = sqrt(q-quantile of mmd²)` at the first schedule.
        calibrate_quantile: Option<f64>,
    },
    Multimodal {
        variants: Vec<StartVariant>,
        snapshots: Vec<usize>,
        anneal_levels: usize,
    },
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Crystallize { .. } => "crystallize",
            ExperimentConfig::EnergyDecay { .. } => "energy_decay",
            ExperimentConfig::Variance { .. } => "variance",
            ExperimentConfig::Concentration { .. } => "concentration",
            ExperimentConfig::Multimodal { .. } => "multimodal",
        }
    }
}

fn schedule_value(s: &BetaSchedule) -> Value {
    match s {
        BetaSchedule::Explicit(b) => Value::from(*b),
        power => Value::from(power.tag()),
    }
}

fn serialize_schedule<S: Serializer>(s: &BetaSchedule, ser: S) -> std::result::Result<S::Ok, S::Error> {
    schedule_value(s).serialize(ser)
}

fn serialize_schedules<S: Serializer>(s: &[BetaSchedule], ser: S) -> std::result::Result<S::Ok, S::Error> {
    s.iter().map(schedule_value).collect::<Vec<_>>().serialize(ser)
}

impl Serialize for ConfigIssue {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("ConfigIssue", 2)?;
        st.serialize_field("pointer", &self.pointer)?;
        st.serialize_field("message", &self.message)?;
        st.end()
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            Error::Config(vec![ConfigIssue {
                pointer: String::new(),
                message: format!("not valid JSON: {e}"),
            }])
        })?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let mut r = Reader::default();
        let parsed = r.run_config(value);
        match parsed {
            Some(cfg) if r.issues.is_empty() => Ok(cfg),
            _ => Err(Error::Config(r.issues)),
        }
    }

    pub fn canonical_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    /// Canonical serialization: defaults explicit, keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        self.canonical_value().to_string()
    }

    /// Hex SHA-256 prefix of the canonical form without `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = self.canonical_value();
        if let Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `output_dir/<hash>`, with `output_dir` replaced by `override_root`
    /// when given.
    pub fn run_dir(&self, override_root: Option<&Path>) -> PathBuf {
        let root = override_root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&self.output_dir));
        root.join(self.hash())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel.family, self.gibbs.dimension)?.with_amplitude(self.kernel.amplitude)
    }

    pub fn target_measure(&self) -> Result<Option<TargetMeasure>> {
        let d = self.gibbs.dimension;
        self.target.as_ref().map(|t| t.build(d)).transpose()
    }

    pub fn embedding_settings(&self) -> Option<EmbeddingSettings> {
        match &self.gibbs.potential {
            PotentialConfig::Equilibrated {
                embedding_size,
                proposal_std,
                grid,
            } => Some(EmbeddingSettings {
                size: *embedding_size,
                proposal_std: *proposal_std,
                grid: grid.map(|g| (g.half_width, g.nodes)),
            }),
            _ => None,
        }
    }
}

impl TargetConfig {
    pub fn build(&self, dim: usize) -> Result<TargetMeasure> {
        match self {
            TargetConfig::UniformBall { radius } => TargetMeasure::uniform_ball(dim, *radius),
            TargetConfig::TruncatedGaussian {
                center,
                variance,
                truncation_radius,
            } => {
                if center.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: center.len(),
                    });
                }
                TargetMeasure::truncated_gaussian(center.clone(), *variance, *truncation_radius)
            }
            TargetConfig::MixtureOnCircle {
                components,
                circle_radius,
                variance,
                truncation_radius,
            } => {
                if dim != 2 {
                    return Err(Error::DimensionMismatch { expected: 2, got: dim });
                }
                TargetMeasure::mixture_on_circle(*components, *circle_radius, *variance, *truncation_radius)
            }
        }
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn child(path: &str, key: &str) -> String {
    format!("{path}/{}", escape(key))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Range predicates for numeric fields.
#[derive(Clone, Copy)]
enum Range {
    Any,
    Positive,
    NonNegative,
    /// Open unit interval.
    Unit,
}

impl Range {
    fn check(self, x: f64) -> Option<&'static str> {
        let ok = match self {
            Range::Any => true,
            Range::Positive => x > 0.0,
            Range::NonNegative => x >= 0.0,
            Range::Unit => x > 0.0 && x < 1.0,
        };
        (!ok).then_some(match self {
            Range::Any => "",
            Range::Positive => "must be positive",
            Range::NonNegative => "must be non-negative",
            Range::Unit => "must lie strictly between 0 and 1",
        })
    }
}

/// Collects every issue instead of stopping at the first.
#[derive(Default)]
struct Reader {
    issues: Vec<ConfigIssue>,
}

type Obj<'v> = (&'v Map<String, Value>, String);

impl Reader {
    fn issue(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, keys: &[&str]) -> Option<Obj<'v>> {
        let Value::Object(map) = v else {
            self.issue(path, format!("expected an object, found {}", type_name(v)));
            return None;
        };
        for key in map.keys() {
            if !keys.contains(&key.as_str()) {
                self.issue(child(path, key), "unknown key");
            }
        }
        Some((map, path.to_string()))
    }

    /// Field value, treating `null` as absent.
    fn field<'v>(&mut self, obj: &Obj<'v>, key: &str, required: bool) -> Option<&'v Value> {
        match obj.0.get(key) {
            Some(Value::Null) | None => {
                if required {
                    self.issue(child(&obj.1, key), "missing field");
                }
                None
            }
            Some(v) => Some(v),
        }
    }

    fn float_at(&mut self, v: &Value, path: &str, range: Range) -> Option<f64> {
        let Some(x) = v.as_f64() else {
            self.issue(path, format!("expected a number, found {}", type_name(v)));
            return None;
        };
        if !x.is_finite() {
            self.issue(path, "must be finite");
            return None;
        }
        if let Some(msg) = range.check(x) {
            self.issue(path, format!("{msg}, got {x}"));
            return None;
        }
        Some(x)
    }

    fn float(&mut self, obj: &Obj<'_>, key: &str, range: Range) -> Option<f64> {
        let v = self.field(obj, key, true)?;
        self.float_at(v, &child(&obj.1, key), range)
    }

    fn float_or(&mut self, obj: &Obj<'_>, key: &str, range: Range, default: f64) -> Option<f64> {
        match self.field(obj, key, false) {
            Some(v) => self.float_at(v, &child(&obj.1, key), range),
            None => Some(default),
        }
    }

    fn count_at(&mut self, v: &Value, path: &str, min: u64) -> Option<usize> {
        let Some(x) = v.as_u64() else {
            self.issue(path, format!("expected a non-negative integer, found {}", type_name(v)));
            return None;
        };
        if x < min {
            self.issue(path, format!("must be at least {min}, got {x}"));
            return None;
        }
        usize::try_from(x).ok()
    }

    fn count(&mut self, obj: &Obj<'_>, key: &str, min: u64) -> Option<usize> {
        let v = self.field(obj, key, true)?;
        self.count_at(v, &child(&obj.1, key), min)
    }

    fn count_or(&mut self, obj: &Obj<'_>, key: &str, min: u64, default: usize) -> Option<usize> {
        match self.field(obj, key, false) {
            Some(v) => self.count_at(v, &child(&obj.1, key), min),
            None => Some(default),
        }
    }

    fn string<'v>(&mut self, obj: &Obj<'v>, key: &str) -> Option<&'v str> {
        let v = self.field(obj, key, true)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.issue(child(&obj.1, key), format!("expected a string, found {}", type_name(v)));
                None
            }
        }
    }

    fn array<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            other => {
                self.issue(path, format!("expected an array, found {}", type_name(other)));
                None
            }
        }
    }

    fn list<T>(
        &mut self,
        obj: &Obj<'_>,
        key: &str,
        default: Option<Vec<T>>,
        nonempty: bool,
        mut item: impl FnMut(&mut Self, &Value, &str) -> Option<T>,
    ) -> Option<Vec<T>> {
        let path = child(&obj.1, key);
        let Some(v) = self.field(obj, key, default.is_none()) else {
            return default;
        };
        let arr = self.array(v, &path)?;
        if nonempty && arr.is_empty() {
            self.issue(&path, "must not be empty");
            return None;
        }
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, e) in arr.iter().enumerate() {
            match item(self, e, &format!("{path}/{i}")) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn schedule_at(&mut self, v: &Value, path: &str) -> Option<BetaSchedule> {
        let parsed = match v {
            Value::String(s) => s.parse::<BetaSchedule>(),
            Value::Number(n) => n.as_f64().map(|b| b.to_string()).unwrap_or_default().parse::<BetaSchedule>(),
            other => Err(format!("expected a schedule tag or a number, found {}", type_name(other))),
        };
        parsed.map_err(|e| self.issue(path, e)).ok()
    }

    fn tag<'v>(&mut self, v: &'v Value, path: &str, tag_key: &str, options: &[&str]) -> Option<&'v str> {
        let Value::Object(map) = v else {
            self.issue(path, format!("expected an object, found {}", type_name(v)));
            return None;
        };
        let tag_path = child(path, tag_key);
        match map.get(tag_key) {
            None | Some(Value::Null) => {
                self.issue(tag_path, "missing field");
                None
            }
            Some(Value::String(s)) if options.contains(&s.as_str()) => Some(s.as_str()),
            Some(other) => {
                self.issue(tag_path, format!("expected one of {options:?}, found {other}"));
                None
            }
        }
    }

    fn run_config(&mut self, v: &Value) -> Option<RunConfig> {
        let root = self.object(v, "", &["seed", "output_dir", "kernel", "target", "gibbs", "experiment"])?;
        let seed = self.field(&root, "seed", true).and_then(|v| match v.as_u64() {
            Some(s) => Some(s),
            None => {
                self.issue("/seed", "expected an unsigned 64-bit integer");
                None
            }
        });
        let output_dir = self.string(&root, "output_dir").map(str::to_string);
        let gibbs = self.field(&root, "gibbs", true).and_then(|g| self.gibbs(g));
        let dim = gibbs.as_ref().map(|g| g.dimension);
        let kernel = self.field(&root, "kernel", true).and_then(|k| self.kernel(k, dim));
        let target = match self.field(&root, "target", false) {
            Some(t) => self.target(t, dim).map(Some),
            None => Some(None),
        };
        let experiment = match self.field(&root, "experiment", false) {
            Some(e) => self.experiment(e).map(Some),
            None => Some(None),
        };
        let cfg = RunConfig {
            seed: seed?,
            output_dir: output_dir?,
            kernel: kernel?,
            target: target?,
            gibbs: gibbs?,
            experiment: experiment?,
        };
        self.cross_checks(&cfg);
        Some(cfg)
    }

    fn cross_checks(&mut self, cfg: &RunConfig) {
        let needs_target = matches!(cfg.gibbs.potential, PotentialConfig::Equilibrated { .. })
            || matches!(cfg.gibbs.init, InitConfig::WarmFromTarget)
            || matches!(
                cfg.experiment,
                Some(ExperimentConfig::EnergyDecay { .. })
                    | Some(ExperimentConfig::Variance { .. })
                    | Some(ExperimentConfig::Concentration { .. })
                    | Some(ExperimentConfig::Multimodal { .. })
            );
        if needs_target && cfg.target.is_none() {
            self.issue("/target", "missing field (required by the potential, init or experiment)");
        }
        if let Some(ExperimentConfig::Multimodal { .. }) = &cfg.experiment {
            if !matches!(cfg.target, Some(TargetConfig::MixtureOnCircle { .. }) | None) {
                self.issue("/target/family", "the multimodal study needs a mixture_on_circle target");
            }
        }
        if let Some(ExperimentConfig::Crystallize { .. }) = &cfg.experiment {
            if cfg.gibbs.potential != PotentialConfig::Quadratic {
                self.issue("/gibbs/potential/kind", "the crystallization study uses the quadratic potential");
            }
        }
        if cfg.gibbs.anneal_levels.is_some_and(|l| l > cfg.gibbs.iterations) {
            self.issue("/gibbs/anneal_levels", "more rungs than iterations");
        }
    }

    fn kernel(&mut self, v: &Value, dim: Option<usize>) -> Option<KernelConfig> {
        let family = self.tag(
            v,
            "/kernel",
            "family",
            &["gaussian", "truncated_riesz", "truncated_log", "truncated_multiquadric"],
        );
        let keys: &[&str] = match family {
            Some("gaussian") => &["family", "lengthscale", "amplitude"],
            Some("truncated_log") => &["family", "epsilon", "amplitude"],
            Some(_) => &["family", "epsilon", "exponent", "amplitude"],
            None => return None,
        };
        let obj = self.object(v, "/kernel", keys)?;
        let amplitude = self.float_or(&obj, "amplitude", Range::NonNegative, 1.0);
        let family = match family? {
            "gaussian" => KernelFamily::Gaussian {
                lengthscale: self.float(&obj, "lengthscale", Range::Positive)?,
            },
            "truncated_log" => KernelFamily::TruncatedLog {
                epsilon: self.float(&obj, "epsilon", Range::Positive)?,
            },
            fam => {
                let epsilon = self.float(&obj, "epsilon", Range::Positive);
                let exponent = match self.field(&obj, "exponent", false) {
                    Some(e) => self.float_at(e, "/kernel/exponent", Range::Any),
                    None => Some(default_exponent(dim?)),
                };
                let (epsilon, exponent) = (epsilon?, exponent?);
                if fam == "truncated_riesz" {
                    KernelFamily::TruncatedRiesz { epsilon, exponent }
                } else {
                    KernelFamily::TruncatedMultiquadric { epsilon, exponent }
                }
            }
        };
        let kernel = KernelConfig {
            family,
            amplitude: amplitude?,
        };
        if let Some(d) = dim {
            if let Err(e) = KernelSpec::new(kernel.family, d) {
                self.issue("/kernel", e.to_string());
                return None;
            }
        }
        Some(kernel)
    }

    fn target(&mut self, v: &Value, dim: Option<usize>) -> Option<TargetConfig> {
        let family = self.tag(
            v,
            "/target",
            "family",
            &["uniform_ball", "truncated_gaussian", "mixture_on_circle"],
        )?;
        let target = match family {
            "uniform_ball" => {
                let obj = self.object(v, "/target", &["family", "radius"])?;
                TargetConfig::UniformBall {
                    radius: self.float(&obj, "radius", Range::Positive)?,
                }
            }
            "truncated_gaussian" => {
                let obj = self.object(v, "/target", &["family", "center", "variance", "truncation_radius"])?;
                let center = self.list(&obj, "center", None, true, |r, e, p| r.float_at(e, p, Range::Any));
                let variance = self.float(&obj, "variance", Range::Positive);
                let truncation_radius = self.float(&obj, "truncation_radius", Range::Positive);
                let center = center?;
                if dim.is_some_and(|d| d != center.len()) {
                    self.issue("/target/center", format!("expected {} coordinates, got {}", dim?, center.len()));
                    return None;
                }
                TargetConfig::TruncatedGaussian {
                    center,
                    variance: variance?,
                    truncation_radius: truncation_radius?,
                }
            }
            _ => {
                let obj = self.object(
                    v,
                    "/target",
                    &["family", "components", "circle_radius", "variance", "truncation_radius"],
                )?;
                let components = self.count(&obj, "components", 1);
                let circle_radius = self.float(&obj, "circle_radius", Range::NonNegative);
                let variance = self.float(&obj, "variance", Range::Positive);
                let truncation_radius = self.float(&obj, "truncation_radius", Range::Positive);
                if dim.is_some_and(|d| d != 2) {
                    self.issue("/target/family", "mixture_on_circle lives in dimension 2");
                    return None;
                }
                TargetConfig::MixtureOnCircle {
                    components: components?,
                    circle_radius: circle_radius?,
                    variance: variance?,
                    truncation_radius: truncation_radius?,
                }
            }
        };
        if let Some(d) = dim {
            if let Err(e) = target.build(d) {
                self.issue("/target", e.to_string());
                return None;
            }
        }
        Some(target)
    }

    fn gibbs(&mut self, v: &Value) -> Option<GibbsConfig> {
        let obj = self.object(
            v,
            "/gibbs",
            &[
                "n",
                "dimension",
                "beta",
                "alpha0",
                "iterations",
                "init",
                "tune",
                "anneal_levels",
                "snapshots",
                "potential",
            ],
        )?;
        let n = self.count(&obj, "n", 1);
        let dimension = self.count(&obj, "dimension", 1);
        let beta = self.field(&obj, "beta", true).and_then(|b| self.schedule_at(b, "/gibbs/beta"));
        let alpha0 = self.float(&obj, "alpha0", Range::Positive);
        let iterations = self.count(&obj, "iterations", 1);
        let init = match self.field(&obj, "init", false) {
            Some(i) => self.init(i),
            None => Some(InitConfig::ColdGaussian { mean: 0.0, std: 1.0 }),
        };
        let tune = self.tune(&obj);
        let anneal_levels = match self.field(&obj, "anneal_levels", false) {
            Some(l) => self.count_at(l, "/gibbs/anneal_levels", 1).map(Some),
            None => Some(None),
        };
        let snapshots = self.list(&obj, "snapshots", Some(Vec::new()), false, |r, e, p| r.count_at(e, p, 1));
        let potential = self.field(&obj, "potential", true).and_then(|p| self.potential(p));
        Some(GibbsConfig {
            n: n?,
            dimension: dimension?,
            beta: beta?,
            alpha0: alpha0?,
            iterations: iterations?,
            init: init?,
            tune: tune?,
            anneal_levels: anneal_levels?,
            snapshots: snapshots?,
            potential: potential?,
        })
    }

    fn init(&mut self, v: &Value) -> Option<InitConfig> {
        let kind = self.tag(
            v,
            "/gibbs/init",
            "kind",
            &["cold_gaussian", "warm_from_target", "from_file"],
        )?;
        match kind {
            "cold_gaussian" => {
                let obj = self.object(v, "/gibbs/init", &["kind", "mean", "std"])?;
                let mean = self.float(&obj, "mean", Range::Any);
                let std = self.float(&obj, "std", Range::NonNegative);
                Some(InitConfig::ColdGaussian { mean: mean?, std: std? })
            }
            "warm_from_target" => {
                self.object(v, "/gibbs/init", &["kind"])?;
                Some(InitConfig::WarmFromTarget)
            }
            _ => {
                let obj = self.object(v, "/gibbs/init", &["kind", "path"])?;
                Some(InitConfig::FromFile {
                    path: self.string(&obj, "path")?.to_string(),
                })
            }
        }
    }

    fn tune(&mut self, parent: &Obj<'_>) -> Option<TuneConfig> {
        let defaults = TuneSettings::default();
        let Some(v) = self.field(parent, "tune", false) else {
            return Some(TuneConfig {
                enabled: true,
                pilot_steps: defaults.pilot_steps,
                band: defaults.band,
                confirmations: defaults.confirmations,
                max_rounds: defaults.max_rounds,
            });
        };
        let obj = self.object(v, "/gibbs/tune", &["enabled", "pilot_steps", "band", "confirmations", "max_rounds"])?;
        let enabled = match self.field(&obj, "enabled", false) {
            Some(Value::Bool(b)) => Some(*b),
            Some(other) => {
                self.issue("/gibbs/tune/enabled", format!("expected a boolean, found {}", type_name(other)));
                None
            }
            None => Some(true),
        };
        let pilot_steps = self.count_or(&obj, "pilot_steps", 1, defaults.pilot_steps);
        let confirmations = self.count_or(&obj, "confirmations", 1, defaults.confirmations);
        let max_rounds = self.count_or(&obj, "max_rounds", 1, defaults.max_rounds);
        let band = self.list(&obj, "band", Some(vec![defaults.band.0, defaults.band.1]), false, |r, e, p| {
            r.float_at(e, p, Range::Unit)
        });
        let band = match band? {
            b if b.len() == 2 && b[0] < b[1] => (b[0], b[1]),
            _ => {
                self.issue("/gibbs/tune/band", "expected [low, high] with low < high");
                return None;
            }
        };
        Some(TuneConfig {
            enabled: enabled?,
            pilot_steps: pilot_steps?,
            band,
            confirmations: confirmations?,
            max_rounds: max_rounds?,
        })
    }

    fn potential(&mut self, v: &Value) -> Option<PotentialConfig> {
        let kind = self.tag(v, "/gibbs/potential", "kind", &["zero", "quadratic", "equilibrated"])?;
        match kind {
            "zero" => {
                self.object(v, "/gibbs/potential", &["kind"])?;
                Some(PotentialConfig::Zero)
            }
            "quadratic" => {
                self.object(v, "/gibbs/potential", &["kind"])?;
                Some(PotentialConfig::Quadratic)
            }
            _ => {
                let obj = self.object(
                    v,
                    "/gibbs/potential",
                    &["kind", "embedding_size", "proposal_std", "grid"],
                )?;
                let embedding_size = self.count(&obj, "embedding_size", 1);
                let proposal_std = self.float(&obj, "proposal_std", Range::Positive);
                let grid = match self.field(&obj, "grid", false) {
                    Some(g) => {
                        let gobj = self.object(g, "/gibbs/potential/grid", &["half_width", "nodes"])?;
                        let half_width = self.float(&gobj, "half_width", Range::Positive);
                        let nodes = self.count(&gobj, "nodes", 2);
                        Some(Some(GridConfig {
                            half_width: half_width?,
                            nodes: nodes?,
                        }))
                    }
                    None => Some(None),
                };
                Some(PotentialConfig::Equilibrated {
                    embedding_size: embedding_size?,
                    proposal_std: proposal_std?,
                    grid: grid?,
                })
            }
        }
    }

    fn schedules(&mut self, obj: &Obj<'_>) -> Option<Vec<BetaSchedule>> {
        let default = vec![
            BetaSchedule::Power(1.5),
            BetaSchedule::Power(2.0),
            BetaSchedule::Power(3.0),
        ];
        self.list(obj, "schedules", Some(default), true, |r, e, p| r.schedule_at(e, p))
    }

    fn experiment(&mut self, v: &Value) -> Option<ExperimentConfig> {
        const P: &str = "/experiment";
        let kind = self.tag(
            v,
            P,
            "kind",
            &["crystallize", "energy_decay", "variance", "concentration", "multimodal"],
        )?;
        let baseline_std = 0.05f64.sqrt();
        match kind {
            "crystallize" => {
                let obj = self.object(v, P, &["kind", "schedules"])?;
                Some(ExperimentConfig::Crystallize {
                    schedules: self.schedules(&obj)?,
                })
            }
            "energy_decay" => {
                let obj = self.object(v, P, &["kind", "n_grid", "reference_size", "baseline_proposal_std"])?;
                let n_grid = self.list(&obj, "n_grid", None, true, |r, e, p| r.count_at(e, p, 1));
                let reference_size = self.count_or(&obj, "reference_size", 1, 10_000);
                let std = self.float_or(&obj, "baseline_proposal_std", Range::NonNegative, baseline_std);
                Some(ExperimentConfig::EnergyDecay {
                    n_grid: n_grid?,
                    reference_size: reference_size?,
                    baseline_proposal_std: std?,
                })
            }
            "variance" => {
                let obj = self.object(
                    v,
                    P,
                    &["kind", "n_grid", "replicates", "integrand", "baseline_proposal_std"],
                )?;
                let n_grid = self.list(&obj, "n_grid", None, true, |r, e, p| r.count_at(e, p, 1));
                let replicates = self.count(&obj, "replicates", 2);
                let integrand = match self.field(&obj, "integrand", false) {
                    None => Some(Integrand::KernelAtOrigin),
                    Some(Value::String(s)) if s == "kernel_at_origin" => Some(Integrand::KernelAtOrigin),
                    Some(other) => {
                        self.issue(
                            "/experiment/integrand",
                            format!("expected \"kernel_at_origin\", found {other}"),
                        );
                        None
                    }
                };
                let std = self.float_or(&obj, "baseline_proposal_std", Range::NonNegative, baseline_std);
                Some(ExperimentConfig::Variance {
                    n_grid: n_grid?,
                    replicates: replicates?,
                    integrand: integrand?,
                    baseline_proposal_std: std?,
                })
            }
            "concentration" => {
                let obj = self.object(
                    v,
                    P,
                    &[
                        "kind",
                        "schedules",
                        "replicates",
                        "reference_size",
                        "radii",
                        "calibrate_quantile",
                    ],
                )?;
                let schedules = self.schedules(&obj);
                let replicates = self.count(&obj, "replicates", 1);
                let reference_size = self.count_or(&obj, "reference_size", 1, 10_000);
                let radii = self.list(&obj, "radii", Some(Vec::new()), false, |r, e, p| {
                    r.float_at(e, p, Range::NonNegative)
                });
                let quantile = match self.field(&obj, "calibrate_quantile", false) {
                    Some(q) => self.float_at(q, "/experiment/calibrate_quantile", Range::Unit).map(Some),
                    None => Some(Some(0.5)),
                };
                Some(ExperimentConfig::Concentration {
                    schedules: schedules?,
                    replicates: replicates?,
                    reference_size: reference_size?,
                    radii: radii?,
                    calibrate_quantile: quantile?,
                })
            }
            _ => {
                let obj = self.object(v, P, &["kind", "variants", "snapshots", "anneal_levels"])?;
                let all = vec![StartVariant::Cold, StartVariant::Warm, StartVariant::Annealed];
                let variants = self.list(&obj, "variants", Some(all), true, |r, e, p| match e.as_str() {
                    Some("cold") => Some(StartVariant::Cold),
                    Some("warm") => Some(StartVariant::Warm),
                    Some("annealed") => Some(StartVariant::Annealed),
                    _ => {
                        r.issue(p, format!("expected \"cold\", \"warm\" or \"annealed\", found {e}"));
                        None
                    }
                });
                let snapshots = self.list(
                    &obj,
                    "snapshots",
                    Some(vec![5000, 10_000, 15_000]),
                    false,
                    |r, e, p| r.count_at(e, p, 1),
                );
                let levels = self.count_or(&obj, "anneal_levels", 1, 10);
                Some(ExperimentConfig::Multimodal {
                    variants: variants?,
                    snapshots: snapshots?,
                    anneal_levels: levels?,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn fig1() -> Value {
        json!({
            "seed": 1,
            "output_dir": "out",
            "kernel": {"family": "truncated_log", "epsilon": 0.01},
            "gibbs": {
                "n": 1000, "dimension": 2, "beta": "n^3", "alpha0": 1.0, "iterations": 5000,
                "potential": {"kind": "quadratic"}
            },
            "experiment": {"kind": "crystallize"}
        })
    }

    fn issues(v: &Value) -> Vec<ConfigIssue> {
        match RunConfig::from_value(v) {
            Err(Error::Config(issues)) => issues,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_crystallization_config() {
        let cfg = RunConfig::from_value(&fig1()).unwrap();
        assert_eq!(cfg.gibbs.beta.tag(), "n^3");
        assert_eq!(cfg.gibbs.beta.beta(1000), 1e9);
        assert_eq!(cfg.kernel.amplitude, 1.0);
        assert!(cfg.target.is_none());
        assert_eq!(cfg.gibbs.tune.settings(), Some(TuneSettings::default()));
        match &cfg.experiment {
            Some(ExperimentConfig::Crystallize { schedules }) => assert_eq!(schedules.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_epsilon_is_located() {
        let mut v = fig1();
        v["kernel"]["epsilon"] = json!(-0.01);
        let found = issues(&v);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].pointer, "/kernel/epsilon");
    }

    #[test]
    fn all_problems_are_reported() {
        let mut v = fig1();
        v["gibbs"]["itrations"] = json!(3);
        v["gibbs"]["alpha0"] = json!("big");
        v["extra"] = json!(true);
        v.as_object_mut().unwrap().remove("seed");
        let pointers: Vec<String> = issues(&v).into_iter().map(|i| i.pointer).collect();
        for p in ["/gibbs/itrations", "/gibbs/alpha0", "/extra", "/seed"] {
            assert!(pointers.iter().any(|q| q == p), "{p} not in {pointers:?}");
        }
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let cfg = RunConfig::from_value(&fig1()).unwrap();
        let canon = cfg.canonical_json();
        let again = RunConfig::from_json_str(&canon).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical_json(), canon);
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = RunConfig::from_value(&fig1()).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn equilibrated_runs_need_a_target() {
        let mut v = fig1();
        v["experiment"] = Value::Null;
        v["gibbs"]["potential"] = json!({"kind": "equilibrated", "embedding_size": 10, "proposal_std": 0.2});
        let found = issues(&v);
        assert_eq!(found[0].pointer, "/target");
    }
}
