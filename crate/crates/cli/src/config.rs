//! Run configuration: a sectioned TOML file, `--set section.key=value`
//! overrides, and the `STOCHWAVE_MAX_WORKERS` environment variable.
//!
//! Every key is validated here and errors name the offending `section.key`.
//! Unknown sections and keys are rejected.

use std::path::{Path, PathBuf};

use stochwave_core::criteria::ExampleParams;
use stochwave_core::ensemble::EnsembleSpec;
use stochwave_core::grid::GridSpec;
use stochwave_core::integrator::{Scheme, StepSize, TimeSpec, DEFAULT_BLOWUP_RATIO, DEFAULT_CFL};
use stochwave_core::model::{InitialData, ModelSpec, NoiseAmplitude, Nonlinearity};
use stochwave_core::noise::{Kernel, NoiseSpec, DEFAULT_PSD_CLIP_TOL};
use toml::{Table, Value};

pub const MAX_WORKERS_ENV: &str = "STOCHWAVE_MAX_WORKERS";

/// Target size of the noise lattice when `noise.coarse_noise_stride` is not given.
pub const AUTO_NOISE_NODES: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{key}: {message}")]
    Key { key: String, message: String },
    #[error("unknown section `{0}`")]
    UnknownSection(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("--set {0}: expected section.key=value")]
    BadOverride(String),
}

fn key_error(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Example4,
    Custom1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    DotProduct,
    SquaredExponential,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    pub nodes: Vec<usize>,
    /// Half-plane truncation `L`; example4 only.
    pub truncation: f64,
    /// Interval end points; custom1d only.
    pub extent: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub c: f64,
    pub alpha: f64,
    /// 0 switches the nonlinearity off.
    pub a_f: f64,
    pub p: u32,
    pub beta: f64,
    pub sigma0: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub kernel: KernelKind,
    pub r0: f64,
    pub rho: f64,
    pub psd_clip_tol: f64,
    /// `None` picks the smallest stride giving at most [`AUTO_NOISE_NODES`] noise nodes.
    pub coarse_noise_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub step: StepSize,
    pub t_max: f64,
    pub record_every: usize,
    pub blowup_threshold_ratio: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    pub max_workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub domain: DomainConfig,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub time: TimeConfig,
    pub mc: McConfig,
    pub output: PathBuf,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["dim", "nodes", "truncation", "extent"]),
    ("model", &["kind", "c", "alpha", "a_f", "p", "beta", "sigma0", "nu"]),
    ("noise", &["kernel", "r0", "rho", "psd_clip_tol", "coarse_noise_stride"]),
    (
        "time",
        &["dt", "cfl_factor", "t_max", "record_every", "blowup_threshold_ratio", "scheme"],
    ),
    ("mc", &["n_paths", "master_seed", "max_workers"]),
    ("output", &["directory"]),
];

/// Read access to one section with typed, key-named errors.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(x)) if x.is_finite() => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(key_error(self.key(key), format!("expected a finite number, got {other}"))),
        }
    }

    fn real_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn required_real(&self, key: &str) -> Result<f64, ConfigError> {
        self.real(key)?
            .ok_or_else(|| key_error(self.key(key), "missing required key"))
    }

    fn integer(&self, key: &str) -> Result<Option<i64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(*i)),
            Some(other) => Err(key_error(self.key(key), format!("expected an integer, got {other}"))),
        }
    }

    fn count(&self, key: &str, min: i64) -> Result<Option<usize>, ConfigError> {
        match self.integer(key)? {
            None => Ok(None),
            Some(i) if i >= min => Ok(Some(i as usize)),
            Some(i) => Err(key_error(self.key(key), format!("must be at least {min}, got {i}"))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(other) => Err(key_error(self.key(key), format!("expected a string, got {other}"))),
        }
    }

    fn array(&self, key: &str) -> Result<Option<&'a Vec<Value>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(other) => Err(key_error(self.key(key), format!("expected an array, got {other}"))),
        }
    }

    fn check(&self, key: &str, value: f64, ok: bool, requirement: &str) -> Result<f64, ConfigError> {
        if ok {
            Ok(value)
        } else {
            Err(key_error(self.key(key), format!("must be {requirement}, got {value}")))
        }
    }

    fn positive(&self, key: &str, value: f64) -> Result<f64, ConfigError> {
        self.check(key, value, value > 0.0, "positive")
    }

    fn non_negative(&self, key: &str, value: f64) -> Result<f64, ConfigError> {
        self.check(key, value, value >= 0.0, "non-negative")
    }
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::BadOverride(spec.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(bad)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
    if section.is_empty() || key.is_empty() {
        return Err(bad());
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(key_error(section, "is not a section")),
    }
}

impl Config {
    /// Reads `path`, applies `overrides` in order, then the worker-count environment value.
    pub fn load(path: &Path, overrides: &[String], env_workers: Option<&str>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table = text.parse::<Table>().map_err(|e| ConfigError::Syntax {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let mut config = Self::from_table(&table)?;
        if let Some(raw) = env_workers {
            config.mc.max_workers = raw
                .trim()
                .parse()
                .map_err(|_| key_error(MAX_WORKERS_ENV, format!("expected a non-negative integer, got `{raw}`")))?;
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table = text.parse::<Table>().map_err(|e| ConfigError::Syntax {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        Self::from_table(&table)
    }

    pub fn from_table(table: &Table) -> Result<Self, ConfigError> {
        for (name, value) in table {
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
                return Err(ConfigError::UnknownSection(name.clone()));
            };
            let Value::Table(entries) = value else {
                return Err(key_error(name.clone(), "expected a section"));
            };
            if let Some(key) = entries.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(ConfigError::UnknownKey(format!("{name}.{key}")));
            }
        }
        let section = |name: &'static str| Section {
            name,
            table: table.get(name).and_then(Value::as_table),
        };

        let model = parse_model(&section("model"))?;
        let domain = parse_domain(&section("domain"), model.kind)?;
        let noise = parse_noise(&section("noise"), model.kind, &domain)?;
        let time = parse_time(&section("time"))?;
        let mc = parse_mc(&section("mc"))?;
        let output = PathBuf::from(section("output").string("directory")?.unwrap_or("out"));
        Ok(Self {
            domain,
            model,
            noise,
            time,
            mc,
            output,
        })
    }

    pub fn grid_spec(&self) -> GridSpec {
        match self.model.kind {
            ModelKind::Example4 => {
                GridSpec::truncated_half_plane(self.domain.truncation, [self.domain.nodes[0], self.domain.nodes[1]])
            }
            ModelKind::Custom1d => GridSpec::interval(self.domain.extent[0], self.domain.extent[1], self.domain.nodes[0]),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            c: m.c,
            alpha: m.alpha,
            nonlinearity: if m.a_f == 0.0 {
                Nonlinearity::Zero
            } else {
                Nonlinearity::Monomial { amplitude: m.a_f, p: m.p }
            },
            sigma: NoiseAmplitude::ArctanDecay { sigma0: m.sigma0, nu: m.nu },
            initial: match m.kind {
                ModelKind::Example4 => InitialData::HalfPlaneExample { beta: m.beta },
                ModelKind::Custom1d => InitialData::SineMode { beta: m.beta },
            },
        }
    }

    pub fn noise_stride(&self) -> usize {
        if let Some(s) = self.noise.coarse_noise_stride {
            return s;
        }
        if self.noise.kernel == KernelKind::Zero {
            return 1;
        }
        let count = |s: usize| self.domain.nodes.iter().map(|n| n.div_ceil(s)).product::<usize>();
        (1..).find(|&s| count(s) <= AUTO_NOISE_NODES).unwrap_or(1)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        let n = &self.noise;
        let kernel = match n.kernel {
            KernelKind::DotProduct => Kernel::DotProduct { r0: n.r0, rho: n.rho },
            KernelKind::SquaredExponential => Kernel::SquaredExponential { r0: n.r0, rho: n.rho },
            KernelKind::Zero => Kernel::Zero,
        };
        NoiseSpec {
            kernel,
            psd_clip_tol: n.psd_clip_tol,
            coarse_stride: self.noise_stride(),
        }
    }

    pub fn time_spec(&self) -> TimeSpec {
        TimeSpec {
            step: self.time.step,
            t_max: self.time.t_max,
            record_every: self.time.record_every,
            blowup_ratio: self.time.blowup_threshold_ratio,
            scheme: self.time.scheme,
        }
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            n_paths: self.mc.n_paths,
            master_seed: self.mc.master_seed,
            max_workers: self.mc.max_workers,
        }
    }

    /// Constants of the half-plane example; needs model.kind = example4 and a dot-product kernel.
    pub fn example_params(&self) -> Result<ExampleParams, ConfigError> {
        if self.model.kind != ModelKind::Example4 {
            return Err(key_error("model.kind", "reproduce-example needs kind = \"example4\""));
        }
        if self.noise.kernel != KernelKind::DotProduct {
            return Err(key_error("noise.kernel", "reproduce-example needs kernel = \"dotprod\""));
        }
        if self.model.a_f == 0.0 {
            return Err(key_error("model.a_f", "must be positive for reproduce-example"));
        }
        let m = &self.model;
        Ok(ExampleParams {
            c: m.c,
            alpha: m.alpha,
            beta: m.beta,
            p: m.p,
            r0: self.noise.r0,
            sigma0: m.sigma0,
            rho: self.noise.rho,
            nu: m.nu,
            amplitude: m.a_f,
        })
    }
}

fn parse_model(s: &Section) -> Result<ModelConfig, ConfigError> {
    let kind = match s.string("kind")? {
        Some("example4") => ModelKind::Example4,
        Some("custom1d") => ModelKind::Custom1d,
        Some(other) => {
            return Err(key_error(
                s.key("kind"),
                format!("expected \"example4\" or \"custom1d\", got \"{other}\""),
            ))
        }
        None => return Err(key_error(s.key("kind"), "missing required key")),
    };
    let p = match s.integer("p")? {
        None => 2,
        Some(p) if (2..=64).contains(&p) => p as u32,
        Some(p) => return Err(key_error(s.key("p"), format!("must be an integer in [2, 64], got {p}"))),
    };
    Ok(ModelConfig {
        kind,
        c: s.positive("c", s.real_or("c", 1.0)?)?,
        alpha: s.non_negative("alpha", s.real_or("alpha", 1.0)?)?,
        a_f: s.non_negative("a_f", s.required_real("a_f")?)?,
        p,
        beta: s.positive("beta", s.required_real("beta")?)?,
        sigma0: s.non_negative("sigma0", s.real_or("sigma0", 1.0)?)?,
        nu: s.positive("nu", s.real_or("nu", 1.0)?)?,
    })
}

fn parse_domain(s: &Section, kind: ModelKind) -> Result<DomainConfig, ConfigError> {
    let expected_dim = match kind {
        ModelKind::Example4 => 2,
        ModelKind::Custom1d => 1,
    };
    let dim = s.count("dim", 1)?.unwrap_or(expected_dim);
    if dim != expected_dim {
        return Err(key_error(
            s.key("dim"),
            format!("model kind needs dim = {expected_dim}, got {dim}"),
        ));
    }
    let nodes = match s.array("nodes")? {
        None => match kind {
            ModelKind::Example4 => vec![200, 400],
            ModelKind::Custom1d => vec![63],
        },
        Some(items) => {
            let nodes = items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 3 => Ok(*i as usize),
                    other => Err(key_error(
                        s.key("nodes"),
                        format!("entries must be integers of at least 3, got {other}"),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if nodes.len() != dim {
                return Err(key_error(s.key("nodes"), format!("needs {dim} entries, got {}", nodes.len())));
            }
            nodes
        }
    };
    let truncation = s.positive("truncation", s.real_or("truncation", 20.0)?)?;
    let extent = match s.array("extent")? {
        None => [0.0, 1.0],
        Some(items) => {
            let values: Vec<f64> = items
                .iter()
                .filter_map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                .collect();
            match values.as_slice() {
                [a, b] if a.is_finite() && b.is_finite() && a < b => [*a, *b],
                _ => {
                    return Err(key_error(
                        s.key("extent"),
                        "expected [lower, upper] with lower < upper",
                    ))
                }
            }
        }
    };
    Ok(DomainConfig {
        dim,
        nodes,
        truncation,
        extent,
    })
}

fn parse_noise(s: &Section, kind: ModelKind, domain: &DomainConfig) -> Result<NoiseConfig, ConfigError> {
    let kernel = match s.string("kernel")? {
        None => match kind {
            ModelKind::Example4 => KernelKind::DotProduct,
            ModelKind::Custom1d => KernelKind::SquaredExponential,
        },
        Some("dotprod") => KernelKind::DotProduct,
        Some("sqexp") => KernelKind::SquaredExponential,
        Some("zero") => KernelKind::Zero,
        Some(other) => {
            return Err(key_error(
                s.key("kernel"),
                format!("expected \"dotprod\", \"sqexp\" or \"zero\", got \"{other}\""),
            ))
        }
    };
    let stride = s.count("coarse_noise_stride", 1)?;
    if let Some(stride) = stride {
        if domain.nodes.iter().all(|&n| stride > n) {
            return Err(key_error(
                s.key("coarse_noise_stride"),
                format!("{stride} exceeds the node count on every axis"),
            ));
        }
    }
    Ok(NoiseConfig {
        kernel,
        r0: s.positive("r0", s.real_or("r0", 1.0)?)?,
        rho: s.positive("rho", s.real_or("rho", 1.0)?)?,
        psd_clip_tol: s.non_negative("psd_clip_tol", s.real_or("psd_clip_tol", DEFAULT_PSD_CLIP_TOL)?)?,
        coarse_noise_stride: stride,
    })
}

fn parse_time(s: &Section) -> Result<TimeConfig, ConfigError> {
    let step = match (s.real("dt")?, s.real("cfl_factor")?) {
        (Some(_), Some(_)) => {
            return Err(key_error(s.key("dt"), "give either time.dt or time.cfl_factor, not both"));
        }
        (Some(dt), None) => StepSize::Fixed(s.positive("dt", dt)?),
        (None, cfl) => {
            let cfl = cfl.unwrap_or(DEFAULT_CFL);
            StepSize::Cfl(s.check("cfl_factor", cfl, cfl > 0.0 && cfl <= 1.0, "in (0, 1]")?)
        }
    };
    let ratio = s.real_or("blowup_threshold_ratio", DEFAULT_BLOWUP_RATIO)?;
    let scheme = match s.string("scheme")? {
        None | Some("verlet") => Scheme::PositionVerlet,
        Some("euler_maruyama") => Scheme::EulerMaruyama,
        Some(other) => {
            return Err(key_error(
                s.key("scheme"),
                format!("expected \"verlet\" or \"euler_maruyama\", got \"{other}\""),
            ))
        }
    };
    Ok(TimeConfig {
        step,
        t_max: s.positive("t_max", s.real_or("t_max", 1.0)?)?,
        record_every: s.count("record_every", 1)?.unwrap_or(1),
        blowup_threshold_ratio: s.check("blowup_threshold_ratio", ratio, ratio > 1.0, "greater than 1")?,
        scheme,
    })
}

fn parse_mc(s: &Section) -> Result<McConfig, ConfigError> {
    Ok(McConfig {
        n_paths: s.count("n_paths", 1)?.unwrap_or(32),
        master_seed: s.count("master_seed", 0)?.unwrap_or(0) as u64,
        max_workers: s.count("max_workers", 0)?.unwrap_or(0),
    })
}
