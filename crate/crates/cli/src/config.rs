//! Run configuration: a TOML document with one table per component.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tlasdi::active::ActiveConfig;
use tlasdi::autoencoder::AutoencoderConfig;
use tlasdi::integrate::Scheme;
use tlasdi::losses::LossWeights;
use tlasdi::pgfinn::PGFinnConfig;
use tlasdi::systems::{ParamDomain, System};
use tlasdi::training::TrainSchedule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: TOML syntax error: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid override `{0}`: expected key.path=value")]
    Override(String),
    #[error("at `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// A set of parameter points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSet {
    /// Tensor grid with `counts[i]` equispaced values along axis `i`. A
    /// single count applies to every axis.
    Grid { counts: Vec<usize> },
    Corners,
    /// Center of the parameter domain.
    Center,
    Points { values: Vec<Vec<f64>> },
    /// Uniform draws from the domain.
    Random { count: usize, seed: u64 },
}

impl PointSet {
    pub fn resolve(&self, domain: &ParamDomain) -> tlasdi::Result<Vec<Vec<f64>>> {
        match self {
            PointSet::Grid { counts } if counts.len() == 1 => domain.grid(&vec![counts[0]; domain.dim()]),
            PointSet::Grid { counts } => domain.grid(counts),
            PointSet::Corners => Ok(domain.corners()),
            PointSet::Center => Ok(vec![domain.lower.iter().zip(&domain.upper).map(|(a, b)| 0.5 * (a + b)).collect()]),
            PointSet::Points { values } => Ok(values.clone()),
            PointSet::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count).map(|_| domain.sample(&mut rng)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training parameter points for `gen-data` and `train`.
    pub train: PointSet,
    /// Previously generated dataset header; generated afresh when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    /// Use the system's closed-form energy and entropy instead of networks.
    pub known_potentials: bool,
    /// Map the parameter domain onto `[-1, 1]` before the networks.
    pub normalize_params: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            known_potentials: false,
            normalize_params: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveSection {
    /// Starting parameter points.
    pub initial: PointSet,
    #[serde(default)]
    pub options: ActiveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Latent integrator for every rollout.
    pub scheme: Scheme,
    /// Points for `eval-map`.
    pub test: PointSet,
    /// Points for `indicator-corr`.
    pub held_out: PointSet,
    /// Points for `thermo`, `spectrum`, `bound` and `timing`.
    pub probe: PointSet,
    /// Residual sparsification of the error indicator.
    pub stride: usize,
    pub refine: usize,
    /// Latent step and length of `thermo` rollouts; data grid when unset.
    pub thermo_dt: Option<f64>,
    pub thermo_steps: Option<usize>,
    pub timing_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scheme: Scheme::ForwardEuler,
            test: PointSet::Grid { counts: vec![5] },
            held_out: PointSet::Random { count: 16, seed: 2024 },
            probe: PointSet::Center,
            stride: 10,
            refine: 1,
            thermo_dt: None,
            thermo_steps: None,
            timing_repeats: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: System,
    pub domain: ParamDomain,
    pub data: DataConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub pgfinn: PGFinnConfig,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub active: Option<ActiveSection>,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `a.b.c=value`, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_table(doc: toml::Table) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| ConfigError::Field {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies overrides and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path, overrides)
    }

    pub fn parse(text: &str, origin: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |path: &str, e: tlasdi::Error| ConfigError::Field {
            path: path.into(),
            message: e.to_string(),
        };
        self.system.validate().map_err(|e| field("system", e))?;
        self.domain.validate().map_err(|e| field("domain", e))?;
        if self.domain.dim() != self.system.param_dim() {
            return Err(ConfigError::Field {
                path: "domain".into(),
                message: format!(
                    "domain has {} dimensions but system `{}` is parameterized by {:?}",
                    self.domain.dim(),
                    self.system.tag(),
                    self.system.param_names()
                ),
            });
        }
        self.autoencoder.validate().map_err(|e| field("autoencoder", e))?;
        self.pgfinn.validate().map_err(|e| field("pgfinn", e))?;
        self.loss.validate().map_err(|e| field("loss", e))?;
        self.schedule.validate().map_err(|e| field("schedule", e))?;
        if let Some(a) = &self.active {
            a.options.validate().map_err(|e| field("active.options", e))?;
        }
        let mismatch = |path: &str, what: &str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(ConfigError::Field {
                    path: path.into(),
                    message: format!("{what} must be {want}, got {got}"),
                })
            }
        };
        mismatch("autoencoder.full_dim", "full dimension", self.system.state_dim(), self.autoencoder.full_dim)?;
        mismatch("pgfinn.latent_dim", "latent dimension", self.autoencoder.latent_dim, self.pgfinn.latent_dim)?;
        mismatch("pgfinn.param_dim", "parameter dimension", self.system.param_dim(), self.pgfinn.param_dim)?;
        if self.model.known_potentials && !self.autoencoder.identity {
            return Err(ConfigError::Field {
                path: "model.known_potentials".into(),
                message: "closed-form potentials act on the full state and need `autoencoder.identity = true`".into(),
            });
        }
        if self.model.known_potentials && self.loss.scheme != Scheme::ForwardEuler {
            return Err(ConfigError::Field {
                path: "loss.scheme".into(),
                message: "closed-form potentials train only with the forward-Euler integration loss".into(),
            });
        }
        if self.eval.stride == 0 || self.eval.refine == 0 || self.eval.timing_repeats == 0 {
            return Err(ConfigError::Invalid("eval.stride, eval.refine and eval.timing_repeats must be positive".into()));
        }
        for (path, set) in [
            ("data.train", Some(&self.data.train)),
            ("eval.test", Some(&self.eval.test)),
            ("eval.held_out", Some(&self.eval.held_out)),
            ("eval.probe", Some(&self.eval.probe)),
            ("active.initial", self.active.as_ref().map(|a| &a.initial)),
        ] {
            let Some(set) = set else { continue };
            let pts = set.resolve(&self.domain).map_err(|e| field(path, e))?;
            if pts.is_empty() {
                return Err(ConfigError::Field {
                    path: path.into(),
                    message: "point set is empty".into(),
                });
            }
            if let Some(p) = pts.iter().find(|p| p.len() != self.domain.dim()) {
                return Err(ConfigError::Field {
                    path: path.into(),
                    message: format!("point {p:?} does not have {} coordinates", self.domain.dim()),
                });
            }
        }
        Ok(())
    }

    /// The model configuration with the parameter map filled in.
    pub fn pgfinn_config(&self) -> PGFinnConfig {
        let mut c = self.pgfinn.clone();
        if self.model.normalize_params && c.param_lower.is_empty() {
            c.param_lower = self.domain.lower.clone();
            c.param_upper = self.domain.upper.clone();
        }
        c
    }
}
