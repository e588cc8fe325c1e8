//! JSON configuration files. Every file carries `schema_version`; unknown
//! fields are rejected and semantic checks run before any command executes.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tissf_core::plants::{ControllerKind, ControllerVariant};
use tissf_core::sim::ScenarioConfig;
use tissf_core::synthesis::{DomainBox, SamplingMethod, SynthesisConfig};
use tissf_core::tissf::{ClassK, Floors, TuningParams};
use tissf_core::InputSet;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<tissf_core::Error> for ConfigError {
    fn from(e: tissf_core::Error) -> Self {
        ConfigError(e.to_string())
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Reads and parses a config file after checking its schema version.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(ConfigError(format!(
                "{}: unsupported schema_version {v} (expected {SCHEMA_VERSION})",
                path.display()
            )))
        }
        None => return Err(ConfigError(format!("{}: missing schema_version", path.display()))),
    }
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Tuning parameters as written by hand: `lambda` plus exactly one of
/// `eps0` / `ln_eps0`; `lambda_min` defaults to `lambda`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default)]
    pub ln_eps0: Option<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub lambda_min: Option<f64>,
}

impl ParamsSpec {
    pub fn resolve(&self) -> Result<TuningParams, ConfigError> {
        let ln_eps0 = match (self.eps0, self.ln_eps0) {
            (Some(e), None) if e > 0.0 => e.ln(),
            (Some(e), None) => return Err(ConfigError(format!("eps0 must be positive, got {e}"))),
            (None, Some(l)) => l,
            _ => return Err(ConfigError("give exactly one of eps0 and ln_eps0".into())),
        };
        Ok(TuningParams::new(ln_eps0, self.lambda, self.lambda_min.unwrap_or(self.lambda))?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub params_from: PathBuf,
}

/// Parameters inline or taken from a `tuning_result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSource {
    FromFile(ParamsFile),
    Inline(ParamsSpec),
}

/// The `params` object of a previously written tuning result.
#[derive(Deserialize)]
struct TuningFile {
    result: TuningFileResult,
}

#[derive(Deserialize)]
struct TuningFileResult {
    params: TuningParams,
}

impl ParamsSource {
    /// Relative `params_from` paths are taken relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<TuningParams, ConfigError> {
        match self {
            ParamsSource::Inline(p) => p.resolve(),
            ParamsSource::FromFile(ParamsFile { params_from }) => {
                let path = base.join(params_from);
                let f: TuningFile = load(&path)?;
                let p = f.result.params;
                Ok(TuningParams::new(p.ln_eps0, p.lambda, p.lambda_min)?)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[allow(dead_code)] // checked by `load`
    pub schema_version: u32,
    pub plant: String,
    #[serde(default)]
    pub alpha: ClassK,
    /// Defaults to the case study's domain.
    #[serde(default)]
    pub domain: Option<DomainBox>,
    /// Defaults to the case study's input set.
    #[serde(default)]
    pub input_set: Option<InputSet>,
    pub synthesis: SynthesisConfig,
}

impl TuneConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synthesis.validate()?;
        self.alpha.validate()?;
        if let Some(d) = &self.domain {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineController {
    pub kind: ControllerKind,
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default)]
    pub ln_eps0: Option<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub lambda_min: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileController {
    pub kind: ControllerKind,
    pub params_from: PathBuf,
}

/// `{"kind": ..., <params>}` with inline parameters or `params_from`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ControllerSpec {
    FromFile(FileController),
    Inline(InlineController),
}

impl ControllerSpec {
    pub fn resolve(&self, base: &Path) -> Result<ControllerVariant, ConfigError> {
        let (kind, source) = match self {
            ControllerSpec::FromFile(f) => (
                f.kind,
                ParamsSource::FromFile(ParamsFile {
                    params_from: f.params_from.clone(),
                }),
            ),
            ControllerSpec::Inline(c) => (
                c.kind,
                ParamsSource::Inline(ParamsSpec {
                    eps0: c.eps0,
                    ln_eps0: c.ln_eps0,
                    lambda: c.lambda,
                    lambda_min: c.lambda_min,
                }),
            ),
        };
        Ok(ControllerVariant::from_kind(kind, source.resolve(base)?))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub plant: String,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub alpha: ClassK,
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[allow(dead_code)] // checked by `load`
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioSpec>,
}

impl SimulateConfig {
    /// Resolves every scenario; names must be unique file-name-safe tokens.
    pub fn resolve(&self, base: &Path) -> Result<Vec<(String, ScenarioConfig)>, ConfigError> {
        if self.scenarios.is_empty() {
            return Err(ConfigError("no scenarios given".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.scenarios {
            let safe = !s.name.is_empty()
                && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
            if !safe {
                return Err(ConfigError(format!("scenario name {:?} must be [A-Za-z0-9_.-]+", s.name)));
            }
            if !names.insert(s.name.clone()) {
                return Err(ConfigError(format!("duplicate scenario name {:?}", s.name)));
            }
            let cfg = ScenarioConfig {
                plant: s.plant.clone(),
                controller: s.controller.resolve(base)?,
                x0: s.x0.clone(),
                t_end: s.t_end,
                dt: s.dt.unwrap_or(1e-3),
                alpha: s.alpha,
                record_every: s.record_every.unwrap_or(1),
            };
            cfg.resolve().map_err(|e| ConfigError(format!("scenario {:?}: {e}", s.name)))?;
            out.push((s.name.clone(), cfg));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[allow(dead_code)] // checked by `load`
    pub schema_version: u32,
    pub plant: String,
    #[serde(default)]
    pub alpha: ClassK,
    #[serde(default)]
    pub domain: Option<DomainBox>,
    #[serde(default)]
    pub input_set: Option<InputSet>,
    pub params: ParamsSource,
    pub sampling: SamplingMethod,
    #[serde(default)]
    pub floors: Floors,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportConfig {
    #[allow(dead_code)] // checked by `load`
    pub schema_version: u32,
    pub set: InputSet,
    pub directions: Vec<Vec<f64>>,
}
