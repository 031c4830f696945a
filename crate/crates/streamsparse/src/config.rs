//! JSON experiment configuration.
//!
//! Every estimator constant has a default, so a config naming only the
//! family, the stream shape and the output directory is enough to run.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use streamsparse_core::linalg::Matrix;
use streamsparse_core::{
    Error as CoreError, ErrorPolicy, Family, GlmFamily, IhtConfig, LambdaInit, RenewableConfig,
    StartMode, StepRule,
};

use crate::sim::{
    BatchSizes, Covariance, DesignSpec, EntryLaw, MagnitudeRule, SimError, StreamSpec, SupportRule,
    TruthSpec,
};

/// A configuration problem. `key` is the dotted path of the offending entry.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Gaussian,
    Logistic,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Adiht,
    Renewable,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceName {
    Identity,
    Ar1,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryLawName {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportName {
    First,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeName {
    Constant,
    Uniform,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepName {
    Fixed,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartName {
    Cold,
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    Abort,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub p: usize,
    pub s: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub num_batches: Option<usize>,
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceName,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_entry_law")]
    pub entry_law: EntryLawName,
    #[serde(default = "default_support")]
    pub support: SupportName,
    #[serde(default = "default_magnitude")]
    pub magnitude: MagnitudeName,
    #[serde(default = "default_signal")]
    pub signal: f64,
    #[serde(default)]
    pub signal_low: Option<f64>,
    #[serde(default)]
    pub signal_high: Option<f64>,
}

fn default_covariance() -> CovarianceName {
    CovarianceName::Identity
}
fn default_entry_law() -> EntryLawName {
    EntryLawName::Gaussian
}
fn default_support() -> SupportName {
    SupportName::Random
}
fn default_magnitude() -> MagnitudeName {
    MagnitudeName::Constant
}
fn default_signal() -> f64 {
    1.0
}

/// AD-IHT constants; missing keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdihtSection {
    pub kappa: Option<f64>,
    pub eta_const: Option<f64>,
    pub step_rule: Option<StepName>,
    pub calibration_coords: Option<usize>,
    pub power_iters: Option<usize>,
    pub refine_const: Option<f64>,
    pub lambda_floor_const: Option<f64>,
    pub lambda_init: Option<f64>,
    pub start: Option<StartName>,
    pub max_iters_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableSection {
    pub lambda_const: Option<f64>,
    pub inner_iters: Option<usize>,
    pub step: Option<f64>,
    pub power_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub family: FamilyName,
    #[serde(default = "default_dispersion")]
    pub dispersion: f64,
    #[serde(default)]
    pub stream: Option<StreamSection>,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default)]
    pub adiht: AdihtSection,
    #[serde(default)]
    pub renewable: RenewableSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
    #[serde(default)]
    pub compute_oracle: bool,
    #[serde(default)]
    pub checkpoint_after: Option<usize>,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_on_error")]
    pub on_error: OnError,
}

fn default_dispersion() -> f64 {
    1.0
}
fn default_method() -> MethodChoice {
    MethodChoice::Adiht
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_on_error() -> OnError {
    OnError::Abort
}

/// Which estimator a job runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Adiht,
    Renewable,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adiht => "adiht",
            Method::Renewable => "renewable",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "adiht" => Some(Method::Adiht),
            "renewable" => Some(Method::Renewable),
            _ => None,
        }
    }
}

/// Shape of the simulated stream; combined with a seed it gives a [`StreamSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTemplate {
    pub design: DesignSpec,
    pub truth: TruthSpec,
    pub batch_sizes: BatchSizes,
    pub num_batches: usize,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: GlmFamily,
    pub stream: Option<StreamTemplate>,
    pub methods: Vec<Method>,
    pub adiht: IhtConfig,
    pub renewable: RenewableConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
    pub compute_oracle: bool,
    pub checkpoint_after: Option<usize>,
    pub record_timing: bool,
    pub on_error: ErrorPolicy,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Parse {
                key,
                message: e.into_inner().to_string(),
            }
        })?;
        raw.validate()
    }

    /// The stream for one seed. Errors if the config has no `stream` section.
    pub fn stream_spec(&self, seed: u64) -> Result<StreamSpec, ConfigError> {
        let t = self
            .stream
            .as_ref()
            .ok_or_else(|| invalid("stream", "section is required for simulation"))?;
        Ok(StreamSpec {
            design: t.design.clone(),
            truth: t.truth.clone(),
            family: self.family,
            batch_sizes: t.batch_sizes.clone(),
            num_batches: t.num_batches,
            seed,
        })
    }
}

fn core_key(prefix: &str, err: CoreError) -> ConfigError {
    match err {
        CoreError::InvalidParameter { name, reason } => invalid(format!("{prefix}.{name}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

fn sim_key(prefix: &str, err: SimError) -> ConfigError {
    match err {
        SimError::InvalidSpec { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

impl RawConfig {
    pub fn validate(self) -> Result<ExperimentConfig, ConfigError> {
        let kind = match self.family {
            FamilyName::Gaussian => Family::Gaussian,
            FamilyName::Logistic => Family::Logistic,
            FamilyName::Poisson => Family::Poisson,
        };
        let family = GlmFamily::new(kind, self.dispersion).map_err(|e| invalid("dispersion", e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        if self.checkpoint_after == Some(usize::MAX) {
            return Err(invalid("checkpoint_after", "out of range"));
        }
        let stream = self.stream.map(build_stream).transpose()?;
        if let (Some(k), Some(t)) = (self.checkpoint_after, &stream) {
            if k > t.num_batches {
                return Err(invalid(
                    "checkpoint_after",
                    format!("must not exceed the {} batches in the stream", t.num_batches),
                ));
            }
        }
        let adiht = build_adiht(&self.adiht)?;
        let renewable = build_renewable(&self.renewable)?;
        let methods = match self.method {
            MethodChoice::Adiht => vec![Method::Adiht],
            MethodChoice::Renewable => vec![Method::Renewable],
            MethodChoice::Both => vec![Method::Adiht, Method::Renewable],
        };
        Ok(ExperimentConfig {
            family,
            stream,
            methods,
            adiht,
            renewable,
            seeds: self.seeds,
            output_dir: self.output_dir,
            emit_svg: self.emit_svg,
            compute_oracle: self.compute_oracle,
            checkpoint_after: self.checkpoint_after,
            record_timing: self.record_timing,
            on_error: match self.on_error {
                OnError::Abort => ErrorPolicy::Abort,
                OnError::Skip => ErrorPolicy::Skip,
            },
        })
    }
}

fn build_stream(s: StreamSection) -> Result<StreamTemplate, ConfigError> {
    let covariance = match s.covariance {
        CovarianceName::Identity => Covariance::Identity,
        CovarianceName::Ar1 => Covariance::Ar1 {
            rho: s.rho.ok_or_else(|| invalid("stream.rho", "required for ar1 covariance"))?,
        },
        CovarianceName::User => {
            let rows = s
                .matrix
                .ok_or_else(|| invalid("stream.matrix", "required for user covariance"))?;
            if rows.len() != s.p || rows.iter().any(|r| r.len() != s.p) {
                return Err(invalid("stream.matrix", format!("must be {0} x {0}", s.p)));
            }
            Covariance::User(
                Matrix::from_row_major(s.p, s.p, rows.concat())
                    .ok_or_else(|| invalid("stream.matrix", "shape does not match p"))?,
            )
        }
    };
    let entry_law = match s.entry_law {
        EntryLawName::Gaussian => EntryLaw::GaussianStd,
        EntryLawName::Rademacher => EntryLaw::RademacherStd,
    };
    let design = DesignSpec::new(s.p, covariance, entry_law).map_err(|e| sim_key("stream", e))?;
    let magnitude = match s.magnitude {
        MagnitudeName::Constant => MagnitudeRule::Constant(s.signal),
        MagnitudeName::Signed => MagnitudeRule::SignedConstant(s.signal),
        MagnitudeName::Uniform => MagnitudeRule::UniformRange(
            s.signal_low
                .ok_or_else(|| invalid("stream.signal_low", "required for uniform magnitudes"))?,
            s.signal_high
                .ok_or_else(|| invalid("stream.signal_high", "required for uniform magnitudes"))?,
        ),
    };
    let truth = TruthSpec {
        p: s.p,
        s: s.s,
        support_rule: match s.support {
            SupportName::First => SupportRule::FirstS,
            SupportName::Random => SupportRule::RandomS,
        },
        magnitude,
    };
    truth.validate().map_err(|e| sim_key("stream", e))?;
    let (batch_sizes, num_batches) = match (s.batch_size, s.batch_sizes) {
        (Some(_), Some(_)) => {
            return Err(invalid("stream.batch_sizes", "give either batch_size or batch_sizes, not both"))
        }
        (Some(n), None) => {
            let b = s
                .num_batches
                .ok_or_else(|| invalid("stream.num_batches", "required with batch_size"))?;
            (BatchSizes::Constant(n), b)
        }
        (None, Some(v)) => {
            if s.num_batches.is_some_and(|b| b != v.len()) {
                return Err(invalid("stream.num_batches", "disagrees with the length of batch_sizes"));
            }
            let b = v.len();
            (BatchSizes::Schedule(v), b)
        }
        (None, None) => return Err(invalid("stream.batch_size", "batch_size or batch_sizes is required")),
    };
    if num_batches == 0 {
        return Err(invalid("stream.num_batches", "must be at least 1"));
    }
    let template = StreamTemplate {
        design,
        truth,
        batch_sizes,
        num_batches,
    };
    // full validation against a throwaway seed
    StreamSpec {
        design: template.design.clone(),
        truth: template.truth.clone(),
        family: GlmFamily::gaussian(1.0),
        batch_sizes: template.batch_sizes.clone(),
        num_batches,
        seed: 0,
    }
    .validate()
    .map_err(|e| sim_key("stream", e))?;
    Ok(template)
}

fn build_adiht(a: &AdihtSection) -> Result<IhtConfig, ConfigError> {
    let mut cfg = IhtConfig::default();
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.eta_const {
        cfg.eta_const = v;
    }
    let (default_coords, default_iters) = match cfg.step_rule {
        StepRule::Calibrated {
            coords,
            power_iters,
        } => (coords, power_iters),
        StepRule::Fixed => (20, 30),
    };
    let step = a.step_rule.unwrap_or(match cfg.step_rule {
        StepRule::Fixed => StepName::Fixed,
        StepRule::Calibrated { .. } => StepName::Calibrated,
    });
    cfg.step_rule = match step {
        StepName::Fixed => {
            if a.calibration_coords.is_some() || a.power_iters.is_some() {
                return Err(invalid(
                    "adiht.step_rule",
                    "calibration_coords and power_iters need step_rule \"calibrated\"",
                ));
            }
            StepRule::Fixed
        }
        StepName::Calibrated => StepRule::Calibrated {
            coords: a.calibration_coords.unwrap_or(default_coords),
            power_iters: a.power_iters.unwrap_or(default_iters),
        },
    };
    if let Some(v) = a.refine_const {
        cfg.refine_const = v;
    }
    if let Some(v) = a.lambda_floor_const {
        cfg.lambda_floor_const = v;
    }
    if let Some(v) = a.lambda_init {
        cfg.lambda_init = LambdaInit::Value(v);
    }
    if let Some(s) = a.start {
        cfg.start_mode = match s {
            StartName::Cold => StartMode::Cold,
            StartName::Warm => StartMode::Warm,
        };
    }
    cfg.max_iters_cap = a.max_iters_cap.or(cfg.max_iters_cap);
    cfg.validate().map_err(|e| match e {
        CoreError::InvalidParameter { name: "step_rule", reason } => {
            invalid("adiht.calibration_coords", reason)
        }
        other => core_key("adiht", other),
    })?;
    Ok(cfg)
}

fn build_renewable(r: &RenewableSection) -> Result<RenewableConfig, ConfigError> {
    let mut cfg = RenewableConfig::default();
    if let Some(v) = r.lambda_const {
        cfg.lambda_const = v;
    }
    if let Some(v) = r.inner_iters {
        cfg.inner_iters = v;
    }
    if r.step.is_some() {
        cfg.step = r.step;
    }
    if let Some(v) = r.power_iters {
        cfg.power_iters = v;
    }
    cfg.validate().map_err(|e| core_key("renewable", e))?;
    Ok(cfg)
}
