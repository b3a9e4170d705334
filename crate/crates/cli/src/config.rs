//! Run configuration: a strict JSON document describing the dataset, the
//! fleet, the integration and selection settings, the grid and the seeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use coopal_core::dataset::{self, CsvOptions};
use coopal_core::integration::IntegrationParams;
use coopal_core::simulator::{EgoChoice, ExperimentConfig, ProfileSpec};
use coopal_core::{
    ClassifierKind, Dataset, IntegrationMethod, LabelColumn, LoadModel, Mode, SelectionPolicy,
};
use coopal_core::{WaWeights, WmvVariant};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<LabelColumn>,
        #[serde(default = "yes")]
        header: bool,
        /// Min-max scale every feature to [0, 1] after loading.
        #[serde(default)]
        scale: bool,
    },
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        /// Fixed dataset seed; when absent each run seed draws its own dataset.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn yes() -> bool {
    true
}
fn default_classes() -> usize {
    4
}
fn default_features() -> usize {
    18
}
fn default_per_class() -> usize {
    200
}
fn default_spread() -> f64 {
    2.0
}

/// Which cells to run. Missing lists fall back to the single
/// `mode` / `method` / `policy` of the config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub modes: Option<Vec<Mode>>,
    #[serde(default)]
    pub methods: Option<Vec<IntegrationMethod>>,
    #[serde(default)]
    pub policies: Option<Vec<SelectionPolicy>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub modes: Vec<Mode>,
    pub methods: Vec<IntegrationMethod>,
    pub policies: Vec<SelectionPolicy>,
}

impl Grid {
    pub fn cells(&self) -> Vec<(Mode, IntegrationMethod, SelectionPolicy)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &method in &self.methods {
                for &policy in &self.policies {
                    out.push((mode, method, policy));
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty() || self.methods.is_empty() || self.policies.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_offline_size")]
    pub offline_size: usize,
    /// Test set size; defaults to 20% of the dataset.
    #[serde(default)]
    pub test_size: Option<usize>,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<ProfileSpec>,
    #[serde(default)]
    pub ego: EgoChoice,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_method")]
    pub method: IntegrationMethod,
    #[serde(default = "default_policy")]
    pub policy: SelectionPolicy,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "half")]
    pub a: f64,
    #[serde(default = "half")]
    pub b: f64,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default)]
    pub wmv_variant: WmvVariant,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "one")]
    pub view_noise_scale: f64,
    #[serde(default = "default_staleness")]
    pub staleness_noise: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub events: Option<usize>,
    #[serde(default)]
    pub load: LoadModel,
    pub seeds: Vec<u64>,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_offline_size() -> usize {
    100
}
fn default_profiles() -> Vec<ProfileSpec> {
    ClassifierKind::default_profiles()
        .into_iter()
        .map(Into::into)
        .collect()
}
fn default_neighbors() -> usize {
    4
}
fn default_mode() -> Mode {
    Mode::Samples
}
fn default_method() -> IntegrationMethod {
    IntegrationMethod::Wa
}
fn default_policy() -> SelectionPolicy {
    SelectionPolicy::Qds
}
fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn default_delta_max() -> f64 {
    2.0
}
fn default_staleness() -> f64 {
    ExperimentConfig::default().staleness_noise
}
fn default_alpha() -> f64 {
    0.95
}

impl RunConfig {
    /// Parses JSON text. Unknown fields are rejected and errors name the field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::Config(e.inner().to_string())
            } else {
                CliError::Config(format!("{path}: {}", e.inner()))
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if let DatasetSource::Synthetic {
            classes,
            features,
            per_class,
            spread,
            ..
        } = &self.dataset
        {
            if *classes < 2 {
                return Err(CliError::Config("dataset.classes must be >= 2".into()));
            }
            if *features < 1 {
                return Err(CliError::Config("dataset.features must be >= 1".into()));
            }
            if *per_class < 1 {
                return Err(CliError::Config("dataset.per_class must be >= 1".into()));
            }
            if !(spread.is_finite() && *spread > 0.0) {
                return Err(CliError::Config("dataset.spread must be > 0".into()));
            }
        }
        if let Some(grid) = &self.grid {
            if self.resolve_grid_from(grid).is_empty() {
                return Err(CliError::Config(
                    "grid must contain at least one cell".into(),
                ));
            }
        }
        self.experiment().and_then(|e| {
            e.validate()
                .map_err(|err| CliError::Config(strip_prefix(err)))
        })
    }

    /// The core experiment settings this config describes.
    pub fn experiment(&self) -> CliResult<ExperimentConfig> {
        let weights = WaWeights::new(self.a, self.b).map_err(|_| {
            CliError::Config(format!(
                "a, b must be >= 0 with a + b > 0 (got a = {}, b = {})",
                self.a, self.b
            ))
        })?;
        Ok(ExperimentConfig {
            offline_size: self.offline_size,
            test_size: self.test_size,
            profiles: self.profiles.clone(),
            ego: self.ego,
            neighbors: self.neighbors,
            integration: IntegrationParams {
                weights,
                decay: self.decay,
                wmv_variant: self.wmv_variant,
            },
            delta_max: self.delta_max,
            view_noise_scale: self.view_noise_scale,
            staleness_noise: self.staleness_noise,
            alpha: self.alpha,
            max_steps: self.max_steps,
            load: self.load,
            events: self.events,
        })
    }

    pub fn grid(&self) -> Grid {
        match &self.grid {
            Some(g) => self.resolve_grid_from(g),
            None => Grid {
                modes: vec![self.mode],
                methods: vec![self.method],
                policies: vec![self.policy],
            },
        }
    }

    fn resolve_grid_from(&self, g: &GridSpec) -> Grid {
        Grid {
            modes: g.modes.clone().unwrap_or_else(|| vec![self.mode]),
            methods: g.methods.clone().unwrap_or_else(|| vec![self.method]),
            policies: g.policies.clone().unwrap_or_else(|| vec![self.policy]),
        }
    }

    /// The dataset used for run seed `seed`.
    pub fn load_dataset(&self, seed: u64) -> CliResult<Dataset> {
        match &self.dataset {
            DatasetSource::Csv {
                path,
                label_column,
                header,
                scale,
            } => {
                let options = CsvOptions {
                    has_header: *header,
                    label_column: label_column.clone(),
                };
                let ds = dataset::load_csv(path, &options).map_err(|e| match e {
                    coopal_core::Error::Io(source) => CliError::io(path, source),
                    other => CliError::Core(other),
                })?;
                Ok(if *scale { ds.min_max_scaled() } else { ds })
            }
            DatasetSource::Synthetic {
                classes,
                features,
                per_class,
                spread,
                seed: fixed,
            } => Ok(dataset::synthesize(
                *classes,
                *features,
                *per_class,
                *spread,
                fixed.unwrap_or(seed),
            )?),
        }
    }

    /// True when every run seed shares one dataset.
    pub fn shared_dataset(&self) -> bool {
        !matches!(self.dataset, DatasetSource::Synthetic { seed: None, .. })
    }
}

fn strip_prefix(err: coopal_core::Error) -> String {
    match err {
        coopal_core::Error::Validation(m) => m,
        other => other.to_string(),
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> CliResult<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    RunConfig::from_json(&text)
}
