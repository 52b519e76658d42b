//! Experiment configuration, validated against the shipped JSON schema.

use std::path::{Path, PathBuf};

use ltnode::attacks::AttackConfig;
use ltnode::datasets::{gen_foong1d, gen_two_moons};
use ltnode::models::Activation;
use ltnode::optim::SgdConfig;
use ltnode::{Dataset, ElboConfig, ModelSpec, SolverConfig, Task, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    #[serde(default)]
    pub model: ModelOverrides,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub elbo: ElboConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub evaluation: EvalSettings,
    /// End-time samples per prediction.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Architecture fields replacing the task default when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden_dim: Option<usize>,
    pub input_block: Option<Vec<usize>>,
    pub node_block: Option<Vec<usize>>,
    pub head: Option<Vec<usize>>,
    pub inference_block: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Foong1d {
        #[serde(default = "default_foong_n")]
        n: usize,
        #[serde(default = "default_foong_noise")]
        noise_std: f64,
    },
    TwoMoons {
        #[serde(default = "default_moons_n")]
        n: usize,
        #[serde(default = "default_moons_noise")]
        noise_std: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        classification: bool,
        #[serde(default)]
        test_fraction: f64,
    },
}

fn default_foong_n() -> usize {
    1500
}

fn default_foong_noise() -> f64 {
    0.02
}

fn default_moons_n() -> usize {
    600
}

fn default_moons_noise() -> f64 {
    0.1
}

fn default_test_fraction() -> f64 {
    0.25
}

/// Optimizer settings; the ELBO and seed come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: usize,
    pub batch_size: Option<usize>,
    pub theta: SgdConfig,
    pub variational: SgdConfig,
    pub inference: SgdConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            iterations: d.iterations,
            batch_size: d.batch_size,
            theta: d.theta,
            variational: d.variational,
            inference: d.inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// OOD cloud offset in units of the data radius, along the diagonal.
    pub ood_shift_radii: f64,
    /// OOD cloud std in units of the data radius.
    pub ood_scale: f64,
    pub ood_points: usize,
    /// Regression evaluation grid.
    pub grid: (f64, f64),
    pub grid_points: usize,
    /// Open interval without training data.
    pub gap: (f64, f64),
    /// Inputs far from the data whose std is reported separately.
    pub away: Vec<f64>,
    /// Rows per batched solve; fixed so results do not depend on threads.
    pub chunk_rows: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ood_shift_radii: 5.0,
            ood_scale: 0.25,
            ood_points: 500,
            grid: (-2.0, 2.0),
            grid_points: 401,
            gap: (-0.5, 0.5),
            away: vec![-1.5, 1.5],
            chunk_rows: 128,
        }
    }
}

impl ExperimentConfig {
    /// Parse `text`, checking it against [`SCHEMA`] first.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Schema {
            path: "/".into(),
            message: e.to_string(),
        })?;
        validate_against_schema(&value)?;
        serde_json::from_value(value).map_err(|e| CliError::Schema {
            path: "/".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetConfig::Csv { path: p, .. } = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("config serializes")).expect("json");
        format!("{:x}", Sha256::digest(canonical))
    }

    pub fn task(&self) -> Result<Task, CliError> {
        match &self.dataset {
            DatasetConfig::Foong1d { .. } => Ok(Task::Regression),
            DatasetConfig::TwoMoons { .. } => Ok(Task::Classification { classes: 2 }),
            DatasetConfig::Csv { .. } => {
                let ds = self.dataset()?;
                Ok(match ds.num_classes() {
                    Some(classes) => Task::Classification { classes },
                    None => Task::Regression,
                })
            }
        }
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        let ds = match &self.dataset {
            DatasetConfig::Foong1d { n, noise_std } => gen_foong1d(*n, *noise_std, self.seed)?,
            DatasetConfig::TwoMoons {
                n,
                noise_std,
                test_fraction,
            } => gen_two_moons(*n, *noise_std, self.seed)?.with_test_fraction(*test_fraction)?,
            DatasetConfig::Csv {
                path,
                classification,
                test_fraction,
            } => Dataset::read_csv(path, *classification)?.with_test_fraction(*test_fraction)?,
        };
        Ok(ds)
    }

    /// Task default architecture with the overrides applied.
    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec, CliError> {
        let mut spec = match self.task()? {
            Task::Regression if data.dim() == 1 => ModelSpec::regression(self.variant),
            Task::Regression => {
                let mut s = ModelSpec::classifier(data.dim(), 2, self.variant);
                s.task = Task::Regression;
                s.head = vec![1];
                s
            }
            Task::Classification { classes } => ModelSpec::classifier(data.dim(), classes, self.variant),
        };
        let o = &self.model;
        if let Some(v) = o.hidden_dim {
            spec.hidden_dim = v;
        }
        if let Some(v) = &o.input_block {
            spec.input_block = v.clone();
        }
        if let Some(v) = &o.node_block {
            spec.node_block = v.clone();
        }
        if let Some(v) = &o.head {
            spec.head = v.clone();
        }
        if let Some(v) = &o.inference_block {
            spec.inference_block = v.clone();
        }
        if let Some(v) = o.activation {
            spec.activation = v;
        }
        if let Some(v) = &o.solver {
            spec.solver = v.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            elbo: self.elbo.clone(),
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            theta: self.train.theta.clone(),
            variational: self.train.variational.clone(),
            inference: self.train.inference.clone(),
            seed: self.seed,
        }
    }
}

fn validate_against_schema(value: &serde_json::Value) -> Result<(), CliError> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("shipped schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("shipped schema compiles");
    if let Some(err) = validator.iter_errors(value).next() {
        let path = err.instance_path().to_string();
        return Err(CliError::Schema {
            path: if path.is_empty() { "/".into() } else { path },
            message: err.to_string(),
        });
    }
    Ok(())
}
