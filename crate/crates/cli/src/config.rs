//! The run configuration document. Every section is optional and falls back
//! to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use hamroc_core::autoencoder::{GridSpec, TrainConfig};
use hamroc_core::control::ControlConfig;
use hamroc_core::dataset::DatasetConfig;
use hamroc_core::eval::{LATENT_FRACTIONS, NOISE_SIGMAS};
use hamroc_core::io::{sha256_hex, to_json_string};
use hamroc_core::msd::{GeneratorConfig, GravityField};
use hamroc_core::sim::SimParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub simulation: SimulationSection,
    pub dataset: DatasetConfig,
    pub training: TrainingSection,
    pub reduction: ReductionSection,
    pub control: ControlConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::desk_scale(),
            simulation: SimulationSection::default(),
            dataset: DatasetConfig::default(),
            training: TrainingSection::default(),
            reduction: ReductionSection::default(),
            control: ControlConfig {
                alpha: 100.0,
                beta: 20.0,
                ..ControlConfig::default()
            },
            eval: EvalSection::default(),
        }
    }
}

/// A single forward simulation from a perturbed rest state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub duration: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub g: f64,
    pub theta: f64,
    pub init_seed: u64,
    /// Half-width of the uniform initial perturbation, m.
    pub init_amplitude: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let p = SimParams::default();
        Self {
            duration: p.duration,
            dt: p.dt,
            sample_dt: p.sample_dt,
            g: 9.81,
            theta: -std::f64::consts::FRAC_PI_2,
            init_seed: 0,
            init_amplitude: 0.1,
        }
    }
}

impl SimulationSection {
    pub fn params(&self) -> SimParams {
        SimParams {
            duration: self.duration,
            dt: self.dt,
            sample_dt: self.sample_dt,
        }
    }

    pub fn gravity(&self) -> hamroc_core::Result<GravityField> {
        GravityField::new(self.g, self.theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub latent_dim: usize,
    /// Explicit encoder hidden widths; proportional to the input when absent.
    pub hidden: Option<Vec<usize>>,
    /// Run the hyperparameter grid and keep the best validation loss.
    pub grid_search: bool,
    pub hyper: TrainConfig,
    pub grid: GridSpec,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            latent_dim: 3,
            hidden: None,
            grid_search: false,
            hyper: TrainConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

/// Latent integration settings; `None` reuses the simulation value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSection {
    pub dt: Option<f64>,
    pub sample_dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Name used as the `{system}` prefix of report files.
    pub system: String,
    /// Test trajectories scored, taken in dataset order.
    pub n_trajectories: usize,
    pub latent_sizes: Vec<usize>,
    pub noise_sigmas: Vec<f64>,
    pub noise_seeds: Vec<u64>,
    pub latent_fractions: Vec<f64>,
    /// Test configurations used as bases of the latent sweep.
    pub latent_bases: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            system: "desk".into(),
            n_trajectories: 10,
            latent_sizes: vec![1, 2, 3, 4, 5],
            noise_sigmas: NOISE_SIGMAS.to_vec(),
            noise_seeds: vec![0, 1, 2, 3, 4],
            latent_fractions: LATENT_FRACTIONS.to_vec(),
            latent_bases: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(to_json_string(self).expect("config serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Resolves relative paths against the workspace root.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}
