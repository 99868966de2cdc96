//! Configuration datasets: one simulation per gravity condition, thinned by
//! a greedy epsilon filter, split by whole simulations.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{indexed_columns, read_json, write_json, Table};
use crate::msd::{GravityField, Interval, MassSpringNetwork};
use crate::numerics::norm;
use crate::sim::{random_initial_configuration, simulate_full, SimParams, Trajectory};

/// Keeps a configuration iff it is at least `epsilon` away from every
/// configuration kept before it. Returns the kept indices in order.
pub fn epsilon_filter_indices<Q: AsRef<[f64]>>(configs: &[Q], epsilon: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, q) in configs.iter().enumerate() {
        let q = q.as_ref();
        let far = kept.iter().all(|&k| {
            let d: f64 = configs[k].as_ref().iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            d.sqrt() >= epsilon
        });
        if far {
            kept.push(i);
        }
    }
    kept
}

pub fn epsilon_filter(configs: &[Vec<f64>], epsilon: f64) -> Vec<Vec<f64>> {
    epsilon_filter_indices(configs, epsilon)
        .into_iter()
        .map(|i| configs[i].clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityCondition {
    pub g: f64,
    pub theta: f64,
}

impl GravityCondition {
    pub fn field(&self) -> Result<GravityField> {
        GravityField::new(self.g, self.theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GravityProtocol {
    /// One training simulation per entry.
    pub train_conditions: Vec<GravityCondition>,
    pub n_test: usize,
    pub test_g: Interval,
    pub test_theta: Interval,
    pub seed: u64,
}

impl Default for GravityProtocol {
    fn default() -> Self {
        let c = |g, theta| GravityCondition { g, theta };
        Self {
            train_conditions: vec![
                c(9.81, -3.0 * PI / 4.0),
                c(9.81, -PI / 3.0),
                c(9.81, -PI / 4.0),
                c(9.81, -2.0 * PI / 3.0),
                c(9.81, PI / 2.0),
                c(6.0, -PI / 3.0),
                c(14.0, -2.0 * PI / 3.0),
            ],
            n_test: 28,
            test_g: Interval::new(3.0, 17.0),
            test_theta: Interval::new(-3.0 * PI / 4.0, -PI / 4.0),
            seed: 0,
        }
    }
}

impl GravityProtocol {
    pub fn validate(&self) -> Result<()> {
        let ordered = |i: &Interval| i.min.is_finite() && i.max.is_finite() && i.min <= i.max;
        if self.train_conditions.is_empty() {
            return Err(Error::InvalidConfig("at least one training gravity condition is required".into()));
        }
        if !ordered(&self.test_g) || !ordered(&self.test_theta) || self.test_g.min < 0.0 {
            return Err(Error::InvalidConfig("test gravity ranges must be ordered, with g >= 0".into()));
        }
        for c in &self.train_conditions {
            c.field()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub protocol: GravityProtocol,
    pub simulation: SimParams,
    pub epsilon: f64,
    /// Half-width of the uniform initial perturbation, in metres.
    pub init_amplitude: f64,
    /// Trailing training simulations withheld whole for validation.
    pub valid_simulations: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            protocol: GravityProtocol::default(),
            simulation: SimParams::default(),
            epsilon: 0.1,
            init_amplitude: 0.1,
            valid_simulations: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.simulation.grid()?;
        if !(self.epsilon > 0.0) || !(self.init_amplitude > 0.0) {
            return Err(Error::InvalidConfig("epsilon and init_amplitude must be positive".into()));
        }
        if self.valid_simulations >= self.protocol.train_conditions.len() {
            return Err(Error::InvalidConfig(
                "validation must leave at least one training simulation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationRecord {
    pub id: usize,
    pub split: Split,
    pub g: f64,
    pub theta: f64,
    pub init_seed: u64,
    pub samples: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigurationDataset {
    pub split: Split,
    pub epsilon: f64,
    pub configurations: Vec<Vec<f64>>,
    /// `(simulation id, time)` of every configuration.
    pub sources: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub split: Split,
    pub epsilon: f64,
    pub seed: u64,
    pub simulations: Vec<SimulationRecord>,
    pub sources: Vec<(usize, f64)>,
}

impl ConfigurationDataset {
    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn to_table(&self) -> Table {
        let n = self.configurations.first().map_or(0, Vec::len);
        let mut t = Table::new(indexed_columns("q", n).collect());
        for q in &self.configurations {
            t.push(q.clone());
        }
        t
    }

    /// Mean of `||q - mean(q)||^2` over the set.
    pub fn total_variance(&self) -> f64 {
        let n = self.configurations.first().map_or(0, Vec::len);
        let k = self.len() as f64;
        let mut mean = vec![0.0; n];
        for q in &self.configurations {
            mean.iter_mut().zip(q).for_each(|(m, x)| *m += x / k);
        }
        self.configurations
            .iter()
            .map(|q| q.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / k
    }
}

/// Every simulation of a dataset build, split and thinned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: ConfigurationDataset,
    pub valid: ConfigurationDataset,
    pub test: ConfigurationDataset,
    pub simulations: Vec<SimulationRecord>,
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &ConfigurationDataset {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn trajectories_in(&self, split: Split) -> Vec<&Trajectory> {
        self.simulations
            .iter()
            .zip(&self.trajectories)
            .filter(|(s, _)| s.split == split)
            .map(|(_, t)| t)
            .collect()
    }

    /// Writes `{split}.csv` + `{split}.json` for each split and every
    /// simulation as `sims/sim_{id}.csv` (with sidecar).
    pub fn write(&self, dir: &Path, network_hash: &str) -> Result<()> {
        fs::create_dir_all(dir.join("sims"))?;
        for split in [Split::Train, Split::Valid, Split::Test] {
            let ds = self.split(split);
            ds.to_table().write(&dir.join(format!("{}.csv", split.name())))?;
            let manifest = DatasetManifest {
                split,
                epsilon: ds.epsilon,
                seed: self.seed,
                simulations: self.simulations.iter().filter(|s| s.split == split).cloned().collect(),
                sources: ds.sources.clone(),
            };
            write_json(&dir.join(format!("{}.json", split.name())), &manifest)?;
        }
        for (rec, traj) in self.simulations.iter().zip(&self.trajectories) {
            traj.write(&dir.join("sims").join(format!("sim_{:03}.csv", rec.id)), network_hash)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mut splits = Vec::new();
        let mut simulations = Vec::new();
        let mut seed = 0;
        for split in [Split::Train, Split::Valid, Split::Test] {
            let manifest: DatasetManifest = read_json(&dir.join(format!("{}.json", split.name())))?;
            let table = Table::read(&dir.join(format!("{}.csv", split.name())))?;
            if table.rows.len() != manifest.sources.len() {
                return Err(Error::format("dataset", "manifest sources do not match csv rows"));
            }
            seed = manifest.seed;
            simulations.extend(manifest.simulations);
            splits.push(ConfigurationDataset {
                split,
                epsilon: manifest.epsilon,
                configurations: table.rows,
                sources: manifest.sources,
            });
        }
        simulations.sort_by_key(|s| s.id);
        let trajectories = simulations
            .iter()
            .map(|s| Ok(Trajectory::read(&dir.join("sims").join(format!("sim_{:03}.csv", s.id)))?.0))
            .collect::<Result<_>>()?;
        let mut it = splits.into_iter();
        Ok(Self {
            train: it.next().unwrap(),
            valid: it.next().unwrap(),
            test: it.next().unwrap(),
            simulations,
            trajectories,
            seed,
        })
    }
}

/// Simulates every training and sampled test condition from a random
/// initial configuration at rest and assembles the three splits. Ids:
/// training conditions first in list order, then test conditions.
pub fn build_dataset(net: &MassSpringNetwork, cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let proto = &cfg.protocol;
    let mut rng = ChaCha8Rng::seed_from_u64(proto.seed);
    let n_train = proto.train_conditions.len();
    let mut conditions: Vec<(Split, GravityCondition, u64)> = proto
        .train_conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let split = if i + cfg.valid_simulations >= n_train {
                Split::Valid
            } else {
                Split::Train
            };
            (split, *c, rng.random::<u64>())
        })
        .collect();
    for _ in 0..proto.n_test {
        let g = proto.test_g.sample(&mut rng);
        let theta = proto.test_theta.sample(&mut rng);
        conditions.push((Split::Test, GravityCondition { g, theta }, rng.random::<u64>()));
    }

    let empty = |split| ConfigurationDataset {
        split,
        epsilon: cfg.epsilon,
        configurations: Vec::new(),
        sources: Vec::new(),
    };
    let (mut train, mut valid, mut test) = (empty(Split::Train), empty(Split::Valid), empty(Split::Test));
    let mut simulations = Vec::new();
    let mut trajectories = Vec::new();
    let p0 = vec![0.0; net.dof()];
    for (id, (split, cond, init_seed)) in conditions.into_iter().enumerate() {
        let grav = cond.field()?;
        let q0 = random_initial_configuration(net, init_seed, cfg.init_amplitude)?;
        let traj = simulate_full(net, &grav, &q0, &p0, &cfg.simulation, None)?;
        let qs: Vec<&[f64]> = traj.states.iter().map(|s| s.q.as_slice()).collect();
        let kept = epsilon_filter_indices(&qs, cfg.epsilon);
        let target = match split {
            Split::Train => &mut train,
            Split::Valid => &mut valid,
            Split::Test => &mut test,
        };
        for &k in &kept {
            target.configurations.push(traj.states[k].q.clone());
            target.sources.push((id, traj.states[k].t));
        }
        simulations.push(SimulationRecord {
            id,
            split,
            g: grav.g,
            theta: grav.theta,
            init_seed,
            samples: traj.len(),
            kept: kept.len(),
        });
        trajectories.push(traj);
    }
    Ok(Dataset {
        train,
        valid,
        test,
        simulations,
        trajectories,
        seed: proto.seed,
    })
}

/// Largest pairwise distance violation within one simulation's kept set
/// (`None` if separation holds).
pub fn separation_violation(configs: &[Vec<f64>], epsilon: f64) -> Option<(usize, usize)> {
    for i in 0..configs.len() {
        for j in (i + 1)..configs.len() {
            let d: Vec<f64> = configs[i].iter().zip(&configs[j]).map(|(a, b)| a - b).collect();
            if norm(&d) < epsilon {
                return Some((i, j));
            }
        }
    }
    None
}
