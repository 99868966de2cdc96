//! Experiment drivers: pointwise and compressed reconstruction error, the
//! latent-size sweep, noise robustness and latent-variable alteration.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{grid_search, mean_reconstruction_loss, Architecture, GridRun, GridSpec, MlpAutoencoder, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{write_json, Table};
use crate::msd::MassSpringNetwork;
use crate::numerics::stats::{mean, median, percentile, spearman};
use crate::numerics::norm;
use crate::reduction::{pointwise_compress, reconstruct, simulate_reduced, ReducedSystem};
use crate::sim::{SimParams, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Pointwise,
    Compressed,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Pointwise => "pointwise",
            EvalMode::Compressed => "compressed",
        }
    }
}

/// Errors of one trajectory at every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepErrors {
    /// `||q~ - q||^2`
    pub q: Vec<f64>,
    /// `||q~' - q'||^2`
    pub q_dot: Vec<f64>,
    /// `|eta - H|`
    pub energy: Vec<f64>,
    /// `||q~ - q|| / ||q - q_rest||`
    pub relative: Vec<f64>,
}

/// 20th percentile, median and 80th percentile per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub p20: Vec<f64>,
    pub median: Vec<f64>,
    pub p80: Vec<f64>,
}

impl Bands {
    fn across(series: &[&Vec<f64>], scale: f64) -> Self {
        let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
        let col = |k: usize| series.iter().map(|s| s[k] * scale).collect::<Vec<_>>();
        Self {
            p20: (0..len).map(|k| percentile(&col(k), 20.0)).collect(),
            median: (0..len).map(|k| median(&col(k))).collect(),
            p80: (0..len).map(|k| percentile(&col(k), 80.0)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub median_mse_q: f64,
    pub median_mse_q_per_dof: f64,
    pub median_mse_q_dot: f64,
    pub median_energy_error: f64,
    /// Time- and trajectory-averaged `||q~ - q|| / ||q - q_rest||`.
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub dof: usize,
    pub t: Vec<f64>,
    pub mse_q: Bands,
    pub mse_q_per_dof: Bands,
    pub mse_q_dot: Bands,
    pub energy_error: Bands,
    pub summary: EvalSummary,
    pub trajectories: Vec<StepErrors>,
}

impl EvalReport {
    fn assemble(mode: EvalMode, dof: usize, t: Vec<f64>, trajectories: Vec<StepErrors>) -> Self {
        let pick = |f: fn(&StepErrors) -> &Vec<f64>| trajectories.iter().map(f).collect::<Vec<_>>();
        let flat = |f: fn(&StepErrors) -> &Vec<f64>| trajectories.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>();
        let rel: Vec<f64> = flat(|s| &s.relative).into_iter().filter(|x| x.is_finite()).collect();
        let q_all = flat(|s| &s.q);
        let summary = EvalSummary {
            median_mse_q: median(&q_all),
            median_mse_q_per_dof: median(&q_all) / dof as f64,
            median_mse_q_dot: median(&flat(|s| &s.q_dot)),
            median_energy_error: median(&flat(|s| &s.energy)),
            relative_error: if rel.is_empty() { f64::NAN } else { mean(&rel) },
        };
        Self {
            mode,
            dof,
            t,
            mse_q: Bands::across(&pick(|s| &s.q), 1.0),
            mse_q_per_dof: Bands::across(&pick(|s| &s.q), 1.0 / dof as f64),
            mse_q_dot: Bands::across(&pick(|s| &s.q_dot), 1.0),
            energy_error: Bands::across(&pick(|s| &s.energy), 1.0),
            summary,
            trajectories,
        }
    }

    fn band_table(&self, bands: &[(&str, &Bands)]) -> Table {
        let mut header = vec!["t".to_string()];
        for (name, _) in bands {
            header.extend(["p20", "median", "p80"].iter().map(|s| format!("{name}_{s}")));
        }
        let mut table = Table::new(header);
        for (k, t) in self.t.iter().enumerate() {
            let mut row = vec![*t];
            for (_, b) in bands {
                row.extend([b.p20[k], b.median[k], b.p80[k]]);
            }
            table.push(row);
        }
        table
    }

    /// Writes `{system}_{mode}_{metric}.csv` for `q`, `qdot` and `energy`,
    /// plus `{system}_{mode}_summary.json`.
    pub fn write(&self, dir: &Path, system: &str) -> Result<()> {
        let mode = self.mode.name();
        let file = |metric: &str, ext: &str| dir.join(format!("{system}_{mode}_{metric}.{ext}"));
        self.band_table(&[("mse", &self.mse_q), ("mse_per_dof", &self.mse_q_per_dof)])
            .write(&file("q", "csv"))?;
        self.band_table(&[("mse", &self.mse_q_dot)]).write(&file("qdot", "csv"))?;
        self.band_table(&[("abs", &self.energy_error)]).write(&file("energy", "csv"))?;
        write_json(&file("summary", "json"), &self.summary)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_grid(trajs: &[&Trajectory]) -> Result<Vec<f64>> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidConfig("evaluation needs at least one trajectory".into()))?;
    let len = first.len();
    if trajs.iter().any(|t| t.len() != len || t.sample_dt != first.sample_dt) {
        return Err(Error::InvalidConfig("evaluation trajectories must share a sampling grid".into()));
    }
    Ok(first.states.iter().map(|s| s.t).collect())
}

fn score(
    net: &MassSpringNetwork,
    truth: &Trajectory,
    q: &[Vec<f64>],
    q_dot: &[Vec<f64>],
    energy: &[f64],
) -> Result<StepErrors> {
    let rest = net.rest_configuration();
    let inv_mass: Vec<f64> = net.mass_diagonal().iter().map(|m| 1.0 / m).collect();
    let mut out = StepErrors {
        q: Vec::new(),
        q_dot: Vec::new(),
        energy: Vec::new(),
        relative: Vec::new(),
    };
    for (k, s) in truth.states.iter().enumerate() {
        let v: Vec<f64> = s.p.iter().zip(&inv_mass).map(|(p, w)| p * w).collect();
        out.q.push(sq_dist(&q[k], &s.q));
        out.q_dot.push(sq_dist(&q_dot[k], &v));
        out.energy.push((energy[k] - net.hamiltonian(&truth.gravity, &s.q, &s.p)?).abs());
        let denom = sq_dist(&s.q, &rest).sqrt();
        out.relative.push(if denom > 1e-12 { out.q[k].sqrt() / denom } else { f64::NAN });
    }
    Ok(out)
}

/// Every ground-truth sample through `D(E(.))` with the chained velocity map.
pub fn evaluate_pointwise(net: &MassSpringNetwork, ae: &MlpAutoencoder, trajs: &[&Trajectory]) -> Result<EvalReport> {
    let t = check_grid(trajs)?;
    let inv_mass: Vec<f64> = net.mass_diagonal().iter().map(|m| 1.0 / m).collect();
    let mut all = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let rs = ReducedSystem::new(net, traj.gravity, ae)?;
        let (mut q, mut v, mut e) = (Vec::new(), Vec::new(), Vec::new());
        for s in &traj.states {
            let q_dot: Vec<f64> = s.p.iter().zip(&inv_mass).map(|(p, w)| p * w).collect();
            let r = pointwise_compress(&rs, &s.q, &q_dot)?;
            q.push(r.q);
            v.push(r.q_dot);
            e.push(r.energy);
        }
        all.push(score(net, traj, &q, &v, &e)?);
    }
    Ok(EvalReport::assemble(EvalMode::Pointwise, net.dof(), t, all))
}

/// Integrates the latent system from `(E(q0), pi0)` under each trajectory's
/// gravity and scores the reconstruction.
pub fn evaluate_compressed(net: &MassSpringNetwork, ae: &MlpAutoencoder, trajs: &[&Trajectory]) -> Result<EvalReport> {
    let t = check_grid(trajs)?;
    let inv_mass: Vec<f64> = net.mass_diagonal().iter().map(|m| 1.0 / m).collect();
    let mut all = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let rs = ReducedSystem::new(net, traj.gravity, ae)?;
        let s0 = &traj.states[0];
        let q_dot0: Vec<f64> = s0.p.iter().zip(&inv_mass).map(|(p, w)| p * w).collect();
        let (xi0, pi0) = rs.latent_state_of(&s0.q, &q_dot0)?;
        let params = SimParams {
            duration: t[t.len() - 1] - t[0],
            dt: traj.dt,
            sample_dt: traj.sample_dt,
        };
        let lat = simulate_reduced(&rs, &xi0, &pi0, &params, None)?;
        let rec = reconstruct(&rs, &lat)?;
        let q: Vec<Vec<f64>> = rec.trajectory.states.iter().map(|s| s.q.clone()).collect();
        let v: Vec<Vec<f64>> = rec
            .trajectory
            .states
            .iter()
            .map(|s| s.p.iter().zip(&inv_mass).map(|(p, w)| p * w).collect())
            .collect();
        all.push(score(net, traj, &q, &v, &rec.eta)?);
    }
    Ok(EvalReport::assemble(EvalMode::Compressed, net.dof(), t, all))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub valid_mse: f64,
    pub test_mse: f64,
    pub best: GridRun,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub models: Vec<MlpAutoencoder>,
    /// Spearman correlation between latent size and test MSE.
    pub spearman: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub spearman: f64,
    pub seed: u64,
}

impl SweepResult {
    pub fn report(&self, seed: u64) -> SweepReport {
        SweepReport {
            rows: self.rows.clone(),
            spearman: self.spearman,
            seed,
        }
    }

    pub fn model_for(&self, latent_dim: usize) -> Option<&MlpAutoencoder> {
        self.rows.iter().position(|r| r.latent_dim == latent_dim).map(|i| &self.models[i])
    }
}

/// Grid-searched autoencoder per latent size, all with the proportional
/// architecture and the same base seed; MSE is the mean per-sample squared
/// reconstruction error.
pub fn compression_sweep(
    train: &[Vec<f64>],
    valid: &[Vec<f64>],
    test: &[Vec<f64>],
    latent_dims: &[usize],
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<SweepResult> {
    let n = train
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidConfig("empty training set".into()))?;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for &m in latent_dims {
        if m == 0 || m > n {
            return Err(Error::InvalidConfig(format!("latent size {m} outside 1..={n}")));
        }
        let arch = Architecture::proportional(n, m);
        let result = grid_search(&arch, train, valid, base, grid)?;
        let test_mse = mean_reconstruction_loss(&result.best.model, test)?;
        rows.push(SweepRow {
            latent_dim: m,
            valid_mse: result.best.final_valid(),
            test_mse,
            best: result.runs[result.best_index].clone(),
        });
        models.push(result.best.model);
    }
    let ms: Vec<f64> = rows.iter().map(|r| r.latent_dim as f64).collect();
    let mses: Vec<f64> = rows.iter().map(|r| r.test_mse).collect();
    Ok(SweepResult {
        spearman: spearman(&ms, &mses),
        rows,
        models,
    })
}

/// The noise levels of the robustness table.
pub const NOISE_SIGMAS: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 5.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    /// Mean over configurations and seeds of `||q - D(E(q + e))||^2`.
    pub mse: f64,
    pub per_seed: Vec<f64>,
}

/// `e ~ N(0, sigma^2 I)` drawn from one generator per seed, configurations
/// in order.
pub fn noise_robustness(ae: &MlpAutoencoder, configs: &[Vec<f64>], sigmas: &[f64], seeds: &[u64]) -> Result<Vec<NoiseRow>> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("noise robustness needs configurations and seeds".into()));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidConfig(format!("noise sigma {sigma}: {e}")))?;
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut total = 0.0;
                    for q in configs {
                        let noisy: Vec<f64> = q.iter().map(|x| x + normal.sample(&mut rng)).collect();
                        total += sq_dist(q, &ae.reconstruct(&noisy)?);
                    }
                    Ok(total / configs.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(NoiseRow {
                sigma,
                mse: mean(&per_seed),
                per_seed,
            })
        })
        .collect()
}

/// Alteration fractions of the latent-variable study.
pub const LATENT_FRACTIONS: [f64; 6] = [-0.21, -0.14, -0.07, 0.07, 0.14, 0.21];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentAlteration {
    pub base: usize,
    pub latent_index: usize,
    pub fraction: f64,
    pub xi: Vec<f64>,
    pub q: Vec<f64>,
}

/// Per-coordinate `max - min` of `E(q)` over `population`.
pub fn latent_ranges(ae: &MlpAutoencoder, population: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = ae.latent_dim();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for q in population {
        for (k, x) in ae.encode(q)?.into_iter().enumerate() {
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    Ok(lo.iter().zip(&hi).map(|(a, b)| b - a).collect())
}

/// For each base configuration and latent index, decodes `E(q)` with that
/// one coordinate shifted by `fraction * range`.
pub fn latent_sweep(
    ae: &MlpAutoencoder,
    bases: &[Vec<f64>],
    population: &[Vec<f64>],
    fractions: &[f64],
) -> Result<Vec<LatentAlteration>> {
    let ranges = latent_ranges(ae, population)?;
    let mut out = Vec::new();
    for (b, q) in bases.iter().enumerate() {
        let xi = ae.encode(q)?;
        for k in 0..xi.len() {
            for &f in fractions {
                let mut alt = xi.clone();
                alt[k] += f * ranges[k];
                out.push(LatentAlteration {
                    base: b,
                    latent_index: k,
                    fraction: f,
                    q: ae.decode(&alt)?,
                    xi: alt,
                });
            }
        }
    }
    Ok(out)
}

/// Time-averaged `||q~ - q|| / ||q - q_rest||` of one reconstruction.
pub fn relative_error(net: &MassSpringNetwork, truth: &Trajectory, q: &[Vec<f64>]) -> f64 {
    let rest = net.rest_configuration();
    let vals: Vec<f64> = truth
        .states
        .iter()
        .zip(q)
        .filter_map(|(s, r)| {
            let d = norm(&s.q.iter().zip(&rest).map(|(a, b)| a - b).collect::<Vec<_>>());
            (d > 1e-12).then(|| sq_dist(r, &s.q).sqrt() / d)
        })
        .collect();
    mean(&vals)
}
