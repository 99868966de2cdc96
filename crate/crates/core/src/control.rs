//! Latent-space posture regulation
//!
//! ```text
//! u = A^L(xi_bar) (grad V_eta(xi_bar) + alpha (xi_bar - xi) - beta pi),   A = J(xi_bar)^T G
//! ```
//!
//! closed around the full-order plant.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::MlpAutoencoder;
use crate::error::{Error, Result};
use crate::io::{indexed_columns, write_json, Table};
use crate::msd::{GravityField, MassSpringNetwork};
use crate::numerics::stats::percentile;
use crate::numerics::{norm, pseudo_left_inverse, sub, Matrix};
use crate::reduction::{LatentController, ReducedSystem};
use crate::sim::{simulate_full, Controller, SimParams, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlTask {
    pub target: Vec<f64>,
    pub actuated_node: usize,
    pub alpha: f64,
    pub beta: f64,
    pub duration: f64,
}

impl ControlTask {
    pub fn validate(&self, net: &MassSpringNetwork) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("control gains must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidConfig("control duration must be positive".into()));
        }
        net.check_dims("control target", &self.target)?;
        net.actuated_dof(self.actuated_node)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlOptions {
    /// Re-evaluate `A^L` at the current `xi` every step instead of at `xi_bar`.
    pub recompute_input_map: bool,
    /// Clamp each input component to `[-s, s]`.
    pub saturation: Option<f64>,
}

/// Controller state with `xi_bar`, the feedforward gradient and `A^L(xi_bar)`
/// cached.
#[derive(Clone, Debug)]
pub struct LatentRegulator<'a> {
    rs: ReducedSystem<'a>,
    task: ControlTask,
    options: ControlOptions,
    xi_bar: Vec<f64>,
    feedforward: Vec<f64>,
    left_inverse: Matrix,
    inv_mass: Vec<f64>,
}

impl<'a> LatentRegulator<'a> {
    pub fn new(rs: &ReducedSystem<'a>, task: &ControlTask, options: ControlOptions) -> Result<Self> {
        task.validate(rs.network())?;
        let rs = rs.clone().with_actuation(task.actuated_node)?;
        let xi_bar = rs.autoencoder().encode(&task.target)?;
        let feedforward = rs.latent_potential_gradient(&xi_bar)?;
        let left_inverse = pseudo_left_inverse(&rs.latent_input_field(&xi_bar)?)?;
        let inv_mass = rs.network().mass_diagonal().iter().map(|m| 1.0 / m).collect();
        Ok(Self {
            rs,
            task: task.clone(),
            options,
            xi_bar,
            feedforward,
            left_inverse,
            inv_mass,
        })
    }

    pub fn xi_bar(&self) -> &[f64] {
        &self.xi_bar
    }

    pub fn task(&self) -> &ControlTask {
        &self.task
    }

    /// `A^L(xi_bar)`, `2 x m`.
    pub fn left_inverse(&self) -> &Matrix {
        &self.left_inverse
    }

    pub fn reduced_system(&self) -> &ReducedSystem<'a> {
        &self.rs
    }

    /// Input from a latent state.
    pub fn control_latent(&self, xi: &[f64], pi: &[f64]) -> Result<[f64; 2]> {
        let bracket: Vec<f64> = (0..xi.len())
            .map(|k| self.feedforward[k] + self.task.alpha * (self.xi_bar[k] - xi[k]) - self.task.beta * pi[k])
            .collect();
        let u = if self.options.recompute_input_map {
            pseudo_left_inverse(&self.rs.latent_input_field(xi)?)?.matvec(&bracket)?
        } else {
            self.left_inverse.matvec(&bracket)?
        };
        let mut u = [u[0], u[1]];
        if let Some(s) = self.options.saturation {
            u.iter_mut().for_each(|x| *x = x.clamp(-s, s));
        }
        Ok(u)
    }

    /// Input from a full-order configuration and velocity.
    pub fn compute_control(&self, q: &[f64], q_dot: &[f64]) -> Result<[f64; 2]> {
        let (xi, pi) = self.rs.latent_state_of(q, q_dot)?;
        self.control_latent(&xi, &pi)
    }

    /// `eta(xi, pi) + alpha ||xi_bar - xi||^2`
    pub fn lyapunov_value(&self, xi: &[f64], pi: &[f64]) -> Result<f64> {
        let e = sub(&self.xi_bar, xi);
        Ok(self.rs.latent_energy(xi, pi)? + self.task.alpha * e.iter().map(|x| x * x).sum::<f64>())
    }

    /// `eta(xi, pi) - grad V_eta(xi_bar) . (xi - xi_bar) + alpha/2 ||xi - xi_bar||^2`,
    /// the energy of the closed loop shaped by the feedforward and
    /// proportional terms. Its rate is `-xi'^T (Delta + beta M_eta) xi'`
    /// whenever `A A^L = I`.
    pub fn shaped_energy(&self, xi: &[f64], pi: &[f64]) -> Result<f64> {
        let e = sub(xi, &self.xi_bar);
        let ff: f64 = self.feedforward.iter().zip(&e).map(|(g, d)| g * d).sum();
        let sq: f64 = e.iter().map(|x| x * x).sum();
        Ok(self.rs.latent_energy(xi, pi)? - ff + 0.5 * self.task.alpha * sq)
    }
}

impl Controller for LatentRegulator<'_> {
    fn actuated_node(&self) -> usize {
        self.task.actuated_node
    }

    fn control(&mut self, _t: f64, q: &[f64], p: &[f64]) -> Result<[f64; 2]> {
        let q_dot: Vec<f64> = p.iter().zip(&self.inv_mass).map(|(p, w)| p * w).collect();
        self.compute_control(q, &q_dot)
    }
}

impl LatentController for LatentRegulator<'_> {
    fn control(&mut self, _t: f64, xi: &[f64], pi: &[f64]) -> Result<[f64; 2]> {
        self.control_latent(xi, pi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlRecord {
    pub t: f64,
    /// `||q - q_bar||^2 / n`
    pub mse_norm: f64,
    pub lyapunov: f64,
    pub u: [f64; 2],
    pub xi: Vec<f64>,
    pub pi: Vec<f64>,
}

impl ControlRecord {
    pub fn latent_error(&self, xi_bar: &[f64]) -> f64 {
        norm(&sub(&self.xi, xi_bar))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlLog {
    pub task: ControlTask,
    pub xi_bar: Vec<f64>,
    pub records: Vec<ControlRecord>,
    pub trajectory: Trajectory,
}

impl ControlLog {
    pub fn latent_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.latent_error(&self.xi_bar)).collect()
    }

    pub fn to_table(&self) -> Table {
        let m = self.xi_bar.len();
        let mut header: Vec<String> = ["t", "mse_norm", "lyapunov", "u_x", "u_y"].map(String::from).to_vec();
        header.extend(indexed_columns("xi", m));
        header.extend(indexed_columns("xibar", m));
        let mut table = Table::new(header);
        for r in &self.records {
            let mut row = vec![r.t, r.mse_norm, r.lyapunov, r.u[0], r.u[1]];
            row.extend_from_slice(&r.xi);
            row.extend_from_slice(&self.xi_bar);
            table.push(row);
        }
        table
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }
}

/// Closes the loop around the full-order plant from rest at the rest
/// geometry and logs every sample.
pub fn run_regulation(
    net: &MassSpringNetwork,
    grav: &GravityField,
    rs: &ReducedSystem<'_>,
    task: &ControlTask,
    dt: f64,
    sample_dt: f64,
    options: ControlOptions,
) -> Result<ControlLog> {
    let q0 = net.rest_configuration();
    run_regulation_from(net, grav, rs, task, &q0, dt, sample_dt, options)
}

/// [`run_regulation`] from an arbitrary configuration at rest.
#[allow(clippy::too_many_arguments)]
pub fn run_regulation_from(
    net: &MassSpringNetwork,
    grav: &GravityField,
    rs: &ReducedSystem<'_>,
    task: &ControlTask,
    q0: &[f64],
    dt: f64,
    sample_dt: f64,
    options: ControlOptions,
) -> Result<ControlLog> {
    if !std::ptr::eq(rs.network(), net) && rs.network().dof() != net.dof() {
        return Err(Error::dims("plant DOF", rs.network().dof(), net.dof()));
    }
    let mut reg = LatentRegulator::new(rs, task, options)?;
    let params = SimParams {
        duration: task.duration,
        dt,
        sample_dt,
    };
    let p0 = vec![0.0; net.dof()];
    let traj = simulate_full(net, grav, q0, &p0, &params, Some(&mut reg))?;
    let inputs = traj.input_log.clone().unwrap_or_default();
    let inv_mass: Vec<f64> = net.mass_diagonal().iter().map(|m| 1.0 / m).collect();
    let n = net.dof() as f64;
    let mut records = Vec::with_capacity(traj.len());
    for (s, u) in traj.states.iter().zip(inputs) {
        let q_dot: Vec<f64> = s.p.iter().zip(&inv_mass).map(|(p, w)| p * w).collect();
        let (xi, pi) = reg.rs.latent_state_of(&s.q, &q_dot)?;
        let d = sub(&s.q, &task.target);
        records.push(ControlRecord {
            t: s.t,
            mse_norm: d.iter().map(|x| x * x).sum::<f64>() / n,
            lyapunov: reg.lyapunov_value(&xi, &pi)?,
            u,
            xi,
            pi,
        });
    }
    Ok(ControlLog {
        task: task.clone(),
        xi_bar: reg.xi_bar.clone(),
        records,
        trajectory: traj,
    })
}

/// Settings of a batch of regulation tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub n_tasks: usize,
    /// Size of the fixed actuation candidate set.
    pub n_candidates: usize,
    pub alpha: f64,
    pub beta: f64,
    pub duration: f64,
    pub dt: f64,
    pub sample_dt: f64,
    /// Plant gravity magnitude and direction.
    pub g: f64,
    pub theta: f64,
    pub seed: u64,
    pub options: ControlOptions,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            n_tasks: 10,
            n_candidates: 3,
            alpha: 100.0,
            beta: 20.0,
            duration: 5.0,
            dt: 1e-3,
            sample_dt: 0.01,
            g: 9.81,
            theta: -std::f64::consts::FRAC_PI_2,
            seed: 0,
            options: ControlOptions::default(),
        }
    }
}

impl ControlConfig {
    pub fn gravity(&self) -> Result<GravityField> {
        GravityField::new(self.g, self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.n_candidates == 0 {
            return Err(Error::InvalidConfig("n_tasks and n_candidates must be >= 1".into()));
        }
        if let Some(s) = self.options.saturation {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig("saturation must be positive".into()));
            }
        }
        self.gravity()?;
        SimParams {
            duration: self.duration,
            dt: self.dt,
            sample_dt: self.sample_dt,
        }
        .grid()?;
        Ok(())
    }
}

/// Samples `cfg.n_tasks` tasks with targets from `targets` and runs each
/// closed loop on `net` with `ae` as the reduction.
pub fn run_control_tasks(
    net: &MassSpringNetwork,
    ae: &MlpAutoencoder,
    targets: &[Vec<f64>],
    cfg: &ControlConfig,
) -> Result<Vec<ControlLog>> {
    cfg.validate()?;
    let grav = cfg.gravity()?;
    let rs = ReducedSystem::new(net, grav, ae)?;
    let candidates = actuation_candidates(net, cfg.n_candidates);
    let tasks = sample_control_tasks(targets, &candidates, cfg.n_tasks, cfg.seed, cfg.alpha, cfg.beta, cfg.duration)?;
    tasks
        .iter()
        .map(|t| run_regulation(net, &grav, &rs, t, cfg.dt, cfg.sample_dt, cfg.options))
        .collect()
}

/// Up to `k` free nodes on lateral cells (outside the central column),
/// lowest first; falls back to the lowest free nodes when the body has no
/// lateral cells.
pub fn actuation_candidates(net: &MassSpringNetwork, k: usize) -> Vec<usize> {
    let nodes = net.nodes();
    let span = nodes.iter().filter(|n| n.pinned).map(|n| n.x0);
    let (lo, hi) = span.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let by_depth = |v: &mut Vec<usize>| {
        v.sort_by(|&a, &b| nodes[a].y0.total_cmp(&nodes[b].y0).then(a.cmp(&b)));
        v.truncate(k);
    };
    let mut lateral: Vec<usize> = net
        .free_nodes()
        .iter()
        .copied()
        .filter(|&i| nodes[i].x0 < lo || nodes[i].x0 > hi)
        .collect();
    if lateral.is_empty() {
        lateral = net.free_nodes().to_vec();
    }
    by_depth(&mut lateral);
    lateral
}

/// Draws `n_tasks` (target, actuated node) pairs: targets uniformly from
/// `configs`, nodes uniformly from `candidates`.
pub fn sample_control_tasks(
    configs: &[Vec<f64>],
    candidates: &[usize],
    n_tasks: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
    duration: f64,
) -> Result<Vec<ControlTask>> {
    if configs.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidConfig("control task sampling needs targets and candidate nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_tasks)
        .map(|_| {
            let target = configs[rng.random_range(0..configs.len())].clone();
            let actuated_node = candidates[rng.random_range(0..candidates.len())];
            ControlTask {
                target,
                actuated_node,
                alpha,
                beta,
                duration,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: Vec<f64>,
    pub median: Vec<f64>,
    pub q75: Vec<f64>,
}

impl Quartiles {
    fn across(series: &[Vec<f64>]) -> Self {
        let len = series.iter().map(Vec::len).min().unwrap_or(0);
        let column = |k: usize| series.iter().map(|s| s[k]).collect::<Vec<_>>();
        let pick = |p: f64| (0..len).map(|k| percentile(&column(k), p)).collect();
        Self {
            q25: pick(25.0),
            median: pick(50.0),
            q75: pick(75.0),
        }
    }
}

/// Per-sample quartiles across tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub n_tasks: usize,
    pub t: Vec<f64>,
    pub mse_norm: Quartiles,
    pub latent_error: Quartiles,
    pub initial_latent_error: Vec<f64>,
    pub final_latent_error: Vec<f64>,
    /// Median over tasks of final over initial latent error.
    pub median_final_ratio: f64,
}

impl ControlSummary {
    pub fn from_logs(logs: &[ControlLog]) -> Self {
        let t = logs
            .first()
            .map(|l| l.records.iter().map(|r| r.t).collect())
            .unwrap_or_default();
        let mse: Vec<Vec<f64>> = logs.iter().map(|l| l.records.iter().map(|r| r.mse_norm).collect()).collect();
        let lat: Vec<Vec<f64>> = logs.iter().map(ControlLog::latent_errors).collect();
        Self {
            n_tasks: logs.len(),
            t,
            mse_norm: Quartiles::across(&mse),
            latent_error: Quartiles::across(&lat),
            initial_latent_error: lat.iter().map(|s| s[0]).collect(),
            final_latent_error: lat.iter().map(|s| *s.last().unwrap()).collect(),
            median_final_ratio: percentile(&lat.iter().map(|s| s.last().unwrap() / s[0]).collect::<Vec<_>>(), 50.0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
