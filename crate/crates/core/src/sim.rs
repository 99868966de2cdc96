//! Full-order dissipative Hamiltonian dynamics
//!
//! ```text
//! q' = M^{-1} p
//! p' = -D(q) M^{-1} p - grad V(q) + G u
//! ```
//!
//! integrated with fixed-step RK4 and sampled on a uniform grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{indexed_columns, read_json, write_json, Table};
use crate::msd::{GravityField, MassSpringNetwork};
use crate::numerics::{norm, rk4_step};

/// State norm above which an integration is declared unstable.
pub const BLOWUP_NORM: f64 = 1e8;

#[derive(Clone, Debug, PartialEq)]
pub struct FullState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

/// Planar force applied to one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Actuation {
    pub node: usize,
    pub force: [f64; 2],
}

/// Closed-loop input source, evaluated once per integration step and held
/// constant across the RK4 stages.
pub trait Controller {
    fn actuated_node(&self) -> usize;
    fn control(&mut self, t: f64, q: &[f64], p: &[f64]) -> Result<[f64; 2]>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub duration: f64,
    pub dt: f64,
    pub sample_dt: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            duration: 10.0,
            dt: 1e-3,
            sample_dt: 0.02,
        }
    }
}

impl SimParams {
    /// `(integration steps per sample, number of samples after t = 0)`
    pub fn grid(&self) -> Result<(usize, usize)> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.duration > 0.0) || !(self.dt > 0.0) || !(self.sample_dt > 0.0) {
            return bad("duration, dt and sample_dt must be positive");
        }
        if self.dt > self.sample_dt * (1.0 + 1e-12) {
            return bad("dt must not exceed sample_dt");
        }
        let per = (self.sample_dt / self.dt).round();
        let samples = (self.duration / self.sample_dt).round();
        if (per * self.dt - self.sample_dt).abs() > 1e-9 * self.sample_dt
            || (samples * self.sample_dt - self.duration).abs() > 1e-9 * self.duration
        {
            return bad("sample_dt must be a multiple of dt and divide duration");
        }
        Ok((per as usize, samples as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<FullState>,
    pub dt: f64,
    pub sample_dt: f64,
    pub gravity: GravityField,
    /// Input held during the step starting at each sample (controlled runs).
    pub input_log: Option<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn energies(&self, net: &MassSpringNetwork) -> Result<Vec<f64>> {
        self.states
            .iter()
            .map(|s| net.hamiltonian(&self.gravity, &s.q, &s.p))
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let n = self.states.first().map_or(0, |s| s.q.len());
        let mut header = vec!["t".to_string()];
        header.extend(indexed_columns("q", n));
        header.extend(indexed_columns("p", n));
        if self.input_log.is_some() {
            header.extend(["u_x".to_string(), "u_y".to_string()]);
        }
        let mut table = Table::new(header);
        for (k, s) in self.states.iter().enumerate() {
            let mut row = Vec::with_capacity(2 * n + 3);
            row.push(s.t);
            row.extend_from_slice(&s.q);
            row.extend_from_slice(&s.p);
            if let Some(log) = &self.input_log {
                row.extend_from_slice(&log[k]);
            }
            table.push(row);
        }
        table
    }

    /// Writes `path` (CSV) and `path.json` (sidecar).
    pub fn write(&self, path: &Path, network_hash: &str) -> Result<()> {
        self.to_table().write(path)?;
        let sidecar = TrajectorySidecar {
            g: self.gravity.g,
            theta: self.gravity.theta,
            dt: self.dt,
            sample_dt: self.sample_dt,
            network_hash: network_hash.to_string(),
        };
        write_json(&sidecar_path(path), &sidecar)
    }

    pub fn read(path: &Path) -> Result<(Self, TrajectorySidecar)> {
        let sidecar: TrajectorySidecar = read_json(&sidecar_path(path))?;
        let table = Table::read(path)?;
        let controlled = table.column_index("u_x").is_some();
        let width = table.header.len() - 1 - if controlled { 2 } else { 0 };
        if table.header.first().map(String::as_str) != Some("t") || width % 2 != 0 {
            return Err(Error::format("trajectory csv", "unexpected header"));
        }
        let n = width / 2;
        let states = table
            .rows
            .iter()
            .map(|r| FullState {
                t: r[0],
                q: r[1..1 + n].to_vec(),
                p: r[1 + n..1 + 2 * n].to_vec(),
            })
            .collect();
        let input_log =
            controlled.then(|| table.rows.iter().map(|r| [r[1 + 2 * n], r[2 + 2 * n]]).collect());
        let traj = Trajectory {
            states,
            dt: sidecar.dt,
            sample_dt: sidecar.sample_dt,
            gravity: GravityField::new(sidecar.g, sidecar.theta)?,
            input_log,
        };
        Ok((traj, sidecar))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySidecar {
    pub g: f64,
    pub theta: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub network_hash: String,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Time derivative `(q', p')` of the full-order system.
pub fn full_rhs(
    net: &MassSpringNetwork,
    grav: &GravityField,
    state: &FullState,
    input: Option<&Actuation>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    net.check_dims("full_rhs momentum", &state.p)?;
    let frames = net.spring_frames(&state.q)?;
    let qdot: Vec<f64> = state
        .p
        .iter()
        .zip(net.mass_diagonal())
        .map(|(p, m)| p / m)
        .collect();
    let grad = net.potential_gradient_with(grav, &frames);
    let damping = net.damping_force_with(&frames, &qdot);
    let mut pdot: Vec<f64> = grad.iter().zip(&damping).map(|(g, d)| -d - g).collect();
    if let Some(a) = input {
        let d = net.actuated_dof(a.node)?;
        pdot[d] += a.force[0];
        pdot[d + 1] += a.force[1];
    }
    Ok((qdot, pdot))
}

fn stacked_rhs(
    net: &MassSpringNetwork,
    grav: &GravityField,
    y: &[f64],
    input: Option<&Actuation>,
) -> Result<Vec<f64>> {
    let n = net.dof();
    let state = FullState {
        q: y[..n].to_vec(),
        p: y[n..].to_vec(),
        t: 0.0,
    };
    let (mut qdot, pdot) = full_rhs(net, grav, &state, input)?;
    qdot.extend(pdot);
    Ok(qdot)
}

pub(crate) fn check_blowup(y: &[f64], t: f64) -> Result<()> {
    let nrm = norm(y);
    if !(nrm <= BLOWUP_NORM) {
        return Err(Error::NumericalBlowup { t, norm: nrm });
    }
    Ok(())
}

pub fn simulate_full(
    net: &MassSpringNetwork,
    grav: &GravityField,
    q0: &[f64],
    p0: &[f64],
    params: &SimParams,
    mut controller: Option<&mut dyn Controller>,
) -> Result<Trajectory> {
    net.check_dims("initial configuration", q0)?;
    net.check_dims("initial momentum", p0)?;
    let (per_sample, samples) = params.grid()?;
    let n = net.dof();
    let mut y: Vec<f64> = q0.iter().chain(p0).copied().collect();
    let state_at = |y: &[f64], t: f64| FullState {
        q: y[..n].to_vec(),
        p: y[n..].to_vec(),
        t,
    };
    let mut states = vec![state_at(&y, 0.0)];
    let mut inputs = Vec::new();
    let mut step = 0usize;
    for _ in 0..samples {
        for sub in 0..per_sample {
            let t = step as f64 * params.dt;
            let input = match controller.as_deref_mut() {
                Some(c) => {
                    let force = c.control(t, &y[..n], &y[n..])?;
                    if sub == 0 {
                        inputs.push(force);
                    }
                    Some(Actuation {
                        node: c.actuated_node(),
                        force,
                    })
                }
                None => None,
            };
            y = rk4_step(
                |_, y: &[f64]| stacked_rhs(net, grav, y, input.as_ref()),
                &y,
                t,
                params.dt,
            )?;
            step += 1;
            check_blowup(&y, step as f64 * params.dt)?;
        }
        states.push(state_at(&y, step as f64 * params.dt));
    }
    if let Some(c) = controller {
        let t = step as f64 * params.dt;
        inputs.push(c.control(t, &y[..n], &y[n..])?);
    }
    Ok(Trajectory {
        states,
        dt: params.dt,
        sample_dt: params.sample_dt,
        gravity: *grav,
        input_log: (!inputs.is_empty()).then_some(inputs),
    })
}

/// Attempts made by [`random_initial_configuration`] before giving up.
pub const MAX_INIT_TRIES: usize = 100;

/// Rest geometry plus a uniform perturbation in `[-amplitude, amplitude]`
/// per free DOF, resampled while any spring is shorter than 10% of its rest
/// length.
pub fn random_initial_configuration(
    net: &MassSpringNetwork,
    seed: u64,
    amplitude: f64,
) -> Result<Vec<f64>> {
    if !(amplitude > 0.0) {
        return Err(Error::InvalidConfig("amplitude must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = net.rest_configuration();
    for _ in 0..MAX_INIT_TRIES {
        let q: Vec<f64> = rest
            .iter()
            .map(|x| x + rng.random_range(-amplitude..=amplitude))
            .collect();
        let lengths = net.spring_lengths(&q)?;
        if net
            .edges()
            .iter()
            .zip(&lengths)
            .all(|(e, l)| *l >= 0.1 * e.l0)
        {
            return Ok(q);
        }
    }
    Err(Error::RejectionExhausted(MAX_INIT_TRIES))
}
