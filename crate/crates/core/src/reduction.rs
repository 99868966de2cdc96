//! Latent Hamiltonian system induced by a decoder `D: xi -> q`
//!
//! ```text
//! eta(xi, pi) = pi^T M_eta(xi)^{-1} pi / 2 + V(D(xi)),   M_eta = J^T M J,  J = dD/dxi
//! xi' = M_eta^{-1} pi
//! pi' = -grad_xi eta + J^T G u - J^T D(D(xi)) J xi'
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::MlpAutoencoder;
use crate::error::{Error, Result};
use crate::io::{indexed_columns, write_json, Table};
use crate::msd::{GravityField, MassSpringNetwork};
use crate::numerics::{eigenvalue_ratio, rk4_step, Cholesky, Matrix, RANK_RATIO_TOL};
use crate::sim::{check_blowup, sidecar_path, FullState, SimParams, Trajectory, TrajectorySidecar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub xi: Vec<f64>,
    pub pi: Vec<f64>,
    pub t: f64,
}

/// Everything that depends on `xi` alone.
struct Frame {
    q: Vec<f64>,
    jac: Matrix,
    m_eta: Matrix,
    chol: Cholesky,
}

#[derive(Clone, Debug)]
pub struct ReducedSystem<'a> {
    net: &'a MassSpringNetwork,
    grav: GravityField,
    ae: &'a MlpAutoencoder,
    actuated: Option<usize>,
    mass: Vec<f64>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(net: &'a MassSpringNetwork, grav: GravityField, ae: &'a MlpAutoencoder) -> Result<Self> {
        if ae.input_dim() != net.dof() {
            return Err(Error::dims("autoencoder width vs network DOF", net.dof(), ae.input_dim()));
        }
        Ok(Self {
            net,
            grav,
            ae,
            actuated: None,
            mass: net.mass_diagonal(),
        })
    }

    pub fn with_actuation(mut self, node: usize) -> Result<Self> {
        self.net.actuated_dof(node)?;
        self.actuated = Some(node);
        Ok(self)
    }

    pub fn network(&self) -> &'a MassSpringNetwork {
        self.net
    }

    pub fn gravity(&self) -> &GravityField {
        &self.grav
    }

    pub fn autoencoder(&self) -> &'a MlpAutoencoder {
        self.ae
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim()
    }

    pub fn actuated_node(&self) -> Option<usize> {
        self.actuated
    }

    fn check_latent(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.latent_dim() {
            return Err(Error::dims(what, self.latent_dim(), v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    fn assemble_mass(&self, jac: &Matrix) -> Matrix {
        let m = jac.cols();
        let mut out = Matrix::zeros(m, m);
        for (r, w) in self.mass.iter().enumerate() {
            let row = jac.row(r);
            for a in 0..m {
                let wa = w * row[a];
                if wa == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(a);
                for b in 0..m {
                    out_row[b] += wa * row[b];
                }
            }
        }
        out.symmetrize();
        out
    }

    fn factor_mass(m_eta: &Matrix) -> Result<Cholesky> {
        let chol = match Cholesky::factor(m_eta) {
            Ok(c) => c,
            Err(Error::NotSpd) => {
                return Err(Error::RankDeficientJacobian {
                    ratio: eigenvalue_ratio(m_eta),
                })
            }
            Err(e) => return Err(e),
        };
        // lambda_min / lambda_max >= 1 / (trace(A) trace(A^{-1}))
        let lower = 1.0 / (m_eta.trace() * chol.inverse_trace());
        if chol.jitter() > 0.0 || !(lower >= RANK_RATIO_TOL) {
            let ratio = eigenvalue_ratio(m_eta);
            if !(ratio >= RANK_RATIO_TOL) {
                return Err(Error::RankDeficientJacobian { ratio });
            }
        }
        Ok(chol)
    }

    fn frame(&self, xi: &[f64]) -> Result<Frame> {
        self.check_latent("latent configuration", xi)?;
        let q = self.ae.decode(xi)?;
        let jac = self.ae.decoder_jacobian(xi)?;
        let m_eta = self.assemble_mass(&jac);
        let chol = Self::factor_mass(&m_eta)?;
        Ok(Frame { q, jac, m_eta, chol })
    }

    /// `V(D(xi))`
    pub fn latent_potential(&self, xi: &[f64]) -> Result<f64> {
        self.check_latent("latent configuration", xi)?;
        self.net.potential_energy(&self.grav, &self.ae.decode(xi)?)
    }

    /// `J^T M J`, symmetrized.
    pub fn latent_mass_matrix(&self, xi: &[f64]) -> Result<Matrix> {
        Ok(self.frame(xi)?.m_eta)
    }

    /// `M_eta^{-1} pi`
    pub fn latent_velocity(&self, xi: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
        self.check_latent("latent momentum", pi)?;
        Ok(self.frame(xi)?.chol.solve(pi)?.into_inner())
    }

    pub fn latent_energy(&self, xi: &[f64], pi: &[f64]) -> Result<f64> {
        self.check_latent("latent momentum", pi)?;
        let f = self.frame(xi)?;
        let xi_dot = f.chol.solve(pi)?;
        Ok(0.5 * xi_dot.dot(pi) + self.net.potential_energy(&self.grav, &f.q)?)
    }

    /// `J^T grad V(D(xi))`
    pub fn latent_potential_gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_latent("latent configuration", xi)?;
        let q = self.ae.decode(xi)?;
        let jac = self.ae.decoder_jacobian(xi)?;
        Ok(jac.tr_matvec(&self.net.potential_gradient(&self.grav, &q)?)?.into_inner())
    }

    /// `grad_xi V_eta - H^T M J xi'` with `xi' = M_eta^{-1} pi` and
    /// `H = (d/ds) J(xi + s xi')`, using the symmetry of second derivatives
    /// of `D`.
    fn energy_gradient_with(&self, f: &Frame, xi: &[f64], xi_dot: &[f64]) -> Result<Vec<f64>> {
        let grad_v = self.net.potential_gradient(&self.grav, &f.q)?;
        let mut g = f.jac.tr_matvec(&grad_v)?.into_inner();
        if xi_dot.iter().any(|v| *v != 0.0) {
            let h = self.ae.decoder_jacobian_directional_derivative(xi, xi_dot)?;
            let mut w = f.jac.matvec(xi_dot)?.into_inner();
            w.iter_mut().zip(&self.mass).for_each(|(w, m)| *w *= m);
            let kin = h.tr_matvec(&w)?;
            g.iter_mut().zip(kin.iter()).for_each(|(g, k)| *g -= k);
        }
        Ok(g)
    }

    /// `grad_xi eta(xi, pi)`
    pub fn latent_energy_gradient_xi(&self, xi: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
        self.check_latent("latent momentum", pi)?;
        let f = self.frame(xi)?;
        let xi_dot = f.chol.solve(pi)?;
        self.energy_gradient_with(&f, xi, &xi_dot)
    }

    /// `J^T D(D(xi)) J`
    pub fn latent_dissipation(&self, xi: &[f64]) -> Result<Matrix> {
        self.check_latent("latent configuration", xi)?;
        let q = self.ae.decode(xi)?;
        let jac = self.ae.decoder_jacobian(xi)?;
        let frames = self.net.spring_frames(&q)?;
        let mut d = self.net.damping_sandwich_with(&frames, &jac);
        d.symmetrize();
        Ok(d)
    }

    fn input_field_from(&self, jac: &Matrix) -> Result<Matrix> {
        let node = self
            .actuated
            .ok_or_else(|| Error::InvalidConfig("reduced system has no actuated node".into()))?;
        let d = self.net.actuated_dof(node)?;
        let m = jac.cols();
        let mut gamma = Matrix::zeros(m, 2);
        for k in 0..m {
            gamma[(k, 0)] = jac[(d, k)];
            gamma[(k, 1)] = jac[(d + 1, k)];
        }
        Ok(gamma)
    }

    /// `J^T G`, `m x 2`.
    pub fn latent_input_field(&self, xi: &[f64]) -> Result<Matrix> {
        self.check_latent("latent configuration", xi)?;
        self.input_field_from(&self.ae.decoder_jacobian(xi)?)
    }

    pub fn reduced_rhs(&self, state: &LatentState, u: Option<[f64; 2]>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_latent("latent momentum", &state.pi)?;
        let f = self.frame(&state.xi)?;
        let xi_dot = f.chol.solve(&state.pi)?.into_inner();
        let mut pi_dot = self.energy_gradient_with(&f, &state.xi, &xi_dot)?;
        pi_dot.iter_mut().for_each(|x| *x = -*x);
        let frames = self.net.spring_frames(&f.q)?;
        let q_dot = f.jac.matvec(&xi_dot)?;
        let diss = f.jac.tr_matvec(&self.net.damping_force_with(&frames, &q_dot))?;
        pi_dot.iter_mut().zip(diss.iter()).for_each(|(p, d)| *p -= d);
        if let Some(u) = u {
            let gamma = self.input_field_from(&f.jac)?;
            for (k, p) in pi_dot.iter_mut().enumerate() {
                *p += gamma[(k, 0)] * u[0] + gamma[(k, 1)] * u[1];
            }
        }
        Ok((xi_dot, pi_dot))
    }

    /// Full-order momentum `M J M_eta^{-1} pi` consistent with `q' = J xi'`.
    pub fn full_momentum(&self, xi: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
        self.check_latent("latent momentum", pi)?;
        let f = self.frame(xi)?;
        let xi_dot = f.chol.solve(pi)?;
        let mut p = f.jac.matvec(&xi_dot)?.into_inner();
        p.iter_mut().zip(&self.mass).for_each(|(p, m)| *p *= m);
        Ok(p)
    }

    /// `(E(q), M_eta (dE/dq) q')`
    pub fn latent_state_of(&self, q: &[f64], q_dot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.net.check_dims("configuration", q)?;
        self.net.check_dims("velocity", q_dot)?;
        let xi = self.ae.encode(q)?;
        let xi_dot = self.ae.encoder_jacobian(q)?.matvec(q_dot)?;
        let pi = self.frame(&xi)?.m_eta.matvec(&xi_dot)?.into_inner();
        Ok((xi, pi))
    }
}

/// Latent input source for [`simulate_reduced`], held per step.
pub trait LatentController {
    fn control(&mut self, t: f64, xi: &[f64], pi: &[f64]) -> Result<[f64; 2]>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub states: Vec<LatentState>,
    pub eta: Vec<f64>,
    pub dt: f64,
    pub sample_dt: f64,
    pub gravity: GravityField,
    pub input_log: Option<Vec<[f64; 2]>>,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn to_table(&self) -> Table {
        let m = self.states.first().map_or(0, |s| s.xi.len());
        let mut header = vec!["t".to_string()];
        header.extend(indexed_columns("xi", m));
        header.extend(indexed_columns("pi", m));
        header.push("eta".into());
        if self.input_log.is_some() {
            header.extend(["u_x".to_string(), "u_y".to_string()]);
        }
        let mut table = Table::new(header);
        for (k, s) in self.states.iter().enumerate() {
            let mut row = vec![s.t];
            row.extend_from_slice(&s.xi);
            row.extend_from_slice(&s.pi);
            row.push(self.eta[k]);
            if let Some(log) = &self.input_log {
                row.extend_from_slice(&log[k]);
            }
            table.push(row);
        }
        table
    }

    pub fn write(&self, path: &Path, network_hash: &str) -> Result<()> {
        self.to_table().write(path)?;
        write_json(&sidecar_path(path), &sidecar(&self.gravity, self.dt, self.sample_dt, network_hash))
    }
}

fn sidecar(grav: &GravityField, dt: f64, sample_dt: f64, network_hash: &str) -> TrajectorySidecar {
    TrajectorySidecar {
        g: grav.g,
        theta: grav.theta,
        dt,
        sample_dt,
        network_hash: network_hash.to_string(),
    }
}

/// RK4 on the latent system, sampled like [`crate::sim::simulate_full`].
pub fn simulate_reduced(
    rs: &ReducedSystem<'_>,
    xi0: &[f64],
    pi0: &[f64],
    params: &SimParams,
    mut controller: Option<&mut dyn LatentController>,
) -> Result<LatentTrajectory> {
    rs.check_latent("initial latent configuration", xi0)?;
    rs.check_latent("initial latent momentum", pi0)?;
    if controller.is_some() && rs.actuated.is_none() {
        return Err(Error::InvalidConfig("controlled reduced simulation needs an actuated node".into()));
    }
    let (per_sample, samples) = params.grid()?;
    let m = rs.latent_dim();
    let split = |y: &[f64], t: f64| LatentState {
        xi: y[..m].to_vec(),
        pi: y[m..].to_vec(),
        t,
    };
    let rhs = |y: &[f64], u: Option<[f64; 2]>| -> Result<Vec<f64>> {
        let (a, b) = rs.reduced_rhs(&split(y, 0.0), u)?;
        Ok(a.into_iter().chain(b).collect())
    };
    let mut y: Vec<f64> = xi0.iter().chain(pi0).copied().collect();
    let mut states = vec![split(&y, 0.0)];
    let mut inputs = Vec::new();
    let mut step = 0usize;
    for _ in 0..samples {
        for sub in 0..per_sample {
            let t = step as f64 * params.dt;
            let u = match controller.as_deref_mut() {
                Some(c) => {
                    let u = c.control(t, &y[..m], &y[m..])?;
                    if sub == 0 {
                        inputs.push(u);
                    }
                    Some(u)
                }
                None => None,
            };
            y = rk4_step(|_, y: &[f64]| rhs(y, u), &y, t, params.dt)?;
            step += 1;
            check_blowup(&y, step as f64 * params.dt)?;
        }
        states.push(split(&y, step as f64 * params.dt));
    }
    if let Some(c) = controller {
        inputs.push(c.control(step as f64 * params.dt, &y[..m], &y[m..])?);
    }
    let eta = states
        .iter()
        .map(|s| rs.latent_energy(&s.xi, &s.pi))
        .collect::<Result<_>>()?;
    Ok(LatentTrajectory {
        states,
        eta,
        dt: params.dt,
        sample_dt: params.sample_dt,
        gravity: *rs.gravity(),
        input_log: (!inputs.is_empty()).then_some(inputs),
    })
}

/// A latent trajectory mapped back to the full space.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub trajectory: Trajectory,
    pub eta: Vec<f64>,
}

impl Reconstruction {
    pub fn to_table(&self) -> Table {
        let mut table = self.trajectory.to_table();
        table.header.push("eta".into());
        for (row, e) in table.rows.iter_mut().zip(&self.eta) {
            row.push(*e);
        }
        table
    }

    pub fn write(&self, path: &Path, network_hash: &str) -> Result<()> {
        self.to_table().write(path)?;
        let t = &self.trajectory;
        write_json(&sidecar_path(path), &sidecar(&t.gravity, t.dt, t.sample_dt, network_hash))
    }
}

/// `q = D(xi)`, `p = M J M_eta^{-1} pi` and `eta` for every sample.
pub fn reconstruct(rs: &ReducedSystem<'_>, traj: &LatentTrajectory) -> Result<Reconstruction> {
    let mut states = Vec::with_capacity(traj.len());
    let mut eta = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let f = rs.frame(&s.xi)?;
        let xi_dot = f.chol.solve(&s.pi)?;
        let mut p = f.jac.matvec(&xi_dot)?.into_inner();
        p.iter_mut().zip(&rs.mass).for_each(|(p, m)| *p *= m);
        eta.push(0.5 * xi_dot.dot(&s.pi) + rs.net.potential_energy(&rs.grav, &f.q)?);
        states.push(FullState { q: f.q, p, t: s.t });
    }
    Ok(Reconstruction {
        trajectory: Trajectory {
            states,
            dt: traj.dt,
            sample_dt: traj.sample_dt,
            gravity: traj.gravity,
            input_log: traj.input_log.clone(),
        },
        eta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseSample {
    pub xi: Vec<f64>,
    pub xi_dot: Vec<f64>,
    pub pi: Vec<f64>,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub energy: f64,
}

/// End-to-end pass of one full state through the autoencoder:
/// `xi = E(q)`, `xi' = (dE/dq) q'`, `q~ = D(xi)`, `q~' = J xi'`,
/// energy `eta(xi, M_eta xi')`.
pub fn pointwise_compress(rs: &ReducedSystem<'_>, q: &[f64], q_dot: &[f64]) -> Result<PointwiseSample> {
    rs.net.check_dims("configuration", q)?;
    rs.net.check_dims("velocity", q_dot)?;
    let xi = rs.ae.encode(q)?;
    let xi_dot = rs.ae.encoder_jacobian(q)?.matvec(q_dot)?.into_inner();
    let f = rs.frame(&xi)?;
    let pi = f.m_eta.matvec(&xi_dot)?.into_inner();
    let q_dot_rec = f.jac.matvec(&xi_dot)?.into_inner();
    let kinetic: f64 = 0.5 * pi.iter().zip(&xi_dot).map(|(a, b)| a * b).sum::<f64>();
    let energy = kinetic + rs.net.potential_energy(&rs.grav, &f.q)?;
    Ok(PointwiseSample {
        xi,
        xi_dot,
        pi,
        q: f.q,
        q_dot: q_dot_rec,
        energy,
    })
}
