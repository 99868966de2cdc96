//! Energy, forces, inertia, dissipation and actuation of a
//! [`MassSpringNetwork`] in its free-DOF coordinates.

use super::network::{GravityField, MassSpringNetwork};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Springs shorter than this have no well-defined length gradient.
pub const DEGENERATE_LENGTH: f64 = 1e-9;

/// Unit direction of one spring and the `q` indices of its endpoints.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SpringFrame {
    pub length: f64,
    /// `(p_j - p_i) / length`
    pub dir: (f64, f64),
    pub dof_i: Option<usize>,
    pub dof_j: Option<usize>,
}

impl SpringFrame {
    /// `grad(l) . v`
    #[inline]
    pub fn rate(&self, v: &[f64]) -> f64 {
        let mut r = 0.0;
        if let Some(d) = self.dof_i {
            r -= self.dir.0 * v[d] + self.dir.1 * v[d + 1];
        }
        if let Some(d) = self.dof_j {
            r += self.dir.0 * v[d] + self.dir.1 * v[d + 1];
        }
        r
    }

    /// `out += s * grad(l)`
    #[inline]
    pub fn scatter(&self, s: f64, out: &mut [f64]) {
        if let Some(d) = self.dof_i {
            out[d] -= s * self.dir.0;
            out[d + 1] -= s * self.dir.1;
        }
        if let Some(d) = self.dof_j {
            out[d] += s * self.dir.0;
            out[d + 1] += s * self.dir.1;
        }
    }
}

impl MassSpringNetwork {
    pub(crate) fn spring_frames(&self, q: &[f64]) -> Result<Vec<SpringFrame>> {
        self.check_dims("spring geometry", q)?;
        self.edges()
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                let (xi, yi) = self.position(q, e.i);
                let (xj, yj) = self.position(q, e.j);
                let (dx, dy) = (xj - xi, yj - yi);
                let length = (dx * dx + dy * dy).sqrt();
                if !(length > DEGENERATE_LENGTH) {
                    return Err(Error::DegenerateSpring { edge: idx, length });
                }
                Ok(SpringFrame {
                    length,
                    dir: (dx / length, dy / length),
                    dof_i: self.dof_of(e.i),
                    dof_j: self.dof_of(e.j),
                })
            })
            .collect()
    }

    /// Current length of every spring.
    pub fn spring_lengths(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_dims("spring lengths", q)?;
        Ok(self
            .edges()
            .iter()
            .map(|e| {
                let (xi, yi) = self.position(q, e.i);
                let (xj, yj) = self.position(q, e.j);
                ((xj - xi).powi(2) + (yj - yi).powi(2)).sqrt()
            })
            .collect())
    }

    /// Gravitational plus elastic energy, J.
    pub fn potential_energy(&self, grav: &GravityField, q: &[f64]) -> Result<f64> {
        let lengths = self.spring_lengths(q)?;
        let (gx, gy) = grav.unit_gradient();
        let gravity: f64 = self
            .free_nodes()
            .iter()
            .enumerate()
            .map(|(f, &node)| self.nodes()[node].mass * (gx * q[2 * f] + gy * q[2 * f + 1]))
            .sum();
        let elastic: f64 = self
            .edges()
            .iter()
            .zip(&lengths)
            .map(|(e, l)| 0.5 * e.k * (l - e.l0).powi(2))
            .sum();
        Ok(gravity + elastic)
    }

    /// `grad_q V`, N.
    pub fn potential_gradient(&self, grav: &GravityField, q: &[f64]) -> Result<Vec<f64>> {
        let frames = self.spring_frames(q)?;
        Ok(self.potential_gradient_with(grav, &frames))
    }

    pub(crate) fn potential_gradient_with(
        &self,
        grav: &GravityField,
        frames: &[SpringFrame],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; self.dof()];
        let (gx, gy) = grav.unit_gradient();
        for (f, &node) in self.free_nodes().iter().enumerate() {
            let m = self.nodes()[node].mass;
            grad[2 * f] = m * gx;
            grad[2 * f + 1] = m * gy;
        }
        for (e, frame) in self.edges().iter().zip(frames) {
            frame.scatter(e.k * (frame.length - e.l0), &mut grad);
        }
        grad
    }

    /// Diagonal of `M`: each free node's mass repeated for `x` and `y`.
    pub fn mass_diagonal(&self) -> Vec<f64> {
        self.free_nodes()
            .iter()
            .flat_map(|&i| [self.nodes()[i].mass; 2])
            .collect()
    }

    pub fn mass_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.mass_diagonal())
    }

    /// `D(q) = sum_j c_j grad(l_j) grad(l_j)^T`
    pub fn damping_matrix(&self, q: &[f64]) -> Result<Matrix> {
        let frames = self.spring_frames(q)?;
        let n = self.dof();
        let mut d = Matrix::zeros(n, n);
        let mut g = vec![0.0; n];
        for (e, frame) in self.edges().iter().zip(&frames) {
            if e.c == 0.0 {
                continue;
            }
            g.iter_mut().for_each(|x| *x = 0.0);
            frame.scatter(1.0, &mut g);
            let support: Vec<usize> = [frame.dof_i, frame.dof_j]
                .into_iter()
                .flatten()
                .flat_map(|d| [d, d + 1])
                .collect();
            for &r in &support {
                for &c in &support {
                    d[(r, c)] += e.c * g[r] * g[c];
                }
            }
        }
        Ok(d)
    }

    /// `D(q) v` without assembling `D`.
    pub(crate) fn damping_force_with(&self, frames: &[SpringFrame], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dof()];
        for (e, frame) in self.edges().iter().zip(frames) {
            if e.c != 0.0 {
                frame.scatter(e.c * frame.rate(v), &mut out);
            }
        }
        out
    }

    /// `J^T D(q) J` for an `n x m` matrix `J`, accumulated spring by spring.
    pub(crate) fn damping_sandwich_with(&self, frames: &[SpringFrame], jac: &Matrix) -> Matrix {
        let m = jac.cols();
        let mut out = Matrix::zeros(m, m);
        let mut w = vec![0.0; m];
        for (e, frame) in self.edges().iter().zip(frames) {
            if e.c == 0.0 {
                continue;
            }
            w.iter_mut().for_each(|x| *x = 0.0);
            for (dof, sign) in [(frame.dof_i, -1.0), (frame.dof_j, 1.0)] {
                if let Some(d) = dof {
                    let (rx, ry) = (jac.row(d), jac.row(d + 1));
                    for k in 0..m {
                        w[k] += sign * (frame.dir.0 * rx[k] + frame.dir.1 * ry[k]);
                    }
                }
            }
            for a in 0..m {
                for b in 0..m {
                    out[(a, b)] += e.c * w[a] * w[b];
                }
            }
        }
        out
    }

    /// Selection matrix `G` (n x 2) routing a planar force to `node`.
    pub fn actuation_matrix(&self, node: usize) -> Result<Matrix> {
        let d = self.actuated_dof(node)?;
        let mut g = Matrix::zeros(self.dof(), 2);
        g[(d, 0)] = 1.0;
        g[(d + 1, 1)] = 1.0;
        Ok(g)
    }

    /// `q` index of the `x` coordinate of an actuated node.
    pub fn actuated_dof(&self, node: usize) -> Result<usize> {
        if node >= self.node_count() {
            return Err(Error::IndexOutOfRange {
                index: node,
                count: self.node_count(),
            });
        }
        self.dof_of(node).ok_or(Error::PinnedNode(node))
    }

    pub fn kinetic_energy(&self, p: &[f64]) -> Result<f64> {
        self.check_dims("momentum", p)?;
        Ok(self
            .mass_diagonal()
            .iter()
            .zip(p)
            .map(|(m, p)| 0.5 * p * p / m)
            .sum())
    }

    /// `H(q, p) = p^T M^{-1} p / 2 + V(q)`
    pub fn hamiltonian(&self, grav: &GravityField, q: &[f64], p: &[f64]) -> Result<f64> {
        Ok(self.kinetic_energy(p)? + self.potential_energy(grav, q)?)
    }
}
