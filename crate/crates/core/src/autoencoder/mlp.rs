//! Dense feed-forward network with exact first and second derivatives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "elu")]
    Elu,
    #[serde(rename = "linear")]
    Linear,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn elu_second_derivative(x: f64) -> f64 {
    if x > 0.0 {
        0.0
    } else {
        x.exp()
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Linear => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu_derivative(x),
            Activation::Linear => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu_second_derivative(x),
            Activation::Linear => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

/// A chain of affine layers `z = W a + b`, `a' = act(z)`, with all
/// parameters stored in one flat buffer: per layer the row-major
/// `out x in` weights followed by the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Forward pass record: the input to every layer and every pre-activation.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Row-major `rows x width` activations of a whole batch.
pub(crate) struct BatchTrace {
    pub rows: usize,
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// `C = alpha * op(A) op(B) + beta * C` on strided row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the assertions bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (l, s) in specs.iter().enumerate() {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::InvalidConfig(format!("layer {l} has a zero dimension")));
            }
            if l > 0 && specs[l - 1].out_dim != s.in_dim {
                return Err(Error::dims("layer chain", specs[l - 1].out_dim, s.in_dim));
            }
        }
        let mut offsets = Vec::with_capacity(specs.len());
        let mut total = 0;
        for s in &specs {
            offsets.push(total);
            total += s.param_count();
        }
        Ok(Self {
            specs,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Uniform weights in `+-sqrt(6 / (in + out))`, zero biases.
    pub fn glorot<R: Rng>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(specs)?;
        for l in 0..mlp.specs.len() {
            let s = mlp.specs[l];
            let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            for w in mlp.weights_mut(l) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    /// Builds a network from explicit per-layer weights and biases.
    pub fn from_layers(layers: Vec<(Activation, Matrix, Vec<f64>)>) -> Result<Self> {
        let specs = layers
            .iter()
            .map(|(act, w, _)| LayerSpec {
                in_dim: w.cols(),
                out_dim: w.rows(),
                activation: *act,
            })
            .collect();
        let mut mlp = Self::zeros(specs)?;
        for (l, (_, w, b)) in layers.into_iter().enumerate() {
            if b.len() != w.rows() {
                return Err(Error::dims("layer biases", w.rows(), b.len()));
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("layer biases"));
            }
            mlp.weights_mut(l).copy_from_slice(w.as_slice());
            mlp.biases_mut(l).copy_from_slice(&b);
        }
        Ok(mlp)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let s = self.specs[l];
        &self.params[self.offsets[l]..self.offsets[l] + s.out_dim * s.in_dim]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.specs[l];
        &mut self.params[self.offsets[l]..self.offsets[l] + s.out_dim * s.in_dim]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let s = self.specs[l];
        let start = self.offsets[l] + s.out_dim * s.in_dim;
        &self.params[start..start + s.out_dim]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.specs[l];
        let start = self.offsets[l] + s.out_dim * s.in_dim;
        &mut self.params[start..start + s.out_dim]
    }

    pub fn weight_matrix(&self, l: usize) -> Matrix {
        let s = self.specs[l];
        Matrix::from_row_major(s.out_dim, s.in_dim, self.weights(l).to_vec())
            .expect("layer dims are positive")
    }

    /// Mask over the flat parameter buffer: `true` for weights, `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        self.specs
            .iter()
            .flat_map(|s| {
                std::iter::repeat_n(true, s.in_dim * s.out_dim)
                    .chain(std::iter::repeat_n(false, s.out_dim))
            })
            .collect()
    }

    fn affine(&self, l: usize, a: &[f64], z: &mut Vec<f64>) {
        let s = self.specs[l];
        let w = self.weights(l);
        z.clear();
        z.extend(self.biases(l).iter().enumerate().map(|(r, b)| {
            let row = &w[r * s.in_dim..(r + 1) * s.in_dim];
            b + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::dims("network input", self.in_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for (l, s) in self.specs.iter().enumerate() {
            self.affine(l, &a, &mut z);
            a.clear();
            a.extend(z.iter().map(|v| s.activation.apply(*v)));
        }
        a
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut pre = Vec::with_capacity(self.specs.len());
        let mut a = x.to_vec();
        for (l, s) in self.specs.iter().enumerate() {
            let mut z = Vec::with_capacity(s.out_dim);
            self.affine(l, &a, &mut z);
            let next = z.iter().map(|v| s.activation.apply(*v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Trace {
            inputs,
            pre,
            output: a,
        }
    }

    /// Batched forward pass over `rows` inputs stored row-major in `x`.
    pub(crate) fn forward_batch(&self, x: Vec<f64>, rows: usize) -> BatchTrace {
        debug_assert_eq!(x.len(), rows * self.in_dim());
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut pre = Vec::with_capacity(self.specs.len());
        let mut a = x;
        for (l, s) in self.specs.iter().enumerate() {
            let mut z = vec![0.0; rows * s.out_dim];
            gemm(rows, s.in_dim, s.out_dim, &a, (s.in_dim, 1), self.weights(l), (1, s.in_dim), 0.0, &mut z);
            let b = self.biases(l);
            for row in z.chunks_exact_mut(s.out_dim) {
                row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
            }
            let next = z.iter().map(|v| s.activation.apply(*v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        BatchTrace {
            rows,
            inputs,
            pre,
            output: a,
        }
    }

    /// Batched reverse sweep: accumulates parameter gradients summed over
    /// the batch into `grads` and returns `dL/dx` row-major.
    pub(crate) fn backward_batch(&self, trace: &BatchTrace, grad_out: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        let rows = trace.rows;
        let mut delta = grad_out;
        for l in (0..self.specs.len()).rev() {
            let s = self.specs[l];
            if s.activation == Activation::Elu {
                // elu'(z) = elu(z) + 1 for z <= 0, reusing the stored output
                let out = trace.inputs.get(l + 1).unwrap_or(&trace.output);
                for ((d, z), a) in delta.iter_mut().zip(&trace.pre[l]).zip(out) {
                    if *z <= 0.0 {
                        *d *= a + 1.0;
                    }
                }
            }
            let off = self.offsets[l];
            let (gw, gb) = grads[off..off + s.param_count()].split_at_mut(s.out_dim * s.in_dim);
            gemm(s.out_dim, rows, s.in_dim, &delta, (1, s.out_dim), &trace.inputs[l], (s.in_dim, 1), 1.0, gw);
            for row in delta.chunks_exact(s.out_dim) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            let mut prev = vec![0.0; rows * s.in_dim];
            gemm(rows, s.out_dim, s.in_dim, &delta, (s.out_dim, 1), self.weights(l), (s.in_dim, 1), 0.0, &mut prev);
            delta = prev;
        }
        delta
    }

    /// Reverse sweep: accumulates `dL/dparams` into `grads` (same layout as
    /// the parameter buffer) and returns `dL/dx`.
    #[cfg(test)]
    pub(crate) fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for l in (0..self.specs.len()).rev() {
            let s = self.specs[l];
            for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= s.activation.derivative(*z);
            }
            let input = &trace.inputs[l];
            let off = self.offsets[l];
            let (gw, gb) = grads[off..off + s.param_count()].split_at_mut(s.out_dim * s.in_dim);
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (g, x) in gw[r * s.in_dim..(r + 1) * s.in_dim].iter_mut().zip(input) {
                    *g += d * x;
                }
                gb[r] += d;
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; s.in_dim];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&w[r * s.in_dim..(r + 1) * s.in_dim]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Jacobian `d out / d x` by forward propagation of tangents
    /// (cheap when the input is narrow).
    pub fn jacobian_forward(&self, x: &[f64]) -> Matrix {
        let n_in = self.in_dim();
        let mut a = x.to_vec();
        let mut jac = Matrix::identity(n_in);
        let mut z = Vec::new();
        for (l, s) in self.specs.iter().enumerate() {
            self.affine(l, &a, &mut z);
            jac = self.weight_matrix(l).matmul(&jac).expect("layer chain");
            for (r, zr) in z.iter().enumerate() {
                let d = s.activation.derivative(*zr);
                jac.row_mut(r).iter_mut().for_each(|v| *v *= d);
            }
            a.clear();
            a.extend(z.iter().map(|v| s.activation.apply(*v)));
        }
        jac
    }

    /// Jacobian `d out / d x` by reverse propagation of cotangents
    /// (cheap when the output is narrow).
    pub fn jacobian_reverse(&self, x: &[f64]) -> Matrix {
        let trace = self.forward_trace(x);
        // rows: output components; columns: current layer's activations
        let mut g = Matrix::identity(self.out_dim());
        for l in (0..self.specs.len()).rev() {
            let s = self.specs[l];
            for c in 0..s.out_dim {
                let d = s.activation.derivative(trace.pre[l][c]);
                for r in 0..g.rows() {
                    g[(r, c)] *= d;
                }
            }
            g = g.matmul(&self.weight_matrix(l)).expect("layer chain");
        }
        g
    }

    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        if self.in_dim() <= self.out_dim() {
            self.jacobian_forward(x)
        } else {
            self.jacobian_reverse(x)
        }
    }

    /// `(f(x), J(x), d/de J(x + e v) at e = 0)` by forward-mode propagation of
    /// the Jacobian together with its directional derivative.
    pub fn jacobian_and_directional_derivative(&self, x: &[f64], v: &[f64]) -> (Vec<f64>, Matrix, Matrix) {
        debug_assert_eq!(v.len(), self.in_dim());
        let n_in = self.in_dim();
        let mut a = x.to_vec();
        let mut tangent = v.to_vec();
        let mut jac = Matrix::identity(n_in);
        let mut djac = Matrix::zeros(n_in, n_in);
        let mut z = Vec::new();
        for (l, s) in self.specs.iter().enumerate() {
            let w = self.weight_matrix(l);
            self.affine(l, &a, &mut z);
            let tz = w.matvec(&tangent).expect("layer chain");
            let jz = w.matmul(&jac).expect("layer chain");
            djac = w.matmul(&djac).expect("layer chain");
            jac = jz.clone();
            for r in 0..s.out_dim {
                let d1 = s.activation.derivative(z[r]);
                let d2 = s.activation.second_derivative(z[r]) * tz[r];
                jac.row_mut(r).iter_mut().for_each(|x| *x *= d1);
                let jz_row = jz.row(r);
                for (c, dj) in djac.row_mut(r).iter_mut().enumerate() {
                    *dj = d2 * jz_row[c] + d1 * *dj;
                }
            }
            tangent = z
                .iter()
                .zip(tz.iter())
                .map(|(zr, t)| s.activation.derivative(*zr) * t)
                .collect();
            a.clear();
            a.extend(z.iter().map(|v| s.activation.apply(*v)));
        }
        (a, jac, djac)
    }
}
