//! Fully connected ReLU network with a linear head.
//!
//! Weights are row-major `out × in`. Inputs are z-scored with frozen
//! per-feature statistics; the last two outputs are angles multiplied by
//! `angle_scale` during training and divided by it on the way out.

use rand::Rng;

use crate::geometry::RelativePose;

use super::{EstimatorError, Result, OUTPUT_DIM};

/// 300 inputs, four hidden layers of 400, four outputs.
pub const POSE_NET_DIMS: [usize; 6] = [300, 400, 400, 400, 400, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    input_mean: Vec<f64>,
    input_sd: Vec<f64>,
    angle_scale: f64,
}

/// Parameter gradients, laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer outputs of a batched forward pass.
#[derive(Debug, Default)]
pub(crate) struct Activations {
    batch: usize,
    outputs: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

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
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, rsa, csa));
    assert!(b.len() >= last(k, n, rsb, csb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (it is a distinct &mut).
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

impl MlpModel {
    /// Zero weights and biases, identity normalization.
    pub fn zeros(dims: &[usize], angle_scale: f64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|d| *d == 0) {
            return Err(EstimatorError::InvalidModel(format!("bad layer dims {dims:?}")));
        }
        if !(angle_scale.is_finite() && angle_scale > 0.0) {
            return Err(EstimatorError::InvalidModel(format!("angle scale must be positive, got {angle_scale}")));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            input_mean: vec![0.0; dims[0]],
            input_sd: vec![1.0; dims[0]],
            angle_scale,
        })
    }

    /// He-style uniform initialization, `U(±sqrt(6 / fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], angle_scale: f64, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(dims, angle_scale)?;
        for layer in &mut m.layers {
            let limit = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub(crate) fn from_parts(
        dims: Vec<usize>,
        layers: Vec<Layer>,
        input_mean: Vec<f64>,
        input_sd: Vec<f64>,
        angle_scale: f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(&dims, angle_scale)?;
        if layers.len() != m.layers.len()
            || layers.iter().zip(&m.layers).any(|(a, b)| {
                a.in_dim != b.in_dim
                    || a.out_dim != b.out_dim
                    || a.weights.len() != b.weights.len()
                    || a.biases.len() != b.biases.len()
            })
        {
            return Err(EstimatorError::InvalidModel("layer shapes do not match dims".into()));
        }
        m.layers = layers;
        m.set_normalization(input_mean, input_sd)?;
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_sd(&self) -> &[f64] {
        &self.input_sd
    }

    pub fn angle_scale(&self) -> f64 {
        self.angle_scale
    }

    pub fn is_pose_network(&self) -> bool {
        self.dims == POSE_NET_DIMS
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, sd: Vec<f64>) -> Result<()> {
        if mean.len() != self.input_dim() || sd.len() != self.input_dim() {
            return Err(EstimatorError::InvalidModel("normalization length differs from input width".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) || sd.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EstimatorError::InvalidModel("normalization stats must be finite with sd > 0".into()));
        }
        self.input_mean = mean;
        self.input_sd = sd;
        Ok(())
    }

    /// Applies the frozen z-scoring to a batch of raw inputs.
    pub(crate) fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let d = self.input_dim();
        out.clear();
        out.extend(x.iter().enumerate().map(|(i, v)| (v - self.input_mean[i % d]) / self.input_sd[i % d]));
    }

    pub(crate) fn forward_batch(&self, x_norm: &[f64], batch: usize, acts: &mut Activations) {
        acts.batch = batch;
        acts.outputs.resize_with(self.layers.len(), Vec::new);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = acts.outputs.split_at_mut(l);
            let input: &[f64] = if l == 0 { x_norm } else { &before[l - 1] };
            let out = &mut rest[0];
            out.clear();
            out.reserve(batch * layer.out_dim);
            for _ in 0..batch {
                out.extend_from_slice(&layer.biases);
            }
            gemm(batch, layer.in_dim, layer.out_dim, input, (layer.in_dim, 1), &layer.weights, (1, layer.in_dim), 1.0, out);
            if l != last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
    }

    pub(crate) fn output<'a>(&self, acts: &'a Activations) -> &'a [f64] {
        acts.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Backpropagates `d_out` (batch × outputs) into `grads` (overwritten).
    pub(crate) fn backward_batch(&self, x_norm: &[f64], acts: &mut Activations, d_out: &[f64], grads: &mut Gradients) {
        let batch = acts.batch;
        acts.delta.clear();
        acts.delta.extend_from_slice(d_out);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { x_norm } else { &acts.outputs[l - 1] };
            let delta = &acts.delta;
            // dW = deltaᵀ · input
            gemm(layer.out_dim, batch, layer.in_dim, delta, (1, layer.out_dim), input, (layer.in_dim, 1), 0.0, &mut grads.weights[l]);
            let db = &mut grads.biases[l];
            db.iter_mut().for_each(|v| *v = 0.0);
            for row in delta.chunks_exact(layer.out_dim) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                acts.delta_prev.clear();
                acts.delta_prev.resize(batch * layer.in_dim, 0.0);
                gemm(batch, layer.out_dim, layer.in_dim, delta, (layer.out_dim, 1), &layer.weights, (layer.in_dim, 1), 0.0, &mut acts.delta_prev);
                for (d, a) in acts.delta_prev.iter_mut().zip(&acts.outputs[l - 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut acts.delta, &mut acts.delta_prev);
            }
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Scales a label into training units (angles × `angle_scale`).
    pub fn scale_target(&self, p: &RelativePose) -> [f64; OUTPUT_DIM] {
        [p.dy, p.dz, p.theta_y * self.angle_scale, p.theta_z * self.angle_scale]
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_dim() {
            return Err(EstimatorError::InputWidth { got: x.len(), expected: batch * self.input_dim() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFiniteInput);
        }
        Ok(())
    }

    /// Network output in training units for a batch of raw inputs.
    pub fn forward_raw(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let mut xn = Vec::new();
        self.normalize_into(x, &mut xn);
        let mut acts = Activations::default();
        self.forward_batch(&xn, batch, &mut acts);
        Ok(self.output(&acts).to_vec())
    }

    /// Pose estimate for one window of raw capacitance values.
    pub fn forward(&self, x: &[f64]) -> Result<RelativePose> {
        Ok(self.predict_batch(x, 1)?[0])
    }

    pub fn predict_batch(&self, x: &[f64], batch: usize) -> Result<Vec<RelativePose>> {
        if self.output_dim() != OUTPUT_DIM {
            return Err(EstimatorError::InvalidModel(format!("pose head needs {OUTPUT_DIM} outputs")));
        }
        let out = self.forward_raw(x, batch)?;
        Ok(out
            .chunks_exact(OUTPUT_DIM)
            .map(|o| RelativePose::new(o[0], o[1], o[2] / self.angle_scale, o[3] / self.angle_scale))
            .collect())
    }

    /// Mean squared error over all outputs of a batch; `targets` in training units.
    pub fn mse(&self, x: &[f64], targets: &[f64], batch: usize) -> Result<f64> {
        let out = self.forward_raw(x, batch)?;
        Ok(out.iter().zip(targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / out.len() as f64)
    }

    /// MSE and its gradient with respect to every weight and bias.
    pub fn mse_gradients(&self, x: &[f64], targets: &[f64], batch: usize) -> Result<(f64, Gradients)> {
        self.check_input(x, batch)?;
        let mut xn = Vec::new();
        self.normalize_into(x, &mut xn);
        let mut acts = Activations::default();
        let mut grads = self.zero_gradients();
        let loss = self.loss_and_backprop(&xn, targets, batch, &mut acts, &mut grads);
        Ok((loss, grads))
    }

    pub(crate) fn loss_and_backprop(
        &self,
        x_norm: &[f64],
        targets: &[f64],
        batch: usize,
        acts: &mut Activations,
        grads: &mut Gradients,
    ) -> f64 {
        self.forward_batch(x_norm, batch, acts);
        let out = self.output(acts);
        let n = out.len() as f64;
        let mut loss = 0.0;
        let d_out: Vec<f64> = out
            .iter()
            .zip(targets)
            .map(|(o, t)| {
                let r = o - t;
                loss += r * r;
                2.0 * r / n
            })
            .collect();
        self.backward_batch(x_norm, acts, &d_out, grads);
        loss / n
    }
}
