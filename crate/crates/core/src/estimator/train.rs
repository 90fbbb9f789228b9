//! Mini-batch Adam on mean squared error.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::io::f9;
use crate::rng::substream;

use super::mlp::{Activations, MlpModel};
use super::window::WindowSet;
use super::{EstimatorError, Result, OUTPUT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Training units per radian for the two angle outputs.
    pub angle_scale_per_rad: f64,
    /// Fraction of trajectories held out for the validation loss.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            angle_scale_per_rad: 10.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.angle_scale_per_rad.is_finite() && self.angle_scale_per_rad > 0.0) {
            return bad("angle scale must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    /// NaN when there is no validation set.
    pub val_mse: f64,
}

/// Splits trajectory indices into (train, validation) with a seeded shuffle.
pub fn split_trajectories(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut substream(seed, "split", 0));
    let n_val = if count < 2 { 0 } else { ((count as f64 * val_fraction).round() as usize).min(count - 1) };
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Per-feature mean and population sd; a zero sd is replaced by 1.
pub fn feature_stats(data: &WindowSet) -> (Vec<f64>, Vec<f64>) {
    let d = data.input_dim();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for s in data.iter() {
        for (m, v) in mean.iter_mut().zip(s.x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for s in data.iter() {
        for ((acc, v), m) in var.iter_mut().zip(s.x).zip(&mean) {
            *acc += (v - m).powi(2);
        }
    }
    let sd = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

struct Batch {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn fill_batch(model: &MlpModel, data: &WindowSet, idx: &[usize], batch: &mut Batch) {
    let d = data.input_dim();
    batch.x.clear();
    batch.y.clear();
    for &i in idx {
        let s = data.get(i);
        let (mean, sd) = (model.input_mean(), model.input_sd());
        batch.x.extend((0..d).map(|k| (s.x[k] - mean[k]) / sd[k]));
        batch.y.extend_from_slice(&model.scale_target(&s.y));
    }
}

/// Mean squared error in training units over a whole window set.
pub fn evaluate_mse(model: &MlpModel, data: &WindowSet, batch_size: usize) -> f64 {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Batch { x: Vec::new(), y: Vec::new() };
    let mut acts = Activations::default();
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        fill_batch(model, data, chunk, &mut batch);
        model.forward_batch(&batch.x, chunk.len(), &mut acts);
        total += model.output(&acts).iter().zip(&batch.y).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
    }
    total / (data.len() * OUTPUT_DIM) as f64
}

/// Trains a network of shape `dims` on `train`, reporting the loss on `val`
/// after each epoch. Normalization statistics come from `train` only.
///
/// Hidden layers start He-uniform; the linear head starts at zero weights
/// with its bias at the mean training label.
pub fn mlp_train(
    train: &WindowSet,
    val: Option<&WindowSet>,
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    if dims.first() != Some(&train.input_dim()) || dims.last() != Some(&OUTPUT_DIM) {
        return Err(EstimatorError::InvalidConfig(format!(
            "network dims {dims:?} do not fit {} inputs and {OUTPUT_DIM} outputs",
            train.input_dim()
        )));
    }
    let mut model = MlpModel::he_uniform(dims, cfg.angle_scale_per_rad, &mut substream(cfg.seed, "init", 0))?;
    let (mean, sd) = feature_stats(train);
    model.set_normalization(mean, sd)?;
    let mut label_mean = [0.0; OUTPUT_DIM];
    for s in train.iter() {
        for (m, v) in label_mean.iter_mut().zip(model.scale_target(&s.y)) {
            *m += v / train.len() as f64;
        }
    }
    if let Some(head) = model.layers_mut().last_mut() {
        head.biases.copy_from_slice(&label_mean);
        head.weights.iter_mut().for_each(|w| *w = 0.0);
    }

    let mut m_state = model.zero_gradients();
    let mut v_state = model.zero_gradients();
    let mut grads = model.zero_gradients();
    let mut acts = Activations::default();
    let mut batch = Batch { x: Vec::new(), y: Vec::new() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = substream(cfg.seed, "shuffle", 0);
    let mut step: i32 = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            fill_batch(&model, train, chunk, &mut batch);
            let loss = model.loss_and_backprop(&batch.x, &batch.y, chunk.len(), &mut acts, &mut grads);
            if !loss.is_finite() {
                return Err(EstimatorError::NanLoss { epoch, batch: b });
            }
            sum += loss * chunk.len() as f64;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            let lr = cfg.learning_rate;
            for (l, layer) in model.layers_mut().iter_mut().enumerate() {
                let params = [(&mut layer.weights, 0), (&mut layer.biases, 1)];
                for (p, kind) in params {
                    let (g, m, v) = if kind == 0 {
                        (&grads.weights[l], &mut m_state.weights[l], &mut v_state.weights[l])
                    } else {
                        (&grads.biases[l], &mut m_state.biases[l], &mut v_state.biases[l])
                    };
                    for i in 0..p.len() {
                        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                    }
                }
            }
        }
        let val_mse = match val {
            Some(v) if !v.is_empty() => evaluate_mse(&model, v, cfg.batch_size),
            _ => f64::NAN,
        };
        curve.push(EpochLoss { epoch, train_mse: sum / train.len() as f64, val_mse });
    }
    Ok((model, curve))
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_mse,val_mse";

pub fn write_loss_csv<W: Write>(mut w: W, curve: &[EpochLoss]) -> std::io::Result<()> {
    writeln!(w, "{LOSS_CSV_HEADER}")?;
    for e in curve {
        writeln!(w, "{},{},{}", e.epoch, f9(e.train_mse), f9(e.val_mse))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::window_dataset;
    use crate::estimator::Series;
    use crate::geometry::RelativePose;
    use crate::sensor::CapFrame;
    use rand::Rng;

    fn toy(n: usize, label: impl Fn(&[f64; 6]) -> RelativePose, seed: u64) -> WindowSet {
        let mut rng = substream(seed, "toy", 0);
        let frames: Vec<CapFrame> =
            (0..n).map(|t| CapFrame { t: t as u64, c: std::array::from_fn(|_| rng.gen_range(1.0..2.0)) }).collect();
        let poses: Vec<RelativePose> = frames.iter().map(|f| label(&f.c)).collect();
        window_dataset(&[Series { frames: &frames, poses: &poses }], 4).unwrap()
    }

    #[test]
    fn constant_labels_are_learned_quickly() {
        let data = toy(2000, |_| RelativePose::new(1.0, 5.0, 0.1, -0.2), 1);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let (model, curve) = mlp_train(&data, None, &[24, 400, 400, 400, 400, 4], &cfg).unwrap();
        assert!(curve.last().unwrap().train_mse < 1e-4, "{curve:?}");
        assert!(evaluate_mse(&model, &data, 128) < 1e-4);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(300, |c| RelativePose::new(c[0], c[1] * 2.0, 0.0, 0.1 * c[2]), 2);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 9, ..TrainConfig::default() };
        let (a, ca) = mlp_train(&data, Some(&data), &[24, 8, 4], &cfg).unwrap();
        let (b, cb) = mlp_train(&data, Some(&data), &[24, 8, 4], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(format!("{ca:?}"), format!("{cb:?}"));
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let data = toy(10, |_| RelativePose::default(), 3);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(mlp_train(&data, None, &[24, 4], &cfg), Err(EstimatorError::InvalidConfig(_))));
        let cfg = TrainConfig::default();
        assert!(matches!(mlp_train(&data, None, &[25, 4], &cfg), Err(EstimatorError::InvalidConfig(_))));
        assert!(matches!(
            mlp_train(&WindowSet::default(), None, &[24, 4], &cfg),
            Err(EstimatorError::EmptyDataset)
        ));
    }

    #[test]
    fn nan_loss_is_reported() {
        let data = toy(50, |_| RelativePose::new(f64::NAN, 0.0, 0.0, 0.0), 4);
        let r = mlp_train(&data, None, &[24, 4], &TrainConfig::default());
        assert!(matches!(r, Err(EstimatorError::NanLoss { epoch: 1, batch: 0 })));
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (t, v) = split_trajectories(60, 0.1, 5);
        assert_eq!(v.len(), 6);
        assert_eq!(t.len() + v.len(), 60);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_trajectories(1, 0.1, 5), (vec![0], vec![]));
    }

    #[test]
    fn loss_csv_layout() {
        let mut out = Vec::new();
        write_loss_csv(&mut out, &[EpochLoss { epoch: 1, train_mse: 0.5, val_mse: f64::NAN }]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_mse,val_mse\n1,0.5,NaN\n");
    }
}
