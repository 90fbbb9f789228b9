//! Pose-error summaries.

use crate::geometry::{wrap_angle, RelativePose};

use super::{EstimatorError, Result};

/// Mean absolute errors over a set of predictions. Lengths in cm, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrorSummary {
    pub count: usize,
    /// Mean of ½(|ΔD_y| + |ΔD_z|).
    pub d_eps_cm: f64,
    /// Mean of ½(|Δθ_y| + |Δθ_z|).
    pub theta_eps_deg: f64,
    /// Per-axis MAE: D_y, D_z (cm), θ_y, θ_z (deg).
    pub mae: [f64; 4],
    /// Per-axis population sd of the absolute error, same units.
    pub sd: [f64; 4],
}

/// Absolute per-axis errors in reporting units (cm, cm, deg, deg).
pub fn abs_errors(pred: &RelativePose, truth: &RelativePose) -> [f64; 4] {
    [
        (pred.dy - truth.dy).abs(),
        (pred.dz - truth.dz).abs(),
        wrap_angle(pred.theta_y - truth.theta_y).abs().to_degrees(),
        wrap_angle(pred.theta_z - truth.theta_z).abs().to_degrees(),
    ]
}

pub fn pose_errors(pred: &[RelativePose], truth: &[RelativePose]) -> Result<PoseErrorSummary> {
    if pred.len() != truth.len() {
        return Err(EstimatorError::LengthMismatch { frames: pred.len(), poses: truth.len() });
    }
    if pred.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let n = pred.len() as f64;
    let errs: Vec<[f64; 4]> = pred.iter().zip(truth).map(|(p, t)| abs_errors(p, t)).collect();
    let mut mae = [0.0; 4];
    for e in &errs {
        for k in 0..4 {
            mae[k] += e[k];
        }
    }
    mae.iter_mut().for_each(|m| *m /= n);
    let mut sd = [0.0; 4];
    for e in &errs {
        for k in 0..4 {
            sd[k] += (e[k] - mae[k]).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    Ok(PoseErrorSummary {
        count: pred.len(),
        d_eps_cm: 0.5 * (mae[0] + mae[1]),
        theta_eps_deg: 0.5 * (mae[2] + mae[3]),
        mae,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_errors() {
        let truth = [RelativePose::new(0.0, 5.0, 0.0, 0.0), RelativePose::new(1.0, 4.0, 0.1, -0.1)];
        let pred = [RelativePose::new(1.0, 5.0, 0.0, 0.0), RelativePose::new(1.0, 2.0, 0.1, 0.1)];
        let s = pose_errors(&pred, &truth).unwrap();
        assert_eq!(s.mae[0], 0.5);
        assert_eq!(s.mae[1], 1.0);
        assert_eq!(s.d_eps_cm, 0.75);
        assert!((s.mae[3] - 0.2f64.to_degrees() / 2.0).abs() < 1e-12);
        assert_eq!(s.sd[0], 0.5);
    }

    #[test]
    fn perfect_predictions_are_zero() {
        let p = [RelativePose::new(1.0, 2.0, 0.3, -0.4); 3];
        let s = pose_errors(&p, &p).unwrap();
        assert_eq!((s.d_eps_cm, s.theta_eps_deg, s.mae, s.sd), (0.0, 0.0, [0.0; 4], [0.0; 4]));
    }

    #[test]
    fn angle_error_wraps() {
        let a = RelativePose::new(0.0, 0.0, 3.1, 0.0);
        let b = RelativePose::new(0.0, 0.0, -3.1, 0.0);
        assert!(abs_errors(&a, &b)[2] < 5.0);
    }

    #[test]
    fn mismatched_lengths_fail() {
        let p = [RelativePose::default()];
        assert!(pose_errors(&p, &[]).is_err());
        assert!(pose_errors(&[], &[]).is_err());
    }
}
