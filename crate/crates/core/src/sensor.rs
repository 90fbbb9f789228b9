//! Synthetic forward model of the 3×2 electrode array.
//!
//! Each electrode is split into a grid of square patches. A patch at clearance
//! `d` from the limb contributes `area / max(d, near_field)`; patches beyond the
//! range cutoff contribute nothing. Electrode totals are scaled by the gain,
//! offset by the baseline, mixed by crosstalk and finally perturbed by
//! Gaussian noise.
//!
//! Electrode order, in the plate frame (`x` forward, `y` left):
//!
//! ```text
//!   0: top-left     1: top-center     2: top-right      (x = +pitch_long / 2)
//!   3: bottom-left  4: bottom-center  5: bottom-right   (x = -pitch_long / 2)
//! ```

use std::io::{BufRead, Write};

use nalgebra::Rotation3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EePose, LimbModel, LimbSegment, RelativePose, Vec3};
use crate::io::{f9, parse_numeric_row};

pub const ELECTRODE_COUNT: usize = 6;

/// Pairs of electrodes exchanged by a left/right reflection.
pub const MIRROR_PAIRS: [(usize, usize); 2] = [(0, 2), (3, 5)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("sensor patch in contact with the limb (clearance {clearance:.4} cm)")]
    Contact { clearance: f64 },
    #[error("invalid sensor configuration: {0}")]
    InvalidSpec(String),
    #[error("frame csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, SensorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorArraySpec {
    pub electrode_size_cm: f64,
    /// Plate extent across the columns (`y`).
    pub plate_width_cm: f64,
    /// Plate extent along the rows (`x`).
    pub plate_length_cm: f64,
    pub pitch_lateral_cm: f64,
    pub pitch_longitudinal_cm: f64,
    /// Plate centre in the end-effector frame.
    pub mount_offset_cm: [f64; 3],
}

impl Default for SensorArraySpec {
    fn default() -> Self {
        Self {
            electrode_size_cm: 3.0,
            plate_width_cm: 11.5,
            plate_length_cm: 8.5,
            pitch_lateral_cm: 3.75,
            pitch_longitudinal_cm: 4.5,
            mount_offset_cm: [0.0; 3],
        }
    }
}

impl SensorArraySpec {
    pub fn validate(&self) -> Result<()> {
        let half = self.electrode_size_cm / 2.0;
        let all_positive = [
            self.electrode_size_cm,
            self.plate_width_cm,
            self.plate_length_cm,
            self.pitch_lateral_cm,
            self.pitch_longitudinal_cm,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(SensorError::InvalidSpec("sizes and pitches must be positive".into()));
        }
        if self.pitch_lateral_cm + half > self.plate_width_cm / 2.0
            || self.pitch_longitudinal_cm / 2.0 + half > self.plate_length_cm / 2.0
        {
            return Err(SensorError::InvalidSpec("electrodes do not fit on the plate".into()));
        }
        if self.pitch_lateral_cm < self.electrode_size_cm || self.pitch_longitudinal_cm < self.electrode_size_cm {
            return Err(SensorError::InvalidSpec("electrodes overlap".into()));
        }
        Ok(())
    }

    /// Electrode centres in the plate frame, in canonical order.
    pub fn electrode_offsets(&self) -> [Vec3; ELECTRODE_COUNT] {
        let (x, y) = (self.pitch_longitudinal_cm / 2.0, self.pitch_lateral_cm);
        [
            Vec3::new(x, y, 0.0),
            Vec3::new(x, 0.0, 0.0),
            Vec3::new(x, -y, 0.0),
            Vec3::new(-x, y, 0.0),
            Vec3::new(-x, 0.0, 0.0),
            Vec3::new(-x, -y, 0.0),
        ]
    }

    /// Plate-centre pose for an end-effector pose.
    pub fn plate_pose(&self, ee: &EePose) -> EePose {
        EePose { position: ee.transform_point(&Vec3::from(self.mount_offset_cm)), ..*ee }
    }
}

/// World positions of the electrode centres and the direction the plate faces.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    pub centers: [Vec3; ELECTRODE_COUNT],
    pub normal: Vec3,
}

pub fn electrode_centers(spec: &SensorArraySpec, ee: &EePose) -> ElectrodeLayout {
    let plate = spec.plate_pose(ee);
    let rot = plate.rotation();
    let centers = spec.electrode_offsets().map(|o| plate.position + rot * o);
    ElectrodeLayout { centers, normal: rot * -Vec3::z() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapModelParams {
    pub gain: f64,
    pub baseline: f64,
    pub noise_sd: f64,
    pub crosstalk: f64,
    pub patch_resolution: usize,
    pub range_cutoff_cm: f64,
    pub near_field_cm: f64,
}

impl Default for CapModelParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            baseline: 1.0,
            noise_sd: 0.0,
            crosstalk: 0.05,
            patch_resolution: 6,
            range_cutoff_cm: 40.0,
            near_field_cm: 0.3,
        }
    }
}

/// Noise level as a fraction of the reference reading.
pub const NOISE_FRACTION: f64 = 0.005;
/// Reference reading: sensor 5 cm above a 3 cm-radius cylinder.
pub const NOISE_REFERENCE_HEIGHT_CM: f64 = 5.0;
pub const NOISE_REFERENCE_RADIUS_CM: f64 = 3.0;

impl CapModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gain.is_finite()
            && self.gain >= 0.0
            && self.baseline >= 0.0
            && self.noise_sd >= 0.0
            && (0.0..=0.2).contains(&self.crosstalk)
            && self.patch_resolution >= 1
            && self.range_cutoff_cm > 0.0
            && self.near_field_cm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SensorError::InvalidSpec(format!("invalid capacitance model parameters: {self:?}")))
        }
    }

    /// Same parameters with `noise_sd` set to [`NOISE_FRACTION`] of the mean
    /// noise-free reading at the reference pose.
    pub fn calibrated(mut self, spec: &SensorArraySpec) -> Self {
        let seg = LimbSegment::cylinder(Vec3::new(-50.0, 0.0, 0.0), Vec3::x(), 100.0, NOISE_REFERENCE_RADIUS_CM)
            .expect("reference cylinder is valid");
        let limb = LimbModel::straight(seg);
        let ee = limb
            .place_sensor(0, 50.0, &RelativePose::new(0.0, NOISE_REFERENCE_HEIGHT_CM, 0.0, 0.0), 0.0, 0.0)
            .expect("reference pose is valid");
        let c = noise_free_readings(spec, &self, &limb, &ee, 0.0, ContactPolicy::Reject)
            .expect("reference pose is clear of the limb");
        self.noise_sd = NOISE_FRACTION * c.iter().sum::<f64>() / ELECTRODE_COUNT as f64;
        self
    }
}

/// An electrode array together with its capacitance model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRig {
    pub array: SensorArraySpec,
    pub model: CapModelParams,
}

impl SensorRig {
    /// Default array with noise calibrated at the reference pose.
    pub fn calibrated_default() -> Self {
        let array = SensorArraySpec::default();
        let model = CapModelParams::default().calibrated(&array);
        Self { array, model }
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.model.validate()
    }

    pub fn min_clearance(&self, limb: &LimbModel, ee: &EePose, t: f64) -> f64 {
        min_patch_clearance(&self.array, &self.model, limb, ee, t)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn read<R: Rng + ?Sized>(
        &self,
        limb: &LimbModel,
        ee: &EePose,
        t: f64,
        step: u64,
        policy: ContactPolicy,
        rng: &mut R,
    ) -> Result<CapFrame> {
        simulate_capacitance(&self.array, &self.model, limb, ee, t, step, policy, rng)
    }
}

/// One timestamped reading of all six electrodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapFrame {
    pub t: u64,
    pub c: [f64; ELECTRODE_COUNT],
}

/// How patch clearances at or below zero are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPolicy {
    /// Fail with [`SensorError::Contact`].
    Reject,
    /// Treat the patch as sitting at the near-field clamp.
    Saturate,
}

/// Patch-centre offsets along one electrode edge, exactly antisymmetric.
fn patch_offsets(size: f64, n: usize) -> Vec<f64> {
    let w = size / n as f64;
    (0..n).map(|j| (2.0 * j as f64 + 1.0 - n as f64) * (w / 2.0)).collect()
}

/// Lowest clearance over all patch centres, for contact monitoring.
pub fn min_patch_clearance(
    spec: &SensorArraySpec,
    params: &CapModelParams,
    limb: &LimbModel,
    ee: &EePose,
    t: f64,
) -> f64 {
    let plate = spec.plate_pose(ee);
    let rot = plate.rotation();
    let offs = patch_offsets(spec.electrode_size_cm, params.patch_resolution);
    let mut min = f64::INFINITY;
    for e in spec.electrode_offsets() {
        for &ox in &offs {
            for &oy in &offs {
                let p = plate.position + rot * Vec3::new(e.x + ox, e.y + oy, 0.0);
                min = min.min(limb.signed_clearance(&p, t));
            }
        }
    }
    min
}

/// Electrode values after gain, baseline and crosstalk, without noise.
pub fn noise_free_readings(
    spec: &SensorArraySpec,
    params: &CapModelParams,
    limb: &LimbModel,
    ee: &EePose,
    t: f64,
    policy: ContactPolicy,
) -> Result<[f64; ELECTRODE_COUNT]> {
    let plate = spec.plate_pose(ee);
    let rot: Rotation3<f64> = plate.rotation();
    let n = params.patch_resolution;
    let offs = patch_offsets(spec.electrode_size_cm, n);
    let area = (spec.electrode_size_cm / n as f64).powi(2);

    let contribution = |p: Vec3| -> Result<f64> {
        let d = limb.signed_clearance(&p, t);
        if d <= 0.0 {
            return match policy {
                ContactPolicy::Reject => Err(SensorError::Contact { clearance: d }),
                ContactPolicy::Saturate => Ok(area / params.near_field_cm),
            };
        }
        if d > params.range_cutoff_cm {
            return Ok(0.0);
        }
        Ok(area / d.max(params.near_field_cm))
    };

    let mut raw = [0.0; ELECTRODE_COUNT];
    for (slot, e) in raw.iter_mut().zip(spec.electrode_offsets()) {
        let patch = |ox: f64, oy: f64| contribution(plate.position + rot * Vec3::new(e.x + ox, e.y + oy, 0.0));
        let mut sum = 0.0;
        for &ox in &offs {
            // Lateral mirror pairs are added first so a reflected scene sums
            // the same operands and reproduces the totals bit for bit.
            for j in 0..n / 2 {
                sum += patch(ox, offs[j])? + patch(ox, offs[n - 1 - j])?;
            }
            if n % 2 == 1 {
                sum += patch(ox, offs[n / 2])?;
            }
        }
        *slot = params.baseline + params.gain * sum;
    }
    Ok(apply_crosstalk(raw, params.crosstalk))
}

/// `c ← (1-κ)c + κ·mean(c)`, summed in mirror-symmetric order.
pub fn apply_crosstalk(c: [f64; ELECTRODE_COUNT], kappa: f64) -> [f64; ELECTRODE_COUNT] {
    let total = ((c[0] + c[2]) + (c[3] + c[5])) + (c[1] + c[4]);
    let mean = total / ELECTRODE_COUNT as f64;
    c.map(|v| (1.0 - kappa) * v + kappa * mean)
}

/// One noisy capacitance frame at step `step` (virtual time `t` seconds).
#[allow(clippy::too_many_arguments)]
pub fn simulate_capacitance<R: Rng + ?Sized>(
    spec: &SensorArraySpec,
    params: &CapModelParams,
    limb: &LimbModel,
    ee: &EePose,
    t: f64,
    step: u64,
    policy: ContactPolicy,
    rng: &mut R,
) -> Result<CapFrame> {
    let mut c = noise_free_readings(spec, params, limb, ee, t, policy)?;
    if params.noise_sd > 0.0 {
        let normal = Normal::new(0.0, params.noise_sd).expect("noise sd is finite and non-negative");
        for v in &mut c {
            *v += normal.sample(rng);
        }
    }
    for v in &mut c {
        *v = v.max(0.0);
    }
    Ok(CapFrame { t: step, c })
}

/// Plot-only smoothing: a one-pole low-pass `y_t = 0.98 y_{t-1} + 0.02 x_t`
/// seeded with the first sample, then per-electrode min-max normalization.
/// A flat electrode trace is returned unnormalized.
pub fn smooth_for_plotting(frames: &[CapFrame]) -> Vec<[f64; ELECTRODE_COUNT]> {
    let mut out: Vec<[f64; ELECTRODE_COUNT]> = Vec::with_capacity(frames.len());
    let Some(first) = frames.first() else {
        return out;
    };
    let mut y = first.c;
    out.push(y);
    for f in &frames[1..] {
        for (yi, xi) in y.iter_mut().zip(f.c) {
            *yi = 0.98 * *yi + 0.02 * xi;
        }
        out.push(y);
    }
    for e in 0..ELECTRODE_COUNT {
        let (lo, hi) = out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[e]), hi.max(r[e])));
        if hi - lo > 1e-12 * hi.abs().max(1.0) {
            for r in &mut out {
                r[e] = (r[e] - lo) / (hi - lo);
            }
        }
    }
    out
}

pub const FRAME_CSV_HEADER: &str = "t,c1,c2,c3,c4,c5,c6";

pub fn write_frames_csv<W: Write>(mut w: W, frames: &[CapFrame]) -> std::io::Result<()> {
    writeln!(w, "{FRAME_CSV_HEADER}")?;
    for f in frames {
        write!(w, "{}", f.t)?;
        for v in f.c {
            write!(w, ",{}", f9(v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_frames_csv<R: BufRead>(r: R) -> Result<Vec<CapFrame>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == FRAME_CSV_HEADER => {}
        _ => return Err(SensorError::Csv(format!("missing header {FRAME_CSV_HEADER:?}"))),
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| SensorError::Csv(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_numeric_row(&line, 7, i + 2).map_err(SensorError::Csv)?;
        let mut c = [0.0; ELECTRODE_COUNT];
        c.copy_from_slice(&v[1..]);
        frames.push(CapFrame { t: v[0] as u64, c });
    }
    Ok(frames)
}
