//! The servo loop: capacitance capture at `τ_d`, PD control at `τ_u`, a
//! constant forward advance along the end-effector x axis, and a contact
//! force monitor.
//!
//! Each control update commands an increment `(v_x/τ_u, u_y, u_z)` in the
//! end-effector frame and `(u_θy, u_θz)` on pitch and yaw. The end effector
//! reaches the commanded pose by linear interpolation over the following
//! `τ_d/τ_u` capture frames.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{MlpModel, WINDOW_LEN};
use crate::geometry::{wrap_angle, EePose, LimbModel, RelativePose, Vec3};
use crate::io::f9;
use crate::sensor::{CapFrame, ContactPolicy, SensorError, SensorRig, ELECTRODE_COUNT};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

pub type Result<T> = std::result::Result<T, ControlError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub kp: [f64; 4],
    pub kd: [f64; 4],
}

impl Default for Gains {
    fn default() -> Self {
        Self { kp: [0.025, 0.025, 0.1, 0.1], kd: [0.0125, 0.0125, 0.025, 0.025] }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        if self.kp.iter().chain(&self.kd).all(|g| g.is_finite() && *g >= 0.0) {
            Ok(())
        } else {
            Err(ControlError::InvalidConfig("gains must be finite and non-negative".into()))
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { kp: self.kp.map(|g| g * factor), kd: self.kd.map(|g| g * factor) }
    }
}

/// `u = K_p∘e + K_d∘ė`.
pub fn pd_action(e: &[f64; 4], e_dot: &[f64; 4], gains: &Gains) -> [f64; 4] {
    std::array::from_fn(|i| gains.kp[i] * e[i] + gains.kd[i] * e_dot[i])
}

/// Backward difference of the two most recent errors, per second.
/// Returns zero with fewer than two samples.
pub fn estimate_velocity(history: &[[f64; 4]], control_rate_hz: f64) -> [f64; 4] {
    match history {
        [.., prev, last] => std::array::from_fn(|i| (last[i] - prev[i]) * control_rate_hz),
        _ => [0.0; 4],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    /// Desired pose `(D_y, D_z, θ_y, θ_z)` in cm and rad.
    #[serde(rename = "p_desired_cm_rad")]
    pub p_desired: [f64; 4],
    /// Forward speed along the end-effector x axis; negative moves backward.
    pub v_x_cm_s: f64,
    pub capture_rate_hz: f64,
    pub control_rate_hz: f64,
    pub force_limit_n: f64,
    pub contact_stiffness_n_per_cm: f64,
    /// Forward travel after which the run ends.
    pub run_length_cm: f64,
    /// Sensor-centre clearance beyond which tracking is declared lost.
    pub lost_range_cm: f64,
    pub window_len: usize,
    pub gains: Gains,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            p_desired: [0.0, 5.0, 0.0, 0.0],
            v_x_cm_s: 2.0,
            capture_rate_hz: 100.0,
            control_rate_hz: 10.0,
            force_limit_n: 10.0,
            contact_stiffness_n_per_cm: 50.0,
            run_length_cm: 40.0,
            lost_range_cm: 25.0,
            window_len: WINDOW_LEN,
            gains: Gains::default(),
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ControlError::InvalidConfig(m.to_string()));
        self.gains.validate()?;
        if !(self.capture_rate_hz > 0.0 && self.control_rate_hz > 0.0) {
            return bad("rates must be positive");
        }
        let ratio = self.capture_rate_hz / self.control_rate_hz;
        if ratio.fract() != 0.0 || ratio < 1.0 {
            return bad("capture rate must be a whole multiple of the control rate");
        }
        if !self.v_x_cm_s.is_finite() || self.v_x_cm_s == 0.0 {
            return bad("v_x_cm_s must be finite and non-zero");
        }
        if !(self.run_length_cm > 0.0 && self.force_limit_n > 0.0 && self.contact_stiffness_n_per_cm > 0.0) {
            return bad("run length, force limit and stiffness must be positive");
        }
        if !(self.lost_range_cm > 0.0) || self.window_len == 0 {
            return bad("lost range and window length must be positive");
        }
        if self.p_desired.iter().any(|v| !v.is_finite()) {
            return bad("p_desired must be finite");
        }
        Ok(())
    }

    /// Capture frames per control update.
    pub fn frames_per_control(&self) -> u64 {
        (self.capture_rate_hz / self.control_rate_hz).round() as u64
    }

    /// Control updates needed to cover the run length.
    pub fn control_steps(&self) -> usize {
        (self.run_length_cm / (self.v_x_cm_s.abs() / self.control_rate_hz)).ceil() as usize
    }
}

/// Source of pose estimates for the controller.
pub trait PoseEstimator {
    /// `window` holds the most recent frames, oldest first, flattened
    /// time-major. `truth` is the ground-truth pose when it is defined; only
    /// test stubs may look at it. `None` means no estimate this step.
    fn estimate(&mut self, window: &[f64], truth: Option<&RelativePose>) -> Option<RelativePose>;
}

pub struct MlpEstimator<'a> {
    pub model: &'a MlpModel,
}

impl PoseEstimator for MlpEstimator<'_> {
    fn estimate(&mut self, window: &[f64], _truth: Option<&RelativePose>) -> Option<RelativePose> {
        self.model.forward(window).ok()
    }
}

/// Returns the true pose.
pub struct TruePoseStub;

impl PoseEstimator for TruePoseStub {
    fn estimate(&mut self, _window: &[f64], truth: Option<&RelativePose>) -> Option<RelativePose> {
        truth.copied()
    }
}

/// Returns the true pose plus a constant offset.
pub struct BiasedStub {
    pub bias: RelativePose,
}

impl PoseEstimator for BiasedStub {
    fn estimate(&mut self, _window: &[f64], truth: Option<&RelativePose>) -> Option<RelativePose> {
        truth.map(|p| {
            RelativePose::new(
                p.dy + self.bias.dy,
                p.dz + self.bias.dz,
                p.theta_y + self.bias.theta_y,
                p.theta_z + self.bias.theta_z,
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    LostTrack,
    ContactHalt,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::LostTrack => "lost_track",
            Outcome::ContactHalt => "contact_halt",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One control step of a run (or the frame at which the run halted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub t_s: f64,
    pub ee: EePose,
    /// Estimate; NaN when none was available.
    pub estimate: [f64; 4],
    /// Ground truth; NaN where the relative pose is undefined.
    pub truth: [f64; 4],
    pub action: [f64; 4],
    /// Signed clearance of the plate centre.
    pub clearance: f64,
    pub force_n: f64,
    pub contact: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServoLog {
    pub rows: Vec<LogRow>,
}

pub const SERVO_LOG_HEADER: &str =
    "step,t_s,x,y,z,tx,ty,tz,dy_hat,dz_hat,thy_hat,thz_hat,dy,dz,thy,thz,uy,uz,uty,utz,clearance,force,contact";

impl ServoLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SERVO_LOG_HEADER}")?;
        for r in &self.rows {
            write!(w, "{},{}", r.step, f9(r.t_s))?;
            let p = r.ee.position;
            for v in [p.x, p.y, p.z, r.ee.roll, r.ee.pitch, r.ee.yaw] {
                write!(w, ",{}", f9(v))?;
            }
            for v in r.estimate.iter().chain(&r.truth).chain(&r.action) {
                write!(w, ",{}", f9(*v))?;
            }
            writeln!(w, ",{},{},{}", f9(r.clearance), f9(r.force_n), u8::from(r.contact))?;
        }
        Ok(())
    }

    /// Parses a log written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::BufRead>(r: R) -> std::result::Result<Self, String> {
        let mut lines = r.lines();
        let header = lines.next().ok_or("empty log")?.map_err(|e| e.to_string())?;
        if header.trim() != SERVO_LOG_HEADER {
            return Err(format!("unexpected log header {header:?}"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let v = crate::io::parse_numeric_row(&line, 23, i + 2)?;
            let a = |k: usize| [v[k], v[k + 1], v[k + 2], v[k + 3]];
            rows.push(LogRow {
                step: v[0] as usize,
                t_s: v[1],
                ee: EePose { position: Vec3::new(v[2], v[3], v[4]), roll: v[5], pitch: v[6], yaw: v[7] },
                estimate: a(8),
                truth: a(12),
                action: a(16),
                clearance: v[20],
                force_n: v[21],
                contact: v[22] != 0.0,
            });
        }
        Ok(Self { rows })
    }
}

/// What a run must achieve to count as a success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessCriteria {
    /// Mean clearance over the final fraction of control steps must stay below this.
    pub max_final_clearance_cm: f64,
    pub final_fraction: f64,
    /// Segment the sensor must end over, and how far past the joint along it.
    pub target_segment: Option<usize>,
    pub min_progress_past_joint_cm: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self { max_final_clearance_cm: 8.0, final_fraction: 0.1, target_segment: None, min_progress_past_joint_cm: 5.0 }
    }
}

/// Mean clearance over the last `fraction` of rows (at least one row).
pub fn final_mean_clearance(log: &ServoLog, fraction: f64) -> f64 {
    let n = log.rows.len();
    if n == 0 {
        return f64::NAN;
    }
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    log.rows[n - k..].iter().map(|r| r.clearance).sum::<f64>() / k as f64
}

/// Distance of `p` past the joint along segment `seg`, or `None` when `p`
/// is nearer another segment.
pub fn progress_past_joint(limb: &LimbModel, seg: usize, p: &Vec3, t: f64) -> Option<f64> {
    if limb.segments().len() < 2 || limb.nearest_segment(p, t) != seg {
        return None;
    }
    let segs = limb.segments_at(t);
    let s = &segs[seg];
    let a = s.axial_coordinate(p);
    Some(if seg == 0 { s.length() - a } else { a })
}

/// Outcome of a finished log; depends only on the log, the limb and the criteria.
pub fn classify(log: &ServoLog, limb: &LimbModel, criteria: &SuccessCriteria) -> Outcome {
    let Some(last) = log.rows.last() else {
        return Outcome::LostTrack;
    };
    if log.rows.iter().any(|r| r.contact) {
        return Outcome::ContactHalt;
    }
    let close = final_mean_clearance(log, criteria.final_fraction) < criteria.max_final_clearance_cm;
    let past = match criteria.target_segment {
        None => true,
        Some(seg) => progress_past_joint(limb, seg, &last.ee.position, last.t_s)
            .is_some_and(|d| d >= criteria.min_progress_past_joint_cm),
    };
    if close && past {
        Outcome::Success
    } else {
        Outcome::LostTrack
    }
}

#[derive(Debug, Clone)]
struct Motion {
    from: EePose,
    to: EePose,
    done: u64,
}

/// Mutable loop state between capture frames.
#[derive(Debug, Clone)]
pub struct ServoState {
    pub ee: EePose,
    /// Capture frames taken so far.
    pub frame_index: u64,
    pub control_steps: usize,
    window: VecDeque<CapFrame>,
    errors: Vec<[f64; 4]>,
    motion: Option<Motion>,
    halted: Option<Outcome>,
}

impl ServoState {
    pub fn new(ee: EePose) -> Self {
        Self {
            ee,
            frame_index: 0,
            control_steps: 0,
            window: VecDeque::new(),
            errors: Vec::new(),
            motion: None,
            halted: None,
        }
    }

    pub fn window_filled(&self, h: usize) -> bool {
        self.window.len() >= h
    }

    pub fn halted(&self) -> Option<Outcome> {
        self.halted
    }

    fn flat_window(&self) -> Vec<f64> {
        self.window.iter().flat_map(|f| f.c).collect()
    }
}

fn lerp_pose(a: &EePose, b: &EePose, s: f64) -> EePose {
    EePose::new(
        a.position + (b.position - a.position) * s,
        a.roll + wrap_angle(b.roll - a.roll) * s,
        a.pitch + wrap_angle(b.pitch - a.pitch) * s,
        a.yaw + wrap_angle(b.yaw - a.yaw) * s,
    )
}

/// Pose after applying one control command from `ee`.
pub fn commanded_pose(ee: &EePose, u: &[f64; 4], v_x_cm_s: f64, control_rate_hz: f64) -> EePose {
    let step = Vec3::new(v_x_cm_s / control_rate_hz, u[0], u[1]);
    EePose::new(ee.position + ee.rotation() * step, ee.roll, ee.pitch + u[2], ee.yaw + u[3])
}

/// Advances the loop by one capture frame. Returns the log row when this
/// frame carried a control update or halted the run.
#[allow(clippy::too_many_arguments)]
pub fn servo_step<E: PoseEstimator + ?Sized, R: Rng + ?Sized>(
    state: &mut ServoState,
    estimator: &mut E,
    cfg: &ServoConfig,
    rig: &SensorRig,
    limb: &LimbModel,
    rng: &mut R,
) -> Result<Option<LogRow>> {
    if state.halted.is_some() {
        return Ok(None);
    }
    let ratio = cfg.frames_per_control();
    if let Some(m) = &mut state.motion {
        m.done += 1;
        state.ee = lerp_pose(&m.from, &m.to, m.done as f64 / ratio as f64);
        if m.done >= ratio {
            state.ee = m.to;
            state.motion = None;
        }
    }
    let k = state.frame_index;
    let t = k as f64 / cfg.capture_rate_hz;
    state.frame_index += 1;

    let frame = rig.read(limb, &state.ee, t, k, ContactPolicy::Saturate, rng)?;
    state.window.push_back(frame);
    while state.window.len() > cfg.window_len {
        state.window.pop_front();
    }

    let plate_center = rig.array.plate_pose(&state.ee).position;
    let clearance = limb.signed_clearance(&plate_center, t);
    let penetration = (-rig.min_clearance(limb, &state.ee, t)).max(0.0);
    let force = cfg.contact_stiffness_n_per_cm * penetration;
    let truth = limb.relative_pose(&rig.array.plate_pose(&state.ee), t).ok();
    let truth_arr = truth.map_or([f64::NAN; 4], |p| p.to_array());
    let row = |state: &ServoState, estimate: [f64; 4], action: [f64; 4], contact: bool| LogRow {
        step: state.control_steps,
        t_s: t,
        ee: state.ee,
        estimate,
        truth: truth_arr,
        action,
        clearance,
        force_n: force,
        contact,
    };

    if force > cfg.force_limit_n {
        state.halted = Some(Outcome::ContactHalt);
        return Ok(Some(row(state, [f64::NAN; 4], [0.0; 4], true)));
    }
    if clearance > cfg.lost_range_cm {
        state.halted = Some(Outcome::LostTrack);
        return Ok(Some(row(state, [f64::NAN; 4], [0.0; 4], false)));
    }
    if k % ratio != 0 || !state.window_filled(cfg.window_len) {
        return Ok(None);
    }

    let estimate = estimator.estimate(&state.flat_window(), truth.as_ref());
    let u = match estimate {
        Some(p) => {
            let p = p.to_array();
            let e: [f64; 4] = std::array::from_fn(|i| cfg.p_desired[i] - p[i]);
            state.errors.push(e);
            if state.errors.len() > 2 {
                state.errors.remove(0);
            }
            let e_dot = estimate_velocity(&state.errors, cfg.control_rate_hz);
            pd_action(&e, &e_dot, &cfg.gains)
        }
        None => [0.0; 4],
    };
    let est_arr = estimate.map_or([f64::NAN; 4], |p| p.to_array());
    let out = row(state, est_arr, u, false);
    let to = commanded_pose(&state.ee, &u, cfg.v_x_cm_s, cfg.control_rate_hz);
    state.motion = Some(Motion { from: state.ee, to, done: 0 });
    state.control_steps += 1;
    Ok(Some(out))
}

/// A closed-loop run: the limb, where the sensor starts, and what counts as success.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub limb: LimbModel,
    pub start: EePose,
    pub criteria: SuccessCriteria,
}

#[derive(Debug, Clone)]
pub struct ServoRun {
    pub log: ServoLog,
    pub outcome: Outcome,
}

/// Runs the loop until the run length is covered or the run halts.
pub fn run_servo<E: PoseEstimator + ?Sized, R: Rng + ?Sized>(
    scenario: &Scenario,
    estimator: &mut E,
    cfg: &ServoConfig,
    rig: &SensorRig,
    rng: &mut R,
) -> Result<ServoRun> {
    cfg.validate()?;
    rig.validate()?;
    let mut state = ServoState::new(scenario.start);
    let mut log = ServoLog::default();
    let steps = cfg.control_steps();
    let max_frames = (steps as u64 + 2) * cfg.frames_per_control() + cfg.window_len as u64;
    while state.control_steps < steps && state.frame_index < max_frames {
        if let Some(r) = servo_step(&mut state, estimator, cfg, rig, &scenario.limb, rng)? {
            log.rows.push(r);
        }
        if state.halted.is_some() {
            break;
        }
    }
    let outcome = match state.halted {
        Some(o) => o,
        None => classify(&log, &scenario.limb, &scenario.criteria),
    };
    Ok(ServoRun { log, outcome })
}

/// Window width expected by the loop for a given window length.
pub fn window_input_dim(window_len: usize) -> usize {
    window_len * ELECTRODE_COUNT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LimbSegment;
    use crate::rng::substream;

    fn cylinder() -> LimbModel {
        LimbModel::straight(LimbSegment::cylinder(Vec3::new(-20.0, 0.0, 0.0), Vec3::x(), 120.0, 4.0).unwrap())
    }

    fn quiet_rig() -> SensorRig {
        SensorRig::default()
    }

    fn start(limb: &LimbModel, p: RelativePose) -> EePose {
        limb.place_sensor(0, 20.0, &p, 0.0, 0.0).unwrap()
    }

    #[test]
    fn pd_examples() {
        let g = Gains::default();
        assert_eq!(pd_action(&[0.0; 4], &[0.0; 4], &g), [0.0; 4]);
        assert_eq!(pd_action(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &g), [0.025, 0.0, 0.0, 0.0]);
        let u = pd_action(&[0.0, 2.0, 0.0, 0.0], &[0.0, -1.0, 0.0, 0.0], &g);
        assert!((u[1] - 0.0375).abs() < 1e-15);
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(estimate_velocity(&[], 10.0), [0.0; 4]);
        assert_eq!(estimate_velocity(&[[1.0; 4]], 10.0), [0.0; 4]);
        assert_eq!(estimate_velocity(&[[0.5; 4], [0.5; 4]], 10.0), [0.0; 4]);
        let v = estimate_velocity(&[[0.1, 0.0, 0.0, 0.0], [0.2, 0.0, 0.0, 0.0]], 10.0);
        assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        ServoConfig::default().validate().unwrap();
        assert!(ServoConfig { control_rate_hz: 30.0, ..Default::default() }.validate().is_err());
        assert!(ServoConfig { v_x_cm_s: 0.0, ..Default::default() }.validate().is_err());
        assert!(Gains { kp: [-1.0, 0.0, 0.0, 0.0], ..Default::default() }.validate().is_err());
        assert_eq!(ServoConfig::default().control_steps(), 200);
    }

    #[test]
    fn no_action_before_window_fills() {
        let limb = cylinder();
        let cfg = ServoConfig::default();
        let mut state = ServoState::new(start(&limb, RelativePose::new(0.0, 5.0, 0.0, 0.0)));
        let mut rng = substream(0, "n", 0);
        let ee0 = state.ee;
        for _ in 0..cfg.window_len {
            let r = servo_step(&mut state, &mut TruePoseStub, &cfg, &quiet_rig(), &limb, &mut rng).unwrap();
            assert!(r.is_none());
            assert_eq!(state.ee, ee0);
        }
        assert_eq!(state.control_steps, 0);
    }

    #[test]
    fn one_control_update_per_ten_frames() {
        let limb = cylinder();
        let cfg = ServoConfig { run_length_cm: 4.0, ..Default::default() };
        let mut state = ServoState::new(start(&limb, RelativePose::new(0.0, 5.0, 0.0, 0.0)));
        let mut rng = substream(0, "n", 0);
        let mut updates = Vec::new();
        for _ in 0..300 {
            if servo_step(&mut state, &mut TruePoseStub, &cfg, &quiet_rig(), &limb, &mut rng).unwrap().is_some() {
                updates.push(state.frame_index - 1);
            }
        }
        assert_eq!(state.frame_index, 300);
        assert!(updates.windows(2).all(|w| w[1] - w[0] == 10));
        assert_eq!(updates[0], 50);
    }

    #[test]
    fn perfect_stub_holds_height_while_advancing() {
        let limb = cylinder();
        let cfg = ServoConfig::default();
        let sc = Scenario {
            limb: limb.clone(),
            start: start(&limb, RelativePose::new(0.0, 5.0, 0.0, 0.0)),
            criteria: SuccessCriteria::default(),
        };
        let run = run_servo(&sc, &mut TruePoseStub, &cfg, &quiet_rig(), &mut substream(1, "n", 0)).unwrap();
        assert_eq!(run.outcome, Outcome::Success);
        assert_eq!(run.log.rows.len(), cfg.control_steps());
        for r in &run.log.rows {
            assert!((r.truth[1] - 5.0).abs() <= 0.05);
        }
        let travelled = run.log.rows.last().unwrap().ee.position.x - run.log.rows[0].ee.position.x;
        assert!((travelled - 0.2 * (run.log.rows.len() - 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn contact_force_example() {
        let cfg = ServoConfig::default();
        let f = cfg.contact_stiffness_n_per_cm * 0.25;
        assert_eq!(f, 12.5);
        assert!(f > cfg.force_limit_n);
    }

    #[test]
    fn pressing_into_the_limb_halts() {
        let limb = cylinder();
        let cfg = ServoConfig::default();
        let sc = Scenario {
            limb: limb.clone(),
            start: start(&limb, RelativePose::new(0.0, 2.0, 0.0, 0.0)),
            criteria: SuccessCriteria::default(),
        };
        // an estimator that always reports the sensor too high drives it down
        let mut stub = BiasedStub { bias: RelativePose::new(0.0, 10.0, 0.0, 0.0) };
        let run = run_servo(&sc, &mut stub, &cfg, &quiet_rig(), &mut substream(1, "n", 0)).unwrap();
        assert_eq!(run.outcome, Outcome::ContactHalt);
        let last = run.log.rows.last().unwrap();
        assert!(last.contact && last.force_n > cfg.force_limit_n);
        assert!(run.log.rows[..run.log.rows.len() - 1].iter().all(|r| !r.contact && r.force_n <= cfg.force_limit_n));
    }

    #[test]
    fn log_csv_round_trip() {
        let limb = cylinder();
        let cfg = ServoConfig { run_length_cm: 2.0, ..Default::default() };
        let sc = Scenario {
            limb: limb.clone(),
            start: start(&limb, RelativePose::new(1.0, 5.0, 0.0, 0.0)),
            criteria: SuccessCriteria::default(),
        };
        let run = run_servo(&sc, &mut TruePoseStub, &cfg, &quiet_rig(), &mut substream(1, "n", 0)).unwrap();
        let mut buf = Vec::new();
        run.log.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(format!("{SERVO_LOG_HEADER}\n").as_bytes()));
        let back = ServoLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), run.log.rows.len());
        assert_eq!(classify(&back, &limb, &sc.criteria), run.outcome);
    }
}
