//! C ABI over the capservo simulator.
//!
//! Objects cross the boundary as opaque handles created by `cs_*_new`/`cs_*_load`
//! and released with the matching `cs_*_free`. Every fallible call returns a
//! [`CsStatus`]; on failure [`cs_last_error`] describes what went wrong on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use capservo::control::{
    pd_action, run_servo, Gains, MlpEstimator, Outcome, PoseEstimator, Scenario, ServoConfig, SuccessCriteria,
    TruePoseStub,
};
use capservo::estimator::{load_model, model_from_bytes, MlpModel};
use capservo::evaluation::{TaskKind, TaskSpec};
use capservo::rng::substream;
use capservo::sensor::{ContactPolicy, ELECTRODE_COUNT};
use capservo::{EePose, LimbModel, LimbSegment, RelativePose, SensorRig, Vec3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    Sensor = 6,
    Panic = 7,
}

/// Pose of the sensor relative to the limb, in cm and rad.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsPose {
    pub dy: f64,
    pub dz: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

/// World pose of the end effector: position in cm, roll/pitch/yaw in rad.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsEePose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsTask {
    BentElbow = 0,
    ForearmTilt = 1,
    BentKnee = 2,
    MovingLimb = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsOutcome {
    Success = 0,
    LostTrack = 1,
    ContactHalt = 2,
}

/// Summary of a closed-loop run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsRunResult {
    pub outcome: CsOutcome,
    pub control_steps: usize,
    /// Mean plate clearance over the logged control steps, cm.
    pub mean_clearance_cm: f64,
    pub final_pose: CsEePose,
}

/// Trained pose estimator.
pub struct CsModel(MlpModel);
/// Limb geometry.
pub struct CsLimb(LimbModel);
/// Electrode array and capacitance model.
pub struct CsSensor(SensorRig);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: CsStatus, msg: impl std::fmt::Display) -> CsStatus {
    set_error(&msg.to_string());
    status
}

/// Runs `f`, converting panics to [`CsStatus::Panic`].
fn guard(f: impl FnOnce() -> CsStatus) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == CsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(CsStatus::Panic, "internal panic"),
    }
}

fn ee_from(p: &CsEePose) -> EePose {
    EePose::new(Vec3::new(p.x, p.y, p.z), p.roll, p.pitch, p.yaw)
}

fn ee_to(p: &EePose) -> CsEePose {
    CsEePose { x: p.position.x, y: p.position.y, z: p.position.z, roll: p.roll, pitch: p.pitch, yaw: p.yaw }
}

fn pose_to(p: &RelativePose) -> CsPose {
    CsPose { dy: p.dy, dz: p.dz, theta_y: p.theta_y, theta_z: p.theta_z }
}

fn pose_from(p: &CsPose) -> RelativePose {
    RelativePose::new(p.dy, p.dz, p.theta_y, p.theta_z)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model file written by `capservo train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(path: *const c_char, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(CsStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_model(Path::new(p)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(CsModel(m)));
                CsStatus::Ok
            }
            Err(capservo::estimator::EstimatorError::Io(e)) => fail(CsStatus::Io, e),
            Err(e) => fail(CsStatus::Format, e),
        }
    })
}

/// Builds a model from the bytes of a model file.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        if bytes.is_null() || out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        match model_from_bytes(std::slice::from_raw_parts(bytes, len)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(CsModel(m)));
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::Format, e),
        }
    })
}

/// # Safety
/// `model` must come from `cs_model_load`/`cs_model_from_bytes` or be null.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Values expected per window (frames times electrodes); 0 for a null model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_model_input_dim(model: *const CsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Estimates the relative pose from a time-major window of readings.
///
/// # Safety
/// `window` must point to `len` doubles; `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_model_estimate(
    model: *const CsModel,
    window: *const f64,
    len: usize,
    out: *mut CsPose,
) -> CsStatus {
    guard(|| {
        let (Some(m), false, false) = (model.as_ref(), window.is_null(), out.is_null()) else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        match m.0.forward(std::slice::from_raw_parts(window, len)) {
            Ok(p) => {
                *out = pose_to(&p);
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::InvalidArgument, e),
        }
    })
}

/// Straight frustum from `base` along `axis` (need not be unit length).
///
/// # Safety
/// `base`, `axis` must point to 3 doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_new_frustum(
    base: *const f64,
    axis: *const f64,
    length_cm: f64,
    radius_base_cm: f64,
    radius_tip_cm: f64,
    out: *mut *mut CsLimb,
) -> CsStatus {
    guard(|| {
        if base.is_null() || axis.is_null() || out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        let b = std::slice::from_raw_parts(base, 3);
        let a = std::slice::from_raw_parts(axis, 3);
        match LimbSegment::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(a[0], a[1], a[2]), length_cm, radius_base_cm, radius_tip_cm) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CsLimb(LimbModel::straight(s))));
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::Geometry, e),
        }
    })
}

fn task_kind(t: CsTask) -> TaskKind {
    match t {
        CsTask::BentElbow => TaskKind::BentElbow,
        CsTask::ForearmTilt => TaskKind::ForearmTilt,
        CsTask::BentKnee => TaskKind::BentKnee,
        CsTask::MovingLimb => TaskKind::MovingLimb,
    }
}

/// The limb of a traversal task articulated to `joint_angle_rad`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_new_task(task: CsTask, joint_angle_rad: f64, out: *mut *mut CsLimb) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        let spec = TaskSpec::preset(task_kind(task));
        match spec.scenario(joint_angle_rad.to_degrees(), 0, 0) {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(CsLimb(sc.limb)));
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::Geometry, e),
        }
    })
}

/// # Safety
/// `limb` must come from a `cs_limb_new_*` call or be null.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_free(limb: *mut CsLimb) {
    if !limb.is_null() {
        drop(Box::from_raw(limb));
    }
}

/// Ground-truth pose of a sensor plate at `ee` relative to the limb at time `t_s`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_relative_pose(
    limb: *const CsLimb,
    ee: *const CsEePose,
    t_s: f64,
    out: *mut CsPose,
) -> CsStatus {
    guard(|| {
        let (Some(l), Some(e), false) = (limb.as_ref(), ee.as_ref(), out.is_null()) else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        match l.0.relative_pose(&ee_from(e), t_s) {
            Ok(p) => {
                *out = pose_to(&p);
                CsStatus::Ok
            }
            Err(err) => fail(CsStatus::Geometry, err),
        }
    })
}

/// Signed clearance from `point` to the limb surface; negative inside.
///
/// # Safety
/// `point` must point to 3 doubles; `limb` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_clearance(
    limb: *const CsLimb,
    point: *const f64,
    t_s: f64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let (Some(l), false, false) = (limb.as_ref(), point.is_null(), out.is_null()) else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        let p = std::slice::from_raw_parts(point, 3);
        *out = l.0.signed_clearance(&Vec3::new(p[0], p[1], p[2]), t_s);
        CsStatus::Ok
    })
}

/// End-effector pose that puts the sensor at `pose` over `station_cm` of `segment`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_limb_place_sensor(
    limb: *const CsLimb,
    segment: usize,
    station_cm: f64,
    pose: *const CsPose,
    out: *mut CsEePose,
) -> CsStatus {
    guard(|| {
        let (Some(l), Some(p), false) = (limb.as_ref(), pose.as_ref(), out.is_null()) else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        if segment >= l.0.segments().len() {
            return fail(CsStatus::InvalidArgument, format!("segment {segment} out of range"));
        }
        match l.0.place_sensor(segment, station_cm, &pose_from(p), 0.0, 0.0) {
            Ok(e) => {
                *out = ee_to(&e);
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::Geometry, e),
        }
    })
}

/// Default electrode array with calibrated noise.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_sensor_new_default(out: *mut *mut CsSensor) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        *out = Box::into_raw(Box::new(CsSensor(SensorRig::calibrated_default())));
        CsStatus::Ok
    })
}

/// Sets the noise standard deviation; 0 gives exact readings.
///
/// # Safety
/// `sensor` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_sensor_set_noise(sensor: *mut CsSensor, noise_sd: f64) -> CsStatus {
    guard(|| {
        let Some(s) = sensor.as_mut() else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return fail(CsStatus::InvalidArgument, "noise_sd must be finite and non-negative");
        }
        s.0.model.noise_sd = noise_sd;
        CsStatus::Ok
    })
}

/// # Safety
/// `sensor` must come from `cs_sensor_new_default` or be null.
#[no_mangle]
pub unsafe extern "C" fn cs_sensor_free(sensor: *mut CsSensor) {
    if !sensor.is_null() {
        drop(Box::from_raw(sensor));
    }
}

/// Six electrode readings. Noise is drawn from a stream fixed by `seed` and `step`.
/// Fails with `Sensor` if any part of the plate touches the limb.
///
/// # Safety
/// `out` must point to room for 6 doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cs_sensor_read(
    sensor: *const CsSensor,
    limb: *const CsLimb,
    ee: *const CsEePose,
    t_s: f64,
    seed: u64,
    step: u64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let (Some(s), Some(l), Some(e), false) = (sensor.as_ref(), limb.as_ref(), ee.as_ref(), out.is_null()) else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        let mut rng = substream(seed, "ffi/read", step);
        match s.0.read(&l.0, &ee_from(e), t_s, step, ContactPolicy::Reject, &mut rng) {
            Ok(f) => {
                std::slice::from_raw_parts_mut(out, ELECTRODE_COUNT).copy_from_slice(&f.c);
                CsStatus::Ok
            }
            Err(err) => fail(CsStatus::Sensor, err),
        }
    })
}

/// `u = kp∘e + kd∘e_dot`. Null gain pointers select the default gains.
///
/// # Safety
/// `e`, `e_dot`, `out` and any non-null gain pointer must point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_pd_action(
    e: *const f64,
    e_dot: *const f64,
    kp: *const f64,
    kd: *const f64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        if e.is_null() || e_dot.is_null() || out.is_null() {
            return fail(CsStatus::NullPointer, "null argument");
        }
        let read4 = |p: *const f64| -> [f64; 4] { std::slice::from_raw_parts(p, 4).try_into().expect("four values") };
        let mut gains = Gains::default();
        if !kp.is_null() {
            gains.kp = read4(kp);
        }
        if !kd.is_null() {
            gains.kd = read4(kd);
        }
        if let Err(err) = gains.validate() {
            return fail(CsStatus::InvalidArgument, err);
        }
        let u = pd_action(&read4(e), &read4(e_dot), &gains);
        std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&u);
        CsStatus::Ok
    })
}

/// Closed-loop traversal from `start` with default loop settings at speed
/// `v_x_cm_s` for `run_length_cm`. A null `model` uses the true pose.
/// Success only requires the final clearance bound.
///
/// # Safety
/// `limb`, `sensor`, `start` and `out` must be valid; `model` may be null.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cs_simulate(
    limb: *const CsLimb,
    sensor: *const CsSensor,
    model: *const CsModel,
    start: *const CsEePose,
    v_x_cm_s: f64,
    run_length_cm: f64,
    seed: u64,
    out: *mut CsRunResult,
) -> CsStatus {
    guard(|| {
        let (Some(l), Some(s), Some(st), false) = (limb.as_ref(), sensor.as_ref(), start.as_ref(), out.is_null())
        else {
            return fail(CsStatus::NullPointer, "null argument");
        };
        let cfg = ServoConfig { v_x_cm_s, run_length_cm, ..ServoConfig::default() };
        if let Err(e) = cfg.validate() {
            return fail(CsStatus::InvalidArgument, e);
        }
        let mut est: Box<dyn PoseEstimator> = match model.as_ref() {
            Some(m) => {
                if m.0.input_dim() != cfg.window_len * ELECTRODE_COUNT {
                    return fail(CsStatus::InvalidArgument, "model window does not match the loop window");
                }
                Box::new(MlpEstimator { model: &m.0 })
            }
            None => Box::new(TruePoseStub),
        };
        let sc = Scenario { limb: l.0.clone(), start: ee_from(st), criteria: SuccessCriteria::default() };
        let mut rng = substream(seed, "ffi/simulate", 0);
        match run_servo(&sc, est.as_mut(), &cfg, &s.0, &mut rng) {
            Ok(run) => {
                let n = run.log.rows.len();
                let mean = if n == 0 { f64::NAN } else { run.log.rows.iter().map(|r| r.clearance).sum::<f64>() / n as f64 };
                let last = run.log.rows.last().map_or(*st, |r| ee_to(&r.ee));
                *out = CsRunResult {
                    outcome: match run.outcome {
                        Outcome::Success => CsOutcome::Success,
                        Outcome::LostTrack => CsOutcome::LostTrack,
                        Outcome::ContactHalt => CsOutcome::ContactHalt,
                    },
                    control_steps: n,
                    mean_clearance_cm: mean,
                    final_pose: last,
                };
                CsStatus::Ok
            }
            Err(e) => fail(CsStatus::Sensor, e),
        }
    })
}
