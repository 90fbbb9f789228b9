//! Labelled data from the simulated sensor: random point-to-point
//! trajectories above limb stations, plus the linear and rotational sensing
//! range sweeps.
//!
//! The end effector is a free rigid body. Poses are commanded in
//! limb-relative coordinates, turned into a world pose by
//! [`LimbModel::place_sensor`], and every label is recomputed from that world
//! pose with [`LimbModel::relative_pose`].

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{window_dataset, EstimatorError, Series, WindowSet};
use crate::geometry::{EePose, GeometryError, LimbModel, LimbSegment, RelativePose, Vec3};
use crate::io::{f9, parse_numeric_row};
use crate::rng::{substream, SimRng};
use crate::sensor::{CapFrame, ContactPolicy, SensorError, SensorRig, ELECTRODE_COUNT};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid collection spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("dataset csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

/// A sensing location: a straight frustum with the sensor working over the
/// cross-section at `station_cm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    pub name: String,
    /// Radius at the station.
    pub radius_cm: f64,
    /// Radius lost per cm along the axis, toward the tip.
    #[serde(default)]
    pub taper_cm_per_cm: f64,
    #[serde(default = "Station::default_length")]
    pub length_cm: f64,
    #[serde(default = "Station::default_station")]
    pub station_cm: f64,
}

impl Station {
    fn default_length() -> f64 {
        60.0
    }

    fn default_station() -> f64 {
        30.0
    }

    pub fn new(name: &str, radius_cm: f64, taper_cm_per_cm: f64) -> Self {
        Self {
            name: name.to_string(),
            radius_cm,
            taper_cm_per_cm,
            length_cm: Self::default_length(),
            station_cm: Self::default_station(),
        }
    }

    pub fn circumference_cm(&self) -> f64 {
        2.0 * PI * self.radius_cm
    }

    /// The frustum along +x from the origin, in the horizontal plane z = 0.
    pub fn limb(&self) -> Result<LimbModel> {
        let rb = self.radius_cm + self.taper_cm_per_cm * self.station_cm;
        let rt = self.radius_cm - self.taper_cm_per_cm * (self.length_cm - self.station_cm);
        let seg = LimbSegment::new(Vec3::zeros(), Vec3::x(), self.length_cm, rb, rt)?;
        Ok(LimbModel::straight(seg))
    }
}

/// Wrist, forearm, upper arm, ankle, shin and knee.
pub fn default_stations() -> Vec<Station> {
    let forearm = 1.4 / 26.0;
    let upper_arm = 0.6 / 28.0;
    let shin = 1.7 / 40.0;
    let thigh = 0.5 / 40.0;
    vec![
        Station::new("wrist", 2.5, forearm),
        Station::new("forearm", 3.7, forearm),
        Station::new("upper_arm", 4.4, upper_arm),
        Station::new("ankle", 3.6, shin),
        Station::new("shin", 4.8, shin),
        Station::new("knee", 5.6, thigh),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionSpec {
    /// Trajectories per station.
    pub trajectories: usize,
    pub capture_rate_hz: f64,
    pub dy_range_cm: [f64; 2],
    pub dz_range_cm: [f64; 2],
    pub theta_y_range_rad: [f64; 2],
    pub theta_z_range_rad: [f64; 2],
    pub speed_translation_cm_s: [f64; 2],
    pub speed_rotation_rad_s: [f64; 2],
    pub tolerance_cm: f64,
    pub tolerance_rad: f64,
    /// Target draws allowed before giving up on a contact-free target.
    pub max_target_draws: usize,
    pub max_steps_per_trajectory: usize,
    pub stations: Vec<Station>,
}

impl Default for CollectionSpec {
    fn default() -> Self {
        Self {
            trajectories: 60,
            capture_rate_hz: 100.0,
            dy_range_cm: [-10.0, 10.0],
            dz_range_cm: [0.0, 15.0],
            theta_y_range_rad: [-PI / 8.0, PI / 8.0],
            theta_z_range_rad: [-PI / 8.0, PI / 8.0],
            speed_translation_cm_s: [3.0, 10.0],
            speed_rotation_rad_s: [PI / 20.0, PI / 8.0],
            tolerance_cm: 0.1,
            tolerance_rad: 0.01,
            max_target_draws: 1000,
            max_steps_per_trajectory: 100_000,
            stations: default_stations(),
        }
    }
}

fn ordered(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl CollectionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatagenError::InvalidSpec(m));
        if self.trajectories < 1 {
            return bad("at least one trajectory per station is required".into());
        }
        if !(self.capture_rate_hz.is_finite() && self.capture_rate_hz > 0.0) {
            return bad("capture rate must be positive".into());
        }
        for (name, r) in [
            ("dy_range_cm", self.dy_range_cm),
            ("dz_range_cm", self.dz_range_cm),
            ("theta_y_range_rad", self.theta_y_range_rad),
            ("theta_z_range_rad", self.theta_z_range_rad),
        ] {
            if !ordered(r) {
                return bad(format!("{name} must be an ordered finite pair"));
            }
        }
        for (name, r) in
            [("speed_translation_cm_s", self.speed_translation_cm_s), ("speed_rotation_rad_s", self.speed_rotation_rad_s)]
        {
            if !ordered(r) || r[0] <= 0.0 {
                return bad(format!("{name} must be an ordered positive pair"));
            }
        }
        if !(self.tolerance_cm > 0.0 && self.tolerance_rad > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_target_draws < 1 || self.max_steps_per_trajectory < 1 {
            return bad("draw and step limits must be positive".into());
        }
        for s in &self.stations {
            if !(s.radius_cm > 0.0 && s.length_cm > 0.0 && (0.0..=s.length_cm).contains(&s.station_cm)) {
                return bad(format!("station {:?} is malformed", s.name));
            }
            s.limb()?;
        }
        Ok(())
    }
}

/// Uniform draw from the pose box.
pub fn sample_target<R: Rng + ?Sized>(spec: &CollectionSpec, rng: &mut R) -> RelativePose {
    let mut u = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..r[1]) };
    let dy = u(spec.dy_range_cm);
    let dz = u(spec.dz_range_cm);
    let ty = u(spec.theta_y_range_rad);
    let tz = u(spec.theta_z_range_rad);
    RelativePose::new(dy, dz, ty, tz)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub station: usize,
    pub frames: Vec<CapFrame>,
    pub poses: Vec<RelativePose>,
    pub ee: Vec<EePose>,
    /// Stopped early by contact with the limb.
    pub aborted: bool,
}

impl Trajectory {
    fn empty(id: usize, station: usize) -> Self {
        Self { id, station, frames: Vec::new(), poses: Vec::new(), ee: Vec::new(), aborted: false }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn aborted_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.aborted).count()
    }

    pub fn series(&self) -> Vec<Series<'_>> {
        self.trajectories.iter().map(|t| Series { frames: &t.frames, poses: &t.poses }).collect()
    }

    pub fn windows(&self, h: usize) -> std::result::Result<WindowSet, EstimatorError> {
        window_dataset(&self.series(), h)
    }

    pub fn append(&mut self, other: Dataset) {
        self.trajectories.extend(other.trajectories);
    }
}

/// Steps the sensor through commanded limb-relative poses, recording one
/// frame per step.
struct Recorder<'a> {
    rig: &'a SensorRig,
    limb: &'a LimbModel,
    station_cm: f64,
    rate_hz: f64,
    noise: SimRng,
}

impl Recorder<'_> {
    fn place(&self, pose: &RelativePose) -> Result<EePose> {
        Ok(self.limb.place_sensor(0, self.station_cm, pose, 0.0, 0.0)?)
    }

    fn is_clear(&self, pose: &RelativePose) -> Result<bool> {
        Ok(self.rig.min_clearance(self.limb, &self.place(pose)?, 0.0) > 0.0)
    }

    /// Records `pose`; returns `Ok(false)` on contact.
    fn record(&mut self, pose: &RelativePose, traj: &mut Trajectory) -> Result<bool> {
        let ee = self.place(pose)?;
        let step = traj.frames.len() as u64;
        let t = step as f64 / self.rate_hz;
        match self.rig.read(self.limb, &ee, t, step, ContactPolicy::Reject, &mut self.noise) {
            Ok(frame) => {
                traj.poses.push(self.limb.relative_pose(&self.rig.array.plate_pose(&ee), t)?);
                traj.frames.push(frame);
                traj.ee.push(ee);
                Ok(true)
            }
            Err(SensorError::Contact { .. }) => {
                traj.aborted = true;
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Moves `cur` toward `target` by at most `max_step` (Euclidean), unless every
/// component is already within `tol`. Returns whether it had converged.
fn advance(cur: &mut [f64; 2], target: [f64; 2], max_step: f64, tol: f64) -> bool {
    let r = [target[0] - cur[0], target[1] - cur[1]];
    if r[0].abs() <= tol && r[1].abs() <= tol {
        return true;
    }
    let n = r[0].hypot(r[1]);
    if n <= max_step {
        *cur = target;
    } else {
        cur[0] += r[0] / n * max_step;
        cur[1] += r[1] / n * max_step;
    }
    false
}

/// One point-to-point move at constant translational and rotational speed.
/// Translation and rotation stop independently once each is within tolerance.
/// The start pose itself is not recorded.
#[allow(clippy::too_many_arguments)]
fn run_move(
    spec: &CollectionSpec,
    rec: &mut Recorder<'_>,
    start: RelativePose,
    target: RelativePose,
    v_d: f64,
    v_theta: f64,
    traj: &mut Trajectory,
) -> Result<RelativePose> {
    let mut d = [start.dy, start.dz];
    let mut th = [start.theta_y, start.theta_z];
    let step_d = v_d / spec.capture_rate_hz;
    let step_th = v_theta / spec.capture_rate_hz;
    let mut last = start;
    for _ in 0..spec.max_steps_per_trajectory {
        let (mut nd, mut nth) = (d, th);
        let d_done = advance(&mut nd, [target.dy, target.dz], step_d, spec.tolerance_cm);
        let th_done = advance(&mut nth, [target.theta_y, target.theta_z], step_th, spec.tolerance_rad);
        if d_done && th_done {
            break;
        }
        let pose = RelativePose::new(nd[0], nd[1], nth[0], nth[1]);
        if !rec.record(&pose, traj)? {
            break;
        }
        d = nd;
        th = nth;
        last = pose;
    }
    Ok(last)
}

/// Moves the sensor from `start` to `target` at the given speeds above one
/// station and returns the recorded trajectory.
#[allow(clippy::too_many_arguments)]
pub fn record_move(
    spec: &CollectionSpec,
    rig: &SensorRig,
    station: &Station,
    start: RelativePose,
    target: RelativePose,
    v_d: f64,
    v_theta: f64,
    seed: u64,
) -> Result<Trajectory> {
    let limb = station.limb()?;
    let mut rec =
        Recorder { rig, limb: &limb, station_cm: station.station_cm, rate_hz: spec.capture_rate_hz, noise: substream(seed, "move", 0) };
    let mut traj = Trajectory::empty(0, 0);
    run_move(spec, &mut rec, start, target, v_d, v_theta, &mut traj)?;
    Ok(traj)
}

/// `N` consecutive trajectories above one station, starting from
/// `(0, 0, 0, 0)`. Each trajectory starts where the previous one ended.
/// Targets whose own pose touches the limb are redrawn; a trajectory that
/// runs into the limb keeps its frames up to the contact and is flagged.
pub fn collect_trajectories(
    spec: &CollectionSpec,
    rig: &SensorRig,
    station_index: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    rig.validate()?;
    let station = spec
        .stations
        .get(station_index)
        .ok_or_else(|| DatagenError::InvalidSpec(format!("no station {station_index}")))?;
    let limb = station.limb()?;
    let mut rec = Recorder {
        rig,
        limb: &limb,
        station_cm: station.station_cm,
        rate_hz: spec.capture_rate_hz,
        noise: substream(seed, &format!("collect/{station_index}/noise"), 0),
    };
    let mut pose = RelativePose::default();
    let mut out = Dataset::default();
    for k in 0..spec.trajectories {
        let id = station_index * spec.trajectories + k;
        let mut traj = Trajectory::empty(id, station_index);
        let mut rng = substream(seed, &format!("collect/{station_index}/targets"), k as u64);
        rec.noise = substream(seed, &format!("collect/{station_index}/noise"), k as u64);
        let mut target = None;
        for _ in 0..spec.max_target_draws {
            let cand = sample_target(spec, &mut rng);
            if rec.is_clear(&cand)? {
                target = Some(cand);
                break;
            }
        }
        let Some(target) = target else {
            traj.aborted = true;
            out.trajectories.push(traj);
            continue;
        };
        let v_d = uniform(&mut rng, spec.speed_translation_cm_s);
        let v_theta = uniform(&mut rng, spec.speed_rotation_rad_s);
        pose = run_move(spec, &mut rec, pose, target, v_d, v_theta, &mut traj)?;
        out.trajectories.push(traj);
    }
    Ok(out)
}

/// Every station of `spec`, trajectories numbered consecutively.
pub fn collect_all(spec: &CollectionSpec, rig: &SensorRig, seed: u64) -> Result<Dataset> {
    let mut all = Dataset::default();
    for i in 0..spec.stations.len() {
        all.append(collect_trajectories(spec, rig, i, seed)?);
    }
    Ok(all)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Parameters of the sensing-range sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub capture_rate_hz: f64,
    /// Frames recorded at the start pose before moving, so the first moving
    /// frame already has a full window behind it.
    pub dwell_frames: usize,
    pub linear_start_dz_cm: f64,
    pub linear_end_range_cm: f64,
    pub linear_speed_cm_s: [f64; 2],
    pub rotation_dz_cm: f64,
    pub rotation_end_rad: f64,
    pub rotation_speed_rad_s: [f64; 2],
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            capture_rate_hz: 100.0,
            dwell_frames: crate::estimator::WINDOW_LEN - 1,
            linear_start_dz_cm: 3.0,
            linear_end_range_cm: 20.0,
            linear_speed_cm_s: [3.0, 10.0],
            rotation_dz_cm: 5.0,
            rotation_end_rad: PI / 4.0,
            rotation_speed_rad_s: [PI / 20.0, PI / 8.0],
        }
    }
}

fn sweep(
    rig: &SensorRig,
    station: &Station,
    n_runs: usize,
    sw: &SweepSpec,
    seed: u64,
    name: &str,
    mut path: impl FnMut(&mut SimRng) -> (Box<dyn Fn(f64) -> RelativePose>, f64, f64),
) -> Result<Dataset> {
    rig.validate()?;
    let limb = station.limb()?;
    let mut out = Dataset::default();
    for k in 0..n_runs {
        let mut rng = substream(seed, name, k as u64);
        let mut rec = Recorder {
            rig,
            limb: &limb,
            station_cm: station.station_cm,
            rate_hz: sw.capture_rate_hz,
            noise: substream(seed, &format!("{name}/noise"), k as u64),
        };
        let (at, speed, end) = path(&mut rng);
        let mut traj = Trajectory::empty(k, 0);
        let mut ok = true;
        for _ in 0..sw.dwell_frames {
            ok = ok && rec.record(&at(0.0), &mut traj)?;
        }
        let ds = speed / sw.capture_rate_hz;
        let mut s = 0.0;
        while ok && s < end {
            s = (s + ds).min(end);
            ok = rec.record(&at(s), &mut traj)?;
        }
        out.trajectories.push(traj);
    }
    Ok(out)
}

/// Runs that start `linear_start_dz_cm` above `k*` and move outward in a
/// random direction of the upper `(D_y, D_z)` half-plane, orientation held
/// parallel, until the distance from `k*` reaches `linear_end_range_cm`.
pub fn linear_sweep(rig: &SensorRig, station: &Station, n_runs: usize, sw: &SweepSpec, seed: u64) -> Result<Dataset> {
    let z0 = sw.linear_start_dz_cm;
    let r_end = sw.linear_end_range_cm;
    if !(z0 >= 0.0 && r_end > z0) {
        return Err(DatagenError::InvalidSpec("linear sweep must end beyond its start".into()));
    }
    let speeds = sw.linear_speed_cm_s;
    sweep(rig, station, n_runs, sw, seed, "linear_sweep", move |rng| {
        let phi = rng.gen_range(0.0..=PI);
        let speed = uniform(rng, speeds);
        let (c, s) = (phi.cos(), phi.sin());
        // |(0, z0) + t (c, s)| = r_end
        let b = z0 * s;
        let end = -b + (b * b - z0 * z0 + r_end * r_end).sqrt();
        (Box::new(move |t| RelativePose::new(t * c, z0 + t * s, 0.0, 0.0)), speed, end)
    })
}

/// Runs that hold the sensor `rotation_dz_cm` above `k*` and rotate about
/// its y and z axes in a random direction until `‖(θ_y, θ_z)‖` reaches
/// `rotation_end_rad`.
pub fn rotation_sweep(rig: &SensorRig, station: &Station, n_runs: usize, sw: &SweepSpec, seed: u64) -> Result<Dataset> {
    let dz = sw.rotation_dz_cm;
    let end = sw.rotation_end_rad;
    let speeds = sw.rotation_speed_rad_s;
    sweep(rig, station, n_runs, sw, seed, "rotation_sweep", move |rng| {
        let psi = rng.gen_range(0.0..2.0 * PI);
        let speed = uniform(rng, speeds);
        let (c, s) = (psi.cos(), psi.sin());
        (Box::new(move |a| RelativePose::new(0.0, dz, a * c, a * s)), speed, end)
    })
}

pub const DATASET_CSV_HEADER: &str = "traj_id,t,c1,c2,c3,c4,c5,c6,dy,dz,ty,tz";

pub fn write_dataset_csv<W: Write>(mut w: W, data: &Dataset) -> std::io::Result<()> {
    writeln!(w, "{DATASET_CSV_HEADER}")?;
    for traj in &data.trajectories {
        for (f, p) in traj.frames.iter().zip(&traj.poses) {
            write!(w, "{},{}", traj.id, f.t)?;
            for c in f.c {
                write!(w, ",{}", f9(c))?;
            }
            writeln!(w, ",{},{},{},{}", f9(p.dy), f9(p.dz), f9(p.theta_y), f9(p.theta_z))?;
        }
    }
    Ok(())
}

/// One trajectory read back from a dataset CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrajectory {
    pub id: usize,
    pub frames: Vec<CapFrame>,
    pub poses: Vec<RelativePose>,
}

/// Reads a dataset CSV. Rows of one trajectory must be contiguous with `t`
/// counting up from 0.
pub fn read_dataset_csv<R: BufRead>(r: R) -> Result<Vec<LoadedTrajectory>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| DatagenError::Csv("empty file".into()))??;
    if header.trim() != DATASET_CSV_HEADER {
        return Err(DatagenError::Csv(format!("unexpected header {header:?}")));
    }
    let mut out: Vec<LoadedTrajectory> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 2;
        let v = parse_numeric_row(&line, 2 + ELECTRODE_COUNT + 4, line_no).map_err(DatagenError::Csv)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DatagenError::Csv(format!("line {line_no}: non-finite value")));
        }
        if v[0] < 0.0 || v[0].fract() != 0.0 || v[1] < 0.0 || v[1].fract() != 0.0 {
            return Err(DatagenError::Csv(format!("line {line_no}: traj_id and t must be non-negative integers")));
        }
        let (id, t) = (v[0] as usize, v[1] as u64);
        if out.last().map(|l| l.id) != Some(id) {
            if out.iter().any(|l| l.id == id) {
                return Err(DatagenError::Csv(format!("line {line_no}: trajectory {id} is not contiguous")));
            }
            out.push(LoadedTrajectory { id, frames: Vec::new(), poses: Vec::new() });
        }
        let cur = out.last_mut().expect("just pushed");
        if t != cur.frames.len() as u64 {
            return Err(DatagenError::Csv(format!("line {line_no}: expected t = {}, got {t}", cur.frames.len())));
        }
        let mut c = [0.0; ELECTRODE_COUNT];
        c.copy_from_slice(&v[2..2 + ELECTRODE_COUNT]);
        if c.iter().any(|x| *x < 0.0) {
            return Err(DatagenError::Csv(format!("line {line_no}: negative capacitance")));
        }
        cur.frames.push(CapFrame { t, c });
        let p = &v[2 + ELECTRODE_COUNT..];
        cur.poses.push(RelativePose::new(p[0], p[1], p[2], p[3]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> SensorRig {
        SensorRig::calibrated_default()
    }

    fn small_spec(n: usize) -> CollectionSpec {
        CollectionSpec { trajectories: n, stations: vec![Station::new("forearm", 3.7, 1.4 / 26.0)], ..Default::default() }
    }

    #[test]
    fn default_spec_is_valid_and_in_circumference_range() {
        let spec = CollectionSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.stations.len(), 6);
        for s in &spec.stations {
            assert!((13.0..=40.0).contains(&s.circumference_cm()), "{}", s.name);
            let limb = s.limb().unwrap();
            assert!(limb.segments()[0].radius_tip() > 0.0);
        }
    }

    #[test]
    fn collapsed_pose_box_returns_the_point() {
        let spec = CollectionSpec {
            dy_range_cm: [1.0, 1.0],
            dz_range_cm: [4.0, 4.0],
            theta_y_range_rad: [0.1, 0.1],
            theta_z_range_rad: [-0.2, -0.2],
            ..Default::default()
        };
        let mut rng = substream(0, "t", 0);
        for _ in 0..10 {
            assert_eq!(sample_target(&spec, &mut rng), RelativePose::new(1.0, 4.0, 0.1, -0.2));
        }
    }

    #[test]
    fn ten_cm_at_five_cm_per_second_takes_two_hundred_steps() {
        let spec = small_spec(1);
        let start = RelativePose::new(-5.0, 5.0, 0.0, 0.0);
        let target = RelativePose::new(5.0, 5.0, 0.0, 0.0);
        let traj = record_move(&spec, &rig(), &spec.stations[0], start, target, 5.0, 0.3, 1).unwrap();
        // stops once within 0.1 cm, i.e. after 199 or 200 steps of 0.05 cm
        assert!((199..=200).contains(&traj.len()), "{}", traj.len());
        assert!((traj.poses.last().unwrap().dy - 5.0).abs() <= 0.1);
    }

    #[test]
    fn zero_length_move_records_nothing() {
        let spec = small_spec(1);
        let p = RelativePose::new(0.0, 5.0, 0.0, 0.0);
        let traj = record_move(&spec, &rig(), &spec.stations[0], p, p, 5.0, 0.3, 1).unwrap();
        assert!(traj.len() <= 1);
    }

    #[test]
    fn translation_and_rotation_clamp_independently() {
        let spec = small_spec(1);
        let start = RelativePose::new(0.0, 5.0, 0.0, 0.0);
        let target = RelativePose::new(1.0, 5.0, 0.3, 0.0);
        let traj = record_move(&spec, &rig(), &spec.stations[0], start, target, 10.0, 0.3, 1).unwrap();
        // translation done after 10 steps, rotation within 0.01 rad after 97
        assert_eq!(traj.len(), 97);
        for p in &traj.poses[10..] {
            assert!((p.dy - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_match_geometry_and_timestamps_are_contiguous() {
        let spec = small_spec(4);
        let data = collect_trajectories(&spec, &rig(), 0, 7).unwrap();
        let limb = spec.stations[0].limb().unwrap();
        assert_eq!(data.trajectories.len(), 4);
        for traj in &data.trajectories {
            for (i, ((f, p), ee)) in traj.frames.iter().zip(&traj.poses).zip(&traj.ee).enumerate() {
                assert_eq!(f.t, i as u64);
                let again = limb.relative_pose(ee, i as f64 / 100.0).unwrap();
                assert!((again.dy - p.dy).abs() < 1e-9 && (again.theta_z - p.theta_z).abs() < 1e-9);
            }
        }
        assert_eq!(data.sample_count(), data.trajectories.iter().map(|t| t.frames.len()).sum::<usize>());
    }

    #[test]
    fn collection_is_reproducible() {
        let spec = small_spec(3);
        let a = collect_trajectories(&spec, &rig(), 0, 11).unwrap();
        let b = collect_trajectories(&spec, &rig(), 0, 11).unwrap();
        assert_eq!(a, b);
        let c = collect_trajectories(&spec, &rig(), 0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn linear_sweep_ends_at_twenty_cm() {
        let st = Station::new("forearm", 3.7, 0.05);
        let sw = SweepSpec::default();
        let data = linear_sweep(&rig(), &st, 5, &sw, 3).unwrap();
        for t in &data.trajectories {
            assert!(!t.aborted);
            let last = t.poses.last().unwrap();
            assert!((last.distance() - 20.0).abs() <= 0.1);
            assert!(t.poses.iter().all(|p| p.dz >= 3.0 - 1e-9));
            assert_eq!(t.poses[..sw.dwell_frames].iter().filter(|p| p.distance() == t.poses[0].distance()).count(), sw.dwell_frames);
        }
    }

    #[test]
    fn rotation_sweep_ends_at_forty_five_degrees() {
        let st = Station::new("forearm", 3.7, 0.0);
        let data = rotation_sweep(&rig(), &st, 5, &SweepSpec::default(), 3).unwrap();
        for t in &data.trajectories {
            let last = t.poses.last().unwrap();
            assert!((last.theta_y.hypot(last.theta_z).to_degrees() - 45.0).abs() <= 0.5);
            for p in &t.poses {
                assert!(p.dy.abs() < 0.1 && (p.dz - 5.0).abs() < 0.1);
            }
        }
    }

    #[test]
    fn dataset_csv_round_trip() {
        let spec = small_spec(2);
        let data = collect_trajectories(&spec, &rig(), 0, 5).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &data).unwrap();
        assert!(buf.starts_with(b"traj_id,t,c1,c2,c3,c4,c5,c6,dy,dz,ty,tz\n"));
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        let non_empty: Vec<_> = data.trajectories.iter().filter(|t| !t.is_empty()).collect();
        assert_eq!(back.len(), non_empty.len());
        for (l, t) in back.iter().zip(non_empty) {
            assert_eq!(l.id, t.id);
            assert_eq!(l.frames.len(), t.frames.len());
            for (a, b) in l.poses.iter().zip(&t.poses) {
                assert!((a.dz - b.dz).abs() <= 1e-8 * b.dz.abs().max(1.0));
            }
        }
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let bad_header = "traj,t\n";
        assert!(read_dataset_csv(bad_header.as_bytes()).is_err());
        let gap = format!("{DATASET_CSV_HEADER}\n0,0,1,1,1,1,1,1,0,0,0,0\n0,2,1,1,1,1,1,1,0,0,0,0\n");
        assert!(read_dataset_csv(gap.as_bytes()).is_err());
        let short = format!("{DATASET_CSV_HEADER}\n0,0,1,1\n");
        assert!(read_dataset_csv(short.as_bytes()).is_err());
    }
}
