//! Parametric limb models and the limb-relative pose of the sensor.
//!
//! Conventions shared by every module:
//!
//! * World frame: `z` up, lengths in cm, angles in radians.
//! * Orientations are fixed-axis roll/pitch/yaw, `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! * End-effector frame: `x` forward, `y` left, `z` up. The electrode plate faces `-z`.
//! * A segment's axis points distally. Segments of a [`LimbModel`] are ordered
//!   proximal to distal.
//! * The limb frame at `k*` has axes `n` (segment axis), `y = normalize(e_z × n)`
//!   (the limb's left when looking along `n`) and `u = n × y` (up, perpendicular to
//!   the axis). `D_y` is the sensor-centre offset along `y`, `D_z` the offset
//!   along `u`.
//! * `θ_y` and `θ_z` are the pitch and yaw of the sensor orientation relative to
//!   the surface frame `[x_s, y, z_s]`, where `x_s` runs along the surface
//!   generator line (so a tapering frustum tilts it) and `z_s = x_s × y`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Upper bound on articulation, 120 degrees.
pub const MAX_JOINT_ANGLE: f64 = 2.0 * PI / 3.0;

const JOINT_TOLERANCE_CM: f64 = 1e-6;
const AXIS_NORM_TOLERANCE: f64 = 1e-9;
const VERTICAL_AXIS_LIMIT: f64 = 1.0 - 1e-9;
const SEGMENT_TIE_CM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("segment axis is vertical; the cross-section has no unique top point")]
    DegenerateAxis,
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("limb must have 1 or 2 segments, got {0}")]
    SegmentCount(usize),
    #[error("segments do not share a joint (gap {0} cm)")]
    DisconnectedSegments(f64),
    #[error("joint angle {0} rad outside [0, 2π/3]")]
    JointAngleOutOfRange(f64),
    #[error("station {station} cm outside segment of length {length} cm")]
    StationOutOfRange { station: f64, length: f64 },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// One capped conical frustum. A cylinder has equal radii.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbSegment {
    base_point: Vec3,
    axis_dir: Vec3,
    length: f64,
    radius_base: f64,
    radius_tip: f64,
}

impl LimbSegment {
    pub fn new(
        base_point: Vec3,
        axis_dir: Vec3,
        length: f64,
        radius_base: f64,
        radius_tip: f64,
    ) -> Result<Self> {
        let norm = axis_dir.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GeometryError::InvalidSegment("axis direction has zero length".into()));
        }
        for (name, v) in [("length", length), ("radius_base", radius_base), ("radius_tip", radius_tip)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidSegment(format!("{name} must be positive, got {v}")));
            }
        }
        if !base_point.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidSegment("base point is not finite".into()));
        }
        let axis_dir = if (norm - 1.0).abs() < AXIS_NORM_TOLERANCE {
            axis_dir
        } else {
            axis_dir / norm
        };
        Ok(Self { base_point, axis_dir, length, radius_base, radius_tip })
    }

    pub fn cylinder(base_point: Vec3, axis_dir: Vec3, length: f64, radius: f64) -> Result<Self> {
        Self::new(base_point, axis_dir, length, radius, radius)
    }

    pub fn base_point(&self) -> Vec3 {
        self.base_point
    }

    pub fn axis_dir(&self) -> Vec3 {
        self.axis_dir
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn radius_base(&self) -> f64 {
        self.radius_base
    }

    pub fn radius_tip(&self) -> f64 {
        self.radius_tip
    }

    pub fn tip_point(&self) -> Vec3 {
        self.base_point + self.axis_dir * self.length
    }

    /// Radius at axial coordinate `s`, clamped to the segment.
    pub fn radius_at(&self, s: f64) -> f64 {
        let f = (s / self.length).clamp(0.0, 1.0);
        self.radius_base + (self.radius_tip - self.radius_base) * f
    }

    /// Half-cone angle; positive when the segment narrows distally.
    pub fn taper_angle(&self) -> f64 {
        (self.radius_base - self.radius_tip).atan2(self.length)
    }

    /// Unclamped projection of `p` onto the axis, measured from the base.
    pub fn axial_coordinate(&self, p: &Vec3) -> f64 {
        (p - self.base_point).dot(&self.axis_dir)
    }

    /// Distance from `p` to the finite axis segment.
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        let s = self.axial_coordinate(p).clamp(0.0, self.length);
        (p - (self.base_point + self.axis_dir * s)).norm()
    }

    /// Signed distance to the capped frustum surface, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let rel = p - self.base_point;
        let a = rel.dot(&self.axis_dir);
        let r = (rel - self.axis_dir * a).norm();
        let (l, rb, rt) = (self.length, self.radius_base, self.radius_tip);
        let d = segment_distance_2d((a, r), (0.0, 0.0), (0.0, rb))
            .min(segment_distance_2d((a, r), (0.0, rb), (l, rt)))
            .min(segment_distance_2d((a, r), (l, rt), (l, 0.0)));
        let inside = (0.0..=l).contains(&a) && r <= self.radius_at(a);
        if inside {
            -d
        } else {
            d
        }
    }

    fn transformed(&self, rot: &Rotation3<f64>, pivot: &Vec3, shift: &Vec3) -> Self {
        Self {
            base_point: pivot + rot * (self.base_point - pivot) + shift,
            axis_dir: rot * self.axis_dir,
            ..self.clone()
        }
    }
}

fn segment_distance_2d(q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (aqx, aqy) = (q.0 - a.0, q.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((aqx * abx + aqy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (aqx - t * abx).hypot(aqy - t * aby)
}

/// Rigid periodic motion of a whole limb: a sinusoidal translation plus a
/// sinusoidal yaw about a vertical axis through `pivot`, sharing one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbMotion {
    pub translation_amplitude: Vec3,
    pub yaw_amplitude: f64,
    pub pivot: Vec3,
    pub period_s: f64,
}

impl LimbMotion {
    pub fn lateral_sinusoid(direction: Vec3, amplitude_cm: f64, period_s: f64) -> Self {
        Self {
            translation_amplitude: direction.normalize() * amplitude_cm,
            yaw_amplitude: 0.0,
            pivot: Vec3::zeros(),
            period_s,
        }
    }

    /// Translation and yaw applied to the rest pose at time `t`.
    pub fn offset(&self, t: f64) -> (Vec3, f64) {
        let s = (2.0 * PI * t / self.period_s).sin();
        (self.translation_amplitude * s, self.yaw_amplitude * s)
    }
}

/// Rest-to-world transform of a possibly moving limb at one instant.
#[derive(Debug, Clone)]
struct Placement {
    rot: Rotation3<f64>,
    pivot: Vec3,
    shift: Vec3,
}

impl Placement {
    fn identity() -> Self {
        Self { rot: Rotation3::identity(), pivot: Vec3::zeros(), shift: Vec3::zeros() }
    }

    fn to_rest(&self, p: &Vec3) -> Vec3 {
        self.pivot + self.rot.inverse() * (p - self.shift - self.pivot)
    }

    fn to_world(&self, p: &Vec3) -> Vec3 {
        self.pivot + self.rot * (p - self.pivot) + self.shift
    }
}

/// A rigid limb of one or two segments joined end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbModel {
    segments: Vec<LimbSegment>,
    joint_angle: f64,
    motion: Option<LimbMotion>,
}

/// Local frame at `k*` for one segment, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFrame {
    pub segment: usize,
    /// Axial coordinate of `k0` along the segment.
    pub station: f64,
    pub k0: Vec3,
    pub k_star: Vec3,
    pub axis: Vec3,
    pub lateral: Vec3,
    pub up: Vec3,
    pub tangent: Vec3,
    pub normal: Vec3,
}

impl SurfaceFrame {
    /// Rotation whose columns are `[tangent, lateral, normal]`.
    pub fn surface_rotation(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[self.tangent, self.lateral, self.normal]))
    }
}

impl LimbModel {
    pub fn new(segments: Vec<LimbSegment>, joint_angle: f64) -> Result<Self> {
        if segments.is_empty() || segments.len() > 2 {
            return Err(GeometryError::SegmentCount(segments.len()));
        }
        if let [a, b] = segments.as_slice() {
            let gap = (a.tip_point() - b.base_point()).norm();
            if gap > JOINT_TOLERANCE_CM {
                return Err(GeometryError::DisconnectedSegments(gap));
            }
        }
        if !(0.0..=MAX_JOINT_ANGLE + 1e-12).contains(&joint_angle) {
            return Err(GeometryError::JointAngleOutOfRange(joint_angle));
        }
        Ok(Self { segments, joint_angle, motion: None })
    }

    pub fn straight(segment: LimbSegment) -> Self {
        Self { segments: vec![segment], joint_angle: 0.0, motion: None }
    }

    pub fn with_motion(mut self, motion: LimbMotion) -> Self {
        self.motion = Some(motion);
        self
    }

    pub fn segments(&self) -> &[LimbSegment] {
        &self.segments
    }

    pub fn joint_angle(&self) -> f64 {
        self.joint_angle
    }

    pub fn motion(&self) -> Option<&LimbMotion> {
        self.motion.as_ref()
    }

    /// Shared endpoint of a two-segment limb, in the rest pose.
    pub fn joint_point(&self) -> Option<Vec3> {
        (self.segments.len() == 2).then(|| self.segments[1].base_point())
    }

    fn placement(&self, t: f64) -> Placement {
        match &self.motion {
            None => Placement::identity(),
            Some(m) => {
                let (shift, yaw) = m.offset(t);
                Placement { rot: Rotation3::from_axis_angle(&Vec3::z_axis(), yaw), pivot: m.pivot, shift }
            }
        }
    }

    /// Segments in world coordinates at time `t`.
    pub fn segments_at(&self, t: f64) -> Vec<LimbSegment> {
        let pl = self.placement(t);
        self.segments.iter().map(|s| s.transformed(&pl.rot, &pl.pivot, &pl.shift)).collect()
    }

    /// Index of the segment whose finite axis is closest to `p` (rest frame);
    /// ties go to the distal segment.
    fn nearest_segment_rest(&self, p: &Vec3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, seg) in self.segments.iter().enumerate() {
            let d = seg.axis_distance(p);
            if d < best_d - SEGMENT_TIE_CM || (d - best_d).abs() <= SEGMENT_TIE_CM {
                best = i;
                best_d = best_d.min(d);
            }
        }
        best
    }

    pub fn nearest_segment(&self, p: &Vec3, t: f64) -> usize {
        self.nearest_segment_rest(&self.placement(t).to_rest(p))
    }

    /// Frame of segment `seg` at axial coordinate `station` (rest frame).
    fn frame_rest(&self, seg: usize, station: f64) -> Result<SurfaceFrame> {
        let s = &self.segments[seg];
        let n = s.axis_dir();
        if n.z.abs() > VERTICAL_AXIS_LIMIT {
            return Err(GeometryError::DegenerateAxis);
        }
        let station = station.clamp(0.0, s.length());
        let k0 = s.base_point() + n * station;
        let lateral = Vec3::z().cross(&n).normalize();
        let up = n.cross(&lateral);
        let k_star = k0 + up * s.radius_at(station);
        let alpha = s.taper_angle();
        let tangent = n * alpha.cos() - up * alpha.sin();
        let normal = tangent.cross(&lateral);
        Ok(SurfaceFrame { segment: seg, station, k0, k_star, axis: n, lateral, up, tangent, normal })
    }

    fn frame_to_world(&self, f: SurfaceFrame, pl: &Placement) -> SurfaceFrame {
        SurfaceFrame {
            k0: pl.to_world(&f.k0),
            k_star: pl.to_world(&f.k_star),
            axis: pl.rot * f.axis,
            lateral: pl.rot * f.lateral,
            up: pl.rot * f.up,
            tangent: pl.rot * f.tangent,
            normal: pl.rot * f.normal,
            ..f
        }
    }

    /// Limb frame at `k*` for a sensor centred at `sensor_center` (world).
    pub fn surface_frame(&self, sensor_center: &Vec3, t: f64) -> Result<SurfaceFrame> {
        let pl = self.placement(t);
        let p = pl.to_rest(sensor_center);
        let seg = self.nearest_segment_rest(&p);
        let station = self.segments[seg].axial_coordinate(&p);
        let f = self.frame_rest(seg, station)?;
        Ok(self.frame_to_world(f, &pl))
    }

    /// The top-most surface point of the cross-section through the sensor centre.
    pub fn surface_point_k_star(&self, sensor_center: &Vec3, t: f64) -> Result<Vec3> {
        self.surface_frame(sensor_center, t).map(|f| f.k_star)
    }

    /// Ground-truth relative pose of a sensor frame with respect to the limb.
    pub fn relative_pose(&self, sensor: &EePose, t: f64) -> Result<RelativePose> {
        let f = self.surface_frame(&sensor.position, t)?;
        let d = sensor.position - f.k_star;
        let rel = f.surface_rotation().inverse() * sensor.rotation();
        let (_, pitch, yaw) = rel.euler_angles();
        Ok(RelativePose {
            dy: d.dot(&f.lateral),
            dz: d.dot(&f.up),
            theta_y: wrap_angle(pitch),
            theta_z: wrap_angle(yaw),
        })
    }

    /// Signed distance from `point` to the limb surface; negative inside.
    pub fn signed_clearance(&self, point: &Vec3, t: f64) -> f64 {
        let p = self.placement(t).to_rest(point);
        self.segments.iter().map(|s| s.signed_distance(&p)).fold(f64::INFINITY, f64::min)
    }

    /// Inverse of [`relative_pose`](Self::relative_pose): the sensor frame that
    /// sits at `pose` from the cross-section of segment `seg` at `station` cm.
    pub fn place_sensor(
        &self,
        seg: usize,
        station: f64,
        pose: &RelativePose,
        roll: f64,
        t: f64,
    ) -> Result<EePose> {
        let s = self
            .segments
            .get(seg)
            .ok_or_else(|| GeometryError::InvalidSegment(format!("no segment {seg}")))?;
        if !(0.0..=s.length()).contains(&station) {
            return Err(GeometryError::StationOutOfRange { station, length: s.length() });
        }
        let pl = self.placement(t);
        let f = self.frame_to_world(self.frame_rest(seg, station)?, &pl);
        let position = f.k_star + f.lateral * pose.dy + f.up * pose.dz;
        let local = Rotation3::from_euler_angles(roll, pose.theta_y, pose.theta_z);
        Ok(EePose::from_rotation(position, &(f.surface_rotation() * local)))
    }
}

/// Which plane the distal segment swings in when the joint articulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BendPlane {
    /// Rotation about the vertical through the joint (elbow flexion with the arm level).
    Horizontal,
    /// Downward tilt of the distal segment (knee flexion, forearm tilt).
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDims {
    pub length_cm: f64,
    pub radius_base_cm: f64,
    pub radius_tip_cm: f64,
}

/// Template for an articulated limb; see [`articulate`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbSpec {
    pub origin_cm: [f64; 3],
    /// Heading of the proximal segment in the horizontal plane.
    #[serde(default)]
    pub heading_rad: f64,
    pub proximal: SegmentDims,
    #[serde(default)]
    pub distal: Option<SegmentDims>,
    pub bend_plane: BendPlane,
    /// Fixed horizontal bend applied before articulation (e.g. a right-angle
    /// elbow under a forearm tilt).
    #[serde(default)]
    pub preset_yaw_rad: f64,
}

/// Builds the limb with its distal segment rotated by `joint_angle` about the joint.
pub fn articulate(spec: &LimbSpec, joint_angle: f64) -> Result<LimbModel> {
    if !(0.0..=MAX_JOINT_ANGLE + 1e-12).contains(&joint_angle) || !joint_angle.is_finite() {
        return Err(GeometryError::JointAngleOutOfRange(joint_angle));
    }
    let origin = Vec3::from(spec.origin_cm);
    let d1 = Vec3::new(spec.heading_rad.cos(), spec.heading_rad.sin(), 0.0);
    let p = &spec.proximal;
    let first = LimbSegment::new(origin, d1, p.length_cm, p.radius_base_cm, p.radius_tip_cm)?;
    let Some(dist) = &spec.distal else {
        return LimbModel::new(vec![first], joint_angle);
    };
    let z = Vec3::z_axis();
    let preset = Rotation3::from_axis_angle(&z, spec.preset_yaw_rad) * d1;
    let d2 = match spec.bend_plane {
        BendPlane::Horizontal => Rotation3::from_axis_angle(&z, joint_angle) * preset,
        BendPlane::Vertical => {
            let left = Unit::new_normalize(Vec3::z().cross(&preset));
            Rotation3::from_axis_angle(&left, joint_angle) * preset
        }
    };
    let second = LimbSegment::new(first.tip_point(), d2, dist.length_cm, dist.radius_base_cm, dist.radius_tip_cm)?;
    LimbModel::new(vec![first, second], joint_angle)
}

/// End-effector (or sensor-plate) pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub position: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EePose {
    pub fn new(position: Vec3, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { position, roll: wrap_angle(roll), pitch: wrap_angle(pitch), yaw: wrap_angle(yaw) }
    }

    pub fn from_rotation(position: Vec3, rot: &Rotation3<f64>) -> Self {
        let (roll, pitch, yaw) = rot.euler_angles();
        Self::new(position, roll, pitch, yaw)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    /// Point given in this frame, expressed in world coordinates.
    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.position + self.rotation() * local
    }
}

/// Sensor pose relative to the limb: lateral and vertical offsets from `k*`
/// (cm) and pitch/yaw relative to the local surface (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativePose {
    pub dy: f64,
    pub dz: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl RelativePose {
    pub const fn new(dy: f64, dz: f64, theta_y: f64, theta_z: f64) -> Self {
        Self { dy, dz, theta_y, theta_z }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dy, self.dz, self.theta_y, self.theta_z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the translational part.
    pub fn distance(&self) -> f64 {
        self.dy.hypot(self.dz)
    }
}
