//! Evaluation protocols: sensing-range heatmaps, per-station error tables,
//! cross-size generalization, and the limb traversal task suite.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    run_servo, MlpEstimator, Outcome, PoseEstimator, Scenario, ServoConfig, ServoLog, ServoRun, SuccessCriteria,
};
use crate::datagen::{collect_trajectories, CollectionSpec, Dataset, DatagenError, Station};
use crate::estimator::{
    mlp_train, pose_errors, EstimatorError, MlpModel, PoseErrorSummary, TrainConfig, WindowSet, POSE_NET_DIMS,
    WINDOW_LEN,
};
use crate::geometry::{articulate, BendPlane, GeometryError, LimbMotion, LimbSpec, RelativePose, SegmentDims, Vec3};
use crate::io::f9;
use crate::rng::substream;
use crate::sensor::SensorRig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid evaluation setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Predictions for every window of a set, in window order.
pub fn predict_windows(model: &MlpModel, windows: &WindowSet) -> Result<Vec<RelativePose>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(windows.len());
    let mut buf = Vec::new();
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        buf.clear();
        for &i in chunk {
            buf.extend_from_slice(windows.get(i).x);
        }
        out.extend(model.predict_batch(&buf, chunk.len())?);
    }
    Ok(out)
}

/// `(truth, prediction)` pairs for every window of a dataset.
pub fn paired_predictions(model: &MlpModel, data: &Dataset) -> Result<Vec<(RelativePose, RelativePose)>> {
    let w = data.windows(model.input_dim() / crate::sensor::ELECTRODE_COUNT)?;
    let pred = predict_windows(model, &w)?;
    Ok(w.iter().map(|s| s.y).zip(pred).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    /// Cells over `(D_y, D_z)` in cm; value is `½(|ΔD_y| + |ΔD_z|)`.
    Translation,
    /// Cells over `(θ_y, θ_z)` in degrees; value is `½(|Δθ_y| + |Δθ_z|)` in degrees.
    Rotation,
}

/// Mean error per grid cell. A cell averages every sample whose true pose
/// lies within `half_window` of the cell centre on both axes; cells with no
/// such sample are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub kind: HeatmapKind,
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub half_window: f64,
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
    pub bands: Vec<Band>,
}

/// Mean sample error over a band of distances from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub mean: Option<f64>,
    pub count: usize,
}

impl HeatmapGrid {
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.x0 + (ix as f64 + 0.5) * self.cell, self.y0 + (iy as f64 + 0.5) * self.cell)
    }

    pub fn at(&self, ix: usize, iy: usize) -> Option<f64> {
        self.mean[iy * self.nx + ix]
    }

    pub fn band(&self, label: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.label == label)
    }
}

/// Grid layout for one heatmap kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub half_window: f64,
}

impl HeatmapKind {
    pub fn layout(&self) -> GridLayout {
        match self {
            HeatmapKind::Translation => GridLayout { x0: -20.0, y0: 0.0, cell: 1.0, nx: 40, ny: 21, half_window: 1.5 },
            HeatmapKind::Rotation => GridLayout { x0: -46.0, y0: -46.0, cell: 2.0, nx: 46, ny: 46, half_window: 3.0 },
        }
    }

    /// Grid coordinates and error of one sample.
    pub fn sample(&self, truth: &RelativePose, pred: &RelativePose) -> (f64, f64, f64) {
        let e = crate::estimator::abs_errors(pred, truth);
        match self {
            HeatmapKind::Translation => (truth.dy, truth.dz, 0.5 * (e[0] + e[1])),
            HeatmapKind::Rotation => (truth.theta_y.to_degrees(), truth.theta_z.to_degrees(), 0.5 * (e[2] + e[3])),
        }
    }

    fn bands(&self) -> Vec<(&'static str, f64, f64)> {
        match self {
            HeatmapKind::Translation => vec![("le10", 0.0, 10.0), ("10to15", 10.0, 15.0), ("gt15", 15.0, f64::INFINITY)],
            HeatmapKind::Rotation => vec![("lt30", 0.0, 30.0), ("30to45", 30.0, 45.0)],
        }
    }
}

/// Heatmap of estimation error over sweep samples.
pub fn range_heatmap(samples: &[(RelativePose, RelativePose)], kind: HeatmapKind) -> Result<HeatmapGrid> {
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let g = kind.layout();
    let mut sum = vec![0.0; g.nx * g.ny];
    let mut count = vec![0usize; g.nx * g.ny];
    let index_range = |v: f64, origin: f64, n: usize| -> std::ops::Range<usize> {
        // cells whose centre lies within half_window of v
        let lo = ((v - g.half_window - origin) / g.cell - 0.5).ceil().max(0.0);
        let hi = ((v + g.half_window - origin) / g.cell - 0.5).floor() + 1.0;
        let hi = hi.clamp(0.0, n as f64);
        (lo as usize).min(n)..(hi as usize).max((lo as usize).min(n))
    };
    let mut band_acc: Vec<(f64, usize)> = vec![(0.0, 0); kind.bands().len()];
    for (truth, pred) in samples {
        let (x, y, err) = kind.sample(truth, pred);
        for iy in index_range(y, g.y0, g.ny) {
            let cy = g.y0 + (iy as f64 + 0.5) * g.cell;
            if (y - cy).abs() > g.half_window {
                continue;
            }
            for ix in index_range(x, g.x0, g.nx) {
                let cx = g.x0 + (ix as f64 + 0.5) * g.cell;
                if (x - cx).abs() > g.half_window {
                    continue;
                }
                sum[iy * g.nx + ix] += err;
                count[iy * g.nx + ix] += 1;
            }
        }
        let r = x.hypot(y);
        for (acc, (_, lo, hi)) in band_acc.iter_mut().zip(kind.bands()) {
            if in_band(r, lo, hi) {
                acc.0 += err;
                acc.1 += 1;
            }
        }
    }
    let mean = sum.iter().zip(&count).map(|(s, c)| (*c > 0).then(|| s / *c as f64)).collect();
    let bands = kind
        .bands()
        .into_iter()
        .zip(band_acc)
        .map(|((label, lo, hi), (s, c))| Band {
            label: label.to_string(),
            lo,
            hi,
            mean: (c > 0).then(|| s / c as f64),
            count: c,
        })
        .collect();
    Ok(HeatmapGrid {
        kind,
        x0: g.x0,
        y0: g.y0,
        cell: g.cell,
        nx: g.nx,
        ny: g.ny,
        half_window: g.half_window,
        mean,
        count,
        bands,
    })
}

/// Bands are closed at the bottom only for the first band: `[0, 10]`,
/// `(10, 15]`, `(15, ∞)`.
fn in_band(r: f64, lo: f64, hi: f64) -> bool {
    (if lo == 0.0 { r >= lo } else { r > lo }) && r <= hi
}

pub const LONG_CSV_HEADER: &str = "x,y,value,series";

/// Plot-ready rows; empty cells are written as `nan` values.
pub fn write_heatmap_long<W: Write>(mut w: W, grid: &HeatmapGrid, series: &str, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(w, "{LONG_CSV_HEADER}")?;
    }
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = grid.center(ix, iy);
            let v = grid.at(ix, iy).map_or_else(|| "nan".to_string(), f9);
            writeln!(w, "{},{},{},{series}", f9(x), f9(y), v)?;
        }
    }
    Ok(())
}

pub fn write_heatmap_csv<W: Write>(mut w: W, grid: &HeatmapGrid) -> std::io::Result<()> {
    writeln!(w, "x_center,y_center,mean_error,count")?;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = grid.center(ix, iy);
            let v = grid.at(ix, iy).map_or_else(String::new, f9);
            writeln!(w, "{},{},{},{}", f9(x), f9(y), v, grid.count[iy * grid.nx + ix])?;
        }
    }
    Ok(())
}

pub fn write_bands_csv<W: Write>(mut w: W, grids: &[(&str, &HeatmapGrid)]) -> std::io::Result<()> {
    writeln!(w, "series,band,lo,hi,mean_error,count")?;
    for (name, g) in grids {
        for b in &g.bands {
            let m = b.mean.map_or_else(String::new, f9);
            writeln!(w, "{name},{},{},{},{m},{}", b.label, f9(b.lo), f9(b.hi), b.count)?;
        }
    }
    Ok(())
}

/// Per-station error table plus an average row (mean of the station rows).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<(String, PoseErrorSummary)>,
}

impl ErrorTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "location,dy_mae_cm,dy_sd_cm,dz_mae_cm,dz_sd_cm,thy_mae_deg,thy_sd_deg,thz_mae_deg,thz_sd_deg,count")?;
        for (name, s) in &self.rows {
            write!(w, "{name}")?;
            for k in 0..4 {
                write!(w, ",{},{}", f9(s.mae[k]), f9(s.sd[k]))?;
            }
            writeln!(w, ",{}", s.count)?;
        }
        Ok(())
    }

    pub fn average(&self) -> &PoseErrorSummary {
        &self.rows.last().expect("table has an average row").1
    }
}

pub fn per_limb_error_table(per_station: &[(String, Vec<(RelativePose, RelativePose)>)]) -> Result<ErrorTable> {
    if per_station.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(per_station.len() + 1);
    for (name, pairs) in per_station {
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        rows.push((name.clone(), pose_errors(&pred, &truth)?));
    }
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&PoseErrorSummary) -> f64| rows.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
    let average = PoseErrorSummary {
        count: rows.iter().map(|(_, s)| s.count).sum(),
        d_eps_cm: avg(&|s| s.d_eps_cm),
        theta_eps_deg: avg(&|s| s.theta_eps_deg),
        mae: std::array::from_fn(|k| avg(&|s| s.mae[k])),
        sd: std::array::from_fn(|k| avg(&|s| s.sd[k])),
    };
    rows.push(("average".to_string(), average));
    Ok(ErrorTable { rows })
}

/// Cross-size generalization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossSizeSpec {
    pub train_radius_cm: f64,
    pub test_radii_cm: Vec<f64>,
    pub trajectories: usize,
    pub train: TrainConfig,
}

impl Default for CrossSizeSpec {
    fn default() -> Self {
        Self {
            train_radius_cm: 4.0,
            test_radii_cm: vec![2.0, 3.0, 4.0, 5.0, 6.4],
            trajectories: 60,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSizeRow {
    pub radius_cm: f64,
    pub summary: PoseErrorSummary,
    /// Per-axis MAE divided by the in-distribution MAE.
    pub ratio: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSizeReport {
    pub seed: u64,
    pub in_distribution: PoseErrorSummary,
    pub rows: Vec<CrossSizeRow>,
}

impl CrossSizeReport {
    pub fn worst_ratio(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.ratio).fold(0.0, f64::max)
    }
}

fn cylinder_station(radius: f64) -> Station {
    Station::new(&format!("cylinder_r{radius}"), radius, 0.0)
}

/// Trains on one cylinder radius and evaluates on each test radius with
/// separately seeded data; the in-distribution reference is a held-out
/// collection at the training radius.
pub fn cross_size_eval(spec: &CrossSizeSpec, rig: &SensorRig, seed: u64) -> Result<(MlpModel, CrossSizeReport)> {
    let collect = |radius: f64, name: &str| -> Result<Dataset> {
        let cs = CollectionSpec {
            trajectories: spec.trajectories,
            stations: vec![cylinder_station(radius)],
            ..CollectionSpec::default()
        };
        Ok(collect_trajectories(&cs, rig, 0, crate::rng::substream_seed(seed, name, radius.to_bits()))?)
    };
    let train = collect(spec.train_radius_cm, "cross_size/train")?.windows(WINDOW_LEN)?;
    let cfg = TrainConfig { seed, ..spec.train.clone() };
    let (model, _) = mlp_train(&train, None, &POSE_NET_DIMS, &cfg)?;
    let eval = |radius: f64| -> Result<PoseErrorSummary> {
        let pairs = paired_predictions(&model, &collect(radius, "cross_size/test")?)?;
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok(pose_errors(&pred, &truth)?)
    };
    let in_distribution = eval(spec.train_radius_cm)?;
    let mut rows = Vec::new();
    for &r in &spec.test_radii_cm {
        let summary = if r == spec.train_radius_cm { in_distribution } else { eval(r)? };
        let ratio = std::array::from_fn(|k| summary.mae[k] / in_distribution.mae[k]);
        rows.push(CrossSizeRow { radius_cm: r, summary, ratio });
    }
    Ok((model, CrossSizeReport { seed, in_distribution, rows }))
}

impl CrossSizeReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "seed,radius_cm,dy_mae_cm,dz_mae_cm,thy_mae_deg,thz_mae_deg,dy_ratio,dz_ratio,thy_ratio,thz_ratio")?;
        for r in &self.rows {
            write!(w, "{},{}", self.seed, f9(r.radius_cm))?;
            for v in r.summary.mae.iter().chain(&r.ratio) {
                write!(w, ",{}", f9(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BentElbow,
    ForearmTilt,
    BentKnee,
    MovingLimb,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::BentElbow, TaskKind::ForearmTilt, TaskKind::BentKnee, TaskKind::MovingLimb];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::BentElbow => "bent_elbow",
            TaskKind::ForearmTilt => "forearm_tilt",
            TaskKind::BentKnee => "bent_knee",
            TaskKind::MovingLimb => "moving_limb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Proximal,
    Distal,
}

/// One traversal task and its trial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub joint_angles_deg: Vec<f64>,
    pub trials: usize,
    pub limb: LimbSpec,
    pub direction: Direction,
    /// Segment and axial station where the sensor starts.
    pub start_segment: usize,
    pub start_station_cm: f64,
    pub run_length_cm: f64,
    /// Half-widths of the uniform start perturbation in `(D_y, D_z, θ_y, θ_z)`.
    pub start_jitter: [f64; 4],
    /// Lateral motion of the whole limb, if any.
    #[serde(default)]
    pub motion_amplitude_cm: f64,
    #[serde(default = "TaskSpec::default_period")]
    pub motion_period_s: f64,
}

/// Upper arm then forearm, level, heading +x from the shoulder.
pub fn arm_spec(bend_plane: BendPlane, preset_yaw_rad: f64) -> LimbSpec {
    LimbSpec {
        origin_cm: [0.0, 0.0, 0.0],
        heading_rad: 0.0,
        proximal: SegmentDims { length_cm: 28.0, radius_base_cm: 4.6, radius_tip_cm: 4.0 },
        distal: Some(SegmentDims { length_cm: 26.0, radius_base_cm: 4.0, radius_tip_cm: 2.6 }),
        bend_plane,
        preset_yaw_rad,
    }
}

/// Thigh then shin, level, heading +x from the hip.
pub fn leg_spec() -> LimbSpec {
    LimbSpec {
        origin_cm: [0.0, 0.0, 0.0],
        heading_rad: 0.0,
        proximal: SegmentDims { length_cm: 40.0, radius_base_cm: 6.4, radius_tip_cm: 5.9 },
        distal: Some(SegmentDims { length_cm: 40.0, radius_base_cm: 5.2, radius_tip_cm: 3.5 }),
        bend_plane: BendPlane::Vertical,
        preset_yaw_rad: 0.0,
    }
}

impl TaskSpec {
    pub fn preset(kind: TaskKind) -> Self {
        match kind {
            TaskKind::BentElbow => Self::bent_elbow(),
            TaskKind::ForearmTilt => Self::forearm_tilt(),
            TaskKind::BentKnee => Self::bent_knee(),
            TaskKind::MovingLimb => Self::moving_limb(),
        }
    }

    fn default_period() -> f64 {
        8.0
    }

    /// Hand to shoulder around a horizontally bent elbow.
    pub fn bent_elbow() -> Self {
        Self {
            task: TaskKind::BentElbow,
            joint_angles_deg: vec![0.0, 30.0, 60.0, 90.0, 120.0],
            trials: 5,
            limb: arm_spec(BendPlane::Horizontal, 0.0),
            direction: Direction::Proximal,
            start_segment: 1,
            start_station_cm: 14.0,
            run_length_cm: 40.0,
            start_jitter: [1.0, 1.0, 0.05, 0.05],
            motion_amplitude_cm: 0.0,
            motion_period_s: 8.0,
        }
    }

    /// Upper arm to hand over a right-angle elbow with the forearm tilted down.
    pub fn forearm_tilt() -> Self {
        Self {
            task: TaskKind::ForearmTilt,
            joint_angles_deg: vec![0.0, 30.0, 60.0, 90.0],
            trials: 5,
            limb: arm_spec(BendPlane::Vertical, PI / 2.0),
            direction: Direction::Distal,
            start_segment: 0,
            start_station_cm: 4.0,
            run_length_cm: 48.0,
            start_jitter: [1.0, 1.0, 0.05, 0.05],
            motion_amplitude_cm: 0.0,
            motion_period_s: 8.0,
        }
    }

    /// Thigh to ankle over a bent knee.
    pub fn bent_knee() -> Self {
        Self {
            task: TaskKind::BentKnee,
            joint_angles_deg: vec![0.0, 30.0, 60.0, 90.0],
            trials: 5,
            limb: leg_spec(),
            direction: Direction::Distal,
            start_segment: 0,
            start_station_cm: 10.0,
            run_length_cm: 64.0,
            start_jitter: [1.0, 1.0, 0.05, 0.05],
            motion_amplitude_cm: 0.0,
            motion_period_s: 8.0,
        }
    }

    /// A straight arm swaying sideways while the sensor moves hand to shoulder.
    pub fn moving_limb() -> Self {
        Self {
            task: TaskKind::MovingLimb,
            joint_angles_deg: vec![0.0],
            trials: 5,
            limb: arm_spec(BendPlane::Horizontal, 0.0),
            direction: Direction::Proximal,
            start_segment: 1,
            start_station_cm: 14.0,
            run_length_cm: 40.0,
            start_jitter: [1.0, 1.0, 0.05, 0.05],
            motion_amplitude_cm: 10.0,
            motion_period_s: 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.joint_angles_deg {
            if !(0.0..=120.0).contains(a) {
                return Err(EvalError::Invalid(format!("joint angle {a}° outside [0, 120]")));
            }
        }
        if self.trials == 0 || self.run_length_cm <= 0.0 {
            return Err(EvalError::Invalid("trials and run length must be positive".into()));
        }
        if self.motion_amplitude_cm < 0.0 || self.motion_period_s <= 0.0 {
            return Err(EvalError::Invalid("motion amplitude must be non-negative, period positive".into()));
        }
        Ok(())
    }

    /// Segment the sensor must end over.
    pub fn target_segment(&self) -> usize {
        match self.direction {
            Direction::Proximal => 0,
            Direction::Distal => 1,
        }
    }

    /// Scenario for one trial at one joint angle.
    pub fn scenario(&self, angle_deg: f64, trial: usize, seed: u64) -> Result<Scenario> {
        let mut limb = articulate(&self.limb, angle_deg.to_radians())?;
        if self.motion_amplitude_cm > 0.0 {
            let heading = Vec3::new(self.limb.heading_rad.cos(), self.limb.heading_rad.sin(), 0.0);
            let lateral = Vec3::z().cross(&heading);
            limb = limb.with_motion(LimbMotion::lateral_sinusoid(lateral, self.motion_amplitude_cm, self.motion_period_s));
        }
        let mut rng = substream(seed, &format!("task/{}/start", self.task.name()), trial as u64 + angle_key(angle_deg));
        let j = self.start_jitter;
        let mut jit = |h: f64| if h > 0.0 { rng.gen_range(-h..h) } else { 0.0 };
        let p = RelativePose::new(jit(j[0]), 5.0 + jit(j[1]), jit(j[2]), jit(j[3]));
        let start = limb.place_sensor(self.start_segment, self.start_station_cm, &p, 0.0, 0.0)?;
        let criteria = SuccessCriteria {
            target_segment: (limb.segments().len() == 2).then(|| self.target_segment()),
            ..SuccessCriteria::default()
        };
        Ok(Scenario { limb, start, criteria })
    }

    pub fn servo_config(&self, base: &ServoConfig) -> ServoConfig {
        let speed = base.v_x_cm_s.abs();
        ServoConfig {
            v_x_cm_s: match self.direction {
                Direction::Proximal => -speed,
                Direction::Distal => speed,
            },
            run_length_cm: self.run_length_cm,
            ..base.clone()
        }
    }
}

fn angle_key(angle_deg: f64) -> u64 {
    ((angle_deg * 1000.0).round() as u64) << 16
}

/// Result of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub task: TaskKind,
    pub angle_deg: f64,
    pub trial: usize,
    pub outcome: Outcome,
    /// Mean `‖(D̂_y, D̂_z)‖` over control steps with an estimate.
    pub mean_estimated_distance_cm: f64,
    /// Fraction of control steps with plate clearance in `[2, 8]` cm.
    pub clearance_in_band: f64,
    pub log: ServoLog,
}

#[derive(Debug, Clone)]
pub struct TaskSuiteReport {
    pub trials: Vec<TrialResult>,
}

/// One success-table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCell {
    pub task: TaskKind,
    pub angle_deg: f64,
    pub successes: usize,
    pub trials: usize,
    /// Over successful runs; NaN when none succeeded.
    pub mean_estimated_distance_cm: f64,
}

impl TaskSuiteReport {
    pub fn cells(&self) -> Vec<SuccessCell> {
        let mut cells: Vec<SuccessCell> = Vec::new();
        for t in &self.trials {
            let pos = cells.iter().position(|c| c.task == t.task && c.angle_deg == t.angle_deg);
            let cell = match pos {
                Some(i) => &mut cells[i],
                None => {
                    cells.push(SuccessCell {
                        task: t.task,
                        angle_deg: t.angle_deg,
                        successes: 0,
                        trials: 0,
                        mean_estimated_distance_cm: f64::NAN,
                    });
                    cells.last_mut().expect("just pushed")
                }
            };
            cell.trials += 1;
        }
        for c in &mut cells {
            let ok: Vec<&TrialResult> = self
                .trials
                .iter()
                .filter(|t| t.task == c.task && t.angle_deg == c.angle_deg && t.outcome == Outcome::Success)
                .collect();
            c.successes = ok.len();
            if !ok.is_empty() {
                c.mean_estimated_distance_cm =
                    ok.iter().map(|t| t.mean_estimated_distance_cm).sum::<f64>() / ok.len() as f64;
            }
        }
        cells
    }

    pub fn write_success_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "task,angle_deg,successes,trials,success_rate,mean_est_distance_cm")?;
        for c in self.cells() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.task.name(),
                f9(c.angle_deg),
                c.successes,
                c.trials,
                f9(c.successes as f64 / c.trials as f64),
                f9(c.mean_estimated_distance_cm)
            )?;
        }
        Ok(())
    }

    pub fn write_trials_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "task,angle_deg,trial,outcome,mean_est_distance_cm,clearance_in_band")?;
        for t in &self.trials {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.task.name(),
                f9(t.angle_deg),
                t.trial,
                t.outcome,
                f9(t.mean_estimated_distance_cm),
                f9(t.clearance_in_band)
            )?;
        }
        Ok(())
    }

    /// Per task, the estimated distance per control step averaged over trials,
    /// plus the constant 5 cm target line.
    pub fn write_distance_curves_long<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{LONG_CSV_HEADER}")?;
        let mut tasks: Vec<TaskKind> = Vec::new();
        for t in &self.trials {
            if !tasks.contains(&t.task) {
                tasks.push(t.task);
            }
        }
        for task in tasks {
            let runs: Vec<&TrialResult> = self.trials.iter().filter(|t| t.task == task).collect();
            let len = runs.iter().map(|r| r.log.rows.len()).max().unwrap_or(0);
            for k in 0..len {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.log.rows.get(k))
                    .map(|row| row.estimate[0].hypot(row.estimate[1]))
                    .filter(|v| v.is_finite())
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                writeln!(w, "{k},,{},{}", f9(mean), task.name())?;
                writeln!(w, "{k},,5,{}_target", task.name())?;
            }
        }
        Ok(())
    }
}

pub fn mean_estimated_distance(log: &ServoLog) -> f64 {
    let d: Vec<f64> =
        log.rows.iter().map(|r| r.estimate[0].hypot(r.estimate[1])).filter(|v| v.is_finite()).collect();
    if d.is_empty() {
        f64::NAN
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Fraction of logged control steps whose clearance lies in `[lo, hi]`.
pub fn clearance_fraction(log: &ServoLog, lo: f64, hi: f64) -> f64 {
    if log.rows.is_empty() {
        return 0.0;
    }
    log.rows.iter().filter(|r| (lo..=hi).contains(&r.clearance)).count() as f64 / log.rows.len() as f64
}

/// One seeded trial of a task; `cfg` should come from [`TaskSpec::servo_config`].
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    spec: &TaskSpec,
    angle_deg: f64,
    trial: usize,
    estimator: &mut dyn PoseEstimator,
    cfg: &ServoConfig,
    rig: &SensorRig,
    seed: u64,
) -> Result<ServoRun> {
    let sc = spec.scenario(angle_deg, trial, seed)?;
    let mut rng = substream(seed, &format!("task/{}/noise", spec.task.name()), trial as u64 + angle_key(angle_deg));
    Ok(run_servo(&sc, estimator, cfg, rig, &mut rng)?)
}

/// Runs every (angle, trial) cell of a task with the given estimator.
pub fn run_task_suite_with(
    spec: &TaskSpec,
    estimator: &mut dyn PoseEstimator,
    base: &ServoConfig,
    rig: &SensorRig,
    seed: u64,
) -> Result<TaskSuiteReport> {
    spec.validate()?;
    let cfg = spec.servo_config(base);
    let mut trials = Vec::new();
    for &angle in &spec.joint_angles_deg {
        for trial in 0..spec.trials {
            let run = run_trial(spec, angle, trial, estimator, &cfg, rig, seed)?;
            trials.push(TrialResult {
                task: spec.task,
                angle_deg: angle,
                trial,
                outcome: run.outcome,
                mean_estimated_distance_cm: mean_estimated_distance(&run.log),
                clearance_in_band: clearance_fraction(&run.log, 2.0, 8.0),
                log: run.log,
            });
        }
    }
    Ok(TaskSuiteReport { trials })
}

pub fn run_task_suite(
    spec: &TaskSpec,
    model: &MlpModel,
    base: &ServoConfig,
    rig: &SensorRig,
    seed: u64,
) -> Result<TaskSuiteReport> {
    run_task_suite_with(spec, &mut MlpEstimator { model }, base, rig, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::TruePoseStub;

    fn pairs_grid() -> Vec<(RelativePose, RelativePose)> {
        let mut rng = substream(4, "grid", 0);
        (0..400)
            .map(|_| {
                let t = RelativePose::new(rng.gen_range(-20.0..20.0), rng.gen_range(0.0..21.0), 0.0, 0.0);
                let p = RelativePose::new(t.dy + rng.gen_range(-1.0..1.0), t.dz + rng.gen_range(-1.0..1.0), 0.0, 0.0);
                (t, p)
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_give_zero_cells() {
        let pairs: Vec<_> = pairs_grid().into_iter().map(|(t, _)| (t, t)).collect();
        let g = range_heatmap(&pairs, HeatmapKind::Translation).unwrap();
        assert!(g.mean.iter().flatten().all(|v| *v == 0.0));
        assert!(g.mean.iter().any(Option::is_none) || g.count.iter().all(|c| *c > 0));
    }

    #[test]
    fn heatmap_matches_per_cell_scan() {
        let pairs = pairs_grid();
        let g = range_heatmap(&pairs, HeatmapKind::Translation).unwrap();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (cx, cy) = g.center(ix, iy);
                let (mut s, mut n) = (0.0, 0);
                for (t, p) in &pairs {
                    if (t.dy - cx).abs() <= 1.5 && (t.dz - cy).abs() <= 1.5 {
                        s += 0.5 * ((p.dy - t.dy).abs() + (p.dz - t.dz).abs());
                        n += 1;
                    }
                }
                assert_eq!(g.count[iy * g.nx + ix], n);
                assert_eq!(g.at(ix, iy), (n > 0).then(|| s / n as f64));
            }
        }
    }

    #[test]
    fn empty_cells_stay_empty() {
        let t = RelativePose::new(0.2, 3.1, 0.0, 0.0);
        let g = range_heatmap(&[(t, t)], HeatmapKind::Translation).unwrap();
        assert_eq!(g.count.iter().filter(|c| **c > 0).count(), 9);
        assert_eq!(g.mean.iter().filter(|m| m.is_none()).count(), g.nx * g.ny - 9);
        let mut buf = Vec::new();
        write_heatmap_long(&mut buf, &g, "t", true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + g.nx * g.ny);
        assert!(range_heatmap(&[], HeatmapKind::Rotation).is_err());
    }

    #[test]
    fn band_edges() {
        assert!(in_band(0.0, 0.0, 10.0) && in_band(10.0, 0.0, 10.0));
        assert!(!in_band(10.0, 10.0, 15.0) && in_band(15.0, 10.0, 15.0));
        assert!(in_band(20.0, 15.0, f64::INFINITY));
    }

    #[test]
    fn error_table_has_average_row() {
        let p = RelativePose::new(0.0, 5.0, 0.0, 0.0);
        let q = RelativePose::new(1.0, 5.0, 0.0, 0.0);
        let t = per_limb_error_table(&[("a".into(), vec![(p, p)]), ("b".into(), vec![(p, q)])]).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.average().mae[0], 0.5);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn straight_elbow_with_true_pose_succeeds() {
        let spec = TaskSpec { joint_angles_deg: vec![0.0], trials: 2, ..TaskSpec::bent_elbow() };
        let rep = run_task_suite_with(&spec, &mut TruePoseStub, &ServoConfig::default(), &SensorRig::calibrated_default(), 1).unwrap();
        let cells = rep.cells();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].successes, 2, "{:?}", rep.trials.iter().map(|t| t.outcome).collect::<Vec<_>>());
    }

    #[test]
    fn task_angles_are_validated() {
        let spec = TaskSpec { joint_angles_deg: vec![130.0], ..TaskSpec::bent_elbow() };
        assert!(spec.validate().is_err());
    }
}
