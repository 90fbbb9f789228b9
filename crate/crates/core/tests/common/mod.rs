#![allow(dead_code)]

use std::f64::consts::PI;

use capservo::geometry::{articulate, BendPlane, LimbModel, LimbSpec, SegmentDims, Vec3};
use capservo::LimbSegment;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random one- or two-segment limb. Vertical bends stay below 75° so no
/// segment axis is close to vertical.
pub fn random_limb<R: Rng>(rng: &mut R) -> LimbModel {
    let rb = rng.gen_range(3.0..7.0);
    let rt = rng.gen_range(2.5..rb);
    let proximal = SegmentDims { length_cm: rng.gen_range(20.0..45.0), radius_base_cm: rb, radius_tip_cm: rt };
    let distal = rng.gen_bool(0.75).then(|| {
        let db = rng.gen_range(2.5..rt.max(2.6));
        SegmentDims { length_cm: rng.gen_range(15.0..40.0), radius_base_cm: db, radius_tip_cm: rng.gen_range(2.0..db) }
    });
    let bend_plane = if rng.gen_bool(0.5) { BendPlane::Horizontal } else { BendPlane::Vertical };
    let max_angle = match bend_plane {
        BendPlane::Horizontal => 2.0 * PI / 3.0,
        BendPlane::Vertical => 75f64.to_radians(),
    };
    let spec = LimbSpec {
        origin_cm: [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0)],
        heading_rad: rng.gen_range(0.0..2.0 * PI),
        proximal,
        distal,
        bend_plane,
        preset_yaw_rad: 0.0,
    };
    articulate(&spec, rng.gen_range(0.0..max_angle)).unwrap()
}

/// Orthonormal pair perpendicular to `n`, built without reference to the
/// vertical so it differs from the limb's own surface frame.
pub fn perpendicular_basis(n: &Vec3) -> (Vec3, Vec3) {
    let seed = if n.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - n * seed.dot(n)).normalize();
    (e1, n.cross(&e1))
}

/// A point at `height` from the lateral surface of `seg`, at fractional
/// station `f` and angle `phi` around the axis from the topmost direction.
pub fn point_near_segment(seg: &LimbSegment, f: f64, phi: f64, height: f64) -> Vec3 {
    let n = seg.axis_dir();
    let lat = Vec3::z().cross(&n).normalize();
    let up = n.cross(&lat);
    let s = f * seg.length();
    seg.base_point() + n * s + (up * phi.cos() + lat * phi.sin()) * (seg.radius_at(s) + height)
}

/// Visits `total` points spread over the lateral surfaces and end caps of
/// every segment, proportionally to area, on a regular parameter grid.
/// `f(segment_index, point)` is called for each.
pub fn for_each_surface_sample(limb: &LimbModel, total: usize, mut f: impl FnMut(usize, &Vec3)) {
    let segs = limb.segments();
    let areas: Vec<[f64; 3]> = segs
        .iter()
        .map(|s| {
            let (rb, rt, l) = (s.radius_base(), s.radius_tip(), s.length());
            let slant = (l * l + (rb - rt).powi(2)).sqrt();
            [PI * (rb + rt) * slant, PI * rb * rb, PI * rt * rt]
        })
        .collect();
    let sum: f64 = areas.iter().flatten().sum();
    for (i, (s, a)) in segs.iter().zip(&areas).enumerate() {
        let n = s.axis_dir();
        let (e1, e2) = perpendicular_basis(&n);
        let l = s.length();
        // lateral surface: square-ish grid in (s, phi)
        let count = (total as f64 * a[0] / sum) as usize;
        let mean_r = 0.5 * (s.radius_base() + s.radius_tip());
        let aspect = 2.0 * PI * mean_r / l;
        let ns = ((count as f64 / aspect).sqrt().ceil() as usize).max(2);
        let nphi = (count / ns).max(8);
        let ring: Vec<(f64, f64)> =
            (0..nphi).map(|k| 2.0 * PI * k as f64 / nphi as f64).map(|p| (p.cos(), p.sin())).collect();
        for j in 0..ns {
            let sj = l * j as f64 / (ns - 1) as f64;
            let r = s.radius_at(sj);
            let c = s.base_point() + n * sj;
            for (cs, sn) in &ring {
                f(i, &(c + (e1 * *cs + e2 * *sn) * r));
            }
        }
        // end caps: polar grid with rings spaced like the lateral grid
        for (cap, centre, r) in [(1, s.base_point(), s.radius_base()), (2, s.tip_point(), s.radius_tip())] {
            let count = (total as f64 * a[cap] / sum) as usize;
            let h = (PI * r * r / count.max(1) as f64).sqrt();
            let nr = ((r / h).ceil() as usize).max(1);
            for k in 1..=nr {
                let rho = r * k as f64 / nr as f64;
                let m = ((2.0 * PI * rho / h).ceil() as usize).max(6);
                for q in 0..m {
                    let p = 2.0 * PI * q as f64 / m as f64;
                    f(i, &(centre + (e1 * p.cos() + e2 * p.sin()) * rho));
                }
            }
            f(i, &centre);
        }
    }
}

/// Nearest segment by dense sampling of each finite axis.
pub fn nearest_axis_by_sampling(limb: &LimbModel, p: &Vec3) -> (usize, f64) {
    let mut dists = Vec::new();
    for s in limb.segments() {
        let n = 4000;
        let d = (0..=n)
            .map(|k| (s.base_point() + s.axis_dir() * (s.length() * k as f64 / n as f64) - p).norm())
            .fold(f64::INFINITY, f64::min);
        dists.push(d);
    }
    let best = if dists.len() == 2 && dists[1] <= dists[0] { 1 } else { 0 };
    let gap = if dists.len() == 2 { (dists[0] - dists[1]).abs() } else { f64::INFINITY };
    (best, gap)
}

/// Inside test for one capped frustum, straight from the definition.
pub fn inside_segment(s: &LimbSegment, p: &Vec3) -> bool {
    let rel = p - s.base_point();
    let a = rel.dot(&s.axis_dir());
    if !(0.0..=s.length()).contains(&a) {
        return false;
    }
    let radial = (rel - s.axis_dir() * a).norm();
    let r = s.radius_base() + (s.radius_tip() - s.radius_base()) * a / s.length();
    radial <= r
}

/// Worst relative error per layer between analytic gradients and central
/// differences with step `eps`, over `per_layer` sampled weights and a few
/// biases. Relative error uses `max(|analytic|, |numeric|, 1e-6)` below.
pub fn gradient_check<R: Rng>(
    model: &capservo::estimator::MlpModel,
    x: &[f64],
    targets: &[f64],
    batch: usize,
    eps: f64,
    per_layer: usize,
    rng: &mut R,
) -> Vec<f64> {
    let (_, grads) = model.mse_gradients(x, targets, batch).unwrap();
    let mut probe = model.clone();
    let mut worst = Vec::new();
    for l in 0..model.layers().len() {
        let mut max_rel: f64 = 0.0;
        let nw = model.layers()[l].weights.len();
        let nb = model.layers()[l].biases.len();
        let mut picks: Vec<(bool, usize)> = (0..per_layer).map(|_| (true, rng.gen_range(0..nw))).collect();
        picks.extend((0..per_layer.div_ceil(4)).map(|_| (false, rng.gen_range(0..nb))));
        for (is_weight, i) in picks {
            let orig = *param_mut(&mut probe, l, is_weight, i);
            *param_mut(&mut probe, l, is_weight, i) = orig + eps;
            let up = probe.mse(x, targets, batch).unwrap();
            *param_mut(&mut probe, l, is_weight, i) = orig - eps;
            let down = probe.mse(x, targets, batch).unwrap();
            *param_mut(&mut probe, l, is_weight, i) = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = if is_weight { grads.weights[l][i] } else { grads.biases[l][i] };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        worst.push(max_rel);
    }
    worst
}

fn param_mut(m: &mut capservo::estimator::MlpModel, l: usize, is_weight: bool, i: usize) -> &mut f64 {
    let layer = &mut m.layers_mut()[l];
    if is_weight {
        &mut layer.weights[i]
    } else {
        &mut layer.biases[i]
    }
}

/// He-initialized network with random biases and a non-trivial input
/// normalization, so every code path carries signal.
pub fn random_net<R: Rng>(dims: &[usize], rng: &mut R) -> capservo::estimator::MlpModel {
    let mut m = capservo::estimator::MlpModel::he_uniform(dims, 10.0, rng).unwrap();
    for layer in m.layers_mut() {
        for b in &mut layer.biases {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let d = dims[0];
    let mean = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
    let sd = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
    m.set_normalization(mean, sd).unwrap();
    m
}

/// Summary of one true-pose run on a straight cylinder.
#[derive(Debug, Clone)]
pub struct EnvelopeRun {
    pub outcome: capservo::control::Outcome,
    pub steps: usize,
    /// `‖(D_y, D_z − 5)‖` at each logged control step.
    pub error: Vec<f64>,
    /// Largest `|advance − v_x/τ_u|` between consecutive control steps,
    /// advance measured along the earlier step's x axis.
    pub advance_dev: f64,
}

impl EnvelopeRun {
    pub fn initial(&self) -> f64 {
        self.error[0]
    }

    pub fn peak(&self) -> f64 {
        self.error.iter().cloned().fold(0.0, f64::max)
    }

    /// Maxima over consecutive blocks of `n` steps.
    pub fn block_maxima(&self, n: usize) -> Vec<f64> {
        self.error.chunks(n).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect()
    }
}

pub fn true_pose_run(start: capservo::RelativePose, seed: u64) -> EnvelopeRun {
    use capservo::control::{run_servo, Scenario, ServoConfig, SuccessCriteria, TruePoseStub};
    let limb = LimbModel::straight(LimbSegment::cylinder(Vec3::new(-100.0, 0.0, 0.0), Vec3::x(), 200.0, 4.0).unwrap());
    let ee = limb.place_sensor(0, 60.0, &start, 0.0, 0.0).unwrap();
    let sc = Scenario { limb, start: ee, criteria: SuccessCriteria::default() };
    let cfg = ServoConfig::default();
    let rig = capservo::SensorRig::calibrated_default();
    let run = run_servo(&sc, &mut TruePoseStub, &cfg, &rig, &mut capservo::rng::substream(seed, "envelope", 0)).unwrap();
    let error = run.log.rows.iter().map(|r| r.truth[0].hypot(r.truth[1] - 5.0)).collect();
    let expected = cfg.v_x_cm_s / cfg.control_rate_hz;
    let advance_dev = run
        .log
        .rows
        .windows(2)
        .map(|w| {
            let x_axis = w[0].ee.rotation() * Vec3::x();
            ((w[1].ee.position - w[0].ee.position).dot(&x_axis) - expected).abs()
        })
        .fold(0.0, f64::max);
    EnvelopeRun { outcome: run.outcome, steps: run.log.rows.len(), error, advance_dev }
}
