use capservo::control::{classify, ServoConfig, ServoLog, TruePoseStub};
use capservo::evaluation::{range_heatmap, run_task_suite_with, HeatmapKind, TaskKind, TaskSpec};
use capservo::geometry::RelativePose;
use capservo::SensorRig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn samples(seed: u64, n: usize) -> Vec<(RelativePose, RelativePose)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = RelativePose::new(
                rng.gen_range(-22.0..22.0),
                rng.gen_range(-1.0..22.0),
                rng.gen_range(-0.85..0.85),
                rng.gen_range(-0.85..0.85),
            );
            let p = RelativePose::new(
                t.dy + rng.gen_range(-2.0..2.0),
                t.dz + rng.gen_range(-2.0..2.0),
                t.theta_y + rng.gen_range(-0.1..0.1),
                t.theta_z + rng.gen_range(-0.1..0.1),
            );
            (t, p)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn heatmap_cells_match_brute_force(seed in any::<u64>(), n in 1usize..600) {
        let data = samples(seed, n);
        for kind in [HeatmapKind::Translation, HeatmapKind::Rotation] {
            let g = range_heatmap(&data, kind).unwrap();
            let errs: Vec<(f64, f64, f64)> = data
                .iter()
                .map(|(t, p)| match kind {
                    HeatmapKind::Translation => {
                        (t.dy, t.dz, 0.5 * ((p.dy - t.dy).abs() + (p.dz - t.dz).abs()))
                    }
                    HeatmapKind::Rotation => (
                        t.theta_y.to_degrees(),
                        t.theta_z.to_degrees(),
                        0.5 * ((p.theta_y - t.theta_y).abs() + (p.theta_z - t.theta_z).abs()).to_degrees(),
                    ),
                })
                .collect();
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let (cx, cy) = (g.x0 + (ix as f64 + 0.5) * g.cell, g.y0 + (iy as f64 + 0.5) * g.cell);
                    let hits: Vec<f64> = errs
                        .iter()
                        .filter(|(x, y, _)| (x - cx).abs() <= g.half_window && (y - cy).abs() <= g.half_window)
                        .map(|e| e.2)
                        .collect();
                    prop_assert_eq!(g.count[iy * g.nx + ix], hits.len());
                    match g.at(ix, iy) {
                        None => prop_assert!(hits.is_empty()),
                        Some(v) => {
                            let want = hits.iter().sum::<f64>() / hits.len() as f64;
                            prop_assert!((v - want).abs() <= 1e-9 * want.max(1.0));
                        }
                    }
                }
            }
            for b in &g.bands {
                let hits: Vec<f64> = errs
                    .iter()
                    .filter(|(x, y, _)| {
                        let r = x.hypot(*y);
                        r <= b.hi && (r > b.lo || (b.lo == 0.0 && r >= 0.0))
                    })
                    .map(|e| e.2)
                    .collect();
                prop_assert_eq!(b.count, hits.len());
                if let Some(m) = b.mean {
                    prop_assert!((m - hits.iter().sum::<f64>() / hits.len() as f64).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn band_labels_cover_the_reported_ranges() {
    let g = range_heatmap(&samples(1, 50), HeatmapKind::Translation).unwrap();
    let labels: Vec<_> = g.bands.iter().map(|b| (b.label.as_str(), b.lo, b.hi)).collect();
    assert_eq!(labels, vec![("le10", 0.0, 10.0), ("10to15", 10.0, 15.0), ("gt15", 15.0, f64::INFINITY)]);
    let g = range_heatmap(&samples(1, 50), HeatmapKind::Rotation).unwrap();
    let labels: Vec<_> = g.bands.iter().map(|b| (b.label.as_str(), b.lo, b.hi)).collect();
    assert_eq!(labels, vec![("lt30", 0.0, 30.0), ("30to45", 30.0, 45.0)]);
}

fn suite_csv(spec: &TaskSpec, seed: u64) -> (Vec<u8>, capservo::evaluation::TaskSuiteReport) {
    let report =
        run_task_suite_with(spec, &mut TruePoseStub, &ServoConfig::default(), &SensorRig::calibrated_default(), seed).unwrap();
    let mut out = Vec::new();
    report.write_trials_csv(&mut out).unwrap();
    report.write_success_csv(&mut out).unwrap();
    report.write_distance_curves_long(&mut out).unwrap();
    (out, report)
}

#[test]
fn task_suites_reproduce_and_classification_reads_only_the_log() {
    let spec = TaskSpec { joint_angles_deg: vec![0.0, 60.0], trials: 2, ..TaskSpec::preset(TaskKind::BentElbow) };
    let (a, report) = suite_csv(&spec, 21);
    let (b, _) = suite_csv(&spec, 21);
    assert_eq!(a, b);
    for t in &report.trials {
        let limb = spec.scenario(t.angle_deg, t.trial, 21).unwrap();
        let mut bytes = Vec::new();
        t.log.write_csv(&mut bytes).unwrap();
        let reread = ServoLog::read_csv(&bytes[..]).unwrap();
        assert_eq!(classify(&reread, &limb.limb, &limb.criteria), t.outcome);
        assert_eq!(classify(&t.log, &limb.limb, &limb.criteria), t.outcome);
    }
}
