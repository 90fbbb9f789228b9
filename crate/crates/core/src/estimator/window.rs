use crate::geometry::RelativePose;
use crate::sensor::{CapFrame, ELECTRODE_COUNT};

use super::{EstimatorError, Result};

/// One trajectory's aligned frames and labels.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub frames: &'a [CapFrame],
    pub poses: &'a [RelativePose],
}

/// Sliding windows over one or more trajectories.
///
/// Frames are stored once, flattened time-major; every window is a borrowed
/// contiguous slice of that buffer, so a window never copies or alters frame
/// values. Windows never span two trajectories.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    h: usize,
    frames: Vec<f64>,
    labels: Vec<RelativePose>,
    /// Global index of each window's last frame.
    ends: Vec<usize>,
    /// Trajectory index of each window.
    owners: Vec<usize>,
    trajectory_count: usize,
}

/// A window of `h` frames ending at the labelled step.
#[derive(Debug, Clone, Copy)]
pub struct WindowSample<'a> {
    pub x: &'a [f64],
    pub y: RelativePose,
    pub trajectory: usize,
}

impl WindowSet {
    pub fn window_len(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectory_count
    }

    pub fn input_dim(&self) -> usize {
        self.h * ELECTRODE_COUNT
    }

    pub fn get(&self, i: usize) -> WindowSample<'_> {
        let end = self.ends[i];
        let start = (end + 1 - self.h) * ELECTRODE_COUNT;
        WindowSample {
            x: &self.frames[start..(end + 1) * ELECTRODE_COUNT],
            y: self.labels[end],
            trajectory: self.owners[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Keeps only the windows whose trajectory satisfies `keep`.
    pub fn filter_trajectories(&self, keep: impl Fn(usize) -> bool) -> WindowSet {
        let (ends, owners): (Vec<_>, Vec<_>) =
            self.ends.iter().zip(&self.owners).filter(|(_, o)| keep(**o)).map(|(e, o)| (*e, *o)).unzip();
        WindowSet { ends, owners, ..self.clone() }
    }
}

fn check_series(s: &Series<'_>) -> Result<()> {
    if s.frames.len() != s.poses.len() {
        return Err(EstimatorError::LengthMismatch { frames: s.frames.len(), poses: s.poses.len() });
    }
    Ok(())
}

/// Windows of a single series; fails if the series is shorter than `h`.
pub fn window_series(frames: &[CapFrame], poses: &[RelativePose], h: usize) -> Result<WindowSet> {
    let s = Series { frames, poses };
    check_series(&s)?;
    if frames.len() < h || h == 0 {
        return Err(EstimatorError::SeriesTooShort { len: frames.len(), h });
    }
    window_dataset(&[s], h)
}

/// Windows over many trajectories. A trajectory shorter than `h` yields no
/// windows; it still counts towards trajectory indices.
pub fn window_dataset(series: &[Series<'_>], h: usize) -> Result<WindowSet> {
    if h == 0 {
        return Err(EstimatorError::SeriesTooShort { len: 0, h });
    }
    let total: usize = series.iter().map(|s| s.frames.len()).sum();
    let mut set = WindowSet {
        h,
        frames: Vec::with_capacity(total * ELECTRODE_COUNT),
        labels: Vec::with_capacity(total),
        ends: Vec::new(),
        owners: Vec::new(),
        trajectory_count: series.len(),
    };
    for (k, s) in series.iter().enumerate() {
        check_series(s)?;
        let offset = set.labels.len();
        for (f, p) in s.frames.iter().zip(s.poses) {
            set.frames.extend_from_slice(&f.c);
            set.labels.push(*p);
        }
        for end in (h - 1)..s.frames.len() {
            set.ends.push(offset + end);
            set.owners.push(k);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, base: f64) -> (Vec<CapFrame>, Vec<RelativePose>) {
        let frames = (0..n)
            .map(|t| CapFrame { t: t as u64, c: std::array::from_fn(|e| base + t as f64 * 10.0 + e as f64) })
            .collect();
        let poses = (0..n).map(|t| RelativePose::new(base + t as f64, 0.0, 0.0, 0.0)).collect();
        (frames, poses)
    }

    #[test]
    fn window_counts() {
        let (f, p) = series(100, 0.0);
        assert_eq!(window_series(&f, &p, 50).unwrap().len(), 51);
        let (f, p) = series(50, 0.0);
        let w = window_series(&f, &p, 50).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.get(0).y.dy, 49.0);
        let (f, p) = series(49, 0.0);
        assert!(matches!(window_series(&f, &p, 50), Err(EstimatorError::SeriesTooShort { .. })));
        assert!(matches!(window_series(&f, &p[..10], 5), Err(EstimatorError::LengthMismatch { .. })));
    }

    #[test]
    fn windows_stay_inside_trajectories() {
        let (fa, pa) = series(60, 0.0);
        let (fb, pb) = series(60, 1000.0);
        let w = window_dataset(&[Series { frames: &fa, poses: &pa }, Series { frames: &fb, poses: &pb }], 50).unwrap();
        // per-trajectory count oracle: 60 - 50 + 1 each
        assert_eq!(w.len(), 2 * (60 - 50 + 1));
        for s in w.iter() {
            let first = s.x[0];
            let last = s.x[s.x.len() - ELECTRODE_COUNT];
            let from_b = first >= 1000.0;
            assert_eq!(from_b, last >= 1000.0);
            assert_eq!(from_b, s.trajectory == 1);
        }
    }

    #[test]
    fn window_layout_is_time_major() {
        let (f, p) = series(55, 0.0);
        let w = window_series(&f, &p, 50).unwrap();
        let s = w.get(3);
        // window 3 starts at frame 3
        for t in 0..50 {
            for e in 0..ELECTRODE_COUNT {
                assert_eq!(s.x[t * ELECTRODE_COUNT + e], f[3 + t].c[e]);
            }
        }
        assert_eq!(s.y, p[52]);
    }
}
