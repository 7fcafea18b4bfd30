//! Frame-to-frame droplet identity assignment.
//!
//! For each detection in frame `t`, the candidates are the droplets of frame
//! `t - 1` whose centers lie within the gate radius and that have not already
//! been claimed by an earlier detection of frame `t`. The nearest candidate
//! wins; ties go to the lower droplet id. A detection without candidates
//! starts a new droplet.

use serde::{Deserialize, Serialize};

use crate::arena::{Detection, DetectionFrame};
use crate::scalar::Scalar;

/// Gate radius, px.
pub const DEFAULT_GATE_RADIUS: f64 = 30.0;

/// Fraction of the dish radius kept by the analytic arena.
pub const ANALYTIC_ARENA_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample<T: Scalar = f64> {
    pub frame: usize,
    pub x: T,
    pub y: T,
    pub area: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T: Scalar = f64> {
    pub droplet_id: u64,
    /// Contiguous, strictly increasing frames.
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn first_frame(&self) -> usize {
        self.samples[0].frame
    }

    pub fn last_frame(&self) -> usize {
        self.samples[self.samples.len() - 1].frame
    }

    /// The sample at `frame`, if the droplet was alive then.
    pub fn at(&self, frame: usize) -> Option<&Sample<T>> {
        let first = self.first_frame();
        if frame < first {
            return None;
        }
        self.samples.get(frame - first)
    }
}

/// All droplet paths of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet<T: Scalar = f64> {
    pub trajectories: Vec<Trajectory<T>>,
    /// Total number of frames in the experiment.
    pub frame_count: usize,
}

impl<T: Scalar> TrajectorySet<T> {
    /// Number of distinct droplets observed.
    pub fn droplet_count(&self) -> usize {
        self.trajectories.len()
    }
}

/// Links detections across consecutive frames. `frames` must be ordered by
/// frame index; gaps are treated as frames without detections.
pub fn track<T: Scalar>(frames: &[DetectionFrame<T>], radius: T) -> TrajectorySet<T> {
    let frame_count = frames.last().map_or(0, |f| f.frame + 1);
    let r2 = radius * radius;
    let mut trajectories: Vec<Trajectory<T>> = Vec::new();
    // (trajectory index, x, y) of droplets present in the previous frame
    let mut previous: Vec<(usize, T, T)> = Vec::new();
    let mut prev_frame: Option<usize> = None;

    for frame in frames {
        debug_assert!(prev_frame.map_or(true, |p| frame.frame > p), "frames out of order");
        let contiguous = prev_frame.is_some_and(|p| p + 1 == frame.frame);
        let candidates: &[(usize, T, T)] = if contiguous { &previous } else { &[] };
        let mut claimed = vec![false; candidates.len()];
        let mut current = Vec::with_capacity(frame.detections.len());

        for d in &frame.detections {
            let mut best: Option<(usize, T)> = None;
            for (k, &(traj, px, py)) in candidates.iter().enumerate() {
                if claimed[k] {
                    continue;
                }
                let d2 = (d.x - px) * (d.x - px) + (d.y - py) * (d.y - py);
                if d2 > r2 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bk, bd2)) => {
                        d2 < bd2 || (d2 == bd2 && trajectories[traj].droplet_id < trajectories[candidates[bk].0].droplet_id)
                    }
                };
                if better {
                    best = Some((k, d2));
                }
            }
            let sample = Sample {
                frame: frame.frame,
                x: d.x,
                y: d.y,
                area: d.area,
            };
            let traj = match best {
                Some((k, _)) => {
                    claimed[k] = true;
                    let traj = candidates[k].0;
                    trajectories[traj].samples.push(sample);
                    traj
                }
                None => {
                    trajectories.push(Trajectory {
                        droplet_id: trajectories.len() as u64,
                        samples: vec![sample],
                    });
                    trajectories.len() - 1
                }
            };
            current.push((traj, d.x, d.y));
        }
        previous = current;
        prev_frame = Some(frame.frame);
    }

    TrajectorySet {
        trajectories,
        frame_count,
    }
}

/// Drops detections outside the analytic arena circle.
pub fn filter_analytic_arena<T: Scalar>(
    frames: &[DetectionFrame<T>],
    center: [T; 2],
    radius: T,
) -> Vec<DetectionFrame<T>> {
    frames
        .iter()
        .map(|f| DetectionFrame {
            frame: f.frame,
            detections: f
                .detections
                .iter()
                .filter(|d: &&Detection<T>| {
                    let dx = d.x - center[0];
                    let dy = d.y - center[1];
                    dx * dx + dy * dy < radius * radius
                })
                .copied()
                .collect(),
        })
        .collect()
}
