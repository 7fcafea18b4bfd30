//! Behavior scores computed from tracked droplet paths.
//!
//! Movement and directionality are averaged per frame pair (per frame triple)
//! over the droplets observed in it, then over all pairs (triples) of the
//! experiment. Pairs or triples with no contributing droplet count as zero.
//! The literal `1/(M·N)` normalization is also available for reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tracking::{Sample, TrajectorySet};

/// Minimum area (px²) of a viable droplet; the comparison is strict.
pub const DEFAULT_AREA_THRESHOLD: f64 = 15.0;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FitnessError {
    #[error("experiment has no frames")]
    EmptyExperiment,
    #[error("movement needs at least two frames")]
    NoFramePairs,
    #[error("no droplet was observed on three consecutive frames")]
    NoTriples,
}

/// Which behavior a GA run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Division,
    Movement,
    Directionality,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Division, Objective::Movement, Objective::Directionality];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Division => "division",
            Objective::Movement => "movement",
            Objective::Directionality => "directionality",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown objective `{s}` (expected division, movement or directionality)"))
    }
}

/// Angle between consecutive displacement vectors A→B and B→C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnSample<T: Scalar> {
    pub v: [T; 2],
    pub w: [T; 2],
    /// rad, in `[0, π]`
    pub alpha: T,
}

impl<T: Scalar> TurnSample<T> {
    /// `None` when either vector has zero length.
    pub fn new(a: [T; 2], b: [T; 2], c: [T; 2]) -> Option<Self> {
        let v = [b[0] - a[0], b[1] - a[1]];
        let w = [c[0] - b[0], c[1] - b[1]];
        let nv = v[0].hypot(v[1]);
        let nw = w[0].hypot(w[1]);
        if nv == T::zero() || nw == T::zero() {
            return None;
        }
        let cos = ((v[0] * w[0] + v[1] * w[1]) / (nv * nw)).max(-T::one()).min(T::one());
        Some(TurnSample { v, w, alpha: cos.acos() })
    }
}

fn xy<T: Scalar>(s: &Sample<T>) -> [T; 2] {
    [s.x, s.y]
}

/// Number of droplets in the final frame with area strictly above `area_threshold`.
pub fn fitness_division<T: Scalar>(ts: &TrajectorySet<T>, area_threshold: T) -> Result<T, FitnessError> {
    if ts.frame_count == 0 {
        return Err(FitnessError::EmptyExperiment);
    }
    let last = ts.frame_count - 1;
    let n = ts
        .trajectories
        .iter()
        .filter(|t| t.at(last).is_some_and(|s| s.area > area_threshold))
        .count();
    Ok(T::from_usize_lossy(n))
}

/// Per-frame-pair sums of displacement and contributing droplet counts.
fn displacement_by_pair<T: Scalar>(ts: &TrajectorySet<T>) -> (Vec<T>, Vec<usize>) {
    let pairs = ts.frame_count.saturating_sub(1);
    let mut sum = vec![T::zero(); pairs];
    let mut count = vec![0usize; pairs];
    for traj in &ts.trajectories {
        for w in traj.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let d = (b.x - a.x).hypot(b.y - a.y);
            sum[a.frame] = sum[a.frame] + d;
            count[a.frame] += 1;
        }
    }
    (sum, count)
}

/// Mean translation per droplet per frame, px.
pub fn fitness_movement<T: Scalar>(ts: &TrajectorySet<T>) -> Result<T, FitnessError> {
    if ts.frame_count < 2 {
        return Err(FitnessError::NoFramePairs);
    }
    let (sum, count) = displacement_by_pair(ts);
    let total: T = sum
        .iter()
        .zip(&count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / T::from_usize_lossy(c))
        .sum();
    Ok(total / T::from_usize_lossy(sum.len()))
}

/// Total displacement over `M·N`, with `M` distinct droplets and `N` frames.
pub fn movement_unit_normalized<T: Scalar>(ts: &TrajectorySet<T>) -> Result<T, FitnessError> {
    if ts.frame_count < 2 {
        return Err(FitnessError::NoFramePairs);
    }
    let (sum, _) = displacement_by_pair(ts);
    let total: T = sum.into_iter().sum();
    let mn = T::from_usize_lossy(ts.droplet_count().max(1) * ts.frame_count);
    Ok(total / mn)
}

fn turns_by_triple<T: Scalar>(ts: &TrajectorySet<T>) -> Result<(Vec<T>, Vec<usize>), FitnessError> {
    if !ts.trajectories.iter().any(|t| t.samples.len() >= 3) {
        return Err(FitnessError::NoTriples);
    }
    let triples = ts.frame_count.saturating_sub(2);
    let mut sum = vec![T::zero(); triples];
    let mut count = vec![0usize; triples];
    for traj in &ts.trajectories {
        for w in traj.samples.windows(3) {
            if let Some(turn) = TurnSample::new(xy(&w[0]), xy(&w[1]), xy(&w[2])) {
                sum[w[0].frame] = sum[w[0].frame] + turn.alpha;
                count[w[0].frame] += 1;
            }
        }
    }
    Ok((sum, count))
}

/// Mean turning angle per droplet per frame, rad.
pub fn fitness_directionality<T: Scalar>(ts: &TrajectorySet<T>) -> Result<T, FitnessError> {
    let (sum, count) = turns_by_triple(ts)?;
    let total: T = sum
        .iter()
        .zip(&count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / T::from_usize_lossy(c))
        .sum();
    Ok(total / T::from_usize_lossy(sum.len()))
}

/// Total turning angle over `M·N`.
pub fn directionality_unit_normalized<T: Scalar>(ts: &TrajectorySet<T>) -> Result<T, FitnessError> {
    let (sum, _) = turns_by_triple(ts)?;
    let total: T = sum.into_iter().sum();
    Ok(total / T::from_usize_lossy(ts.droplet_count() * ts.frame_count))
}

/// All behavior scores of one experiment. Scores that are undefined for the
/// experiment (too few frames, no triples) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub division: Option<f64>,
    pub movement: Option<f64>,
    pub directionality: Option<f64>,
    pub movement_mn: Option<f64>,
    pub directionality_mn: Option<f64>,
    pub droplets_observed: usize,
    pub frames: usize,
}

impl FitnessRecord {
    pub fn evaluate<T: Scalar>(ts: &TrajectorySet<T>, area_threshold: T) -> Self {
        let f = |r: Result<T, FitnessError>| r.ok().map(Scalar::as_f64);
        FitnessRecord {
            division: f(fitness_division(ts, area_threshold)),
            movement: f(fitness_movement(ts)),
            directionality: f(fitness_directionality(ts)),
            movement_mn: f(movement_unit_normalized(ts)),
            directionality_mn: f(directionality_unit_normalized(ts)),
            droplets_observed: ts.droplet_count(),
            frames: ts.frame_count,
        }
    }

    /// The score used as GA fitness; undefined scores count as zero.
    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Division => self.division,
            Objective::Movement => self.movement,
            Objective::Directionality => self.directionality,
        }
        .unwrap_or(0.0)
    }
}
