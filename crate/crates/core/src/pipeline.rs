//! The synthetic closed loop: recipe → simulated experiment → detections →
//! tracks → behavior score.

use serde::{Deserialize, Serialize};

use crate::arena::{simulate, ArenaConfig, ArenaConfigError, BehaviorModel, DetectionFrame};
use crate::fitness::{FitnessRecord, Objective, DEFAULT_AREA_THRESHOLD};
use crate::formulation::Formulation;
use crate::ga::Evaluator;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tracking::{filter_analytic_arena, track, TrajectorySet, ANALYTIC_ARENA_FRACTION, DEFAULT_GATE_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// px
    pub gate_radius: f64,
    /// Fraction of the dish radius kept for analysis.
    pub analytic_fraction: f64,
    /// px²; droplets smaller than this are not counted by the division score.
    pub area_threshold: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            gate_radius: DEFAULT_GATE_RADIUS,
            analytic_fraction: ANALYTIC_ARENA_FRACTION,
            area_threshold: DEFAULT_AREA_THRESHOLD,
        }
    }
}

/// Everything needed to turn a recipe into scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub arena: ArenaConfig,
    pub model: BehaviorModel,
    pub tracking: TrackingConfig,
    pub objective: Objective,
    pub replicates: usize,
}

impl ClosedLoop {
    pub fn validate(&self) -> Result<(), ArenaConfigError> {
        self.arena.validate()?;
        let t = &self.tracking;
        let bad = |field: &'static str, reason: &str| ArenaConfigError {
            field,
            reason: reason.to_string(),
        };
        if !(t.gate_radius > 0.0 && t.gate_radius.is_finite()) {
            return Err(bad("tracking.gate_radius", "must be positive"));
        }
        if !(t.analytic_fraction > 0.0 && t.analytic_fraction <= 1.0) {
            return Err(bad("tracking.analytic_fraction", "must be in (0, 1]"));
        }
        if !(t.area_threshold >= 0.0 && t.area_threshold.is_finite()) {
            return Err(bad("tracking.area_threshold", "must be non-negative"));
        }
        if self.replicates == 0 {
            return Err(bad("replicates", "must be at least 1"));
        }
        Ok(())
    }

    /// Simulated detections of replicate `replicate` for a recipe seeded with `seed`.
    pub fn detections(&self, recipe: &Formulation<f64>, seed: u64, replicate: usize) -> Vec<DetectionFrame<f64>> {
        let mut rng = rng_from_seed(derive_seed(seed, &[replicate as u64]));
        simulate(recipe, &self.model, &self.arena, &mut rng)
    }

    /// Analytic-arena filtering followed by tracking.
    pub fn trajectories(&self, frames: &[DetectionFrame<f64>]) -> TrajectorySet<f64> {
        let kept = filter_analytic_arena(
            frames,
            self.arena.center,
            self.arena.arena_radius * self.tracking.analytic_fraction,
        );
        track(&kept, self.tracking.gate_radius)
    }

    pub fn experiment(&self, recipe: &Formulation<f64>, seed: u64, replicate: usize) -> FitnessRecord {
        let ts = self.trajectories(&self.detections(recipe, seed, replicate));
        FitnessRecord::evaluate(&ts, self.tracking.area_threshold)
    }
}

impl Evaluator for ClosedLoop {
    type Error = std::convert::Infallible;

    fn evaluate(&self, recipe: &Formulation<f64>, seed: u64) -> Result<Vec<f64>, Self::Error> {
        Ok((0..self.replicates)
            .map(|r| self.experiment(recipe, seed, r).score(self.objective))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::UnimodalMap;

    fn lp(model: BehaviorModel) -> ClosedLoop {
        ClosedLoop {
            arena: ArenaConfig {
                duration: 5.0,
                ..ArenaConfig::default()
            },
            model,
            tracking: TrackingConfig::default(),
            objective: Objective::Movement,
            replicates: 3,
        }
    }

    #[test]
    fn replicates_are_seeded_and_distinct() {
        let l = lp(BehaviorModel::default());
        let f = Formulation::uniform();
        let a = l.evaluate(&f, 11).unwrap();
        assert_eq!(a, l.evaluate(&f, 11).unwrap());
        assert_eq!(a.len(), 3);
        assert_ne!(a[0], a[1]);
        assert_ne!(a, l.evaluate(&f, 12).unwrap());
    }

    #[test]
    fn optimum_moves_faster_than_far_corner() {
        let map = UnimodalMap::seeded(5);
        let best = map.optimum_formulation();
        let l = lp(BehaviorModel::Unimodal(map));
        let far = (0..4)
            .map(Formulation::pure)
            .min_by(|a, b| l.evaluate(a, 1).unwrap()[0].total_cmp(&l.evaluate(b, 1).unwrap()[0]))
            .unwrap();
        let sum = |f: &Formulation| l.evaluate(f, 3).unwrap().iter().sum::<f64>();
        assert!(sum(&best) > sum(&far));
    }

    #[test]
    fn invalid_tracking_config_is_rejected() {
        let mut l = lp(BehaviorModel::default());
        l.tracking.analytic_fraction = 1.5;
        assert!(l.validate().unwrap_err().field.contains("analytic_fraction"));
    }
}
