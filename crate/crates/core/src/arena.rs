//! Synthetic droplet arena.
//!
//! Stands in for the camera and the chemistry: a recipe is mapped to a small set
//! of behavior parameters, and four injected droplets then follow a correlated
//! random walk, occasionally split, slowly dissolve, and freeze when they touch
//! the dish wall. The output is the per-frame detection list a droplet detector
//! would produce from video.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::formulation::{normalize, recipe_oils, Formulation, FourthOil, OilProperties, N_OILS};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Speed of an insoluble oil, px/frame.
pub const SPEED_FLOOR: f64 = 0.05;
/// Added speed per g/L of water solubility, px/frame.
pub const SPEED_PER_SOLUBILITY: f64 = 0.05;
/// Heading noise floor, rad/frame.
pub const TURN_FLOOR: f64 = 0.05;
/// Heading noise per unit fluidity (1/viscosity in 1/(mPa·s)), rad/frame.
pub const TURN_PER_FLUIDITY: f64 = 1.0;
/// Oils at or above this surface tension (mN/m) never split.
pub const SURFACE_TENSION_REF: f64 = 28.0;
/// Split probability per frame per mN/m below the reference surface tension.
pub const SPLIT_PER_DEFICIT: f64 = 2e-4;
/// Area lost per frame per g/L of solubility, px².
pub const SHRINK_PER_SOLUBILITY: f64 = 0.004;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    /// Hz
    pub frame_rate: f64,
    /// s
    pub duration: f64,
    /// Dish center in image pixels.
    pub center: [f64; 2],
    /// px
    pub arena_radius: f64,
    pub injection_positions: Vec<[f64; 2]>,
    /// px²
    pub initial_droplet_area: f64,
    pub rng_seed: u64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            frame_rate: 30.0,
            duration: 60.0,
            center: [320.0, 240.0],
            arena_radius: 200.0,
            injection_positions: vec![[260.0, 180.0], [380.0, 180.0], [260.0, 300.0], [380.0, 300.0]],
            initial_droplet_area: 300.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid arena config field `{field}`: {reason}")]
pub struct ArenaConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ArenaConfig {
    pub fn total_frames(&self) -> usize {
        (self.frame_rate * self.duration).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<(), ArenaConfigError> {
        let err = |field, reason: &str| {
            Err(ArenaConfigError {
                field,
                reason: reason.into(),
            })
        };
        if !(self.frame_rate > 0.0 && self.duration > 0.0) || self.total_frames() < 2 {
            return err("frame_rate", "frame_rate × duration must give at least 2 frames");
        }
        if !(self.arena_radius > 0.0) {
            return err("arena_radius", "must be positive");
        }
        if !(self.initial_droplet_area > 0.0) {
            return err("initial_droplet_area", "must be positive");
        }
        if self.injection_positions.is_empty() {
            return err("injection_positions", "at least one injection is required");
        }
        let r0 = (self.initial_droplet_area / PI).sqrt();
        for p in &self.injection_positions {
            if distance(*p, self.center) + r0 >= self.arena_radius {
                return err("injection_positions", "injection point touches or lies outside the arena");
            }
        }
        Ok(())
    }

    pub fn injection_count(&self) -> usize {
        self.injection_positions.len()
    }
}

/// One detected droplet: center (px) and area (px²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T: Scalar = f64> {
    pub x: T,
    pub y: T,
    pub area: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame<T: Scalar = f64> {
    pub frame: usize,
    pub detections: Vec<Detection<T>>,
}

/// Per-droplet motion parameters of the random-walk model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    /// px/frame
    pub speed: f64,
    /// Standard deviation of the heading change, rad/frame.
    pub turn_noise: f64,
    /// Per-frame probability that a droplet divides.
    pub split_probability: f64,
    /// px²/frame
    pub shrink_rate: f64,
}

impl BehaviorParams {
    pub const STATIC: BehaviorParams = BehaviorParams {
        speed: 0.0,
        turn_noise: 0.0,
        split_probability: 0.0,
        shrink_rate: 0.0,
    };
}

/// Behavior of a pure oil under the documented affine maps.
pub fn pure_oil_behavior(oil: &OilProperties) -> BehaviorParams {
    let solubility = oil.solubility.grams_per_litre();
    BehaviorParams {
        speed: SPEED_FLOOR + SPEED_PER_SOLUBILITY * solubility,
        turn_noise: TURN_FLOOR + TURN_PER_FLUIDITY / oil.viscosity,
        split_probability: (SPLIT_PER_DEFICIT * (SURFACE_TENSION_REF - oil.surface_tension).max(0.0)).min(1.0),
        shrink_rate: SHRINK_PER_SOLUBILITY * solubility,
    }
}

/// Proportion-weighted mixture of the pure-oil behaviors. Every parameter is
/// linear in the proportions, so a mixture behaves like the weighted mean of
/// its components.
pub fn behavior_from_formulation(f: &Formulation<f64>, oils: &[OilProperties; N_OILS]) -> BehaviorParams {
    let mut out = BehaviorParams::STATIC;
    for (p, oil) in f.proportions().iter().zip(oils) {
        let b = pure_oil_behavior(oil);
        out.speed += p * b.speed;
        out.turn_noise += p * b.turn_noise;
        out.split_probability += p * b.split_probability;
        out.shrink_rate += p * b.shrink_rate;
    }
    out.split_probability = out.split_probability.clamp(0.0, 1.0);
    out
}

/// A single-peaked speed landscape over the simplex with a known optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodalMap {
    pub optimum: [f64; N_OILS],
    /// Gaussian width in proportion units.
    pub width: f64,
    /// px/frame at the optimum, on top of `floor`.
    pub peak_speed: f64,
    /// px/frame far from the optimum.
    pub floor: f64,
    pub turn_noise: f64,
}

impl UnimodalMap {
    /// Draws an optimum on a random face of the simplex (one oil absent).
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let face = rng.random_range(0..N_OILS);
        // uniform point on the 2-simplex of the remaining three oils
        let mut e: [f64; 3] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
        let s: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= s);
        let mut optimum = [0.0; N_OILS];
        let mut k = 0;
        for (c, slot) in optimum.iter_mut().enumerate() {
            if c != face {
                *slot = e[k];
                k += 1;
            }
        }
        UnimodalMap {
            optimum,
            width: 0.25,
            peak_speed: 1.0,
            floor: 0.05,
            turn_noise: 1.0,
        }
    }

    pub fn speed(&self, f: &Formulation<f64>) -> f64 {
        let d2: f64 = f
            .proportions()
            .iter()
            .zip(&self.optimum)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.floor + self.peak_speed * (-d2 / (2.0 * self.width * self.width)).exp()
    }

    pub fn behavior(&self, f: &Formulation<f64>) -> BehaviorParams {
        BehaviorParams {
            speed: self.speed(f),
            turn_noise: self.turn_noise,
            split_probability: 0.0,
            shrink_rate: 0.0,
        }
    }

    pub fn optimum_formulation(&self) -> Formulation<f64> {
        normalize(self.optimum).expect("optimum lies on the simplex")
    }
}

/// How a recipe becomes droplet behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorModel {
    /// Affine maps from the oil property table.
    Physical { fourth_oil: FourthOil },
    Unimodal(UnimodalMap),
}

impl Default for BehaviorModel {
    fn default() -> Self {
        BehaviorModel::Physical {
            fourth_oil: FourthOil::OctanoicAcid,
        }
    }
}

impl BehaviorModel {
    pub fn behavior(&self, f: &Formulation<f64>) -> BehaviorParams {
        match self {
            BehaviorModel::Physical { fourth_oil } => behavior_from_formulation(f, &recipe_oils(*fourth_oil)),
            BehaviorModel::Unimodal(map) => map.behavior(f),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Droplet {
    pos: [f64; 2],
    heading: f64,
    area: f64,
    frozen: bool,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Droplet {
    fn radius(&self) -> f64 {
        (self.area / PI).sqrt()
    }

    /// Freezes the droplet against the wall if it touches it, pulling the
    /// center back so that the droplet edge sits on the wall.
    fn wall_check(&mut self, cfg: &ArenaConfig) {
        let d = distance(self.pos, cfg.center);
        let limit = cfg.arena_radius - self.radius().min(cfg.arena_radius * 0.5);
        if d >= limit {
            let scale = limit / d;
            self.pos = [
                cfg.center[0] + (self.pos[0] - cfg.center[0]) * scale,
                cfg.center[1] + (self.pos[1] - cfg.center[1]) * scale,
            ];
            self.frozen = true;
        }
    }

    fn detection(&self) -> Detection<f64> {
        Detection {
            x: self.pos[0],
            y: self.pos[1],
            area: self.area,
        }
    }
}

fn emit(frame: usize, droplets: &[Droplet]) -> DetectionFrame<f64> {
    DetectionFrame {
        frame,
        detections: droplets.iter().map(Droplet::detection).collect(),
    }
}

/// Runs the random-walk model for `cfg.total_frames()` frames.
///
/// Frame 0 holds the injected droplets. On every later frame each live droplet
/// turns, moves `speed` px, freezes if it reaches the wall, shrinks (and is
/// removed once its area reaches zero) and may split into two halves displaced
/// ±1 px perpendicular to its heading. Frozen droplets keep being reported.
pub fn simulate_behavior(params: &BehaviorParams, cfg: &ArenaConfig, rng: &mut impl Rng) -> Vec<DetectionFrame<f64>> {
    let n = cfg.total_frames();
    let mut droplets: Vec<Droplet> = cfg
        .injection_positions
        .iter()
        .map(|&pos| Droplet {
            pos,
            heading: rng.random_range(0.0..2.0 * PI),
            area: cfg.initial_droplet_area,
            frozen: false,
        })
        .collect();
    for d in &mut droplets {
        d.wall_check(cfg);
    }
    let split_p = params.split_probability.clamp(0.0, 1.0);
    let mut frames = Vec::with_capacity(n);
    if n == 0 {
        return frames;
    }
    frames.push(emit(0, &droplets));
    for frame in 1..n {
        let mut next = Vec::with_capacity(droplets.len() + 2);
        for mut d in droplets {
            if d.frozen {
                next.push(d);
                continue;
            }
            if params.turn_noise > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                d.heading += params.turn_noise * z;
            }
            let (s, c) = d.heading.sin_cos();
            d.pos[0] += params.speed * c;
            d.pos[1] += params.speed * s;
            d.wall_check(cfg);
            if d.frozen {
                next.push(d);
                continue;
            }
            d.area -= params.shrink_rate;
            if d.area <= 0.0 {
                continue;
            }
            if split_p > 0.0 && rng.random_bool(split_p) {
                let (s, c) = d.heading.sin_cos();
                let perp = [-s, c];
                let half = d.area * 0.5;
                for sign in [1.0, -1.0] {
                    let mut child = Droplet {
                        pos: [d.pos[0] + sign * perp[0], d.pos[1] + sign * perp[1]],
                        area: half,
                        ..d
                    };
                    child.wall_check(cfg);
                    next.push(child);
                }
            } else {
                next.push(d);
            }
        }
        droplets = next;
        frames.push(emit(frame, &droplets));
    }
    frames
}

/// Simulates one experiment of recipe `f` under `model`.
pub fn simulate(
    f: &Formulation<f64>,
    model: &BehaviorModel,
    cfg: &ArenaConfig,
    rng: &mut impl Rng,
) -> Vec<DetectionFrame<f64>> {
    simulate_behavior(&model.behavior(f), cfg, rng)
}
