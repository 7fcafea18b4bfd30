//! Stage geometry and fluidic wiring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{Tenths, MAX_PUMP_ID, MAX_SERVO_ID, MAX_STEPS};

pub const LAYOUT_VERSION: u32 = 1;
pub const DEFAULT_LAYOUT_JSON: &str = include_str!("../data/layout.json");

/// Apparatus name for raw carriage coordinates.
pub const CARRIAGE: &str = "carriage";

#[derive(Debug, Clone, Error, PartialEq)]
#[error("layout field `{field}`: {reason}")]
pub struct LayoutError {
    pub field: String,
    pub reason: String,
}

fn lerr(field: impl Into<String>, reason: impl Into<String>) -> LayoutError {
    LayoutError {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Carriage travel limits, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Something mounted on the carriage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Apparatus {
    /// Position relative to the carriage reference point, mm.
    pub offset: [f64; 2],
    /// Servo channel that raises and lowers it, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servo: Option<u8>,
    /// Barrel volume of a plunger syringe, µL; 0 for plain tubes and needles.
    #[serde(default)]
    pub capacity_ul: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dish {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Rectangular well plate; well `k` is at row `k / columns`, column `k % columns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wells {
    pub origin: [f64; 2],
    pub pitch: f64,
    pub rows: usize,
    pub columns: usize,
    pub radius: f64,
}

impl Wells {
    pub fn count(&self) -> usize {
        self.rows * self.columns
    }

    pub fn center(&self, k: usize) -> [f64; 2] {
        let (r, c) = (k / self.columns, k % self.columns);
        [
            self.origin[0] + self.pitch * c as f64,
            self.origin[1] + self.pitch * r as f64,
        ]
    }
}

/// Where a pump valve port leads.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Port {
    /// Reagent bottle holding the named liquid.
    Bottle(String),
    Waste,
    /// Tube ending at a carriage apparatus; reaches whatever vessel is below it.
    Carriage(String),
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Port::Bottle(l) => write!(f, "bottle:{l}"),
            Port::Waste => write!(f, "waste"),
            Port::Carriage(a) => write!(f, "carriage:{a}"),
        }
    }
}

impl FromStr for Port {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "waste" {
            return Ok(Port::Waste);
        }
        match s.split_once(':') {
            Some(("bottle", l)) if !l.is_empty() => Ok(Port::Bottle(l.into())),
            Some(("carriage", a)) if !a.is_empty() => Ok(Port::Carriage(a.into())),
            _ => Err(format!("`{s}` is not `bottle:<liquid>`, `carriage:<apparatus>` or `waste`")),
        }
    }
}

impl Serialize for Port {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Port {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSpec {
    pub id: u8,
    pub syringe_ml: f64,
    /// ms per step used by compiled instructions.
    pub speed_ms: u32,
    /// Port 0 is the input, port 1 the output.
    pub ports: [Port; 2],
}

impl PumpSpec {
    /// Full plunger travel is the step limit, so 1 mL syringes move 20 nL
    /// per step and 5 mL syringes 100 nL.
    pub fn nl_per_step(&self) -> u64 {
        (self.syringe_ml * 1e6 / MAX_STEPS as f64).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub version: u32,
    pub stage: Stage,
    pub apparatus: BTreeMap<String, Apparatus>,
    pub dish: Dish,
    pub wells: Wells,
    pub droplet_positions: Vec<[f64; 2]>,
    pub pumps: Vec<PumpSpec>,
    /// Starting bottle volumes, mL.
    pub bottles_ml: BTreeMap<String, f64>,
}

impl Default for Layout {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LAYOUT_JSON).expect("shipped layout parses")
    }
}

/// `mm` on the 0.1 mm grid.
pub fn to_tenths(mm: f64) -> Tenths {
    (mm * 10.0).round() as Tenths
}

pub fn from_tenths(t: Tenths) -> f64 {
    t as f64 / 10.0
}

fn finite2(p: [f64; 2]) -> bool {
    p[0].is_finite() && p[1].is_finite()
}

impl Layout {
    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let l: Layout = serde_json::from_str(text).map_err(|e| lerr("(json)", e.to_string()))?;
        l.validate()?;
        Ok(l)
    }

    pub fn pump(&self, id: u8) -> Option<&PumpSpec> {
        self.pumps.iter().find(|p| p.id == id)
    }

    /// Apparatus driven by servo channel `servo`.
    pub fn servo_apparatus(&self, servo: u8) -> Option<(&str, &Apparatus)> {
        self.apparatus
            .iter()
            .find(|(_, a)| a.servo == Some(servo))
            .map(|(n, a)| (n.as_str(), a))
    }

    pub fn servo_ids(&self) -> Vec<u8> {
        self.apparatus.values().filter_map(|a| a.servo).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn in_stage(&self, x: Tenths, y: Tenths) -> bool {
        let s = &self.stage;
        (to_tenths(s.x_min)..=to_tenths(s.x_max)).contains(&x) && (to_tenths(s.y_min)..=to_tenths(s.y_max)).contains(&y)
    }

    /// Vessel below a point of the stage: `well:<k>`, `dish`, or none.
    pub fn vessel_at(&self, p: [f64; 2]) -> Option<String> {
        let d = |c: [f64; 2]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
        if d(self.dish.center) <= self.dish.radius {
            return Some(DISH.into());
        }
        (0..self.wells.count())
            .find(|&k| d(self.wells.center(k)) <= self.wells.radius)
            .map(well_name)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.version != LAYOUT_VERSION {
            return Err(lerr("version", format!("expected {LAYOUT_VERSION}, found {}", self.version)));
        }
        let s = &self.stage;
        if !(s.x_min < s.x_max && s.y_min < s.y_max) || ![s.x_min, s.x_max, s.y_min, s.y_max].iter().all(|v| v.is_finite()) {
            return Err(lerr("stage", "bounds must be finite with min < max"));
        }
        if !self.apparatus.contains_key(CARRIAGE) {
            return Err(lerr("apparatus", "the `carriage` reference apparatus is required"));
        }
        let mut servos = BTreeSet::new();
        for (name, a) in &self.apparatus {
            let f = |k: &str| format!("apparatus.{name}.{k}");
            if !finite2(a.offset) {
                return Err(lerr(f("offset"), "must be finite"));
            }
            if !(a.capacity_ul >= 0.0 && a.capacity_ul.is_finite()) {
                return Err(lerr(f("capacity_ul"), "must be non-negative"));
            }
            if let Some(id) = a.servo {
                if id > MAX_SERVO_ID {
                    return Err(lerr(f("servo"), "servo channels are 0..=19"));
                }
                if !servos.insert(id) {
                    return Err(lerr(f("servo"), format!("servo {id} assigned twice")));
                }
            } else if a.capacity_ul > 0.0 {
                return Err(lerr(f("capacity_ul"), "a plunger syringe needs a servo"));
            }
        }
        if !(finite2(self.dish.center) && self.dish.radius > 0.0) {
            return Err(lerr("dish", "center must be finite and radius positive"));
        }
        let w = &self.wells;
        if !(finite2(w.origin) && w.pitch > 0.0 && w.radius > 0.0 && w.radius * 2.0 <= w.pitch) {
            return Err(lerr("wells", "need finite origin and 0 < 2·radius ≤ pitch"));
        }
        if w.count() == 0 {
            return Err(lerr("wells", "at least one well"));
        }
        for (k, p) in self.droplet_positions.iter().enumerate() {
            if self.vessel_at(*p).as_deref() != Some(DISH) {
                return Err(lerr(format!("droplet_positions[{k}]"), "must lie inside the dish"));
            }
        }
        let mut ids = BTreeSet::new();
        for (k, p) in self.pumps.iter().enumerate() {
            let f = |n: &str| format!("pumps[{k}].{n}");
            if p.id > MAX_PUMP_ID {
                return Err(lerr(f("id"), "pump ids are 0..=6"));
            }
            if !ids.insert(p.id) {
                return Err(lerr(f("id"), format!("pump {} listed twice", p.id)));
            }
            let cal = p.syringe_ml * 1e6 / MAX_STEPS as f64;
            if !(p.syringe_ml > 0.0 && (cal - cal.round()).abs() < 1e-9) {
                return Err(lerr(f("syringe_ml"), "must be positive with a whole number of nL per step"));
            }
            if p.speed_ms == 0 {
                return Err(lerr(f("speed_ms"), "must be at least 1"));
            }
            for port in &p.ports {
                match port {
                    Port::Bottle(l) if !self.bottles_ml.contains_key(l) => {
                        return Err(lerr(f("ports"), format!("no bottle of `{l}`")));
                    }
                    Port::Carriage(a) if !self.apparatus.contains_key(a) => {
                        return Err(lerr(f("ports"), format!("unknown apparatus `{a}`")));
                    }
                    _ => {}
                }
            }
        }
        for (l, v) in &self.bottles_ml {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(lerr(format!("bottles_ml.{l}"), "must be non-negative"));
            }
        }
        Ok(())
    }
}

pub const DISH: &str = "dish";
pub const WASTE: &str = "waste";

pub fn well_name(k: usize) -> String {
    format!("well:{k}")
}

pub fn bottle_name(liquid: &str) -> String {
    format!("bottle:{liquid}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_layout_validates() {
        let l = Layout::default();
        l.validate().unwrap();
        assert_eq!(l.wells.count(), 96);
        assert_eq!(l.pump(1).unwrap().nl_per_step(), 20);
        assert_eq!(l.pump(0).unwrap().nl_per_step(), 100);
        assert_eq!(l.servo_apparatus(0).unwrap().0, "syringe");
    }

    #[test]
    fn vessel_lookup() {
        let l = Layout::default();
        assert_eq!(l.vessel_at(l.dish.center).as_deref(), Some(DISH));
        assert_eq!(l.vessel_at(l.wells.center(13)), Some(well_name(13)));
        assert_eq!(l.vessel_at([0.0, 0.0]), None);
    }

    #[test]
    fn bad_port_reference() {
        let mut l = Layout::default();
        l.pumps[0].ports[0] = Port::Bottle("toluene".into());
        assert!(l.validate().unwrap_err().field.starts_with("pumps[0]"));
        assert!("bottle:".parse::<Port>().is_err());
        assert_eq!("carriage:x".parse::<Port>().unwrap(), Port::Carriage("x".into()));
    }
}
