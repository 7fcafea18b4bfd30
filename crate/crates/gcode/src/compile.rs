//! Lab operations and their translation to instructions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dropevo_core::formulation::{well_volumes, Formulation, N_OILS};

use crate::instruction::{Direction, Instruction, Motor, PumpInstruction, MAX_STEPS};
use crate::layout::{to_tenths, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LabOperation {
    /// Places `apparatus` over stage point (`x`, `y`) mm.
    MoveTo { x: f64, y: f64, apparatus: String },
    Aspirate { servo: u8, volume_ul: f64 },
    Dispense { servo: u8, volume_ul: f64 },
    Expel { servo: u8 },
    Raise { servo: u8 },
    Lower { servo: u8 },
    PumpTransfer { pump: u8, volume_ml: f64, direction: Direction },
    Valve { pump: u8, port: u8 },
    Stir { on: bool },
    Dwell { ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("operation {op}: {axis} = {value} mm outside stage [{min}, {max}]")]
    OutOfBounds {
        op: usize,
        axis: char,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("operation {op}: unknown apparatus `{name}`")]
    UnknownApparatus { op: usize, name: String },
    #[error("operation {op}: pump {pump} is not in the layout")]
    UnknownPump { op: usize, pump: u8 },
    #[error("operation {op}: servo {servo} is not in the layout")]
    UnknownServo { op: usize, servo: u8 },
    #[error("operation {op}: pump {pump} has no port {port}")]
    UnknownPort { op: usize, pump: u8, port: u8 },
    #[error("operation {op}: volume must be finite and non-negative, got {value}")]
    BadVolume { op: usize, value: f64 },
    #[error("operation {op}: {steps} steps exceed one full stroke ({max})")]
    StrokeTooLong { op: usize, steps: u64, max: u32 },
    #[error("operation {op}: coordinate is not finite")]
    NotFinite { op: usize },
    #[error("well {well} does not exist (layout has {count})")]
    UnknownWell { well: usize, count: usize },
}

fn volume_nl(op: usize, ul: f64) -> Result<u64, CompileError> {
    if !(ul >= 0.0 && ul.is_finite() && ul < 1e9) {
        return Err(CompileError::BadVolume { op, value: ul });
    }
    Ok((ul * 1000.0).round() as u64)
}

/// Translates operations one by one. Zero-volume transfers emit nothing.
pub fn compile(ops: &[LabOperation], layout: &Layout) -> Result<Vec<Instruction>, CompileError> {
    let mut out = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        let check_servo = |servo: u8| {
            layout
                .servo_apparatus(servo)
                .map(|_| ())
                .ok_or(CompileError::UnknownServo { op: k, servo })
        };
        match op {
            LabOperation::MoveTo { x, y, apparatus } => {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(CompileError::NotFinite { op: k });
                }
                let a = layout.apparatus.get(apparatus).ok_or_else(|| CompileError::UnknownApparatus {
                    op: k,
                    name: apparatus.clone(),
                })?;
                let cx = to_tenths(x - a.offset[0]);
                let cy = to_tenths(y - a.offset[1]);
                let s = &layout.stage;
                for (axis, v, min, max) in [('X', cx, s.x_min, s.x_max), ('Y', cy, s.y_min, s.y_max)] {
                    if v < to_tenths(min) || v > to_tenths(max) {
                        return Err(CompileError::OutOfBounds {
                            op: k,
                            axis,
                            value: v as f64 / 10.0,
                            min,
                            max,
                        });
                    }
                }
                out.push(Instruction::Move { x: cx, y: cy });
            }
            LabOperation::Aspirate { servo, volume_ul } | LabOperation::Dispense { servo, volume_ul } => {
                check_servo(*servo)?;
                let nl = volume_nl(k, *volume_ul)?;
                if nl > 0 {
                    out.push(match op {
                        LabOperation::Aspirate { .. } => Instruction::Draw { servo: *servo, nl },
                        _ => Instruction::Push { servo: *servo, nl },
                    });
                }
            }
            LabOperation::Expel { servo } => {
                check_servo(*servo)?;
                out.push(Instruction::Expel { servo: *servo });
            }
            LabOperation::Raise { servo } => {
                check_servo(*servo)?;
                out.push(Instruction::Raise { servo: *servo });
            }
            LabOperation::Lower { servo } => {
                check_servo(*servo)?;
                out.push(Instruction::Lower { servo: *servo });
            }
            LabOperation::PumpTransfer {
                pump,
                volume_ml,
                direction,
            } => {
                let spec = layout.pump(*pump).ok_or(CompileError::UnknownPump { op: k, pump: *pump })?;
                let nl = volume_nl(k, volume_ml * 1000.0)?;
                let steps = (nl as f64 / spec.nl_per_step() as f64).round() as u64;
                if steps > MAX_STEPS as u64 {
                    return Err(CompileError::StrokeTooLong {
                        op: k,
                        steps,
                        max: MAX_STEPS,
                    });
                }
                if steps > 0 {
                    out.push(Instruction::Pump(PumpInstruction {
                        pump: *pump,
                        motor: Motor::Plunger,
                        direction: *direction,
                        speed_ms: spec.speed_ms,
                        steps: steps as u32,
                    }));
                }
            }
            LabOperation::Valve { pump, port } => {
                let spec = layout.pump(*pump).ok_or(CompileError::UnknownPump { op: k, pump: *pump })?;
                if *port as usize >= spec.ports.len() {
                    return Err(CompileError::UnknownPort {
                        op: k,
                        pump: *pump,
                        port: *port,
                    });
                }
                out.push(Instruction::Pump(PumpInstruction {
                    pump: *pump,
                    motor: Motor::Valve,
                    direction: Direction::Push,
                    speed_ms: spec.speed_ms,
                    steps: *port as u32,
                }));
            }
            LabOperation::Stir { on } => out.push(Instruction::Stir { on: *on }),
            LabOperation::Dwell { ms } => out.push(Instruction::Dwell { ms: *ms }),
        }
    }
    Ok(out)
}

/// Which pump, servo and apparatus does what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub acetone_pump: u8,
    /// Pump of each oil in recipe order.
    pub oil_pumps: [u8; N_OILS],
    pub aqueous_pump: u8,
    pub drain_pump: u8,
    pub syringe_servo: u8,
    pub needle_servo: u8,
    pub syringe: String,
    pub needle: String,
    pub oil_tubes: String,
    pub solvent_tubes: String,
}

impl Default for Roles {
    fn default() -> Self {
        Roles {
            acetone_pump: 0,
            oil_pumps: [1, 2, 3, 4],
            aqueous_pump: 5,
            drain_pump: 6,
            syringe_servo: 0,
            needle_servo: 1,
            syringe: "syringe".into(),
            needle: "drain_needle".into(),
            oil_tubes: "oil_tubes".into(),
            solvent_tubes: "solvent_tubes".into(),
        }
    }
}

/// Volumes of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Mixed per recipe, µL.
    pub well_total_ul: f64,
    /// Stirring time after mixing, ms.
    pub stir_ms: u64,
    /// Aqueous phase added to the dish before each replicate, mL.
    pub aqueous_ml: f64,
    /// Taken up by the syringe per replicate, µL.
    pub aspirate_ul: f64,
    /// Per droplet, µL.
    pub droplet_ul: f64,
    /// Pause after each droplet, ms.
    pub settle_ms: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            well_total_ul: dropevo_core::formulation::WELL_TOTAL_UL,
            stir_ms: 10_000,
            aqueous_ml: 2.0,
            aspirate_ul: 80.0,
            droplet_ul: 5.0,
            settle_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningPlan {
    pub acetone_ml: Vec<f64>,
    pub aqueous_ml: Vec<f64>,
    /// The needle is dipped during this many of the first acetone washes.
    pub dipped_washes: usize,
    /// Volume drawn and released per needle dip, µL.
    pub dip_ul: f64,
    /// Full drain-pump strokes per emptying of the dish.
    pub drain_strokes: usize,
}

impl Default for CleaningPlan {
    fn default() -> Self {
        CleaningPlan {
            acetone_ml: vec![4.0, 4.0, 3.0],
            aqueous_ml: vec![1.5, 1.5, 1.0],
            dipped_washes: 2,
            dip_ul: 50.0,
            drain_strokes: 2,
        }
    }
}

fn well_center(layout: &Layout, well: usize) -> Result<[f64; 2], CompileError> {
    if well >= layout.wells.count() {
        return Err(CompileError::UnknownWell {
            well,
            count: layout.wells.count(),
        });
    }
    Ok(layout.wells.center(well))
}

fn move_to(p: [f64; 2], apparatus: &str) -> LabOperation {
    LabOperation::MoveTo {
        x: p[0],
        y: p[1],
        apparatus: apparatus.into(),
    }
}

fn transfer(ops: &mut Vec<LabOperation>, pump: u8, volume_ml: f64) {
    if volume_ml <= 0.0 {
        return;
    }
    ops.extend([
        LabOperation::Valve { pump, port: 0 },
        LabOperation::PumpTransfer {
            pump,
            volume_ml,
            direction: Direction::Draw,
        },
        LabOperation::Valve { pump, port: 1 },
        LabOperation::PumpTransfer {
            pump,
            volume_ml,
            direction: Direction::Push,
        },
    ]);
}

/// Pumps the recipe into `well` and stirs it.
pub fn mixing_ops(f: &Formulation<f64>, layout: &Layout, roles: &Roles, plan: &ExperimentPlan, well: usize) -> Result<Vec<LabOperation>, CompileError> {
    let mut ops = vec![move_to(well_center(layout, well)?, &roles.oil_tubes)];
    for (k, v) in well_volumes(f, plan.well_total_ul).into_iter().enumerate() {
        transfer(&mut ops, roles.oil_pumps[k], v / 1000.0);
    }
    ops.extend([
        LabOperation::Stir { on: true },
        LabOperation::Dwell { ms: plan.stir_ms },
        LabOperation::Stir { on: false },
    ]);
    Ok(ops)
}

/// Adds the aqueous phase, takes up oil from `well` and places one droplet
/// at each programmed position, raising the syringe after each.
pub fn replicate_ops(layout: &Layout, roles: &Roles, plan: &ExperimentPlan, well: usize) -> Result<Vec<LabOperation>, CompileError> {
    let s = roles.syringe_servo;
    let mut ops = vec![move_to(layout.dish.center, &roles.solvent_tubes)];
    transfer(&mut ops, roles.aqueous_pump, plan.aqueous_ml);
    ops.extend([
        move_to(well_center(layout, well)?, &roles.syringe),
        LabOperation::Lower { servo: s },
        LabOperation::Aspirate {
            servo: s,
            volume_ul: plan.aspirate_ul,
        },
        LabOperation::Raise { servo: s },
    ]);
    for p in &layout.droplet_positions {
        ops.extend([
            move_to(*p, &roles.syringe),
            LabOperation::Lower { servo: s },
            LabOperation::Dispense {
                servo: s,
                volume_ul: plan.droplet_ul,
            },
            LabOperation::Raise { servo: s },
            LabOperation::Dwell { ms: plan.settle_ms },
        ]);
    }
    Ok(ops)
}

fn drain_ops(layout: &Layout, roles: &Roles, plan: &CleaningPlan) -> Result<Vec<LabOperation>, CompileError> {
    let spec = layout.pump(roles.drain_pump).ok_or(CompileError::UnknownPump {
        op: 0,
        pump: roles.drain_pump,
    })?;
    let mut ops = vec![
        move_to(layout.dish.center, &roles.needle),
        LabOperation::Lower { servo: roles.needle_servo },
    ];
    for _ in 0..plan.drain_strokes {
        transfer(&mut ops, roles.drain_pump, spec.syringe_ml);
    }
    ops.push(LabOperation::Raise { servo: roles.needle_servo });
    Ok(ops)
}

/// Empties the syringe into the dish and drains it, runs the acetone washes
/// (dipping and cycling the syringe in the first ones), then the aqueous
/// washes. The last aqueous wash is left in the dish.
pub fn cleaning_ops(layout: &Layout, roles: &Roles, plan: &CleaningPlan) -> Result<Vec<LabOperation>, CompileError> {
    let s = roles.syringe_servo;
    let mut ops = vec![
        move_to(layout.dish.center, &roles.syringe),
        LabOperation::Lower { servo: s },
        LabOperation::Expel { servo: s },
        LabOperation::Raise { servo: s },
    ];
    ops.extend(drain_ops(layout, roles, plan)?);
    for (k, &ml) in plan.acetone_ml.iter().enumerate() {
        ops.push(move_to(layout.dish.center, &roles.solvent_tubes));
        transfer(&mut ops, roles.acetone_pump, ml);
        if k < plan.dipped_washes {
            ops.extend([
                move_to(layout.dish.center, &roles.syringe),
                LabOperation::Lower { servo: s },
                LabOperation::Aspirate {
                    servo: s,
                    volume_ul: plan.dip_ul,
                },
                LabOperation::Dispense {
                    servo: s,
                    volume_ul: plan.dip_ul,
                },
                LabOperation::Raise { servo: s },
            ]);
        }
        ops.extend(drain_ops(layout, roles, plan)?);
    }
    let n = plan.aqueous_ml.len();
    for (k, &ml) in plan.aqueous_ml.iter().enumerate() {
        ops.push(move_to(layout.dish.center, &roles.solvent_tubes));
        transfer(&mut ops, roles.aqueous_pump, ml);
        if k + 1 < n {
            ops.extend(drain_ops(layout, roles, plan)?);
        }
    }
    Ok(ops)
}

/// Mixing plus the first replicate.
pub fn compile_experiment(f: &Formulation<f64>, layout: &Layout, well: usize) -> Result<Vec<Instruction>, CompileError> {
    let roles = Roles::default();
    let plan = ExperimentPlan::default();
    let mut ops = mixing_ops(f, layout, &roles, &plan, well)?;
    ops.extend(replicate_ops(layout, &roles, &plan, well)?);
    compile(&ops, layout)
}

/// A further replicate from an already mixed well.
pub fn compile_replicate(layout: &Layout, well: usize) -> Result<Vec<Instruction>, CompileError> {
    compile(&replicate_ops(layout, &Roles::default(), &ExperimentPlan::default(), well)?, layout)
}

pub fn compile_cleaning_cycle(layout: &Layout) -> Result<Vec<Instruction>, CompileError> {
    compile(&cleaning_ops(layout, &Roles::default(), &CleaningPlan::default())?, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruction::render;
    use crate::layout::CARRIAGE;

    #[test]
    fn move_rounds_to_grid() {
        let l = Layout::default();
        let p = compile(&[move_to([10.07, 5.12], CARRIAGE)], &l).unwrap();
        assert_eq!(render(&p), "G1 X10.1 Y5.1\n");
        assert!(compile(&[], &l).unwrap().is_empty());
    }

    #[test]
    fn move_errors() {
        let l = Layout::default();
        let e = compile(&[move_to([10.0, 5.0], CARRIAGE), move_to([500.0, 5.0], CARRIAGE)], &l).unwrap_err();
        assert!(matches!(e, CompileError::OutOfBounds { op: 1, axis: 'X', .. }));
        let e = compile(&[move_to([10.0, 5.0], "laser")], &l).unwrap_err();
        assert!(matches!(e, CompileError::UnknownApparatus { .. }));
    }

    #[test]
    fn pump_transfer_steps() {
        let l = Layout::default();
        // 1 mL syringe: 500 steps = 10 µL
        let p = compile(
            &[LabOperation::PumpTransfer {
                pump: 3,
                volume_ml: 0.01,
                direction: Direction::Draw,
            }],
            &l,
        )
        .unwrap();
        assert_eq!(render(&p), "P3 M0 D1 S2 E500\n");
        let e = compile(
            &[LabOperation::PumpTransfer {
                pump: 1,
                volume_ml: 1.5,
                direction: Direction::Draw,
            }],
            &l,
        )
        .unwrap_err();
        assert!(matches!(e, CompileError::StrokeTooLong { .. }));
    }

    #[test]
    fn pure_recipe_uses_one_oil_pump() {
        let l = Layout::default();
        let p = compile_experiment(&Formulation::pure(0), &l, 0).unwrap();
        let oil_pumps: std::collections::BTreeSet<u8> = p
            .iter()
            .filter_map(|i| match i {
                Instruction::Pump(p) if (1..=4).contains(&p.pump) => Some(p.pump),
                _ => None,
            })
            .collect();
        assert_eq!(oil_pumps.into_iter().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn cleaning_volumes() {
        let l = Layout::default();
        let p = compile_cleaning_cycle(&l).unwrap();
        let pushed = |pump: u8| -> u64 {
            p.iter()
                .filter_map(|i| match i {
                    Instruction::Pump(q) if q.pump == pump && q.motor == Motor::Plunger && q.direction == Direction::Push => Some(q.steps as u64),
                    _ => None,
                })
                .sum::<u64>()
                * l.pump(pump).unwrap().nl_per_step()
        };
        assert_eq!(pushed(0), 11_000_000);
        assert_eq!(pushed(5), 4_000_000);
    }
}
