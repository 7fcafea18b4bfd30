//! Virtual firmware: executes instructions against modeled pumps, servo
//! syringes and vessels.
//!
//! Volumes are integer nanolitres, so transfers conserve liquid exactly.
//! Drawing part of a mixture splits it by largest remainder. A tube drawing
//! from an open vessel (dish or well) takes air once the vessel is empty;
//! drawing from a bottle or a servo syringe past empty is a fault.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{Direction, Instruction, Motor, PumpInstruction, Tenths, MAX_STEPS};
use crate::layout::{bottle_name, from_tenths, Layout, Port, WASTE};

/// Liquid name → nL.
pub type Mixture = BTreeMap<String, u64>;

pub fn mixture_total(m: &Mixture) -> u64 {
    m.values().sum()
}

fn add_into(dst: &mut Mixture, src: Mixture) {
    for (k, v) in src {
        if v > 0 {
            *dst.entry(k).or_default() += v;
        }
    }
}

/// Removes `amount` nL from `m` in proportion to its composition.
pub fn take(m: &mut Mixture, amount: u64) -> Mixture {
    let total = mixture_total(m);
    assert!(amount <= total, "take {amount} from {total}");
    if amount == total {
        return std::mem::take(m);
    }
    let mut shares: Vec<(String, u64, u128)> = m
        .iter()
        .map(|(k, &v)| {
            let num = amount as u128 * v as u128;
            (k.clone(), (num / total as u128) as u64, num % total as u128)
        })
        .collect();
    let mut left = amount - shares.iter().map(|s| s.1).sum::<u64>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(a.cmp(&b)));
    for k in order {
        if left == 0 {
            break;
        }
        shares[k].1 += 1;
        left -= 1;
    }
    let mut out = Mixture::new();
    for (k, q, _) in shares {
        if q > 0 {
            let v = m.get_mut(&k).expect("present");
            *v -= q;
            if *v == 0 {
                m.remove(&k);
            }
            out.insert(k, q);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServoState {
    pub lowered: bool,
    pub contents: Mixture,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PumpState {
    /// Steps drawn back from the empty position, 0..=50000.
    pub plunger: u32,
    pub port: u8,
    pub contents: Mixture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualState {
    /// 0.1 mm units.
    pub carriage_tenths_mm: [Tenths; 2],
    pub servos: BTreeMap<u8, ServoState>,
    pub pumps: BTreeMap<u8, PumpState>,
    /// Bottles, wells, dish and waste.
    pub vessels: BTreeMap<String, Mixture>,
    pub stirring: bool,
    pub time_ms: u64,
}

impl VirtualState {
    /// Carriage at home, syringes raised and empty, bottles full, dish and wells empty.
    pub fn new(layout: &Layout) -> Self {
        let vessels = layout
            .bottles_ml
            .iter()
            .map(|(l, ml)| (bottle_name(l), Mixture::from([(l.clone(), (ml * 1e6).round() as u64)])))
            .collect();
        VirtualState {
            carriage_tenths_mm: [0, 0],
            servos: layout.servo_ids().into_iter().map(|id| (id, ServoState::default())).collect(),
            pumps: layout.pumps.iter().map(|p| (p.id, PumpState::default())).collect(),
            vessels,
            stirring: false,
            time_ms: 0,
        }
    }

    pub fn vessel(&self, name: &str) -> Mixture {
        self.vessels.get(name).cloned().unwrap_or_default()
    }

    pub fn vessel_total(&self, name: &str) -> u64 {
        self.vessels.get(name).map_or(0, mixture_total)
    }

    /// All liquid anywhere in the system, nL.
    pub fn total_liquid(&self) -> u64 {
        self.vessels.values().map(mixture_total).sum::<u64>()
            + self.pumps.values().map(|p| mixture_total(&p.contents)).sum::<u64>()
            + self.servos.values().map(|s| mixture_total(&s.contents)).sum::<u64>()
    }

    /// Adds liquid to a vessel (for setting up initial conditions).
    pub fn fill(&mut self, vessel: &str, liquid: &str, nl: u64) {
        add_into(self.vessels.entry(vessel.into()).or_default(), Mixture::from([(liquid.into(), nl)]));
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum StateFault {
    #[error("move to ({x}, {y}) mm leaves the stage")]
    OutOfStage { x: f64, y: f64 },
    #[error("pump {0} is not installed")]
    NoPump(u8),
    #[error("servo {0} is not installed")]
    NoServo(u8),
    #[error("pump {pump}: valve has no port {port}")]
    NoPort { pump: u8, port: u32 },
    #[error("pump {pump}: plunger over-travel ({from} → {steps} steps {dir})")]
    PlungerTravel { pump: u8, from: u32, steps: u32, dir: String },
    #[error("{vessel}: cannot draw {wanted_nl} nL, only {available_nl} nL present")]
    Empty { vessel: String, wanted_nl: u64, available_nl: u64 },
    #[error("{apparatus}: no vessel below")]
    NoVessel { apparatus: String },
    #[error("{apparatus}: must be lowered to draw")]
    Raised { apparatus: String },
    #[error("servo {servo}: {wanted_nl} nL exceeds capacity {capacity_nl} nL")]
    SyringeOverfill { servo: u8, wanted_nl: u64, capacity_nl: u64 },
    #[error("servo {servo}: drives no plunger syringe")]
    NotASyringe { servo: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_ms: u64,
    pub instruction_index: usize,
    pub event: String,
    pub vessel: String,
    /// µL; negative when liquid leaves the vessel.
    pub delta_ul: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub state: VirtualState,
    pub events: Vec<Event>,
}

/// Execution stopped by a fault at instruction `pc` (0-based).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("fault at instruction {pc}: {fault}")]
pub struct Halted {
    pub pc: usize,
    pub fault: StateFault,
    /// State and log just before the faulting instruction.
    pub partial: Box<Execution>,
}

struct Machine<'a> {
    layout: &'a Layout,
    state: VirtualState,
    events: Vec<Event>,
    pc: usize,
}

impl Machine<'_> {
    fn log(&mut self, event: &str, vessel: &str, delta_nl: i128) {
        self.events.push(Event {
            time_ms: self.state.time_ms,
            instruction_index: self.pc,
            event: event.into(),
            vessel: vessel.into(),
            delta_ul: delta_nl as f64 / 1000.0,
        });
    }

    fn apparatus_position(&self, name: &str) -> [f64; 2] {
        let off = self.layout.apparatus[name].offset;
        let [x, y] = self.state.carriage_tenths_mm;
        [from_tenths(x) + off[0], from_tenths(y) + off[1]]
    }

    fn vessel_below(&self, apparatus: &str) -> Result<String, StateFault> {
        self.layout
            .vessel_at(self.apparatus_position(apparatus))
            .ok_or_else(|| StateFault::NoVessel {
                apparatus: apparatus.into(),
            })
    }

    fn lowered(&self, apparatus: &str) -> bool {
        match self.layout.apparatus[apparatus].servo {
            Some(s) => self.state.servos.get(&s).is_some_and(|st| st.lowered),
            None => true,
        }
    }

    /// Removes up to `nl` from a vessel; `open` vessels yield air past empty.
    fn draw_from(&mut self, vessel: &str, nl: u64, open: bool, event: &str) -> Result<Mixture, StateFault> {
        let available = self.state.vessel_total(vessel);
        if nl > available && !open {
            return Err(StateFault::Empty {
                vessel: vessel.into(),
                wanted_nl: nl,
                available_nl: available,
            });
        }
        let got = nl.min(available);
        let m = match self.state.vessels.get_mut(vessel) {
            Some(v) => take(v, got),
            None => Mixture::new(),
        };
        if got > 0 {
            self.log(event, vessel, -(got as i128));
        }
        Ok(m)
    }

    fn put_into(&mut self, vessel: &str, m: Mixture, event: &str) {
        let n = mixture_total(&m);
        if n > 0 {
            add_into(self.state.vessels.entry(vessel.into()).or_default(), m);
            self.log(event, vessel, n as i128);
        }
    }

    fn pump(&mut self, p: &PumpInstruction) -> Result<(), StateFault> {
        let spec = self.layout.pump(p.pump).ok_or(StateFault::NoPump(p.pump))?.clone();
        let ps = self.state.pumps.get(&p.pump).cloned().unwrap_or_default();
        match p.motor {
            Motor::Valve => {
                if p.steps as usize >= spec.ports.len() {
                    return Err(StateFault::NoPort {
                        pump: p.pump,
                        port: p.steps,
                    });
                }
                let moved = (p.steps as i64 - ps.port as i64).unsigned_abs().max(1);
                self.state.pumps.entry(p.pump).or_default().port = p.steps as u8;
                self.state.time_ms += moved * p.speed_ms as u64;
                return Ok(());
            }
            Motor::Plunger => {}
        }
        let port = spec.ports[ps.port as usize].clone();
        let event = |d: &str| format!("pump{}:{d}", p.pump);
        let nl = p.steps as u64 * spec.nl_per_step();
        match p.direction {
            Direction::Draw => {
                if ps.plunger + p.steps > MAX_STEPS {
                    return Err(StateFault::PlungerTravel {
                        pump: p.pump,
                        from: ps.plunger,
                        steps: p.steps,
                        dir: "draw".into(),
                    });
                }
                let drawn = match &port {
                    Port::Bottle(l) => self.draw_from(&bottle_name(l), nl, false, &event("draw"))?,
                    Port::Waste => self.draw_from(WASTE, nl, false, &event("draw"))?,
                    Port::Carriage(a) => {
                        if !self.lowered(a) {
                            return Err(StateFault::Raised { apparatus: a.clone() });
                        }
                        let v = self.vessel_below(a)?;
                        self.draw_from(&v, nl, true, &event("draw"))?
                    }
                };
                let st = self.state.pumps.entry(p.pump).or_default();
                st.plunger += p.steps;
                add_into(&mut st.contents, drawn);
            }
            Direction::Push => {
                if p.steps > ps.plunger {
                    return Err(StateFault::PlungerTravel {
                        pump: p.pump,
                        from: ps.plunger,
                        steps: p.steps,
                        dir: "push".into(),
                    });
                }
                let target = match &port {
                    Port::Bottle(l) => bottle_name(l),
                    Port::Waste => WASTE.to_string(),
                    Port::Carriage(a) => self.vessel_below(a)?,
                };
                let st = self.state.pumps.entry(p.pump).or_default();
                st.plunger -= p.steps;
                let out = nl.min(mixture_total(&st.contents));
                let m = take(&mut st.contents, out);
                self.put_into(&target, m, &event("push"));
            }
        }
        self.state.time_ms += p.steps as u64 * p.speed_ms as u64;
        Ok(())
    }

    fn servo(&self, servo: u8) -> Result<(String, u64), StateFault> {
        if !self.state.servos.contains_key(&servo) {
            return Err(StateFault::NoServo(servo));
        }
        let (name, a) = self.layout.servo_apparatus(servo).ok_or(StateFault::NoServo(servo))?;
        Ok((name.to_string(), (a.capacity_ul * 1000.0).round() as u64))
    }

    fn step(&mut self, ins: &Instruction) -> Result<(), StateFault> {
        match *ins {
            Instruction::Move { x, y } => {
                if !self.layout.in_stage(x, y) {
                    return Err(StateFault::OutOfStage {
                        x: from_tenths(x),
                        y: from_tenths(y),
                    });
                }
                self.state.carriage_tenths_mm = [x, y];
            }
            Instruction::Dwell { ms } => self.state.time_ms += ms,
            Instruction::Pump(ref p) => self.pump(p)?,
            Instruction::Raise { servo } | Instruction::Lower { servo } => {
                self.servo(servo)?;
                self.state.servos.get_mut(&servo).expect("checked").lowered = matches!(ins, Instruction::Lower { .. });
            }
            Instruction::Draw { servo, nl } => {
                let (name, capacity) = self.servo(servo)?;
                if capacity == 0 {
                    return Err(StateFault::NotASyringe { servo });
                }
                let held = mixture_total(&self.state.servos[&servo].contents);
                if held + nl > capacity {
                    return Err(StateFault::SyringeOverfill {
                        servo,
                        wanted_nl: held + nl,
                        capacity_nl: capacity,
                    });
                }
                if !self.lowered(&name) {
                    return Err(StateFault::Raised { apparatus: name });
                }
                let v = self.vessel_below(&name)?;
                let m = self.draw_from(&v, nl, false, &format!("servo{servo}:draw"))?;
                add_into(&mut self.state.servos.get_mut(&servo).expect("checked").contents, m);
            }
            Instruction::Push { servo, .. } | Instruction::Expel { servo } => {
                let (name, capacity) = self.servo(servo)?;
                if capacity == 0 {
                    return Err(StateFault::NotASyringe { servo });
                }
                let held = mixture_total(&self.state.servos[&servo].contents);
                let nl = match *ins {
                    Instruction::Push { nl, .. } => nl,
                    _ => held,
                };
                if nl > held {
                    return Err(StateFault::Empty {
                        vessel: format!("servo{servo}"),
                        wanted_nl: nl,
                        available_nl: held,
                    });
                }
                if nl > 0 {
                    let v = self.vessel_below(&name)?;
                    let m = take(&mut self.state.servos.get_mut(&servo).expect("checked").contents, nl);
                    self.put_into(&v, m, &format!("servo{servo}:push"));
                }
            }
            Instruction::Stir { on } => self.state.stirring = on,
        }
        Ok(())
    }
}

/// Runs `program` from `s0`, halting at the first fault.
pub fn execute(program: &[Instruction], layout: &Layout, s0: VirtualState) -> Result<Execution, Halted> {
    let mut m = Machine {
        layout,
        state: s0,
        events: Vec::new(),
        pc: 0,
    };
    for (pc, ins) in program.iter().enumerate() {
        m.pc = pc;
        let snapshot = (m.state.clone(), m.events.len());
        if let Err(fault) = m.step(ins) {
            m.events.truncate(snapshot.1);
            return Err(Halted {
                pc,
                fault,
                partial: Box::new(Execution {
                    state: snapshot.0,
                    events: m.events,
                }),
            });
        }
    }
    Ok(Execution {
        state: m.state,
        events: m.events,
    })
}

pub const EVENT_LOG_HEADER: &str = "time_ms,instruction_index,event,vessel,delta_µL";

pub fn write_event_log(mut w: impl Write, events: &[Event]) -> std::io::Result<()> {
    writeln!(w, "{EVENT_LOG_HEADER}")?;
    for e in events {
        let vessel = if e.vessel.contains(',') {
            format!("\"{}\"", e.vessel)
        } else {
            e.vessel.clone()
        };
        writeln!(w, "{},{},{},{},{}", e.time_ms, e.instruction_index, e.event, vessel, e.delta_ul)?;
    }
    Ok(())
}
