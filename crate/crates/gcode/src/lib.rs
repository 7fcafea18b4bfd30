//! Robot-controller layer for the droplet platform.
//!
//! Lab operations ([`compile::LabOperation`]) compile to a small G-code
//! dialect ([`instruction`]): carriage moves, servo-syringe M-codes and the
//! `P M D S E` syringe-pump lines. Programs run on a virtual firmware
//! ([`vm`]) that tracks carriage position, plungers, valves and every vessel
//! of liquid, so scripts can be checked offline.

pub mod compile;
pub mod instruction;
pub mod layout;
pub mod vm;

pub use compile::{compile, compile_cleaning_cycle, compile_experiment, compile_replicate, CompileError, LabOperation};
pub use instruction::{parse_line, parse_program, parse_pump_line, render, Instruction, ParseError, PumpInstruction};
pub use layout::Layout;
pub use vm::{execute, Execution, Halted, StateFault, VirtualState};
