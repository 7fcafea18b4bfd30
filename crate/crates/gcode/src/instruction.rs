//! Instruction set and line parser.
//!
//! ```text
//! G1 X<mm> Y<mm>        carriage move; at most one decimal (0.1 mm grid)
//! G4 P<ms>              dwell
//! P<x> M<y> D<z> S<a> E<b>
//!                       pump x, motor y (0 plunger, 1 valve), direction z
//!                       (1 draw, 0 push), a ms per step, b steps (valve: port)
//! M720 T<n>             raise servo syringe n
//! M721 T<n>             lower servo syringe n
//! M722 T<n> V<µL>       draw into servo syringe n
//! M723 T<n> V<µL>       push from servo syringe n
//! M724 T<n>             expel all contents of servo syringe n
//! M730 S<0|1>           well-plate stirrer off/on
//! ```
//! `#` starts a comment. Volumes carry at most three decimals (1 nL).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PUMP_ID: u8 = 6;
pub const MAX_STEPS: u32 = 50_000;
/// Servo header channels on the carriage board.
pub const MAX_SERVO_ID: u8 = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Motor {
    Plunger = 0,
    Valve = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Plunger moves out of the barrel, pushing liquid through the valve.
    Push = 0,
    /// Plunger moves back, drawing liquid in.
    Draw = 1,
}

/// One `P M D S E` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PumpInstruction {
    pub pump: u8,
    pub motor: Motor,
    pub direction: Direction,
    /// ms between steps
    pub speed_ms: u32,
    pub steps: u32,
}

impl PumpInstruction {
    pub fn new(pump: u8, motor: Motor, direction: Direction, speed_ms: u32, steps: u32) -> Result<Self, ParseErrorKind> {
        if pump > MAX_PUMP_ID {
            return Err(range(PumpField::Pump, pump.to_string()));
        }
        if speed_ms == 0 {
            return Err(range(PumpField::Speed, "0".into()));
        }
        if steps > MAX_STEPS {
            return Err(range(PumpField::Steps, steps.to_string()));
        }
        Ok(PumpInstruction {
            pump,
            motor,
            direction,
            speed_ms,
            steps,
        })
    }
}

impl fmt::Display for PumpInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P{} M{} D{} S{} E{}",
            self.pump, self.motor as u8, self.direction as u8, self.speed_ms, self.steps
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PumpField {
    Pump,
    Motor,
    Direction,
    Speed,
    Steps,
}

impl PumpField {
    pub fn letter(self) -> char {
        match self {
            PumpField::Pump => 'P',
            PumpField::Motor => 'M',
            PumpField::Direction => 'D',
            PumpField::Speed => 'S',
            PumpField::Steps => 'E',
        }
    }

    pub fn bound(self) -> &'static str {
        match self {
            PumpField::Pump => "pump id must be in 0..=6",
            PumpField::Motor => "motor must be 0 (plunger) or 1 (valve)",
            PumpField::Direction => "direction must be 0 or 1",
            PumpField::Speed => "step delay must be at least 1 ms",
            PumpField::Steps => "at most 50000 steps per instruction",
        }
    }

    const ORDER: [PumpField; 5] = [
        PumpField::Pump,
        PumpField::Motor,
        PumpField::Direction,
        PumpField::Speed,
        PumpField::Steps,
    ];
}

/// Carriage coordinates in units of 0.1 mm.
pub type Tenths = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Move { x: Tenths, y: Tenths },
    Dwell { ms: u64 },
    Pump(PumpInstruction),
    Raise { servo: u8 },
    Lower { servo: u8 },
    /// Volume in nL.
    Draw { servo: u8, nl: u64 },
    Push { servo: u8, nl: u64 },
    Expel { servo: u8 },
    Stir { on: bool },
}

/// `12.3` from 123 tenths.
pub fn format_tenths(v: Tenths) -> String {
    let sign = if v < 0 { "-" } else { "" };
    let a = v.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

/// µL with up to three decimals, trailing zeros dropped.
pub fn format_nl(nl: u64) -> String {
    let (int, frac) = (nl / 1000, nl % 1000);
    if frac == 0 {
        int.to_string()
    } else {
        format!("{int}.{}", format!("{frac:03}").trim_end_matches('0'))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::Move { x, y } => write!(f, "G1 X{} Y{}", format_tenths(x), format_tenths(y)),
            Instruction::Dwell { ms } => write!(f, "G4 P{ms}"),
            Instruction::Pump(p) => write!(f, "{p}"),
            Instruction::Raise { servo } => write!(f, "M720 T{servo}"),
            Instruction::Lower { servo } => write!(f, "M721 T{servo}"),
            Instruction::Draw { servo, nl } => write!(f, "M722 T{servo} V{}", format_nl(nl)),
            Instruction::Push { servo, nl } => write!(f, "M723 T{servo} V{}", format_nl(nl)),
            Instruction::Expel { servo } => write!(f, "M724 T{servo}"),
            Instruction::Stir { on } => write!(f, "M730 S{}", on as u8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("range error on {}: {value} ({})", .field.letter(), .field.bound())]
    Range { field: PumpField, value: String },
    #[error("range error on {letter}: {value} ({bound})")]
    Value {
        letter: char,
        value: String,
        bound: &'static str,
    },
}

fn range(field: PumpField, value: String) -> ParseErrorKind {
    ParseErrorKind::Range { field, value }
}

fn syntax(msg: impl Into<String>) -> ParseErrorKind {
    ParseErrorKind::Syntax(msg.into())
}

/// A parse failure at 1-based `line` and `column`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(code: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &code[s..i],
                    column: code[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &code[s..],
            column: code[..s].chars().count() + 1,
        });
    }
    out
}

/// Unsigned decimal integer; `Ok(None)` if the digits overflow `u64`.
fn parse_uint(s: &str) -> Result<Option<u64>, ()> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(());
    }
    Ok(s.parse().ok())
}

/// Fixed-point decimal with at most `places` fractional digits, scaled by
/// 10^places. `None` on malformed input or overflow.
fn parse_fixed(s: &str, places: u32, signed: bool) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) if signed => (true, rest),
        _ => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() || frac.len() > places as usize || (body.contains('.') && frac.is_empty()) {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let scale = 10i64.pow(places);
    let i: i64 = int.parse().ok()?;
    let mut f: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    f *= 10i64.pow(places - frac.len() as u32);
    let v = i.checked_mul(scale)?.checked_add(f)?;
    Some(if neg { -v } else { v })
}

struct LineParser<'a> {
    tokens: Vec<Token<'a>>,
    line: usize,
    end_column: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            column,
            kind,
        }
    }

    fn expect_count(&self, n: usize, form: &str) -> Result<(), ParseError> {
        if self.tokens.len() != n {
            let col = self.tokens.get(n).map_or(self.end_column, |t| t.column);
            return Err(self.err(col, syntax(format!("expected `{form}`"))));
        }
        Ok(())
    }

    /// Value of token `k`, which must start with `letter`.
    fn arg(&self, k: usize, letter: char) -> Result<(&'a str, usize), ParseError> {
        let t = &self.tokens[k];
        match t.text.strip_prefix(letter) {
            Some(v) => Ok((v, t.column + 1)),
            None => Err(self.err(t.column, syntax(format!("expected {letter} parameter, found `{}`", t.text)))),
        }
    }

    fn servo(&self, k: usize) -> Result<u8, ParseError> {
        let (v, col) = self.arg(k, 'T')?;
        match parse_uint(v) {
            Err(()) => Err(self.err(col, syntax(format!("bad servo id `{v}`")))),
            Ok(Some(n)) if n <= MAX_SERVO_ID as u64 => Ok(n as u8),
            Ok(_) => Err(self.err(
                col,
                ParseErrorKind::Value {
                    letter: 'T',
                    value: v.into(),
                    bound: "servo id must be in 0..=19",
                },
            )),
        }
    }

    fn volume(&self, k: usize) -> Result<u64, ParseError> {
        let (v, col) = self.arg(k, 'V')?;
        parse_fixed(v, 3, false)
            .map(|n| n as u64)
            .ok_or_else(|| self.err(col, syntax(format!("bad volume `{v}` (µL, at most 3 decimals)"))))
    }

    fn coordinate(&self, k: usize, letter: char) -> Result<Tenths, ParseError> {
        let (v, col) = self.arg(k, letter)?;
        parse_fixed(v, 1, true)
            .filter(|t| t.abs() <= 1_000_000_000)
            .ok_or_else(|| self.err(col, syntax(format!("bad coordinate `{v}` (mm, at most 1 decimal)"))))
    }

    fn pump(&self) -> Result<PumpInstruction, ParseError> {
        self.expect_count(5, "P<pump> M<motor> D<dir> S<ms> E<steps>")?;
        let mut vals = [0u64; 5];
        let mut cols = [0usize; 5];
        for (k, field) in PumpField::ORDER.iter().enumerate() {
            let (v, col) = self.arg(k, field.letter())?;
            cols[k] = col;
            vals[k] = match parse_uint(v) {
                Err(()) => return Err(self.err(col, syntax(format!("{} needs a non-negative integer, found `{v}`", field.letter())))),
                Ok(None) => return Err(self.err(col, range(*field, v.into()))),
                Ok(Some(n)) => n,
            };
        }
        let bad = |k: usize| self.err(cols[k], range(PumpField::ORDER[k], vals[k].to_string()));
        if vals[0] > MAX_PUMP_ID as u64 {
            return Err(bad(0));
        }
        let motor = match vals[1] {
            0 => Motor::Plunger,
            1 => Motor::Valve,
            _ => return Err(bad(1)),
        };
        let direction = match vals[2] {
            0 => Direction::Push,
            1 => Direction::Draw,
            _ => return Err(bad(2)),
        };
        if vals[3] == 0 || vals[3] > u32::MAX as u64 {
            return Err(bad(3));
        }
        if vals[4] > MAX_STEPS as u64 {
            return Err(bad(4));
        }
        Ok(PumpInstruction {
            pump: vals[0] as u8,
            motor,
            direction,
            speed_ms: vals[3] as u32,
            steps: vals[4] as u32,
        })
    }

    fn parse(&self) -> Result<Instruction, ParseError> {
        let head = &self.tokens[0];
        match head.text {
            "G1" => {
                self.expect_count(3, "G1 X<mm> Y<mm>")?;
                Ok(Instruction::Move {
                    x: self.coordinate(1, 'X')?,
                    y: self.coordinate(2, 'Y')?,
                })
            }
            "G4" => {
                self.expect_count(2, "G4 P<ms>")?;
                let (v, col) = self.arg(1, 'P')?;
                match parse_uint(v) {
                    Ok(Some(ms)) => Ok(Instruction::Dwell { ms }),
                    _ => Err(self.err(col, syntax(format!("bad dwell `{v}`")))),
                }
            }
            "M720" | "M721" | "M724" => {
                self.expect_count(2, &format!("{} T<servo>", head.text))?;
                let servo = self.servo(1)?;
                Ok(match head.text {
                    "M720" => Instruction::Raise { servo },
                    "M721" => Instruction::Lower { servo },
                    _ => Instruction::Expel { servo },
                })
            }
            "M722" | "M723" => {
                self.expect_count(3, &format!("{} T<servo> V<µL>", head.text))?;
                let servo = self.servo(1)?;
                let nl = self.volume(2)?;
                Ok(if head.text == "M722" {
                    Instruction::Draw { servo, nl }
                } else {
                    Instruction::Push { servo, nl }
                })
            }
            "M730" => {
                self.expect_count(2, "M730 S<0|1>")?;
                let (v, col) = self.arg(1, 'S')?;
                match v {
                    "0" => Ok(Instruction::Stir { on: false }),
                    "1" => Ok(Instruction::Stir { on: true }),
                    _ => Err(self.err(col, syntax(format!("stirrer state must be 0 or 1, found `{v}`")))),
                }
            }
            t if t.starts_with('P') => self.pump().map(Instruction::Pump),
            t => Err(self.err(head.column, syntax(format!("unknown command `{t}`")))),
        }
    }
}

/// Parses one source line. Blank and comment-only lines give `Ok(None)`.
pub fn parse_line(text: &str, line: usize) -> Result<Option<Instruction>, ParseError> {
    let code = text.split('#').next().unwrap_or("");
    let tokens = tokenize(code);
    if tokens.is_empty() {
        return Ok(None);
    }
    let p = LineParser {
        tokens,
        line,
        end_column: code.chars().count() + 1,
    };
    p.parse().map(Some)
}

/// Parses a single pump-dialect line.
pub fn parse_pump_line(text: &str) -> Result<PumpInstruction, ParseError> {
    match parse_line(text, 1)? {
        Some(Instruction::Pump(p)) => Ok(p),
        _ => Err(ParseError {
            line: 1,
            column: 1,
            kind: syntax("expected a pump line `P<pump> M<motor> D<dir> S<ms> E<steps>`"),
        }),
    }
}

/// An instruction and the 1-based source line it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Located {
    pub line: usize,
    pub instruction: Instruction,
}

/// Parses a whole program, stopping at the first error.
pub fn parse_program(text: &str) -> Result<Vec<Located>, ParseError> {
    let mut out = Vec::new();
    for (k, l) in text.lines().enumerate() {
        if let Some(instruction) = parse_line(l, k + 1)? {
            out.push(Located { line: k + 1, instruction });
        }
    }
    Ok(out)
}

/// Parses every line and collects all errors.
pub fn check_program(text: &str) -> (Vec<Located>, Vec<ParseError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (k, l) in text.lines().enumerate() {
        match parse_line(l, k + 1) {
            Ok(Some(instruction)) => ok.push(Located { line: k + 1, instruction }),
            Ok(None) => {}
            Err(e) => errors.push(e),
        }
    }
    (ok, errors)
}

/// One instruction per line.
pub fn render(program: &[Instruction]) -> String {
    let mut s = String::new();
    for i in program {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}
