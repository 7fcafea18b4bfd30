//! File validation against the documented formats (see `docs/FORMATS.md`).
//!
//! CSV formats are checked row by row so every bad row is reported, then
//! parsed as a whole for cross-row rules (ordering, contiguity).

use std::path::Path;

use dropevo_core::formats::{
    history_header, read_detections, read_history, read_landscape, read_trajectories, FormatError, BAND_HEADER,
    DETECTION_HEADER, LANDSCAPE_HEADER, TRAJECTORY_HEADER,
};
use dropevo_core::formulation::{OilProperties, N_OILS};
use dropevo_core::ga::GaConfig;
use dropevo_gcode::instruction::check_program;
use dropevo_gcode::{compile, LabOperation, Layout};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;

/// Format ids accepted by [`validate_file`].
pub const FORMATS: [&str; 10] = [
    "detections",
    "trajectories",
    "history",
    "landscape",
    "bands",
    "gcode",
    "layout",
    "ops",
    "config",
    "oils",
];

#[derive(Debug, Error)]
pub enum DocsError {
    #[error("unknown format `{0}` (expected one of: detections, trajectories, history, landscape, bands, gcode, layout, ops, config, oils)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One problem found in a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based line in the file, when the problem has one.
    pub line: Option<u64>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            (Some(l), None) => write!(f, "line {l}: ")?,
            _ => {}
        }
        if let Some(field) = &self.field {
            write!(f, "`{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

fn violation(line: Option<u64>, field: Option<&str>, message: impl Into<String>) -> Violation {
    Violation {
        line,
        column: None,
        field: field.map(String::from),
        message: message.into(),
    }
}

fn from_format_error(e: FormatError) -> Violation {
    match e {
        FormatError::Row { line, message } => violation(Some(line), None, message),
        FormatError::Header { expected, found } => {
            violation(Some(1), None, format!("bad header: expected `{expected}`, found `{found}`"))
        }
        FormatError::Meta { key, message } => violation(None, Some(&key), message),
        FormatError::Io(e) => violation(None, None, e.to_string()),
    }
}

pub fn validate_file(path: &Path, format: &str) -> Result<Vec<Violation>, DocsError> {
    if !FORMATS.contains(&format) {
        return Err(DocsError::UnknownFormat(format.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| DocsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    validate_text(&text, format)
}

/// Validates file contents. An empty list means the file conforms.
pub fn validate_text(text: &str, format: &str) -> Result<Vec<Violation>, DocsError> {
    Ok(match format {
        "detections" => validate_csv(text, &detection_columns(), |t| read_detections(t.as_bytes()).map(drop)),
        "trajectories" => validate_csv(text, &trajectory_columns(), |t| read_trajectories(t.as_bytes()).map(drop)),
        "history" => validate_history(text),
        "landscape" => validate_csv(text, &landscape_columns(), |t| read_landscape(t.as_bytes()).map(drop)),
        "bands" => validate_bands(text),
        "gcode" => validate_gcode(text),
        "layout" => validate_layout(text),
        "ops" => validate_ops(text),
        "config" => match Config::from_json(text, "config") {
            Ok(_) => Vec::new(),
            Err(e) => vec![violation(None, None, e.to_string())],
        },
        "oils" => validate_oils(text),
        other => return Err(DocsError::UnknownFormat(other.to_string())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Index,
    Real,
    NonNegative,
    Unit,
    OptionalIndex,
    Parents,
}

fn check_value(kind: Kind, raw: &str) -> Result<(), String> {
    let real = || -> Result<f64, String> {
        let v: f64 = raw.parse().map_err(|_| format!("cannot parse `{raw}` as a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{raw}` is not finite"))
        }
    };
    let index = |s: &str| s.parse::<u64>().map(drop).map_err(|_| format!("`{s}` is not a non-negative integer"));
    match kind {
        Kind::Index => index(raw),
        Kind::Real => real().map(drop),
        Kind::NonNegative => match real()? {
            v if v < 0.0 => Err(format!("{v} is negative")),
            _ => Ok(()),
        },
        Kind::Unit => match real()? {
            v if !(0.0..=1.0).contains(&v) => Err(format!("{v} is outside [0, 1]")),
            _ => Ok(()),
        },
        Kind::OptionalIndex if raw.is_empty() => Ok(()),
        Kind::OptionalIndex => index(raw),
        Kind::Parents if raw.is_empty() => Ok(()),
        Kind::Parents => match raw.split_once(';') {
            Some((a, b)) => index(a).and_then(|_| index(b)),
            None => Err(format!("expected `a;b`, found `{raw}`")),
        },
    }
}

type Columns = Vec<(String, Kind)>;

fn columns(names: &[&str], kinds: &[Kind]) -> Columns {
    names.iter().map(|s| s.to_string()).zip(kinds.iter().copied()).collect()
}

fn detection_columns() -> Columns {
    columns(&DETECTION_HEADER, &[Kind::Index, Kind::Real, Kind::Real, Kind::NonNegative])
}

fn trajectory_columns() -> Columns {
    columns(
        &TRAJECTORY_HEADER,
        &[Kind::Index, Kind::Index, Kind::Real, Kind::Real, Kind::NonNegative],
    )
}

fn landscape_columns() -> Columns {
    use Kind::*;
    columns(&LANDSCAPE_HEADER, &[Index, Index, Index, Unit, Unit, Unit, Real, OptionalIndex])
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

/// Per-row type and range checks, then `whole` for cross-row rules when
/// every row passed.
fn validate_csv(text: &str, cols: &Columns, whole: impl Fn(&str) -> Result<(), FormatError>) -> Vec<Violation> {
    let mut out = row_checks(text, cols, |_, _| None);
    if out.is_empty() {
        if let Err(e) = whole(text) {
            out.push(from_format_error(e));
        }
    }
    out
}

fn row_checks(
    text: &str,
    cols: &Columns,
    extra: impl Fn(u64, &csv::StringRecord) -> Option<Violation>,
) -> Vec<Violation> {
    let mut rdr = csv_reader(text);
    let header = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return vec![from_format_error(e.into())],
    };
    if header.iter().ne(cols.iter().map(|(n, _)| n.as_str())) {
        let expected: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
        let found: Vec<&str> = header.iter().collect();
        return vec![violation(
            header.position().map(|p| p.line()),
            None,
            format!("bad header: expected `{}`, found `{}`", expected.join(","), found.join(",")),
        )];
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.push(from_format_error(e.into()));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            out.push(violation(
                Some(line),
                None,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
            continue;
        }
        for ((name, kind), raw) in cols.iter().zip(rec.iter()) {
            if let Err(m) = check_value(*kind, raw) {
                out.push(violation(Some(line), Some(name), m));
            }
        }
        if let Some(v) = extra(line, &rec) {
            out.push(v);
        }
    }
    out
}

fn validate_history(text: &str) -> Vec<Violation> {
    let mut rdr = csv_reader(text);
    let width = match rdr.headers() {
        Ok(h) => h.len(),
        Err(e) => return vec![from_format_error(e.into())],
    };
    let reps = width.saturating_sub(4 + N_OILS + 1).max(1);
    let mut kinds = vec![Kind::Index, Kind::Index, Kind::Index, Kind::Parents];
    kinds.extend([Kind::Unit; N_OILS]);
    kinds.extend(std::iter::repeat_n(Kind::NonNegative, reps + 1));
    let names = history_header(reps);
    let cols: Columns = names.into_iter().zip(kinds).collect();
    validate_csv(text, &cols, |t| read_history(t.as_bytes(), &GaConfig::default()).map(drop))
}

fn validate_bands(text: &str) -> Vec<Violation> {
    let mut kinds = vec![Kind::Index];
    kinds.extend([Kind::Real; 5]);
    let cols = columns(&BAND_HEADER, &kinds);
    row_checks(text, &cols, |line, rec| {
        let v: Vec<f64> = (1..6).filter_map(|k| rec.get(k)?.parse().ok()).collect();
        if v.len() != 5 {
            return None;
        }
        // median, p25, p75, p10, p90
        let ordered = v[3] <= v[1] && v[1] <= v[0] && v[0] <= v[2] && v[2] <= v[4];
        (!ordered).then(|| violation(Some(line), None, "percentiles must satisfy p10 ≤ p25 ≤ median ≤ p75 ≤ p90"))
    })
}

fn validate_gcode(text: &str) -> Vec<Violation> {
    let (_, errors) = check_program(text);
    errors
        .into_iter()
        .map(|e| Violation {
            line: Some(e.line as u64),
            column: Some(e.column),
            field: None,
            message: e.kind.to_string(),
        })
        .collect()
}

fn validate_layout(text: &str) -> Vec<Violation> {
    match Layout::from_json(text) {
        Ok(_) => Vec::new(),
        Err(e) => vec![violation(None, Some(&e.field), e.reason)],
    }
}

fn validate_ops(text: &str) -> Vec<Violation> {
    let ops: Vec<LabOperation> = match serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(text)) {
        Ok(o) => o,
        Err(e) => return vec![violation(None, Some(&e.path().to_string()), e.inner().to_string())],
    };
    match compile(&ops, &Layout::default()) {
        Ok(_) => Vec::new(),
        Err(e) => vec![violation(None, None, e.to_string())],
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct OilFile {
    format: String,
    version: u32,
    units: serde_json::Value,
    oils: Vec<OilProperties>,
}

fn validate_oils(text: &str) -> Vec<Violation> {
    let file: OilFile = match serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(text)) {
        Ok(f) => f,
        Err(e) => return vec![violation(None, Some(&e.path().to_string()), e.inner().to_string())],
    };
    let mut out = Vec::new();
    for (k, oil) in file.oils.iter().enumerate() {
        let at = |name: &str| format!("oils[{k}].{name}");
        for (name, v) in [
            ("density", oil.density),
            ("surface_tension", oil.surface_tension),
            ("viscosity", oil.viscosity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(violation(None, Some(&at(name)), format!("{v} must be positive")));
            }
        }
        if let Some(s) = Option::<f64>::from(oil.solubility) {
            if !(s >= 0.0 && s.is_finite()) {
                out.push(violation(None, Some(&at("solubility")), format!("{s} must be non-negative")));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_format_is_an_error() {
        assert!(matches!(validate_text("", "png"), Err(DocsError::UnknownFormat(_))));
    }

    #[test]
    fn negative_area_reports_row() {
        let text = "frame,x,y,area\n0,1,2,30\n0,5,5,-3\n1,1,2,30\n";
        let v = validate_text(text, "detections").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].line, Some(3));
        assert_eq!(v[0].field.as_deref(), Some("area"));
    }

    #[test]
    fn out_of_order_frames_found_by_whole_file_pass() {
        let text = "frame,x,y,area\n1,1,2,30\n0,5,5,3\n";
        let v = validate_text(text, "detections").unwrap();
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn step_bound_in_program() {
        let text = "G1 X10 Y10\nP1 M0 D1 S2 E50001\n";
        let v = validate_text(text, "gcode").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].line, Some(2));
        assert!(v[0].message.contains("50000"), "{}", v[0].message);
    }

    #[test]
    fn bands_order() {
        let ok = "generation,median,p25,p75,p10,p90\n1,2,1,3,0,4\n";
        assert!(validate_text(ok, "bands").unwrap().is_empty());
        let bad = "generation,median,p25,p75,p10,p90\n1,2,3,1,0,4\n";
        assert_eq!(validate_text(bad, "bands").unwrap().len(), 1);
    }

    #[test]
    fn shipped_data_files_validate() {
        assert!(validate_text(dropevo_core::formulation::OIL_TABLE_JSON, "oils").unwrap().is_empty());
        assert!(validate_text(dropevo_gcode::layout::DEFAULT_LAYOUT_JSON, "layout").unwrap().is_empty());
    }

    #[test]
    fn history_replicate_count_follows_header() {
        let text = "run,generation,individual_id,parent_ids,locus1,locus2,locus3,locus4,replicate1,replicate2,fitness\n\
                    0,1,1,,0.5,0.5,0.5,0.5,1,2,1.5\n0,1,2,,0.1,0.2,0.3,1.5,1,2,1.5\n";
        let v = validate_text(text, "history").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field.as_deref(), Some("locus4"));
    }
}
