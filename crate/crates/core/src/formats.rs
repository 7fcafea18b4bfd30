//! CSV and PGM file formats.
//!
//! Every CSV starts with a header row. Lines beginning with `#` are comments;
//! leading `# key=value` comments carry metadata such as the frame count of
//! an experiment (needed because trailing frames may hold no detections).
//! Floats are written with Rust's shortest round-trip formatting.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::PercentileBand;
use crate::arena::{Detection, DetectionFrame};
use crate::formulation::{Genome, N_OILS};
use crate::ga::{GaConfig, GaHistory, GaRun, Individual};
use crate::landscape::{Cell, FaceLattice, IslandMap};
use crate::tracking::{Sample, Trajectory, TrajectorySet};

pub const DETECTION_HEADER: [&str; 4] = ["frame", "x", "y", "area"];
pub const TRAJECTORY_HEADER: [&str; 5] = ["droplet_id", "frame", "x", "y", "area"];
pub const LANDSCAPE_HEADER: [&str; 8] = ["face", "i", "j", "X", "Y", "Z", "fitness", "island_label"];
pub const BAND_HEADER: [&str; 6] = ["generation", "median", "p25", "p75", "p10", "p90"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("bad header: expected {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("metadata `{key}`: {message}")]
    Meta { key: String, message: String },
}

fn row_err(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::Row {
        line,
        message: message.into(),
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => row_err(p.line(), e.to_string()),
            None => match e.into_kind() {
                csv::ErrorKind::Io(io) => FormatError::Io(io),
                k => row_err(0, format!("{k:?}")),
            },
        }
    }
}

/// Parsed `# key=value` lines preceding the header.
pub type Metadata = BTreeMap<String, String>;

/// Splits leading `# key=value` metadata from the CSV body.
pub fn split_metadata(text: &str) -> Metadata {
    let mut meta = Metadata::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    meta
}

fn meta_usize(meta: &Metadata, key: &str) -> Result<Option<usize>, FormatError> {
    meta.get(key)
        .map(|v| {
            v.parse().map_err(|_| FormatError::Meta {
                key: key.into(),
                message: format!("`{v}` is not a non-negative integer"),
            })
        })
        .transpose()
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<(), FormatError> {
    let found = rdr.headers()?;
    if found.iter().ne(expected.iter().copied()) {
        return Err(FormatError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, name: &str) -> Result<T, FormatError> {
    let raw = rec.get(k).unwrap_or("");
    raw.parse()
        .map_err(|_| row_err(line_of(rec), format!("field `{name}`: cannot parse `{raw}`")))
}

fn finite(rec: &csv::StringRecord, k: usize, name: &str) -> Result<f64, FormatError> {
    let v: f64 = field(rec, k, name)?;
    if !v.is_finite() {
        return Err(row_err(line_of(rec), format!("field `{name}` is not finite")));
    }
    Ok(v)
}

fn read_to_string(mut r: impl Read) -> Result<String, FormatError> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    Ok(s)
}

pub fn write_detections(mut w: impl Write, frames: &[DetectionFrame<f64>]) -> Result<(), FormatError> {
    let frame_count = frames.last().map_or(0, |f| f.frame + 1);
    writeln!(w, "# frame_count={frame_count}")?;
    writeln!(w, "{}", DETECTION_HEADER.join(","))?;
    for f in frames {
        for d in &f.detections {
            writeln!(w, "{},{},{},{}", f.frame, d.x, d.y, d.area)?;
        }
    }
    Ok(())
}

/// Reads a detection CSV into one [`DetectionFrame`] per frame index, empty
/// frames included. Rows must be in nondecreasing frame order and areas
/// must be non-negative.
pub fn read_detections(r: impl Read) -> Result<Vec<DetectionFrame<f64>>, FormatError> {
    let text = read_to_string(r)?;
    let meta = split_metadata(&text);
    let declared = meta_usize(&meta, "frame_count")?;
    let mut rdr = csv_reader(&text);
    check_header(&mut rdr, &DETECTION_HEADER)?;
    let mut frames: Vec<DetectionFrame<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let frame: usize = field(&rec, 0, "frame")?;
        let d = Detection {
            x: finite(&rec, 1, "x")?,
            y: finite(&rec, 2, "y")?,
            area: finite(&rec, 3, "area")?,
        };
        if d.area < 0.0 {
            return Err(row_err(line_of(&rec), "field `area` is negative"));
        }
        if frame + 1 < frames.len() {
            return Err(row_err(line_of(&rec), format!("frame {frame} out of order")));
        }
        while frames.len() <= frame {
            frames.push(DetectionFrame {
                frame: frames.len(),
                detections: Vec::new(),
            });
        }
        frames[frame].detections.push(d);
    }
    if let Some(n) = declared {
        if n < frames.len() {
            return Err(FormatError::Meta {
                key: "frame_count".into(),
                message: format!("{n} frames declared but frame {} present", frames.len() - 1),
            });
        }
        while frames.len() < n {
            frames.push(DetectionFrame {
                frame: frames.len(),
                detections: Vec::new(),
            });
        }
    }
    Ok(frames)
}

pub fn write_trajectories(mut w: impl Write, ts: &TrajectorySet<f64>) -> Result<(), FormatError> {
    writeln!(w, "# frame_count={}", ts.frame_count)?;
    writeln!(w, "{}", TRAJECTORY_HEADER.join(","))?;
    for t in &ts.trajectories {
        for s in &t.samples {
            writeln!(w, "{},{},{},{},{}", t.droplet_id, s.frame, s.x, s.y, s.area)?;
        }
    }
    Ok(())
}

/// Reads a trajectory CSV. Rows of one droplet must be contiguous and cover
/// consecutive frames.
pub fn read_trajectories(r: impl Read) -> Result<TrajectorySet<f64>, FormatError> {
    let text = read_to_string(r)?;
    let meta = split_metadata(&text);
    let mut rdr = csv_reader(&text);
    check_header(&mut rdr, &TRAJECTORY_HEADER)?;
    let mut trajectories: Vec<Trajectory<f64>> = Vec::new();
    let mut max_frame = None;
    for rec in rdr.records() {
        let rec = rec?;
        let id: u64 = field(&rec, 0, "droplet_id")?;
        let s = Sample {
            frame: field(&rec, 1, "frame")?,
            x: finite(&rec, 2, "x")?,
            y: finite(&rec, 3, "y")?,
            area: finite(&rec, 4, "area")?,
        };
        if s.area < 0.0 {
            return Err(row_err(line_of(&rec), "field `area` is negative"));
        }
        max_frame = max_frame.max(Some(s.frame));
        match trajectories.last_mut() {
            Some(t) if t.droplet_id == id => {
                if s.frame != t.last_frame() + 1 {
                    return Err(row_err(line_of(&rec), format!("droplet {id}: frame {} is not consecutive", s.frame)));
                }
                t.samples.push(s);
            }
            _ => {
                if trajectories.iter().any(|t| t.droplet_id == id) {
                    return Err(row_err(line_of(&rec), format!("droplet {id} rows are not contiguous")));
                }
                trajectories.push(Trajectory {
                    droplet_id: id,
                    samples: vec![s],
                });
            }
        }
    }
    let seen = max_frame.map_or(0, |m| m + 1);
    let frame_count = meta_usize(&meta, "frame_count")?.unwrap_or(seen);
    if frame_count < seen {
        return Err(FormatError::Meta {
            key: "frame_count".into(),
            message: format!("{frame_count} frames declared but frame {} present", seen - 1),
        });
    }
    Ok(TrajectorySet {
        trajectories,
        frame_count,
    })
}

/// Column names of a history CSV with `replicates` replicate columns.
pub fn history_header(replicates: usize) -> Vec<String> {
    let mut h: Vec<String> = ["run", "generation", "individual_id", "parent_ids"].map(String::from).into();
    h.extend((1..=N_OILS).map(|k| format!("locus{k}")));
    h.extend((1..=replicates).map(|k| format!("replicate{k}")));
    h.push("fitness".into());
    h
}

/// One row per population member per generation. `parent_ids` is `a;b`, or
/// empty for founders.
pub fn write_history(mut w: impl Write, h: &GaHistory) -> Result<(), FormatError> {
    let reps = h.config.replicates_per_recipe;
    writeln!(w, "{}", history_header(reps).join(","))?;
    for run in &h.runs {
        for (g, ids) in run.generations.iter().enumerate() {
            for id in ids {
                let ind = run.individual(*id);
                let parents = ind.parents.map_or(String::new(), |(a, b)| format!("{a};{b}"));
                write!(w, "{},{},{},{}", run.run, g + 1, id, parents)?;
                for l in ind.genome.loci {
                    write!(w, ",{l}")?;
                }
                for k in 0..reps {
                    match ind.replicates().get(k) {
                        Some(v) => write!(w, ",{v}")?,
                        None => write!(w, ",")?,
                    }
                }
                match ind.fitness() {
                    Some(f) => writeln!(w, ",{f}")?,
                    None => writeln!(w, ",")?,
                }
            }
        }
    }
    Ok(())
}

/// Reads a history CSV. Settings not recoverable from the table (mutation,
/// pressure, seed) keep the values of `base`.
pub fn read_history(r: impl Read, base: &GaConfig) -> Result<GaHistory, FormatError> {
    let text = read_to_string(r)?;
    let mut rdr = csv_reader(&text);
    let headers = rdr.headers()?.clone();
    let reps = headers.len().saturating_sub(4 + N_OILS + 1);
    let expected = history_header(reps);
    if headers.len() < 4 + N_OILS + 2 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(FormatError::Header {
            expected: history_header(base.replicates_per_recipe).join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut runs: BTreeMap<usize, GaRun> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let run: usize = field(&rec, 0, "run")?;
        let generation: usize = field(&rec, 1, "generation")?;
        let id: u64 = field(&rec, 2, "individual_id")?;
        if generation == 0 {
            return Err(row_err(line, "field `generation` starts at 1"));
        }
        let parents = match rec.get(3).unwrap_or("") {
            "" => None,
            p => {
                let (a, b) = p
                    .split_once(';')
                    .ok_or_else(|| row_err(line, format!("field `parent_ids`: expected `a;b`, found `{p}`")))?;
                let parse = |s: &str| {
                    s.parse::<u64>()
                        .map_err(|_| row_err(line, format!("field `parent_ids`: cannot parse `{s}`")))
                };
                Some((parse(a)?, parse(b)?))
            }
        };
        let mut loci = [0.0; N_OILS];
        for (k, l) in loci.iter_mut().enumerate() {
            *l = finite(&rec, 4 + k, &format!("locus{}", k + 1))?;
            if !(0.0..=1.0).contains(l) {
                return Err(row_err(line, format!("field `locus{}` outside [0, 1]", k + 1)));
            }
        }
        let replicates = (0..reps)
            .map(|k| {
                let v = finite(&rec, 4 + N_OILS + k, &format!("replicate{}", k + 1))?;
                if v < 0.0 {
                    return Err(row_err(line, format!("field `replicate{}` is negative", k + 1)));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let fitness = finite(&rec, 4 + N_OILS + reps, "fitness")?;

        let entry = runs.entry(run).or_insert_with(|| GaRun {
            run,
            individuals: BTreeMap::new(),
            generations: Vec::new(),
        });
        if generation > entry.generations.len() + 1 || generation < entry.generations.len() {
            return Err(row_err(line, format!("generation {generation} out of order in run {run}")));
        }
        if generation == entry.generations.len() + 1 {
            entry.generations.push(Vec::new());
        }
        let born = entry.generations.iter().position(|g| g.contains(&id));
        match entry.individuals.get(&id) {
            Some(existing) => {
                if existing.genome.loci != loci || existing.fitness() != Some(fitness) {
                    return Err(row_err(line, format!("individual {id} changed between generations")));
                }
            }
            None => {
                let mut ind = Individual::new(id, Genome { loci }, parents, born.map_or(generation, |b| b + 1));
                ind.set_evaluation(replicates, fitness)
                    .map_err(|e| row_err(line, e.to_string()))?;
                entry.individuals.insert(id, ind);
            }
        }
        entry.generations[generation - 1].push(id);
    }
    let runs: Vec<GaRun> = runs.into_values().collect();
    let mut config = base.clone();
    config.replicates_per_recipe = reps;
    config.runs = runs.len();
    if let Some(r) = runs.first() {
        config.generations = r.generations.len();
        config.population_size = r.generations.first().map_or(0, Vec::len);
    }
    Ok(GaHistory { config, runs })
}

/// One row per valid lattice cell of every face.
pub fn write_landscape(mut w: impl Write, faces: &[FaceLattice<f64>], islands: &IslandMap<f64>) -> Result<(), FormatError> {
    writeln!(w, "{}", LANDSCAPE_HEADER.join(","))?;
    for lat in faces {
        let n = lat.resolution;
        for i in 0..n {
            for j in 0..n {
                let (Some(v), Some([x, y, z])) = (lat.get(i, j), lat.cell_xyz(i, j)) else {
                    continue;
                };
                let label = islands
                    .label(Cell { face: lat.face, i, j })
                    .map_or(String::new(), |l| l.to_string());
                writeln!(w, "{},{i},{j},{x},{y},{z},{v},{label}", lat.face)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub face: usize,
    pub i: usize,
    pub j: usize,
    pub xyz: [f64; 3],
    pub fitness: f64,
    pub island: Option<usize>,
}

/// Reads a landscape CSV, checking that `X + Y + Z ≤ 1` and coordinates are in `[0, 1]`.
pub fn read_landscape(r: impl Read) -> Result<Vec<LandscapeRow>, FormatError> {
    let text = read_to_string(r)?;
    let mut rdr = csv_reader(&text);
    check_header(&mut rdr, &LANDSCAPE_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let face: usize = field(&rec, 0, "face")?;
        if face >= N_OILS {
            return Err(row_err(line_of(&rec), format!("field `face` must be below {N_OILS}")));
        }
        let xyz = [finite(&rec, 3, "X")?, finite(&rec, 4, "Y")?, finite(&rec, 5, "Z")?];
        if xyz.iter().any(|c| !(0.0..=1.0).contains(c)) || xyz.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(row_err(line_of(&rec), "X, Y, Z must lie in the unit triangle"));
        }
        let island = match rec.get(7).unwrap_or("") {
            "" => None,
            _ => Some(field(&rec, 7, "island_label")?),
        };
        rows.push(LandscapeRow {
            face,
            i: field(&rec, 1, "i")?,
            j: field(&rec, 2, "j")?,
            xyz,
            fitness: finite(&rec, 6, "fitness")?,
            island,
        });
    }
    Ok(rows)
}

pub fn write_bands(mut w: impl Write, bands: &[PercentileBand]) -> Result<(), FormatError> {
    writeln!(w, "{}", BAND_HEADER.join(","))?;
    for b in bands {
        writeln!(w, "{},{},{},{},{},{}", b.generation, b.median, b.p25, b.p75, b.p10, b.p90)?;
    }
    Ok(())
}

/// Binary PGM (P5) of one face. Valid cells map linearly from `[lo, hi]` to
/// gray levels 1..=255; cells outside the triangle are 0. Row `i` of the
/// lattice is image row `i`.
pub fn write_pgm(mut w: impl Write, lat: &FaceLattice<f64>, lo: f64, hi: f64) -> Result<(), FormatError> {
    let n = lat.resolution;
    write!(w, "P5\n{n} {n}\n255\n")?;
    let span = hi - lo;
    let mut buf = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            buf.push(match lat.get(i, j) {
                None => 0,
                Some(v) if span > 0.0 => 1 + (((v - lo) / span).clamp(0.0, 1.0) * 254.0).round() as u8,
                Some(_) => 128,
            });
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Value range over the valid cells of all faces.
pub fn value_range(faces: &[FaceLattice<f64>]) -> (f64, f64) {
    faces
        .iter()
        .flat_map(|l| l.values.iter().copied().filter(|v| !v.is_nan()))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::catchment_map;

    fn sample_frames() -> Vec<DetectionFrame<f64>> {
        vec![
            DetectionFrame {
                frame: 0,
                detections: vec![Detection { x: 1.5, y: 2.0, area: 20.0 }],
            },
            DetectionFrame {
                frame: 1,
                detections: vec![],
            },
            DetectionFrame {
                frame: 2,
                detections: vec![Detection { x: 0.1, y: 0.2, area: 3.0 }, Detection { x: 5.0, y: 6.0, area: 7.0 }],
            },
            DetectionFrame {
                frame: 3,
                detections: vec![],
            },
        ]
    }

    #[test]
    fn detections_keep_empty_frames() {
        let frames = sample_frames();
        let mut buf = Vec::new();
        write_detections(&mut buf, &frames).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# frame_count=4\nframe,x,y,area\n"));
        assert_eq!(read_detections(&buf[..]).unwrap(), frames);
    }

    #[test]
    fn negative_area_reports_line() {
        let text = "frame,x,y,area\n0,1,1,5\n1,1,1,-2\n";
        match read_detections(text.as_bytes()) {
            Err(FormatError::Row { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("area"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(read_detections("f,x,y,a\n".as_bytes()), Err(FormatError::Header { .. })));
    }

    #[test]
    fn trajectories_round_trip() {
        let ts = crate::tracking::track(&sample_frames(), 30.0);
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &ts).unwrap();
        assert_eq!(read_trajectories(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn noncontiguous_trajectory_rejected() {
        let text = "droplet_id,frame,x,y,area\n0,0,1,1,1\n0,2,1,1,1\n";
        assert!(read_trajectories(text.as_bytes()).is_err());
    }

    #[test]
    fn history_round_trip() {
        let cfg = GaConfig {
            generations: 3,
            runs: 2,
            ..GaConfig::default()
        };
        let eval = |f: &crate::formulation::Formulation<f64>, _seed: u64| -> Result<Vec<f64>, std::convert::Infallible> {
            Ok(vec![f.proportions()[0]; 3])
        };
        let h = crate::ga::run_ga(&cfg, &eval).unwrap();
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        let back = read_history(&buf[..], &GaConfig::default()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn landscape_rows_and_pgm() {
        let faces: Vec<_> = (0..4)
            .map(|f| FaceLattice::from_fn(f, 5, |p: &[f64; 4]| p[0]).unwrap())
            .collect();
        let islands = catchment_map(&faces).unwrap();
        let mut buf = Vec::new();
        write_landscape(&mut buf, &faces, &islands).unwrap();
        let rows = read_landscape(&buf[..]).unwrap();
        assert_eq!(rows.len(), 4 * 15);
        assert!(rows.iter().all(|r| r.island.is_some()));

        let (lo, hi) = value_range(&faces);
        let mut pgm = Vec::new();
        write_pgm(&mut pgm, &faces[1], lo, hi).unwrap();
        assert!(pgm.starts_with(b"P5\n5 5\n255\n"));
        assert_eq!(pgm.len(), 11 + 25);
    }
}
