use std::path::{Path, PathBuf};

use dropevo_core::fitness::FitnessRecord;
use dropevo_core::formats::{read_detections, write_detections, write_trajectories};
use serde_json::json;

use super::{parse_recipe, Context};
use crate::docsdata::{validate_file, DocsError};
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

pub fn simulate(ctx: &mut Context, recipe: &str, replicate: usize) -> CliResult<()> {
    let f = parse_recipe(recipe)?;
    let frames = ctx.cfg.closed_loop().detections(&f, ctx.seed, replicate);
    let mut buf = Vec::new();
    write_detections(&mut buf, &frames)?;
    match ctx.global.out_dir.clone() {
        None => ctx.stdout.write_all(&buf)?,
        Some(dir) => {
            let mut out = OutputDir::create(&dir)?;
            out.write("detections.csv", &buf)?;
            let mut manifest = ctx.manifest();
            manifest.summary = json!({
                "recipe": f.into_array(),
                "replicate": replicate,
                "frames": frames.len(),
                "detections": frames.iter().map(|fr| fr.detections.len()).sum::<usize>(),
            });
            ctx.finish(out, manifest)?;
        }
    }
    Ok(())
}

pub fn track(ctx: &mut Context, detections: &Path) -> CliResult<()> {
    let text = ctx.read_input(detections)?;
    let frames = read_detections(text.as_bytes()).map_err(|e| CliError::from(e).context(detections.display()))?;
    let ts = ctx.cfg.closed_loop().trajectories(&frames);
    let record = FitnessRecord::evaluate(&ts, ctx.cfg.tracking.area_threshold);

    let mut out = OutputDir::create(&ctx.out_dir())?;
    let mut buf = Vec::new();
    write_trajectories(&mut buf, &ts)?;
    out.write("trajectories.csv", &buf)?;
    out.write("fitness.json", (serde_json::to_string_pretty(&record)? + "\n").as_bytes())?;
    let mut manifest = ctx.manifest();
    manifest.summary = json!({
        "droplets": ts.droplet_count(),
        "score": record.score(ctx.cfg.objective),
        "objective": ctx.cfg.objective.name(),
    });
    ctx.finish(out, manifest)
}

/// Prints `path: ok` or one `path:line:column: message` line per violation.
pub fn validate(ctx: &mut Context, format: &str, files: &[PathBuf]) -> CliResult<()> {
    let mut bad = 0;
    for path in files {
        let violations = validate_file(path, format).map_err(|e| match e {
            DocsError::UnknownFormat(_) => CliError::usage(e.to_string()),
            DocsError::Io { .. } => CliError::data(e.to_string()),
        })?;
        if violations.is_empty() {
            writeln!(ctx.stdout, "{}: ok", path.display())?;
        }
        for v in &violations {
            let loc = match (v.line, v.column) {
                (Some(l), Some(c)) => format!(":{l}:{c}"),
                (Some(l), None) => format!(":{l}"),
                _ => String::new(),
            };
            let field = v.field.as_ref().map_or(String::new(), |f| format!(" `{f}`"));
            writeln!(ctx.stdout, "{}{loc}:{field} {}", path.display(), v.message)?;
        }
        bad += violations.len();
    }
    if bad > 0 {
        return Err(CliError::data(format!("{bad} violation(s)")));
    }
    Ok(())
}
