use std::path::{Path, PathBuf};

use dropevo_gcode::instruction::{check_program, render, Located};
use dropevo_gcode::layout::DISH;
use dropevo_gcode::vm::write_event_log;
use dropevo_gcode::{compile, compile_cleaning_cycle, compile_experiment, compile_replicate, execute, LabOperation, VirtualState};
use serde_json::json;

use super::{parse_recipe, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;
use crate::GcodeCommand;

pub fn run(ctx: &mut Context, cmd: GcodeCommand) -> CliResult<()> {
    match cmd {
        GcodeCommand::Compile {
            recipe,
            ops,
            well,
            replicates,
            cleaning,
            layout,
        } => compile_cmd(ctx, recipe.as_deref(), ops.as_deref(), well, replicates, cleaning, layout.as_deref()),
        GcodeCommand::Parse { files } => parse_cmd(ctx, &files),
        GcodeCommand::Exec {
            files,
            layout,
            state,
            dish_aqueous_ml,
        } => exec_cmd(ctx, &files, layout.as_deref(), state.as_deref(), dish_aqueous_ml),
    }
}

fn compile_cmd(
    ctx: &mut Context,
    recipe: Option<&str>,
    ops: Option<&Path>,
    well: usize,
    replicates: usize,
    cleaning: bool,
    layout: Option<&Path>,
) -> CliResult<()> {
    let layout = ctx.layout(layout)?;
    let mut program = match (recipe, ops) {
        (Some(r), _) => {
            if replicates == 0 {
                return Err(CliError::usage("--replicates must be at least 1"));
            }
            let f = parse_recipe(r)?;
            let mut p = compile_experiment(&f, &layout, well)?;
            for _ in 1..replicates {
                p.extend(compile_cleaning_cycle(&layout)?);
                p.extend(compile_replicate(&layout, well)?);
            }
            p
        }
        (None, Some(path)) => {
            let text = ctx.read_input(path)?;
            let ops: Vec<LabOperation> = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text))
                .map_err(|e| CliError::data(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
            compile(&ops, &layout).map_err(|e| CliError::from(e).context(path.display()))?
        }
        (None, None) => return Err(CliError::usage("one of --recipe or --ops is required")),
    };
    if cleaning {
        program.extend(compile_cleaning_cycle(&layout)?);
    }
    let text = render(&program);
    match ctx.global.out_dir.clone() {
        None => write!(ctx.stdout, "{text}")?,
        Some(dir) => {
            let mut out = OutputDir::create(&dir)?;
            out.write("program.gcode", text.as_bytes())?;
            let mut manifest = ctx.manifest();
            manifest.summary = json!({ "instructions": program.len() });
            ctx.finish(out, manifest)?;
        }
    }
    Ok(())
}

fn parse_cmd(ctx: &mut Context, files: &[PathBuf]) -> CliResult<()> {
    let mut reports = Vec::new();
    let mut total_errors = 0;
    for path in files {
        let text = ctx.read_input(path)?;
        let (ok, errors) = check_program(&text);
        total_errors += errors.len();
        reports.push(json!({
            "file": path.display().to_string(),
            "instructions": ok.len(),
            "errors": errors.iter().map(|e| json!({
                "line": e.line,
                "column": e.column,
                "message": e.kind.to_string(),
            })).collect::<Vec<_>>(),
        }));
    }
    writeln!(ctx.stdout, "{}", json!({ "files": reports, "errors": total_errors }))?;
    if total_errors > 0 {
        return Err(CliError::data(format!("{total_errors} parse error(s)")));
    }
    Ok(())
}

fn exec_cmd(
    ctx: &mut Context,
    files: &[PathBuf],
    layout: Option<&Path>,
    state: Option<&Path>,
    dish_aqueous_ml: f64,
) -> CliResult<()> {
    let layout = ctx.layout(layout)?;
    let mut s0 = match state {
        Some(p) => {
            let text = ctx.read_input(p)?;
            serde_json::from_str::<VirtualState>(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?
        }
        None => VirtualState::new(&layout),
    };
    if !(dish_aqueous_ml >= 0.0 && dish_aqueous_ml.is_finite()) {
        return Err(CliError::usage("--dish-aqueous-ml must be non-negative"));
    }
    if dish_aqueous_ml > 0.0 {
        s0.fill(DISH, "aqueous", (dish_aqueous_ml * 1e6).round() as u64);
    }
    let mut program = Vec::new();
    let mut origin: Vec<(usize, usize)> = Vec::new();
    for (k, path) in files.iter().enumerate() {
        let text = ctx.read_input(path)?;
        let (ok, errors) = check_program(&text);
        if let Some(e) = errors.first() {
            return Err(CliError::data(format!("{}:{}:{}: {}", path.display(), e.line, e.column, e.kind)));
        }
        for Located { line, instruction } in ok {
            program.push(instruction);
            origin.push((k, line));
        }
    }
    let before = s0.total_liquid();
    let ex = execute(&program, &layout, s0).map_err(|h| {
        let (k, line) = origin[h.pc];
        CliError::data(format!("{}:{line}: {}", files[k].display(), h.fault))
    })?;
    let state_json = serde_json::to_string_pretty(&ex.state)? + "\n";
    match ctx.global.out_dir.clone() {
        None => write!(ctx.stdout, "{state_json}")?,
        Some(dir) => {
            let mut out = OutputDir::create(&dir)?;
            out.write("state.json", state_json.as_bytes())?;
            let mut buf = Vec::new();
            write_event_log(&mut buf, &ex.events)?;
            out.write("events.csv", &buf)?;
            let mut manifest = ctx.manifest();
            manifest.summary = json!({
                "instructions": program.len(),
                "time_ms": ex.state.time_ms,
                "liquid_before_nl": before,
                "liquid_after_nl": ex.state.total_liquid(),
            });
            ctx.finish(out, manifest)?;
        }
    }
    Ok(())
}
