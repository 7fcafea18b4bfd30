use dropevo_core::arena::BehaviorModel;
use dropevo_core::formats::write_history;
use dropevo_core::ga::{run_ga, Bookkeeping, GaHistory};
use dropevo_gcode::instruction::render;
use dropevo_gcode::{compile_cleaning_cycle, compile_experiment, compile_replicate, Layout};
use serde_json::json;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

/// Counts taken from the history itself, not from the config.
pub fn observed_bookkeeping(h: &GaHistory, droplets_per_experiment: usize) -> Bookkeeping {
    let experiments: usize = h
        .runs
        .iter()
        .flat_map(|r| r.individuals.values())
        .map(|i| i.replicates().len())
        .sum();
    Bookkeeping {
        recipes_per_run: h.runs.first().map_or(0, |r| r.recipe_count()),
        total_recipes: h.total_recipes(),
        experiments,
        droplets: experiments * droplets_per_experiment,
    }
}

/// Audit script for one recipe: mixing and first experiment, then a cleaning
/// cycle before every further replicate and after the last.
fn audit_script(h: &GaHistory, layout: &Layout, run: usize, id: u64, well: usize) -> CliResult<String> {
    let ind = h.runs[run].individual(id);
    let recipe = ind
        .genome
        .phenotype()
        .map_err(|e| CliError::data(format!("individual {id}: {e}")))?;
    let mut program = compile_experiment(&recipe, layout, well)?;
    for _ in 1..h.config.replicates_per_recipe {
        program.extend(compile_cleaning_cycle(layout)?);
        program.extend(compile_replicate(layout, well)?);
    }
    program.extend(compile_cleaning_cycle(layout)?);
    let mut text = format!(
        "# run={} individual_id={} recipe={} well={}\n",
        h.runs[run].run, id, recipe, well
    );
    text.push_str(&render(&program));
    Ok(text)
}

pub fn run(ctx: &mut Context) -> CliResult<()> {
    let cfg = ctx.cfg.clone();
    let closed_loop = cfg.closed_loop();
    let history = ctx.pooled(|| run_ga(&cfg.ga, &closed_loop))??;

    let mut out = OutputDir::create(&ctx.out_dir())?;
    let mut buf = Vec::new();
    write_history(&mut buf, &history)?;
    out.write("history.csv", &buf)?;

    let mut scripts = 0;
    if cfg.gcode.write_scripts {
        let layout = ctx.layout(None)?;
        let wells = layout.wells.count();
        for (r, run) in history.runs.iter().enumerate() {
            for (k, id) in run.individuals.keys().enumerate() {
                let text = audit_script(&history, &layout, r, *id, k % wells)?;
                out.write(&format!("scripts/run{}/individual{:04}.gcode", run.run, id), text.as_bytes())?;
                scripts += 1;
            }
        }
    }

    let best: Vec<_> = history
        .runs
        .iter()
        .map(|run| {
            let ind = run
                .individuals
                .values()
                .filter(|i| i.fitness().is_some())
                .max_by(|a, b| a.fitness().partial_cmp(&b.fitness()).unwrap_or(std::cmp::Ordering::Equal));
            json!({
                "run": run.run,
                "individual_id": ind.map(|i| i.id),
                "fitness": ind.and_then(|i| i.fitness()),
                "recipe": ind.and_then(|i| i.genome.phenotype().ok()).map(|f| f.into_array()),
            })
        })
        .collect();
    let optimum = match &closed_loop.model {
        BehaviorModel::Unimodal(m) => Some(m.optimum),
        BehaviorModel::Physical { .. } => None,
    };
    let mut manifest = ctx.manifest();
    manifest.bookkeeping = Some(observed_bookkeeping(&history, cfg.arena.injection_count()));
    manifest.summary = json!({
        "objective": cfg.objective.name(),
        "model": closed_loop.model,
        "known_optimum": optimum,
        "planned": cfg.ga.bookkeeping(),
        "best_per_run": best,
        "audit_scripts": scripts,
    });
    ctx.finish(out, manifest)
}
