use std::path::PathBuf;

use dropevo_core::formats::{read_history, value_range, write_landscape, write_pgm};
use dropevo_core::formulation::N_OILS;
use dropevo_core::landscape::{catchment_map, face_grids, FaceLattice, IslandMap, KernelModel, Point};
use serde_json::json;

use super::Context;
use crate::config::LandscapeConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

pub struct LandscapeOutput {
    pub faces: [FaceLattice<f64>; N_OILS],
    pub islands: IslandMap<f64>,
    /// `None` when every target was equal and the lattices are that constant.
    pub model: Option<KernelModel<f64>>,
}

/// Fits the kernel model and fills the four face lattices. Equal targets give
/// constant lattices at the common value instead of a fit, which would decay
/// toward zero away from the data.
pub fn landscape_from_recipes(inputs: Vec<Point<f64>>, targets: Vec<f64>, cfg: &LandscapeConfig) -> CliResult<LandscapeOutput> {
    if inputs.is_empty() {
        return Err(CliError::data("no evaluated recipes to fit"));
    }
    let first = targets[0];
    let (faces, model) = if targets.iter().all(|&t| t == first) && first.is_finite() {
        let faces = (0..N_OILS)
            .map(|face| FaceLattice::from_fn(face, cfg.resolution, |_| first))
            .collect::<Result<Vec<_>, _>>()?;
        let faces: [FaceLattice<f64>; N_OILS] = faces.try_into().map_err(|_| CliError::data("face count"))?;
        (faces, None)
    } else {
        let model = KernelModel::fit(inputs, targets, cfg.lambda, cfg.sigma)?;
        (face_grids(&model, cfg.resolution)?, Some(model))
    };
    let islands = catchment_map(&faces)?;
    Ok(LandscapeOutput { faces, islands, model })
}

pub fn run(ctx: &mut Context, histories: &[PathBuf], resolution: Option<usize>) -> CliResult<()> {
    if let Some(r) = resolution {
        if r < 2 {
            return Err(CliError::usage("--resolution must be at least 2"));
        }
        ctx.cfg.landscape.resolution = r;
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = 0usize;
    for path in histories {
        let text = ctx.read_input(path)?;
        let h = read_history(text.as_bytes(), &ctx.cfg.ga).map_err(|e| CliError::from(e).context(path.display()))?;
        for (genome, fitness) in h.recipes() {
            match genome.phenotype() {
                Ok(f) => {
                    inputs.push(f.into_array());
                    targets.push(fitness);
                }
                Err(_) => skipped += 1,
            }
        }
    }
    let n = inputs.len();
    let cfg = ctx.cfg.landscape.clone();
    let out_data = ctx.pooled(|| landscape_from_recipes(inputs, targets, &cfg))??;

    let mut out = OutputDir::create(&ctx.out_dir())?;
    let mut buf = Vec::new();
    write_landscape(&mut buf, &out_data.faces, &out_data.islands)?;
    out.write("landscape.csv", &buf)?;
    let islands = json!({
        "format": "dropevo-islands",
        "version": 1,
        "resolution": out_data.islands.resolution,
        "islands": out_data.islands.islands,
    });
    out.write("islands.json", (serde_json::to_string_pretty(&islands)? + "\n").as_bytes())?;
    let (lo, hi) = value_range(&out_data.faces);
    for lat in &out_data.faces {
        let mut buf = Vec::new();
        write_pgm(&mut buf, lat, lo, hi)?;
        out.write(&format!("face{}.pgm", lat.face), &buf)?;
    }

    let mut manifest = ctx.manifest();
    manifest.summary = json!({
        "training_points": n,
        "skipped_empty_genomes": skipped,
        "sigma": cfg.sigma,
        "lambda": cfg.lambda,
        "resolution": cfg.resolution,
        "constant_targets": out_data.model.is_none(),
        "residual_inf": out_data.model.as_ref().map(|m| m.residual_inf()),
        "valid_cells_per_face": out_data.faces[0].valid_cell_count(),
        "fitness_range": [lo, hi],
        "island_count": out_data.islands.islands.len(),
    });
    ctx.finish(out, manifest)
}
