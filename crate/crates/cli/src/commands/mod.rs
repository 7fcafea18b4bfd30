//! Subcommand implementations.

mod analyze;
mod data;
mod evolve;
mod gcode;
mod landscape;

use std::io::Write;
use std::path::{Path, PathBuf};

use dropevo_core::formulation::{normalize, Formulation};
use dropevo_gcode::Layout;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::{file_entry, FileEntry, OutputDir, RunManifest};
use crate::{Cli, Command, GlobalArgs};

pub use analyze::{analyze_histories, AnalysisReport};
pub use landscape::{landscape_from_recipes, LandscapeOutput};

/// Shared state of one command invocation.
pub struct Context<'a> {
    pub cfg: Config,
    pub seed: u64,
    pub global: GlobalArgs,
    pub command: Vec<String>,
    pub inputs: Vec<FileEntry>,
    pub stdout: &'a mut dyn Write,
}

impl Context<'_> {
    /// Reads an input file and records its digest for the manifest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<String> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        self.inputs.push(file_entry(&path.display().to_string(), text.as_bytes()));
        Ok(text)
    }

    /// Runs `f` on a pool limited to `--jobs` threads, or on the global pool.
    pub fn pooled<R: Send>(&self, f: impl FnOnce() -> R + Send) -> CliResult<R> {
        match self.global.jobs {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n as usize)
                    .build()
                    .map_err(|e| CliError::data(format!("cannot start {n} worker threads: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.global.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn manifest(&self) -> RunManifest {
        let mut m = RunManifest::new(self.command.clone(), &self.cfg, self.seed);
        m.inputs = self.inputs.clone();
        m
    }

    /// Writes the manifest and prints a one-line JSON summary to stdout.
    pub fn finish(&mut self, out: OutputDir, mut manifest: RunManifest) -> CliResult<()> {
        manifest.inputs = self.inputs.clone();
        let root = out.root().display().to_string();
        let manifest = out.finish(manifest)?;
        let line = serde_json::json!({
            "out_dir": root,
            "bookkeeping": manifest.bookkeeping,
            "summary": manifest.summary,
            "outputs": manifest.outputs.iter().map(|f| &f.path).collect::<Vec<_>>(),
        });
        writeln!(self.stdout, "{line}")?;
        Ok(())
    }

    pub fn layout(&mut self, path: Option<&Path>) -> CliResult<Layout> {
        let path = path.map(Path::to_path_buf).or_else(|| self.cfg.gcode.layout.as_ref().map(PathBuf::from));
        match path {
            None => Ok(Layout::default()),
            Some(p) => {
                let text = self.read_input(&p)?;
                Layout::from_json(&text).map_err(|e| CliError::from(e).context(p.display()))
            }
        }
    }
}

/// Loads the config and applies the global overrides.
pub fn resolve_config(g: &GlobalArgs) -> CliResult<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.ga.rng_seed = s;
        cfg.arena.rng_seed = s;
    }
    if let Some(o) = g.objective {
        cfg.objective = o;
    }
    if let Some(s) = g.sigma {
        cfg.landscape.sigma = s;
    }
    if let Some(l) = g.lambda {
        cfg.landscape.lambda = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `a,b,c,d` proportions, normalized to sum to one.
pub fn parse_recipe(s: &str) -> CliResult<Formulation<f64>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::usage(format!("recipe `{s}`: expected four comma-separated proportions")));
    }
    let mut raw = [0.0; 4];
    for (slot, p) in raw.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| CliError::usage(format!("recipe `{s}`: cannot parse `{p}`")))?;
    }
    normalize(raw).map_err(|e| CliError::data(format!("recipe `{s}`: {e}")))
}

pub fn dispatch(cli: Cli, command: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(&cli.global)?;
    let seed = match cli.command {
        Command::Simulate { .. } => cfg.arena.rng_seed,
        _ => cfg.ga.rng_seed,
    };
    let mut ctx = Context {
        cfg,
        seed,
        global: cli.global,
        command,
        inputs: Vec::new(),
        stdout,
    };
    match cli.command {
        Command::Evolve => evolve::run(&mut ctx),
        Command::Landscape { history, resolution } => landscape::run(&mut ctx, &history, resolution),
        Command::Analyze { history, som, labels } => analyze::run(&mut ctx, &history, som, labels.as_deref()),
        Command::Gcode { command } => gcode::run(&mut ctx, command),
        Command::Simulate { recipe, replicate } => data::simulate(&mut ctx, &recipe, replicate),
        Command::Track { detections } => data::track(&mut ctx, &detections),
        Command::Validate { format, files } => data::validate(&mut ctx, &format, &files),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_parsing() {
        let f = parse_recipe("1, 1, 2, 0").unwrap();
        assert_eq!(f.proportions(), &[0.25, 0.25, 0.5, 0.0]);
        assert_eq!(parse_recipe("1,2,3").unwrap_err().exit, crate::Exit::Usage);
        assert_eq!(parse_recipe("0,0,0,0").unwrap_err().exit, crate::Exit::Data);
    }
}
