use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dropevo_core::analysis::{holm_bonferroni, label_nodes, train_som, trajectory_report, SomGrid, TrajectoryReport};
use dropevo_core::formats::{read_history, write_bands};
use dropevo_core::ga::GaHistory;
use dropevo_core::rng::{derive_seed, rng_from_seed};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

/// Stream id of the SOM initialisation and sampling generator.
const SOM_STREAM: u64 = 0x534f4d;

/// Holm correction of one test family across histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmFamily {
    pub test: String,
    /// `None` where the test is undefined (Kendall τ with a constant variable);
    /// such entries are never rejected.
    pub p_values: Vec<Option<f64>>,
    pub rejected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryReport {
    pub source: String,
    pub bands_file: String,
    /// True when Kendall τ is undefined because fitness or generation is constant.
    pub kendall_undefined: bool,
    pub report: TrajectoryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format: String,
    pub version: u32,
    pub alpha: f64,
    pub histories: Vec<HistoryReport>,
    pub holm: Vec<HolmFamily>,
}

fn holm_family(test: &str, p: Vec<Option<f64>>, alpha: f64) -> CliResult<HolmFamily> {
    let defined: Vec<(usize, f64)> = p.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    let pv: Vec<f64> = defined.iter().map(|&(_, v)| v).collect();
    let mut rejected = vec![false; p.len()];
    if !pv.is_empty() {
        for ((i, _), r) in defined.iter().zip(holm_bonferroni(&pv, alpha)?) {
            rejected[*i] = r;
        }
    }
    Ok(HolmFamily {
        test: test.to_string(),
        p_values: p,
        rejected,
    })
}

/// Trajectory statistics per history plus Holm corrections across histories.
pub fn analyze_histories(named: &[(String, GaHistory)], alpha: f64) -> CliResult<AnalysisReport> {
    let mut histories = Vec::new();
    for (k, (source, h)) in named.iter().enumerate() {
        let report = trajectory_report(h).map_err(|e| CliError::from(e).context(source))?;
        let bands_file = if named.len() == 1 {
            "bands.csv".to_string()
        } else {
            format!("bands{k}.csv")
        };
        histories.push(HistoryReport {
            source: source.clone(),
            bands_file,
            kendall_undefined: report.kendall.is_none(),
            report,
        });
    }
    let family = |f: &dyn Fn(&TrajectoryReport) -> Option<f64>| -> Vec<Option<f64>> {
        histories.iter().map(|h| f(&h.report)).collect()
    };
    let holm = vec![
        holm_family("first_vs_last", family(&|r| Some(r.first_vs_last.anova.p)), alpha)?,
        holm_family("middle_vs_last", family(&|r| Some(r.middle_vs_last.anova.p)), alpha)?,
        holm_family("all_generations", family(&|r| Some(r.all_generations.p)), alpha)?,
        holm_family("kendall", family(&|r| r.kendall.map(|k| k.p)), alpha)?,
    ];
    Ok(AnalysisReport {
        format: "dropevo-report".into(),
        version: 1,
        alpha,
        histories,
        holm,
    })
}

/// `history,run,individual_id,label` rows keyed by the first three columns.
fn read_labels(text: &str, source: &Path) -> CliResult<BTreeMap<(usize, usize, u64), String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let err = |m: String| CliError::data(format!("{}: {m}", source.display()));
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.iter().ne(["history", "run", "individual_id", "label"]) {
        return Err(err("expected header `history,run,individual_id,label`".into()));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize| -> CliResult<u64> {
            rec[k]
                .parse()
                .map_err(|_| err(format!("line {line}: field `{}` is not an integer", &header[k])))
        };
        out.insert((num(0)? as usize, num(1)? as usize, num(2)?), rec[3].to_string());
    }
    Ok(out)
}

fn som_csv(som: &SomGrid<f64>, nodes: &[(usize, Option<String>)], hits: &[usize]) -> String {
    let mut s = String::from("node,x,y,w1,w2,w3,w4,hits,labelled_hits,label\n");
    for (k, w) in som.weights.iter().enumerate() {
        let (x, y) = (k % som.width, k / som.width);
        let (lh, label) = &nodes[k];
        s.push_str(&format!(
            "{k},{x},{y},{},{},{},{},{},{lh},{}\n",
            w[0],
            w[1],
            w[2],
            w[3],
            hits[k],
            label.as_deref().unwrap_or("")
        ));
    }
    s
}

pub fn run(ctx: &mut Context, paths: &[PathBuf], som: bool, labels: Option<&Path>) -> CliResult<()> {
    let mut named = Vec::new();
    for path in paths {
        let text = ctx.read_input(path)?;
        let h = read_history(text.as_bytes(), &ctx.cfg.ga).map_err(|e| CliError::from(e).context(path.display()))?;
        named.push((path.display().to_string(), h));
    }
    let report = analyze_histories(&named, ctx.cfg.analysis.alpha)?;

    let mut out = OutputDir::create(&ctx.out_dir())?;
    for h in &report.histories {
        let mut buf = Vec::new();
        write_bands(&mut buf, &h.report.bands)?;
        out.write(&h.bands_file, &buf)?;
    }
    out.write("report.json", (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;

    let mut som_summary = serde_json::Value::Null;
    if som {
        let label_map = match labels {
            Some(p) => {
                let text = ctx.read_input(p)?;
                read_labels(&text, p)?
            }
            None => BTreeMap::new(),
        };
        let mut data = Vec::new();
        let mut keys = Vec::new();
        for (k, (_, h)) in named.iter().enumerate() {
            for run in &h.runs {
                for ind in run.individuals.values() {
                    if let Ok(f) = ind.genome.phenotype() {
                        data.push(f.into_array());
                        keys.push((k, run.run, ind.id));
                    }
                }
            }
        }
        let seed = ctx.cfg.analysis.som_seed.unwrap_or(ctx.seed);
        let mut rng = rng_from_seed(derive_seed(seed, &[SOM_STREAM]));
        let params = ctx.cfg.analysis.som;
        let grid = ctx.pooled(|| train_som(&data, &params, &mut rng))??;
        let mut hits = vec![0usize; grid.weights.len()];
        for x in &data {
            hits[grid.best_matching_unit(x)] += 1;
        }
        let (ldata, lnames): (Vec<_>, Vec<_>) = data
            .iter()
            .zip(&keys)
            .filter_map(|(x, key)| label_map.get(key).map(|l| (*x, l.clone())))
            .unzip();
        let nodes = label_nodes(&grid, &ldata, &lnames);
        out.write("som.csv", som_csv(&grid, &nodes, &hits).as_bytes())?;
        som_summary = json!({
            "seed": seed,
            "width": grid.width,
            "height": grid.height,
            "recipes": data.len(),
            "labelled_recipes": ldata.len(),
            "unmatched_labels": label_map.len().saturating_sub(ldata.len()),
        });
    }

    let mut manifest = ctx.manifest();
    manifest.summary = json!({
        "histories": report.histories.len(),
        "holm_middle_vs_last": report.holm[1].rejected,
        "kendall_undefined": report.histories.iter().map(|h| h.kendall_undefined).collect::<Vec<_>>(),
        "som": som_summary,
    });
    ctx.finish(out, manifest)
}
