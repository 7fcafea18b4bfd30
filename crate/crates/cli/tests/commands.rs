use std::fs;
use std::path::{Path, PathBuf};

use dropevo_core::arena::UnimodalMap;
use dropevo_core::formats::write_history;
use dropevo_core::formulation::Genome;
use dropevo_core::ga::{run_ga, GaConfig, GaHistory, GaRun, Individual};
use dropevo_core::landscape::Cell;
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn dropevo(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = dropevo::run(std::iter::once("dropevo").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/examples")
}

fn write_hist(dir: &Path, name: &str, h: &GaHistory) -> PathBuf {
    let p = dir.join(name);
    let mut buf = Vec::new();
    write_history(&mut buf, h).unwrap();
    fs::write(&p, buf).unwrap();
    p
}

/// One run with distinct individuals per generation and scripted fitness.
fn scripted_history(generations: usize, per_gen: usize, fitness: impl Fn(usize, usize) -> f64) -> GaHistory {
    let mut individuals = std::collections::BTreeMap::new();
    let mut gens = Vec::new();
    let mut id = 1;
    for g in 1..=generations {
        let mut members = Vec::new();
        for k in 0..per_gen {
            let t = (k as f64 + 0.5) / per_gen as f64;
            let mut ind = Individual::new(id, Genome::new([t, 1.0 - t, 0.3, 0.1 * g as f64]), None, g);
            let f = fitness(g, k);
            ind.set_evaluation(vec![f; 3], f).unwrap();
            individuals.insert(id, ind);
            members.push(id);
            id += 1;
        }
        gens.push(members);
    }
    GaHistory {
        config: GaConfig {
            generations,
            population_size: per_gen,
            runs: 1,
            ..GaConfig::default()
        },
        runs: vec![GaRun {
            run: 0,
            individuals,
            generations: gens,
        }],
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    let help = dropevo(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("evolve"));
    assert_eq!(dropevo(&["evolve", "--no-such-flag"]).code, 1);
    assert_eq!(dropevo(&["simulate", "--recipe", "1,2,3"]).code, 1);
    let missing = dropevo(&["track", "/nonexistent/detections.csv"]);
    assert_eq!(missing.code, 2);
    assert!(missing.stderr.contains("/nonexistent/detections.csv"));
}

#[test]
fn single_generation_evolve_writes_history_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"ga": {"generations": 1, "runs": 1}, "arena": {"duration": 2.0}}"#).unwrap();
    let out = dir.path().join("out");
    let r = dropevo(&["--config", path_str(&cfg), "--seed", "3", "--out-dir", path_str(&out), "evolve"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let summary: Value = serde_json::from_str(r.stdout.trim()).unwrap();
    assert_eq!(summary["bookkeeping"]["total_recipes"], 25);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["command"].as_array().unwrap().iter().any(|a| a == "evolve"));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 25);
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"ga": {"carry_overs": "fifteen"}}"#).unwrap();
    let r = dropevo(&["--config", path_str(&cfg), "evolve"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("ga.carry_overs"), "{}", r.stderr);

    fs::write(&cfg, r#"{"ga": {"carry_overs": 30}}"#).unwrap();
    let r = dropevo(&["--config", path_str(&cfg), "evolve"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("carry_overs"), "{}", r.stderr);

    fs::write(&cfg, r#"{"arena": {"frame_rte": 30}}"#).unwrap();
    let r = dropevo(&["--config", path_str(&cfg), "evolve"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("frame_rte"), "{}", r.stderr);
}

#[test]
fn equal_fitness_gives_a_constant_landscape() {
    let dir = TempDir::new().unwrap();
    let h = write_hist(dir.path(), "flat.csv", &scripted_history(3, 10, |_, _| 0.75));
    let out = dir.path().join("out");
    let r = dropevo(&["--out-dir", path_str(&out), "landscape", "--resolution", "21", path_str(&h)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let islands = read_json(&out.join("islands.json"));
    assert_eq!(islands["islands"].as_array().unwrap().len(), 1);
    assert_eq!(islands["islands"][0]["cell_count"], 4 * 231);
    let csv = fs::read_to_string(out.join("landscape.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[6].parse::<f64>().unwrap(), 0.75);
        rows += 1;
    }
    assert_eq!(rows, 4 * 231);
}

#[test]
fn unimodal_history_has_a_dominant_island_at_the_optimum() {
    let map = UnimodalMap::seeded(21);
    let eval = |f: &dropevo_core::Formulation, _seed: u64| -> Result<Vec<f64>, std::convert::Infallible> {
        Ok(vec![map.speed(f); 3])
    };
    let history = run_ga(&GaConfig { rng_seed: 4, ..GaConfig::default() }, &eval).unwrap();
    let dir = TempDir::new().unwrap();
    let h = write_hist(dir.path(), "unimodal.csv", &history);
    let out = dir.path().join("out");
    let res = 51;
    let r = dropevo(&["--out-dir", path_str(&out), "landscape", "--resolution", &res.to_string(), path_str(&h)]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let islands = read_json(&out.join("islands.json"))["islands"].as_array().unwrap().clone();
    let top = &islands[0];
    let top_cells = top["cell_count"].as_u64().unwrap();
    assert!(islands.iter().all(|i| i["cell_count"].as_u64().unwrap() <= top_cells));

    // nearest lattice cell to the optimum, on the face where it has no oil
    let opt = map.optimum;
    let face = opt.iter().position(|&v| v == 0.0).unwrap();
    let axes = dropevo_core::landscape::face_axes(face);
    let step = (res - 1) as f64;
    let cell = Cell {
        face,
        i: (opt[axes[0]] * step).round() as usize,
        j: (opt[axes[1]] * step).round() as usize,
    };
    let csv = fs::read_to_string(out.join("landscape.csv")).unwrap();
    let label = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == cell.face.to_string() && f[1] == cell.i.to_string() && f[2] == cell.j.to_string())
        .map(|f| f[7].to_string())
        .unwrap();
    assert_eq!(label, "0");
    let peak: Vec<f64> = serde_json::from_value(top["max_location"].clone()).unwrap();
    for (p, o) in peak.iter().zip(&opt) {
        assert!((p - o).abs() < 0.1, "peak {peak:?} vs optimum {opt:?}");
    }
}

#[test]
fn analyze_reports_trend_and_flat_runs() {
    let dir = TempDir::new().unwrap();
    let up = write_hist(dir.path(), "up.csv", &scripted_history(5, 12, |g, k| g as f64 + (k % 4) as f64 * 0.1));
    let flat = write_hist(dir.path(), "flat.csv", &scripted_history(5, 12, |_, _| 0.4));
    let out = dir.path().join("out");
    let r = dropevo(&["--out-dir", path_str(&out), "analyze", path_str(&up), path_str(&flat)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = read_json(&out.join("report.json"));
    let up_report = &report["histories"][0]["report"];
    for key in ["first_vs_last", "middle_vs_last"] {
        assert!(up_report[key]["anova"]["p"].as_f64().unwrap() < 0.01);
    }
    assert!(up_report["all_generations"]["p"].as_f64().unwrap() < 0.01);
    assert!(up_report["kendall"]["tau"].as_f64().unwrap() > 0.0);
    assert!(up_report["kendall"]["p"].as_f64().unwrap() < 0.001);

    let flat_entry = &report["histories"][1];
    assert_eq!(flat_entry["kendall_undefined"], true);
    assert!(flat_entry["report"]["kendall"].is_null());
    assert_eq!(report["holm"].as_array().unwrap().len(), 4);
    assert!(out.join("bands0.csv").exists() && out.join("bands1.csv").exists());
}

#[test]
fn gcode_parse_and_exec() {
    let dir = TempDir::new().unwrap();
    let experiment = dir.path().join("experiment.gcode");
    let cleaning = dir.path().join("cleaning.gcode");
    let r = dropevo(&["gcode", "compile", "--recipe", "0.25,0.25,0.25,0.25", "--well", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    fs::write(&experiment, &r.stdout).unwrap();
    let r = dropevo(&["gcode", "compile", "--ops", path_str(&examples_dir().join("ops.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let r = dropevo(&["gcode", "parse", path_str(&experiment)]);
    assert_eq!(r.code, 0);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["errors"], 0);

    let layout = dropevo_gcode::Layout::default();
    let program = dropevo_gcode::compile_cleaning_cycle(&layout).unwrap();
    fs::write(&cleaning, dropevo_gcode::render(&program)).unwrap();

    let r = dropevo(&["gcode", "exec", path_str(&experiment), path_str(&cleaning), "--dish-aqueous-ml", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let state: Value = serde_json::from_str(&r.stdout).unwrap();
    let dish = state["vessels"]["dish"].as_object().unwrap();
    assert_eq!(dish.keys().collect::<Vec<_>>(), vec!["aqueous"]);
    let waste: u64 = state["vessels"]["waste"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert!(waste > 0);
}

#[test]
fn compile_rejects_out_of_bounds_moves() {
    let dir = TempDir::new().unwrap();
    let ops = dir.path().join("ops.json");
    fs::write(&ops, r#"[{"op": "move_to", "x": 900.0, "y": 10.0, "apparatus": "syringe"}]"#).unwrap();
    let r = dropevo(&["gcode", "compile", "--ops", path_str(&ops)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("X = 900"), "{}", r.stderr);
}

#[test]
fn validate_reports_positions() {
    let dir = TempDir::new().unwrap();
    let det = dir.path().join("det.csv");
    fs::write(&det, "frame,x,y,area\n0,1.0,2.0,30.0\n0,5.0,5.0,-1.0\n").unwrap();
    let r = dropevo(&["validate", "--format", "detections", path_str(&det)]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains(":3:"), "{}", r.stdout);
    assert!(r.stdout.contains("area"), "{}", r.stdout);

    let prog = dir.path().join("p.gcode");
    fs::write(&prog, "G1 X10 Y10\nP1 M0 D1 S2 E50001\n").unwrap();
    let r = dropevo(&["validate", "--format", "gcode", path_str(&prog)]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains(":2:") && r.stdout.contains("50000"), "{}", r.stdout);
}

#[test]
fn every_shipped_example_validates() {
    let dir = examples_dir();
    let index = read_json(&dir.join("index.json"));
    let declared = index["files"].as_object().unwrap();
    let mut on_disk: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "index.json" && n != "README.md")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = declared.keys().cloned().collect();
    listed.sort();
    assert_eq!(on_disk, listed, "every example file declares its format");
    for (name, format) in declared {
        let p = dir.join(name);
        let r = dropevo(&["validate", "--format", format.as_str().unwrap(), path_str(&p)]);
        assert_eq!(r.code, 0, "{name}: {}", r.stdout);
    }
}
