use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lindlearn::estimator::{init_params, FitResult};
use lindlearn::experiment::{ExperimentPlan, PrepSet};
use lindlearn::likelihood::{Likelihood, LikelihoodOptions, TomographyDataset};
use lindlearn::model::{Level, ModelSpec, ParameterSet};
use lindlearn::selection::SelectionPath;
use lindlearn_cli::{sha256_hex, GroundTruth, RunManifest};

fn lindlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindlearn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lindlearn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

fn table() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/five_qubit_models.csv")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// One-qubit Rabi model, its spec, and a short pauli6 plan.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
        let mut p = ParameterSet::zeros(&spec);
        p.set_ham_coefficient(&spec, "X", &[1.0]).unwrap();
        write_json(&dir.path().join("model.json"), &GroundTruth { spec: spec.clone(), params: p.flatten() });
        write_json(&dir.path().join("spec.json"), &spec);
        let plan = ExperimentPlan::new(1, PrepSet::Pauli6, vec![0.0, 0.5, 1.0, 1.5], 200);
        write_json(&dir.path().join("plan.json"), &plan);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, seed: &str, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["simulate", "--model", s(&self.path("model.json")), "--plan", s(&self.path("plan.json")), "--seed", seed, "--out", s(&out)]);
        out
    }
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let ws = Workspace::new();
    let a = fs::read(ws.simulate("5", "a.json")).unwrap();
    let b = fs::read(ws.simulate("5", "b.json")).unwrap();
    let c = fs::read(ws.simulate("6", "c.json")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simulate_writes_a_manifest() {
    let ws = Workspace::new();
    let data = ws.simulate("1", "data.json");
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(ws.path("data.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, Some(1));
    assert_eq!(m.outputs[0].sha256, sha256_hex(&fs::read(data).unwrap()));
    assert_eq!(m.inputs.len(), 2);
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let ws = Workspace::new();
    let out = lindlearn(&["simulate", "--model", s(&ws.path("model.json")), "--out", s(&ws.path("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_needs_exactly_one_source() {
    let out = lindlearn(&["select", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
    let t = table();
    let out = lindlearn(&["select", "--table", s(&t), "--fits", ".", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dof_reports_local_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::from_levels(5, (0..5).collect(), Level::Local, Level::Local).unwrap();
    let path = dir.path().join("spec.json");
    write_json(&path, &spec);
    let out = ok(&["dof", "--spec", s(&path)]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines.contains(&"h=15"), "{out}");
    assert!(lines.contains(&"d=45"), "{out}");
    assert!(lines.contains(&"total=60"), "{out}");
}

#[test]
fn zero_steps_returns_the_initial_point() {
    let ws = Workspace::new();
    let data = ws.simulate("2", "data.json");
    let fit = ws.path("fit.json");
    ok(&["fit", "--data", s(&data), "--spec", s(&ws.path("spec.json")), "--max-steps", "0", "--seed", "4", "--out", s(&fit)]);
    let result = FitResult::load(&fit).unwrap();
    let spec = result.spec.clone();
    let init = init_params(&spec, 4, 0.1).unwrap();
    assert_eq!(result.parameters().unwrap().flatten(), init.flatten());
    let ds = TomographyDataset::load(&data).unwrap();
    let lik = Likelihood::new(&spec, &ds).unwrap();
    let ll = lik.evaluate(&init, false, None, None, &LikelihoodOptions::default()).unwrap().ll;
    assert!((result.ll_full - ll).abs() <= 1e-9 * ll.abs());
}

#[test]
fn warm_start_requires_a_nested_spec() {
    let ws = Workspace::new();
    let data = ws.simulate("2", "data.json");
    let fit = ws.path("fit.json");
    ok(&["fit", "--data", s(&data), "--spec", s(&ws.path("spec.json")), "--max-steps", "3", "--out", s(&fit)]);

    let mut smaller = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
    smaller.ham.exclude = vec!["Y".into()];
    let small_spec = ws.path("small.json");
    write_json(&small_spec, &smaller);
    let warm = format!("warm:{}", s(&fit));
    let out = lindlearn(&["fit", "--data", s(&data), "--spec", s(&small_spec), "--init", &warm, "--out", s(&ws.path("f2.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // nested warm start succeeds and is never below its baseline
    ok(&["fit", "--data", s(&data), "--spec", s(&ws.path("spec.json")), "--init", &warm, "--max-steps", "20", "--out", s(&ws.path("f3.json"))]);
    let small = FitResult::load(&fit).unwrap();
    let large = FitResult::load(&ws.path("f3.json")).unwrap();
    assert_eq!(large.diagnostics.baseline_ll, Some(small.ll_full));
    assert!(large.ll_full >= small.ll_full - 1e-6 * small.ll_full.abs());
}

#[test]
fn unknown_init_mode_is_rejected() {
    let ws = Workspace::new();
    let data = ws.simulate("2", "data.json");
    let out = lindlearn(&["fit", "--data", s(&data), "--spec", s(&ws.path("spec.json")), "--init", "zeros", "--out", s(&ws.path("f.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn select_single_node_has_empty_path() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    fs::write(&csv, "ham_level,diss_level,nll,dof\nnone,none,100.0,0\n").unwrap();
    let out = dir.path().join("path.json");
    ok(&["select", "--table", s(&csv), "--out", s(&out)]);
    let path: SelectionPath = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(path.moves.is_empty());
    assert!(path.frontier.is_empty());
}

#[test]
fn select_with_unreachable_threshold_stays_at_start() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.json");
    ok(&["select", "--table", s(&table()), "--threshold", "1e9", "--out", s(&out)]);
    let path: SelectionPath = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(path.moves.is_empty());
    assert_eq!(path.stop, path.start);
    assert_eq!(path.frontier.len(), 2);
}

#[test]
fn select_from_fit_directory() {
    let ws = Workspace::new();
    let data = ws.simulate("3", "data.json");
    let fits = ws.path("fits");
    fs::create_dir(&fits).unwrap();
    for (name, h, d) in [("nn", Level::None, Level::None), ("ln", Level::Local, Level::None), ("nl", Level::None, Level::Local), ("ll", Level::Local, Level::Local)] {
        let spec = ModelSpec::from_levels(1, vec![0], h, d).unwrap();
        let sp = ws.path(&format!("{name}.spec.json"));
        write_json(&sp, &spec);
        ok(&["fit", "--data", s(&data), "--spec", s(&sp), "--lr", "1e-2", "--max-steps", "300", "--out", s(&fits.join(format!("{name}.json")))]);
    }
    let out = ws.path("path.json");
    ok(&["select", "--fits", s(&fits), "--out", s(&out)]);
    let path: SelectionPath = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // Rabi data: the Hamiltonian move explains far more than dissipation
    assert!(!path.moves.is_empty());
    assert_eq!(path.moves[0].to, lindlearn::selection::LatticeNode::new(Level::Local, Level::None));
    assert_eq!(path.stop.ham, Level::Local);
}

#[test]
fn report_has_one_row_per_outcome() {
    let ws = Workspace::new();
    let data = ws.simulate("2", "data.json");
    let fit = ws.path("fit.json");
    ok(&["fit", "--data", s(&data), "--spec", s(&ws.path("spec.json")), "--max-steps", "5", "--out", s(&fit)]);
    let csv = ws.path("report.csv");
    ok(&["report", "--fit", s(&fit), "--data", s(&data), "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("config_id,prep,basis,t_us,bitstring,observed,predicted"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 18 * 4 * 2);
    // predicted counts of the two outcomes add to the shot count
    for pair in rows.chunks(2) {
        let total: f64 = pair.iter().map(|r| r[6].parse::<f64>().unwrap()).sum();
        assert!((total - 200.0).abs() < 1e-6);
        let observed: u64 = pair.iter().map(|r| r[5].parse::<u64>().unwrap()).sum();
        assert_eq!(observed, 200);
    }
}

#[test]
fn gradcheck_passes_on_small_model() {
    let ws = Workspace::new();
    let data = ws.simulate("2", "data.json");
    let out = ok(&["gradcheck", "--data", s(&data), "--spec", s(&ws.path("spec.json"))]);
    assert!(out.starts_with("parameters=16 checked=16 "), "{out}");
}

#[test]
fn zero_threads_is_rejected() {
    let out = lindlearn(&["--threads", "0", "dof", "--spec", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
}
