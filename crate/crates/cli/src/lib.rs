//! Command implementations behind the `lindlearn` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lindlearn::estimator::{fit, init_params, FitResult, OptimizerConfig};
use lindlearn::experiment::{sample_synthetic, ExperimentPlan, BASIS_LABELS};
use lindlearn::likelihood::{gradcheck_point, gradient_check, predict_for_plan, Likelihood, LikelihoodOptions, TomographyDataset};
use lindlearn::model::{dof_count, embed_warm_start, ModelSpec, ParameterSet};
use lindlearn::propagator::SolverConfig;
use lindlearn::selection::{greedy_path, Lattice, LatticeNode, DEFAULT_THRESHOLD};

/// Standard deviation of random initial parameters.
pub const DEFAULT_SIGMA0: f64 = 0.1;

/// Largest accepted relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "lindlearn", version, about = "Learn Lindblad models from tomography counts")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset from a ground-truth model.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of a model spec to a dataset.
    Fit(FitArgs),
    /// Greedy model selection over the (Hamiltonian, dissipator) lattice.
    Select(SelectArgs),
    /// Print the parameter count of a spec.
    Dof(DofArgs),
    /// Compare the analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Observed and predicted counts per configuration, time and outcome.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground truth: {"spec": ModelSpec, "params": [flat values]}.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// `random` or `warm:FILE` with FILE a fit of a smaller nested model.
    #[arg(long, default_value = "random")]
    pub init: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long = "max-steps", default_value_t = 5000)]
    pub max_steps: usize,
    /// Fraction of configurations per minibatch.
    #[arg(long, default_value_t = 1.0)]
    pub minibatch: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct SelectSource {
    /// Directory of fit files.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    /// CSV with columns ham_level, diss_level, nll, dof.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub source: SelectSource,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DofArgs {
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Ground-truth bundle consumed by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Sidecar path `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(command: &str, inputs: &[&Path], out: &Path, seed: Option<u64>, config: serde_json::Value, start: Instant) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: vec![digest(out)?],
        seed,
        config,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(manifest_path(out), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<TomographyDataset> {
    TomographyDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Select(a) => select(&a),
        Command::Dof(a) => dof(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Report(a) => report(&a),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let truth: GroundTruth = read_json(&a.model)?;
    let plan: ExperimentPlan = read_json(&a.plan)?;
    truth.spec.validate()?;
    let params = ParameterSet::from_flat(&truth.spec, &truth.params)?;
    let dataset = sample_synthetic(&truth.spec, &params, &plan, a.seed, &SolverConfig::default())?;
    dataset.save(&a.out)?;
    write_manifest("simulate", &[&a.model, &a.plan], &a.out, Some(a.seed), serde_json::json!({}), start)?;
    println!("wrote {} records to {}", dataset.records.len(), a.out.display());
    Ok(())
}

pub fn fit_cmd(a: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let dataset = load_dataset(&a.data)?;
    let spec: ModelSpec = read_json(&a.spec)?;
    spec.validate()?;
    if spec.observed.len() != dataset.n_observed {
        bail!(
            "register mismatch: spec observes {} qubits, dataset has {}",
            spec.observed.len(),
            dataset.n_observed
        );
    }
    let mut config = OptimizerConfig {
        learning_rate: a.lr,
        max_steps: a.max_steps,
        minibatch_fraction: a.minibatch,
        seed: a.seed,
        ..OptimizerConfig::default()
    };
    let mut inputs: Vec<&Path> = vec![&a.data, &a.spec];
    let warm_path;
    let init = if a.init == "random" {
        init_params(&spec, a.seed, DEFAULT_SIGMA0)?
    } else if let Some(file) = a.init.strip_prefix("warm:") {
        warm_path = PathBuf::from(file);
        let small = FitResult::load(&warm_path).with_context(|| format!("loading warm start {file}"))?;
        let init = embed_warm_start(&small.parameters()?, &small.spec, &spec)?;
        if small.n_observations == dataset.n_observations() {
            config.baseline_ll = Some(small.ll_full);
        }
        inputs.push(&warm_path);
        init
    } else {
        bail!("--init must be `random` or `warm:FILE`, got `{}`", a.init);
    };
    let result = fit(&dataset, &spec, &init, &config)?;
    fs::write(&a.out, result.to_json()?)?;
    write_manifest(
        "fit",
        &inputs,
        &a.out,
        Some(a.seed),
        serde_json::json!({ "init": a.init, "lr": a.lr, "max_steps": a.max_steps, "minibatch": a.minibatch, "sigma0": DEFAULT_SIGMA0 }),
        start,
    )?;
    println!(
        "ll = {:.6}  generator_dof = {}  steps = {}  stop = {:?}",
        result.ll_full, result.generator_dof, result.diagnostics.steps_taken, result.stop_reason
    );
    if result.diagnostics.monotonicity_violated {
        eprintln!("warning: fitted LL is below the warm-start baseline");
    }
    Ok(())
}

/// Lattice from a directory of fit files (one per node).
pub fn lattice_from_fits(dir: &Path) -> Result<Lattice> {
    let mut lattice = Lattice::default();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    paths.sort();
    for p in paths {
        let f = FitResult::load(&p).with_context(|| format!("loading fit {}", p.display()))?;
        let (ham, diss) = f
            .spec
            .levels()
            .ok_or_else(|| anyhow!("{}: spec is not a lattice node", p.display()))?;
        lattice.insert(LatticeNode::new(ham, diss), -f.ll_full, f.generator_dof)?;
    }
    Ok(lattice)
}

pub fn select(a: &SelectArgs) -> Result<()> {
    let start = Instant::now();
    let (lattice, input) = match (&a.source.fits, &a.source.table) {
        (Some(dir), None) => (lattice_from_fits(dir)?, None),
        (None, Some(csv)) => (Lattice::from_csv(csv).with_context(|| format!("reading {}", csv.display()))?, Some(csv.as_path())),
        _ => bail!("exactly one of --fits or --table is required"),
    };
    let path = greedy_path(&lattice, a.threshold)?;
    fs::write(&a.out, path.to_json()?)?;
    let inputs: Vec<&Path> = input.into_iter().collect();
    write_manifest("select", &inputs, &a.out, None, serde_json::json!({ "threshold": a.threshold }), start)?;
    print!("{}", path.render_table());
    Ok(())
}

pub fn dof(a: &DofArgs) -> Result<()> {
    let spec: ModelSpec = read_json(&a.spec)?;
    let d = dof_count(&spec)?;
    println!("h={}", d.h_dof);
    println!("d={}", d.d_dof);
    println!("state={}", d.state_dof);
    println!("gauge={}", d.gauge_adjustment);
    println!("total={}", d.generator_dof);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let spec: ModelSpec = read_json(&a.spec)?;
    let lik = Likelihood::new(&spec, &dataset)?;
    let point = gradcheck_point(&spec, a.seed)?;
    let r = gradient_check(&lik, &point, &LikelihoodOptions::default())?;
    println!("parameters={} checked={} max_rel_error={:e}", r.n_params, r.n_checked, r.max_rel_error);
    if r.max_rel_error > GRADCHECK_TOLERANCE {
        let w = r.worst_index.unwrap_or(0);
        bail!(
            "gradient check failed: relative error {:e} at parameter {w} (analytic {:e}, numeric {:e})",
            r.max_rel_error,
            r.analytic[w],
            r.numeric[w]
        );
    }
    Ok(())
}

fn join_labels(idx: &[usize], f: impl Fn(usize) -> String) -> String {
    idx.iter().map(|&i| f(i)).collect::<Vec<_>>().join("-")
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let start = Instant::now();
    let dataset = load_dataset(&a.data)?;
    let result = FitResult::load(&a.fit).with_context(|| format!("loading fit {}", a.fit.display()))?;
    let params = result.parameters()?;
    let configs = dataset.configurations();
    let table = predict_for_plan(&params, &result.spec, &dataset, &configs, &SolverConfig::default())?;
    let mut observed: BTreeMap<(usize, usize), &[u64]> = BTreeMap::new();
    let index: BTreeMap<_, usize> = configs.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    for r in &dataset.records {
        observed.insert((index[&r.configuration()], r.t_index), &r.counts);
    }
    let n_obs = dataset.n_observed;
    let mut out = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut text = String::from("config_id,prep,basis,t_us,bitstring,observed,predicted\n");
    for (c, cfg) in configs.iter().enumerate() {
        let prep = join_labels(&cfg.prep, |i| i.to_string());
        let basis = join_labels(&cfg.basis, |i| BASIS_LABELS[i].to_string());
        for (t, &time) in dataset.times_us.iter().enumerate() {
            for b in 0..dataset.n_outcomes() {
                let bits: String = (0..n_obs).map(|q| if b >> (n_obs - 1 - q) & 1 == 1 { '1' } else { '0' }).collect();
                let obs = observed.get(&(c, t)).map(|v| v[b].to_string()).unwrap_or_default();
                let pred = table.probs[c][t][b] * dataset.n_shots as f64;
                text.push_str(&format!("{c},{prep},{basis},{time},{bits},{obs},{pred}\n"));
            }
        }
    }
    out.write_all(text.as_bytes())?;
    drop(out);
    write_manifest("report", &[&a.fit, &a.data], &a.out, None, serde_json::json!({}), start)?;
    Ok(())
}
