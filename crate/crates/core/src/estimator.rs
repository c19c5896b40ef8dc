//! Maximum-likelihood fitting with Adam and Hessian-based uncertainties.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{fd_step, Likelihood, LikelihoodOptions, TomographyDataset};
use crate::model::{dof_count, ModelSpec, PackedParameters, ParameterSet};

/// Tolerance on the nested-model monotonicity check.
pub const MONOTONICITY_TOL: f64 = 1e-6;

/// Restart learning-rate factor after a monotonicity violation.
pub const RESTART_LR_FACTOR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub plateau_rel_tol: f64,
    pub plateau_window: usize,
    pub minibatch_fraction: f64,
    pub seed: u64,
    /// Factor applied to the learning rate at each plateau; 1 disables decay.
    pub lr_decay: f64,
    /// A plateau reached once the decayed rate would fall below this stops the fit.
    pub min_learning_rate: f64,
    /// Full-data LL of a nested smaller model, for the monotonicity diagnostic.
    pub baseline_ll: Option<f64>,
    pub restart_on_violation: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: 5000,
            plateau_rel_tol: 1e-6,
            plateau_window: 100,
            minibatch_fraction: 1.0,
            seed: 0,
            lr_decay: 0.3,
            min_learning_rate: 1e-6,
            baseline_ll: None,
            restart_on_violation: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.minibatch_fraction > 0.0 && self.minibatch_fraction <= 1.0) {
            return bad("minibatch_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.plateau_window == 0 {
            return bad("plateau_window must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    /// Batched LL scaled to the full record count.
    pub ll: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub initial_ll: f64,
    pub baseline_ll: Option<f64>,
    pub monotonicity_violated: bool,
    pub restarted: bool,
    /// Full-batch steps whose LL fell below the previous step's.
    pub ll_decreases: usize,
    pub steps_taken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: PackedParameters,
    /// Always evaluated on the full dataset.
    pub ll_full: f64,
    pub generator_dof: i64,
    pub n_observations: u64,
    pub trace: Vec<TracePoint>,
    pub stop_reason: StopReason,
    pub diagnostics: Diagnostics,
    pub optimizer: OptimizerConfig,
}

impl FitResult {
    pub fn parameters(&self) -> Result<ParameterSet> {
        ParameterSet::unpack(&self.spec, &self.params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Random initial point: generator parameters of locality k are drawn from
/// N(0, (sigma0·10^(1−k))²), state parameters from N(ground, sigma0²).
pub fn init_params(spec: &ModelSpec, seed: u64, sigma0: f64) -> Result<ParameterSet> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidArgument("sigma0 must be positive".into()));
    }
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let values: Vec<f64> = (0..layout.len())
        .map(|i| {
            let z: f64 = rng.sample(unit);
            if i < layout.ham_offset() {
                let ground = if i % 4 == 0 { 1.0 } else { 0.0 };
                ground + sigma0 * z
            } else {
                let k = layout.locality(i) as i32;
                sigma0 * 10f64.powi(1 - k) * z
            }
        })
        .collect();
    ParameterSet::from_flat_layout(&layout, &values)
}

struct Batches {
    groups: Vec<Vec<usize>>,
    batch_configs: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha20Rng,
}

impl Batches {
    fn new(dataset: &TomographyDataset, fraction: f64, seed: u64) -> Option<Self> {
        if fraction >= 1.0 {
            return None;
        }
        let groups: Vec<Vec<usize>> = dataset.records_by_configuration().into_iter().map(|(_, r)| r).collect();
        let batch_configs = ((fraction * groups.len() as f64).ceil() as usize).clamp(1, groups.len().max(1));
        Some(Self {
            order: (0..groups.len()).collect(),
            cursor: groups.len(),
            groups,
            batch_configs,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_configs).min(self.order.len());
        let mut records: Vec<usize> = self.order[self.cursor..end].iter().flat_map(|&g| self.groups[g].iter().copied()).collect();
        records.sort_unstable();
        self.cursor = end;
        records
    }
}

struct Run {
    x: Vec<f64>,
    ll: Option<f64>,
    trace: Vec<TracePoint>,
    stop: StopReason,
    decreases: usize,
    steps: usize,
}

fn check_finite(step: usize, x: &[f64], ll: f64, grad: &[f64]) -> Result<()> {
    if ll.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteObjective { step, params: x.to_vec() })
    }
}

fn run_adam(lik: &Likelihood<'_>, x0: &[f64], lr0: f64, cfg: &OptimizerConfig, opts: &LikelihoodOptions) -> Result<Run> {
    let spec = lik.spec();
    let n_records = lik.dataset().records.len();
    let mut batches = Batches::new(lik.dataset(), cfg.minibatch_fraction, cfg.seed);
    let full_batch = batches.is_none();
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut lr = lr0;
    let mut best_x = x.clone();
    let mut best_full: Option<f64> = None;
    let mut best_batched = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;
    let mut prev_full: Option<f64> = None;
    let mut trace = Vec::new();
    let mut decreases = 0;
    let mut stop = StopReason::MaxSteps;
    let mut steps = 0;

    for step in 0..cfg.max_steps {
        let params = ParameterSet::from_flat(spec, &x)?;
        let (ll, grad, scaled) = match batches.as_mut() {
            None => {
                let e = lik.evaluate(&params, true, None, None, opts)?;
                let g = e.gradient.expect("gradient requested");
                (e.ll, g, e.ll)
            }
            Some(b) => {
                let subset = b.next();
                let e = lik.evaluate(&params, true, Some(&subset), None, opts)?;
                let g = e.gradient.expect("gradient requested");
                (e.ll, g, e.ll * n_records as f64 / subset.len().max(1) as f64)
            }
        };
        check_finite(step, &x, ll, &grad)?;
        trace.push(TracePoint {
            step,
            ll: scaled,
            learning_rate: lr,
        });
        if full_batch {
            if prev_full.is_some_and(|p| ll < p) {
                decreases += 1;
            }
            prev_full = Some(ll);
            if best_full.is_none_or(|b| ll > b) {
                best_full = Some(ll);
                best_x.clone_from(&x);
            }
        }

        if scaled > best_batched + cfg.plateau_rel_tol * best_batched.abs() {
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if scaled > best_batched {
            best_batched = scaled;
        }
        if since_improvement >= cfg.plateau_window {
            if cfg.lr_decay < 1.0 && lr * cfg.lr_decay >= cfg.min_learning_rate {
                lr *= cfg.lr_decay;
                since_improvement = 0;
                if full_batch {
                    x.clone_from(&best_x);
                }
            } else {
                stop = StopReason::Plateau;
                steps = step;
                break;
            }
        }

        let t = (step + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            x[i] += lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
        }
        steps = step + 1;
    }

    if full_batch && stop == StopReason::MaxSteps && steps > 0 {
        // The last update has not been evaluated yet.
        let e = lik.evaluate(&ParameterSet::from_flat(spec, &x)?, false, None, None, opts)?;
        if !e.ll.is_finite() {
            return Err(Error::NonFiniteObjective { step: steps, params: x });
        }
        if best_full.is_none_or(|b| e.ll > b) {
            best_full = Some(e.ll);
            best_x.clone_from(&x);
        }
    }
    let (x, ll) = if full_batch { (best_x, best_full) } else { (x, None) };
    Ok(Run {
        x,
        ll,
        trace,
        stop,
        decreases,
        steps,
    })
}

/// Fit with default likelihood options.
pub fn fit(dataset: &TomographyDataset, spec: &ModelSpec, init: &ParameterSet, config: &OptimizerConfig) -> Result<FitResult> {
    fit_with_options(dataset, spec, init, config, &LikelihoodOptions::default())
}

pub fn fit_with_options(
    dataset: &TomographyDataset,
    spec: &ModelSpec,
    init: &ParameterSet,
    config: &OptimizerConfig,
    opts: &LikelihoodOptions,
) -> Result<FitResult> {
    config.validate()?;
    init.check_shape(spec)?;
    let lik = Likelihood::new(spec, dataset)?;
    let x0 = init.flatten();
    let full_ll = |x: &[f64]| -> Result<f64> {
        let ll = lik.evaluate(&ParameterSet::from_flat(spec, x)?, false, None, None, opts)?.ll;
        if ll.is_finite() {
            Ok(ll)
        } else {
            Err(Error::NonFiniteObjective { step: 0, params: x.to_vec() })
        }
    };
    let initial_ll = full_ll(&x0)?;

    let finish = |run: Run| -> Result<(Run, f64)> {
        let ll = match run.ll {
            Some(ll) => ll,
            None if run.steps == 0 => initial_ll,
            None => full_ll(&run.x)?,
        };
        Ok((run, ll))
    };
    let (mut run, mut ll) = finish(run_adam(&lik, &x0, config.learning_rate, config, opts)?)?;
    let violated = |ll: f64| config.baseline_ll.is_some_and(|b| ll < b - MONOTONICITY_TOL);
    let mut restarted = false;
    if violated(ll) && config.restart_on_violation && config.max_steps > 0 {
        restarted = true;
        let (again, ll2) = finish(run_adam(&lik, &x0, config.learning_rate * RESTART_LR_FACTOR, config, opts)?)?;
        if ll2 > ll {
            let mut trace = std::mem::take(&mut run.trace);
            let offset = run.steps;
            trace.extend(again.trace.iter().map(|p| TracePoint {
                step: p.step + offset,
                ..*p
            }));
            run = Run { trace, ..again };
            ll = ll2;
        }
    }

    let params = ParameterSet::from_flat(spec, &run.x)?;
    Ok(FitResult {
        spec: spec.clone(),
        params: params.pack(spec)?,
        ll_full: ll,
        generator_dof: dof_count(spec)?.generator_dof,
        n_observations: dataset.n_observations(),
        trace: run.trace,
        stop_reason: run.stop,
        diagnostics: Diagnostics {
            initial_ll,
            baseline_ll: config.baseline_ll,
            monotonicity_violated: violated(ll),
            restarted,
            ll_decreases: run.decreases,
            steps_taken: run.steps,
        },
        optimizer: *config,
    })
}

/// Relative eigenvalue floor of the pseudo-inverse.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Uncertainty {
    pub std_errors: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Observed information (−Hessian of the LL).
    pub information: DMatrix<f64>,
    /// Eigenvalues of the information, ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors (columns) dropped by the eigenvalue floor.
    pub flagged: Vec<Vec<f64>>,
    pub indefinite: bool,
}

/// Observed information by central differences of the analytic gradient.
/// The differences replay the step sequence chosen at `params`.
pub fn observed_information(lik: &Likelihood<'_>, params: &ParameterSet, opts: &LikelihoodOptions) -> Result<DMatrix<f64>> {
    use rayon::prelude::*;
    let spec = lik.spec();
    let base = lik.evaluate(params, false, None, None, opts)?;
    let plans = base.plans.expect("full-data evaluation");
    let x = params.flatten();
    let n = x.len();
    let serial = LikelihoodOptions { parallel: false, ..*opts };
    let grad = |x: &[f64]| -> Result<Vec<f64>> {
        let e = lik.evaluate(&ParameterSet::from_flat(spec, x)?, true, None, Some(&plans), &serial)?;
        Ok(e.gradient.expect("gradient requested"))
    };
    let cols: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = fd_step(x[j]);
            let mut up = x.clone();
            up[j] += h;
            let mut dn = x.clone();
            dn[j] -= h;
            let (a, b) = (grad(&up)?, grad(&dn)?);
            Ok(a.iter().zip(&b).map(|(a, b)| -(a - b) / (2.0 * h)).collect())
        })
        .collect();
    let mut info = DMatrix::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            info[(i, j)] = v;
        }
    }
    Ok((&info + info.transpose()) * 0.5)
}

/// Covariance as the floored pseudo-inverse of an information matrix.
pub fn uncertainty_from_information(information: DMatrix<f64>) -> Uncertainty {
    let n = information.nrows();
    let eig = information.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = EIGEN_FLOOR * lmax;
    let mut covariance = DMatrix::zeros(n, n);
    let mut flagged = Vec::new();
    let mut indefinite = false;
    for &k in &order {
        let l = eig.eigenvalues[k];
        let u = eig.eigenvectors.column(k);
        if l > floor {
            covariance += (u * u.transpose()) / l;
        } else {
            if l < -floor {
                indefinite = true;
            }
            flagged.push(u.iter().copied().collect());
        }
    }
    Uncertainty {
        std_errors: (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect(),
        covariance,
        information,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        flagged,
        indefinite,
    }
}

/// Standard errors of a fitted model at its reported parameters.
pub fn hessian_uncertainty(fit: &FitResult, dataset: &TomographyDataset) -> Result<Uncertainty> {
    let params = fit.parameters()?;
    let lik = Likelihood::new(&fit.spec, dataset)?;
    let info = observed_information(&lik, &params, &LikelihoodOptions::default())?;
    Ok(uncertainty_from_information(info))
}

/// Delta-method standard error of a scalar function of the flat parameters.
pub fn derived_standard_error(unc: &Uncertainty, x: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let grad: Vec<f64> = (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            let mut up = x.to_vec();
            up[i] += h;
            let mut dn = x.to_vec();
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect();
    let g = nalgebra::DVector::from_vec(grad);
    (g.transpose() * &unc.covariance * &g)[(0, 0)].max(0.0).sqrt()
}
