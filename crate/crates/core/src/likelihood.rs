//! Datasets, predicted outcome probabilities, the multinomial
//! log-likelihood and its gradient.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::experiment::{basis_unitaries, gate_from_entries, prep_unitaries, GateEntries, PrepSet};
use crate::linalg::kron_all;
use crate::model::{lower_factor, qubit_states, ModelSpec, ParameterSet};
use crate::propagator::{adjoint, evolve_trajectory, LindbladGenerator, SolverConfig, StepRecord};
use crate::{CMatrix, C64};

/// Probabilities below this are raised to it before renormalizing.
pub const PROB_FLOOR: f64 = 1e-12;

/// One tomographic setting: per-observed-qubit preparation and basis indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub prep: Vec<usize>,
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub prep: Vec<usize>,
    pub basis: Vec<usize>,
    pub t_index: usize,
    pub counts: Vec<u64>,
}

impl Record {
    pub fn configuration(&self) -> Configuration {
        Configuration {
            prep: self.prep.clone(),
            basis: self.basis.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    pub schema_version: u32,
    pub n_observed: usize,
    pub prep_set: PrepSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_preps: Option<Vec<GateEntries>>,
    pub basis_set: String,
    pub basis_convention: String,
    pub times_us: Vec<f64>,
    pub n_shots: u64,
    pub records: Vec<Record>,
}

impl TomographyDataset {
    pub fn prep_unitaries(&self) -> Result<Vec<CMatrix>> {
        let custom: Option<Vec<CMatrix>> = self
            .custom_preps
            .as_ref()
            .map(|v| v.iter().map(gate_from_entries).collect());
        prep_unitaries(self.prep_set, custom.as_deref())
    }

    pub fn n_outcomes(&self) -> usize {
        1 << self.n_observed
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDataset(m));
        if self.basis_set != "xyz" {
            return bad(format!("unsupported basis set `{}`", self.basis_set));
        }
        if self.times_us.windows(2).any(|w| !(w[1] > w[0])) || self.times_us.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("times must be finite, nonnegative and strictly ascending".into());
        }
        let n_prep = self.prep_unitaries()?.len();
        let n_out = self.n_outcomes();
        for (i, r) in self.records.iter().enumerate() {
            if r.prep.len() != self.n_observed || r.basis.len() != self.n_observed {
                return bad(format!("record {i}: prep/basis length differs from n_observed"));
            }
            if r.prep.iter().any(|&p| p >= n_prep) || r.basis.iter().any(|&b| b >= 3) {
                return bad(format!("record {i}: gate index out of range"));
            }
            if r.t_index >= self.times_us.len() {
                return bad(format!("record {i}: time index out of range"));
            }
            if r.counts.len() != n_out {
                return bad(format!("record {i}: expected {n_out} counts, found {}", r.counts.len()));
            }
            if r.counts.iter().sum::<u64>() != self.n_shots {
                return bad(format!("record {i}: counts do not sum to n_shots"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ds: Self = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Distinct configurations in sorted order.
    pub fn configurations(&self) -> Vec<Configuration> {
        let mut c: Vec<Configuration> = self.records.iter().map(Record::configuration).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Record indices per distinct configuration, configurations sorted.
    pub fn records_by_configuration(&self) -> Vec<(Configuration, Vec<usize>)> {
        let mut map: BTreeMap<Configuration, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.configuration()).or_default().push(i);
        }
        map.into_iter().collect()
    }

    pub fn with_records(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Total number of single-shot outcomes.
    pub fn n_observations(&self) -> u64 {
        self.records.len() as u64 * self.n_shots
    }

    /// Upper bound on the log-likelihood: every record at its empirical frequencies.
    pub fn saturated_ll(&self) -> Result<f64> {
        let mut total = 0.0;
        for r in &self.records {
            let n = r.counts.iter().sum::<u64>();
            let p: Vec<f64> = r.counts.iter().map(|&x| x as f64 / n.max(1) as f64).collect();
            total += multinomial_ll(&r.counts, &p, n)?;
        }
        Ok(total)
    }
}

/// `ln N! − Σ ln x_b! + Σ x_b ln p_b`.
pub fn multinomial_ll(counts: &[u64], probs: &[f64], n_shots: u64) -> Result<f64> {
    if counts.len() != probs.len() {
        return Err(Error::LengthMismatch {
            expected: counts.len(),
            found: probs.len(),
        });
    }
    if counts.iter().sum::<u64>() != n_shots {
        return Err(Error::InvalidDataset("counts do not sum to n_shots".into()));
    }
    let mut ll = log_multinomial_coefficient(counts, n_shots);
    for (b, (&x, &p)) in counts.iter().zip(probs).enumerate() {
        if x == 0 {
            continue;
        }
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::ZeroProbability { outcome: b });
        }
        ll += x as f64 * p.ln();
    }
    Ok(ll)
}

pub fn log_multinomial_coefficient(counts: &[u64], n_shots: u64) -> f64 {
    ln_gamma(n_shots as f64 + 1.0) - counts.iter().map(|&x| ln_gamma(x as f64 + 1.0)).sum::<f64>()
}

/// Clamp to the floor and renormalize.
pub fn floor_probabilities(raw: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = raw.iter().map(|&p| p.max(PROB_FLOOR)).collect();
    let s: f64 = q.iter().sum();
    q.into_iter().map(|x| x / s).collect()
}

/// Predicted probabilities indexed `[configuration][time][outcome]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub configs: Vec<Configuration>,
    pub times_us: Vec<f64>,
    pub probs: Vec<Vec<Vec<f64>>>,
}

/// Preparation and basis unitaries together with the register layout.
#[derive(Debug, Clone)]
pub struct MeasurementContext {
    n_total: usize,
    observed: Vec<usize>,
    preps: Vec<CMatrix>,
    bases: Vec<CMatrix>,
    /// Observed outcome index of each full-register basis state.
    outcome_of: Vec<usize>,
}

impl MeasurementContext {
    pub fn new(spec: &ModelSpec, preps: Vec<CMatrix>) -> Self {
        let n = spec.n_total;
        let n_obs = spec.observed.len();
        let outcome_of = (0..1usize << n)
            .map(|i| {
                spec.observed.iter().enumerate().fold(0, |acc, (o, &q)| {
                    let bit = (i >> (n - 1 - q)) & 1;
                    acc | (bit << (n_obs - 1 - o))
                })
            })
            .collect();
        Self {
            n_total: n,
            observed: spec.observed.clone(),
            preps,
            bases: basis_unitaries(),
            outcome_of,
        }
    }

    pub fn for_dataset(spec: &ModelSpec, dataset: &TomographyDataset) -> Result<Self> {
        if dataset.n_observed != spec.observed.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.observed.len(),
                found: dataset.n_observed,
            });
        }
        Ok(Self::new(spec, dataset.prep_unitaries()?))
    }

    fn n_outcomes(&self) -> usize {
        1 << self.observed.len()
    }

    fn full_unitary(&self, gates: &[CMatrix], choice: &[usize]) -> Result<CMatrix> {
        if choice.len() != self.observed.len() {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} entries, found {}",
                self.observed.len(),
                choice.len()
            )));
        }
        let mut factors = vec![CMatrix::identity(2, 2); self.n_total];
        for (o, &q) in self.observed.iter().enumerate() {
            factors[q] = gates
                .get(choice[o])
                .ok_or_else(|| Error::InvalidConfiguration(format!("gate index {} out of range", choice[o])))?
                .clone();
        }
        Ok(kron_all(&factors))
    }

    pub fn prep_unitary(&self, prep: &[usize]) -> Result<CMatrix> {
        self.full_unitary(&self.preps, prep)
    }

    pub fn basis_unitary(&self, basis: &[usize]) -> Result<CMatrix> {
        self.full_unitary(&self.bases, basis)
    }

    /// Raw Born-rule probabilities of the observed bit strings (hidden qubits traced out).
    pub fn raw_probabilities(&self, rho: &CMatrix, basis_u: &CMatrix) -> Vec<f64> {
        let rotated = basis_u * rho * basis_u.adjoint();
        let mut p = vec![0.0; self.n_outcomes()];
        for (i, &b) in self.outcome_of.iter().enumerate() {
            p[b] += rotated[(i, i)].re;
        }
        p
    }
}

fn validate_configs(configs: &[Configuration], ctx: &MeasurementContext) -> Result<()> {
    for c in configs {
        ctx.prep_unitary(&c.prep)?;
        ctx.basis_unitary(&c.basis)?;
    }
    Ok(())
}

/// Probabilities for `configs` at `times_us`, one trajectory per distinct preparation.
pub fn predict_probabilities(
    params: &ParameterSet,
    spec: &ModelSpec,
    ctx: &MeasurementContext,
    configs: &[Configuration],
    times_us: &[f64],
    solver: &SolverConfig,
) -> Result<ProbabilityTable> {
    validate_configs(configs, ctx)?;
    let gen = LindbladGenerator::new(params, spec)?;
    let rho0 = crate::model::build_initial_state(params, spec)?;
    let mut by_prep: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        by_prep.entry(&c.prep).or_default().push(i);
    }
    let groups: Vec<(&[usize], Vec<usize>)> = by_prep.into_iter().collect();
    let results: Vec<Result<Vec<(usize, Vec<Vec<f64>>)>>> = groups
        .par_iter()
        .map(|(prep, members)| {
            let u = ctx.prep_unitary(prep)?;
            let rho_c = &u * &rho0 * u.adjoint();
            let traj = evolve_trajectory(&gen, &rho_c, times_us, solver, None)?;
            let states = traj.states();
            members
                .iter()
                .map(|&ci| {
                    let bu = ctx.basis_unitary(&configs[ci].basis)?;
                    Ok((
                        ci,
                        states
                            .iter()
                            .map(|r| floor_probabilities(&ctx.raw_probabilities(r, &bu)))
                            .collect(),
                    ))
                })
                .collect()
        })
        .collect();
    let mut probs = vec![vec![]; configs.len()];
    for r in results {
        for (ci, p) in r? {
            probs[ci] = p;
        }
    }
    Ok(ProbabilityTable {
        configs: configs.to_vec(),
        times_us: times_us.to_vec(),
        probs,
    })
}

/// Probabilities for `configs` at the dataset's times using its gate sets.
pub fn predict_for_plan(
    params: &ParameterSet,
    spec: &ModelSpec,
    dataset: &TomographyDataset,
    configs: &[Configuration],
    solver: &SolverConfig,
) -> Result<ProbabilityTable> {
    let ctx = MeasurementContext::for_dataset(spec, dataset)?;
    predict_probabilities(params, spec, &ctx, configs, &dataset.times_us, solver)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodOptions {
    pub solver: SolverConfig,
    pub parallel: bool,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub ll: f64,
    /// Per evaluated record, in dataset order.
    pub record_ll: Vec<(usize, f64)>,
    pub gradient: Option<Vec<f64>>,
    /// Step sequences per preparation group (full-data evaluations only).
    pub plans: Option<Vec<Vec<StepRecord>>>,
}

struct PrepGroup {
    prep: Vec<usize>,
    records: Vec<usize>,
}

struct GroupOut {
    record_ll: Vec<(usize, f64)>,
    gradient: Option<Vec<f64>>,
    plan: Vec<StepRecord>,
}

/// Likelihood evaluator bound to one spec and dataset.
pub struct Likelihood<'a> {
    spec: &'a ModelSpec,
    dataset: &'a TomographyDataset,
    ctx: MeasurementContext,
    groups: Vec<PrepGroup>,
    log_coeff: Vec<f64>,
    n_params: usize,
}

impl<'a> Likelihood<'a> {
    pub fn new(spec: &'a ModelSpec, dataset: &'a TomographyDataset) -> Result<Self> {
        spec.validate()?;
        dataset.validate()?;
        let ctx = MeasurementContext::for_dataset(spec, dataset)?;
        let mut by_prep: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (i, r) in dataset.records.iter().enumerate() {
            by_prep.entry(r.prep.clone()).or_default().push(i);
        }
        let groups = by_prep
            .into_iter()
            .map(|(prep, records)| PrepGroup { prep, records })
            .collect();
        let log_coeff = dataset
            .records
            .iter()
            .map(|r| log_multinomial_coefficient(&r.counts, dataset.n_shots))
            .collect();
        Ok(Self {
            spec,
            dataset,
            ctx,
            groups,
            log_coeff,
            n_params: spec.layout().len(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn dataset(&self) -> &TomographyDataset {
        self.dataset
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Evaluate on all records, or on `subset` (record indices). With
    /// `plans` the step sequences of a previous full-data evaluation are
    /// replayed instead of being chosen adaptively.
    pub fn evaluate(
        &self,
        params: &ParameterSet,
        want_gradient: bool,
        subset: Option<&[usize]>,
        plans: Option<&[Vec<StepRecord>]>,
        opts: &LikelihoodOptions,
    ) -> Result<Evaluation> {
        params.check_shape(self.spec)?;
        if subset.is_some() && plans.is_some() {
            return Err(Error::InvalidArgument("step plans apply to full-data evaluations only".into()));
        }
        if let Some(p) = plans {
            if p.len() != self.groups.len() {
                return Err(Error::LengthMismatch {
                    expected: self.groups.len(),
                    found: p.len(),
                });
            }
        }
        let selected: Vec<(usize, Vec<usize>)> = match subset {
            None => self.groups.iter().enumerate().map(|(g, grp)| (g, grp.records.clone())).collect(),
            Some(idx) => {
                let mut mask = vec![false; self.dataset.records.len()];
                for &i in idx {
                    if i >= mask.len() {
                        return Err(Error::InvalidArgument(format!("record index {i} out of range")));
                    }
                    mask[i] = true;
                }
                self.groups
                    .iter()
                    .enumerate()
                    .map(|(g, grp)| (g, grp.records.iter().copied().filter(|&r| mask[r]).collect::<Vec<_>>()))
                    .filter(|(_, r)| !r.is_empty())
                    .collect()
            }
        };
        let gen = LindbladGenerator::new(params, self.spec)?;
        let states = qubit_states(params, self.spec)?;
        let rho0 = kron_all(&states);
        let work = |(g, records): &(usize, Vec<usize>)| {
            self.eval_group(
                params,
                &gen,
                &states,
                &rho0,
                &self.groups[*g],
                records,
                want_gradient,
                &opts.solver,
                plans.map(|p| p[*g].as_slice()),
            )
        };
        let outs: Vec<Result<GroupOut>> = if opts.parallel {
            selected.par_iter().map(work).collect()
        } else {
            selected.iter().map(work).collect()
        };
        let mut record_ll = Vec::new();
        let mut gradient = want_gradient.then(|| vec![0.0; self.n_params]);
        let mut out_plans = Vec::with_capacity(outs.len());
        for o in outs {
            let o = o?;
            record_ll.extend(o.record_ll);
            if let (Some(total), Some(g)) = (gradient.as_mut(), o.gradient) {
                for (a, b) in total.iter_mut().zip(g) {
                    *a += b;
                }
            }
            out_plans.push(o.plan);
        }
        record_ll.sort_by_key(|&(i, _)| i);
        let ll = record_ll.iter().map(|&(_, v)| v).sum::<f64>();
        if let Some(g) = &gradient {
            if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective {
                    step: 0,
                    params: params.flatten(),
                });
            }
        }
        Ok(Evaluation {
            ll,
            record_ll,
            gradient,
            plans: subset.is_none().then_some(out_plans),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_group(
        &self,
        params: &ParameterSet,
        gen: &LindbladGenerator,
        qubit_states: &[CMatrix],
        rho0: &CMatrix,
        group: &PrepGroup,
        records: &[usize],
        want_gradient: bool,
        solver: &SolverConfig,
        plan: Option<&[StepRecord]>,
    ) -> Result<GroupOut> {
        let ds = self.dataset;
        let mut t_idx: Vec<usize> = records.iter().map(|&r| ds.records[r].t_index).collect();
        t_idx.sort_unstable();
        t_idx.dedup();
        let times: Vec<f64> = t_idx.iter().map(|&i| ds.times_us[i]).collect();
        let u = self.ctx.prep_unitary(&group.prep)?;
        let rho_c = &u * rho0 * u.adjoint();
        let traj = evolve_trajectory(gen, &rho_c, &times, solver, plan)?;
        let dim = gen.dim();
        let mut seeds = vec![CMatrix::zeros(dim, dim); times.len()];
        let mut record_ll = Vec::with_capacity(records.len());
        let mut basis_cache: BTreeMap<&[usize], CMatrix> = BTreeMap::new();
        for &ri in records {
            let rec = &ds.records[ri];
            if !basis_cache.contains_key(rec.basis.as_slice()) {
                basis_cache.insert(&rec.basis, self.ctx.basis_unitary(&rec.basis)?);
            }
            let bu = &basis_cache[rec.basis.as_slice()];
            let slot = t_idx.binary_search(&rec.t_index).expect("time collected above");
            let raw = self.ctx.raw_probabilities(&traj.state(slot), bu);
            let q: Vec<f64> = raw.iter().map(|&p| p.max(PROB_FLOOR)).collect();
            let s: f64 = q.iter().sum();
            let mut ll = self.log_coeff[ri];
            for (b, &x) in rec.counts.iter().enumerate() {
                if x > 0 {
                    ll += x as f64 * (q[b] / s).ln();
                }
            }
            record_ll.push((ri, ll));
            if want_gradient {
                let n = ds.n_shots as f64;
                let w: Vec<f64> = (0..q.len())
                    .map(|b| if raw[b] > PROB_FLOOR { rec.counts[b] as f64 / q[b] - n / s } else { 0.0 })
                    .collect();
                let wdiag = CMatrix::from_diagonal(&crate::CVector::from_iterator(
                    dim,
                    self.ctx.outcome_of.iter().map(|&b| C64::new(w[b], 0.0)),
                ));
                seeds[slot] += bu.adjoint() * wdiag * bu;
            }
        }
        let gradient = if want_gradient {
            let adj = adjoint(gen, &traj, &seeds)?;
            let mut g = vec![0.0; self.n_params];
            let rho0_bar = u.adjoint() * &adj.rho0_bar * &u;
            self.state_gradient(params, qubit_states, &rho0_bar, &mut g);
            let (gh, gd) = gen.parameter_gradient(&adj);
            let layout = self.spec.layout();
            let mut k = layout.ham_offset();
            for term in gh {
                for v in term {
                    g[k] = v;
                    k += 1;
                }
            }
            for block in gd {
                for r in 0..block.nrows() {
                    for c in 0..block.ncols() {
                        g[k] = block[(r, c)];
                        k += 1;
                    }
                }
            }
            Some(g)
        } else {
            None
        };
        Ok(GroupOut {
            record_ll,
            gradient,
            plan: traj.plan(),
        })
    }

    /// Chain rule from the initial-state cotangent to the state parameters.
    fn state_gradient(&self, params: &ParameterSet, states: &[CMatrix], rho0_bar: &CMatrix, g: &mut [f64]) {
        let n = self.spec.n_total;
        let dim = 1usize << n;
        let mut slot = 0;
        for q in 0..n {
            if !self.spec.state_param[q] {
                continue;
            }
            // G[a, b] = Σ ρ̄[I, J] Π_{r≠q} conj(ρ_r[i_r, j_r])
            let mut gq = CMatrix::zeros(2, 2);
            for i in 0..dim {
                for j in 0..dim {
                    let v = rho0_bar[(i, j)];
                    if v == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut w = C64::new(1.0, 0.0);
                    for (r, st) in states.iter().enumerate() {
                        if r == q {
                            continue;
                        }
                        let (ir, jr) = ((i >> (n - 1 - r)) & 1, (j >> (n - 1 - r)) & 1);
                        w *= st[(ir, jr)].conj();
                    }
                    let (a, b) = ((i >> (n - 1 - q)) & 1, (j >> (n - 1 - q)) & 1);
                    gq[(a, b)] += v * w;
                }
            }
            let th = &params.theta_rho[slot];
            let b = lower_factor(&DMatrix::from_row_slice(2, 2, &[th[0][0], th[0][1], th[1][0], th[1][1]]));
            let s = (b.adjoint() * &b).trace().re;
            let rho = &states[q];
            let g_dot_rho = (gq.adjoint() * rho).trace().re;
            let bbar = (&gq + gq.adjoint()) * &b / C64::new(s, 0.0) - &b * C64::new(2.0 * g_dot_rho / s, 0.0);
            let base = 4 * slot;
            g[base] = bbar[(0, 0)].re;
            g[base + 1] = bbar[(1, 0)].im;
            g[base + 2] = bbar[(1, 0)].re;
            g[base + 3] = bbar[(1, 1)].re;
            slot += 1;
        }
    }
}

/// Central finite-difference step for a parameter value.
pub fn fd_step(theta: f64) -> f64 {
    1e-5 * theta.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub n_params: usize,
    /// Components with |analytic| above the threshold that were compared.
    pub n_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Smallest gradient magnitude that enters the relative-error comparison.
pub const GRADCHECK_MIN_ABS: f64 = 1e-8;

/// Random evaluation point for gradient checks: generator parameters drawn
/// uniformly from (-0.5, 0.5) and mixed initial states, so no predicted
/// probability sits near zero where differences amplify rounding.
pub fn gradcheck_point(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    let layout = spec.layout();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
    for q in 0..layout.state_qubits.len() {
        let t = &mut values[4 * q..4 * q + 4];
        t[0] = rng.random_range(0.6..1.0);
        t[1] *= 0.5;
        t[2] *= 0.5;
        t[3] = rng.random_range(0.4..0.8);
    }
    ParameterSet::from_flat_layout(&layout, &values)
}

/// Compare the analytic gradient with central finite differences.
///
/// The finite differences replay the step sequence of the base-point
/// solution, so both sides differentiate the same discretized likelihood,
/// and sum per-record differences to limit cancellation error.
pub fn gradient_check(lik: &Likelihood<'_>, params: &ParameterSet, opts: &LikelihoodOptions) -> Result<GradientCheck> {
    let base = lik.evaluate(params, true, None, None, opts)?;
    let analytic = base.gradient.expect("gradient requested");
    let plans = base.plans.expect("full-data evaluation");
    let flat = params.flatten();
    let serial = LikelihoodOptions {
        parallel: false,
        ..*opts
    };
    let eval = |x: &[f64]| -> Result<Vec<(usize, f64)>> {
        let p = ParameterSet::from_flat(lik.spec(), x)?;
        Ok(lik.evaluate(&p, false, None, Some(&plans), &serial)?.record_ll)
    };
    let numeric: Vec<Result<f64>> = (0..flat.len())
        .into_par_iter()
        .map(|i| {
            let h = fd_step(flat[i]);
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let a = eval(&up)?;
            let b = eval(&dn)?;
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| x.1 - y.1).sum();
            Ok(diff / (2.0 * h))
        })
        .collect();
    let numeric = numeric.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut max_rel_error: f64 = 0.0;
    let mut worst_index = None;
    let mut n_checked = 0;
    for (i, (&g, &f)) in analytic.iter().zip(&numeric).enumerate() {
        if g.abs() <= GRADCHECK_MIN_ABS {
            continue;
        }
        n_checked += 1;
        let rel = (g - f).abs() / g.abs().max(f.abs());
        if rel > max_rel_error || worst_index.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst_index = Some(i);
        }
    }
    Ok(GradientCheck {
        n_params: flat.len(),
        n_checked,
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// Full-data log-likelihood with default options.
pub fn total_ll(params: &ParameterSet, spec: &ModelSpec, dataset: &TomographyDataset) -> Result<f64> {
    Ok(Likelihood::new(spec, dataset)?
        .evaluate(params, false, None, None, &LikelihoodOptions::default())?
        .ll)
}

/// Gradient of [`total_ll`] with respect to the packed parameters.
pub fn ll_gradient(params: &ParameterSet, spec: &ModelSpec, dataset: &TomographyDataset) -> Result<Vec<f64>> {
    Ok(Likelihood::new(spec, dataset)?
        .evaluate(params, true, None, None, &LikelihoodOptions::default())?
        .gradient
        .expect("gradient requested"))
}
