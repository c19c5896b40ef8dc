//! Lindblad generator, adaptive Tsit5 integration with a discrete adjoint
//! sweep, and a superoperator-exponential oracle.
//!
//! States are integrated in column-stacked vectorized form, where
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`; this is also nalgebra's storage order.

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_error, min_eigenvalue, trace};
use crate::model::{build_dissipator, AnchorGrid, DissipatorBlock, ModelSpec, ParameterSet};
use crate::pauli::SparsePauli;
use crate::{CMatrix, CVector, C64};

/// Registers above this size are not propagated (the dense superoperator
/// would need 4^n x 4^n storage).
pub const MAX_PROPAGATION_QUBITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// First trial step; `None` selects it from the local derivative scale.
    pub initial_step: Option<f64>,
    /// Validate trace, Hermiticity and positivity of every saved state.
    pub check_states: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-6,
            max_steps: 100_000,
            initial_step: None,
            check_states: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument("initial step must be positive".into()));
            }
        }
        Ok(())
    }
}

const TRACE_TOL: f64 = 1e-8;
const HERMITICITY_TOL: f64 = 1e-9;
const POSITIVITY_TOL: f64 = 1e-7;

/// Check a density matrix against the trace, Hermiticity and positivity tolerances.
pub fn check_physical(rho: &CMatrix, t: f64) -> Result<()> {
    let tr = trace(rho);
    if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
        return Err(Error::NonPhysicalState {
            t,
            detail: format!("trace {tr}"),
        });
    }
    let herm = hermiticity_error(rho);
    if herm > HERMITICITY_TOL {
        return Err(Error::NonPhysicalState {
            t,
            detail: format!("hermiticity error {herm:e}"),
        });
    }
    let lam = min_eigenvalue(rho);
    if lam < -POSITIVITY_TOL {
        return Err(Error::NonPhysicalState {
            t,
            detail: format!("minimum eigenvalue {lam:e}"),
        });
    }
    Ok(())
}

pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, dim: usize) -> CMatrix {
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// Visit the superoperator entries `(row, col, coeff)` of `ρ ↦ -i[P, ρ]`.
fn visit_commutator(p: &SparsePauli, d: usize, mut f: impl FnMut(usize, usize, C64)) {
    let mi = C64::new(0.0, -1.0);
    let pi = C64::new(0.0, 1.0);
    for j in 0..d {
        let jx = p.row(j);
        let phase_right = p.phase(jx);
        for k in 0..d {
            let input = k + d * j;
            f(p.row(k) + d * j, input, mi * p.phase(k));
            f(k + d * jx, input, pi * phase_right);
        }
    }
}

/// Visit the superoperator entries of `ρ ↦ P_m ρ P_n − ½{P_n P_m, ρ}`.
fn visit_dissipator_term(pm: &SparsePauli, pn: &SparsePauli, d: usize, mut f: impl FnMut(usize, usize, C64)) {
    let q = pn.compose(pm);
    let half = C64::new(-0.5, 0.0);
    for j in 0..d {
        let jn = pn.row(j);
        let phase_n = pn.phase(jn);
        let jq = j ^ q.x_mask;
        let phase_q_right = q.phases[jq];
        for k in 0..d {
            let input = k + d * j;
            f(pm.row(k) + d * jn, input, pm.phase(k) * phase_n);
            f((k ^ q.x_mask) + d * j, input, half * q.phases[k]);
            f(k + d * jq, input, half * phase_q_right);
        }
    }
}

#[derive(Debug, Clone)]
struct HamOp {
    pauli: SparsePauli,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockOps {
    block: DissipatorBlock,
    paulis: Vec<SparsePauli>,
}

/// Compiled generator `ℒ(t)` for one parameter set.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    dim: usize,
    ham: Vec<HamOp>,
    grid: Option<AnchorGrid>,
    blocks: Vec<BlockOps>,
    jumps: Vec<CMatrix>,
    jump_sq_sum: CMatrix,
    /// Dissipator plus, when static, the Hamiltonian part.
    super_static: CMatrix,
    /// Hamiltonian part at each anchor; empty for static generators.
    super_anchor: Vec<CMatrix>,
}

impl LindbladGenerator {
    pub fn new(params: &ParameterSet, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        params.check_shape(spec)?;
        if spec.n_total > MAX_PROPAGATION_QUBITS {
            return Err(Error::InvalidSpec(format!(
                "propagation supports at most {MAX_PROPAGATION_QUBITS} qubits"
            )));
        }
        let dim = spec.dim();
        let ham: Vec<HamOp> = spec
            .ham_terms()
            .iter()
            .zip(&params.theta_h)
            .map(|(t, v)| HamOp {
                pauli: t.string.sparse(),
                values: v.clone(),
            })
            .collect();
        let grid = spec.is_time_dependent().then(|| AnchorGrid {
            times: spec.anchor_times(),
        });
        let blocks: Vec<BlockOps> = build_dissipator(params, spec)?
            .into_iter()
            .map(|block| BlockOps {
                paulis: block.strings.iter().map(|s| s.sparse()).collect(),
                block,
            })
            .collect();
        let jumps: Vec<CMatrix> = blocks.iter().flat_map(|b| b.block.jump_operators()).collect();
        let mut jump_sq_sum = CMatrix::zeros(dim, dim);
        for l in &jumps {
            jump_sq_sum += l.adjoint() * l;
        }

        let d2 = dim * dim;
        let mut super_static = CMatrix::zeros(d2, d2);
        for b in &blocks {
            for (m, pm) in b.paulis.iter().enumerate() {
                for (n, pn) in b.paulis.iter().enumerate() {
                    let dmn = b.block.d[(m, n)];
                    if dmn == C64::new(0.0, 0.0) {
                        continue;
                    }
                    visit_dissipator_term(pm, pn, dim, |r, c, v| super_static[(r, c)] += dmn * v);
                }
            }
        }
        let mut super_anchor = Vec::new();
        match &grid {
            None => {
                for h in &ham {
                    let a = h.values[0];
                    if a != 0.0 {
                        visit_commutator(&h.pauli, dim, |r, c, v| super_static[(r, c)] += v * a);
                    }
                }
            }
            Some(g) => {
                for j in 0..g.times.len() {
                    let mut s = CMatrix::zeros(d2, d2);
                    for h in &ham {
                        let a = h.values[j];
                        if a != 0.0 {
                            visit_commutator(&h.pauli, dim, |r, c, v| s[(r, c)] += v * a);
                        }
                    }
                    super_anchor.push(s);
                }
            }
        }
        Ok(Self {
            dim,
            ham,
            grid,
            blocks,
            jumps,
            jump_sq_sum,
            super_static,
            super_anchor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_time_dependent(&self) -> bool {
        self.grid.is_some()
    }

    pub fn anchor_times(&self) -> &[f64] {
        self.grid.as_ref().map_or(&[], |g| g.times.as_slice())
    }

    pub fn jump_operators(&self) -> &[CMatrix] {
        &self.jumps
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for op in &self.ham {
            let a = match &self.grid {
                None => op.values[0],
                Some(g) => g.interpolate(&op.values, t),
            };
            if a == 0.0 {
                continue;
            }
            for col in 0..self.dim {
                h[(op.pauli.row(col), col)] += op.pauli.phase(col) * a;
            }
        }
        h
    }

    /// `dρ/dt` evaluated directly on operators.
    pub fn apply(&self, rho: &CMatrix, t: f64) -> Result<CMatrix> {
        if rho.nrows() != self.dim || rho.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: rho.nrows(),
            });
        }
        let h = self.hamiltonian(t);
        let mi = C64::new(0.0, -1.0);
        let mut out = (&h * rho - rho * &h) * mi;
        for l in &self.jumps {
            out += l * rho * l.adjoint();
        }
        out -= (&self.jump_sq_sum * rho + rho * &self.jump_sq_sum) * C64::new(0.5, 0.0);
        Ok(out)
    }

    /// Assembled superoperator at time `t`.
    pub fn superoperator(&self, t: f64) -> CMatrix {
        let mut s = self.super_static.clone();
        if let Some(g) = &self.grid {
            for (j, w) in g.weights(t) {
                if w != 0.0 {
                    s += &self.super_anchor[j] * C64::new(w, 0.0);
                }
            }
        }
        s
    }

    fn apply_vec(&self, t: f64, y: &CVector, out: &mut CVector) {
        let one = C64::new(1.0, 0.0);
        out.gemv(one, &self.super_static, y, C64::new(0.0, 0.0));
        if let Some(g) = &self.grid {
            for (j, w) in g.weights(t) {
                if w != 0.0 {
                    out.gemv(C64::new(w, 0.0), &self.super_anchor[j], y, one);
                }
            }
        }
    }

    fn apply_vec_adjoint(&self, t: f64, y: &CVector, out: &mut CVector) {
        let one = C64::new(1.0, 0.0);
        out.gemv_ad(one, &self.super_static, y, C64::new(0.0, 0.0));
        if let Some(g) = &self.grid {
            for (j, w) in g.weights(t) {
                if w != 0.0 {
                    out.gemv_ad(C64::new(w, 0.0), &self.super_anchor[j], y, one);
                }
            }
        }
    }

    /// Reference vectorized generator built from dense operators with
    /// Kronecker products, independent of the sparse assembly.
    pub fn superoperator_oracle(&self) -> Result<CMatrix> {
        if self.is_time_dependent() {
            return Err(Error::TimeDependent);
        }
        let d = self.dim;
        let id = CMatrix::identity(d, d);
        let h = self.hamiltonian(0.0);
        let mi = C64::new(0.0, -1.0);
        let half = C64::new(0.5, 0.0);
        let mut s = (id.kronecker(&h) - h.transpose().kronecker(&id)) * mi;
        for l in &self.jumps {
            let ll = l.adjoint() * l;
            s += l.map(|z| z.conj()).kronecker(l);
            s -= id.kronecker(&ll) * half;
            s -= ll.transpose().kronecker(&id) * half;
        }
        Ok(s)
    }

    /// Gradient contributions with respect to Hamiltonian coefficients (per
    /// term, per anchor) and dissipator parameters (per block, row-major).
    pub fn parameter_gradient(&self, adj: &AdjointResult) -> (Vec<Vec<f64>>, Vec<nalgebra::DMatrix<f64>>) {
        let ham_grad = self
            .ham
            .iter()
            .map(|op| {
                adj.ham_r
                    .iter()
                    .map(|r| {
                        // Im tr(P R)
                        let mut tr = C64::new(0.0, 0.0);
                        for col in 0..self.dim {
                            tr += op.pauli.phase(col) * r[(col, op.pauli.row(col))];
                        }
                        tr.im
                    })
                    .collect()
            })
            .collect();
        let diss_grad = self
            .blocks
            .iter()
            .map(|b| {
                let side = b.paulis.len();
                let Some(sbar) = &adj.s_bar else {
                    return nalgebra::DMatrix::zeros(side, side);
                };
                let mut g = CMatrix::zeros(side, side);
                for (m, pm) in b.paulis.iter().enumerate() {
                    for (n, pn) in b.paulis.iter().enumerate() {
                        let mut acc = C64::new(0.0, 0.0);
                        visit_dissipator_term(pm, pn, self.dim, |r, c, v| acc += sbar[(r, c)].conj() * v);
                        g[(m, n)] = acc;
                    }
                }
                let mfac = &b.block.m;
                let mconj = mfac.map(|z| z.conj());
                // C = conj(M) gᵀ + conj(M g)
                let c = &mconj * g.transpose() + (mfac * &g).map(|z| z.conj());
                nalgebra::DMatrix::from_fn(side, side, |r, col| {
                    if r >= col {
                        c[(r, col)].re
                    } else {
                        -c[(col, r)].im
                    }
                })
            })
            .collect();
        (ham_grad, diss_grad)
    }
}

/// `dρ/dt` at time `t`.
pub fn apply_generator(gen: &LindbladGenerator, rho: &CMatrix, t: f64) -> Result<CMatrix> {
    gen.apply(rho, t)
}

pub fn superoperator_oracle(gen: &LindbladGenerator) -> Result<CMatrix> {
    gen.superoperator_oracle()
}

// Tsitouras 5(4) coefficients.
const C: [f64; 6] = [0.0, 0.161, 0.327, 0.9, 0.980_025_540_904_509_7, 1.0];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.161, 0.0, 0.0, 0.0, 0.0],
    [-0.008_480_655_492_356_989, 0.335_480_655_492_357, 0.0, 0.0, 0.0],
    [2.897_153_057_105_493, -6.359_448_489_975_075, 4.362_295_432_869_581_5, 0.0, 0.0],
    [
        5.325_864_828_439_257,
        -11.748_883_564_062_828,
        7.495_539_342_889_836_5,
        -0.092_495_066_361_755_25,
        0.0,
    ],
    [
        5.861_455_442_946_42,
        -12.920_969_317_847_11,
        8.159_367_898_576_159,
        -0.071_584_973_281_401,
        -0.028_269_050_394_068_383,
    ],
];
const B: [f64; 6] = [
    0.096_460_766_818_065_23,
    0.01,
    0.479_889_650_414_499_6,
    1.379_008_574_103_742,
    -3.290_069_515_436_081,
    2.324_710_524_099_774,
];
const BTILDE: [f64; 7] = [
    0.001_780_011_052_226,
    0.000_816_434_459_657,
    -0.007_880_878_010_262,
    0.144_711_007_173_263,
    -0.582_357_165_452_555,
    0.458_082_105_929_187,
    -1.0 / 66.0,
];

const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub t_next: f64,
}

/// Forward solution with enough information for an adjoint sweep.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub save_times: Vec<f64>,
    /// Vectorized saved states, aligned with `save_times`.
    pub states: Vec<CVector>,
    pub steps: Vec<StepRecord>,
    starts: Vec<CVector>,
    /// Number of completed steps when each save was taken.
    save_steps: Vec<usize>,
    pub rejected: usize,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> CMatrix {
        unvectorize(&self.states[i], self.dim)
    }

    pub fn states(&self) -> Vec<CMatrix> {
        (0..self.states.len()).map(|i| self.state(i)).collect()
    }

    /// Step sequence that reproduces this trajectory's discretization.
    pub fn plan(&self) -> Vec<StepRecord> {
        self.steps.clone()
    }
}

fn err_norm(err: &CVector, y0: &CVector, y1: &CVector, cfg: &SolverConfig) -> f64 {
    let mut s = 0.0;
    for i in 0..err.len() {
        let sc = cfg.atol + cfg.rtol * y0[i].norm().max(y1[i].norm());
        s += (err[i].norm() / sc).powi(2);
    }
    (s / err.len().max(1) as f64).sqrt()
}

fn initial_step(gen: &LindbladGenerator, y0: &CVector, f0: &CVector, t0: f64, cfg: &SolverConfig) -> f64 {
    let norm = |v: &CVector| {
        let mut s = 0.0;
        for i in 0..v.len() {
            let sc = cfg.atol + cfg.rtol * y0[i].norm();
            s += (v[i].norm() / sc).powi(2);
        }
        (s / v.len().max(1) as f64).sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = y0 + f0 * C64::new(h0, 0.0);
    let mut f1 = CVector::zeros(y0.len());
    gen.apply_vec(t0 + h0, &y1, &mut f1);
    let d2 = norm(&(&f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

struct Stages {
    k: [CVector; 7],
    tmp: CVector,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| CVector::zeros(n)),
            tmp: CVector::zeros(n),
        }
    }

    /// Fill k[1..6] given k[0] = f(t, y); returns y_{n+1}.
    fn run(&mut self, gen: &LindbladGenerator, t: f64, h: f64, y: &CVector) -> CVector {
        for i in 1..6 {
            self.tmp.copy_from(y);
            for j in 0..i {
                if A[i][j] != 0.0 {
                    self.tmp.axpy(C64::new(h * A[i][j], 0.0), &self.k[j], C64::new(1.0, 0.0));
                }
            }
            let (_, tail) = self.k.split_at_mut(i);
            gen.apply_vec(t + C[i] * h, &self.tmp, &mut tail[0]);
        }
        let mut y1 = y.clone();
        for i in 0..6 {
            y1.axpy(C64::new(h * B[i], 0.0), &self.k[i], C64::new(1.0, 0.0));
        }
        y1
    }
}

fn validate_times(save_times: &[f64]) -> Result<()> {
    if let Some(&first) = save_times.first() {
        if !(first >= 0.0) {
            return Err(Error::InvalidArgument("save times must be nonnegative".into()));
        }
    }
    if save_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("save times must be strictly ascending".into()));
    }
    if save_times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("save times must be finite".into()));
    }
    Ok(())
}

/// Integrate from `t = 0`, saving at `save_times`. When `plan` is given the
/// step sequence is replayed exactly instead of being chosen adaptively.
pub fn evolve_trajectory(
    gen: &LindbladGenerator,
    rho0: &CMatrix,
    save_times: &[f64],
    cfg: &SolverConfig,
    plan: Option<&[StepRecord]>,
) -> Result<Trajectory> {
    cfg.validate()?;
    validate_times(save_times)?;
    let dim = gen.dim;
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho0.nrows(),
        });
    }
    let mut traj = Trajectory {
        dim,
        save_times: save_times.to_vec(),
        states: Vec::with_capacity(save_times.len()),
        steps: Vec::new(),
        starts: Vec::new(),
        save_steps: Vec::with_capacity(save_times.len()),
        rejected: 0,
    };
    let mut y = vectorize(rho0);
    let mut t = 0.0;
    let mut next_save = 0;
    while next_save < save_times.len() && save_times[next_save] <= t {
        traj.states.push(y.clone());
        traj.save_steps.push(0);
        next_save += 1;
    }
    let Some(&t_end) = save_times.last() else {
        return Ok(traj);
    };
    if next_save == save_times.len() {
        finish(&traj, cfg)?;
        return Ok(traj);
    }

    let n = dim * dim;
    let mut st = Stages::new(n);
    gen.apply_vec(t, &y, &mut st.k[0]);

    if let Some(plan) = plan {
        for rec in plan {
            if rec.t != t {
                return Err(Error::InvalidArgument("step plan does not start at the current time".into()));
            }
            let h = rec.h;
            traj.starts.push(y.clone());
            traj.steps.push(*rec);
            let y1 = st.run(gen, t, h, &y);
            y = y1;
            t = rec.t_next;
            if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFiniteState { t });
            }
            gen.apply_vec(t, &y, &mut st.k[0]);
            while next_save < save_times.len() && save_times[next_save] == t {
                traj.states.push(y.clone());
                traj.save_steps.push(traj.steps.len());
                next_save += 1;
            }
        }
        if next_save != save_times.len() {
            return Err(Error::InvalidArgument("step plan does not reach every save time".into()));
        }
        finish(&traj, cfg)?;
        return Ok(traj);
    }

    let mut breakpoints: Vec<f64> = save_times[next_save..].to_vec();
    breakpoints.extend(gen.anchor_times().iter().copied().filter(|&a| a > t && a < t_end));
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => initial_step(gen, &y, &st.k[0], t, cfg),
    };
    h = h.min(t_end - t);
    let mut facold: f64 = 1e-4;
    let mut attempts = 0usize;
    let mut err_vec = CVector::zeros(n);
    for &bp in &breakpoints {
        while t < bp {
            attempts += 1;
            if attempts > cfg.max_steps {
                return Err(Error::StepLimit {
                    t,
                    steps: cfg.max_steps,
                });
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepLimit { t, steps: attempts });
            }
            let landing = t + 1.01 * h >= bp;
            let h_try = if landing { bp - t } else { h };
            let y1 = st.run(gen, t, h_try, &y);
            let t1 = if landing { bp } else { t + h_try };
            gen.apply_vec(t1, &y1, &mut st.k[6]);
            err_vec.fill(C64::new(0.0, 0.0));
            for i in 0..7 {
                err_vec.axpy(C64::new(h_try * BTILDE[i], 0.0), &st.k[i], C64::new(1.0, 0.0));
            }
            let err = err_norm(&err_vec, &y, &y1, cfg);
            if !err.is_finite() || y1.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                if h_try < 1e-10 {
                    return Err(Error::NonFiniteState { t: t1 });
                }
                h = h_try * FAC_MIN;
                traj.rejected += 1;
                continue;
            }
            let fac11 = err.powf(EXPO1);
            if err <= 1.0 {
                let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                facold = err.max(1e-4);
                traj.starts.push(y.clone());
                traj.steps.push(StepRecord { t, h: h_try, t_next: t1 });
                y = y1;
                t = t1;
                st.k.swap(0, 6);
                // After a shortened landing step keep the untruncated proposal.
                let base = if landing { h.max(h_try) } else { h_try };
                h = base / fac;
            } else {
                h = h_try / (fac11 / SAFE).min(1.0 / FAC_MIN);
                traj.rejected += 1;
            }
        }
        while next_save < save_times.len() && save_times[next_save] == t {
            traj.states.push(y.clone());
            traj.save_steps.push(traj.steps.len());
            next_save += 1;
        }
    }
    finish(&traj, cfg)?;
    Ok(traj)
}

fn finish(traj: &Trajectory, cfg: &SolverConfig) -> Result<()> {
    if cfg.check_states {
        for (i, &t) in traj.save_times.iter().enumerate() {
            check_physical(&traj.state(i), t)?;
        }
    }
    Ok(())
}

/// States at each of `save_times`, integrating from `rho0` at `t = 0`.
pub fn evolve(gen: &LindbladGenerator, rho0: &CMatrix, save_times: &[f64], cfg: &SolverConfig) -> Result<Vec<CMatrix>> {
    Ok(evolve_trajectory(gen, rho0, save_times, cfg, None)?.states())
}

/// Cotangents produced by one reverse sweep.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    /// Cotangent of the initial state.
    pub rho0_bar: CMatrix,
    /// Per anchor (one for static generators): Σ w_j (Y K̄† − K̄† Y) over stages.
    pub ham_r: Vec<CMatrix>,
    /// Cotangent of the assembled superoperator, present when there is dissipation.
    pub s_bar: Option<CMatrix>,
}

/// Reverse sweep through the recorded steps. `seeds[i]` is the cotangent of
/// the state saved at `save_times[i]` under the inner product `Re tr(A† B)`.
pub fn adjoint(gen: &LindbladGenerator, traj: &Trajectory, seeds: &[CMatrix]) -> Result<AdjointResult> {
    if seeds.len() != traj.states.len() {
        return Err(Error::LengthMismatch {
            expected: traj.states.len(),
            found: seeds.len(),
        });
    }
    let dim = traj.dim;
    let n = dim * dim;
    let n_anchor = gen.anchor_times().len().max(1);
    let mut ham_r = vec![CMatrix::zeros(dim, dim); n_anchor];
    let mut s_bar = (!gen.blocks.is_empty()).then(|| CMatrix::zeros(n, n));
    let mut ybar = CVector::zeros(n);
    let mut save_idx = seeds.len();
    let add_seeds = |ybar: &mut CVector, save_idx: &mut usize, step_count: usize| {
        while *save_idx > 0 && traj.save_steps[*save_idx - 1] == step_count {
            *save_idx -= 1;
            *ybar += vectorize(&seeds[*save_idx]);
        }
    };
    let mut st = Stages::new(n);
    let mut ys: [CVector; 6] = std::array::from_fn(|_| CVector::zeros(n));
    let mut ybar_stage: [CVector; 6] = std::array::from_fn(|_| CVector::zeros(n));
    let mut kbar = CVector::zeros(n);
    let one = C64::new(1.0, 0.0);
    for step in (0..traj.steps.len()).rev() {
        add_seeds(&mut ybar, &mut save_idx, step + 1);
        let StepRecord { t, h, .. } = traj.steps[step];
        let y0 = &traj.starts[step];
        // recompute stage inputs
        ys[0].copy_from(y0);
        gen.apply_vec(t, y0, &mut st.k[0]);
        for i in 1..6 {
            ys[i].copy_from(y0);
            for j in 0..i {
                if A[i][j] != 0.0 {
                    ys[i].axpy(C64::new(h * A[i][j], 0.0), &st.k[j], one);
                }
            }
            let (_, tail) = st.k.split_at_mut(i);
            gen.apply_vec(t + C[i] * h, &ys[i], &mut tail[0]);
        }
        for i in (0..6).rev() {
            kbar.copy_from(&ybar);
            kbar.scale_mut(h * B[i]);
            for j in i + 1..6 {
                if A[j][i] != 0.0 {
                    kbar.axpy(C64::new(h * A[j][i], 0.0), &ybar_stage[j], one);
                }
            }
            let ti = t + C[i] * h;
            gen.apply_vec_adjoint(ti, &kbar, &mut ybar_stage[i]);
            if let Some(sb) = s_bar.as_mut() {
                sb.gerc(one, &kbar, &ys[i], one);
            }
            if !gen.ham.is_empty() {
                let y_m = unvectorize(&ys[i], dim);
                let kb_h = unvectorize(&kbar, dim).adjoint();
                let r = &y_m * &kb_h - &kb_h * &y_m;
                match &gen.grid {
                    None => ham_r[0] += r,
                    Some(g) => {
                        for (j, w) in g.weights(ti) {
                            if w != 0.0 {
                                ham_r[j] += &r * C64::new(w, 0.0);
                            }
                        }
                    }
                }
            }
        }
        for yb in &ybar_stage {
            ybar += yb;
        }
        if ybar.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFiniteState { t });
        }
    }
    add_seeds(&mut ybar, &mut save_idx, 0);
    Ok(AdjointResult {
        rho0_bar: unvectorize(&ybar, dim),
        ham_r,
        s_bar,
    })
}
