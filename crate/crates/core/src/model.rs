//! Model specifications and the maps from packed real parameters to
//! initial states, Hamiltonians and dissipation blocks.
//!
//! Parameters are packed in a fixed order: state parameters (qubit-major,
//! each 2x2 row-major), then Hamiltonian coefficients (ascending locality,
//! lexicographic connection, odometer Pauli index with x<y<z, anchor index
//! innermost), then dissipator blocks (lexicographic connection, row-major).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron_all, psd_cholesky};
use crate::pauli::{
    build_connections, enumerate_block_basis, full_weight_strings, ConnectionGraph, ConnectionKind, PauliString,
};
use crate::{CMatrix, C64};

/// Position on one axis of the model lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "nn")]
    Nn,
    #[serde(rename = "a2a")]
    A2a,
    #[serde(rename = "3local")]
    ThreeLocal,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::None, Level::Local, Level::Nn, Level::A2a, Level::ThreeLocal];

    pub fn next(self) -> Option<Level> {
        let i = Level::ALL.iter().position(|&l| l == self)?;
        Level::ALL.get(i + 1).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::None => "none",
            Level::Local => "local",
            Level::Nn => "nn",
            Level::A2a => "a2a",
            Level::ThreeLocal => "3local",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Level::None),
            "local" => Ok(Level::Local),
            "nn" => Ok(Level::Nn),
            "a2a" => Ok(Level::A2a),
            "3local" => Ok(Level::ThreeLocal),
            other => Err(Error::InvalidArgument(format!("unknown level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamStructure {
    pub k_max: usize,
    pub connections: ConnectionGraph,
    /// Full-register Pauli labels removed from the parameterization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissStructure {
    /// Block locality; 0 means no dissipation.
    pub k: usize,
    pub connections: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TimeDependence {
    None,
    Anchors { count: usize, t_start: f64, t_end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_total: usize,
    pub observed: Vec<usize>,
    pub ham: HamStructure,
    pub diss: DissStructure,
    pub time_dependence: TimeDependence,
    pub state_param: Vec<bool>,
}

/// One Hamiltonian coefficient slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HamTerm {
    pub k: usize,
    pub connection: Vec<usize>,
    pub string: PauliString,
}

impl ModelSpec {
    /// Build a spec from lattice levels with every qubit's state parameterized.
    pub fn from_levels(n_total: usize, observed: Vec<usize>, ham: Level, diss: Level) -> Result<Self> {
        let mut graph = ConnectionGraph::new(n_total);
        let k_max = match ham {
            Level::None => 0,
            Level::Local => 1,
            Level::Nn | Level::A2a => 2,
            Level::ThreeLocal => 3,
        };
        if k_max >= 1 {
            graph.insert(1, build_connections(ConnectionKind::Local, n_total, 1)?)?;
        }
        match ham {
            Level::Nn => graph.insert(2, build_connections(ConnectionKind::NearestChain, n_total, 2)?)?,
            Level::A2a => graph.insert(2, build_connections(ConnectionKind::AllPairs, n_total, 2)?)?,
            Level::ThreeLocal => {
                graph.insert(2, build_connections(ConnectionKind::AllPairs, n_total, 2)?)?;
                graph.insert(3, build_connections(ConnectionKind::KLocalComplete, n_total, 3)?)?;
            }
            _ => {}
        }
        let diss = match diss {
            Level::None => DissStructure { k: 0, connections: vec![] },
            Level::Local => DissStructure {
                k: 1,
                connections: build_connections(ConnectionKind::Local, n_total, 1)?,
            },
            Level::Nn => DissStructure {
                k: 2,
                connections: build_connections(ConnectionKind::NearestChain, n_total, 2)?,
            },
            Level::A2a => DissStructure {
                k: 2,
                connections: build_connections(ConnectionKind::AllPairs, n_total, 2)?,
            },
            Level::ThreeLocal => DissStructure {
                k: 3,
                connections: build_connections(ConnectionKind::KLocalComplete, n_total, 3)?,
            },
        };
        let spec = ModelSpec {
            n_total,
            observed,
            ham: HamStructure {
                k_max,
                connections: graph,
                exclude: vec![],
            },
            diss,
            time_dependence: TimeDependence::None,
            state_param: vec![true; n_total],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Lattice levels this spec corresponds to, if it is one of the standard families.
    pub fn levels(&self) -> Option<(Level, Level)> {
        for h in Level::ALL {
            for d in Level::ALL {
                if let Ok(s) = ModelSpec::from_levels(self.n_total, self.observed.clone(), h, d) {
                    if s.ham.k_max == self.ham.k_max
                        && s.ham.connections.sets == self.ham.connections.sets
                        && self.ham.exclude.is_empty()
                        && s.diss == self.diss
                    {
                        return Some((h, d));
                    }
                }
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::InvalidSpec("n_total must be positive".into()));
        }
        if self.observed.is_empty() {
            return Err(Error::InvalidSpec("observed register is empty".into()));
        }
        let mut seen = HashSet::new();
        for &q in &self.observed {
            if q >= self.n_total {
                return Err(Error::IndexOutOfRange {
                    index: q,
                    n_qubits: self.n_total,
                });
            }
            if !seen.insert(q) {
                return Err(Error::InvalidSpec(format!("qubit {q} observed twice")));
            }
        }
        if self.state_param.len() != self.n_total {
            return Err(Error::LengthMismatch {
                expected: self.n_total,
                found: self.state_param.len(),
            });
        }
        if self.ham.connections.n_qubits != self.n_total {
            return Err(Error::InvalidSpec("Hamiltonian graph register size differs from n_total".into()));
        }
        self.ham.connections.validate()?;
        if self.ham.connections.k_max() > self.ham.k_max {
            return Err(Error::InvalidSpec("Hamiltonian connections exceed k_max".into()));
        }
        if self.ham.k_max > self.n_total {
            return Err(Error::InvalidLocality(self.ham.k_max));
        }
        let labels: HashSet<String> = self.ham_terms_unfiltered().map(|t| t.string.label()).collect();
        for ex in &self.ham.exclude {
            if !labels.contains(ex) {
                return Err(Error::InvalidSpec(format!("excluded term `{ex}` is not part of the Hamiltonian")));
            }
        }
        if self.diss.k == 0 {
            if !self.diss.connections.is_empty() {
                return Err(Error::InvalidSpec("dissipator connections given with k = 0".into()));
            }
        } else {
            if self.diss.k > self.n_total {
                return Err(Error::InvalidLocality(self.diss.k));
            }
            let mut g = ConnectionGraph::new(self.n_total);
            g.insert(self.diss.k, self.diss.connections.clone())?;
            if g.get(self.diss.k).len() != self.diss.connections.len() {
                return Err(Error::InvalidSpec("duplicate dissipator connections".into()));
            }
            let mut sorted = self.diss.connections.clone();
            sorted.sort();
            if sorted != self.diss.connections {
                return Err(Error::InvalidSpec("dissipator connections must be sorted".into()));
            }
        }
        if let TimeDependence::Anchors { count, t_start, t_end } = self.time_dependence {
            if count < 2 {
                return Err(Error::InvalidSpec("time-dependent Hamiltonians need at least 2 anchors".into()));
            }
            if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
                return Err(Error::InvalidSpec("anchor range must satisfy t_start < t_end".into()));
            }
        }
        Ok(())
    }

    pub fn hidden(&self) -> Vec<usize> {
        (0..self.n_total).filter(|q| !self.observed.contains(q)).collect()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_total
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.time_dependence, TimeDependence::Anchors { .. })
    }

    pub fn anchor_times(&self) -> Vec<f64> {
        match self.time_dependence {
            TimeDependence::None => vec![],
            TimeDependence::Anchors { count, t_start, t_end } => (0..count)
                .map(|j| t_start + (t_end - t_start) * j as f64 / (count - 1) as f64)
                .collect(),
        }
    }

    pub fn n_anchors(&self) -> usize {
        match self.time_dependence {
            TimeDependence::None => 1,
            TimeDependence::Anchors { count, .. } => count,
        }
    }

    fn ham_terms_unfiltered(&self) -> impl Iterator<Item = HamTerm> + '_ {
        (1..=self.ham.k_max).flat_map(move |k| {
            self.ham.connections.get(k).iter().flat_map(move |c| {
                full_weight_strings(k).into_iter().map(move |local| HamTerm {
                    k,
                    connection: c.clone(),
                    string: local.embed(c, self.n_total).expect("validated connection"),
                })
            })
        })
    }

    /// Hamiltonian coefficient slots in packing order.
    pub fn ham_terms(&self) -> Vec<HamTerm> {
        let excluded: HashSet<&str> = self.ham.exclude.iter().map(String::as_str).collect();
        self.ham_terms_unfiltered()
            .filter(|t| !excluded.contains(t.string.label().as_str()))
            .collect()
    }

    pub fn block_side(&self) -> usize {
        if self.diss.k == 0 {
            0
        } else {
            (1 << (2 * self.diss.k)) - 1
        }
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(self)
    }
}

/// Piecewise-linear interpolation weights over anchor times, constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub times: Vec<f64>,
}

impl AnchorGrid {
    pub fn weights(&self, t: f64) -> [(usize, f64); 2] {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return [(0, 1.0), (0, 0.0)];
        }
        if t >= self.times[n - 1] {
            return [(n - 1, 1.0), (n - 1, 0.0)];
        }
        let step = (self.times[n - 1] - self.times[0]) / (n - 1) as f64;
        let mut j = (((t - self.times[0]) / step).floor() as usize).min(n - 2);
        while j + 1 < n - 1 && t >= self.times[j + 1] {
            j += 1;
        }
        while j > 0 && t < self.times[j] {
            j -= 1;
        }
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        [(j, 1.0 - w), (j + 1, w)]
    }

    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        self.weights(t).iter().map(|&(j, w)| w * values[j]).sum()
    }
}

/// Describes where each packed parameter lives.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub state_qubits: Vec<usize>,
    pub ham_terms: Vec<HamTerm>,
    pub n_anchors: usize,
    pub diss_blocks: Vec<Vec<usize>>,
    pub block_side: usize,
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        Self {
            state_qubits: (0..spec.n_total).filter(|&q| spec.state_param[q]).collect(),
            ham_terms: spec.ham_terms(),
            n_anchors: spec.n_anchors(),
            diss_blocks: spec.diss.connections.clone(),
            block_side: spec.block_side(),
        }
    }

    pub fn n_state(&self) -> usize {
        4 * self.state_qubits.len()
    }

    pub fn n_ham(&self) -> usize {
        self.ham_terms.len() * self.n_anchors
    }

    pub fn n_diss(&self) -> usize {
        self.diss_blocks.len() * self.block_side * self.block_side
    }

    pub fn ham_offset(&self) -> usize {
        self.n_state()
    }

    pub fn diss_offset(&self) -> usize {
        self.n_state() + self.n_ham()
    }

    pub fn len(&self) -> usize {
        self.n_state() + self.n_ham() + self.n_diss()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Locality of the parameter at a flat index (0 for state parameters).
    pub fn locality(&self, idx: usize) -> usize {
        if idx < self.ham_offset() {
            0
        } else if idx < self.diss_offset() {
            self.ham_terms[(idx - self.ham_offset()) / self.n_anchors].k
        } else {
            self.diss_blocks.first().map_or(0, Vec::len)
        }
    }

    pub fn descriptor(&self) -> PackingDescriptor {
        PackingDescriptor {
            state_qubits: self.state_qubits.clone(),
            ham_terms: self.ham_terms.iter().map(|t| t.string.label()).collect(),
            n_anchors: self.n_anchors,
            diss_blocks: self.diss_blocks.clone(),
            block_side: self.block_side,
            len: self.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingDescriptor {
    pub state_qubits: Vec<usize>,
    pub ham_terms: Vec<String>,
    pub n_anchors: usize,
    pub diss_blocks: Vec<Vec<usize>>,
    pub block_side: usize,
    pub len: usize,
}

/// Flat parameters plus the descriptor needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedParameters {
    pub values: Vec<f64>,
    pub packing: PackingDescriptor,
}

/// Structured parameters Θ = {θρ, θH, θL}.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    /// One real 2x2 array per parameterized qubit, in qubit order.
    pub theta_rho: Vec<[[f64; 2]; 2]>,
    /// One entry per Hamiltonian term; anchor values (length 1 when static).
    pub theta_h: Vec<Vec<f64>>,
    /// One square real array per dissipator block.
    pub theta_l: Vec<DMatrix<f64>>,
}

pub const GROUND_STATE_THETA: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 0.0]];

impl ParameterSet {
    /// Ground-state preparation, zero Hamiltonian, zero dissipation.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        Self {
            theta_rho: vec![GROUND_STATE_THETA; layout.state_qubits.len()],
            theta_h: vec![vec![0.0; layout.n_anchors]; layout.ham_terms.len()],
            theta_l: vec![DMatrix::zeros(layout.block_side, layout.block_side); layout.diss_blocks.len()],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.theta_rho {
            out.extend_from_slice(&[t[0][0], t[0][1], t[1][0], t[1][1]]);
        }
        for h in &self.theta_h {
            out.extend_from_slice(h);
        }
        for l in &self.theta_l {
            for r in 0..l.nrows() {
                for c in 0..l.ncols() {
                    out.push(l[(r, c)]);
                }
            }
        }
        out
    }

    pub fn from_flat(spec: &ModelSpec, values: &[f64]) -> Result<Self> {
        Self::from_flat_layout(&spec.layout(), values)
    }

    pub fn from_flat_layout(layout: &ParameterLayout, values: &[f64]) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} packed parameters, found {}",
                layout.len(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let mut next = || it.next().expect("length checked");
        let theta_rho = (0..layout.state_qubits.len())
            .map(|_| {
                let a = next();
                let b = next();
                let c = next();
                let d = next();
                [[a, b], [c, d]]
            })
            .collect();
        let theta_h = (0..layout.ham_terms.len())
            .map(|_| (0..layout.n_anchors).map(|_| next()).collect())
            .collect();
        let s = layout.block_side;
        let theta_l = (0..layout.diss_blocks.len())
            .map(|_| {
                let mut m = DMatrix::zeros(s, s);
                for r in 0..s {
                    for c in 0..s {
                        m[(r, c)] = next();
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            theta_rho,
            theta_h,
            theta_l,
        })
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.layout();
        let ok = self.theta_rho.len() == layout.state_qubits.len()
            && self.theta_h.len() == layout.ham_terms.len()
            && self.theta_h.iter().all(|h| h.len() == layout.n_anchors)
            && self.theta_l.len() == layout.diss_blocks.len()
            && self
                .theta_l
                .iter()
                .all(|l| l.nrows() == layout.block_side && l.ncols() == layout.block_side);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter set does not match the model spec".into()))
        }
    }

    pub fn pack(&self, spec: &ModelSpec) -> Result<PackedParameters> {
        self.check_shape(spec)?;
        Ok(PackedParameters {
            values: self.flatten(),
            packing: spec.layout().descriptor(),
        })
    }

    pub fn unpack(spec: &ModelSpec, packed: &PackedParameters) -> Result<Self> {
        let layout = spec.layout();
        if packed.packing != layout.descriptor() {
            return Err(Error::ShapeMismatch("packing descriptor does not match the model spec".into()));
        }
        Self::from_flat_layout(&layout, &packed.values)
    }

    /// Coefficient of the Hamiltonian term with the given full-register label.
    pub fn ham_coefficient(&self, spec: &ModelSpec, label: &str) -> Option<&[f64]> {
        let idx = spec.ham_terms().iter().position(|t| t.string.label() == label)?;
        Some(&self.theta_h[idx])
    }

    pub fn set_ham_coefficient(&mut self, spec: &ModelSpec, label: &str, values: &[f64]) -> Result<()> {
        let idx = spec
            .ham_terms()
            .iter()
            .position(|t| t.string.label() == label)
            .ok_or_else(|| Error::InvalidArgument(format!("no Hamiltonian term `{label}`")))?;
        if values.len() != self.theta_h[idx].len() {
            return Err(Error::LengthMismatch {
                expected: self.theta_h[idx].len(),
                found: values.len(),
            });
        }
        self.theta_h[idx].copy_from_slice(values);
        Ok(())
    }
}

/// Map a real square array to a lower-triangular complex matrix with real
/// diagonal: lower triangle gives real parts, strict upper (transposed) gives
/// imaginary parts.
pub fn lower_factor(theta: &DMatrix<f64>) -> CMatrix {
    let n = theta.nrows();
    CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            C64::new(theta[(r, c)], 0.0)
        } else if r > c {
            C64::new(theta[(r, c)], theta[(c, r)])
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Inverse of [`lower_factor`]; ignores the upper triangle and diagonal imaginary parts of `m`.
pub fn lower_factor_params(m: &CMatrix) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |r, c| if r >= c { m[(r, c)].re } else { m[(c, r)].im })
}

pub fn single_qubit_state(theta: &[[f64; 2]; 2]) -> Result<CMatrix> {
    let b = lower_factor(&DMatrix::from_row_slice(2, 2, &[theta[0][0], theta[0][1], theta[1][0], theta[1][1]]));
    let bb = &b * b.adjoint();
    let tr = bb[(0, 0)].re + bb[(1, 1)].re;
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::DegenerateParameters("state factor has zero norm".into()));
    }
    Ok(bb / C64::new(tr, 0.0))
}

pub fn ground_state() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)])
}

/// Single-qubit states of every qubit, in qubit order.
pub fn qubit_states(params: &ParameterSet, spec: &ModelSpec) -> Result<Vec<CMatrix>> {
    params.check_shape(spec)?;
    let mut it = params.theta_rho.iter();
    (0..spec.n_total)
        .map(|q| {
            if spec.state_param[q] {
                single_qubit_state(it.next().expect("shape checked"))
            } else {
                Ok(ground_state())
            }
        })
        .collect()
}

pub fn build_initial_state(params: &ParameterSet, spec: &ModelSpec) -> Result<CMatrix> {
    Ok(kron_all(&qubit_states(params, spec)?))
}

pub fn build_hamiltonian(params: &ParameterSet, spec: &ModelSpec, t: f64) -> Result<CMatrix> {
    params.check_shape(spec)?;
    let dim = spec.dim();
    let grid = AnchorGrid {
        times: spec.anchor_times(),
    };
    let mut h = CMatrix::zeros(dim, dim);
    for (term, values) in spec.ham_terms().iter().zip(&params.theta_h) {
        let a = if spec.is_time_dependent() {
            grid.interpolate(values, t)
        } else {
            values[0]
        };
        if a == 0.0 {
            continue;
        }
        let p = term.string.sparse();
        for col in 0..dim {
            h[(p.row(col), col)] += p.phase(col) * a;
        }
    }
    Ok(h)
}

/// `D_mn = Σ_a M_am conj(M_an)`: the coefficient of `P_m ρ P_n`.
pub fn dissipation_from_factor(m: &CMatrix) -> CMatrix {
    m.transpose() * m.map(|z| z.conj())
}

/// Lower-triangular `M` with real diagonal such that `dissipation_from_factor(M) == d`.
pub fn factor_from_dissipation(d: &CMatrix) -> Result<CMatrix> {
    let n = d.nrows();
    let rev = |a: &CMatrix| CMatrix::from_fn(n, n, |r, c| a[(n - 1 - r, n - 1 - c)]);
    let scale = d.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let c = psd_cholesky(&rev(d), 1e-13 * scale)
        .ok_or_else(|| Error::DegenerateParameters("dissipation matrix is not positive semidefinite".into()))?;
    let nfac = rev(&c.adjoint());
    Ok(nfac.map(|z| z.conj()))
}

/// One block of jump operators on a k-qubit connection.
#[derive(Debug, Clone)]
pub struct DissipatorBlock {
    pub connection: Vec<usize>,
    /// Block basis strings embedded into the full register, canonical order.
    pub strings: Vec<PauliString>,
    pub m: CMatrix,
    pub d: CMatrix,
}

/// Rates and jump operators from diagonalizing a dissipation matrix.
#[derive(Debug, Clone)]
pub struct DiagonalJumpForm {
    pub rates: Vec<f64>,
    pub operators: Vec<CMatrix>,
}

impl DissipatorBlock {
    pub fn new(connection: Vec<usize>, n_total: usize, m: CMatrix) -> Result<Self> {
        let basis = enumerate_block_basis(connection.len())?;
        if m.nrows() != basis.len() || m.ncols() != basis.len() {
            return Err(Error::ShapeMismatch(format!(
                "block factor must be {0}x{0}",
                basis.len()
            )));
        }
        let strings = basis
            .strings
            .iter()
            .map(|s| s.embed(&connection, n_total))
            .collect::<Result<Vec<_>>>()?;
        let d = dissipation_from_factor(&m);
        Ok(Self {
            connection,
            strings,
            m,
            d,
        })
    }

    /// Embedded block jump operators `L_a = Σ_b M_ab P_b`.
    pub fn jump_operators(&self) -> Vec<CMatrix> {
        let mats: Vec<CMatrix> = self.strings.iter().map(PauliString::to_matrix).collect();
        let dim = mats.first().map_or(1, |m| m.nrows());
        (0..self.m.nrows())
            .map(|a| {
                let mut l = CMatrix::zeros(dim, dim);
                for (b, p) in mats.iter().enumerate() {
                    let c = self.m[(a, b)];
                    if c != C64::new(0.0, 0.0) {
                        l += p * c;
                    }
                }
                l
            })
            .collect()
    }

    pub fn diagonal_form(&self) -> DiagonalJumpForm {
        let eig = crate::linalg::hermitian_part(&self.d).symmetric_eigen();
        let mats: Vec<CMatrix> = self.strings.iter().map(PauliString::to_matrix).collect();
        let dim = mats.first().map_or(1, |m| m.nrows());
        let mut rates = Vec::new();
        let mut operators = Vec::new();
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            let mut l = CMatrix::zeros(dim, dim);
            for (m, p) in mats.iter().enumerate() {
                l += p * eig.eigenvectors[(m, i)];
            }
            rates.push(lam);
            operators.push(l);
        }
        DiagonalJumpForm { rates, operators }
    }
}

pub fn build_dissipator(params: &ParameterSet, spec: &ModelSpec) -> Result<Vec<DissipatorBlock>> {
    params.check_shape(spec)?;
    spec.diss
        .connections
        .iter()
        .zip(&params.theta_l)
        .map(|(c, theta)| DissipatorBlock::new(c.clone(), spec.n_total, lower_factor(theta)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofCount {
    pub h_dof: usize,
    pub d_dof: usize,
    pub state_dof: usize,
    pub gauge_adjustment: i64,
    pub generator_dof: i64,
}

/// Independent real degrees of freedom of the generator.
///
/// Dissipator blocks that overlap share lower-locality strings; each unique
/// embedded string counts once (real diagonal) and each unique unordered
/// pair of distinct strings co-occurring in some block counts twice.
pub fn dof_count(spec: &ModelSpec) -> Result<DofCount> {
    spec.validate()?;
    let h_dof = spec.ham_terms().len() * spec.n_anchors();
    let mut d_dof = 0;
    if spec.diss.k > 0 {
        let basis = enumerate_block_basis(spec.diss.k)?;
        let mut ids: HashMap<PauliString, usize> = HashMap::new();
        let mut pairs: HashSet<(usize, usize)> = HashSet::new();
        for c in &spec.diss.connections {
            let block_ids: Vec<usize> = basis
                .strings
                .iter()
                .map(|s| {
                    let full = s.embed(c, spec.n_total).expect("validated connection");
                    let next = ids.len();
                    *ids.entry(full).or_insert(next)
                })
                .collect();
            for (i, &a) in block_ids.iter().enumerate() {
                for &b in &block_ids[i + 1..] {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        d_dof = ids.len() + 2 * pairs.len();
    }
    let state_dof = 3 * spec.state_param.iter().filter(|&&p| p).count();
    let gauge_adjustment = -3 * spec.hidden().len() as i64;
    Ok(DofCount {
        h_dof,
        d_dof,
        state_dof,
        gauge_adjustment,
        generator_dof: (h_dof + d_dof) as i64 + gauge_adjustment,
    })
}

fn pad_label(label: &str, n: usize) -> String {
    let mut s = label.to_string();
    while s.len() < n {
        s.push('I');
    }
    s
}

/// Map parameters of a nested smaller model onto a larger one so that the
/// generator action, and hence every likelihood, is unchanged.
///
/// Qubits keep their indices; the larger model may add hidden qubits at the
/// end of the register, which start in the ground state.
pub fn embed_warm_start(params_small: &ParameterSet, spec_small: &ModelSpec, spec_large: &ModelSpec) -> Result<ParameterSet> {
    spec_small.validate()?;
    spec_large.validate()?;
    params_small.check_shape(spec_small)?;
    let n_small = spec_small.n_total;
    let n_large = spec_large.n_total;
    if n_large < n_small {
        return Err(Error::NotNested("larger model has fewer qubits".into()));
    }
    if spec_small.observed != spec_large.observed {
        return Err(Error::NotNested("observed registers differ".into()));
    }
    for q in 0..n_small {
        if spec_small.state_param[q] && !spec_large.state_param[q] {
            return Err(Error::NotNested(format!("qubit {q} state is fixed in the larger model")));
        }
    }

    let mut out = ParameterSet::zeros(spec_large);

    // state
    let mut small_rho = params_small.theta_rho.iter();
    let mut large_idx = 0;
    for q in 0..n_large {
        let small_theta = if q < n_small && spec_small.state_param[q] {
            small_rho.next().copied()
        } else {
            None
        };
        if spec_large.state_param[q] {
            out.theta_rho[large_idx] = small_theta.unwrap_or(GROUND_STATE_THETA);
            large_idx += 1;
        }
    }

    // Hamiltonian
    let large_terms: HashMap<String, usize> = spec_large
        .ham_terms()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.string.label(), i))
        .collect();
    let same_anchors = spec_small.time_dependence == spec_large.time_dependence;
    let broadcast = !spec_small.is_time_dependent() && spec_large.is_time_dependent();
    if !same_anchors && !broadcast {
        return Err(Error::NotNested("time dependence differs".into()));
    }
    for (term, values) in spec_small.ham_terms().iter().zip(&params_small.theta_h) {
        let label = pad_label(&term.string.label(), n_large);
        let idx = *large_terms
            .get(&label)
            .ok_or_else(|| Error::NotNested(format!("Hamiltonian term {label} missing from larger model")))?;
        if broadcast {
            out.theta_h[idx].iter_mut().for_each(|v| *v = values[0]);
        } else {
            out.theta_h[idx].clone_from(values);
        }
    }

    // dissipator
    if spec_small.diss.k > 0 {
        if spec_large.diss.k < spec_small.diss.k {
            return Err(Error::NotNested("dissipator locality decreases".into()));
        }
        let large_basis = enumerate_block_basis(spec_large.diss.k)?;
        let small_basis = enumerate_block_basis(spec_small.diss.k)?;
        // For each large block: the small blocks it absorbs, with their weight and index map.
        let mut contributions: Vec<Vec<(usize, f64, Vec<usize>)>> = vec![vec![]; spec_large.diss.connections.len()];
        for (si, sc) in spec_small.diss.connections.iter().enumerate() {
            let containing: Vec<usize> = spec_large
                .diss
                .connections
                .iter()
                .enumerate()
                .filter(|(_, lc)| sc.iter().all(|q| lc.contains(q)))
                .map(|(i, _)| i)
                .collect();
            if containing.is_empty() {
                return Err(Error::NotNested(format!(
                    "dissipator block {sc:?} is not contained in any larger block"
                )));
            }
            let weight = 1.0 / (containing.len() as f64).sqrt();
            for &li in &containing {
                let lc = &spec_large.diss.connections[li];
                let local_pos: Vec<usize> = sc.iter().map(|q| lc.iter().position(|x| x == q).unwrap()).collect();
                let map = small_basis
                    .strings
                    .iter()
                    .map(|s| {
                        let lifted = s.embed(&local_pos, lc.len()).expect("positions within block");
                        large_basis.position(&lifted).expect("block basis is complete")
                    })
                    .collect();
                contributions[li].push((si, weight, map));
            }
        }
        for (li, contribs) in contributions.iter().enumerate() {
            if contribs.is_empty() {
                continue;
            }
            let mut used = HashSet::new();
            let disjoint = contribs.iter().all(|(_, _, map)| map.iter().all(|&i| used.insert(i)));
            let side = large_basis.len();
            let m_large = if disjoint {
                let mut m = CMatrix::zeros(side, side);
                for (si, w, map) in contribs {
                    let ms = lower_factor(&params_small.theta_l[*si]);
                    for a in 0..ms.nrows() {
                        for b in 0..=a {
                            m[(map[a], map[b])] = ms[(a, b)] * *w;
                        }
                    }
                }
                m
            } else {
                let mut d = CMatrix::zeros(side, side);
                for (si, w, map) in contribs {
                    let ds = dissipation_from_factor(&lower_factor(&params_small.theta_l[*si]));
                    for a in 0..ds.nrows() {
                        for b in 0..ds.ncols() {
                            d[(map[a], map[b])] += ds[(a, b)] * (*w * *w);
                        }
                    }
                }
                factor_from_dissipation(&d)?
            };
            out.theta_l[li] = lower_factor_params(&m_large);
        }
    }
    Ok(out)
}
