//! Pauli strings, their embedding into an N-qubit register, and the
//! connection graphs that give locality-structured models their shape.
//!
//! Qubit indices are 0-based. Computational basis indices are big-endian:
//! qubit 0 is the most significant bit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMatrix, C64};

/// Default upper bound on block locality for dense enumeration.
pub const MAX_BLOCK_LOCALITY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> CMatrix {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => DMatrix::from_row_slice(2, 2, &[l, o, o, l]),
            Pauli::X => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
            Pauli::Y => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
            Pauli::Z => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

impl TryFrom<char> for Pauli {
    type Error = Error;

    fn try_from(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::InvalidArgument(format!("not a Pauli letter: {other:?}"))),
        }
    }
}

/// Tensor product of single-qubit Paulis, one letter per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Pauli>,
    weight: usize,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::InvalidArgument("empty Pauli string".into()));
        }
        let weight = letters.iter().filter(|&&p| p != Pauli::I).count();
        Ok(Self { letters, weight })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        Self::new(vec![Pauli::I; n_qubits])
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn label(&self) -> String {
        self.letters.iter().map(|p| p.symbol()).collect()
    }

    /// Positions and letters of the non-identity factors.
    pub fn support(&self) -> Vec<(usize, Pauli)> {
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != Pauli::I)
            .map(|(q, &p)| (q, p))
            .collect()
    }

    /// Place this local string onto `targets` of an `n_total`-qubit register.
    pub fn embed(&self, targets: &[usize], n_total: usize) -> Result<PauliString> {
        if targets.len() != self.n_qubits() {
            return Err(Error::LengthMismatch {
                expected: self.n_qubits(),
                found: targets.len(),
            });
        }
        check_tuple(targets, n_total)?;
        let mut letters = vec![Pauli::I; n_total];
        for (&q, &p) in targets.iter().zip(&self.letters) {
            letters[q] = p;
        }
        PauliString::new(letters)
    }

    pub fn sparse(&self) -> SparsePauli {
        let n = self.n_qubits();
        let mut x_mask = 0usize;
        let mut phase_mask = 0usize;
        let mut n_y = 0u32;
        for (q, &p) in self.letters.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => x_mask |= bit,
                Pauli::Y => {
                    x_mask |= bit;
                    phase_mask |= bit;
                    n_y += 1;
                }
                Pauli::Z => phase_mask |= bit,
            }
        }
        SparsePauli {
            dim: 1 << n,
            x_mask,
            phase_mask,
            global: i_pow(n_y),
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        self.sparse().to_dense()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s.chars().map(Pauli::try_from).collect::<Result<Vec<_>>>()?;
        PauliString::new(letters)
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Canonical order: weight first, then the sequence of (position, letter)
/// pairs of the non-identity factors, compared lexicographically.
impl Ord for PauliString {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.weight
            .cmp(&other.weight)
            .then_with(|| self.support().cmp(&other.support()))
            .then_with(|| self.letters.len().cmp(&other.letters.len()))
    }
}

/// A Pauli string acting on basis states: column `j` has its single nonzero
/// entry at row `j ^ x_mask`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePauli {
    pub dim: usize,
    pub x_mask: usize,
    phase_mask: usize,
    global: C64,
}

impl SparsePauli {
    #[inline]
    pub fn row(&self, col: usize) -> usize {
        col ^ self.x_mask
    }

    #[inline]
    pub fn phase(&self, col: usize) -> C64 {
        if (col & self.phase_mask).count_ones() % 2 == 0 {
            self.global
        } else {
            -self.global
        }
    }

    /// Product `self * other` as a phase times a Pauli-like sparse operator.
    pub fn compose(&self, other: &SparsePauli) -> SparseMonomial {
        let dim = self.dim;
        let mut phases = Vec::with_capacity(dim);
        for col in 0..dim {
            let mid = other.row(col);
            phases.push(self.phase(mid) * other.phase(col));
        }
        SparseMonomial {
            x_mask: self.x_mask ^ other.x_mask,
            phases,
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for col in 0..self.dim {
            m[(self.row(col), col)] = self.phase(col);
        }
        m
    }
}

/// Monomial matrix with one nonzero per column at row `col ^ x_mask`.
#[derive(Debug, Clone)]
pub struct SparseMonomial {
    pub x_mask: usize,
    pub phases: Vec<C64>,
}

fn i_pow(n: u32) -> C64 {
    match n % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

fn check_tuple(targets: &[usize], n_total: usize) -> Result<()> {
    for (i, &q) in targets.iter().enumerate() {
        if q >= n_total {
            return Err(Error::IndexOutOfRange {
                index: q,
                n_qubits: n_total,
            });
        }
        if i > 0 && targets[i - 1] >= q {
            return Err(Error::InvalidArgument(format!(
                "target qubits must be strictly increasing: {targets:?}"
            )));
        }
    }
    Ok(())
}

/// Dense `2^n_total` matrix of `local` placed on `target_qubits`, identity elsewhere.
pub fn embed_string(local: &PauliString, target_qubits: &[usize], n_total: usize) -> Result<CMatrix> {
    Ok(local.embed(target_qubits, n_total)?.to_matrix())
}

/// The `4^k - 1` non-identity Pauli strings on `k` qubits in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockBasis {
    pub k: usize,
    pub strings: Vec<PauliString>,
}

impl BlockBasis {
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn position(&self, s: &PauliString) -> Option<usize> {
        self.strings.binary_search(s).ok()
    }
}

pub fn enumerate_block_basis(k: usize) -> Result<BlockBasis> {
    enumerate_block_basis_capped(k, MAX_BLOCK_LOCALITY)
}

pub fn enumerate_block_basis_capped(k: usize, cap: usize) -> Result<BlockBasis> {
    if k < 1 || k > cap {
        return Err(Error::InvalidLocality(k));
    }
    let total = 1usize << (2 * k);
    let mut strings = Vec::with_capacity(total - 1);
    for code in 1..total {
        let letters = (0..k)
            .map(|q| match (code >> (2 * (k - 1 - q))) & 3 {
                0 => Pauli::I,
                1 => Pauli::X,
                2 => Pauli::Y,
                _ => Pauli::Z,
            })
            .collect();
        strings.push(PauliString::new(letters)?);
    }
    strings.sort();
    Ok(BlockBasis { k, strings })
}

/// All length-`k` strings over {X, Y, Z} in odometer order (last letter fastest).
pub fn full_weight_strings(k: usize) -> Vec<PauliString> {
    let n = 3usize.pow(k as u32);
    (0..n)
        .map(|mut idx| {
            let mut letters = vec![Pauli::I; k];
            for q in (0..k).rev() {
                letters[q] = Pauli::NON_IDENTITY[idx % 3];
                idx /= 3;
            }
            PauliString::new(letters).expect("k >= 1")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionKind {
    Local,
    NearestChain,
    AllPairs,
    KLocalComplete,
}

impl FromStr for ConnectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "nearest_chain" => Ok(Self::NearestChain),
            "all_pairs" => Ok(Self::AllPairs),
            "k_local_complete" => Ok(Self::KLocalComplete),
            other => Err(Error::UnsupportedConnection(other.to_string())),
        }
    }
}

/// Strictly increasing `k`-tuples drawn from `0..n`, lexicographic.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// One component `C_k` of a connection graph.
pub fn build_connections(kind: ConnectionKind, n_qubits: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k < 1 || n_qubits < k {
        return Err(Error::InvalidLocality(k));
    }
    match (kind, k) {
        (ConnectionKind::Local, 1) => Ok((0..n_qubits).map(|q| vec![q]).collect()),
        (ConnectionKind::NearestChain, 2) => Ok((0..n_qubits - 1).map(|q| vec![q, q + 1]).collect()),
        (ConnectionKind::AllPairs, 2) => Ok(combinations(n_qubits, 2)),
        (ConnectionKind::KLocalComplete, _) => Ok(combinations(n_qubits, k)),
        (kind, k) => Err(Error::UnsupportedConnection(format!("{kind:?} with k = {k}"))),
    }
}

/// Sets `C_k` of allowed k-qubit connections, keyed by `k`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConnectionGraph {
    pub n_qubits: usize,
    pub sets: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl ConnectionGraph {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            sets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, k: usize, mut tuples: Vec<Vec<usize>>) -> Result<()> {
        if k < 1 || k > self.n_qubits {
            return Err(Error::InvalidLocality(k));
        }
        for t in &tuples {
            if t.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    found: t.len(),
                });
            }
            check_tuple(t, self.n_qubits)?;
        }
        tuples.sort();
        tuples.dedup();
        self.sets.insert(k, tuples);
        Ok(())
    }

    pub fn get(&self, k: usize) -> &[Vec<usize>] {
        self.sets.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn k_max(&self) -> usize {
        self.sets
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&k, _)| k)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for (&k, tuples) in &self.sets {
            if k < 1 || k > self.n_qubits {
                return Err(Error::InvalidLocality(k));
            }
            for t in tuples {
                if t.len() != k {
                    return Err(Error::LengthMismatch {
                        expected: k,
                        found: t.len(),
                    });
                }
                check_tuple(t, self.n_qubits)?;
            }
            let mut sorted = tuples.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != tuples.len() {
                return Err(Error::InvalidSpec(format!("duplicate {k}-qubit connections")));
            }
        }
        Ok(())
    }
}
