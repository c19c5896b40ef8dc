//! Nested-model comparison and greedy traversal of the model lattice.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::Level;

/// One-sided 5% convention for the explanatory-power threshold.
pub const DEFAULT_THRESHOLD: f64 = 1.65;

/// Ξ = (2ΔLL − Δd) / √(2Δd).
pub fn explanatory_power(ll_small: f64, ll_large: f64, d_small: i64, d_large: i64) -> Result<f64> {
    let dd = d_large - d_small;
    if dd <= 0 {
        return Err(Error::NotNested(format!("larger model must have more parameters (Δd = {dd})")));
    }
    let dd = dd as f64;
    Ok((2.0 * (ll_large - ll_small) - dd) / (2.0 * dd).sqrt())
}

/// Survival function of χ² with `delta_d` degrees of freedom.
pub fn wilks_pvalue(stat: f64, delta_d: i64) -> Result<f64> {
    if delta_d < 1 {
        return Err(Error::InvalidArgument(format!("invalid degrees of freedom {delta_d}")));
    }
    if !(stat >= 0.0) {
        return Err(Error::InvalidArgument(format!("statistic must be non-negative, got {stat}")));
    }
    if stat == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(delta_d as f64 / 2.0, stat / 2.0))
}

/// (AIC, BIC) = (2·NLL + 2d, 2·NLL + d·ln N_obs).
pub fn aic_bic(nll: f64, d: i64, n_obs: u64) -> Result<(f64, f64)> {
    if n_obs == 0 {
        return Err(Error::InvalidArgument("n_obs must be at least 1".into()));
    }
    let d = d as f64;
    Ok((2.0 * nll + 2.0 * d, 2.0 * nll + d * (n_obs as f64).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticeNode {
    pub ham: Level,
    pub diss: Level,
}

impl LatticeNode {
    pub fn new(ham: Level, diss: Level) -> Self {
        Self { ham, diss }
    }

    pub fn step(self, axis: Axis) -> Option<Self> {
        match axis {
            Axis::Hamiltonian => self.ham.next().map(|h| Self::new(h, self.diss)),
            Axis::Dissipator => self.diss.next().map(|d| Self::new(self.ham, d)),
        }
    }
}

impl std::fmt::Display for LatticeNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({} H, {} D)", self.ham, self.diss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Hamiltonian,
    Dissipator,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Hamiltonian => "H",
            Axis::Dissipator => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub ll: f64,
    pub dof: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub nodes: BTreeMap<LatticeNode, NodeValue>,
}

#[derive(Debug, Deserialize)]
struct LatticeRow {
    ham_level: String,
    diss_level: String,
    nll: f64,
    dof: i64,
}

impl Lattice {
    pub fn insert(&mut self, node: LatticeNode, nll: f64, dof: i64) -> Result<()> {
        if dof < 0 || !nll.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid entry for {node}: nll = {nll}, d = {dof}")));
        }
        if self.nodes.insert(node, NodeValue { ll: -nll, dof }).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate lattice node {node}")));
        }
        Ok(())
    }

    /// Read a CSV with columns ham_level, diss_level, nll, dof.
    pub fn from_csv_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut lattice = Lattice::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            let row: LatticeRow = row?;
            let node = LatticeNode::new(row.ham_level.parse()?, row.diss_level.parse()?);
            lattice.insert(node, row.nll, row.dof)?;
        }
        Ok(lattice)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    fn has_level(&self, axis: Axis, level: Level) -> bool {
        self.nodes.keys().any(|n| match axis {
            Axis::Hamiltonian => n.ham == level,
            Axis::Dissipator => n.diss == level,
        })
    }

    /// Nodes of the grid spanned by the levels present on each axis that
    /// carry no data.
    pub fn missing_nodes(&self) -> Vec<LatticeNode> {
        let hs: Vec<Level> = Level::ALL.into_iter().filter(|&l| self.has_level(Axis::Hamiltonian, l)).collect();
        let ds: Vec<Level> = Level::ALL.into_iter().filter(|&l| self.has_level(Axis::Dissipator, l)).collect();
        let mut out = Vec::new();
        for &h in &hs {
            for &d in &ds {
                let n = LatticeNode::new(h, d);
                if !self.nodes.contains_key(&n) {
                    out.push(n);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub axis: Axis,
    pub to: LatticeNode,
    pub two_delta_ll: f64,
    pub delta_d: i64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub from: LatticeNode,
    pub to: LatticeNode,
    pub axis: Axis,
    pub two_delta_ll: f64,
    pub delta_d: i64,
    pub xi: f64,
    /// Wilks p-value, diagnostic only.
    pub p_value: f64,
    /// The other increment considered at this node, if any.
    pub alternative: Option<Candidate>,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub threshold: f64,
    pub start: LatticeNode,
    pub moves: Vec<Move>,
    pub stop: LatticeNode,
    /// Increments available at the stopping node, all at or below threshold.
    pub frontier: Vec<Candidate>,
}

impl SelectionPath {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:<22} {:<22} {:>16} {:>8} {:>14}", "step", "from", "to", "2dLL", "dd", "Xi");
        for (i, m) in self.moves.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<4} {:<22} {:<22} {:>16.6e} {:>8} {:>14.6e}{}",
                i + 1,
                m.from.to_string(),
                m.to.to_string(),
                m.two_delta_ll,
                m.delta_d,
                m.xi,
                if m.tie { "  (tie)" } else { "" }
            );
        }
        let _ = writeln!(s, "stop at {} (threshold {})", self.stop, self.threshold);
        for c in &self.frontier {
            let _ = writeln!(s, "  rejected {}->{}: Xi = {:.6e}", c.axis.label(), c.to, c.xi);
        }
        s
    }
}

fn candidate(lattice: &Lattice, from: LatticeNode, axis: Axis) -> Result<Option<Candidate>> {
    let Some(to) = from.step(axis) else {
        return Ok(None);
    };
    let level = match axis {
        Axis::Hamiltonian => to.ham,
        Axis::Dissipator => to.diss,
    };
    if !lattice.has_level(axis, level) {
        return Ok(None);
    }
    let a = lattice.nodes[&from];
    let b = lattice.nodes.get(&to).ok_or_else(|| Error::MissingNode(to.to_string()))?;
    let xi = explanatory_power(a.ll, b.ll, a.dof, b.dof)?;
    Ok(Some(Candidate {
        axis,
        to,
        two_delta_ll: 2.0 * (b.ll - a.ll),
        delta_d: b.dof - a.dof,
        xi,
    }))
}

/// Relative tolerance under which two Ξ values count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Greedy ascent from (none, none) along the increment of largest Ξ while
/// it exceeds `threshold`. Ties go to the Hamiltonian axis.
pub fn greedy_path(lattice: &Lattice, threshold: f64) -> Result<SelectionPath> {
    let start = LatticeNode::new(Level::None, Level::None);
    if !lattice.nodes.contains_key(&start) {
        return Err(Error::MissingNode(start.to_string()));
    }
    let missing = lattice.missing_nodes();
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|n| n.to_string()).collect();
        return Err(Error::MissingNode(names.join(", ")));
    }
    let mut node = start;
    let mut moves = Vec::new();
    loop {
        let h = candidate(lattice, node, Axis::Hamiltonian)?;
        let d = candidate(lattice, node, Axis::Dissipator)?;
        let (best, other, tie) = match (h, d) {
            (Some(h), Some(d)) => {
                let tie = (h.xi - d.xi).abs() <= TIE_TOL * h.xi.abs().max(d.xi.abs()).max(1.0);
                if tie || h.xi > d.xi {
                    (h, Some(d), tie)
                } else {
                    (d, Some(h), false)
                }
            }
            (Some(c), None) | (None, Some(c)) => (c, None, false),
            (None, None) => {
                return Ok(SelectionPath {
                    threshold,
                    start,
                    moves,
                    stop: node,
                    frontier: Vec::new(),
                })
            }
        };
        if !(best.xi > threshold) {
            let frontier = [h, d].into_iter().flatten().collect();
            return Ok(SelectionPath {
                threshold,
                start,
                moves,
                stop: node,
                frontier,
            });
        }
        moves.push(Move {
            from: node,
            to: best.to,
            axis: best.axis,
            two_delta_ll: best.two_delta_ll,
            delta_d: best.delta_d,
            xi: best.xi,
            p_value: wilks_pvalue(best.two_delta_ll.max(0.0), best.delta_d)?,
            alternative: other,
            tie,
        });
        node = best.to;
    }
}
