//! Gate library, tomography plans and seeded synthetic data.
//!
//! Rotations follow `R_σ(φ) = exp(−iφσ/2)`. Measuring `x` applies
//! `R_y(−π/2)`, measuring `y` applies `R_x(+π/2)`, and `z` applies nothing.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{predict_for_plan, Configuration, Record, TomographyDataset};
use crate::model::{ModelSpec, ParameterSet};
use crate::propagator::SolverConfig;
use crate::{CMatrix, C64};

pub const ROTATION_CONVENTION: &str = "R(phi) = exp(-i phi sigma / 2)";
pub const BASIS_CONVENTION: &str = "x: Ry(-pi/2); y: Rx(+pi/2); z: identity; R(phi) = exp(-i phi sigma / 2)";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

pub fn rx(phi: f64) -> CMatrix {
    let (s, c) = (phi / 2.0).sin_cos();
    CMatrix::from_row_slice(2, 2, &[C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0)])
}

pub fn ry(phi: f64) -> CMatrix {
    let (s, c) = (phi / 2.0).sin_cos();
    CMatrix::from_row_slice(2, 2, &[C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)])
}

/// Virtual Z: an ideal frame update `exp(−iφZ/2)`.
pub fn virtual_z(phi: f64) -> CMatrix {
    CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::from_polar(1.0, -phi / 2.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::from_polar(1.0, phi / 2.0),
        ],
    )
}

/// Rotation about x by 2·arctan√2, signed so that `X_SIC|0⟩ = √(1/3)|0⟩ + i√(2/3)|1⟩`.
pub fn x_sic() -> CMatrix {
    rx(-2.0 * 2f64.sqrt().atan())
}

/// Named gates: `I`, `X_pi`, `X_pi/2`, `X_-pi/2`, `Y_pi/2`, `Y_-pi/2`,
/// `X_SIC`, and the parameterized `RX(φ)`, `RY(φ)`, `VZ(φ)`.
pub fn gate(name: &str, args: &[f64]) -> Result<CMatrix> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let fixed = |m: CMatrix| {
        if args.is_empty() {
            Ok(m)
        } else {
            Err(Error::InvalidArgument(format!("gate `{name}` takes no arguments")))
        }
    };
    let angle = || match args {
        [phi] => Ok(*phi),
        _ => Err(Error::InvalidArgument(format!("gate `{name}` takes one angle"))),
    };
    match name {
        "I" => fixed(CMatrix::identity(2, 2)),
        "X_pi" => fixed(rx(PI)),
        "X_pi/2" => fixed(rx(FRAC_PI_2)),
        "X_-pi/2" => fixed(rx(-FRAC_PI_2)),
        "Y_pi/2" => fixed(ry(FRAC_PI_2)),
        "Y_-pi/2" => fixed(ry(-FRAC_PI_2)),
        "X_SIC" => fixed(x_sic()),
        "RX" => Ok(rx(angle()?)),
        "RY" => Ok(ry(angle()?)),
        "VZ" => Ok(virtual_z(angle()?)),
        other => Err(Error::UnknownGate(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepSet {
    Pauli6,
    Sic4,
    Custom,
}

/// Preparation unitaries acting on |0⟩.
///
/// pauli6 order: |0⟩, |1⟩, |+⟩, |−⟩, |+i⟩, |−i⟩. sic4: |0⟩ and the three
/// states `VZ(φ)·X_SIC|0⟩` for φ = 0, 2π/3, 4π/3.
pub fn prep_unitaries(set: PrepSet, custom: Option<&[CMatrix]>) -> Result<Vec<CMatrix>> {
    use std::f64::consts::{FRAC_PI_2, PI};
    match set {
        PrepSet::Pauli6 => Ok(vec![
            CMatrix::identity(2, 2),
            rx(PI),
            ry(FRAC_PI_2),
            ry(-FRAC_PI_2),
            rx(-FRAC_PI_2),
            rx(FRAC_PI_2),
        ]),
        PrepSet::Sic4 => {
            let xs = x_sic();
            Ok(vec![
                CMatrix::identity(2, 2),
                xs.clone(),
                virtual_z(2.0 * PI / 3.0) * &xs,
                virtual_z(4.0 * PI / 3.0) * &xs,
            ])
        }
        PrepSet::Custom => {
            let gates = custom.ok_or_else(|| Error::InvalidArgument("custom preparation set needs unitaries".into()))?;
            if gates.is_empty() {
                return Err(Error::InvalidArgument("custom preparation set is empty".into()));
            }
            for g in gates {
                check_unitary(g)?;
            }
            Ok(gates.to_vec())
        }
    }
}

/// Basis-change unitaries for x, y, z.
pub fn basis_unitaries() -> Vec<CMatrix> {
    use std::f64::consts::FRAC_PI_2;
    vec![ry(-FRAC_PI_2), rx(FRAC_PI_2), CMatrix::identity(2, 2)]
}

pub const BASIS_LABELS: [char; 3] = ['x', 'y', 'z'];

fn check_unitary(g: &CMatrix) -> Result<()> {
    if g.nrows() != 2 || g.ncols() != 2 {
        return Err(Error::InvalidArgument("gates must be 2x2".into()));
    }
    let err = crate::linalg::max_abs(&(g.adjoint() * g - CMatrix::identity(2, 2)));
    if err > 1e-9 {
        return Err(Error::InvalidArgument(format!("gate is not unitary (error {err:e})")));
    }
    Ok(())
}

/// Row-major complex 2x2 matrix as `[[re, im]; 4]`.
pub type GateEntries = [[f64; 2]; 4];

pub fn gate_to_entries(g: &CMatrix) -> GateEntries {
    [
        [g[(0, 0)].re, g[(0, 0)].im],
        [g[(0, 1)].re, g[(0, 1)].im],
        [g[(1, 0)].re, g[(1, 0)].im],
        [g[(1, 1)].re, g[(1, 1)].im],
    ]
}

pub fn gate_from_entries(e: &GateEntries) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &e.map(|[re, im]| C64::new(re, im)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub n_observed: usize,
    pub prep_set: PrepSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_preps: Option<Vec<GateEntries>>,
    pub basis_set: String,
    pub times_us: Vec<f64>,
    pub n_shots: u64,
}

impl ExperimentPlan {
    pub fn new(n_observed: usize, prep_set: PrepSet, times_us: Vec<f64>, n_shots: u64) -> Self {
        Self {
            n_observed,
            prep_set,
            custom_preps: None,
            basis_set: "xyz".into(),
            times_us,
            n_shots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_observed == 0 {
            return Err(Error::InvalidArgument("plan has no observed qubits".into()));
        }
        if self.basis_set != "xyz" {
            return Err(Error::InvalidArgument(format!("unsupported basis set `{}`", self.basis_set)));
        }
        if self.times_us.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("plan times must start at 0".into()));
        }
        if self.times_us.windows(2).any(|w| !(w[1] > w[0])) || self.times_us.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("plan times must be strictly ascending".into()));
        }
        if self.n_shots == 0 {
            return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
        }
        self.prep_unitaries()?;
        Ok(())
    }

    pub fn prep_unitaries(&self) -> Result<Vec<CMatrix>> {
        let custom: Option<Vec<CMatrix>> = self
            .custom_preps
            .as_ref()
            .map(|v| v.iter().map(gate_from_entries).collect());
        prep_unitaries(self.prep_set, custom.as_deref())
    }

    pub fn n_preps(&self) -> Result<usize> {
        Ok(self.prep_unitaries()?.len())
    }
}

fn odometer(n: usize, base: usize) -> Vec<Vec<usize>> {
    let total = base.pow(n as u32);
    (0..total)
        .map(|mut i| {
            let mut digits = vec![0; n];
            for d in digits.iter_mut().rev() {
                *d = i % base;
                i /= base;
            }
            digits
        })
        .collect()
}

/// Every (preparation, basis) tuple, preparations outer, both lexicographic with qubit 0 most significant.
pub fn enumerate_configurations(plan: &ExperimentPlan) -> Result<Vec<Configuration>> {
    let n_prep = plan.n_preps()?;
    let preps = odometer(plan.n_observed, n_prep);
    let bases = odometer(plan.n_observed, BASIS_LABELS.len());
    Ok(preps
        .iter()
        .flat_map(|p| {
            bases.iter().map(move |b| Configuration {
                prep: p.clone(),
                basis: b.clone(),
            })
        })
        .collect())
}

/// Number of configurations without materializing them.
pub fn configuration_count(n_observed: usize, n_preps: usize, n_bases: usize) -> u128 {
    ((n_preps * n_bases) as u128).pow(n_observed as u32)
}

fn record_rng(seed: u64, config_index: usize, time_index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(config_index as u64);
    rng.set_word_pos((time_index as u128) << 40);
    rng
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial<R: rand::Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (b, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if b + 1 == probs.len() {
            out[b] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng);
        out[b] = x;
        remaining -= x;
        mass -= p;
    }
    out
}

pub fn plan_header(plan: &ExperimentPlan) -> TomographyDataset {
    TomographyDataset {
        schema_version: DATASET_SCHEMA_VERSION,
        n_observed: plan.n_observed,
        prep_set: plan.prep_set,
        custom_preps: plan.custom_preps.clone(),
        basis_set: plan.basis_set.clone(),
        basis_convention: BASIS_CONVENTION.into(),
        times_us: plan.times_us.clone(),
        n_shots: plan.n_shots,
        records: vec![],
    }
}

/// Draw counts for every configuration and time of `plan` from a ground-truth model.
pub fn sample_synthetic(
    spec: &ModelSpec,
    params: &ParameterSet,
    plan: &ExperimentPlan,
    seed: u64,
    solver: &SolverConfig,
) -> Result<TomographyDataset> {
    plan.validate()?;
    if plan.n_observed != spec.observed.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.observed.len(),
            found: plan.n_observed,
        });
    }
    let configs = enumerate_configurations(plan)?;
    let mut dataset = plan_header(plan);
    let table = predict_for_plan(params, spec, &dataset, &configs, solver)?;
    let records: Vec<Vec<Record>> = configs
        .par_iter()
        .enumerate()
        .map(|(ci, config)| {
            (0..plan.times_us.len())
                .map(|ti| {
                    let mut rng = record_rng(seed, ci, ti);
                    Record {
                        prep: config.prep.clone(),
                        basis: config.basis.clone(),
                        t_index: ti,
                        counts: sample_multinomial(&mut rng, plan.n_shots, &table.probs[ci][ti]),
                    }
                })
                .collect()
        })
        .collect();
    dataset.records = records.into_iter().flatten().collect();
    Ok(dataset)
}
