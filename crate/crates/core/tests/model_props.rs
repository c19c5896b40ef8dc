use lindlearn::linalg::{hermiticity_error, max_abs, min_eigenvalue, trace};
use lindlearn::model::{
    build_dissipator, build_hamiltonian, build_initial_state, dof_count, embed_warm_start, single_qubit_state, Level,
    ModelSpec, ParameterSet,
};
use lindlearn::pauli::{build_connections, ConnectionKind};
use lindlearn::propagator::LindbladGenerator;
use lindlearn::{CMatrix, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParameterSet {
    let x: Vec<f64> = (0..spec.layout().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ParameterSet::from_flat(spec, &x).unwrap()
}

fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &a * a.adjoint();
    let tr = trace(&rho);
    rho / tr
}

/// D-matrix form Σ_mn D_mn (P_m ρ P_n − ½{P_n P_m, ρ}) of one block.
fn d_form(strings: &[CMatrix], d: &CMatrix, rho: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    for (m, pm) in strings.iter().enumerate() {
        for (n, pn) in strings.iter().enumerate() {
            let c = d[(m, n)];
            let pnpm = pn * pm;
            out += (pm * rho * pn - (&pnpm * rho + rho * &pnpm) * C64::new(0.5, 0.0)) * c;
        }
    }
    out
}

fn jump_form(ops: &[CMatrix], rho: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    for l in ops {
        let ll = l.adjoint() * l;
        out += l * rho * l.adjoint() - (&ll * rho + rho * &ll) * C64::new(0.5, 0.0);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trips(seed in any::<u64>(), h in 0usize..4, d in 0usize..3) {
        let spec = ModelSpec::from_levels(3, vec![0, 1], Level::ALL[h], Level::ALL[d]).unwrap();
        let p = random_params(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let x = p.flatten();
        prop_assert_eq!(x.len(), spec.layout().len());
        prop_assert_eq!(ParameterSet::from_flat(&spec, &x).unwrap(), p.clone());
        let packed = p.pack(&spec).unwrap();
        prop_assert_eq!(ParameterSet::unpack(&spec, &packed).unwrap(), p);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let spec = ModelSpec::from_levels(3, vec![0, 1, 2], Level::A2a, Level::None).unwrap();
        let p = random_params(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = build_hamiltonian(&p, &spec, 0.0).unwrap();
        prop_assert!(hermiticity_error(&h) <= 1e-14);
        let mut scaled = p.clone();
        scaled.theta_h.iter_mut().flatten().for_each(|v| *v *= alpha);
        let hs = build_hamiltonian(&scaled, &spec, 0.0).unwrap();
        prop_assert!(max_abs(&(hs - h * C64::new(alpha, 0.0))) <= 1e-12);
    }

    #[test]
    fn jump_form_matches_dissipation_matrix(seed in any::<u64>(), level in 1usize..3) {
        let spec = ModelSpec::from_levels(2, vec![0, 1], Level::None, Level::ALL[level]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&spec, &mut rng);
        let rho = random_density(4, &mut rng);
        for block in build_dissipator(&p, &spec).unwrap() {
            prop_assert!(hermiticity_error(&block.d) <= 1e-12);
            prop_assert!(min_eigenvalue(&block.d) >= -1e-12);
            let strings: Vec<CMatrix> = block.strings.iter().map(|s| s.to_matrix()).collect();
            let a = d_form(&strings, &block.d, &rho);
            let b = jump_form(&block.jump_operators(), &rho);
            prop_assert!(max_abs(&(&a - &b)) <= 1e-10);
            let diag = block.diagonal_form();
            prop_assert!(diag.rates.iter().all(|&r| r >= -1e-12));
        }
    }
}

#[test]
fn initial_states_are_physical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let theta = [[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]];
        let rho = single_qubit_state(&theta).unwrap();
        assert!((trace(&rho) - C64::new(1.0, 0.0)).norm() <= 1e-12);
        assert!(hermiticity_error(&rho) <= 1e-15);
        assert!(min_eigenvalue(&rho) >= -1e-12);
    }
    let spec = ModelSpec::from_levels(3, vec![0, 1, 2], Level::None, Level::None).unwrap();
    let rho = build_initial_state(&random_params(&spec, &mut rng), &spec).unwrap();
    assert!((trace(&rho) - C64::new(1.0, 0.0)).norm() <= 1e-12);
    assert!(min_eigenvalue(&rho) >= -1e-12);
}

#[test]
fn isolated_block_dof_is_square() {
    for k in 1..=3usize {
        let mut spec = ModelSpec::from_levels(k, (0..k).collect(), Level::None, Level::None).unwrap();
        spec.diss.k = k;
        spec.diss.connections = vec![(0..k).collect()];
        let m = 4usize.pow(k as u32) - 1;
        assert_eq!(dof_count(&spec).unwrap().d_dof, m * m);
    }
}

#[test]
fn warm_start_to_chain_dissipation_keeps_generator_action() {
    let small = ModelSpec::from_levels(3, vec![0, 1, 2], Level::Nn, Level::Local).unwrap();
    let large = ModelSpec::from_levels(3, vec![0, 1, 2], Level::A2a, Level::Nn).unwrap();
    assert_eq!(large.diss.connections, build_connections(ConnectionKind::NearestChain, 3, 2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(&small, &mut rng);
    let q = embed_warm_start(&p, &small, &large).unwrap();
    let gs = LindbladGenerator::new(&p, &small).unwrap();
    let gl = LindbladGenerator::new(&q, &large).unwrap();
    for _ in 0..5 {
        let rho = random_density(8, &mut rng);
        let diff = gs.apply(&rho, 0.0).unwrap() - gl.apply(&rho, 0.0).unwrap();
        assert!(max_abs(&diff) <= 1e-10);
    }
    assert_eq!(build_initial_state(&p, &small).unwrap(), build_initial_state(&q, &large).unwrap());
}

#[test]
fn warm_start_adds_hidden_qubit_in_ground_state() {
    let small = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
    let large = ModelSpec::from_levels(2, vec![0], Level::Nn, Level::Nn).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_params(&small, &mut rng);
    let q = embed_warm_start(&p, &small, &large).unwrap();
    let rho_s = build_initial_state(&p, &small).unwrap();
    let rho_l = build_initial_state(&q, &large).unwrap();
    // rho_l = rho_s ⊗ |0⟩⟨0|
    for i in 0..2 {
        for j in 0..2 {
            assert!((rho_l[(2 * i, 2 * j)] - rho_s[(i, j)]).norm() <= 1e-14);
        }
    }
    let gs = LindbladGenerator::new(&p, &small).unwrap();
    let gl = LindbladGenerator::new(&q, &large).unwrap();
    let rho = random_density(2, &mut rng);
    let ground = CMatrix::from_fn(2, 2, |r, c| C64::new(if r == 0 && c == 0 { 1.0 } else { 0.0 }, 0.0));
    let out_s = gs.apply(&rho, 0.0).unwrap();
    let out_l = gl.apply(&rho.kronecker(&ground), 0.0).unwrap();
    assert!(max_abs(&(out_s.kronecker(&ground) - out_l)) <= 1e-10);
}
