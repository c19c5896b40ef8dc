use lindlearn::estimator::{
    derived_standard_error, fit, init_params, observed_information, uncertainty_from_information, OptimizerConfig,
    StopReason,
};
use lindlearn::experiment::{sample_synthetic, ExperimentPlan, PrepSet};
use lindlearn::likelihood::{gradcheck_point, Likelihood, LikelihoodOptions, TomographyDataset};
use lindlearn::model::{embed_warm_start, single_qubit_state, Level, ModelSpec, ParameterSet};
use lindlearn::propagator::SolverConfig;
use nalgebra::{DMatrix, DVector};

fn pauli6(times: Vec<f64>, shots: u64) -> ExperimentPlan {
    ExperimentPlan::new(1, PrepSet::Pauli6, times, shots)
}

fn full_ll(spec: &ModelSpec, ds: &TomographyDataset, p: &ParameterSet) -> f64 {
    Likelihood::new(spec, ds).unwrap().evaluate(p, false, None, None, &LikelihoodOptions::default()).unwrap().ll
}

#[test]
fn init_params_is_deterministic() {
    let spec = ModelSpec::from_levels(3, vec![0, 1, 2], Level::Nn, Level::Nn).unwrap();
    assert_eq!(init_params(&spec, 9, 0.1).unwrap(), init_params(&spec, 9, 0.1).unwrap());
    assert_ne!(init_params(&spec, 9, 0.1).unwrap(), init_params(&spec, 10, 0.1).unwrap());
    assert!(init_params(&spec, 9, 0.0).is_err());
}

#[test]
fn init_params_scales_with_locality() {
    let spec = ModelSpec::from_levels(2, vec![0, 1], Level::Nn, Level::None).unwrap();
    let slot = spec.ham_terms().iter().position(|t| t.k == 2).unwrap();
    let local = spec.ham_terms().iter().position(|t| t.k == 1).unwrap();
    let sigma0 = 0.2;
    let draws: Vec<(f64, f64)> = (0..10_000u64)
        .map(|s| {
            let p = init_params(&spec, s, sigma0).unwrap();
            (p.theta_h[slot][0], p.theta_h[local][0])
        })
        .collect();
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let two: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let one: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let want = sigma0 * sigma0 / 100.0;
    assert!((var(&two) / want - 1.0).abs() <= 0.1, "2-local variance {}", var(&two));
    assert!((var(&one) / (sigma0 * sigma0) - 1.0).abs() <= 0.1);
}

#[test]
fn init_params_tiny_sigma_is_ground_and_zero() {
    let spec = ModelSpec::from_levels(2, vec![0, 1], Level::Nn, Level::Nn).unwrap();
    let p = init_params(&spec, 1, 1e-300).unwrap();
    assert!(p.theta_h.iter().flatten().all(|v| v.abs() < 1e-290));
    assert!(p.theta_l.iter().flat_map(|m| m.iter()).all(|v| v.abs() < 1e-290));
    for t in &p.theta_rho {
        let rho = single_qubit_state(t).unwrap();
        assert!((rho[(0, 0)].re - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_steps_returns_init_and_its_likelihood() {
    let spec = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
    let truth = gradcheck_point(&spec, 1).unwrap();
    let ds = sample_synthetic(&spec, &truth, &pauli6(vec![0.0, 1.0, 2.0], 100), 1, &SolverConfig::default()).unwrap();
    let init = init_params(&spec, 2, 0.1).unwrap();
    let cfg = OptimizerConfig {
        max_steps: 0,
        ..OptimizerConfig::default()
    };
    let r = fit(&ds, &spec, &init, &cfg).unwrap();
    assert_eq!(r.parameters().unwrap(), init);
    assert_eq!(r.ll_full, full_ll(&spec, &ds, &init));
    assert_eq!(r.diagnostics.steps_taken, 0);
}

#[test]
fn fits_are_deterministic_and_report_full_data_ll() {
    let spec = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
    let truth = gradcheck_point(&spec, 4).unwrap();
    let ds = sample_synthetic(&spec, &truth, &pauli6((0..8).map(|i| 0.5 * i as f64).collect(), 300), 4, &SolverConfig::default())
        .unwrap();
    let init = init_params(&spec, 5, 0.1).unwrap();
    let cfg = OptimizerConfig {
        learning_rate: 1e-2,
        max_steps: 300,
        minibatch_fraction: 0.5,
        seed: 3,
        ..OptimizerConfig::default()
    };
    let a = fit(&ds, &spec, &init, &cfg).unwrap();
    let b = fit(&ds, &spec, &init, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.ll_full, full_ll(&spec, &ds, &a.parameters().unwrap()));
    assert!(a.ll_full > a.diagnostics.initial_ll);
}

#[test]
fn full_batch_fit_reaches_plateau() {
    let spec = ModelSpec::from_levels(1, vec![0], Level::Local, Level::None).unwrap();
    let mut truth = ParameterSet::zeros(&spec);
    truth.set_ham_coefficient(&spec, "X", &[0.8]).unwrap();
    truth.set_ham_coefficient(&spec, "Z", &[0.3]).unwrap();
    let ds = sample_synthetic(&spec, &truth, &pauli6((0..20).map(|i| 0.25 * i as f64).collect(), 1000), 8, &SolverConfig::default())
        .unwrap();
    let cfg = OptimizerConfig {
        learning_rate: 1e-2,
        ..OptimizerConfig::default()
    };
    let mut init = truth.clone();
    init.set_ham_coefficient(&spec, "X", &[0.7]).unwrap();
    init.set_ham_coefficient(&spec, "Z", &[0.4]).unwrap();
    init.theta_rho[0] = [[0.9, 0.05], [0.1, 0.1]];
    let r = fit(&ds, &spec, &init, &cfg).unwrap();
    assert_eq!(r.stop_reason, StopReason::Plateau);
    let at_truth = full_ll(&spec, &ds, &truth);
    assert!(r.ll_full >= at_truth, "{} < {at_truth}: {:?}", r.ll_full, r.parameters().unwrap());
    let p = r.parameters().unwrap();
    assert!((p.ham_coefficient(&spec, "X").unwrap()[0] - 0.8).abs() < 0.02);
}

#[test]
fn warm_started_larger_model_never_loses_likelihood() {
    let large = ModelSpec::from_levels(1, vec![0], Level::Local, Level::Local).unwrap();
    let small = ModelSpec::from_levels(1, vec![0], Level::Local, Level::None).unwrap();
    let truth = gradcheck_point(&large, 12).unwrap();
    let ds = sample_synthetic(&large, &truth, &pauli6((0..10).map(|i| 0.5 * i as f64).collect(), 500), 12, &SolverConfig::default())
        .unwrap();
    let cfg = OptimizerConfig {
        learning_rate: 1e-2,
        max_steps: 1500,
        ..OptimizerConfig::default()
    };
    let fs = fit(&ds, &small, &init_params(&small, 1, 0.1).unwrap(), &cfg).unwrap();
    let warm = embed_warm_start(&fs.parameters().unwrap(), &small, &large).unwrap();
    assert_eq!(full_ll(&large, &ds, &warm), fs.ll_full);
    let cfg = OptimizerConfig {
        baseline_ll: Some(fs.ll_full),
        max_steps: 1500,
        ..OptimizerConfig::default()
    };
    let fl = fit(&ds, &large, &warm, &cfg).unwrap();
    assert!(fl.ll_full >= fs.ll_full - 1e-6 * fs.ll_full.abs());
    assert!(!fl.diagnostics.monotonicity_violated);
    assert_eq!(fl.diagnostics.baseline_ll, Some(fs.ll_full));
}

#[test]
fn quadratic_information_gives_inverse_root_curvature() {
    for c in [0.5, 4.0, 2.5e6] {
        let u = uncertainty_from_information(DMatrix::from_element(1, 1, c));
        assert!((u.std_errors[0] - 1.0 / c.sqrt()).abs() <= 1e-12 / c.sqrt());
        assert!(u.flagged.is_empty() && !u.indefinite);
    }
    let u = uncertainty_from_information(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, -1.0]));
    assert!(u.indefinite);
    assert_eq!(u.flagged.len(), 1);
}

#[test]
fn binomial_standard_error() {
    // state-only model measured in z after the identity preparation: one binomial probability
    let spec = ModelSpec::from_levels(1, vec![0], Level::None, Level::None).unwrap();
    let mut truth = ParameterSet::zeros(&spec);
    truth.theta_rho[0] = [[0.8, 0.0], [0.6, 0.0]];
    let ds = sample_synthetic(&spec, &truth, &pauli6(vec![0.0, 1.0, 2.0], 2000), 6, &SolverConfig::default()).unwrap();
    let idx: Vec<usize> = (0..ds.records.len()).filter(|&i| ds.records[i].prep == [0] && ds.records[i].basis == [2]).collect();
    let ds = ds.with_records(&idx);
    let ones: u64 = ds.records.iter().map(|r| r.counts[1]).sum();
    let n = ds.n_observations() as f64;
    let p_hat = ones as f64 / n;
    let mut mle = ParameterSet::zeros(&spec);
    mle.theta_rho[0] = [[(1.0 - p_hat).sqrt(), 0.0], [p_hat.sqrt(), 0.0]];

    let lik = Likelihood::new(&spec, &ds).unwrap();
    let info = observed_information(&lik, &mle, &LikelihoodOptions::default()).unwrap();
    let unc = uncertainty_from_information(info);
    let x = mle.flatten();
    let se = derived_standard_error(&unc, &x, |v| {
        let p = ParameterSet::from_flat(&spec, v).unwrap();
        single_qubit_state(&p.theta_rho[0]).unwrap()[(1, 1)].re
    });
    let want = (p_hat * (1.0 - p_hat) / n).sqrt();
    assert!((se / want - 1.0).abs() <= 1e-4, "se {se}, binomial {want}");
    // four state parameters, one identified direction
    let lmax = unc.eigenvalues[3];
    assert!(unc.eigenvalues[..3].iter().all(|l| l.abs() <= 1e-9 * lmax), "{:?}", unc.eigenvalues);
}

#[test]
fn hidden_qubit_gauge_directions_are_flagged() {
    let spec = ModelSpec::from_levels(2, vec![0], Level::Nn, Level::Local).unwrap();
    let mut truth = gradcheck_point(&spec, 31).unwrap();
    for (label, v) in [("XI", 0.7), ("ZI", 0.3), ("IZ", 0.5), ("XX", 0.4), ("YY", 0.25)] {
        truth.set_ham_coefficient(&spec, label, &[v]).unwrap();
    }
    let plan = pauli6((0..16).map(|i| 0.3 * i as f64).collect(), 5000);
    let ds = sample_synthetic(&spec, &truth, &plan, 31, &SolverConfig::default()).unwrap();
    let lik = Likelihood::new(&spec, &ds).unwrap();
    let opts = LikelihoodOptions::default();

    // Newton iterations on the identified subspace drive the gradient to
    // zero, where gauge orbits are exact null directions of the Hessian.
    let mut x = DVector::from_vec(truth.flatten());
    let mut unc = None;
    for _ in 0..8 {
        let p = ParameterSet::from_flat(&spec, x.as_slice()).unwrap();
        let g = DVector::from_vec(lik.evaluate(&p, true, None, None, &opts).unwrap().gradient.unwrap());
        let u = uncertainty_from_information(observed_information(&lik, &p, &opts).unwrap());
        let step = &u.covariance * &g;
        x += &step;
        let done = step.amax() < 1e-10;
        unc = Some(u);
        if done {
            break;
        }
    }
    let unc = unc.unwrap();
    assert!(unc.flagged.len() >= 3 * spec.hidden().len(), "flagged {} eigenvalues {:?}", unc.flagged.len(), &unc.eigenvalues[..6]);
}
