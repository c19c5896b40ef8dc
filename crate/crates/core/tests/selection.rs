use std::path::Path;

use lindlearn::model::Level;
use lindlearn::selection::{aic_bic, explanatory_power, greedy_path, wilks_pvalue, Axis, Lattice, LatticeNode};
use proptest::prelude::*;

fn table() -> Lattice {
    Lattice::from_csv(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/five_qubit_models.csv")).unwrap()
}

/// Γ(k/2) for integer k.
fn half_gamma(k: u32) -> f64 {
    if k % 2 == 0 {
        (1..k / 2).map(f64::from).product()
    } else {
        let n = (k - 1) / 2;
        // Γ(n + 1/2) = (2n)! √π / (4^n n!)
        (n + 1..=2 * n).map(f64::from).product::<f64>() * std::f64::consts::PI.sqrt() / 4f64.powi(n as i32)
    }
}

/// P(χ²_k ≤ x) by composite Simpson integration of the density in u = √t,
/// which removes the t^(−1/2) singularity at the origin for k = 1.
fn chi2_cdf(x: f64, k: u32) -> f64 {
    let norm = 1.0 / (2f64.powf(k as f64 / 2.0) * half_gamma(k));
    let f = |u: f64| 2.0 * u.powi(k as i32 - 1) * (-u * u / 2.0).exp() * norm;
    let b = x.sqrt();
    let n = 20_000;
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn pvalue_matches_numeric_integration() {
    for k in 1..=10u32 {
        for x in [0.3, 1.0, 2.5, 6.0, 14.0] {
            let p = wilks_pvalue(x, k as i64).unwrap();
            assert!((p - (1.0 - chi2_cdf(x, k))).abs() <= 1e-9, "k={k} x={x}");
        }
    }
    assert!((wilks_pvalue(3.841459, 1).unwrap() - 0.05).abs() <= 1e-6);
}

#[test]
fn pvalue_at_the_median_is_one_half() {
    for k in 1..=10u32 {
        let (mut lo, mut hi) = (0.0, 30.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf(mid, k) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = wilks_pvalue(0.5 * (lo + hi), k as i64).unwrap();
        assert!((p - 0.5).abs() <= 1e-6, "k={k}: {p}");
    }
}

proptest! {
    #[test]
    fn pvalue_decreases_with_statistic(a in 0.0f64..50.0, b in 0.0f64..50.0, k in 1i64..40) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(wilks_pvalue(lo, k).unwrap() >= wilks_pvalue(hi, k).unwrap());
    }

    #[test]
    fn xi_requires_nesting(ll in -1e6f64..0.0, d in 0i64..1000, extra in 0i64..1000) {
        prop_assert!(explanatory_power(ll, ll + 1.0, d + extra, d).is_err());
        if extra > 0 {
            let xi = explanatory_power(ll, ll + extra as f64 / 2.0, d, d + extra).unwrap();
            prop_assert!(xi.abs() < 1e-9);
        }
    }
}

#[test]
fn table_xi_examples() {
    let xi = explanatory_power(-512.49e6, -426.67e6, 0, 45).unwrap();
    assert!((xi / 1.809e7 - 1.0).abs() < 1e-3, "{xi}");
    let xi = explanatory_power(-407.91e6, -407.90e6, 0, 32940).unwrap();
    assert!((xi + 50.4).abs() < 0.05, "{xi}");
}

#[test]
fn table_path_and_aic_bic() {
    let lattice = table();
    assert_eq!(lattice.nodes.len(), 25);
    let path = greedy_path(&lattice, 1.65).unwrap();
    let axes: Vec<Axis> = path.moves.iter().map(|m| m.axis).collect();
    use Axis::{Dissipator as D, Hamiltonian as H};
    assert_eq!(axes, [D, H, H, H, H, D, D]);
    assert_eq!(path.stop, LatticeNode::new(Level::ThreeLocal, Level::A2a));
    for m in &path.moves {
        assert!(m.xi > 1.65);
        assert_eq!(m.two_delta_ll, 2.0 * (lattice.nodes[&m.to].ll - lattice.nodes[&m.from].ll));
    }
    assert!(path.frontier.iter().all(|c| c.xi <= 1.65));
    // the winning node has the smallest AIC and BIC on the table
    let n_obs = 796_262_400;
    let best = |pick: fn((f64, f64)) -> f64| {
        lattice
            .nodes
            .iter()
            .min_by(|a, b| {
                let fa = pick(aic_bic(-a.1.ll, a.1.dof, n_obs).unwrap());
                let fb = pick(aic_bic(-b.1.ll, b.1.dof, n_obs).unwrap());
                fa.total_cmp(&fb)
            })
            .map(|(n, _)| *n)
            .unwrap()
    };
    let aic_best = best(|x| x.0);
    let bic_best = best(|x| x.1);
    assert_eq!(aic_best.diss, Level::A2a);
    assert_eq!(bic_best.diss, Level::A2a);
}

#[test]
fn higher_threshold_stops_earlier() {
    let lattice = table();
    let full = greedy_path(&lattice, 1.65).unwrap();
    let strict = greedy_path(&lattice, 1e6).unwrap();
    assert!(strict.moves.len() < full.moves.len());
    assert_eq!(&full.moves[..strict.moves.len()], &strict.moves[..]);
    assert!(greedy_path(&lattice, f64::INFINITY).unwrap().moves.is_empty());
}

#[test]
fn missing_grid_node_is_an_error() {
    let mut lattice = table();
    lattice.nodes.remove(&LatticeNode::new(Level::Nn, Level::Nn));
    assert!(greedy_path(&lattice, 1.65).is_err());
}
