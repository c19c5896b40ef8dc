use lindlearn::linalg::{max_abs, trace};
use lindlearn::pauli::{enumerate_block_basis, Pauli, PauliString};
use lindlearn::{CMatrix, C64};
use proptest::prelude::*;

fn letter() -> impl Strategy<Value = Pauli> {
    prop_oneof![Just(Pauli::I), Just(Pauli::X), Just(Pauli::Y), Just(Pauli::Z)]
}

/// A local string and an increasing placement into a larger register.
fn embedding() -> impl Strategy<Value = (PauliString, Vec<usize>, usize)> {
    (1usize..=3, 0usize..=2).prop_flat_map(|(k, extra)| {
        let n = k + extra;
        (
            proptest::collection::vec(letter(), k),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            Just(n),
        )
            .prop_map(move |(letters, perm, n)| {
                let mut targets = perm[..k].to_vec();
                targets.sort_unstable();
                (PauliString::new(letters).unwrap(), targets, n)
            })
    })
}

proptest! {
    #[test]
    fn embedded_strings_square_to_identity((p, targets, n) in embedding()) {
        let m = p.embed(&targets, n).unwrap().to_matrix();
        let dim = 1 << n;
        prop_assert!(max_abs(&(&m * &m - CMatrix::identity(dim, dim))) <= 1e-14);
        let tr = trace(&m);
        if p.weight() == 0 {
            prop_assert!((tr - C64::new(dim as f64, 0.0)).norm() <= 1e-12);
        } else {
            prop_assert!(tr.norm() <= 1e-12);
        }
    }

    #[test]
    fn sparse_form_matches_dense((p, targets, n) in embedding()) {
        let e = p.embed(&targets, n).unwrap();
        prop_assert!(max_abs(&(e.sparse().to_dense() - e.to_matrix())) == 0.0);
    }

    #[test]
    fn embedding_preserves_support((p, targets, n) in embedding()) {
        let e = p.embed(&targets, n).unwrap();
        prop_assert_eq!(e.weight(), p.weight());
        for (q, letter) in p.support() {
            prop_assert_eq!(e.letters()[targets[q]], letter);
        }
    }
}

#[test]
fn block_basis_is_hilbert_schmidt_orthogonal() {
    for k in 1..=3 {
        let basis = enumerate_block_basis(k).unwrap();
        assert_eq!(basis.len(), 4usize.pow(k as u32) - 1);
        let mats: Vec<CMatrix> = basis.strings.iter().map(PauliString::to_matrix).collect();
        let dim = (1usize << k) as f64;
        for (i, a) in mats.iter().enumerate() {
            for (j, b) in mats.iter().enumerate() {
                let ip = trace(&(a.adjoint() * b));
                let want = if i == j { dim } else { 0.0 };
                assert!((ip - C64::new(want, 0.0)).norm() <= 1e-12, "k={k} ({i},{j})");
            }
        }
    }
}

#[test]
fn block_basis_order_is_weight_then_lexicographic() {
    let basis = enumerate_block_basis(2).unwrap();
    let weights: Vec<usize> = basis.strings.iter().map(PauliString::weight).collect();
    assert!(weights.windows(2).all(|w| w[0] <= w[1]));
    let labels: Vec<String> = basis.strings.iter().map(PauliString::label).collect();
    assert_eq!(&labels[..6], ["XI", "YI", "ZI", "IX", "IY", "IZ"]);
    assert_eq!(labels[6], "XX");
    assert_eq!(labels[14], "ZZ");
}
