mod common;

use common::{load_model, mode_residual_fd, MODEL_FIXTURES};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slds_core::linalg::C64;
use slds_core::polymat::{self, PolyMatrix};
use slds_core::statespace;

fn max_modulus(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn eigenvalues_of_a_are_roots_of_det() {
    for name in MODEL_FIXTURES {
        let model = load_model(name);
        for (k, re) in model.realizations.iter().enumerate() {
            let mut roots = model.mode_roots(k).unwrap();
            let eig: Vec<C64> = re.a.complex_eigenvalues().iter().copied().collect();
            assert_eq!(roots.len(), eig.len(), "{name} mode {}", k + 1);
            for z in eig {
                let (i, d) = roots
                    .iter()
                    .enumerate()
                    .map(|(i, y)| (i, (y - z).norm() / (1.0 + z.norm())))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                assert!(d < 1e-6, "{name} mode {}: eigenvalue {z} unmatched ({d:.2e})", k + 1);
                roots.swap_remove(i);
            }
        }
    }
}

#[test]
fn eigenstructure_columns_are_eigenvectors() {
    for name in MODEL_FIXTURES {
        let model = load_model(name);
        for (k, re) in model.realizations.iter().enumerate() {
            let Ok(es) = statespace::eigenstructure(&re.r, &re.x) else { continue };
            let a = slds_core::linalg::to_complex(&re.a);
            for (j, lam) in es.lambdas.iter().enumerate() {
                let v = es.v.column(j);
                let res = (&a * v - v * *lam).norm() / (v.norm() * (1.0 + lam.norm()));
                assert!(res < 1e-8, "{name} mode {}: residual {res:.2e}", k + 1);
            }
        }
    }
}

#[test]
fn output_map_inverts_state_map() {
    for name in MODEL_FIXTURES {
        let model = load_model(name);
        for (k, re) in model.realizations.iter().enumerate() {
            let cx = re.x.premul(&re.c).unwrap();
            let lhs = polymat::canonical_rep(&cx, &re.r).unwrap();
            let rhs = polymat::canonical_rep(&PolyMatrix::identity(re.w()), &re.r).unwrap();
            assert!(lhs.distance(&rhs) < 1e-9, "{name} mode {}", k + 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn realized_trajectories_solve_the_mode(
        fixture in 0usize..MODEL_FIXTURES.len(),
        mode in 0usize..6,
        x0 in prop::collection::vec(-1.0f64..1.0, 8),
        t in 0.0f64..1.0,
    ) {
        let model = load_model(MODEL_FIXTURES[fixture]);
        let re = &model.realizations[mode % model.n_modes()];
        prop_assume!(re.n() > 0);
        let x0 = DVector::from_iterator(re.n(), x0.into_iter().cycle().take(re.n()));
        prop_assume!(x0.norm() > 1e-3);
        let rate = max_modulus(&re.a).max(1e-3);
        let t = t / rate;
        let w_at = |s: f64| &re.c * statespace::expm_propagate(&re.a, &x0, s);
        let res = mode_residual_fd(&re.r, w_at, t, 1e-2 / rate, 6);
        prop_assert!(res < 1e-5, "residual {res:.2e}");
    }
}
