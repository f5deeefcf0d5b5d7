mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slds_core::polymat::{Poly, PolyMatrix};
use slds_core::qdf::{self, TwoVarForm};

fn form(w: usize, len: usize) -> impl Strategy<Value = TwoVarForm> {
    prop::collection::vec(-2.0f64..2.0, (w * len) * (w * len))
        .prop_map(move |v| TwoVarForm::from_tilde(w, DMatrix::from_vec(w * len, w * len, v)))
}

/// Polynomial trajectory `w(t) = Σ c_k t^k` with derivative stack at `t`.
fn stack(coeffs: &[DVector<f64>], t: f64, n: usize) -> Vec<DVector<f64>> {
    let w = coeffs[0].len();
    (0..n)
        .map(|j| {
            let mut out = DVector::zeros(w);
            for (k, c) in coeffs.iter().enumerate().skip(j) {
                let fall: f64 = ((k - j + 1)..=k).map(|m| m as f64).product();
                out += c * (fall * t.powi((k - j) as i32));
            }
            out
        })
        .collect()
}

fn is_symmetric(f: &TwoVarForm) -> bool {
    let t = f.tilde();
    (t - t.transpose()).amax() <= 1e-12 * t.amax().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivative_matches_finite_difference(
        psi in form(2, 3),
        raw in prop::collection::vec(-1.0f64..1.0, 2 * 6),
        t in -0.5f64..0.5,
    ) {
        let coeffs: Vec<DVector<f64>> = raw.chunks(2).map(DVector::from_column_slice).collect();
        let eval = |s: f64| psi.eval_along_trajectory(&stack(&coeffs, s, 5)).unwrap();
        let h = 1e-3;
        // Fourth-order central difference.
        let fd = (-eval(t + 2.0 * h) + 8.0 * eval(t + h) - 8.0 * eval(t - h) + eval(t - 2.0 * h)) / (12.0 * h);
        let exact = psi.derivative().eval_along_trajectory(&stack(&coeffs, t, 5)).unwrap();
        let scale = exact.abs().max(psi.tilde().amax()).max(1.0);
        prop_assert!((fd - exact).abs() <= 1e-6 * scale, "fd {fd} exact {exact}");
        prop_assert!(is_symmetric(&psi.derivative()));
    }

    #[test]
    fn canonical_expansion_round_trip(k in prop::collection::vec(-3.0f64..3.0, 9), a in 0.5f64..4.0, b in 0.5f64..4.0) {
        // R = (ξ + a)(ξ² + bξ + 1), X = col(1, ξ, ξ²).
        let r = PolyMatrix::from_rows(vec![vec![&Poly::new(vec![a, 1.0]) * &Poly::new(vec![1.0, b, 1.0])]]);
        let x = slds_core::statespace::minimal_state_map(&r).unwrap();
        let k = slds_core::linalg::sym(&DMatrix::from_vec(3, 3, k));
        let psi = TwoVarForm::from_state_kernel(&x, &k);
        let c = qdf::to_canonical(&psi, &x, &r).unwrap();
        prop_assert!((&c.kernel - &k).amax() <= 1e-9 * k.amax().max(1.0));
        prop_assert!(c.to_form().distance(&psi) <= 1e-9 * psi.tilde().amax().max(1.0));
    }

    #[test]
    fn reduction_modulo_mode_is_invisible_on_solutions(
        psi in form(2, 3),
        x0 in prop::collection::vec(-1.0f64..1.0, 4),
        which in 0usize..2,
    ) {
        // Two-variable modes with four-dimensional state spaces.
        let name = ["concond.json", "source_converter_4mode.json"][which];
        let model = common::load_model(name);
        let re = model.realizations.iter().find(|re| re.n() >= 1 && re.w() == 2).unwrap();
        let x0 = DVector::from_iterator(re.n(), x0.into_iter().cycle().take(re.n()));
        let reduced = qdf::qdf_mod(&psi, &re.r).unwrap();
        prop_assert!(is_symmetric(&reduced));
        let len = psi.blocks_len().max(reduced.blocks_len());
        let st: Vec<DVector<f64>> = re.derivative_map(len).iter().map(|m| m * &x0).collect();
        let (a, b) = (psi.eval_along_trajectory(&st).unwrap(), reduced.eval_along_trajectory(&st).unwrap());
        let scale = st.iter().map(|v| v.norm_squared()).sum::<f64>() * psi.tilde().amax();
        prop_assert!((a - b).abs() <= 1e-8 * scale.max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn sym_product_is_symmetric() {
    let m = PolyMatrix::from_coeffs(&[&[&[1.0, 2.0], &[0.0, 0.0, 1.0]], &[&[3.0], &[1.0, 1.0]]]);
    let n = PolyMatrix::from_coeffs(&[&[&[0.5], &[2.0, 1.0]], &[&[1.0, 0.0, 1.0], &[4.0]]]);
    let f = TwoVarForm::sym_product(&m, &n).unwrap();
    assert!(is_symmetric(&f));
    assert!(is_symmetric(&TwoVarForm::gram(&m)));
}
