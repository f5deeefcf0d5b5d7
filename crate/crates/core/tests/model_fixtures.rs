mod common;

use common::{load_model, MODEL_FIXTURES};
use nalgebra::{Complex, DMatrix};
use slds_core::model::{is_consistent, is_well_posed, reinit_maps};
use slds_core::polymat::PolyMatrix;
use slds_core::statespace::{eigenstructure, minimal_state_map};

type C = Complex<f64>;

fn close(a: &DMatrix<f64>, b: &[f64], tol: f64) -> bool {
    let b = DMatrix::from_row_slice(a.nrows(), a.ncols(), b);
    (a - b).norm() < tol
}

fn rel_close(z: C, re: f64, im: f64) -> bool {
    let t = C::new(re, im);
    (z - t).norm() <= 1e-3 * t.norm()
}

#[test]
fn every_fixture_loads_and_realizes() {
    for name in MODEL_FIXTURES {
        let m = load_model(name);
        for (k, r) in m.realizations.iter().enumerate() {
            assert!(r.output_identity_residual() < 1e-9, "{name} mode {}", k + 1);
        }
    }
}

#[test]
fn declared_well_posed_examples() {
    for name in ["elcirc.json", "concond.json", "exmath.json"] {
        assert!(is_well_posed(&load_model(name)).1, "{name}");
    }
}

#[test]
fn controller_example_normal_form() {
    let m = load_model("concond.json");
    let t21 = m.transition(1, 0).unwrap();
    // X₁ is an invertible constant map; F⁺X₁ must equal G⁺.
    let x1 = m.realizations[0].x.coeff(0);
    assert!(close(&(&t21.normal.f_plus * &x1), &[0.0, 1.0, 1.0, 0.0], 1e-12));
    let t12 = m.transition(0, 1).unwrap();
    let x2 = m.realizations[1].x.coeff(0);
    assert!(close(&(&t12.normal.f_plus * &x2), &[1.0, 0.0], 1e-12));
    assert_eq!(m.realizations[0].n(), 2);
    assert_eq!(m.realizations[1].n(), 1);
}

#[test]
fn identity_gluing_is_well_posed_but_inconsistent() {
    let m = load_model("exmath_identity_gluing.json");
    assert!(is_well_posed(&m).1);
    let c = is_consistent(&m);
    assert!(c.values().all(|&b| !b));
}

#[test]
fn circuit_jumps() {
    let m = load_model("elcirc.json");
    let maps = reinit_maps(&m).unwrap();
    assert!((maps[&(1, 0)].l[(0, 0)] - 0.5).abs() < 1e-12);
    assert!((maps[&(0, 1)].l[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn converter_reinit_maps() {
    let m = load_model("source_converter_4mode.json");
    let maps = reinit_maps(&m).unwrap();
    for (k, l) in [(0, 1), (1, 0)] {
        assert!(close(&maps[&(k, l)].l, &[1.0, 0.0, 0.0, 1.0], 1e-9));
    }
    for k in [0, 1] {
        for l in [2, 3] {
            assert!(close(&maps[&(k, l)].l, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1e-9), "{k}->{l}");
            assert!(close(&maps[&(l, k)].l, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1e-9), "{l}->{k}");
        }
    }
    for (k, l) in [(2, 3), (3, 2)] {
        assert!(close(&maps[&(k, l)].l, DMatrix::<f64>::identity(3, 3).as_slice(), 1e-9));
    }
    let c = is_consistent(&m);
    assert!(c.values().all(|&b| b));
}

#[test]
fn converter_characteristic_frequencies() {
    let m = load_model("source_converter_4mode.json");
    let r1 = m.mode_roots(0).unwrap();
    assert!(rel_close(r1[0], -5000.0, 0.0) && rel_close(r1[1], -100.0, 0.0));
    let r2 = m.mode_roots(1).unwrap();
    assert!(rel_close(r2[0], -2550.0, -9695.2) && rel_close(r2[1], -2550.0, 9695.2));
    let r3 = m.mode_roots(2).unwrap();
    assert!(rel_close(r3[0], -2600.0, -9707.7) && rel_close(r3[1], -2600.0, 9707.7));
    assert!(rel_close(r3[2], -100.0, 0.0));
    let r4 = m.mode_roots(3).unwrap();
    assert!(rel_close(r4[0], -2575.0, -13933.0) && rel_close(r4[1], -2575.0, 13933.0));
    assert!(rel_close(r4[2], -149.94, 0.0));
    m.check_hurwitz().unwrap();
}

#[test]
fn converter_eigenvalues_of_a_match_roots() {
    for name in MODEL_FIXTURES {
        let m = load_model(name);
        for k in 0..m.n_modes() {
            let mut roots = m.mode_roots(k).unwrap();
            let mut eig: Vec<C> = m.realizations[k].a.complex_eigenvalues().iter().copied().collect();
            let key = |z: &C| (z.re, z.im);
            roots.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            eig.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            for (a, b) in roots.iter().zip(&eig) {
                assert!((a - b).norm() <= 1e-6 * a.norm().max(1.0), "{name} mode {k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn converter_v1_is_swap() {
    let m = load_model("source_converter_4mode.json");
    let e = eigenstructure(&m.realizations[0].r, &m.realizations[0].x).unwrap();
    for (i, j, v) in [(0, 0, 0.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 0.0)] {
        assert!((e.v[(i, j)].norm() - v).abs() < 1e-12);
        assert!(e.v[(i, j)].im.abs() < 1e-12);
    }
}

fn parallel(a: &[C], b: &[C]) -> f64 {
    let dot: C = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    1.0 - dot.norm() / (na * nb)
}

#[test]
fn converter_v4_matches_reference_columns() {
    let m = load_model("source_converter_4mode.json");
    let e = eigenstructure(&m.realizations[3].r, &m.realizations[3].x).unwrap();
    let real_col = [C::new(0.70796, 0.0), C::new(0.00353, 0.0), C::new(0.70625, 0.0)];
    let cplx_col = [C::new(0.08739, 0.49199), C::new(0.70711, 0.0), C::new(-0.08407, -0.49323)];
    // The reference third column does not equal the conjugate of the second
    // in its last entry; the conjugate is what the eigenstructure implies.
    let conj_col: Vec<C> = cplx_col.iter().map(|z| z.conj()).collect();
    for (j, lam) in e.lambdas.iter().enumerate() {
        let col: Vec<C> = e.v.column(j).iter().copied().collect();
        let target: &[C] = if lam.im.abs() < 1e-9 {
            &real_col
        } else if lam.im > 0.0 {
            &cplx_col
        } else {
            &conj_col
        };
        assert!(parallel(&col, target) < 1e-3, "column {j} for {lam}");
    }
}

#[test]
fn converter_mode3_state_span_contains_reference_row() {
    let m = load_model("source_converter_4mode.json");
    let r3 = &m.realizations[2].r;
    let x = minimal_state_map(r3).unwrap();
    let row = PolyMatrix::from_coeffs(&[&[&[], &[-0.5, -1e-4]]]);
    let f = slds_core::statespace::express_in_state_basis(&row, &x, r3).unwrap();
    assert_eq!(f.ncols(), 3);
}
