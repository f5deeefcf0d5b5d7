mod common;

use std::time::Instant;

use common::load_model;
use nalgebra::DMatrix;
use slds_core::mlf::{self, CertificateStatus, MlfCertificate, MlfOptions, Route, SwitchForm, VerifyTolerance};

fn certify(name: &str, form: SwitchForm) -> MlfCertificate {
    let m = load_model(name);
    let t = Instant::now();
    let c = mlf::certify(&m, &MlfOptions { form, ..Default::default() }).unwrap();
    eprintln!("{name} {form:?}: {:?} in {:?}, solver {:?}", c.status, t.elapsed(), c.solver);
    let rep = mlf::verify_mlf(&m, &c, VerifyTolerance::relative(1e-9)).unwrap();
    eprintln!("{rep}");
    c
}

#[test]
fn circuit_certified() {
    for form in [SwitchForm::Exact, SwitchForm::Conservative] {
        assert_eq!(certify("elcirc.json", form).status, CertificateStatus::Certified);
    }
}

#[test]
fn converter_certified() {
    for name in ["source_converter_4mode.json", "source_converter_6mode.json"] {
        for form in [SwitchForm::Exact, SwitchForm::Conservative] {
            assert_eq!(certify(name, form).status, CertificateStatus::Certified);
        }
    }
}

#[test]
fn averaging_example_certified() {
    assert_eq!(certify("exmath.json", SwitchForm::Exact).status, CertificateStatus::Certified);
}

fn blk(a: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3, 3);
    m.view_mut((0, 0), (2, 2)).copy_from(a);
    m[(2, 2)] = c;
    m
}

#[test]
fn reference_converter_kernels_verify() {
    let k12 = DMatrix::from_row_slice(2, 2, &[0.00123, -0.00002, -0.00002, 0.00112]);
    let m = load_model("source_converter_4mode.json");
    let ks = vec![k12.clone(), k12.clone(), blk(&k12, 0.00121), blk(&k12, 0.00121)];
    let cert = MlfCertificate::from_kernels(Route::UserSupplied, mlf::mlf_epsilon(&m), ks);
    let rep = mlf::verify_mlf(&m, &cert, VerifyTolerance::absolute(1e-4)).unwrap();
    eprintln!("{rep}");
    assert!(rep.passed);

    let k12 = DMatrix::from_row_slice(2, 2, &[0.00127, -0.00002, -0.00002, 0.00126]);
    let m = load_model("source_converter_6mode.json");
    let ks = vec![
        k12.clone(),
        k12.clone(),
        blk(&k12, 0.00131),
        blk(&k12, 0.00131),
        blk(&k12, 0.00382),
        blk(&k12, 0.00382),
    ];
    let cert = MlfCertificate::from_kernels(Route::UserSupplied, mlf::mlf_epsilon(&m), ks);
    let rep = mlf::verify_mlf(&m, &cert, VerifyTolerance::absolute(1e-4)).unwrap();
    eprintln!("{rep}");
    assert!(rep.passed);
}
