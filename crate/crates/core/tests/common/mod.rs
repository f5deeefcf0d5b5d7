#![allow(dead_code)]

use std::path::PathBuf;

use slds_core::model::{ModelSpec, SldsModel};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).expect("fixture readable")
}

pub fn load_spec(name: &str) -> ModelSpec {
    ModelSpec::from_json(&fixture_text(name)).expect("fixture parses")
}

pub fn load_model(name: &str) -> SldsModel {
    SldsModel::new(load_spec(name)).expect("fixture model valid")
}

pub const MODEL_FIXTURES: &[&str] = &[
    "elcirc.json",
    "concond.json",
    "exmath.json",
    "exmath_identity_gluing.json",
    "source_converter_4mode.json",
    "source_converter_6mode.json",
];

pub fn load_polymatrix(name: &str) -> slds_core::polymat::PolyMatrix {
    serde_json::from_str(&fixture_text(name)).expect("polynomial matrix fixture parses")
}

/// `(R₁, R₂)` pairs with `R₂R₁⁻¹` strictly proper and strictly positive-real.
pub const STANDARD_FIXTURES: &[(&str, &str)] = &[
    ("scalar_r1.json", "scalar_r2.json"),
    ("standard_w2_r1.json", "standard_w2_r2.json"),
];

/// Finite-difference weights for derivatives `0..=order` at `x0` from
/// samples at `xs` (Fornberg's recursion). Row `m` holds the weights of
/// the `m`-th derivative.
pub fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// `‖R(d/dt)w(t)‖` with the derivatives of `w` taken by a centred
/// finite-difference stencil of `2·half + 1` samples spaced `h`, relative
/// to `Σ_j ‖R_j‖‖w^{(j)}‖`.
pub fn mode_residual_fd(
    r: &slds_core::polymat::PolyMatrix,
    w_at: impl Fn(f64) -> nalgebra::DVector<f64>,
    t: f64,
    h: f64,
    half: usize,
) -> f64 {
    let deg = r.degree().unwrap_or(0);
    let xs: Vec<f64> = (0..=2 * half).map(|i| (i as f64 - half as f64) * h).collect();
    let wts = fd_weights(0.0, &xs, deg);
    let samples: Vec<nalgebra::DVector<f64>> = xs.iter().map(|&s| w_at(t + s)).collect();
    let mut total = nalgebra::DVector::zeros(r.nrows());
    let mut scale = 0.0;
    for (j, row) in wts.iter().enumerate() {
        let mut d = nalgebra::DVector::zeros(samples[0].len());
        for (wt, s) in row.iter().zip(&samples) {
            d += s * *wt;
        }
        let rj = r.coeff(j);
        scale += rj.norm() * d.norm();
        total += rj * d;
    }
    total.norm() / scale.max(1e-300)
}
