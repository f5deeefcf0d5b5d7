//! Minimal state maps, first-order realizations and mode eigenstructure
//! for autonomous behaviors `ker R(d/dt)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::polymat::{canonical_rep, column_reduce, Poly, PolyMatrix};

/// Relative residual accepted for coefficient-matching identities.
pub const MATCH_TOL: f64 = 1e-9;
/// Relative distance under which roots of `det R` are grouped.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Relative singular value under which `R(λ)` is considered rank deficient.
pub const KERNEL_TOL: f64 = 1e-7;

/// Polynomial matrix whose rows form a basis of `{f : f R⁻¹ strictly proper}`.
///
/// Rows are ordered by column index of the column-reduced form, then by
/// ascending power.
pub fn minimal_state_map(r: &PolyMatrix) -> Result<PolyMatrix> {
    let cr = column_reduce(r)?;
    let degs = cr.col_degrees();
    let w = r.ncols();
    let mut rows = Vec::new();
    for (i, &d) in degs.iter().enumerate() {
        for k in 0..d {
            let mut row = vec![Poly::zero(); w];
            row[i] = Poly::monomial(1.0, k);
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Ok(PolyMatrix::zeros(0, w));
    }
    let basis = PolyMatrix::from_rows(rows).mul(&cr.u_inv)?;
    canonical_rep(&basis, r)
}

/// Expresses `G mod R` in the row basis of `X`: returns `F` with
/// `F·X = G mod R`.
pub fn express_in_state_basis(g: &PolyMatrix, x: &PolyMatrix, r: &PolyMatrix) -> Result<DMatrix<f64>> {
    if g.ncols() != r.ncols() || x.ncols() != r.ncols() {
        return Err(Error::Dimension {
            op: "express_in_state_basis",
            left: g.shape(),
            right: x.shape(),
        });
    }
    let gc = canonical_rep(g, r)?;
    if x.nrows() == 0 {
        let scale = gc.max_abs();
        if scale > 0.0 {
            return Err(Error::Residual {
                what: "expression in an empty state basis".into(),
                residual: 1.0,
                tol: MATCH_TOL,
            });
        }
        return Ok(DMatrix::zeros(g.nrows(), 0));
    }
    let len = gc.degree().max(x.degree()).map_or(1, |d| d + 1);
    let s = r.natural_scale();
    let xt = x.rescale(s).coeff_stack(len);
    let gt = gc.rescale(s).coeff_stack(len);
    let (f, res) = linalg::solve_rows(&xt, &gt);
    let scale = linalg::max_abs(&gt).max(linalg::max_abs(&(&f * &xt))).max(1e-300);
    let rel = if gt.nrows() == 0 { 0.0 } else { res / scale };
    if rel > MATCH_TOL * (1.0 + (gt.nrows() * gt.ncols()) as f64).sqrt() {
        return Err(Error::Residual {
            what: "expression in the state-map basis".into(),
            residual: rel,
            tol: MATCH_TOL,
        });
    }
    Ok(f)
}

/// `ξX = AX + BR` and `w = Cx` for one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRealization {
    pub r: PolyMatrix,
    pub x: PolyMatrix,
    #[serde(with = "linalg::rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub c: DMatrix<f64>,
}

impl StateRealization {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn w(&self) -> usize {
        self.r.ncols()
    }

    /// `[C; CA; …; CA^{k−1}]`, mapping the state to the derivative stack
    /// of the external variables.
    pub fn derivative_map(&self, k: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(k);
        let mut m = self.c.clone();
        for _ in 0..k {
            out.push(m.clone());
            m = &m * &self.a;
        }
        out
    }

    /// Relative residual of `Σ_j R_j C A^j = 0`, the statement that
    /// `w = Cx` solves the mode equations.
    pub fn output_identity_residual(&self) -> f64 {
        let len = self.r.degree().map_or(1, |d| d + 1);
        let maps = self.derivative_map(len);
        let mut acc = DMatrix::zeros(self.w(), self.n());
        let mut scale = 0.0f64;
        for (j, m) in maps.iter().enumerate() {
            let t = self.r.coeff(j) * m;
            scale = scale.max(linalg::max_abs(&t));
            acc += t;
        }
        linalg::max_abs(&acc) / scale.max(1e-300)
    }
}

/// Solves the coefficient-matching system for `A`, `B`, `C`.
pub fn realize(r: &PolyMatrix, x: &PolyMatrix) -> Result<StateRealization> {
    let w = r.ncols();
    let det = r.determinant()?;
    let n_expected = det.degree().ok_or(Error::Singular)?;
    if x.ncols() != w {
        return Err(Error::Dimension {
            op: "realize",
            left: r.shape(),
            right: x.shape(),
        });
    }
    let n = x.nrows();
    if n != n_expected {
        return Err(Error::Invalid(format!(
            "state map has {n} rows but deg det R = {n_expected}"
        )));
    }
    let lr = r.degree().unwrap_or(0);
    let len = lr.max(x.degree().map_or(0, |d| d + 1)) + 1;
    // Solve in τ = ξ/s: τX(sτ) = (A/s)X(sτ) + (B/s)R(sτ).
    let s = r.natural_scale();
    let (xr, rr) = (x.rescale(s), r.rescale(s));
    let xs = xr.map(|p| p.shift(1));
    let xt = xr.coeff_stack(len);
    let rt = rr.coeff_stack(len);
    let target = xs.coeff_stack(len);
    let mut stacked = DMatrix::zeros(n + w, w * len);
    stacked.rows_mut(0, n).copy_from(&xt);
    stacked.rows_mut(n, w).copy_from(&rt);
    let (ab, res) = linalg::solve_rows(&stacked, &target);
    let scale = linalg::max_abs(&target).max(1e-300);
    if res / scale > MATCH_TOL * ((n * w * len) as f64).sqrt().max(1.0) {
        return Err(Error::Residual {
            what: "state map does not satisfy ξX = AX + BR".into(),
            residual: res / scale,
            tol: MATCH_TOL,
        });
    }
    let a = ab.columns(0, n) * s;
    let b = ab.columns(n, w) * s;
    let c = express_in_state_basis(&PolyMatrix::identity(w), x, r)?;
    Ok(StateRealization {
        r: r.clone(),
        x: x.clone(),
        a,
        b,
        c,
    })
}

/// Characteristic frequencies with kernel directions and the matrix
/// `V = [X(λ_1)w_1 … X(λ_n)w_n]`.
#[derive(Clone, Debug)]
pub struct ModeEigenstructure {
    pub lambdas: Vec<C64>,
    pub directions: Vec<DVector<C64>>,
    pub v: DMatrix<C64>,
    pub condition: f64,
}

fn normalize_phase(v: &mut DVector<C64>) {
    let n = v.norm();
    if n == 0.0 {
        return;
    }
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, z)| if z.norm() > bv * (1.0 + 1e-9) { (i, z.norm()) } else { (bi, bv) });
    let phase = v[imax] / v[imax].norm();
    *v /= phase * C64::new(n, 0.0);
}

/// Groups roots, computes kernel directions and assembles `V`.
///
/// Fails when a root's algebraic multiplicity differs from the
/// dimension of `ker R(λ)` or when `V` is numerically singular.
pub fn eigenstructure(r: &PolyMatrix, x: &PolyMatrix) -> Result<ModeEigenstructure> {
    eigenstructure_for_mode(r, x, 0)
}

pub(crate) fn eigenstructure_for_mode(r: &PolyMatrix, x: &PolyMatrix, mode: usize) -> Result<ModeEigenstructure> {
    let det = r.determinant()?;
    if det.is_zero() {
        return Err(Error::Singular);
    }
    let roots = det.roots()?;
    let n = roots.len();
    if x.nrows() != n {
        return Err(Error::Invalid(format!(
            "state map has {} rows but deg det R = {n}",
            x.nrows()
        )));
    }
    // cluster roots
    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for z in roots {
        let tol = CLUSTER_TOL * z.norm().max(1.0);
        match clusters.iter_mut().find(|c| (c[0] - z).norm() <= tol) {
            Some(c) => c.push(z),
            None => clusters.push(vec![z]),
        }
    }
    let mut lambdas = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    for c in &clusters {
        let m = c.len();
        let mut lam = c.iter().sum::<C64>() / m as f64;
        if lam.im < 0.0 {
            continue;
        }
        if lam.im.abs() <= 1e-12 * lam.norm() {
            lam.im = 0.0;
        }
        let rl = r.eval_c(lam);
        let mag: f64 = (0..=r.degree().unwrap_or(0))
            .map(|k| r.coeff(k).norm() * lam.norm().powi(k as i32))
            .sum();
        let ns = linalg::null_space_c(&rl, KERNEL_TOL * mag);
        if ns.ncols() != m {
            return Err(Error::Multiplicity {
                mode,
                root: linalg::fmt_c(lam),
                algebraic: m,
                geometric: ns.ncols(),
            });
        }
        for j in 0..m {
            let mut w: DVector<C64> = ns.column(j).into_owned();
            normalize_phase(&mut w);
            if lam.im > 0.0 {
                lambdas.push(lam.conj());
                dirs.push(w.map(|z| z.conj()));
            }
            lambdas.push(lam);
            dirs.push(w);
        }
    }
    // ascending real part, then imaginary part
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (lambdas[i], lambdas[j]);
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    let lambdas: Vec<C64> = order.iter().map(|&i| lambdas[i]).collect();
    let dirs: Vec<DVector<C64>> = order.iter().map(|&i| dirs[i].clone()).collect();
    let cols: Vec<DVector<C64>> = lambdas
        .iter()
        .zip(&dirs)
        .map(|(&l, w)| x.eval_c(l) * w)
        .collect();
    let v = if cols.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let condition = if n == 0 {
        1.0
    } else {
        let s = v.singular_values();
        let smax = s.iter().fold(0.0f64, |a, &b| a.max(b));
        let smin = s.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if smin == 0.0 {
            f64::INFINITY
        } else {
            smax / smin
        }
    };
    if !(condition < 1e12) {
        return Err(Error::Residual {
            what: format!("V matrix of mode {mode} is singular"),
            residual: condition,
            tol: 1e12,
        });
    }
    Ok(ModeEigenstructure {
        lambdas,
        directions: dirs,
        v,
        condition,
    })
}

/// `e^{A·dt} x0` by scaling and squaring.
pub fn expm_propagate(a: &DMatrix<f64>, x0: &DVector<f64>, dt: f64) -> DVector<f64> {
    if dt == 0.0 || a.nrows() == 0 {
        return x0.clone();
    }
    (a * dt).exp() * x0
}
