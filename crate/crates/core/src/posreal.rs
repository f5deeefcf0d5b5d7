//! Strict positive-realness, polynomial spectral factorization, standard
//! two-mode systems and the storage-function construction of multiple
//! Lyapunov functions, with positive-real completion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::mlf::{self, CertificateStatus, KernelMap, MlfCertificate, MlfReport, Route, VerifyTolerance};
use crate::model::{GluingSpec, ModelSpec, SldsModel};
use crate::polymat::{self, Poly, PolyMatrix};
use crate::qdf::{self, TwoVarForm};
use crate::sdp::{self, LmiBackend, LmiProblem, SolveOptions, VarKind};
use crate::statespace;

/// Imaginary-axis tolerance for roots, relative to `1 + |z|`.
const AXIS_TOL: f64 = 1e-7;
/// Relative tolerance for residual checks of exact polynomial identities.
const IDENTITY_TOL: f64 = 1e-8;

/// Why a rational matrix fails the strict positive-real test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SprWitness {
    /// Pole in the closed right half-plane.
    Pole { re: f64, im: f64 },
    /// Frequency where `G(−jω)ᵀ + G(jω)` is not positive definite.
    Frequency { omega: f64, min_eig: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprCheck {
    pub positive_real: bool,
    pub witness: Option<SprWitness>,
    /// `D(−ξ)ᵀN(ξ) + N(−ξ)ᵀD(ξ)`.
    pub boundary: PolyMatrix,
}

/// `D(−ξ)ᵀN(ξ) + N(−ξ)ᵀD(ξ)`.
pub fn boundary_polynomial(n: &PolyMatrix, d: &PolyMatrix) -> Result<PolyMatrix> {
    let a = d.reflect().transpose().mul(n)?;
    let b = n.reflect().transpose().mul(d)?;
    a.add(&b)
}

/// Taylor coefficients `p^(j)(z)/j!`, `j < m`, by repeated synthetic division.
fn taylor_at(p: &Poly, z: C64, m: usize) -> Vec<C64> {
    let mut c: Vec<C64> = p.coeffs().iter().map(|&v| C64::new(v, 0.0)).collect();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        if c.is_empty() {
            out.push(C64::new(0.0, 0.0));
            continue;
        }
        let mut q = vec![C64::new(0.0, 0.0); c.len().saturating_sub(1)];
        let mut acc = C64::new(0.0, 0.0);
        for i in (0..c.len()).rev() {
            acc = acc * z + c[i];
            if i > 0 {
                q[i - 1] = acc;
            }
        }
        out.push(acc);
        c = q;
    }
    out
}

/// Order of vanishing of `p` at `z`, capped at `m`.
fn vanishing_order(p: &Poly, z: C64, m: usize) -> usize {
    let scale: f64 = p
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * (1.0 + z.norm()).powi(k as i32))
        .sum();
    if scale == 0.0 {
        return m;
    }
    taylor_at(p, z, m)
        .iter()
        .take_while(|c| c.norm() <= 1e-7 * scale)
        .count()
}

fn hermitian_min_eig(h: &DMatrix<C64>) -> f64 {
    linalg::min_eig(&linalg::realify(&(h + h.adjoint()).map(|z| z * 0.5)))
}

/// Imaginary-axis roots of `det`, as nonnegative frequencies.
fn axis_frequencies(det: &Poly) -> Result<Vec<f64>> {
    if det.degree().unwrap_or(0) == 0 {
        return Ok(Vec::new());
    }
    let mut out: Vec<f64> = det
        .roots()?
        .into_iter()
        .filter(|z| z.re.abs() <= AXIS_TOL * (1.0 + z.norm()))
        .map(|z| z.im.abs())
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    Ok(out)
}

/// Strict positive-realness of `N·D⁻¹`: no poles in the closed right
/// half-plane and `G(−jω)ᵀ + G(jω) ≻ 0` for every real `ω`, decided on
/// the boundary polynomial `D(−jω)ᵀN(jω) + N(−jω)ᵀD(jω)`.
pub fn is_strictly_positive_real(n: &PolyMatrix, d: &PolyMatrix) -> Result<SprCheck> {
    if n.ncols() != d.nrows() || d.nrows() != d.ncols() {
        return Err(Error::Dimension {
            op: "positive-real test",
            left: n.shape(),
            right: d.shape(),
        });
    }
    let det = d.determinant()?;
    if det.is_zero() {
        return Err(Error::Singular);
    }
    let boundary = boundary_polynomial(n, d)?;
    let fail = |w: SprWitness, boundary: PolyMatrix| SprCheck {
        positive_real: false,
        witness: Some(w),
        boundary,
    };

    // Poles: roots of det D not cancelled by every entry of N·adj D.
    if det.degree().unwrap_or(0) > 0 {
        let num = n.mul(&d.adjugate()?)?;
        let roots = det.roots()?;
        for z in &roots {
            if z.re < -AXIS_TOL * (1.0 + z.norm()) {
                continue;
            }
            let mult = roots.iter().filter(|y| (*y - z).norm() <= 1e-5 * (1.0 + z.norm())).count();
            if num.entries().iter().any(|p| vanishing_order(p, *z, mult) < mult) {
                return Ok(fail(SprWitness::Pole { re: z.re, im: z.im }, boundary));
            }
        }
    }

    let at = |omega: f64| hermitian_min_eig(&boundary.eval_c(C64::new(0.0, omega)));
    let scale = boundary.max_abs().max(1e-300);
    let m0 = at(0.0);
    if !(m0 > 1e-12 * scale) {
        return Ok(fail(SprWitness::Frequency { omega: 0.0, min_eig: m0 }, boundary));
    }
    let bdet = boundary.determinant()?;
    if let Some(&omega) = axis_frequencies(&bdet)?.first() {
        return Ok(fail(SprWitness::Frequency { omega, min_eig: at(omega) }, boundary));
    }
    Ok(SprCheck {
        positive_real: true,
        witness: None,
        boundary,
    })
}

/// `Q` with `Q(−ξ)ᵀQ(ξ) = Φ(−ξ,ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFactor {
    pub q: PolyMatrix,
    /// `‖Q(−ξ)ᵀQ(ξ) − Φ‖ / ‖Φ‖` over the coefficients.
    pub residual: f64,
}

fn para_hermitian_check(phi: &PolyMatrix) -> Result<()> {
    let (r, c) = phi.shape();
    if r != c {
        return Err(Error::NotSquare {
            op: "spectral factorization",
            rows: r,
            cols: c,
        });
    }
    let gap = phi.reflect().transpose().distance(phi);
    if gap > 1e-10 * phi.max_abs().max(1e-300) {
        return Err(Error::Invalid(format!(
            "input is not para-Hermitian (Φ(−ξ)ᵀ differs from Φ(ξ) by {gap:.3e})"
        )));
    }
    Ok(())
}

/// Factors a para-Hermitian `Φ(ξ)`, nonnegative on the imaginary axis.
///
/// Scalar inputs are split root by root: each `±λ` pair contributes its
/// left-half-plane member unless `avoid(λ)` is singular, in which case
/// the mirror root is taken so that `col(avoid(λ), Q(λ))` keeps full
/// rank. Inputs with `w = 2` go through the stabilizing solution of the
/// associated Riccati equation; larger `w` is not supported.
pub fn spectral_factorize(phi: &PolyMatrix, avoid: Option<&PolyMatrix>) -> Result<SpectralFactor> {
    para_hermitian_check(phi)?;
    let w = phi.nrows();
    let q = match w {
        0 => PolyMatrix::zeros(0, 0),
        1 => scalar_factor(&phi[(0, 0)], avoid)?,
        2 => riccati_factor(phi)?,
        _ => {
            return Err(Error::NotSupported(format!(
                "spectral factorization for w = {w} (only w <= 2 is implemented)"
            )))
        }
    };
    if let (Some(r1), 2) = (avoid, w) {
        check_rank_with(r1, &q)?;
    }
    let back = q.reflect().transpose().mul(&q)?;
    let residual = back.distance(phi) / phi.max_abs().max(1e-300);
    if residual > IDENTITY_TOL {
        return Err(Error::Residual {
            what: "spectral factor reconstruction".into(),
            residual,
            tol: IDENTITY_TOL,
        });
    }
    Ok(SpectralFactor { q, residual })
}

fn scalar_factor(p: &Poly, avoid: Option<&PolyMatrix>) -> Result<PolyMatrix> {
    let Some(deg) = p.degree() else {
        return Ok(PolyMatrix::zeros(1, 1));
    };
    if deg % 2 == 1 {
        return Err(Error::Invalid("para-Hermitian scalar must have even degree".into()));
    }
    let m = deg / 2;
    let s2 = p.leading() * if m % 2 == 0 { 1.0 } else { -1.0 };
    if s2 <= 0.0 {
        return Err(Error::Indefinite(format!(
            "Φ(jω) tends to {} as ω grows",
            if s2 < 0.0 { "-inf" } else { "0" }
        )));
    }
    let roots = if m == 0 { Vec::new() } else { p.roots()? };
    let mut left = Vec::new();
    let mut axis = Vec::new();
    let mut right = 0usize;
    for z in roots {
        if z.re.abs() <= AXIS_TOL * (1.0 + z.norm()) {
            axis.push(C64::new(0.0, z.im));
        } else if z.re < 0.0 {
            left.push(z);
        } else {
            right += 1;
        }
    }
    if left.len() != right {
        return Err(Error::Invalid(format!(
            "roots are not symmetric about the imaginary axis ({} left, {right} right)",
            left.len()
        )));
    }
    // Axis roots must have even multiplicity for Φ(jω) ≥ 0.
    axis.sort_by(|a, b| a.im.total_cmp(&b.im));
    let mut half = Vec::new();
    let mut i = 0;
    while i < axis.len() {
        let mut j = i;
        while j < axis.len() && (axis[j].im - axis[i].im).abs() <= 1e-4 * (1.0 + axis[i].im.abs()) {
            j += 1;
        }
        let count = j - i;
        if count % 2 == 1 {
            return Err(Error::Indefinite(format!(
                "Φ(jω) changes sign at ω = {:.6e}",
                axis[i].im
            )));
        }
        let mean = axis[i..j].iter().map(|z| z.im).sum::<f64>() / count as f64;
        half.extend(std::iter::repeat_n(C64::new(0.0, mean), count / 2));
        i = j;
    }
    let det_avoid = match avoid {
        Some(r) => Some(r.determinant()?),
        None => None,
    };
    let mut selected = half;
    for z in left {
        let flip = det_avoid.as_ref().is_some_and(|d| {
            let scale: f64 = d
                .coeffs()
                .iter()
                .enumerate()
                .map(|(k, c)| c.abs() * z.norm().powi(k as i32))
                .sum();
            d.eval_c(z).norm() <= 1e-8 * scale.max(1e-300)
        });
        selected.push(if flip { -z } else { z });
    }
    let q = Poly::from_roots(&selected).scale(s2.sqrt());
    Ok(PolyMatrix::from_rows(vec![vec![q]]))
}

/// `col(R₁(λ), Q(λ))` must have full column rank at every zero of `Q`.
fn check_rank_with(r1: &PolyMatrix, q: &PolyMatrix) -> Result<()> {
    let g = q.reflect().transpose().mul(q)?.determinant()?;
    if g.degree().unwrap_or(0) == 0 {
        return Ok(());
    }
    let w = q.ncols();
    for z in g.roots()? {
        if z.re > 0.0 {
            continue;
        }
        let mut stacked = DMatrix::<C64>::zeros(r1.nrows() + q.nrows(), w);
        stacked.view_mut((0, 0), (r1.nrows(), w)).copy_from(&r1.eval_c(z));
        stacked.view_mut((r1.nrows(), 0), (q.nrows(), w)).copy_from(&q.eval_c(z));
        let s = linalg::realify(&stacked).singular_values();
        let smax = s.iter().fold(0.0f64, |a, &b| a.max(b));
        let rank = s.iter().filter(|&&v| v > 1e-8 * smax).count() / 2;
        if rank < w {
            return Err(Error::NotSupported(format!(
                "stabilizing factor loses rank together with R1 at {}; mixed root selection is only implemented for w = 1",
                linalg::fmt_c(z)
            )));
        }
    }
    Ok(())
}

/// Sign function of `h` by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotSupported("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let det = z.clone().lu().determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let diff = (&next - &z).norm();
        z = next;
        if diff <= 1e-13 * z.norm() {
            return Ok(z);
        }
    }
    Ok(z)
}

fn riccati_factor(phi: &PolyMatrix) -> Result<PolyMatrix> {
    let w = phi.nrows();
    let s = phi.natural_scale();
    let ps = phi.rescale(s);
    let deg = ps.degree().unwrap_or(0);
    if deg % 2 == 1 {
        return Err(Error::Invalid("para-Hermitian matrix must have even degree".into()));
    }
    let d = deg / 2;
    let sign = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
    // Ξ(−ξ)ᵀ M Ξ(ξ) = Φ(ξ) with Ξ = col(I, ξI, …, ξ^d I).
    let nb = (d + 1) * w;
    let mut m = DMatrix::zeros(nb, nb);
    for k in 0..=2 * d {
        let c = ps.coeff(k);
        let i = k / 2;
        if k % 2 == 0 {
            m.view_mut((i * w, i * w), (w, w)).copy_from(&(c * sign(i)));
        } else {
            let b = c * (sign(i) * 0.5);
            m.view_mut((i * w, (i + 1) * w), (w, w)).copy_from(&b);
            m.view_mut(((i + 1) * w, i * w), (w, w)).copy_from(&b.transpose());
        }
    }
    let r = m.view((d * w, d * w), (w, w)).into_owned();
    if linalg::min_eig(&r) < 0.0 {
        return Err(Error::Indefinite("Φ(jω) is negative for large ω".into()));
    }
    let rmax = linalg::max_eig(&r);
    if linalg::min_eig(&r) <= 1e-10 * rmax.max(1e-300) {
        return Err(Error::NotSupported(
            "leading coefficient of Φ is singular (unequal column degrees)".into(),
        ));
    }
    let zero = phi.eval(0.0);
    if linalg::min_eig(&zero) < -1e-12 * phi.max_abs() {
        return Err(Error::Indefinite(format!(
            "Φ(0) has eigenvalue {:.3e}",
            linalg::min_eig(&zero)
        )));
    }
    let freqs = axis_frequencies(&ps.determinant()?)?;
    if !freqs.is_empty() {
        let probe = |o: f64| hermitian_min_eig(&ps.eval_c(C64::new(0.0, o)));
        let mut pts: Vec<f64> = freqs.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        pts.push(freqs[freqs.len() - 1] * 2.0 + 1.0);
        if let Some(o) = pts.into_iter().find(|&o| probe(o) < 0.0) {
            return Err(Error::Indefinite(format!("Φ(jω) is indefinite at ω = {:.6e}", o * s)));
        }
        return Err(Error::NotSupported(format!(
            "Φ(jω) is singular at ω = {:.6e}; matrix factorization needs Φ(jω) ≻ 0",
            freqs[0] * s
        )));
    }
    if d == 0 {
        let u = linalg::psd_factor(&r, 1e-14).ok_or_else(|| Error::Indefinite("constant Φ is indefinite".into()))?;
        return Ok(PolyMatrix::from_constant(&u));
    }
    let nx = d * w;
    let mut a = DMatrix::zeros(nx, nx);
    for i in 0..d - 1 {
        a.view_mut((i * w, (i + 1) * w), (w, w)).copy_from(&DMatrix::identity(w, w));
    }
    let mut b = DMatrix::zeros(nx, w);
    b.view_mut(((d - 1) * w, 0), (w, w)).copy_from(&DMatrix::identity(w, w));
    let m11 = m.view((0, 0), (nx, nx)).into_owned();
    let s0 = m.view((0, nx), (nx, w)).into_owned();
    let rinv = r.clone().try_inverse().ok_or(Error::Singular)?;
    let abar = &a - &b * &rinv * s0.transpose();
    let qbar = linalg::sym(&(&m11 - &s0 * &rinv * s0.transpose()));
    let g = &b * &rinv * b.transpose();
    let mut h = DMatrix::zeros(2 * nx, 2 * nx);
    h.view_mut((0, 0), (nx, nx)).copy_from(&abar);
    h.view_mut((0, nx), (nx, nx)).copy_from(&(-&g));
    h.view_mut((nx, 0), (nx, nx)).copy_from(&(-&qbar));
    h.view_mut((nx, nx), (nx, nx)).copy_from(&(-abar.transpose()));
    let sg = matrix_sign(&h)?;
    let proj = DMatrix::identity(2 * nx, 2 * nx) - sg;
    let svd = proj.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::NotSupported("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let basis = DMatrix::from_columns(&order[..nx].iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let u1 = basis.view((0, 0), (nx, nx)).into_owned();
    let u2 = basis.view((nx, 0), (nx, nx)).into_owned();
    let kmat = linalg::sym(&(u2 * u1.try_inverse().ok_or(Error::Singular)?));
    let f = s0.transpose() + b.transpose() * &kmat;
    let eig = r.clone().symmetric_eigen();
    let rhalf_inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eig.eigenvectors.transpose();
    let mut c = DMatrix::zeros(w, nb);
    c.view_mut((0, 0), (w, nx)).copy_from(&(&rhalf_inv * &f));
    c.view_mut((0, nx), (w, w)).copy_from(&(&rhalf_inv * &r));
    Ok(PolyMatrix::from_coeff_stack(&c, w).rescale(1.0 / s))
}

/// Two-mode system with nested state maps and the standard gluing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardSlds {
    pub r1: PolyMatrix,
    pub r2: PolyMatrix,
    pub x2: PolyMatrix,
    pub x1_prime: PolyMatrix,
    pub x1: PolyMatrix,
    /// `X₁′ mod R₂ = Π X₂`.
    #[serde(with = "linalg::rows")]
    pub pi: DMatrix<f64>,
    /// `lim ξ X₁′(ξ) R₁(ξ)⁻¹`.
    #[serde(with = "linalg::rows")]
    pub k_limit: DMatrix<f64>,
    pub pi_residual: f64,
}

/// Builds the standard two-mode system for `R₂R₁⁻¹` strictly proper.
pub fn build_standard_slds(r1: &PolyMatrix, r2: &PolyMatrix) -> Result<StandardSlds> {
    let w = r1.ncols();
    if r1.shape() != (w, w) || r2.shape() != (w, w) {
        return Err(Error::Dimension {
            op: "standard system",
            left: r1.shape(),
            right: r2.shape(),
        });
    }
    if r1.determinant()?.is_zero() || r2.determinant()?.is_zero() {
        return Err(Error::Singular);
    }
    if !polymat::is_strictly_proper(r2, r1)? {
        return Err(Error::Invalid(
            "R2·R1⁻¹ is not strictly proper; the biproper case needs a different gluing and is not handled".into(),
        ));
    }
    let x2 = statespace::minimal_state_map(r2)?;
    let x1_min = statespace::minimal_state_map(r1)?;
    let (n1, n2) = (x1_min.nrows(), x2.nrows());
    if n1 - n2 != w {
        return Err(Error::Invalid(format!(
            "state dimensions {n1} and {n2} differ by {} but should differ by w = {w}",
            n1 - n2
        )));
    }
    // Extend the rows of X₂ to a basis of the mode-1 state space.
    let len = x1_min.degree().max(x2.degree()).map_or(1, |d| d + 1);
    let mut basis = x2.coeff_stack(len);
    let mut extra = Vec::new();
    for i in 0..n1 {
        let row = x1_min.row(i);
        let cand = basis.clone().insert_rows(basis.nrows(), 1, 0.0);
        let mut cand = cand;
        cand.row_mut(basis.nrows()).copy_from(&row.coeff_stack(len).row(0));
        if linalg::rank(&cand, 1e-10) > linalg::rank(&basis, 1e-10) || basis.nrows() == 0 {
            basis = cand;
            extra.push(i);
        }
        if extra.len() == n1 - n2 {
            break;
        }
    }
    let x1_prime = x1_min.select_rows(&extra);
    let x1 = x2.vstack(&x1_prime)?;
    statespace::express_in_state_basis(&x1, &x1_min, r1)?;
    let pi = statespace::express_in_state_basis(&x1_prime, &x2, r2)?;
    let pi_residual = canonical_gap(&x1_prime, &pi, &x2, r2)?;
    let shifted = x1_prime.map(|p| p.shift(1));
    let (_, quo) = polymat::rational_decompose(&shifted, r1)?;
    if quo.degree().unwrap_or(0) > 0 {
        return Err(Error::Invalid("ξ·X1′·R1⁻¹ is not proper".into()));
    }
    let k_limit = quo.coeff(0);
    Ok(StandardSlds {
        r1: r1.clone(),
        r2: r2.clone(),
        x2,
        x1_prime,
        x1,
        pi,
        k_limit,
        pi_residual,
    })
}

/// `‖(G mod R) − F·X‖` relative to `‖G mod R‖`.
fn canonical_gap(g: &PolyMatrix, f: &DMatrix<f64>, x: &PolyMatrix, r: &PolyMatrix) -> Result<f64> {
    let gc = polymat::canonical_rep(g, r)?;
    let fx = x.premul(f)?;
    Ok(gc.distance(&fx) / gc.max_abs().max(1.0))
}

impl StandardSlds {
    pub fn n1(&self) -> usize {
        self.x1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.x2.nrows()
    }

    /// The generic model: mode 1 is `R₁`, mode 2 is `R₂`, with state
    /// maps `X₁ = col(X₂, X₁′)` and `X₂`, and gluing
    /// `col(X₂, X₁′)w(t⁺) = col(X₂, ΠX₂)w(t⁻)` for 2→1 and
    /// `X₂w(t⁺) = X₂w(t⁻)` for 1→2.
    pub fn to_spec(&self) -> Result<ModelSpec> {
        let pix2 = self.x2.premul(&self.pi)?;
        Ok(ModelSpec {
            name: Some("standard two-mode system".into()),
            variables: self.r1.ncols(),
            modes: vec![self.r1.clone(), self.r2.clone()],
            state_maps: Some(vec![Some(self.x1.clone()), Some(self.x2.clone())]),
            gluing: vec![
                GluingSpec {
                    from: 2,
                    to: 1,
                    g_minus: self.x2.vstack(&pix2)?,
                    g_plus: self.x1.clone(),
                },
                GluingSpec {
                    from: 1,
                    to: 2,
                    g_minus: self.x2.clone(),
                    g_plus: self.x2.clone(),
                },
            ],
        })
    }

    pub fn to_model(&self) -> Result<SldsModel> {
        SldsModel::new(self.to_spec()?)
    }

    /// `K̄₂ = col(I, Π)ᵀ K̄₁ col(I, Π)`.
    pub fn reduce_kernel(&self, k1: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.embedding();
        t.transpose() * k1 * t
    }

    fn embedding(&self) -> DMatrix<f64> {
        let (n1, n2) = (self.n1(), self.n2());
        let mut t = DMatrix::zeros(n1, n2);
        t.view_mut((0, 0), (n2, n2)).copy_from(&DMatrix::identity(n2, n2));
        t.view_mut((n2, 0), (n1 - n2, n2)).copy_from(&self.pi);
        t
    }

    /// `‖Ψ₁₂ + ΠᵀΨ₂₂‖` for a mode-1 kernel.
    pub fn block_residual(&self, k1: &DMatrix<f64>) -> f64 {
        let (n1, n2) = (self.n1(), self.n2());
        let p12 = k1.view((0, n2), (n2, n1 - n2));
        let p22 = k1.view((n2, n2), (n1 - n2, n1 - n2));
        (p12 + self.pi.transpose() * p22).norm()
    }

    /// `‖R₂ − Kᵀ(Ψ₁₂ᵀX₂ + Ψ₂₂X₁′)‖ / ‖R₂‖`.
    pub fn r2_identity_residual(&self, k1: &DMatrix<f64>) -> Result<f64> {
        let (n1, n2) = (self.n1(), self.n2());
        let p12 = k1.view((0, n2), (n2, n1 - n2)).into_owned();
        let p22 = k1.view((n2, n2), (n1 - n2, n1 - n2)).into_owned();
        let kt = self.k_limit.transpose();
        let rebuilt = self
            .x2
            .premul(&(&kt * p12.transpose()))?
            .add(&self.x1_prime.premul(&(&kt * p22))?)?;
        Ok(rebuilt.distance(&self.r2) / self.r2.max_abs().max(1e-300))
    }
}

/// Output of the storage-function construction.
#[derive(Clone, Debug)]
pub struct PositiveRealMlf {
    pub certificate: MlfCertificate,
    pub report: MlfReport,
    pub spr: SprCheck,
    pub q: SpectralFactor,
    pub psi1: TwoVarForm,
    pub psi2: TwoVarForm,
    /// Remainder of the division by `ζ+η`.
    pub division_residual: f64,
    /// `‖Ψ₁₂ + ΠᵀΨ₂₂‖`.
    pub block_residual: f64,
    pub r2_identity_residual: f64,
    pub model: SldsModel,
}

/// Storage function of `R₂R₁⁻¹` as a multiple Lyapunov function:
/// `Ψ₁ = (Φ − QᵀQ)/(ζ+η)` with `Φ = R₁ᵀR₂ + R₂ᵀR₁`, `Ψ₂ = Ψ₁ mod R₂`.
pub fn mlf_from_positive_real(s: &StandardSlds) -> Result<PositiveRealMlf> {
    for (i, r) in [&s.r1, &s.r2].into_iter().enumerate() {
        if !r.is_hurwitz()? {
            return Err(Error::NotHurwitz {
                mode: i + 1,
                root: "see det R".into(),
                tol: 0.0,
            });
        }
    }
    let spr = is_strictly_positive_real(&s.r2, &s.r1)?;
    if !spr.positive_real {
        return Err(Error::NotPositiveReal(format!("R2·R1⁻¹ fails: {:?}", spr.witness)));
    }
    let phi = TwoVarForm::sym_product(&s.r1, &s.r2)?;
    let q = spectral_factorize(&phi.on_antidiagonal(), Some(&s.r1))?;
    let (psi1, division_residual) = phi.sub(&TwoVarForm::gram(&q.q))?.div_zeta_plus_eta();
    if division_residual > 1e-9 {
        return Err(Error::Residual {
            what: "division of Φ − QᵀQ by ζ+η".into(),
            residual: division_residual,
            tol: 1e-9,
        });
    }
    let psi2 = qdf::qdf_mod(&psi1, &s.r2)?;
    let k1 = qdf::to_canonical(&psi1, &s.x1, &s.r1)?.kernel;
    let k2 = qdf::to_canonical(&psi2, &s.x2, &s.r2)?.kernel;
    let block_residual = s.block_residual(&k1);
    let r2_identity_residual = s.r2_identity_residual(&k1)?;
    let model = s.to_model()?;
    let mut certificate = MlfCertificate::from_kernels(Route::PositiveReal, mlf::mlf_epsilon(&model), vec![k1, k2]);
    certificate.model = Some(model.resolved_spec());
    let report = mlf::verify_mlf(&model, &certificate, VerifyTolerance::relative(model.tolerances.verify))?;
    certificate.record(&report);
    if !report.passed {
        certificate.status = CertificateStatus::NoCertificateFound;
        certificate.note = Some(mlf::NOT_FOUND_NOTE.into());
    }
    Ok(PositiveRealMlf {
        certificate,
        report,
        spr,
        q,
        psi1,
        psi2,
        division_residual,
        block_residual,
        r2_identity_residual,
        model,
    })
}

/// The structured LMI alternative: `K̄₁ = [[Ψ′ + ΠᵀΨ₂₂Π, −ΠᵀΨ₂₂], [−Ψ₂₂Π, Ψ₂₂]]`
/// and `K̄₂ = Ψ′`, so that the switch conditions hold by construction.
pub fn structured_mlf(s: &StandardSlds, budget: usize) -> Result<(MlfCertificate, MlfReport)> {
    let model = s.to_model()?;
    model.check_hurwitz()?;
    let (n1, n2) = (s.n1(), s.n2());
    let eps = mlf::mlf_epsilon(&model);
    let mut p = LmiProblem::new(eps);
    let pp = p.add_variable("Psi'", VarKind::Symmetric(n2));
    let p22 = p.add_variable("Psi22", VarKind::Symmetric(n1 - n2));
    let ys: Vec<usize> = model
        .realizations
        .iter()
        .enumerate()
        .map(|(k, re)| p.add_variable(mlf::y_name(k), VarKind::Rectangular(re.w(), re.n())))
        .collect();
    let mut e1 = DMatrix::zeros(n2, n1);
    e1.view_mut((0, 0), (n2, n2)).copy_from(&DMatrix::identity(n2, n2));
    let mut g = DMatrix::zeros(n1 - n2, n1);
    g.view_mut((0, 0), (n1 - n2, n2)).copy_from(&(-&s.pi));
    g.view_mut((0, n2), (n1 - n2, n1 - n2)).copy_from(&DMatrix::identity(n1 - n2, n1 - n2));
    let kernels: [KernelMap; 2] = [vec![(pp, e1.clone()), (p22, g.clone())], vec![(pp, DMatrix::identity(n2, n2))]];
    for (k, re) in model.realizations.iter().enumerate() {
        // Non-strict decrease, as in the structured LMI; strictness along
        // trajectories is checked afterwards through observability.
        mlf::add_mode_constraints(&mut p, k, re, &kernels[k], ys[k], false)?;
        mlf::add_positivity_constraint(&mut p, k, re.n(), &kernels[k]);
    }
    for (&(k, l), t) in &model.transitions {
        let lmap = &t.reinit.as_ref().expect("standard gluing is well-posed").l;
        mlf::add_switch_constraint(&mut p, (k, l), &kernels[k], &kernels[l], lmap, None);
    }
    let out = sdp::DefaultBackend.solve(
        &p,
        &SolveOptions {
            budget,
            tol: model.tolerances.verify,
            ..Default::default()
        },
        None,
    )?;
    log::debug!("structured LMI: {:?} after {} iterations {:?}", out.status, out.iterations, out.report);
    let v = &out.assignment;
    let k1 = linalg::sym(&(e1.transpose() * &v[pp] * &e1 + g.transpose() * &v[p22] * &g));
    let k2 = linalg::sym(&v[pp]);
    let mut cert = MlfCertificate::from_kernels(Route::PositiveReal, eps, vec![k1, k2]);
    cert.model = Some(model.resolved_spec());
    cert.solver = Some(mlf::SolverInfo {
        backend: "projections+barrier (structured)".into(),
        status: out.status,
        iterations: out.iterations,
        budget,
        worst_margin: out.report.worst,
    });
    let report = mlf::verify_mlf(&model, &cert, VerifyTolerance::relative(model.tolerances.verify))?;
    cert.record(&report);
    if !(out.is_feasible() && report.passed) {
        cert.status = CertificateStatus::NoCertificateFound;
        cert.note = Some(mlf::NOT_FOUND_NOTE.into());
    }
    Ok((cert, report))
}

#[derive(Clone, Debug)]
pub struct Completion {
    pub m: PolyMatrix,
    pub v: PolyMatrix,
    /// Dissipation factor read off the certificate.
    pub q: PolyMatrix,
    /// Remainder of `V` after right division by `R₂`, relative.
    pub division_residual: f64,
    /// Distance between `V` from the limit formula and `V` solved from
    /// the Lyapunov identity, relative.
    pub identity_residual: f64,
    pub spr: SprCheck,
}

/// Solves `(ζ+η)Ψ₁ + QᵀQ = VᵀR₁ + R₁ᵀV` for `V = ȲX₁` by least squares.
fn solve_v(psi1: &TwoVarForm, q: &PolyMatrix, r1: &PolyMatrix, x1: &PolyMatrix) -> Result<PolyMatrix> {
    let target = psi1.derivative().add(&TwoVarForm::gram(q))?;
    let (w, n) = (r1.ncols(), x1.nrows());
    let len = target
        .blocks_len()
        .max(r1.degree().map_or(1, |d| d + 1))
        .max(x1.degree().map_or(1, |d| d + 2));
    let tt = target.tilde_sized(len);
    let mut cols = Vec::with_capacity(w * n);
    for j in 0..n {
        for i in 0..w {
            let mut e = DMatrix::zeros(w, n);
            e[(i, j)] = 1.0;
            let f = TwoVarForm::sym_product(&x1.premul(&e)?, r1)?.tilde_sized(len);
            cols.push(DVector::from_column_slice(f.as_slice()));
        }
    }
    let a = DMatrix::from_columns(&cols);
    let y = linalg::pinv(&a, 1e-12) * DVector::from_column_slice(tt.as_slice());
    let ybar = DMatrix::from_column_slice(w, n, y.as_slice());
    x1.premul(&ybar)
}

/// Reads `M` with `V = M·R₂` off a certificate for the standard system
/// and confirms `M·R₂·R₁⁻¹` is strictly positive-real.
pub fn positive_real_completion(s: &StandardSlds, cert: &MlfCertificate) -> Result<Completion> {
    let (n1, n2, w) = (s.n1(), s.n2(), s.r1.ncols());
    let k1 = cert
        .modes
        .first()
        .map(|m| linalg::sym(&m.k))
        .ok_or_else(|| Error::Invalid("certificate has no modes".into()))?;
    if k1.shape() != (n1, n1) {
        return Err(Error::Invalid(format!("mode-1 kernel must be {n1}x{n1}")));
    }
    let psi1 = TwoVarForm::from_state_kernel(&s.x1, &k1);
    let diss = qdf::qdf_mod(&psi1.derivative(), &s.r1)?.scale(-1.0);
    let factor = linalg::psd_factor(diss.tilde(), 1e-10).ok_or_else(|| {
        Error::Invalid("hypothesis fails: (ζ+η)Ψ₁ mod R₁ is not of the form −QᵀQ".into())
    })?;
    let q = PolyMatrix::from_coeff_stack(&factor, w);
    let g = q.reflect().transpose().mul(&q)?.determinant()?;
    if g.is_zero() {
        return Err(Error::Invalid("rank hypothesis fails: rank Q(jω) < w for every ω".into()));
    }
    if let Some(&omega) = axis_frequencies(&g)?.first() {
        return Err(Error::Invalid(format!(
            "rank hypothesis fails: rank Q(jω) < w at ω = {omega:.6e}"
        )));
    }
    if !polymat::is_strictly_proper(&q, &s.r1)? {
        return Err(Error::Invalid("hypothesis fails: Q·R₁⁻¹ is not strictly proper".into()));
    }
    // V = Kᵀ Ψ₂₂ P R₂ with X₁′ = (X₁′ mod R₂) + P R₂.
    let p22 = k1.view((n2, n2), (n1 - n2, n1 - n2)).into_owned();
    let (_, p) = polymat::canonical_rep_with_quotient(&s.x1_prime, &s.r2)?;
    let coeff = s.k_limit.transpose() * p22;
    let v = p.premul(&coeff)?.mul(&s.r2)?;
    let (rem, m) = polymat::canonical_rep_with_quotient(&v, &s.r2)?;
    let division_residual = rem.max_abs() / v.max_abs().max(1e-300);
    if division_residual > IDENTITY_TOL {
        return Err(Error::Residual {
            what: "right division of V by R2".into(),
            residual: division_residual,
            tol: IDENTITY_TOL,
        });
    }
    let v_ple = solve_v(&psi1, &q, &s.r1, &s.x1)?;
    let identity_residual = v_ple.distance(&v) / v.max_abs().max(1e-300);
    let spr = is_strictly_positive_real(&m.mul(&s.r2)?, &s.r1)?;
    if !spr.positive_real {
        return Err(Error::NotPositiveReal(format!("M·R2·R1⁻¹ fails: {:?}", spr.witness)));
    }
    Ok(Completion {
        m,
        v,
        q,
        division_residual,
        identity_residual,
        spr,
    })
}

/// Whether `M·R₂·R₁⁻¹` is strictly positive-real.
pub fn check_completion(m: &PolyMatrix, r2: &PolyMatrix, r1: &PolyMatrix) -> Result<bool> {
    Ok(is_strictly_positive_real(&m.mul(r2)?, r1)?.positive_real)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(c: &[f64]) -> PolyMatrix {
        PolyMatrix::from_coeffs(&[&[c]])
    }

    fn r1() -> PolyMatrix {
        scalar(&[2.0, 3.0, 1.0])
    }

    fn r2() -> PolyMatrix {
        scalar(&[3.0, 1.0])
    }

    #[test]
    fn spr_scalar_fixture() {
        let c = is_strictly_positive_real(&r2(), &r1()).unwrap();
        assert!(c.positive_real);
        assert!(c.boundary.distance(&scalar(&[12.0])) < 1e-12, "{:?}", c.boundary);
    }

    #[test]
    fn spr_unstable_pole() {
        let c = is_strictly_positive_real(&scalar(&[1.0]), &scalar(&[-1.0, 1.0])).unwrap();
        assert!(!c.positive_real);
        assert!(matches!(c.witness, Some(SprWitness::Pole { re, .. }) if (re - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spr_sign_change() {
        let c = is_strictly_positive_real(&scalar(&[-3.0, 1.0]), &r1()).unwrap();
        assert!(!c.positive_real);
        assert!(matches!(c.witness, Some(SprWitness::Frequency { .. })));
        // Boundary is 12ω² − 12 on the axis: negative at 0, positive far out.
        assert!(c.boundary.distance(&scalar(&[-12.0, 0.0, -12.0])) < 1e-12);
    }

    #[test]
    fn spr_cancelled_right_half_plane_root() {
        // (ξ−1)/((ξ−1)(ξ+1)) has no pole at 1.
        let n = scalar(&[-1.0, 1.0]);
        let d = scalar(&[-1.0, 0.0, 1.0]);
        let c = is_strictly_positive_real(&n, &d).unwrap();
        assert!(!matches!(c.witness, Some(SprWitness::Pole { .. })), "{:?}", c.witness);
    }

    #[test]
    fn spr_singular_denominator() {
        assert!(matches!(
            is_strictly_positive_real(&scalar(&[1.0]), &scalar(&[])),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn factor_constant() {
        let f = spectral_factorize(&scalar(&[12.0]), None).unwrap();
        assert!((f.q[(0, 0)].coeff(0).abs() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn factor_quadratic_prefers_left_root() {
        let f = spectral_factorize(&scalar(&[4.0, 0.0, -4.0]), None).unwrap();
        assert!(f.q.distance(&scalar(&[2.0, 2.0])) < 1e-12, "{:?}", f.q);
    }

    #[test]
    fn factor_avoids_common_root() {
        // R₁ vanishes at −1, so the factor takes the mirror root.
        let f = spectral_factorize(&scalar(&[4.0, 0.0, -4.0]), Some(&scalar(&[1.0, 1.0]))).unwrap();
        assert!(f.q.distance(&scalar(&[-2.0, 2.0])) < 1e-12, "{:?}", f.q);
    }

    #[test]
    fn factor_rejects_indefinite() {
        assert!(matches!(spectral_factorize(&scalar(&[-1.0]), None), Err(Error::Indefinite(_))));
        // 1 + ξ² is −ω² + 1 on the axis: changes sign.
        assert!(matches!(
            spectral_factorize(&scalar(&[1.0, 0.0, 1.0]), None),
            Err(Error::Indefinite(_))
        ));
    }

    #[test]
    fn factor_imaginary_axis_double_root() {
        // (1 − ξ²)... here ξ⁴ + 2ξ² + 1 = (ω² − 1)² on the axis.
        let f = spectral_factorize(&scalar(&[1.0, 0.0, 2.0, 0.0, 1.0]), None).unwrap();
        assert!(f.residual < 1e-8, "{f:?}");
    }

    #[test]
    fn factor_two_by_two() {
        // Φ = Q(−ξ)ᵀQ(ξ) for a Hurwitz 2x2 Q.
        let q = PolyMatrix::from_coeffs(&[&[&[2.0, 1.0], &[1.0]], &[&[0.0], &[3.0, 1.0]]]);
        let phi = q.reflect().transpose().mul(&q).unwrap();
        let f = spectral_factorize(&phi, None).unwrap();
        assert!(f.residual < 1e-9);
        assert!(f.q.is_hurwitz().unwrap());
    }

    #[test]
    fn factor_three_by_three_not_supported() {
        assert!(matches!(
            spectral_factorize(&PolyMatrix::identity(3), None),
            Err(Error::NotSupported(_))
        ));
    }

    #[test]
    fn standard_scalar() {
        let s = build_standard_slds(&r1(), &r2()).unwrap();
        assert_eq!(s.x2, scalar(&[1.0]));
        assert_eq!(s.x1_prime, scalar(&[0.0, 1.0]));
        assert!((s.pi[(0, 0)] + 3.0).abs() < 1e-12);
        assert!((s.k_limit[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(s.pi_residual < 1e-12);
    }

    #[test]
    fn standard_rejects_biproper() {
        assert!(build_standard_slds(&r1(), &scalar(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn standard_third_order_gluing() {
        // Monic R₁ of degree 3 and R₂ of degree 2: X₁′ = ξ², Π = −(R₂ coefficients).
        let r1 = scalar(&[6.0, 11.0, 6.0, 1.0]);
        let r2 = scalar(&[2.0, 3.0, 1.0]);
        let s = build_standard_slds(&r1, &r2).unwrap();
        assert_eq!(s.x1_prime, scalar(&[0.0, 0.0, 1.0]));
        assert!((&s.pi - DMatrix::from_row_slice(1, 2, &[-2.0, -3.0])).norm() < 1e-12);
    }

    #[test]
    fn storage_function_kernels() {
        let s = build_standard_slds(&r1(), &r2()).unwrap();
        let out = mlf_from_positive_real(&s).unwrap();
        let k = out.certificate.kernels();
        assert!((&k[0] - DMatrix::from_row_slice(2, 2, &[11.0, 3.0, 3.0, 1.0])).norm() < 1e-8, "{}", k[0]);
        assert!((k[1][(0, 0)] - 2.0).abs() < 1e-8);
        assert!(out.block_residual < 1e-12);
        assert!(out.r2_identity_residual < 1e-8);
        assert_eq!(out.certificate.status, CertificateStatus::Certified, "{}", out.report);
    }

    #[test]
    fn structured_lmi_route() {
        let s = build_standard_slds(&r1(), &r2()).unwrap();
        let (cert, rep) = structured_mlf(&s, 20_000).unwrap();
        assert_eq!(cert.status, CertificateStatus::Certified, "{rep}");
        assert!(s.block_residual(&cert.modes[0].k) < 1e-9 * cert.modes[0].k.norm());
    }

    #[test]
    fn completion_scalar() {
        let s = build_standard_slds(&r1(), &r2()).unwrap();
        let out = mlf_from_positive_real(&s).unwrap();
        let c = positive_real_completion(&s, &out.certificate).unwrap();
        assert!(c.m.distance(&scalar(&[1.0])) < 1e-9, "{:?}", c.m);
        assert!(c.v.distance(&r2()) < 1e-9);
        assert!(c.identity_residual < 1e-8);
        assert!(check_completion(&c.m, &r2(), &r1()).unwrap());
        assert!(!check_completion(&scalar(&[]), &r2(), &r1()).unwrap());
        assert!(!check_completion(&scalar(&[-1.0]), &r2(), &r1()).unwrap());
    }

    #[test]
    fn completion_rejects_rank_deficient_dissipation() {
        // Q = ξ vanishes at ω = 0.
        let s = build_standard_slds(&r1(), &r2()).unwrap();
        let q = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let ple = crate::mlf::solve_ple(&s.r1, &s.x1, &q).unwrap();
        let cert = MlfCertificate::from_kernels(Route::UserSupplied, 1e-7, vec![ple.k, DMatrix::zeros(1, 1)]);
        let err = positive_real_completion(&s, &cert).unwrap_err();
        assert!(err.to_string().contains("rank"), "{err}");
    }
}
