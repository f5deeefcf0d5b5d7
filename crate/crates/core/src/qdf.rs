//! Symmetric two-variable polynomial matrices and the quadratic
//! differential forms they induce.
//!
//! A form `Φ(ζ,η) = Σ Φ_hk ζ^h η^k` is stored through its coefficient
//! matrix `Φ̃`, the symmetric block matrix whose `(h,k)` block is `Φ_hk`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::polymat::{canonical_rep, PolyMatrix};

/// Symmetric two-variable polynomial matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoVarForm {
    w: usize,
    tilde: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormJson {
    blocks: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Serialize for TwoVarForm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.blocks_len();
        let blocks = (0..n)
            .map(|h| {
                (0..n)
                    .map(|k| {
                        let b = self.block(h, k);
                        (0..self.w)
                            .map(|i| (0..self.w).map(|j| b[(i, j)]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FormJson { blocks }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TwoVarForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = FormJson::deserialize(d)?;
        let n = raw.blocks.len();
        let w = raw
            .blocks
            .first()
            .and_then(|r| r.first())
            .map_or(0, |b| b.len());
        let mut tilde = DMatrix::zeros(n * w, n * w);
        for (h, row) in raw.blocks.iter().enumerate() {
            if row.len() != n {
                return Err(D::Error::custom("block grid must be square"));
            }
            for (k, b) in row.iter().enumerate() {
                if b.len() != w || b.iter().any(|r| r.len() != w) {
                    return Err(D::Error::custom("blocks must all be w x w"));
                }
                for i in 0..w {
                    for j in 0..w {
                        tilde[(h * w + i, k * w + j)] = b[i][j];
                    }
                }
            }
        }
        let asym = (&tilde - tilde.transpose()).norm();
        if asym > 1e-9 * tilde.norm().max(1.0) {
            return Err(D::Error::custom(format!(
                "form is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        Ok(TwoVarForm::from_tilde(w, tilde))
    }
}

impl TwoVarForm {
    /// Builds from a coefficient matrix, symmetrizing it.
    pub fn from_tilde(w: usize, tilde: DMatrix<f64>) -> Self {
        assert!(w > 0 && tilde.nrows() % w == 0 && tilde.is_square());
        TwoVarForm {
            w,
            tilde: linalg::sym(&tilde),
        }
    }

    pub fn zero(w: usize) -> Self {
        TwoVarForm::from_tilde(w, DMatrix::zeros(w, w))
    }

    /// Constant form `M`.
    pub fn constant(m: &DMatrix<f64>) -> Self {
        TwoVarForm::from_tilde(m.nrows(), m.clone())
    }

    /// `X(ζ)ᵀ K X(η)`.
    pub fn from_state_kernel(x: &PolyMatrix, k: &DMatrix<f64>) -> Self {
        let len = x.degree().map_or(1, |d| d + 1);
        let xt = x.coeff_stack(len);
        TwoVarForm::from_tilde(x.ncols(), xt.transpose() * k * xt)
    }

    /// `M(ζ)ᵀN(η) + N(ζ)ᵀM(η)`.
    pub fn sym_product(m: &PolyMatrix, n: &PolyMatrix) -> Result<Self> {
        if m.shape() != n.shape() {
            return Err(Error::Dimension {
                op: "sym_product",
                left: m.shape(),
                right: n.shape(),
            });
        }
        let len = m.degree().max(n.degree()).map_or(1, |d| d + 1);
        let mt = m.coeff_stack(len);
        let nt = n.coeff_stack(len);
        let p = mt.transpose() * nt;
        Ok(TwoVarForm {
            w: m.ncols(),
            tilde: &p + p.transpose(),
        })
    }

    /// `M(ζ)ᵀ M(η)`.
    pub fn gram(m: &PolyMatrix) -> Self {
        let len = m.degree().map_or(1, |d| d + 1);
        let mt = m.coeff_stack(len);
        TwoVarForm::from_tilde(m.ncols(), mt.transpose() * mt)
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Number of block rows of the stored coefficient matrix.
    pub fn blocks_len(&self) -> usize {
        self.tilde.nrows() / self.w
    }

    pub fn tilde(&self) -> &DMatrix<f64> {
        &self.tilde
    }

    pub fn block(&self, h: usize, k: usize) -> DMatrix<f64> {
        let n = self.blocks_len();
        if h >= n || k >= n {
            return DMatrix::zeros(self.w, self.w);
        }
        self.tilde
            .view((h * self.w, k * self.w), (self.w, self.w))
            .into_owned()
    }

    /// Highest ζ-power with a nonzero block (relative threshold).
    pub fn degree(&self) -> Option<usize> {
        let scale = linalg::max_abs(&self.tilde);
        if scale == 0.0 {
            return None;
        }
        (0..self.blocks_len())
            .rev()
            .find(|&h| {
                (0..self.blocks_len()).any(|k| linalg::max_abs(&self.block(h, k)) > 1e-14 * scale)
            })
    }

    /// Coefficient matrix padded or cut to `len` block rows.
    pub fn tilde_sized(&self, len: usize) -> DMatrix<f64> {
        let n = self.blocks_len().min(len);
        let mut out = DMatrix::zeros(len * self.w, len * self.w);
        out.view_mut((0, 0), (n * self.w, n * self.w))
            .copy_from(&self.tilde.view((0, 0), (n * self.w, n * self.w)));
        out
    }

    /// Drops trailing zero block rows/columns.
    pub fn trimmed(&self) -> Self {
        let len = self.degree().map_or(1, |d| d + 1);
        TwoVarForm::from_tilde(self.w, self.tilde_sized(len))
    }

    fn check_w(&self, op: &'static str, o: &TwoVarForm) -> Result<()> {
        if self.w != o.w {
            return Err(Error::Dimension {
                op,
                left: (self.w, self.w),
                right: (o.w, o.w),
            });
        }
        Ok(())
    }

    pub fn add(&self, o: &TwoVarForm) -> Result<Self> {
        self.check_w("form add", o)?;
        let len = self.blocks_len().max(o.blocks_len());
        Ok(TwoVarForm::from_tilde(
            self.w,
            self.tilde_sized(len) + o.tilde_sized(len),
        ))
    }

    pub fn sub(&self, o: &TwoVarForm) -> Result<Self> {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        TwoVarForm {
            w: self.w,
            tilde: &self.tilde * s,
        }
    }

    /// Largest coefficient difference relative to the larger operand.
    pub fn distance(&self, o: &TwoVarForm) -> f64 {
        if self.w != o.w {
            return f64::INFINITY;
        }
        let len = self.blocks_len().max(o.blocks_len());
        let a = self.tilde_sized(len);
        let b = o.tilde_sized(len);
        let scale = linalg::max_abs(&a).max(linalg::max_abs(&b)).max(1e-300);
        linalg::max_abs(&(a - b)) / scale
    }

    /// Evaluates `Φ(ζ,η)` at complex arguments.
    pub fn eval_c(&self, zeta: C64, eta: C64) -> DMatrix<C64> {
        let n = self.blocks_len();
        let mut out = DMatrix::<C64>::zeros(self.w, self.w);
        for h in 0..n {
            for k in 0..n {
                let c = zeta.powu(h as u32) * eta.powu(k as u32);
                out += linalg::to_complex(&self.block(h, k)) * c;
            }
        }
        out
    }

    /// One-variable restriction `Φ(−ξ, ξ)`.
    pub fn on_antidiagonal(&self) -> PolyMatrix {
        let n = self.blocks_len();
        let mut ms = vec![DMatrix::<f64>::zeros(self.w, self.w); 2 * n - 1];
        for h in 0..n {
            let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
            for k in 0..n {
                ms[h + k] += self.block(h, k) * sign;
            }
        }
        PolyMatrix::from_coeff_matrices(&ms)
    }

    /// Divides by `ζ+η`, returning the quotient and the largest
    /// remainder coefficient relative to the input scale.
    pub fn div_zeta_plus_eta(&self) -> (TwoVarForm, f64) {
        let n = self.blocks_len();
        let w = self.w;
        if n < 2 {
            let scale = linalg::max_abs(&self.tilde);
            return (TwoVarForm::zero(w), if scale > 0.0 { 1.0 } else { 0.0 });
        }
        let m = n - 1;
        let mut q = vec![vec![DMatrix::<f64>::zeros(w, w); m]; m];
        for h in 0..m {
            for k in 0..m {
                // Φ_{h,k+1} = Ψ_{h−1,k+1} + Ψ_{h,k}
                let mut b = self.block(h, k + 1);
                if h > 0 && k + 1 < m {
                    b -= &q[h - 1][k + 1];
                }
                q[h][k] = b;
            }
        }
        let mut tilde = DMatrix::zeros(m * w, m * w);
        for h in 0..m {
            for k in 0..m {
                tilde.view_mut((h * w, k * w), (w, w)).copy_from(&q[h][k]);
            }
        }
        let quot = TwoVarForm::from_tilde(w, tilde);
        let back = quot.derivative();
        let scale = linalg::max_abs(&self.tilde).max(1e-300);
        let resid = linalg::max_abs(&(back.tilde_sized(n) - self.tilde_sized(n))) / scale;
        (quot, resid)
    }

    /// `(ζ+η)·Φ`, the form whose QDF is the time derivative of `Q_Φ`.
    pub fn derivative(&self) -> TwoVarForm {
        let n = self.blocks_len();
        let w = self.w;
        let mut out = DMatrix::zeros((n + 1) * w, (n + 1) * w);
        for h in 0..n {
            for k in 0..n {
                let b = self.block(h, k);
                let mut v = out.view_mut(((h + 1) * w, k * w), (w, w));
                v += &b;
                let mut v = out.view_mut((h * w, (k + 1) * w), (w, w));
                v += &b;
            }
        }
        TwoVarForm { w, tilde: out }
    }

    /// Symmetric rank-revealing factorization `Φ̃ = M̃ᵀ diag(λ) M̃`,
    /// returned as the polynomial rows of `M` with their weights.
    pub fn factor(&self) -> (PolyMatrix, Vec<f64>) {
        let eig = self.tilde.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l.abs() <= 1e-13 * lmax || l == 0.0 {
                continue;
            }
            rows.push(eig.eigenvectors.column(i).transpose());
            weights.push(l);
        }
        if rows.is_empty() {
            return (PolyMatrix::zeros(0, self.w), Vec::new());
        }
        let stack = DMatrix::from_rows(&rows);
        (PolyMatrix::from_coeff_stack(&stack, self.w), weights)
    }

    /// `Σ_hk (d^h w)ᵀ Φ_hk (d^k w)` from a derivative stack
    /// `[w, ẇ, ẅ, …]`.
    pub fn eval_along_trajectory(&self, derivs: &[DVector<f64>]) -> Result<f64> {
        let len = self.degree().map_or(0, |d| d + 1);
        if derivs.len() < len {
            return Err(Error::Invalid(format!(
                "form of degree {} needs {} derivatives, got {}",
                len.saturating_sub(1),
                len,
                derivs.len()
            )));
        }
        if let Some(d) = derivs.iter().find(|d| d.len() != self.w) {
            return Err(Error::Dimension {
                op: "eval_along_trajectory",
                left: (self.w, 1),
                right: (d.len(), 1),
            });
        }
        let mut total = 0.0;
        for h in 0..len {
            for k in 0..len {
                total += derivs[h].dot(&(self.block(h, k) * &derivs[k]));
            }
        }
        Ok(total)
    }
}

/// `R`-canonical representative: every factor row is reduced modulo `R`.
pub fn qdf_mod(phi: &TwoVarForm, r: &PolyMatrix) -> Result<TwoVarForm> {
    if r.ncols() != phi.w() {
        return Err(Error::Dimension {
            op: "qdf_mod",
            left: (phi.w(), phi.w()),
            right: r.shape(),
        });
    }
    let (m, weights) = phi.factor();
    if weights.is_empty() {
        r.determinant().and_then(|d| if d.is_zero() { Err(Error::Singular) } else { Ok(()) })?;
        return Ok(TwoVarForm::zero(phi.w()));
    }
    let red = canonical_rep(&m, r)?;
    let len = red.degree().map_or(1, |d| d + 1);
    let mt = red.coeff_stack(len);
    let d = DMatrix::from_diagonal(&DVector::from_vec(weights));
    Ok(TwoVarForm::from_tilde(phi.w(), mt.transpose() * d * mt).trimmed())
}

/// A QDF written as `X(ζ)ᵀ K̄ X(η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalQdf {
    pub state_map: PolyMatrix,
    #[serde(with = "crate::linalg::rows")]
    pub kernel: DMatrix<f64>,
}

impl CanonicalQdf {
    pub fn to_form(&self) -> TwoVarForm {
        TwoVarForm::from_state_kernel(&self.state_map, &self.kernel)
    }
}

/// Expresses an `R`-canonical form in the basis of products of rows of
/// the state map `X`.
pub fn to_canonical(psi: &TwoVarForm, x: &PolyMatrix, r: &PolyMatrix) -> Result<CanonicalQdf> {
    if x.ncols() != psi.w() || r.ncols() != psi.w() {
        return Err(Error::Dimension {
            op: "to_canonical",
            left: (psi.w(), psi.w()),
            right: x.shape(),
        });
    }
    let len = psi.blocks_len().max(x.degree().map_or(1, |d| d + 1));
    let xt = x.coeff_stack(len);
    let pt = psi.tilde_sized(len);
    let xp = linalg::pinv(&xt, 1e-12);
    let k = linalg::sym(&(xp.transpose() * &pt * &xp));
    let back = xt.transpose() * &k * &xt;
    let scale = linalg::max_abs(&pt).max(1e-300);
    let resid = linalg::max_abs(&(back - &pt)) / scale;
    let tol = 1e-9;
    if linalg::max_abs(&pt) > 0.0 && resid > tol {
        return Err(Error::Residual {
            what: format!("form is not expressible through the state map (mod {} rows)", r.nrows()),
            residual: resid,
            tol,
        });
    }
    Ok(CanonicalQdf {
        state_map: x.clone(),
        kernel: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymat::Poly;

    fn scalar(grid: &[&[f64]]) -> TwoVarForm {
        let n = grid.len();
        TwoVarForm::from_tilde(1, DMatrix::from_fn(n, n, |i, j| grid[i][j]))
    }

    /// ζη + 3ζ + 3η + 11
    fn psi1() -> TwoVarForm {
        scalar(&[&[11.0, 3.0], &[3.0, 1.0]])
    }

    #[test]
    fn derivative_of_constant() {
        let d = TwoVarForm::constant(&DMatrix::from_element(1, 1, 1.0)).derivative();
        assert_eq!(d.tilde(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn derivative_of_psi1() {
        // ζ²η + ζη² + 3ζ² + 3η² + 6ζη + 11ζ + 11η, entries are halves for
        // off-diagonal monomials.
        let d = psi1().derivative();
        let expect = scalar(&[&[0.0, 11.0, 3.0], &[11.0, 6.0, 1.0], &[3.0, 1.0, 0.0]]);
        assert!(d.distance(&expect) < 1e-15);
    }

    #[test]
    fn derivative_then_divide_roundtrip() {
        let (q, r) = psi1().derivative().div_zeta_plus_eta();
        assert!(r < 1e-15);
        assert!(q.distance(&psi1()) < 1e-15);
    }

    #[test]
    fn divide_reports_remainder() {
        let (_, r) = scalar(&[&[1.0, 0.0], &[0.0, 0.0]]).div_zeta_plus_eta();
        assert!(r > 0.5);
    }

    #[test]
    fn mod_scalar_shift() {
        let r = PolyMatrix::from_coeffs(&[&[&[3.0, 1.0]]]);
        let m = qdf_mod(&psi1(), &r).unwrap();
        assert!(m.distance(&TwoVarForm::constant(&DMatrix::from_element(1, 1, 2.0))) < 1e-12);
    }

    #[test]
    fn mod_keeps_canonical_form() {
        let r = PolyMatrix::from_coeffs(&[&[&[2.0, 3.0, 1.0]]]);
        let m = qdf_mod(&psi1(), &r).unwrap();
        assert!(m.distance(&psi1()) < 1e-12);
        let again = qdf_mod(&m, &r).unwrap();
        assert!(again.distance(&m) < 1e-12);
    }

    #[test]
    fn canonical_kernel_scalar() {
        let r = PolyMatrix::from_coeffs(&[&[&[2.0, 3.0, 1.0]]]);
        let x = PolyMatrix::from_coeffs(&[&[&[1.0]], &[&[0.0, 1.0]]]);
        let c = to_canonical(&psi1(), &x, &r).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[11.0, 3.0, 3.0, 1.0]);
        assert!((c.kernel - expect).norm() < 1e-12);
    }

    #[test]
    fn canonical_kernel_constant_projection() {
        let mut e = DMatrix::zeros(2, 2);
        e[(1, 1)] = 1.0;
        let r = PolyMatrix::from_coeffs(&[&[&[], &[1.0, 1.0]], &[&[1.0], &[-1.0]]]);
        let c = to_canonical(&TwoVarForm::constant(&e), &PolyMatrix::identity(2), &r).unwrap();
        assert!((c.kernel - e).norm() < 1e-14);
    }

    #[test]
    fn canonical_kernel_zero() {
        let r = PolyMatrix::from_coeffs(&[&[&[2.0, 3.0, 1.0]]]);
        let x = PolyMatrix::from_coeffs(&[&[&[1.0]], &[&[0.0, 1.0]]]);
        let c = to_canonical(&TwoVarForm::zero(1), &x, &r).unwrap();
        assert_eq!(c.kernel.norm(), 0.0);
    }

    #[test]
    fn canonical_rejects_inexpressible() {
        let r = PolyMatrix::from_coeffs(&[&[&[1.0, 1.0]]]);
        let x = PolyMatrix::from_coeffs(&[&[&[1.0]]]);
        assert!(to_canonical(&psi1(), &x, &r).is_err());
    }

    #[test]
    fn eval_identity() {
        let f = TwoVarForm::constant(&DMatrix::identity(2, 2));
        let v = f.eval_along_trajectory(&[DVector::from_vec(vec![1.0, 2.0])]).unwrap();
        assert_eq!(v, 5.0);
    }

    #[test]
    fn eval_projection_on_exponential() {
        let mut e = DMatrix::zeros(2, 2);
        e[(1, 1)] = 1.0;
        let f = TwoVarForm::constant(&e);
        let v = f.eval_along_trajectory(&[DVector::from_vec(vec![1.0, 1.0])]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn eval_psi1_on_decaying_exponential() {
        let d = [DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])];
        assert_eq!(psi1().eval_along_trajectory(&d).unwrap(), 6.0);
    }

    #[test]
    fn derivative_of_projection_on_circuit_mode() {
        // w₂ obeys ẇ₂ = −w₂ and w₁ = w₂ on the first circuit mode, so the
        // derivative of w₂² is −2w₂².
        let mut e = DMatrix::zeros(2, 2);
        e[(1, 1)] = 1.0;
        let d = TwoVarForm::constant(&e).derivative();
        let w = 0.7;
        let stack = [DVector::from_vec(vec![w, w]), DVector::from_vec(vec![-w, -w])];
        let v = d.eval_along_trajectory(&stack).unwrap();
        assert!((v + 2.0 * w * w).abs() < 1e-15);
    }

    #[test]
    fn eval_errors() {
        assert!(psi1().eval_along_trajectory(&[DVector::from_vec(vec![1.0])]).is_err());
        let f = TwoVarForm::constant(&DMatrix::identity(2, 2));
        assert!(f.eval_along_trajectory(&[DVector::from_vec(vec![1.0])]).is_err());
    }

    #[test]
    fn antidiagonal_restriction() {
        // Φ = ζη+3ζ+3η+11 gives Φ(−ξ,ξ) = 11 − ξ².
        let p = psi1().on_antidiagonal();
        assert_eq!(p[(0, 0)], Poly::new(vec![11.0, 0.0, -1.0]));
    }

    #[test]
    fn json_roundtrip_and_symmetry_check() {
        let s = serde_json::to_string(&psi1()).unwrap();
        let back: TwoVarForm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, psi1());
        let bad = r#"{"blocks": [[[[1.0]], [[2.0]]], [[[0.0]], [[1.0]]]]}"#;
        assert!(serde_json::from_str::<TwoVarForm>(bad).is_err());
    }
}
