//! Dense real/complex helpers shared by the analysis modules.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

/// Symmetric part `(m + mᵀ)/2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry (0 for empty matrices).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    sym(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v))
}

/// Singular values in descending order; for wide matrices the
/// missing ones are not zero-padded.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Numerical rank with threshold `rel · σ_max`.
pub fn rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&smax) if smax == 0.0 => 0,
        Some(&smax) => s.iter().filter(|&&v| v > rel * smax).count(),
    }
}

/// Orthonormal basis (as columns) of the right null space.
pub fn null_space(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v));
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] <= rel * smax || smax == 0.0)
        .map(|i| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the complex right null space, keeping singular
/// directions with singular value at most `abs_tol`.
pub fn null_space_c(m: &DMatrix<C64>, abs_tol: f64) -> DMatrix<C64> {
    let n = m.ncols();
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::<C64>::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let cols: Vec<DVector<C64>> = (0..n)
        .filter(|&i| svd.singular_values[i] <= abs_tol)
        .map(|i| vt.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Moore–Penrose pseudoinverse with relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let smax = singular_values(m)[0];
    let cut = (rel * smax).max(f64::MIN_POSITIVE);
    m.clone()
        .pseudo_inverse(cut)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Least-squares solution of `x · a = b` (row form) with the Frobenius
/// residual of the fit.
/// Rows of `a` are equilibrated first so badly scaled coefficient data
/// keeps its numerical rank.
pub fn solve_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let norms: Vec<f64> = a
        .row_iter()
        .map(|r| {
            let n = r.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (i, n) in norms.iter().enumerate() {
        scaled.row_mut(i).unscale_mut(*n);
    }
    let mut x = b * pinv(&scaled, 1e-12);
    for (j, n) in norms.iter().enumerate() {
        x.column_mut(j).unscale_mut(*n);
    }
    let r = (&x * a - b).norm();
    (x, r)
}

/// Least-squares solution of `a · x = b` with the Frobenius residual.
pub fn solve_cols(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let x = pinv(a, 1e-12) * b;
    let r = (a * &x - b).norm();
    (x, r)
}

/// Solves `Aᵀ K + K A = -Q` for symmetric `K` through the Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(AᵀK) = (I ⊗ Aᵀ) vec K, vec(KA) = (Aᵀ ⊗ I) vec K
    let big = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, (-q).iter().copied());
    let sol = big.lu().solve(&rhs)?;
    let k = DMatrix::from_iterator(n, n, sol.iter().copied());
    Some(sym(&k))
}

/// Cholesky-style factor `U` with `UᵀU = P` for positive semidefinite
/// `P`, built from the eigendecomposition so semidefinite inputs work.
pub fn psd_factor(p: &DMatrix<f64>, rel: f64) -> Option<DMatrix<f64>> {
    let n = p.nrows();
    let eig = sym(p).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut rows = Vec::new();
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l < -rel * lmax.max(1e-300) {
            return None;
        }
        if l > rel * lmax {
            rows.push(eig.eigenvectors.column(i).transpose() * l.sqrt());
        }
    }
    if rows.is_empty() {
        return Some(DMatrix::zeros(0, n));
    }
    Some(DMatrix::from_rows(&rows))
}

/// Real embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian matrix;
/// it is positive semidefinite exactly when `H` is.
pub fn realify(h: &DMatrix<C64>) -> DMatrix<f64> {
    let (r, c) = h.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i, c + j)] = -z.im;
            out[(r + i, j)] = z.im;
            out[(r + i, c + j)] = z.re;
        }
    }
    out
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

pub fn fmt_c(z: C64) -> String {
    if z.im.abs() <= 1e-12 * z.norm().max(1e-300) {
        format!("{:.6}", z.re)
    } else if z.im >= 0.0 {
        format!("{:.6}+{:.6}j", z.re, z.im)
    } else {
        format!("{:.6}-{:.6}j", z.re, -z.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 2.0);
        let k = lyapunov(&a, &q).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let q = DMatrix::identity(2, 2);
        let k = lyapunov(&a, &q).unwrap();
        let r = a.transpose() * &k + &k * &a + q;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn null_space_wide() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&m, 1e-12);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-12);
    }

    #[test]
    fn realify_preserves_definiteness() {
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(2.0, 0.0)],
        );
        let r = realify(&h);
        assert!((min_eig(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_factor_roundtrip() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let u = psd_factor(&p, 1e-12).unwrap();
        assert!((u.transpose() * &u - p).norm() < 1e-12);
    }
}

/// Serde adapter writing a matrix as an array of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err("matrix rows have different lengths".into());
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite matrix entry".into());
        }
        Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// [`rows`] for optional matrices.
pub mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::rows::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::rows::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}
