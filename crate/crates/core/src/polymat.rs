//! Univariate real polynomials, polynomial matrices and the division,
//! determinant and root machinery built on them.
//!
//! Coefficients are stored in ascending order. Arithmetic tracks the
//! magnitude of the terms that contribute to each output coefficient and
//! zeroes a coefficient when it is below `TRIM` times that magnitude, so
//! cancellation is detected per coefficient rather than against the
//! largest coefficient of the result. This matters for matrices whose
//! coefficients span many decades (power-electronics models).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// Relative cancellation threshold for coefficient arithmetic.
pub const TRIM: f64 = 1e-10;
/// Default absolute margin for the Hurwitz test.
pub const HURWITZ_TOL: f64 = 1e-9;
/// Relative gap below which a root pair is treated as complex conjugate.
pub const ROOT_PAIR_TOL: f64 = 1e-8;

fn settle(mut vals: Vec<f64>, mags: &[f64]) -> Poly {
    for (v, m) in vals.iter_mut().zip(mags) {
        if v.abs() <= TRIM * m {
            *v = 0.0;
        }
    }
    Poly::new(vals)
}

/// Real polynomial in ξ with ascending coefficients.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for Poly {
    fn from(v: Vec<f64>) -> Self {
        Poly::new(v)
    }
}

impl From<Poly> for Vec<f64> {
    fn from(p: Poly) -> Self {
        p.coeffs
    }
}

impl Poly {
    /// Builds a polynomial, dropping trailing zero coefficients.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Poly::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    /// `c ξ^k`.
    pub fn monomial(c: f64, k: usize) -> Self {
        let mut v = vec![0.0; k + 1];
        v[k] = c;
        Poly::new(v)
    }

    /// The indeterminate ξ.
    pub fn xi() -> Self {
        Poly::monomial(1.0, 1)
    }

    /// Monic polynomial with the given real or conjugate-closed roots.
    pub fn from_roots(roots: &[C64]) -> Self {
        let mut c = vec![C64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![C64::new(0.0, 0.0); c.len() + 1];
            for (i, a) in c.iter().enumerate() {
                next[i + 1] += *a;
                next[i] -= *a * r;
            }
            c = next;
        }
        Poly::new(c.iter().map(|z| z.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of ξ^i (zero beyond the degree).
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    /// Degree, with `None` standing for the zero polynomial's −∞.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_c(&self, z: C64) -> C64 {
        self.coeffs
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// `p(−ξ)`.
    pub fn reflect(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| if i % 2 == 1 { -c } else { c })
                .collect(),
        )
    }

    /// `ξ^k · p`.
    pub fn shift(&self, k: usize) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let mut v = vec![0.0; k];
        v.extend_from_slice(&self.coeffs);
        Poly::new(v)
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    /// `p(s·ξ)`; exact when `s` is a power of two.
    pub fn rescale(&self, s: f64) -> Poly {
        let mut f = 1.0;
        Poly::new(
            self.coeffs
                .iter()
                .map(|&c| {
                    let v = c * f;
                    f *= s;
                    v
                })
                .collect(),
        )
    }

    /// Keeps only coefficients of degree `< k`.
    pub fn truncate(&self, k: usize) -> Poly {
        Poly::new(self.coeffs.iter().take(k).copied().collect())
    }

    /// Euclidean division `self = q·d + r` with `deg r < deg d`.
    pub fn div_rem(&self, d: &Poly) -> Result<(Poly, Poly)> {
        let dd = d.degree().ok_or(Error::DivisionByZero)?;
        let Some(n) = self.degree() else {
            return Ok((Poly::zero(), Poly::zero()));
        };
        if n < dd {
            return Ok((Poly::zero(), self.clone()));
        }
        let lead = d.leading();
        let mut r = self.coeffs.clone();
        let mut mag: Vec<f64> = r.iter().map(|c| c.abs()).collect();
        let mut q = vec![0.0; n - dd + 1];
        for k in (0..=n - dd).rev() {
            let c = r[k + dd] / lead;
            q[k] = c;
            for (j, &dj) in d.coeffs.iter().enumerate() {
                let t = c * dj;
                r[k + j] -= t;
                mag[k + j] += t.abs();
            }
            r[k + dd] = 0.0;
        }
        r.truncate(dd);
        mag.truncate(dd);
        Ok((Poly::new(q), settle(r, &mag)))
    }

    /// Relative coefficient distance, scaled by the larger operand.
    pub fn distance(&self, other: &Poly) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        let scale = self.max_abs().max(other.max_abs()).max(1e-300);
        (0..n)
            .map(|i| (self.coeff(i) - other.coeff(i)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// All complex roots with multiplicity, from the eigenvalues of the
    /// balanced companion matrix, polished by Newton steps and paired
    /// into exact conjugates.
    pub fn roots(&self) -> Result<Vec<C64>> {
        let n = self.degree().ok_or(Error::ZeroPolynomial)?;
        let zeros_at_origin = self.coeffs.iter().take_while(|&&c| c == 0.0).count();
        let core = Poly::new(self.coeffs[zeros_at_origin..].to_vec());
        let m = n - zeros_at_origin;
        let mut roots = vec![C64::new(0.0, 0.0); zeros_at_origin];
        if m == 1 {
            roots.push(C64::new(-core.coeffs[0] / core.coeffs[1], 0.0));
        } else if m > 1 {
            let lead = core.leading();
            let mut comp = DMatrix::<f64>::zeros(m, m);
            for i in 1..m {
                comp[(i, i - 1)] = 1.0;
            }
            for i in 0..m {
                comp[(i, m - 1)] = -core.coeffs[i] / lead;
            }
            nalgebra::linalg::balancing::balance_parlett_reinsch(&mut comp);
            let eig = comp.complex_eigenvalues();
            let dcore = core.derivative();
            for &z0 in eig.iter() {
                roots.push(polish(&core, &dcore, z0));
            }
        }
        Ok(pair_conjugates(roots))
    }
}

fn polish(p: &Poly, dp: &Poly, z0: C64) -> C64 {
    let mut z = z0;
    let mut fz = p.eval_c(z).norm();
    for _ in 0..8 {
        let d = dp.eval_c(z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - p.eval_c(z) / d;
        let fc = p.eval_c(cand).norm();
        if !(fc < fz) {
            break;
        }
        z = cand;
        fz = fc;
    }
    z
}

fn pair_conjugates(mut roots: Vec<C64>) -> Vec<C64> {
    let n = roots.len();
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] {
            continue;
        }
        let zi = roots[i];
        let scale = zi.norm().max(1e-300);
        if zi.im.abs() <= ROOT_PAIR_TOL * scale {
            roots[i] = C64::new(zi.re, 0.0);
            done[i] = true;
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == i || done[j] || roots[j].im * zi.im >= 0.0 {
                continue;
            }
            let d = (roots[j] - zi.conj()).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            let avg = (zi + roots[j].conj()) * 0.5;
            roots[i] = avg;
            roots[j] = avg.conj();
            done[j] = true;
        }
        done[i] = true;
    }
    roots.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    roots
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            match i {
                0 => write!(f, "{a}")?,
                1 if a == 1.0 => write!(f, "ξ")?,
                1 => write!(f, "{a}ξ")?,
                _ if a == 1.0 => write!(f, "ξ^{i}")?,
                _ => write!(f, "{a}ξ^{i}")?,
            }
        }
        Ok(())
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        let vals = (0..n).map(|i| self.coeff(i) + o.coeff(i)).collect();
        let mags: Vec<f64> = (0..n)
            .map(|i| self.coeff(i).abs().max(o.coeff(i).abs()))
            .collect();
        settle(vals, &mags)
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &(-o)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| -c).collect())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero();
        }
        let n = self.coeffs.len() + o.coeffs.len() - 1;
        let mut vals = vec![0.0; n];
        let mut mags = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                vals[i + j] += a * b;
                mags[i + j] += (a * b).abs();
            }
        }
        settle(vals, &mags)
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for Poly {
            type Output = Poly;
            fn $m(self, o: Poly) -> Poly { (&self).$m(&o) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul);

/// Accumulates a sum of polynomial products with cancellation tracking.
struct PolyAcc {
    vals: Vec<f64>,
    mags: Vec<f64>,
}

impl PolyAcc {
    fn new() -> Self {
        PolyAcc {
            vals: Vec::new(),
            mags: Vec::new(),
        }
    }

    fn add_product(&mut self, a: &Poly, b: &Poly, sign: f64) {
        if a.is_zero() || b.is_zero() {
            return;
        }
        let n = a.coeffs.len() + b.coeffs.len() - 1;
        if self.vals.len() < n {
            self.vals.resize(n, 0.0);
            self.mags.resize(n, 0.0);
        }
        for (i, &x) in a.coeffs.iter().enumerate() {
            for (j, &y) in b.coeffs.iter().enumerate() {
                self.vals[i + j] += sign * x * y;
                self.mags[i + j] += (x * y).abs();
            }
        }
    }

    fn add_poly(&mut self, a: &Poly, sign: f64) {
        if self.vals.len() < a.coeffs.len() {
            self.vals.resize(a.coeffs.len(), 0.0);
            self.mags.resize(a.coeffs.len(), 0.0);
        }
        for (i, &x) in a.coeffs.iter().enumerate() {
            self.vals[i] += sign * x;
            self.mags[i] += x.abs();
        }
    }

    fn finish(self) -> Poly {
        settle(self.vals, &self.mags)
    }
}

/// Rectangular matrix of polynomials, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Poly>,
}

impl Serialize for PolyMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nested: Vec<Vec<&[f64]>> = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].coeffs()).collect())
            .collect();
        nested.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nested: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        let cols = nested.first().map_or(0, |r| r.len());
        if nested.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom(
                "polynomial matrix rows have different lengths",
            ));
        }
        if nested.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(serde::de::Error::custom("non-finite coefficient"));
        }
        let rows = nested
            .into_iter()
            .map(|r| r.into_iter().map(Poly::new).collect())
            .collect();
        Ok(PolyMatrix::from_rows(rows))
    }
}

impl std::ops::Index<(usize, usize)> for PolyMatrix {
    type Output = Poly;
    fn index(&self, (i, j): (usize, usize)) -> &Poly {
        &self.entries[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for PolyMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Poly {
        &mut self.entries[i * self.cols + j]
    }
}

impl fmt::Display for PolyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

impl PolyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        PolyMatrix {
            rows,
            cols,
            entries: vec![Poly::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = PolyMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Poly::one();
        }
        m
    }

    /// Builds from rows; panics on ragged input (use serde for untrusted data).
    pub fn from_rows(rows: Vec<Vec<Poly>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged polynomial matrix");
        PolyMatrix {
            rows: r,
            cols: c,
            entries: rows.into_iter().flatten().collect(),
        }
    }

    /// Convenience constructor from nested ascending coefficient slices.
    pub fn from_coeffs(rows: &[&[&[f64]]]) -> Self {
        PolyMatrix::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|c| Poly::new(c.to_vec())).collect())
                .collect(),
        )
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Self {
        PolyMatrix::from_coeff_matrices(std::slice::from_ref(m))
    }

    /// `Σ_k M_k ξ^k`.
    pub fn from_coeff_matrices(ms: &[DMatrix<f64>]) -> Self {
        let (r, c) = ms.first().map_or((0, 0), |m| m.shape());
        let mut out = PolyMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out[(i, j)] = Poly::new(ms.iter().map(|m| m[(i, j)]).collect());
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[Poly] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Poly::is_zero)
    }

    /// Largest entry degree; `None` for the zero matrix.
    pub fn degree(&self) -> Option<usize> {
        self.entries.iter().filter_map(Poly::degree).max()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |a, p| a.max(p.max_abs()))
    }

    /// Coefficient matrix of ξ^k.
    pub fn coeff(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].coeff(k))
    }

    /// Horizontal stack `[M_0 M_1 … M_{len−1}]` of coefficient matrices.
    pub fn coeff_stack(&self, len: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols * len);
        for k in 0..len {
            out.view_mut((0, k * self.cols), (self.rows, self.cols))
                .copy_from(&self.coeff(k));
        }
        out
    }

    /// Inverse of [`coeff_stack`](Self::coeff_stack) for blocks of width `cols`.
    pub fn from_coeff_stack(stack: &DMatrix<f64>, cols: usize) -> Self {
        let len = if cols == 0 { 0 } else { stack.ncols() / cols };
        let ms: Vec<DMatrix<f64>> = (0..len)
            .map(|k| stack.columns(k * cols, cols).into_owned())
            .collect();
        if ms.is_empty() {
            return PolyMatrix::zeros(stack.nrows(), cols);
        }
        PolyMatrix::from_coeff_matrices(&ms)
    }

    pub fn eval(&self, x: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].eval(x))
    }

    pub fn eval_c(&self, z: C64) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].eval_c(z))
    }

    pub fn transpose(&self) -> Self {
        let mut out = PolyMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// `M(−ξ)`.
    pub fn reflect(&self) -> Self {
        self.map(Poly::reflect)
    }

    pub fn map(&self, f: impl Fn(&Poly) -> Poly) -> Self {
        PolyMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn row(&self, i: usize) -> PolyMatrix {
        self.select_rows(&[i])
    }

    pub fn select_rows(&self, idx: &[usize]) -> PolyMatrix {
        PolyMatrix::from_rows(
            idx.iter()
                .map(|&i| (0..self.cols).map(|j| self[(i, j)].clone()).collect())
                .collect(),
        )
        .with_cols(self.cols)
    }

    fn with_cols(mut self, cols: usize) -> Self {
        if self.rows == 0 {
            self.cols = cols;
        }
        self
    }

    /// Vertical concatenation.
    pub fn vstack(&self, other: &PolyMatrix) -> Result<PolyMatrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::Dimension {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        Ok(PolyMatrix {
            rows: self.rows + other.rows,
            cols,
            entries,
        })
    }

    pub fn add(&self, o: &PolyMatrix) -> Result<PolyMatrix> {
        self.check_same("add", o)?;
        Ok(PolyMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&o.entries).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, o: &PolyMatrix) -> Result<PolyMatrix> {
        self.check_same("sub", o)?;
        Ok(PolyMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&o.entries).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn mul(&self, o: &PolyMatrix) -> Result<PolyMatrix> {
        if self.cols != o.rows {
            return Err(Error::Dimension {
                op: "mul",
                left: self.shape(),
                right: o.shape(),
            });
        }
        let mut out = PolyMatrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc = PolyAcc::new();
                for k in 0..self.cols {
                    acc.add_product(&self[(i, k)], &o[(k, j)], 1.0);
                }
                out[(i, j)] = acc.finish();
            }
        }
        Ok(out)
    }

    /// `self − a·b`, accumulated in one pass so cancellation is judged
    /// against every contributing term.
    pub fn sub_product(&self, a: &PolyMatrix, b: &PolyMatrix) -> Result<PolyMatrix> {
        if a.cols != b.rows || (self.rows, self.cols) != (a.rows, b.cols) {
            return Err(Error::Dimension {
                op: "sub_product",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let mut out = PolyMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let mut acc = PolyAcc::new();
                acc.add_poly(&self[(i, j)], 1.0);
                for k in 0..a.cols {
                    acc.add_product(&a[(i, k)], &b[(k, j)], -1.0);
                }
                out[(i, j)] = acc.finish();
            }
        }
        Ok(out)
    }

    /// `M(s·ξ)`.
    pub fn rescale(&self, s: f64) -> PolyMatrix {
        self.map(|p| p.rescale(s))
    }

    /// Power of two close to the geometric mean of the root moduli of
    /// `det M`; substituting `ξ = s·τ` balances the coefficient decades.
    pub fn natural_scale(&self) -> f64 {
        let Ok(d) = self.determinant() else {
            return 1.0;
        };
        let Some(n) = d.degree() else {
            return 1.0;
        };
        let c0 = d.coeff(0);
        if n == 0 || c0 == 0.0 {
            return 1.0;
        }
        let g = (c0.abs() / d.leading().abs()).powf(1.0 / n as f64);
        if !g.is_finite() || g == 0.0 {
            return 1.0;
        }
        2f64.powi(g.log2().round() as i32)
    }

    /// Left multiplication by a constant matrix.
    pub fn premul(&self, m: &DMatrix<f64>) -> Result<PolyMatrix> {
        PolyMatrix::from_constant(m).mul(self).map(|p| p.with_cols(self.cols))
    }

    pub fn scale(&self, s: f64) -> PolyMatrix {
        self.map(|p| p.scale(s))
    }

    pub fn neg(&self) -> PolyMatrix {
        self.map(|p| -p)
    }

    fn check_same(&self, op: &'static str, o: &PolyMatrix) -> Result<()> {
        if self.shape() != o.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: o.shape(),
            });
        }
        Ok(())
    }

    fn require_square(&self, op: &'static str) -> Result<usize> {
        if self.rows != self.cols {
            return Err(Error::NotSquare {
                op,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.rows)
    }

    /// Largest relative coefficient difference.
    pub fn distance(&self, o: &PolyMatrix) -> f64 {
        if self.shape() != o.shape() {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(o.max_abs()).max(1e-300);
        let deg = self.degree().max(o.degree()).map_or(0, |d| d + 1);
        let mut worst = 0.0f64;
        for (a, b) in self.entries.iter().zip(&o.entries) {
            for k in 0..deg {
                worst = worst.max((a.coeff(k) - b.coeff(k)).abs());
            }
        }
        worst / scale
    }

    /// Column degrees (`None` for zero columns).
    pub fn col_degrees(&self) -> Vec<Option<usize>> {
        (0..self.cols)
            .map(|j| (0..self.rows).filter_map(|i| self[(i, j)].degree()).max())
            .collect()
    }

    /// Row degrees (`None` for zero rows).
    pub fn row_degrees(&self) -> Vec<Option<usize>> {
        (0..self.rows)
            .map(|i| (0..self.cols).filter_map(|j| self[(i, j)].degree()).max())
            .collect()
    }

    /// Polynomial determinant: fraction-free elimination up to size 4,
    /// evaluation at Chebyshev nodes with interpolation above.
    pub fn determinant(&self) -> Result<Poly> {
        let n = self.require_square("determinant")?;
        match n {
            0 => Ok(Poly::one()),
            1 => Ok(self[(0, 0)].clone()),
            2 => {
                let mut acc = PolyAcc::new();
                acc.add_product(&self[(0, 0)], &self[(1, 1)], 1.0);
                acc.add_product(&self[(0, 1)], &self[(1, 0)], -1.0);
                Ok(acc.finish())
            }
            3 | 4 => Ok(self.bareiss()),
            _ => Ok(self.det_interpolated()),
        }
    }

    fn bareiss(&self) -> Poly {
        let n = self.rows;
        let mut m: Vec<Vec<Poly>> = (0..n)
            .map(|i| (0..n).map(|j| self[(i, j)].clone()).collect())
            .collect();
        let mut sign = 1.0;
        let mut prev = Poly::one();
        for k in 0..n - 1 {
            let pivot = (k..n)
                .filter(|&i| !m[i][k].is_zero())
                .min_by_key(|&i| m[i][k].degree());
            let Some(p) = pivot else {
                return Poly::zero();
            };
            if p != k {
                m.swap(p, k);
                sign = -sign;
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let mut acc = PolyAcc::new();
                    acc.add_product(&m[k][k], &m[i][j], 1.0);
                    acc.add_product(&m[i][k], &m[k][j], -1.0);
                    let num = acc.finish();
                    m[i][j] = num.div_rem(&prev).map(|(q, _)| q).unwrap_or_default();
                }
                m[i][k] = Poly::zero();
            }
            prev = m[k][k].clone();
        }
        m[n - 1][n - 1].scale(sign)
    }

    fn det_interpolated(&self) -> Poly {
        let n = self.rows;
        let bound: usize = self.row_degrees().iter().map(|d| d.unwrap_or(0)).sum();
        let npts = bound + 1;
        // Nodes on a circle of radius rho keep the Vandermonde system
        // well conditioned for moderate degree.
        let rho = 1.0;
        let pts: Vec<C64> = (0..npts)
            .map(|k| C64::from_polar(rho, 2.0 * std::f64::consts::PI * k as f64 / npts as f64))
            .collect();
        let vals: Vec<C64> = pts
            .iter()
            .map(|&z| {
                let m = self.eval_c(z);
                if n == 0 {
                    C64::new(1.0, 0.0)
                } else {
                    m.determinant()
                }
            })
            .collect();
        // Inverse DFT recovers the coefficients exactly for roots-of-unity nodes.
        let coeffs: Vec<f64> = (0..npts)
            .map(|j| {
                let s: C64 = pts
                    .iter()
                    .zip(&vals)
                    .map(|(z, v)| v * z.powi(-(j as i32)))
                    .sum();
                s.re / npts as f64 / rho.powi(j as i32)
            })
            .collect();
        let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        Poly::new(
            coeffs
                .into_iter()
                .map(|c| if c.abs() <= 1e-12 * scale { 0.0 } else { c })
                .collect(),
        )
    }

    /// Cofactor-transpose matrix: `M·adj(M) = det(M)·I`.
    pub fn adjugate(&self) -> Result<PolyMatrix> {
        let n = self.require_square("adjugate")?;
        let mut out = PolyMatrix::zeros(n, n);
        if n == 1 {
            out[(0, 0)] = Poly::one();
            return Ok(out);
        }
        for i in 0..n {
            for j in 0..n {
                let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
                let cols: Vec<usize> = (0..n).filter(|&c| c != j).collect();
                let minor = PolyMatrix::from_rows(
                    rows.iter()
                        .map(|&r| cols.iter().map(|&c| self[(r, c)].clone()).collect())
                        .collect(),
                );
                let d = minor.determinant()?;
                out[(j, i)] = if (i + j) % 2 == 0 { d } else { -&d };
            }
        }
        Ok(out)
    }

    fn nonsingular_det(&self, op: &'static str) -> Result<Poly> {
        self.require_square(op)?;
        let d = self.determinant()?;
        if d.is_zero() {
            return Err(Error::Singular);
        }
        Ok(d)
    }

    /// True iff every root of det has real part below `−tol`.
    pub fn is_hurwitz_with(&self, tol: f64) -> Result<bool> {
        let d = self.nonsingular_det("is_hurwitz")?;
        Ok(d.roots()?.iter().all(|r| r.re < -tol))
    }

    pub fn is_hurwitz(&self) -> Result<bool> {
        self.is_hurwitz_with(HURWITZ_TOL)
    }
}

/// Rational matrix in common-denominator form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalMatrix {
    pub numerator: PolyMatrix,
    pub denominator: Poly,
}

impl RationalMatrix {
    pub fn new(numerator: PolyMatrix, denominator: Poly) -> Result<Self> {
        if denominator.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Ok(RationalMatrix {
            numerator,
            denominator,
        })
    }

    pub fn eval_c(&self, z: C64) -> DMatrix<C64> {
        let d = self.denominator.eval_c(z);
        self.numerator.eval_c(z).map(|v| v / d)
    }

    /// Entrywise numerator degree below the denominator degree.
    pub fn is_strictly_proper(&self) -> bool {
        let dd = self.denominator.degree();
        self.numerator.entries().iter().all(|p| p.degree() < dd)
    }
}

/// Splits `F·R⁻¹ = S + N` into strictly proper and polynomial parts.
pub fn rational_decompose(f: &PolyMatrix, r: &PolyMatrix) -> Result<(RationalMatrix, PolyMatrix)> {
    let d = r.nonsingular_det("rational_decompose")?;
    if f.ncols() != r.nrows() {
        return Err(Error::Dimension {
            op: "rational_decompose",
            left: f.shape(),
            right: r.shape(),
        });
    }
    let p = f.mul(&r.adjugate()?)?;
    let mut num = PolyMatrix::zeros(p.nrows(), p.ncols());
    let mut quo = PolyMatrix::zeros(p.nrows(), p.ncols());
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let (q, rem) = p[(i, j)].div_rem(&d)?;
            quo[(i, j)] = q;
            num[(i, j)] = rem;
        }
    }
    Ok((RationalMatrix::new(num, d)?, quo.with_cols(r.ncols())))
}

/// Canonical representative of `F` modulo `R`: the unique `G` with
/// `F − G` a polynomial left multiple of `R` and `G·R⁻¹` strictly proper.
///
/// The computation runs in the rescaled variable `ξ = s·τ` with `s` from
/// [`PolyMatrix::natural_scale`], which is exact and keeps badly scaled
/// coefficient data accurate.
pub fn canonical_rep(f: &PolyMatrix, r: &PolyMatrix) -> Result<PolyMatrix> {
    canonical_rep_with_quotient(f, r).map(|(g, _)| g)
}

/// Canonical representative together with the quotient `W` such that
/// `F = G + W·R`.
pub fn canonical_rep_with_quotient(
    f: &PolyMatrix,
    r: &PolyMatrix,
) -> Result<(PolyMatrix, PolyMatrix)> {
    let s = r.natural_scale();
    let (fs, rs) = (f.rescale(s), r.rescale(s));
    let (_, n) = rational_decompose(&fs, &rs)?;
    let g = fs.sub_product(&n, &rs)?;
    Ok((g.rescale(1.0 / s), n.rescale(1.0 / s)))
}

/// True iff `N·D⁻¹` is strictly proper. The degree gap between an entry
/// of `N·adj D` and `det D` is unchanged by removing common factors, so
/// no explicit gcd is needed.
pub fn is_strictly_proper(n: &PolyMatrix, d: &PolyMatrix) -> Result<bool> {
    let (s, quo) = rational_decompose(n, d)?;
    let _ = s;
    Ok(quo.is_zero())
}

/// Result of column reduction: `reduced = R·u`, `u·u_inv = I`.
#[derive(Clone, Debug)]
pub struct ColumnReduction {
    pub reduced: PolyMatrix,
    pub u: PolyMatrix,
    pub u_inv: PolyMatrix,
}

impl ColumnReduction {
    pub fn col_degrees(&self) -> Vec<usize> {
        self.reduced
            .col_degrees()
            .into_iter()
            .map(|d| d.unwrap_or(0))
            .collect()
    }
}

/// Leading column coefficient matrix: entry `(i,j)` is the coefficient of
/// `ξ^{δ_j}` in `R_ij` with `δ_j` the degree of column `j`.
pub fn leading_column_matrix(r: &PolyMatrix) -> DMatrix<f64> {
    let degs = r.col_degrees();
    DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
        degs[j].map_or(0.0, |d| r[(i, j)].coeff(d))
    })
}

fn normalized_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

/// Unimodular column reduction of a square nonsingular matrix.
pub fn column_reduce(r: &PolyMatrix) -> Result<ColumnReduction> {
    let n = r.nonsingular_det("column_reduce")?.degree().unwrap_or(0);
    let w = r.ncols();
    let mut cur = r.clone();
    let mut u = PolyMatrix::identity(w);
    let mut u_inv = PolyMatrix::identity(w);
    let max_steps = r.col_degrees().iter().map(|d| d.unwrap_or(0)).sum::<usize>() + w + 1;
    for _ in 0..max_steps {
        let degs = cur.col_degrees();
        if degs.iter().any(Option::is_none) {
            return Err(Error::Singular);
        }
        let degs: Vec<usize> = degs.into_iter().map(Option::unwrap).collect();
        if degs.iter().sum::<usize>() == n {
            return Ok(ColumnReduction {
                reduced: cur,
                u,
                u_inv,
            });
        }
        let lc = leading_column_matrix(&cur);
        let lcn = normalized_columns(&lc);
        let ns = linalg::null_space(&lcn, 1e-9);
        if ns.ncols() == 0 {
            // Degree sum disagrees with det degree but the leading matrix
            // looks nonsingular: coefficients are badly scaled.
            return Err(Error::Residual {
                what: "column reduction leading matrix".into(),
                residual: linalg::singular_values(&lcn).last().copied().unwrap_or(0.0),
                tol: 1e-9,
            });
        }
        // Undo the column normalization so v is a null vector of lc.
        let mut v: DVector<f64> = ns.column(0).into_owned();
        for j in 0..w {
            let cn = lc.column(j).norm();
            if cn > 0.0 {
                v[j] /= cn;
            }
        }
        let vmax = v.amax();
        let jstar = (0..w)
            .filter(|&j| v[j].abs() > 1e-9 * vmax)
            .max_by_key(|&j| (degs[j], std::cmp::Reverse(j)))
            .expect("nonzero null vector");
        let dj = degs[jstar];
        let mut e = PolyMatrix::identity(w);
        let mut e_inv = PolyMatrix::identity(w);
        for j in 0..w {
            if j == jstar || v[j].abs() <= 1e-9 * vmax {
                continue;
            }
            let c = v[j] / v[jstar];
            e[(j, jstar)] = Poly::monomial(c, dj - degs[j]);
            e_inv[(j, jstar)] = Poly::monomial(-c, dj - degs[j]);
        }
        let mut next = cur.mul(&e)?;
        for i in 0..w {
            next[(i, jstar)] = next[(i, jstar)].truncate(dj);
        }
        cur = next;
        u = u.mul(&e)?;
        u_inv = e_inv.mul(&u_inv)?;
    }
    Err(Error::Residual {
        what: "column reduction did not terminate".into(),
        residual: f64::NAN,
        tol: 0.0,
    })
}
