//! Multiple quadratic Lyapunov functions: LMI assembly, certificates and
//! their verification.
//!
//! A mode `k` contributes `Ψ_k(ζ,η) = X_k(ζ)ᵀ K̄_k X_k(η)`. The unknowns
//! are `K̄_k` and `Ȳ_k` with `Y_k(ξ) = Ȳ_k X_k(ξ)`. All conditions are
//! written over the coefficient matrices `R̃ = [R_0 … R_L]` and
//! `X̃ = [X_0 … X_{L−1}]`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::model::{ModelSpec, SldsModel};
use crate::polymat::PolyMatrix;
use crate::sdp::{self, AffineMap, Assignment, LmiBackend, LmiProblem, Sense, SolveOptions, SolveStatus, VarKind};
use crate::statespace;

/// `R̃` and the two placements `[X̃ 0]`, `[0 X̃]` of the state-map
/// coefficients, all with `L+1` blocks.
#[derive(Clone, Debug)]
pub struct CoefficientBlocks {
    pub r_tilde: DMatrix<f64>,
    pub x_lo: DMatrix<f64>,
    pub x_hi: DMatrix<f64>,
}

pub fn coefficient_blocks(r: &PolyMatrix, x: &PolyMatrix) -> Result<CoefficientBlocks> {
    let w = r.ncols();
    let l = r.degree().ok_or(Error::Singular)?;
    if x.ncols() != w {
        return Err(Error::Dimension {
            op: "coefficient blocks",
            left: r.shape(),
            right: x.shape(),
        });
    }
    if x.degree().is_some_and(|d| d >= l.max(1)) {
        return Err(Error::Invalid(format!(
            "state map has degree {} but R has degree {l}",
            x.degree().unwrap_or(0)
        )));
    }
    let n = x.nrows();
    let xt = x.coeff_stack(l);
    let mut x_lo = DMatrix::zeros(n, (l + 1) * w);
    let mut x_hi = DMatrix::zeros(n, (l + 1) * w);
    x_lo.view_mut((0, 0), (n, l * w)).copy_from(&xt);
    x_hi.view_mut((0, w), (n, l * w)).copy_from(&xt);
    Ok(CoefficientBlocks {
        r_tilde: r.coeff_stack(l + 1),
        x_lo,
        x_hi,
    })
}

/// `Φ̃(K̄,Ȳ)`, the coefficient matrix of `(ζ+η)Ψ − YᵀR − RᵀY`.
fn phi_map(b: &CoefficientBlocks, k: usize, y: usize) -> AffineMap {
    let d = b.x_lo.ncols();
    AffineMap::zero(d)
        .sym_term(k, b.x_hi.transpose(), b.x_lo.clone())
        .sym_term(y, -b.r_tilde.transpose(), b.x_lo.clone())
}

fn phi_value(b: &CoefficientBlocks, kbar: &DMatrix<f64>, ybar: &DMatrix<f64>) -> DMatrix<f64> {
    let t = b.x_hi.transpose() * kbar * &b.x_lo - b.r_tilde.transpose() * ybar * &b.x_lo;
    &t + t.transpose()
}

/// The polynomial Lyapunov equation as one matrix equality in `K̄`, `Ȳ`:
/// `Φ̃(K̄,Ȳ) + [X̃ 0]ᵀQ̄ᵀQ̄[X̃ 0] = 0`, optionally with `K̄ ≻ 0`.
pub fn assemble_ple_lmi(r: &PolyMatrix, x: &PolyMatrix, qbar: &DMatrix<f64>, require_positive: bool) -> Result<LmiProblem> {
    if let Some(z) = r.determinant()?.roots()?.into_iter().find(|z| z.re >= 0.0) {
        return Err(Error::NotHurwitz {
            mode: 1,
            root: linalg::fmt_c(z),
            tol: 0.0,
        });
    }
    let b = coefficient_blocks(r, x)?;
    let (n, w) = (x.nrows(), r.ncols());
    if qbar.ncols() != n {
        return Err(Error::Dimension {
            op: "PLE Q̄",
            left: (qbar.nrows(), n),
            right: qbar.shape(),
        });
    }
    let mut p = LmiProblem::new(0.0);
    let kv = p.add_variable("K", VarKind::Symmetric(n));
    let yv = p.add_variable("Y", VarKind::Rectangular(w, n));
    let qx = qbar * &b.x_lo;
    let map = phi_map(&b, kv, yv).with_constant(qx.transpose() * qx);
    p.add_constraint("ple", map, Sense::Zero);
    if require_positive {
        p.epsilon = 1e-9;
        p.add_constraint("K", AffineMap::zero(n).scaled_var(kv, n, 1.0), Sense::PosDef);
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct PleSolution {
    pub k: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `‖Φ̃ + [X̃ 0]ᵀQ̄ᵀQ̄[X̃ 0]‖` relative to the size of its terms.
    pub residual: f64,
}

/// Solves the equality form of the polynomial Lyapunov equation.
pub fn solve_ple(r: &PolyMatrix, x: &PolyMatrix, qbar: &DMatrix<f64>) -> Result<PleSolution> {
    let p = assemble_ple_lmi(r, x, qbar, false)?;
    let out = sdp::solve(&p, 0)?;
    let (k, y) = (out.assignment[0].clone(), out.assignment[1].clone());
    let residual = ple_residual(r, x, qbar, &k, &y)?;
    Ok(PleSolution { k, y, residual })
}

pub fn ple_residual(r: &PolyMatrix, x: &PolyMatrix, qbar: &DMatrix<f64>, k: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let b = coefficient_blocks(r, x)?;
    let qx = qbar * &b.x_lo;
    let qq = qx.transpose() * &qx;
    let phi = phi_value(&b, k, y);
    let scale = phi.norm().max(qq.norm()).max(1e-300);
    Ok((phi + qq).norm() / scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    LmiExact,
    LmiConservative,
    PositiveReal,
    UserSupplied,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Route::LmiExact => "lmi-exact",
            Route::LmiConservative => "lmi-conservative",
            Route::PositiveReal => "positive-real",
            Route::UserSupplied => "user-supplied",
        };
        f.write_str(s)
    }
}

/// Form of the switch condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchForm {
    /// `V_k*(K̄_k − LᵀK̄_ℓL)V_k ⪰ 0`, realified.
    Exact,
    /// `K̄_k − LᵀK̄_ℓL ⪰ 0`.
    Conservative,
}

/// `ε = strictness · max_k ‖A_k‖₂`.
pub fn mlf_epsilon(model: &SldsModel) -> f64 {
    let amax = model
        .realizations
        .iter()
        .filter(|r| r.n() > 0)
        .map(|r| linalg::singular_values(&r.a)[0])
        .fold(0.0, f64::max);
    model.tolerances.strictness * amax.max(1.0)
}

/// `[Re V, Im V]` and `[Im V, −Re V]`; `Σ TᵀDT` over both is the real
/// embedding of `V*DV` (up to conjugation, which preserves inertia).
fn realifying_factors(v: &DMatrix<C64>) -> [DMatrix<f64>; 2] {
    let re = v.map(|z| z.re);
    let im = v.map(|z| z.im);
    let (n, m) = re.shape();
    let mut p = DMatrix::zeros(n, 2 * m);
    let mut q = DMatrix::zeros(n, 2 * m);
    p.view_mut((0, 0), (n, m)).copy_from(&re);
    p.view_mut((0, m), (n, m)).copy_from(&im);
    q.view_mut((0, 0), (n, m)).copy_from(&im);
    q.view_mut((0, m), (n, m)).copy_from(&(-&re));
    [p, q]
}

fn mode_v(model: &SldsModel, k: usize) -> Result<DMatrix<C64>> {
    let re = &model.realizations[k];
    Ok(statespace::eigenstructure_for_mode(&re.r, &re.x, k + 1)?.v)
}

pub fn k_name(k: usize) -> String {
    format!("K{}", k + 1)
}

pub fn y_name(k: usize) -> String {
    format!("Y{}", k + 1)
}

pub fn switch_name(k: usize, l: usize) -> String {
    format!("switch {}->{}", k + 1, l + 1)
}

fn check_preconditions(model: &SldsModel) -> Result<()> {
    model.check_hurwitz()?;
    model.check_well_posed()
}

/// A kernel written as `Σ Tᵢᵀ Vᵢ Tᵢ` over symmetric unknowns `Vᵢ`.
pub(crate) type KernelMap = Vec<(usize, DMatrix<f64>)>;

fn kernel_term(m: AffineMap, kernel: &KernelMap, left: &DMatrix<f64>, right: &DMatrix<f64>, sym: bool) -> AffineMap {
    kernel.iter().fold(m, |m, (v, t)| {
        let (l, r) = (left * t.transpose(), t * right);
        if sym {
            m.sym_term(*v, l, r)
        } else {
            m.term(*v, l, r)
        }
    })
}

/// Adds the phi, structure and Lyapunov conditions of mode `k`.
pub(crate) fn add_mode_constraints(
    p: &mut LmiProblem,
    k: usize,
    re: &statespace::StateRealization,
    kernel: &KernelMap,
    yv: usize,
    strict: bool,
) -> Result<()> {
    let n = re.n();
    let b = coefficient_blocks(&re.r, &re.x)?;
    let d = b.x_lo.ncols();
    let phi = kernel_term(AffineMap::zero(d), kernel, &b.x_hi.transpose(), &b.x_lo, true).sym_term(
        yv,
        -b.r_tilde.transpose(),
        b.x_lo.clone(),
    );
    p.add_constraint(format!("mode {} phi", k + 1), phi.clone(), Sense::NegSemidef);
    let structure = kernel_term(phi, kernel, &-b.x_lo.transpose(), &(&re.a * &b.x_lo), true);
    p.add_constraint(format!("mode {} structure", k + 1), structure, Sense::Zero);
    let lyap = kernel_term(AffineMap::zero(n), kernel, &DMatrix::identity(n, n), &re.a, true);
    let sense = if strict { Sense::NegDef } else { Sense::NegSemidef };
    p.add_constraint(format!("mode {} lyapunov", k + 1), lyap, sense);
    Ok(())
}

/// Adds `K̄_k ≻ 0`, needed when the decrease condition is not strict.
pub(crate) fn add_positivity_constraint(p: &mut LmiProblem, k: usize, n: usize, kernel: &KernelMap) {
    let id = DMatrix::identity(n, n);
    let m = kernel_term(AffineMap::zero(n), kernel, &id, &id, true);
    p.add_constraint(format!("mode {} positivity", k + 1), m, Sense::PosDef);
}

/// Adds the switch condition `k -> l` with reinitialisation map `lmap`.
pub(crate) fn add_switch_constraint(
    p: &mut LmiProblem,
    (k, l): (usize, usize),
    kk: &KernelMap,
    kl: &KernelMap,
    lmap: &DMatrix<f64>,
    v: Option<&DMatrix<C64>>,
) {
    let n = lmap.ncols();
    let map = match v {
        Some(v) => {
            let mut m = AffineMap::zero(2 * v.ncols());
            for f in realifying_factors(v) {
                let lf = lmap * &f;
                m = kernel_term(m, kk, &f.transpose(), &f, false);
                m = kernel_term(m, kl, &-lf.transpose(), &lf, false);
            }
            m
        }
        None => {
            let m = kernel_term(AffineMap::zero(n), kk, &DMatrix::identity(n, n), &DMatrix::identity(n, n), false);
            kernel_term(m, kl, &-lmap.transpose(), lmap, false)
        }
    };
    p.add_constraint(switch_name(k, l), map, Sense::PosSemidef);
}

fn assemble(model: &SldsModel, form: SwitchForm, eps: f64) -> Result<LmiProblem> {
    let mut p = LmiProblem::new(eps);
    let mut kernels = Vec::new();
    let mut ys = Vec::new();
    for (k, re) in model.realizations.iter().enumerate() {
        let kv = p.add_variable(k_name(k), VarKind::Symmetric(re.n()));
        ys.push(p.add_variable(y_name(k), VarKind::Rectangular(re.w(), re.n())));
        kernels.push(vec![(kv, DMatrix::identity(re.n(), re.n()))]);
    }
    let vs = match form {
        SwitchForm::Exact => Some(
            (0..model.n_modes())
                .map(|k| mode_v(model, k))
                .collect::<Result<Vec<_>>>()?,
        ),
        SwitchForm::Conservative => None,
    };
    for (k, re) in model.realizations.iter().enumerate() {
        add_mode_constraints(&mut p, k, re, &kernels[k], ys[k], true)?;
    }
    for (&(k, l), t) in &model.transitions {
        let lmap = &t.reinit.as_ref().expect("well-posed").l;
        add_switch_constraint(&mut p, (k, l), &kernels[k], &kernels[l], lmap, vs.as_ref().map(|v| &v[k]));
    }
    Ok(p)
}

/// Mode conditions plus the V-based switch conditions.
pub fn assemble_mlf_lmis(model: &SldsModel) -> Result<LmiProblem> {
    check_preconditions(model)?;
    assemble(model, SwitchForm::Exact, mlf_epsilon(model))
}

/// Mode conditions plus `K̄_k ⪰ LᵀK̄_ℓL`; needs no eigenstructure.
pub fn assemble_conservative_mlf_lmis(model: &SldsModel) -> Result<LmiProblem> {
    check_preconditions(model)?;
    assemble(model, SwitchForm::Conservative, mlf_epsilon(model))
}

/// `K̄_k` solving `A_kᵀK̄_k + K̄_kA_k = −2εI` and `Ȳ_k = B_kᵀK̄_k`.
pub fn closed_form_start(model: &SldsModel, eps: f64) -> Assignment {
    let mut out = Vec::new();
    for re in &model.realizations {
        let n = re.n();
        let k = linalg::lyapunov(&re.a, &(DMatrix::identity(n, n) * (2.0 * eps))).unwrap_or_else(|| DMatrix::zeros(n, n));
        let y = re.b.transpose() * &k;
        out.push(k);
        out.push(y);
    }
    out
}

#[derive(Clone, Debug)]
pub struct MlfOptions {
    pub form: SwitchForm,
    pub budget: usize,
    /// Overrides the default strictness margin.
    pub epsilon: Option<f64>,
    pub warm_start: bool,
}

impl Default for MlfOptions {
    fn default() -> Self {
        MlfOptions {
            form: SwitchForm::Exact,
            budget: sdp::DEFAULT_BUDGET,
            epsilon: None,
            warm_start: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    Certified,
    /// The search failed; this says nothing about instability.
    NoCertificateFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMargins {
    /// Smallest eigenvalue of `V*K̄V` (or of `K̄` without eigenstructure).
    pub positivity: f64,
    /// `−λ_max(F̄)`.
    pub lyapunov: f64,
    /// `−λ_max(Φ̃)`.
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificate {
    #[serde(rename = "K", with = "linalg::rows")]
    pub k: DMatrix<f64>,
    #[serde(rename = "Y", default, with = "linalg::opt_rows", skip_serializing_if = "Option::is_none")]
    pub y: Option<DMatrix<f64>>,
    #[serde(rename = "F", default, with = "linalg::opt_rows", skip_serializing_if = "Option::is_none")]
    pub f: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<ModeMargins>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMargin {
    pub from: usize,
    pub to: usize,
    pub switch_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_margin: Option<f64>,
    pub conservative_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub backend: String,
    pub status: SolveStatus,
    pub iterations: usize,
    pub budget: usize,
    pub worst_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlfCertificate {
    pub route: Route,
    #[serde(default = "default_status")]
    pub status: CertificateStatus,
    pub epsilon: f64,
    pub modes: Vec<ModeCertificate>,
    #[serde(default)]
    pub transitions: Vec<TransitionMargin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// The model the certificate refers to, with state maps resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

fn default_status() -> CertificateStatus {
    CertificateStatus::Certified
}

pub const NOT_FOUND_NOTE: &str =
    "no certificate found: quadratic multiple Lyapunov functions give a sufficient condition only, so this is not evidence of instability";

impl MlfCertificate {
    /// A certificate from bare `K̄_k` matrices; `Ȳ` and `F̄` are derived
    /// during verification.
    pub fn from_kernels(route: Route, epsilon: f64, ks: Vec<DMatrix<f64>>) -> Self {
        MlfCertificate {
            route,
            status: CertificateStatus::Certified,
            epsilon,
            modes: ks
                .into_iter()
                .map(|k| ModeCertificate {
                    k,
                    y: None,
                    f: None,
                    margins: None,
                })
                .collect(),
            transitions: Vec::new(),
            solver: None,
            note: None,
            model: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn kernels(&self) -> Vec<DMatrix<f64>> {
        self.modes.iter().map(|m| m.k.clone()).collect()
    }

    /// Writes the margins of `report` into the certificate.
    pub fn record(&mut self, report: &MlfReport) {
        for (m, c) in self.modes.iter_mut().zip(&report.modes) {
            m.margins = Some(ModeMargins {
                positivity: c.positivity,
                lyapunov: c.lyapunov,
                phi: c.phi,
            });
        }
        self.transitions = report
            .transitions
            .iter()
            .map(|t| TransitionMargin {
                from: t.from,
                to: t.to,
                switch_margin: t.margin,
                exact_margin: t.exact_margin,
                conservative_margin: t.conservative_margin,
            })
            .collect();
    }
}

/// Acceptance threshold `absolute + relative · scale` for non-strict
/// conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyTolerance {
    pub absolute: f64,
    pub relative: f64,
}

impl VerifyTolerance {
    pub fn relative(r: f64) -> Self {
        VerifyTolerance {
            absolute: 0.0,
            relative: r,
        }
    }

    pub fn absolute(a: f64) -> Self {
        VerifyTolerance {
            absolute: a,
            relative: 0.0,
        }
    }

    fn threshold(&self, scale: f64) -> f64 {
        -(self.absolute + self.relative * scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCheck {
    pub mode: usize,
    pub positivity: f64,
    pub lyapunov: f64,
    pub phi: f64,
    /// When `F̄` is only semidefinite: smallest singular value of
    /// `col(A − λI, F̄)` over the eigenvalues of `A`, relative. Positive
    /// means the derivative still vanishes only on the zero trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observability: Option<f64>,
    /// `‖Φ̃ − [X̃ 0]ᵀF̄[X̃ 0]‖` relative to the size of `Φ̃`.
    pub structure_residual: f64,
    /// Distance of a supplied `F̄` from `AᵀK̄ + K̄A`, relative.
    pub f_residual: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchCheck {
    pub from: usize,
    pub to: usize,
    /// Margin of the condition the route uses.
    pub margin: f64,
    pub exact_margin: Option<f64>,
    pub conservative_margin: f64,
    pub scale: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlfReport {
    pub route: Route,
    pub epsilon: f64,
    pub modes: Vec<ModeCheck>,
    pub transitions: Vec<SwitchCheck>,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl MlfReport {
    /// Smallest of the positivity, phi and switch margins.
    pub fn worst_margin(&self) -> f64 {
        self.modes
            .iter()
            .flat_map(|m| [m.positivity, m.phi])
            .chain(self.transitions.iter().map(|t| t.margin))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for MlfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "route {}  epsilon {:.3e}", self.route, self.epsilon)?;
        for m in &self.modes {
            writeln!(
                f,
                "  mode {}: positivity {:+.3e}  lyapunov {:+.3e}  phi {:+.3e}  structure {:.1e}  {}",
                m.mode,
                m.positivity,
                m.lyapunov,
                m.phi,
                m.structure_residual,
                if m.passed { "ok" } else { "FAIL" }
            )?;
            if let Some(o) = m.observability {
                writeln!(f, "    derivative only semidefinite; observability margin {o:.3e}")?;
            }
        }
        for t in &self.transitions {
            write!(f, "  switch {}->{}: margin {:+.3e}", t.from, t.to, t.margin)?;
            if let Some(e) = t.exact_margin {
                write!(f, "  (exact {e:+.3e}")?;
            } else {
                write!(f, "  (")?;
            }
            writeln!(
                f,
                " conservative {:+.3e})  {}",
                t.conservative_margin,
                if t.passed { "ok" } else { "FAIL" }
            )?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        write!(f, "  verdict: {}", if self.passed { "passed" } else { "failed" })
    }
}

const OBSERVABILITY_TOL: f64 = 1e-8;

/// `min_λ σ_min(col(A − λI, F))` over eigenvalues of `A`, relative to
/// `‖A‖ + ‖F‖`.
fn observability_margin(a: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let scale = (a.norm() + f.norm()).max(1e-300);
    a.complex_eigenvalues()
        .iter()
        .map(|&lam| {
            let mut m = DMatrix::<C64>::zeros(2 * n, n);
            m.view_mut((0, 0), (n, n))
                .copy_from(&(linalg::to_complex(a) - DMatrix::<C64>::identity(n, n) * lam));
            m.view_mut((n, 0), (n, n)).copy_from(&linalg::to_complex(f));
            m.singular_values().min() / scale
        })
        .fold(f64::INFINITY, f64::min)
}

fn min_eig_c(h: &DMatrix<C64>) -> f64 {
    linalg::min_eig(&linalg::realify(&(h + h.adjoint()).map(|z| z * 0.5)))
}

/// Checks a certificate against the model: positivity on each mode,
/// `F̄_k ≺ 0`, `Φ̃_k ⪯ 0`, and every switch condition.
///
/// Missing `Ȳ_k` is taken as `B_kᵀK̄_k`. Lyapunov margins must be
/// strictly positive; the other conditions may fall short of zero by the
/// given tolerance.
pub fn verify_mlf(model: &SldsModel, cert: &MlfCertificate, tol: VerifyTolerance) -> Result<MlfReport> {
    let nm = model.n_modes();
    if cert.modes.len() != nm {
        return Err(Error::Invalid(format!(
            "certificate has {} modes, model has {nm}",
            cert.modes.len()
        )));
    }
    for (k, (m, re)) in cert.modes.iter().zip(&model.realizations).enumerate() {
        let n = re.n();
        if m.k.shape() != (n, n) {
            return Err(Error::Invalid(format!(
                "mode {}: K is {}x{}, state dimension is {n}",
                k + 1,
                m.k.nrows(),
                m.k.ncols()
            )));
        }
        if let Some(y) = &m.y {
            if y.shape() != (re.w(), n) {
                return Err(Error::Invalid(format!("mode {}: Y has shape {:?}", k + 1, y.shape())));
            }
        }
        if let Some(fm) = &m.f {
            if fm.shape() != (n, n) {
                return Err(Error::Invalid(format!("mode {}: F has shape {:?}", k + 1, fm.shape())));
            }
        }
    }
    let mut notes = Vec::new();
    let vs: Vec<Option<DMatrix<C64>>> = (0..nm)
        .map(|k| match mode_v(model, k) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("mode {}: no eigenstructure ({e}); using state-space conditions", k + 1));
                None
            }
        })
        .collect();

    let mut modes = Vec::with_capacity(nm);
    for (k, (m, re)) in cert.modes.iter().zip(&model.realizations).enumerate() {
        let kbar = linalg::sym(&m.k);
        let ybar = m.y.clone().unwrap_or_else(|| re.b.transpose() * &kbar);
        let f = re.a.transpose() * &kbar + &kbar * &re.a;
        let positivity = match &vs[k] {
            Some(v) => min_eig_c(&(v.adjoint() * linalg::to_complex(&kbar) * v)),
            None => linalg::min_eig(&kbar),
        };
        let positivity = if re.n() == 0 { 0.0 } else { positivity };
        let lyapunov = if re.n() == 0 { f64::INFINITY } else { -linalg::max_eig(&f) };
        let b = coefficient_blocks(&re.r, &re.x)?;
        let phi_m = phi_value(&b, &kbar, &ybar);
        let phi = if phi_m.nrows() == 0 { 0.0 } else { -linalg::max_eig(&phi_m) };
        let fx = b.x_lo.transpose() * &f * &b.x_lo;
        let phi_scale = (b.x_hi.transpose() * &kbar * &b.x_lo).norm() * 2.0
            + (b.r_tilde.transpose() * &ybar * &b.x_lo).norm() * 2.0;
        let structure_residual = (&phi_m - &fx).norm() / phi_scale.max(1e-300);
        let f_residual = m.f.as_ref().map(|fs| (fs - &f).norm() / f.norm().max(1e-300));
        // A margin within the tolerance of zero is no evidence of strictness.
        let strict = lyapunov > -tol.threshold(f.norm());
        let observability = (!strict).then(|| observability_margin(&re.a, &f));
        let decreasing = strict
            || (lyapunov >= tol.threshold(f.norm()) && observability.is_some_and(|o| o > OBSERVABILITY_TOL));
        let passed = positivity >= tol.threshold(kbar.norm())
            && decreasing
            && phi >= tol.threshold(phi_scale)
            && structure_residual <= 1e-8
            && f_residual.is_none_or(|r| r <= 1e-8);
        modes.push(ModeCheck {
            mode: k + 1,
            positivity,
            lyapunov,
            phi,
            observability,
            structure_residual,
            f_residual,
            passed,
        });
    }

    let mut transitions = Vec::new();
    for (&(k, l), t) in &model.transitions {
        let Some(re) = &t.reinit else {
            return Err(Error::NotWellPosed {
                from: k + 1,
                to: l + 1,
                rank: t.rank,
                cols: t.normal.f_plus.ncols(),
            });
        };
        let kk = linalg::sym(&cert.modes[k].k);
        let kl = linalg::sym(&cert.modes[l].k);
        let pulled = re.l.transpose() * &kl * &re.l;
        let d = &kk - &pulled;
        let n = kk.nrows();
        let conservative_margin = if n == 0 { 0.0 } else { linalg::min_eig(&d) };
        let exact = vs[k].as_ref().map(|v| {
            let vc = |m: &DMatrix<f64>| v.adjoint() * linalg::to_complex(m) * v;
            let h = vc(&d);
            let scale = (vc(&kk).norm() + vc(&pulled).norm()) * 2.0;
            (if n == 0 { 0.0 } else { min_eig_c(&h) }, scale)
        });
        let use_exact = cert.route != Route::LmiConservative;
        let (margin, scale) = match exact {
            Some((e, s)) if use_exact => (e, s),
            _ => (conservative_margin, kk.norm() + pulled.norm()),
        };
        transitions.push(SwitchCheck {
            from: k + 1,
            to: l + 1,
            margin,
            exact_margin: exact.map(|e| e.0),
            conservative_margin,
            scale,
            passed: margin >= tol.threshold(scale),
        });
    }
    let passed = modes.iter().all(|m| m.passed) && transitions.iter().all(|t| t.passed);
    Ok(MlfReport {
        route: cert.route,
        epsilon: cert.epsilon,
        modes,
        transitions,
        passed,
        notes,
    })
}

/// Re-verifies a stored certificate and rejects it when it fails or when
/// its recorded margins disagree with the recomputed ones.
pub fn check_certificate(model: &SldsModel, cert: &MlfCertificate, tol: VerifyTolerance) -> Result<MlfReport> {
    let report = verify_mlf(model, cert, tol)?;
    let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    for (m, c) in cert.modes.iter().zip(&report.modes) {
        if let Some(r) = &m.margins {
            if !(close(r.positivity, c.positivity) && close(r.lyapunov, c.lyapunov) && close(r.phi, c.phi)) {
                return Err(Error::Invalid(format!(
                    "mode {}: recorded margins do not match the recomputed ones",
                    c.mode
                )));
            }
        }
    }
    for t in &cert.transitions {
        let Some(c) = report.transitions.iter().find(|c| c.from == t.from && c.to == t.to) else {
            return Err(Error::Invalid(format!(
                "certificate lists switch {}->{} which the model does not have",
                t.from, t.to
            )));
        };
        if !close(t.switch_margin, c.margin) {
            return Err(Error::Invalid(format!(
                "switch {}->{}: recorded margin {:e} but recomputed {:e}",
                t.from, t.to, t.switch_margin, c.margin
            )));
        }
    }
    if cert.status == CertificateStatus::Certified && !report.passed {
        return Err(Error::Invalid(format!("certificate fails re-verification\n{report}")));
    }
    Ok(report)
}

/// Searches for a multiple Lyapunov function.
///
/// Returns a certificate in either case; its `status` says whether the
/// conditions were met.
pub fn certify(model: &SldsModel, opts: &MlfOptions) -> Result<MlfCertificate> {
    check_preconditions(model)?;
    let eps = opts.epsilon.unwrap_or_else(|| mlf_epsilon(model));
    let p = assemble(model, opts.form, eps)?;
    let start = opts.warm_start.then(|| closed_form_start(model, eps));
    let sopts = SolveOptions {
        budget: opts.budget,
        tol: model.tolerances.verify,
        ..Default::default()
    };
    let out = sdp::DefaultBackend.solve(&p, &sopts, start.as_ref())?;
    let route = match opts.form {
        SwitchForm::Exact => Route::LmiExact,
        SwitchForm::Conservative => Route::LmiConservative,
    };
    let mut modes = Vec::new();
    for (k, re) in model.realizations.iter().enumerate() {
        let kbar = linalg::sym(&out.assignment[2 * k]);
        let f = re.a.transpose() * &kbar + &kbar * &re.a;
        modes.push(ModeCertificate {
            k: kbar,
            y: Some(out.assignment[2 * k + 1].clone()),
            f: Some(f),
            margins: None,
        });
    }
    let mut cert = MlfCertificate {
        route,
        status: CertificateStatus::NoCertificateFound,
        epsilon: eps,
        modes,
        transitions: Vec::new(),
        solver: Some(SolverInfo {
            backend: "projections+barrier".into(),
            status: out.status,
            iterations: out.iterations,
            budget: opts.budget,
            worst_margin: out.report.worst,
        }),
        note: None,
        model: Some(model.resolved_spec()),
    };
    let report = verify_mlf(model, &cert, VerifyTolerance::relative(model.tolerances.verify))?;
    cert.record(&report);
    if out.is_feasible() && report.passed {
        cert.status = CertificateStatus::Certified;
    } else {
        cert.note = Some(NOT_FOUND_NOTE.into());
    }
    Ok(cert)
}

/// One point of the candidate-family scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// `c₂ / c₁` with `K̄₁ = 1`, `K̄₂ = ratio`.
    pub ratio: f64,
    pub lyapunov: [f64; 2],
    pub switch_margins: Vec<(usize, usize, f64)>,
    pub feasible: bool,
    /// Condition with the smallest margin.
    pub binding: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub points: Vec<ScanPoint>,
    /// Closed interval of admissible ratios from the switch conditions,
    /// `None` when empty.
    pub interval: Option<(f64, f64)>,
    pub reinit: Vec<(usize, usize, f64)>,
    pub lmi_status: CertificateStatus,
    pub lmi_kernels: Vec<f64>,
    pub lmi_report: MlfReport,
    /// Whether the scan and the LMI outcome agree.
    pub consistent: bool,
}

/// Text attached to scan reports about the disputed verdict for the
/// averaging-gluing example.
pub const SCAN_OPEN_QUESTION: &str = "open question: this two-mode example is elsewhere asserted to admit no quadratic multiple Lyapunov function and to be unstable; \
that assertion depends on how the second mode is read (its equations force w1 = 0, while a trajectory description col(e^-t, 0) contradicts this). \
The verdict below is computed from the model as written and is not taken from that assertion.";

/// Scans `K̄₁ = 1`, `K̄₂ = ρ` over `ratios` for a two-mode model with
/// one-dimensional state spaces (so every quadratic candidate is a
/// multiple of `X_kᵀX_k`), and solves the LMI for comparison.
pub fn scan_candidate_family(model: &SldsModel, ratios: &[f64], budget: usize) -> Result<ScanReport> {
    if model.n_modes() != 2 || model.realizations.iter().any(|r| r.n() != 1) {
        return Err(Error::NotSupported(
            "the candidate scan needs two modes with one-dimensional state spaces".into(),
        ));
    }
    check_preconditions(model)?;
    let eps = mlf_epsilon(model);
    let tol = VerifyTolerance::relative(model.tolerances.verify);
    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let mut points = Vec::new();
    for &rho in ratios {
        let cert = MlfCertificate::from_kernels(Route::UserSupplied, eps, vec![scalar(1.0), scalar(rho)]);
        let rep = verify_mlf(model, &cert, tol)?;
        let mut margins: Vec<(String, f64)> = Vec::new();
        for m in &rep.modes {
            margins.push((format!("mode {} positivity", m.mode), m.positivity));
            margins.push((format!("mode {} lyapunov", m.mode), m.lyapunov));
        }
        for t in &rep.transitions {
            margins.push((format!("switch {}->{}", t.from, t.to), t.margin));
        }
        let binding = margins
            .iter()
            .fold((String::new(), f64::INFINITY), |acc, (n, v)| if *v < acc.1 { (n.clone(), *v) } else { acc })
            .0;
        points.push(ScanPoint {
            ratio: rho,
            lyapunov: [rep.modes[0].lyapunov, rep.modes[1].lyapunov],
            switch_margins: rep.transitions.iter().map(|t| (t.from, t.to, t.margin)).collect(),
            feasible: rep.passed,
            binding,
        });
    }
    // c₁ ≥ ℓ₁₂² c₂ and c₂ ≥ ℓ₂₁² c₁ give ℓ₂₁² ≤ ρ ≤ 1/ℓ₁₂².
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    let mut reinit = Vec::new();
    for (&(k, l), t) in &model.transitions {
        let lv = t.reinit.as_ref().expect("well-posed").l[(0, 0)];
        reinit.push((k + 1, l + 1, lv));
        let l2 = lv * lv;
        if k == 0 {
            if l2 > 0.0 {
                hi = hi.min(1.0 / l2);
            }
        } else {
            lo = lo.max(l2);
        }
    }
    // Bounds that cross by rounding only describe a single ratio.
    let interval = (lo <= hi * (1.0 + 1e-12)).then_some(if lo > hi { (0.5 * (lo + hi), 0.5 * (lo + hi)) } else { (lo, hi) });
    let cert = certify(
        model,
        &MlfOptions {
            budget,
            ..Default::default()
        },
    )?;
    let lmi_report = verify_mlf(model, &cert, tol)?;
    let lmi_kernels: Vec<f64> = cert.modes.iter().map(|m| m.k[(0, 0)]).collect();
    let scan_feasible = interval.is_some() || points.iter().any(|p| p.feasible);
    let mut consistent = scan_feasible == (cert.status == CertificateStatus::Certified);
    if cert.status == CertificateStatus::Certified {
        let ratio = lmi_kernels[1] / lmi_kernels[0];
        if let Some((lo, hi)) = interval {
            let slack = 1e-6 * (1.0 + ratio);
            consistent &= ratio >= lo - slack && ratio <= hi + slack;
        }
    }
    Ok(ScanReport {
        points,
        interval,
        reinit,
        lmi_status: cert.status,
        lmi_kernels,
        lmi_report,
        consistent,
    })
}

impl fmt::Display for ScanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{SCAN_OPEN_QUESTION}")?;
        writeln!(f, "candidate family: K1 = 1, K2 = rho (one-dimensional state spaces)")?;
        for (k, l, v) in &self.reinit {
            writeln!(f, "  reinitialisation {k}->{l}: L = {v:.12}")?;
        }
        match self.interval {
            Some((lo, hi)) => writeln!(f, "  admissible ratios: [{lo:.12}, {hi:.12}]")?,
            None => writeln!(f, "  admissible ratios: empty")?,
        }
        for p in &self.points {
            write!(f, "  rho {:>12.6e}: lyapunov {:+.3e} {:+.3e}", p.ratio, p.lyapunov[0], p.lyapunov[1])?;
            for (k, l, m) in &p.switch_margins {
                write!(f, "  switch {k}->{l} {m:+.3e}")?;
            }
            writeln!(f, "  binding {}  {}", p.binding, if p.feasible { "feasible" } else { "infeasible" })?;
        }
        writeln!(
            f,
            "  LMI: {:?}, K = {:?}",
            self.lmi_status, self.lmi_kernels
        )?;
        writeln!(f, "{}", self.lmi_report)?;
        write!(
            f,
            "verdict: {}; scan and LMI {}",
            if self.lmi_status == CertificateStatus::Certified {
                "a quadratic multiple Lyapunov function exists (asymptotically stable)"
            } else {
                "no quadratic multiple Lyapunov function found (no conclusion about stability)"
            },
            if self.consistent { "agree" } else { "DISAGREE" }
        )
    }
}
