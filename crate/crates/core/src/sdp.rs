//! Dense feasibility solver for affine matrix inequalities.
//!
//! Unknowns are symmetric or rectangular real matrices. Each constraint
//! is an affine map into symmetric matrices together with a sense. The
//! default backend alternates between the cone of admissible slacks
//! (eigenvalue clipping) and the affine image of the unknowns (least
//! squares on the null space of the equality constraints).
//!
//! `NoCertificateFound` never means the problem is infeasible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default iteration cap.
pub const DEFAULT_BUDGET: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Symmetric(usize),
    Rectangular(usize, usize),
}

impl VarKind {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Rectangular(p, q) => (p, q),
        }
    }

    fn dof(&self) -> usize {
        match *self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Rectangular(p, q) => p * q,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

/// `left · V · right`, plus its transpose when `symmetrize` is set.
#[derive(Clone, Debug)]
pub struct Term {
    pub var: usize,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub symmetrize: bool,
}

#[derive(Clone, Debug)]
pub struct AffineMap {
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
}

impl AffineMap {
    pub fn zero(dim: usize) -> Self {
        AffineMap {
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `left · V · right`.
    pub fn term(mut self, var: usize, left: DMatrix<f64>, right: DMatrix<f64>) -> Self {
        self.terms.push(Term {
            var,
            left,
            right,
            symmetrize: false,
        });
        self
    }

    /// Adds `left · V · right + (left · V · right)ᵀ`.
    pub fn sym_term(mut self, var: usize, left: DMatrix<f64>, right: DMatrix<f64>) -> Self {
        self.terms.push(Term {
            var,
            left,
            right,
            symmetrize: true,
        });
        self
    }

    /// Adds `s · V` for a square variable.
    pub fn scaled_var(self, var: usize, n: usize, s: f64) -> Self {
        self.term(var, DMatrix::identity(n, n) * s, DMatrix::identity(n, n))
    }

    pub fn with_constant(mut self, c: DMatrix<f64>) -> Self {
        self.constant = c;
        self
    }

    /// `self − other`.
    pub fn minus(mut self, other: &AffineMap) -> Self {
        self.constant -= &other.constant;
        for t in &other.terms {
            self.terms.push(Term {
                var: t.var,
                left: -&t.left,
                right: t.right.clone(),
                symmetrize: t.symmetrize,
            });
        }
        self
    }

    fn linear_part(&self, vals: &[DMatrix<f64>]) -> (DMatrix<f64>, f64) {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        let mut mag = 0.0;
        for t in &self.terms {
            let p = &t.left * &vals[t.var] * &t.right;
            mag += p.norm() * if t.symmetrize { 2.0 } else { 1.0 };
            if t.symmetrize {
                out += &p + p.transpose();
            } else {
                out += p;
            }
        }
        (out, mag)
    }

    /// Value at an assignment.
    pub fn eval(&self, vals: &[DMatrix<f64>]) -> DMatrix<f64> {
        self.linear_part(vals).0 + &self.constant
    }

    /// Value and the sum of the term magnitudes, used as the scale of
    /// the constraint.
    pub fn eval_with_scale(&self, vals: &[DMatrix<f64>]) -> (DMatrix<f64>, f64) {
        let (m, mag) = self.linear_part(vals);
        (m + &self.constant, mag + self.constant.norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `G ⪯ −εI`.
    NegDef,
    /// `G ⪯ 0`.
    NegSemidef,
    /// `G ⪰ 0`.
    PosSemidef,
    /// `G ⪰ εI`.
    PosDef,
    /// `G = 0`.
    Zero,
}

impl Sense {
    fn is_strict(self) -> bool {
        matches!(self, Sense::NegDef | Sense::PosDef)
    }
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub map: AffineMap,
    pub sense: Sense,
}

#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub epsilon: f64,
}

pub type Assignment = Vec<DMatrix<f64>>;

impl LmiProblem {
    pub fn new(epsilon: f64) -> Self {
        LmiProblem {
            epsilon,
            ..Default::default()
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            kind,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, map: AffineMap, sense: Sense) {
        self.constraints.push(Constraint {
            name: name.into(),
            map,
            sense,
        });
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn zero_assignment(&self) -> Assignment {
        self.variables
            .iter()
            .map(|v| {
                let (p, q) = v.kind.shape();
                DMatrix::zeros(p, q)
            })
            .collect()
    }

    /// Checks dimensions of every term and that each map is symmetric
    /// on a few pseudo-random symmetric probes.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        for c in &self.constraints {
            let d = c.map.dim();
            if c.map.constant.ncols() != d {
                return Err(Error::Invalid(format!("constraint `{}`: constant is not square", c.name)));
            }
            for t in &c.map.terms {
                let v = self
                    .variables
                    .get(t.var)
                    .ok_or_else(|| Error::Invalid(format!("constraint `{}`: unknown variable {}", c.name, t.var)))?;
                let (p, q) = v.kind.shape();
                if t.left.shape() != (d, p) || t.right.shape() != (q, d) {
                    return Err(Error::Invalid(format!(
                        "constraint `{}`: term on `{}` has factors {:?} and {:?}, expected ({d}, {p}) and ({q}, {d})",
                        c.name,
                        v.name,
                        t.left.shape(),
                        t.right.shape()
                    )));
                }
            }
        }
        let mut rng = StdRng::seed_from_u64(0x5d5);
        for _ in 0..3 {
            let probe: Assignment = self
                .variables
                .iter()
                .map(|v| {
                    let (p, q) = v.kind.shape();
                    let m = DMatrix::from_fn(p, q, |_, _| rng.gen_range(-1.0..1.0));
                    match v.kind {
                        VarKind::Symmetric(_) => linalg::sym(&m),
                        VarKind::Rectangular(..) => m,
                    }
                })
                .collect();
            for c in &self.constraints {
                let (g, scale) = c.map.eval_with_scale(&probe);
                let asym = (&g - g.transpose()).norm();
                if asym > 1e-10 * scale.max(1.0) {
                    return Err(Error::Invalid(format!(
                        "constraint `{}` is not symmetric (asymmetry {asym:.3e})",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-constraint slack margins at `vals`; independent of any solver.
    pub fn verify(&self, vals: &[DMatrix<f64>], tol: f64) -> Result<MarginReport> {
        if vals.len() != self.variables.len() {
            return Err(Error::Invalid(format!(
                "assignment has {} matrices for {} variables",
                vals.len(),
                self.variables.len()
            )));
        }
        for (v, m) in self.variables.iter().zip(vals) {
            if m.shape() != v.kind.shape() {
                return Err(Error::Dimension {
                    op: "assignment",
                    left: v.kind.shape(),
                    right: m.shape(),
                });
            }
        }
        let eps = self.epsilon;
        let mut out = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let (g, scale) = c.map.eval_with_scale(vals);
            let d = g.nrows();
            let id = DMatrix::<f64>::identity(d, d);
            let margin = match c.sense {
                Sense::NegDef => linalg::min_eig(&(-&id * eps - &g)),
                Sense::NegSemidef => linalg::min_eig(&-&g),
                Sense::PosSemidef => linalg::min_eig(&g),
                Sense::PosDef => linalg::min_eig(&(&g - &id * eps)),
                Sense::Zero => -g.norm(),
            };
            let margin = if d == 0 { 0.0 } else { margin };
            let threshold = if c.sense.is_strict() {
                -0.5 * eps
            } else {
                -tol * scale
            };
            out.push(ConstraintMargin {
                name: c.name.clone(),
                sense: c.sense,
                margin,
                scale,
                satisfied: margin >= threshold,
            });
        }
        Ok(MarginReport::new(out))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub sense: Sense,
    /// Smallest eigenvalue of the slack (`−εI − G`, `−G`, `G`, `G − εI`),
    /// or `−‖G‖` for equalities.
    pub margin: f64,
    /// Sum of the magnitudes of the terms of `G`.
    pub scale: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub constraints: Vec<ConstraintMargin>,
    pub worst: f64,
    pub all_satisfied: bool,
}

impl MarginReport {
    fn new(constraints: Vec<ConstraintMargin>) -> Self {
        let worst = constraints.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
        let all_satisfied = constraints.iter().all(|c| c.satisfied);
        MarginReport {
            constraints,
            worst,
            all_satisfied,
        }
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintMargin> {
        self.constraints.iter().find(|c| c.name == name)
    }

    /// Worst violation of the acceptance thresholds, relative to each
    /// constraint's scale (0 when all are satisfied).
    fn violation(&self, eps: f64) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let shift = if c.sense.is_strict() { 0.5 * eps } else { 0.0 };
                ((-(c.margin + shift)) / c.scale.max(eps).max(1e-300)).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Feasible,
    NoCertificateFound,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Feasible point, or the best iterate when no certificate was found.
    pub assignment: Assignment,
    pub report: MarginReport,
    pub iterations: usize,
}

impl SolveOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub budget: usize,
    /// Relative slack accepted on non-strict constraints.
    pub tol: f64,
    /// Over-relaxation factor in `[1, 2)`.
    pub relax: f64,
    /// Iterations between feasibility checks.
    pub check_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            budget: DEFAULT_BUDGET,
            tol: 1e-9,
            relax: 1.5,
            check_every: 10,
        }
    }
}

/// Seam for plugging in other solvers.
pub trait LmiBackend {
    fn solve(&self, p: &LmiProblem, opts: &SolveOptions, start: Option<&Assignment>) -> Result<SolveOutcome>;
}

/// Alternating projections with over-relaxation.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlternatingProjections;

/// Log-barrier path following on `H_i(y) + sI ⪰ 0`, minimizing the
/// common shift `s` inside a ball around the start.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

/// Alternating projections for a tenth of the budget (at most 2000
/// iterations), then the barrier
/// method from the best iterate. Projections alone stall when the
/// feasible set has no interior in some cone (switch conditions that
/// force equalities between modes).
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultBackend;

/// Solves with the default backend from the zero start.
pub fn solve(p: &LmiProblem, budget: usize) -> Result<SolveOutcome> {
    let opts = SolveOptions {
        budget,
        ..Default::default()
    };
    DefaultBackend.solve(p, &opts, None)
}

pub fn verify(p: &LmiProblem, vals: &[DMatrix<f64>], tol: f64) -> Result<MarginReport> {
    p.verify(vals, tol)
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Isometric coordinates of a variable.
fn pack_var(kind: VarKind, m: &DMatrix<f64>, out: &mut Vec<f64>) {
    match kind {
        VarKind::Symmetric(n) => {
            for j in 0..n {
                for i in 0..=j {
                    let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                    out.push(if i == j { v } else { v * SQRT2 });
                }
            }
        }
        VarKind::Rectangular(..) => out.extend(m.iter()),
    }
}

fn unpack_var(kind: VarKind, z: &[f64]) -> DMatrix<f64> {
    match kind {
        VarKind::Symmetric(n) => {
            let mut m = DMatrix::zeros(n, n);
            let mut k = 0;
            for j in 0..n {
                for i in 0..=j {
                    let v = if i == j { z[k] } else { z[k] / SQRT2 };
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                    k += 1;
                }
            }
            m
        }
        VarKind::Rectangular(p, q) => DMatrix::from_column_slice(p, q, z),
    }
}

fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * (m.nrows() + 1) / 2);
    pack_var(VarKind::Symmetric(m.nrows()), m, &mut v);
    v
}

fn smat(d: usize, z: &[f64]) -> DMatrix<f64> {
    unpack_var(VarKind::Symmetric(d), z)
}

struct Layout {
    kinds: Vec<VarKind>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(p: &LmiProblem) -> Self {
        let kinds: Vec<VarKind> = p.variables.iter().map(|v| v.kind).collect();
        let mut offsets = Vec::with_capacity(kinds.len());
        let mut total = 0;
        for k in &kinds {
            offsets.push(total);
            total += k.dof();
        }
        Layout { kinds, offsets, total }
    }

    fn unpack(&self, z: &DVector<f64>) -> Assignment {
        self.kinds
            .iter()
            .zip(&self.offsets)
            .map(|(&k, &o)| unpack_var(k, &z.as_slice()[o..o + k.dof()]))
            .collect()
    }

    fn pack(&self, vals: &[DMatrix<f64>]) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.total);
        for (k, m) in self.kinds.iter().zip(vals) {
            pack_var(*k, m, &mut v);
        }
        DVector::from_vec(v)
    }

    fn basis(&self, idx: usize) -> Assignment {
        let mut z = DVector::zeros(self.total);
        z[idx] = 1.0;
        self.unpack(&z)
    }
}

/// A constraint in vectorized form `ω (c + M z)`.
struct Block {
    dim: usize,
    sense: Sense,
    shift: f64,
    c: DVector<f64>,
    m: DMatrix<f64>,
}

impl Block {
    fn project(&self, g: &[f64]) -> Vec<f64> {
        let d = self.dim;
        if d == 0 {
            return Vec::new();
        }
        let s = smat(d, g);
        let eig = SymmetricEigen::new(s);
        let mut lam = eig.eigenvalues.clone();
        for l in lam.iter_mut() {
            *l = match self.sense {
                Sense::NegDef | Sense::NegSemidef => l.min(-self.shift),
                Sense::PosDef | Sense::PosSemidef => l.max(self.shift),
                Sense::Zero => 0.0,
            };
        }
        let q = &eig.eigenvectors;
        let p = q * DMatrix::from_diagonal(&lam) * q.transpose();
        svec(&p)
    }

    /// `+1` when the constraint reads `G ⪰ …`, `−1` for `G ⪯ …`.
    fn orientation(&self) -> f64 {
        match self.sense {
            Sense::NegDef | Sense::NegSemidef => -1.0,
            _ => 1.0,
        }
    }
}

/// Problem data with equalities eliminated: `z = z0 + N y`.
struct Vectorized {
    layout: Layout,
    blocks: Vec<Block>,
    z0: DVector<f64>,
    nmat: DMatrix<f64>,
}

impl Vectorized {
    fn new(p: &LmiProblem) -> Result<Self> {
        p.validate()?;
        let layout = Layout::new(p);
        let nz = layout.total;
        let basis: Vec<Assignment> = (0..nz).map(|j| layout.basis(j)).collect();
        let mut eq_rows: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
        let mut blocks = Vec::new();
        for c in &p.constraints {
            let d = c.map.dim();
            let c0 = DVector::from_vec(svec(&c.map.constant));
            let mut m = DMatrix::zeros(c0.len(), nz);
            for (j, b) in basis.iter().enumerate() {
                let col = DVector::from_vec(svec(&c.map.linear_part(b).0));
                m.set_column(j, &col);
            }
            let w = m.norm();
            let w = if w > 0.0 { 1.0 / w } else { 1.0 };
            let (c0, m) = (c0 * w, m * w);
            if c.sense == Sense::Zero {
                eq_rows.push((c0, m));
            } else {
                let shift = if c.sense.is_strict() { p.epsilon * w } else { 0.0 };
                blocks.push(Block {
                    dim: d,
                    sense: c.sense,
                    shift,
                    c: c0,
                    m,
                });
            }
        }
        let (z0, nmat) = if eq_rows.is_empty() {
            (DVector::zeros(nz), DMatrix::identity(nz, nz))
        } else {
            let rows: usize = eq_rows.iter().map(|(c, _)| c.len()).sum();
            let mut e = DMatrix::zeros(rows, nz);
            let mut ce = DVector::zeros(rows);
            let mut r = 0;
            for (c, m) in &eq_rows {
                e.view_mut((r, 0), (c.len(), nz)).copy_from(m);
                ce.rows_mut(r, c.len()).copy_from(c);
                r += c.len();
            }
            let z0 = -linalg::pinv(&e, 1e-12) * &ce;
            (z0, linalg::null_space(&e, 1e-12))
        };
        Ok(Vectorized {
            layout,
            blocks,
            z0,
            nmat,
        })
    }

    fn reduced_start(&self, p: &LmiProblem, start: Option<&Assignment>) -> Result<DVector<f64>> {
        match start {
            Some(s) => {
                if s.len() != p.variables.len() {
                    return Err(Error::Invalid("start has the wrong number of variables".into()));
                }
                Ok(self.nmat.transpose() * (self.layout.pack(s) - &self.z0))
            }
            None => Ok(DVector::zeros(self.nmat.ncols())),
        }
    }

    fn assignment(&self, y: &DVector<f64>) -> Assignment {
        self.layout.unpack(&(&self.z0 + &self.nmat * y))
    }
}

/// Best point seen so far, ranked by relative violation.
struct Tracker<'a> {
    p: &'a LmiProblem,
    tol: f64,
    best: (f64, Assignment, MarginReport, usize),
}

impl<'a> Tracker<'a> {
    fn new(p: &'a LmiProblem, tol: f64, a: Assignment) -> Result<Self> {
        let rep = p.verify(&a, tol)?;
        Ok(Tracker {
            p,
            tol,
            best: (rep.violation(p.epsilon), a, rep, 0),
        })
    }

    /// Records `a`; true when it satisfies every constraint.
    fn offer(&mut self, a: Assignment, it: usize) -> Result<bool> {
        let rep = self.p.verify(&a, self.tol)?;
        let v = rep.violation(self.p.epsilon);
        let done = rep.all_satisfied;
        if done || v < self.best.0 {
            self.best = (v, a, rep, it);
        }
        Ok(done)
    }

    fn done(&self) -> bool {
        self.best.2.all_satisfied
    }

    fn outcome(self, iterations: usize) -> SolveOutcome {
        let feasible = self.done();
        SolveOutcome {
            status: if feasible {
                SolveStatus::Feasible
            } else {
                SolveStatus::NoCertificateFound
            },
            assignment: self.best.1,
            report: self.best.2,
            iterations,
        }
    }
}

impl LmiBackend for AlternatingProjections {
    fn solve(&self, p: &LmiProblem, opts: &SolveOptions, start: Option<&Assignment>) -> Result<SolveOutcome> {
        let v = Vectorized::new(p)?;
        let y = v.reduced_start(p, start)?;
        let mut tr = Tracker::new(p, opts.tol, v.assignment(&y))?;
        if tr.done() {
            return Ok(tr.outcome(0));
        }
        let used = project_loop(&v, y, opts, &mut tr)?;
        Ok(tr.outcome(used))
    }
}

fn project_loop(v: &Vectorized, mut y: DVector<f64>, opts: &SolveOptions, tr: &mut Tracker) -> Result<usize> {
    let nc = v.nmat.ncols();
    let rows: usize = v.blocks.iter().map(|b| b.c.len()).sum();
    let mut g = DMatrix::zeros(rows, nc);
    let mut h = DVector::zeros(rows);
    let mut r = 0;
    for b in &v.blocks {
        let len = b.c.len();
        g.view_mut((r, 0), (len, nc)).copy_from(&(&b.m * &v.nmat));
        h.rows_mut(r, len).copy_from(&(&b.c + &b.m * &v.z0));
        r += len;
    }
    let gp = linalg::pinv(&g, 1e-12);
    let relax = opts.relax.clamp(1.0, 1.99);
    let every = opts.check_every.max(1);
    let mut s = DVector::zeros(rows);
    for it in 1..=opts.budget {
        let gy = &h + &g * &y;
        let mut r = 0;
        for b in &v.blocks {
            let len = b.c.len();
            let proj = b.project(&gy.as_slice()[r..r + len]);
            s.rows_mut(r, len).copy_from_slice(&proj);
            r += len;
        }
        let target = &gp * (&s - &h);
        y = &y + (target - &y) * relax;
        if (it % every == 0 || it == opts.budget) && tr.offer(v.assignment(&y), it)? {
            log::debug!("sdp: projections feasible after {it} iterations");
            return Ok(it);
        }
    }
    Ok(opts.budget)
}

/// Oriented constraint `H(y) = a + Σ_j y_j B_j ⪰ 0`.
struct Oriented {
    a: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
}

impl Oriented {
    fn eval(&self, y: &DVector<f64>, s: f64) -> DMatrix<f64> {
        let mut h = self.a.clone();
        for (bj, yj) in self.b.iter().zip(y.iter()) {
            if *yj != 0.0 {
                h += bj * *yj;
            }
        }
        for i in 0..h.nrows() {
            h[(i, i)] += s;
        }
        h
    }
}

fn orient(v: &Vectorized) -> Vec<Oriented> {
    v.blocks
        .iter()
        .filter(|b| b.dim > 0)
        .map(|b| {
            let sg = b.orientation();
            let d = b.dim;
            let mut a = smat(d, (&b.c + &b.m * &v.z0).as_slice()) * sg;
            for i in 0..d {
                a[(i, i)] -= b.shift;
            }
            let bm = &b.m * &v.nmat;
            let bs = (0..bm.ncols())
                .map(|j| smat(d, bm.column(j).as_slice()) * sg)
                .collect();
            Oriented { a, b: bs }
        })
        .collect()
}

struct Barrier<'a> {
    cons: &'a [Oriented],
    rho2: f64,
}

impl Barrier<'_> {
    /// `−Σ log det(H_i + sI) − log(ρ² − ‖y‖²)`, or `None` outside the domain.
    fn value(&self, y: &DVector<f64>, s: f64) -> Option<f64> {
        let dball = self.rho2 - y.norm_squared();
        if dball <= 0.0 {
            return None;
        }
        let mut f = -dball.ln();
        for c in self.cons {
            let ch = c.eval(y, s).cholesky()?;
            f -= 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        Some(f)
    }

    /// Gradient and Hessian over `(y, s)`.
    fn derivatives(&self, y: &DVector<f64>, s: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let q = y.len();
        let mut g = DVector::zeros(q + 1);
        let mut hs = DMatrix::zeros(q + 1, q + 1);
        for c in self.cons {
            let ch = c.eval(y, s).cholesky()?;
            let l = ch.l();
            let d = l.nrows();
            let linv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
            let mut cs: Vec<DMatrix<f64>> = c.b.iter().map(|bj| &linv * bj * linv.transpose()).collect();
            cs.push(&linv * linv.transpose());
            for (j, cj) in cs.iter().enumerate() {
                g[j] -= cj.trace();
                for k in 0..=j {
                    let v = cj.dot(&cs[k]);
                    hs[(j, k)] += v;
                    if j != k {
                        hs[(k, j)] += v;
                    }
                }
            }
        }
        let dball = self.rho2 - y.norm_squared();
        for j in 0..q {
            g[j] += 2.0 * y[j] / dball;
            hs[(j, j)] += 2.0 / dball;
            for k in 0..q {
                hs[(j, k)] += 4.0 * y[j] * y[k] / (dball * dball);
            }
        }
        Some((g, hs))
    }
}

impl LmiBackend for InteriorPoint {
    fn solve(&self, p: &LmiProblem, opts: &SolveOptions, start: Option<&Assignment>) -> Result<SolveOutcome> {
        let v = Vectorized::new(p)?;
        let y = v.reduced_start(p, start)?;
        let mut tr = Tracker::new(p, opts.tol, v.assignment(&y))?;
        if tr.done() {
            return Ok(tr.outcome(0));
        }
        let used = barrier_loop(&v, y, opts.budget, &mut tr)?;
        Ok(tr.outcome(used))
    }
}

const MAX_CENTERING_STEPS: usize = 50;

fn barrier_loop(v: &Vectorized, y0: DVector<f64>, budget: usize, tr: &mut Tracker) -> Result<usize> {
    let cons = orient(v);
    if cons.is_empty() {
        tr.offer(v.assignment(&y0), 0)?;
        return Ok(0);
    }
    let scale = y0.norm().max(1.0);
    let bar = Barrier {
        cons: &cons,
        rho2: (1e3 * scale).powi(2),
    };
    let total_dim: f64 = cons.iter().map(|c| c.a.nrows() as f64).sum::<f64>() + 1.0;
    let lmin = cons
        .iter()
        .map(|c| linalg::min_eig(&c.eval(&y0, 0.0)))
        .fold(f64::INFINITY, f64::min);
    let mut s = (-lmin).max(0.0) + 1e-3 * (1.0 + lmin.abs());
    let mut y = y0;
    let mut t = total_dim / s.abs().max(1e-12);
    let mut used = 0;
    while used < budget {
        // Centering by damped Newton steps.
        let mut centered = false;
        let mut steps = 0;
        while used < budget && steps < MAX_CENTERING_STEPS {
            used += 1;
            steps += 1;
            let Some((mut g, hs)) = bar.derivatives(&y, s) else {
                break;
            };
            let q = y.len();
            g[q] += t;
            let step = match hs.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    let reg = hs.diagonal().amax() * 1e-12 + 1e-300;
                    let hr = &hs + DMatrix::identity(q + 1, q + 1) * reg;
                    match hr.lu().solve(&(-&g)) {
                        Some(x) => x,
                        None => break,
                    }
                }
            };
            let dec = -g.dot(&step);
            if !(dec.is_finite()) || dec < 0.0 {
                break;
            }
            if dec * 0.5 < 1e-9 {
                centered = true;
                break;
            }
            let f0 = t * s + bar.value(&y, s).unwrap_or(f64::INFINITY);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let yn = &y + step.rows(0, q) * alpha;
                let sn = s + step[q] * alpha;
                if let Some(fb) = bar.value(&yn, sn) {
                    if t * sn + fb <= f0 - 0.25 * alpha * dec {
                        y = yn;
                        s = sn;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                centered = true;
                break;
            }
            if tr.offer(v.assignment(&y), used)? {
                return Ok(used);
            }
        }
        // Numerical stagnation at large `t` still leaves a usable point.
        centered |= steps == MAX_CENTERING_STEPS;
        if tr.offer(v.assignment(&y), used)? {
            log::debug!("sdp: barrier feasible after {used} Newton steps (shift {s:.3e})");
            return Ok(used);
        }
        if !centered {
            break;
        }
        // A positive shift bounded away from its optimum gap means no
        // solution inside the ball; stop refining.
        let gap = total_dim / t;
        if s > 0.0 && gap < 1e-6 * s {
            break;
        }
        if t > 1e18 {
            break;
        }
        t *= 20.0;
    }
    Ok(used)
}

impl LmiBackend for DefaultBackend {
    fn solve(&self, p: &LmiProblem, opts: &SolveOptions, start: Option<&Assignment>) -> Result<SolveOutcome> {
        let v = Vectorized::new(p)?;
        let y = v.reduced_start(p, start)?;
        let mut tr = Tracker::new(p, opts.tol, v.assignment(&y))?;
        if tr.done() {
            return Ok(tr.outcome(0));
        }
        let ap_budget = (opts.budget / 10).min(2000);
        let ap_opts = SolveOptions {
            budget: ap_budget,
            ..opts.clone()
        };
        let mut used = project_loop(&v, y, &ap_opts, &mut tr)?;
        if !tr.done() && used < opts.budget {
            let best = tr.best.1.clone();
            let yb = v.reduced_start(p, Some(&best))?;
            used += barrier_loop(&v, yb, opts.budget - used, &mut tr)?;
        }
        Ok(tr.outcome(used))
    }
}
