//! Switched system data model: modes, gluing conditions, their normal
//! form, well-posedness, consistency and re-initialisation maps.
//!
//! Mode indices are 1-based in files and messages and 0-based in the API.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::polymat::PolyMatrix;
use crate::statespace::{express_in_state_basis, minimal_state_map, realize, StateRealization};

/// One gluing pair `G⁺(d/dt)w(t⁺) = G⁻(d/dt)w(t⁻)` in file form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GluingSpec {
    pub from: usize,
    pub to: usize,
    pub g_minus: PolyMatrix,
    pub g_plus: PolyMatrix,
}

/// Model file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub variables: usize,
    pub modes: Vec<PolyMatrix>,
    /// Optional per-mode state maps; missing entries are computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_maps: Option<Vec<Option<PolyMatrix>>>,
    #[serde(default)]
    pub gluing: Vec<GluingSpec>,
}

impl ModelSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Constant matrices `F⁻`, `F⁺` with `F⁻X_k = G⁻ mod R_k` and
/// `F⁺X_ℓ = G⁺ mod R_ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormPair {
    #[serde(with = "linalg::rows")]
    pub f_minus: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub f_plus: DMatrix<f64>,
}

/// State jump `x⁺ = L x⁻`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinitMap {
    #[serde(with = "linalg::rows")]
    pub l: DMatrix<f64>,
    /// Residual of `F⁺L − F⁻` relative to `‖F⁻‖`.
    pub residual: f64,
}

/// Analysed transition.
#[derive(Clone, Debug)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub normal: NormalFormPair,
    pub rank: usize,
    pub well_posed: bool,
    pub consistent: bool,
    pub consistency_residual: f64,
    pub reinit: Option<ReinitMap>,
}

impl Transition {
    /// `x⁺ = Lx⁻`, or the reason the jump is not defined for `x⁻`.
    pub fn jump(&self, x: &nalgebra::DVector<f64>, tol: f64) -> Result<nalgebra::DVector<f64>> {
        let Some(re) = &self.reinit else {
            return Err(Error::NotWellPosed {
                from: self.from + 1,
                to: self.to + 1,
                rank: self.rank,
                cols: self.normal.f_plus.ncols(),
            });
        };
        let xp = &re.l * x;
        let lhs = &self.normal.f_plus * &xp;
        let rhs = &self.normal.f_minus * x;
        let scale = rhs.norm().max(self.normal.f_minus.norm() * x.norm()).max(1e-300);
        let residual = (lhs - &rhs).norm() / scale;
        if rhs.norm() > 0.0 && residual > tol {
            return Err(Error::Inconsistent {
                from: self.from + 1,
                to: self.to + 1,
                residual,
            });
        }
        Ok(xp)
    }
}

/// A validated switched system with derived per-mode and per-transition data.
#[derive(Clone, Debug)]
pub struct SldsModel {
    pub spec: ModelSpec,
    pub realizations: Vec<StateRealization>,
    pub transitions: BTreeMap<(usize, usize), Transition>,
    pub tolerances: Tolerances,
}

fn model_err(msg: impl Into<String>) -> Error {
    Error::Model(msg.into())
}

impl SldsModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        SldsModel::with_tolerances(spec, Tolerances::default())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        SldsModel::new(ModelSpec::from_json(s)?)
    }

    pub fn with_tolerances(spec: ModelSpec, tolerances: Tolerances) -> Result<Self> {
        tolerances.validate()?;
        let w = spec.variables;
        if w == 0 {
            return Err(model_err("`variables` must be positive"));
        }
        if spec.modes.is_empty() {
            return Err(model_err("at least one mode is required"));
        }
        for (k, r) in spec.modes.iter().enumerate() {
            if r.shape() != (w, w) {
                return Err(model_err(format!(
                    "mode {} has shape {}x{}, expected {w}x{w}",
                    k + 1,
                    r.nrows(),
                    r.ncols()
                )));
            }
            if r.determinant()?.is_zero() {
                return Err(model_err(format!("mode {} is singular (det R ≡ 0)", k + 1)));
            }
        }
        if let Some(maps) = &spec.state_maps {
            if maps.len() != spec.modes.len() {
                return Err(model_err(format!(
                    "`state_maps` has {} entries for {} modes",
                    maps.len(),
                    spec.modes.len()
                )));
            }
        }
        let mut realizations = Vec::with_capacity(spec.modes.len());
        for (k, r) in spec.modes.iter().enumerate() {
            let given = spec
                .state_maps
                .as_ref()
                .and_then(|m| m[k].clone());
            let x = match given {
                Some(x) => {
                    validate_state_map(r, &x).map_err(|e| model_err(format!("mode {}: {e}", k + 1)))?;
                    x
                }
                None => minimal_state_map(r)?,
            };
            let real = realize(r, &x).map_err(|e| model_err(format!("mode {}: {e}", k + 1)))?;
            realizations.push(real);
        }
        let mut transitions = BTreeMap::new();
        let m = spec.modes.len();
        for g in &spec.gluing {
            if g.from == 0 || g.to == 0 || g.from > m || g.to > m {
                return Err(model_err(format!(
                    "gluing {}->{} references a mode outside 1..={m}",
                    g.from, g.to
                )));
            }
            if g.from == g.to {
                return Err(model_err(format!("gluing {}->{} is a self loop", g.from, g.to)));
            }
            if g.g_minus.nrows() != g.g_plus.nrows() || g.g_minus.ncols() != w || g.g_plus.ncols() != w {
                return Err(model_err(format!(
                    "gluing {}->{}: G- is {}x{}, G+ is {}x{}; both need the same row count and {w} columns",
                    g.from,
                    g.to,
                    g.g_minus.nrows(),
                    g.g_minus.ncols(),
                    g.g_plus.nrows(),
                    g.g_plus.ncols()
                )));
            }
            let (k, l) = (g.from - 1, g.to - 1);
            if transitions.contains_key(&(k, l)) {
                return Err(model_err(format!("gluing {}->{} is given twice", g.from, g.to)));
            }
            let t = analyse_transition(g, &realizations[k], &realizations[l], &tolerances)?;
            transitions.insert((k, l), t);
        }
        Ok(SldsModel {
            spec,
            realizations,
            transitions,
            tolerances,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.realizations.len()
    }

    pub fn w(&self) -> usize {
        self.spec.variables
    }

    pub fn transition(&self, from: usize, to: usize) -> Result<&Transition> {
        self.transitions.get(&(from, to)).ok_or(Error::MissingTransition {
            from: from + 1,
            to: to + 1,
        })
    }

    /// Roots of `det R_k`.
    pub fn mode_roots(&self, k: usize) -> Result<Vec<C64>> {
        self.spec.modes[k].determinant()?.roots()
    }

    /// Ok when every mode is Hurwitz, else the first offending root.
    pub fn check_hurwitz(&self) -> Result<()> {
        for k in 0..self.n_modes() {
            let tol = self.tolerances.hurwitz;
            if let Some(z) = self.mode_roots(k)?.into_iter().find(|z| z.re >= -tol) {
                return Err(Error::NotHurwitz {
                    mode: k + 1,
                    root: linalg::fmt_c(z),
                    tol,
                });
            }
        }
        Ok(())
    }

    /// Ok when every transition in the gluing map is well-posed.
    pub fn check_well_posed(&self) -> Result<()> {
        for t in self.transitions.values() {
            if !t.well_posed {
                return Err(Error::NotWellPosed {
                    from: t.from + 1,
                    to: t.to + 1,
                    rank: t.rank,
                    cols: t.normal.f_plus.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Mode file contents with computed state maps filled in.
    pub fn resolved_spec(&self) -> ModelSpec {
        let mut spec = self.spec.clone();
        spec.state_maps = Some(self.realizations.iter().map(|r| Some(r.x.clone())).collect());
        spec
    }
}

/// Checks that `X` has `deg det R` rows, each with `f R⁻¹` strictly
/// proper, and that the rows are linearly independent.
pub fn validate_state_map(r: &PolyMatrix, x: &PolyMatrix) -> Result<()> {
    if x.ncols() != r.ncols() {
        return Err(Error::Dimension {
            op: "state map",
            left: r.shape(),
            right: x.shape(),
        });
    }
    let n = r.determinant()?.degree().ok_or(Error::Singular)?;
    if x.nrows() != n {
        return Err(Error::Invalid(format!(
            "state map has {} rows but deg det R = {n}",
            x.nrows()
        )));
    }
    if !crate::polymat::is_strictly_proper(x, r)? {
        return Err(Error::Invalid("a state-map row f has f R^-1 not strictly proper".into()));
    }
    let len = x.degree().map_or(1, |d| d + 1);
    let rk = linalg::rank(&x.coeff_stack(len), 1e-10);
    if rk != n {
        return Err(Error::Invalid(format!(
            "state-map rows are linearly dependent (rank {rk} < {n})"
        )));
    }
    Ok(())
}

fn analyse_transition(
    g: &GluingSpec,
    from: &StateRealization,
    to: &StateRealization,
    tol: &Tolerances,
) -> Result<Transition> {
    let ctx = |e: Error| model_err(format!("gluing {}->{}: {e}", g.from, g.to));
    let normal = normal_form_pair(g, from, to).map_err(ctx)?;
    let fp = &normal.f_plus;
    let fm = &normal.f_minus;
    let n_to = to.n();
    let rank = linalg::rank(fp, tol.rank);
    let well_posed = rank == n_to;
    let (consistent, consistency_residual) = consistency(fp, fm, tol.consistency);
    let reinit = if well_posed {
        let l = linalg::pinv(fp, tol.rank) * fm;
        let scale = fm.norm().max(1e-300);
        let residual = if fm.norm() == 0.0 {
            0.0
        } else {
            (fp * &l - fm).norm() / scale
        };
        Some(ReinitMap { l, residual })
    } else {
        None
    };
    Ok(Transition {
        from: g.from - 1,
        to: g.to - 1,
        normal,
        rank,
        well_posed,
        consistent,
        consistency_residual,
        reinit,
    })
}

/// Range inclusion test `span F⁻ ⊆ span F⁺`.
pub fn consistency(fp: &DMatrix<f64>, fm: &DMatrix<f64>, tol: f64) -> (bool, f64) {
    let nm = fm.norm();
    if nm == 0.0 {
        return (true, 0.0);
    }
    let proj = fp * linalg::pinv(fp, 1e-9) * fm;
    let r = (fm - proj).norm() / nm;
    (r <= tol, r)
}

/// Normal form of one gluing pair.
pub fn normal_form_pair(g: &GluingSpec, from: &StateRealization, to: &StateRealization) -> Result<NormalFormPair> {
    let f_minus = express_in_state_basis(&g.g_minus, &from.x, &from.r)?;
    let f_plus = express_in_state_basis(&g.g_plus, &to.x, &to.r)?;
    Ok(NormalFormPair { f_minus, f_plus })
}

/// `(k,ℓ) → (F⁻, F⁺)` for every transition of the model.
pub fn normal_form(model: &SldsModel) -> BTreeMap<(usize, usize), NormalFormPair> {
    model
        .transitions
        .iter()
        .map(|(k, t)| (*k, t.normal.clone()))
        .collect()
}

/// Per-transition well-posedness and the global verdict.
pub fn is_well_posed(model: &SldsModel) -> (BTreeMap<(usize, usize), bool>, bool) {
    let per: BTreeMap<_, _> = model
        .transitions
        .iter()
        .map(|(k, t)| (*k, t.well_posed))
        .collect();
    let all = per.values().all(|&b| b);
    (per, all)
}

/// Per-transition consistency verdicts.
pub fn is_consistent(model: &SldsModel) -> BTreeMap<(usize, usize), bool> {
    model
        .transitions
        .iter()
        .map(|(k, t)| (*k, t.consistent))
        .collect()
}

/// Re-initialisation maps; fails on the first ill-posed transition.
pub fn reinit_maps(model: &SldsModel) -> Result<BTreeMap<(usize, usize), ReinitMap>> {
    model.check_well_posed()?;
    Ok(model
        .transitions
        .iter()
        .map(|(k, t)| (*k, t.reinit.clone().expect("well-posed")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circuit() -> ModelSpec {
        serde_json::from_str(
            r#"{
            "variables": 2,
            "modes": [ [[[], [1,1]], [[1], [-1]]],
                       [[[], [1,1]], [[1], []]] ],
            "gluing": [
              {"from": 2, "to": 1, "g_minus": [[[], [0.5]], [[], [0.5]]], "g_plus": [[[1], []], [[], [1]]]},
              {"from": 1, "to": 2, "g_minus": [[[], []], [[], [1]]], "g_plus": [[[1], []], [[], [1]]]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn circuit_reinit_maps() {
        let m = SldsModel::new(circuit()).unwrap();
        let l21 = &m.transition(1, 0).unwrap().reinit.as_ref().unwrap().l;
        let l12 = &m.transition(0, 1).unwrap().reinit.as_ref().unwrap().l;
        assert!((l21[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((l12[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(is_well_posed(&m).1);
    }

    #[test]
    fn ragged_and_bad_index_rejected() {
        let mut s = circuit();
        s.gluing[0].to = 3;
        assert!(SldsModel::new(s).is_err());
        let mut s = circuit();
        s.gluing[0].to = 2;
        assert!(SldsModel::new(s).is_err());
        assert!(ModelSpec::from_json(r#"{"variables":1,"modes":[[[[1,1]]]],"extra":1}"#).is_err());
    }

    #[test]
    fn well_posedness_rank() {
        let fp = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(linalg::rank(&fp, 1e-9), 1);
        let col = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(linalg::rank(&col, 1e-9), 1);
    }

    #[test]
    fn consistency_cases() {
        let id = DMatrix::identity(2, 2);
        assert!(consistency(&id, &id, 1e-8).0);
        let fp = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(consistency(&fp, &DMatrix::zeros(2, 3), 1e-8).0);
        let fm = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(!consistency(&fp, &fm, 1e-8).0);
    }

    #[test]
    fn zero_gluing_gives_zero_normal_form() {
        let mut s = circuit();
        s.gluing[1].g_minus = PolyMatrix::zeros(2, 2);
        let m = SldsModel::new(s).unwrap();
        assert_eq!(m.transition(0, 1).unwrap().normal.f_minus.norm(), 0.0);
    }
}
