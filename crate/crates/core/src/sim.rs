//! Exact simulation of switched trajectories and auditing of multiple
//! Lyapunov functions along them.
//!
//! Mode numbers in this module are 1-based, as in model files.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlf::MlfCertificate;
use crate::model::SldsModel;
use crate::polymat::PolyMatrix;
use crate::statespace::{self, StateRealization};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchEvent {
    pub time: f64,
    pub mode: usize,
}

/// Piecewise constant, right-continuous mode selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawSignal")]
pub struct SwitchingSignal {
    initial: usize,
    events: Vec<SwitchEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    initial: usize,
    #[serde(default)]
    events: Vec<SwitchEvent>,
}

impl TryFrom<RawSignal> for SwitchingSignal {
    type Error = Error;

    fn try_from(r: RawSignal) -> Result<Self> {
        SwitchingSignal::new(r.initial, r.events)
    }
}

impl SwitchingSignal {
    pub fn new(initial: usize, events: Vec<SwitchEvent>) -> Result<Self> {
        if initial == 0 {
            return Err(Error::Invalid("modes are numbered from 1".into()));
        }
        let mut prev_mode = initial;
        let mut prev_time = f64::NEG_INFINITY;
        for e in &events {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::Invalid(format!("event time {} must be finite and nonnegative", e.time)));
            }
            if e.time <= prev_time {
                return Err(Error::Invalid(format!("event times must increase strictly ({} after {prev_time})", e.time)));
            }
            if e.mode == 0 {
                return Err(Error::Invalid("modes are numbered from 1".into()));
            }
            if e.mode == prev_mode {
                return Err(Error::Invalid(format!("event at t = {} does not change the mode", e.time)));
            }
            prev_mode = e.mode;
            prev_time = e.time;
        }
        Ok(SwitchingSignal { initial, events })
    }

    pub fn constant(mode: usize) -> Result<Self> {
        SwitchingSignal::new(mode, Vec::new())
    }

    /// Visits `modes` in order, switching at `times` (one fewer than modes).
    pub fn from_sequence(modes: &[usize], times: &[f64]) -> Result<Self> {
        let Some((&first, rest)) = modes.split_first() else {
            return Err(Error::Invalid("empty mode sequence".into()));
        };
        if rest.len() != times.len() {
            return Err(Error::Invalid(format!(
                "{} modes need {} switching times, got {}",
                modes.len(),
                rest.len(),
                times.len()
            )));
        }
        let events = rest
            .iter()
            .zip(times)
            .map(|(&mode, &time)| SwitchEvent { time, mode })
            .collect();
        SwitchingSignal::new(first, events)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn events(&self) -> &[SwitchEvent] {
        &self.events
    }

    pub fn mode_at(&self, t: f64) -> usize {
        self.events
            .iter()
            .take_while(|e| e.time <= t)
            .last()
            .map_or(self.initial, |e| e.mode)
    }

    /// The signal seen from time `t0`, with times shifted to start at 0.
    /// An event exactly at `t0` is considered already applied.
    pub fn shifted(&self, t0: f64) -> Result<Self> {
        let events = self
            .events
            .iter()
            .filter(|e| e.time > t0)
            .map(|e| SwitchEvent {
                time: e.time - t0,
                mode: e.mode,
            })
            .collect();
        SwitchingSignal::new(self.mode_at(t0), events)
    }

    /// Every mode and transition used must exist and be well-posed.
    pub fn check_against(&self, model: &SldsModel) -> Result<()> {
        let nm = model.n_modes();
        let mut prev = self.initial;
        let check_mode = |m: usize| {
            if m > nm {
                Err(Error::Invalid(format!("signal uses mode {m}, model has {nm}")))
            } else {
                Ok(())
            }
        };
        check_mode(prev)?;
        for e in &self.events {
            check_mode(e.mode)?;
            let t = model.transition(prev - 1, e.mode - 1)?;
            if t.reinit.is_none() {
                return Err(Error::NotWellPosed {
                    from: prev,
                    to: e.mode,
                    rank: t.rank,
                    cols: t.normal.f_plus.ncols(),
                });
            }
            prev = e.mode;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub mode: usize,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub w_plus: Vec<f64>,
    /// `‖G⁺(d/dt)w(t⁺) − G⁻(d/dt)w(t⁻)‖`, relative, from derivative stacks.
    pub gluing_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_plus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    /// Set when a transition met a state outside its consistency range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<String>,
    /// Smallest decay rate `−max Re λ` over the modes visited.
    pub slowest_decay: f64,
    pub t_end: f64,
}

/// `[Cx, CAx, …, CA^{k-1}x]`.
pub fn derivative_stack(re: &StateRealization, x: &DVector<f64>, k: usize) -> Vec<DVector<f64>> {
    re.derivative_map(k).iter().map(|m| m * x).collect()
}

/// `G(d/dt)w` from a derivative stack of `w`.
fn apply_operator(g: &PolyMatrix, re: &StateRealization, x: &DVector<f64>) -> DVector<f64> {
    let len = g.degree().map_or(0, |d| d + 1);
    let stack = derivative_stack(re, x, len);
    let mut out = DVector::zeros(g.nrows());
    for (j, d) in stack.iter().enumerate() {
        out += g.coeff(j) * d;
    }
    out
}

fn decay_rate(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    -a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Simulates from `x0` (a state of the initial mode) on `[0, t_end]`,
/// sampling every `dt` and at both sides of each event.
pub fn simulate(model: &SldsModel, signal: &SwitchingSignal, x0: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trace> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Invalid(format!("t_end = {t_end} must be finite and nonnegative")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("sample step {dt} must be positive")));
    }
    signal.check_against(model)?;
    let mut mode = signal.initial;
    let re0 = &model.realizations[mode - 1];
    if x0.len() != re0.n() {
        return Err(Error::Dimension {
            op: "initial state",
            left: (re0.n(), 1),
            right: (x0.len(), 1),
        });
    }
    let record = |t: f64, mode: usize, x: &DVector<f64>| {
        let re = &model.realizations[mode - 1];
        Sample {
            t,
            mode,
            x: x.as_slice().to_vec(),
            w: (&re.c * x).as_slice().to_vec(),
            v: None,
        }
    };
    let n_steps = (t_end / dt).round() as usize;
    let grid = |j: usize| if j >= n_steps { t_end } else { j as f64 * dt };
    let mut trace = Trace {
        samples: Vec::new(),
        events: Vec::new(),
        truncated: None,
        slowest_decay: decay_rate(&re0.a),
        t_end,
    };
    let mut seg_start = 0.0;
    let mut seg_x = x0.clone();
    let mut j = 0usize;
    let mut pending = signal.events.iter().filter(|e| e.time <= t_end).peekable();
    loop {
        let next_event = pending.peek().map(|e| e.time);
        let a = &model.realizations[mode - 1].a;
        // Grid samples strictly before the next event.
        while j <= n_steps && next_event.is_none_or(|te| grid(j) < te) {
            let t = grid(j);
            let x = statespace::expm_propagate(a, &seg_x, t - seg_start);
            trace.samples.push(record(t, mode, &x));
            j += 1;
        }
        let Some(e) = pending.next() else { break };
        let x_minus = statespace::expm_propagate(a, &seg_x, e.time - seg_start);
        trace.samples.push(record(e.time, mode, &x_minus));
        let tr = model.transition(mode - 1, e.mode - 1)?;
        let x_plus = match tr.jump(&x_minus, model.tolerances.consistency) {
            Ok(x) => x,
            Err(err @ Error::Inconsistent { .. }) => {
                log::warn!("trajectory truncated at t = {}: {err}", e.time);
                trace.truncated = Some(format!("t = {}: {err}", e.time));
                return Ok(trace);
            }
            Err(err) => return Err(err),
        };
        let (re_k, re_l) = (&model.realizations[mode - 1], &model.realizations[e.mode - 1]);
        let gluing_residual = model
            .spec
            .gluing
            .iter()
            .find(|g| g.from == mode && g.to == e.mode)
            .map_or(0.0, |g| {
                let lhs = apply_operator(&g.g_plus, re_l, &x_plus);
                let rhs = apply_operator(&g.g_minus, re_k, &x_minus);
                (lhs - &rhs).norm() / rhs.norm().max(x_minus.norm()).max(1e-300)
            });
        trace.events.push(EventRecord {
            t: e.time,
            from: mode,
            to: e.mode,
            x_minus: x_minus.as_slice().to_vec(),
            x_plus: x_plus.as_slice().to_vec(),
            w_minus: (&re_k.c * &x_minus).as_slice().to_vec(),
            w_plus: (&re_l.c * &x_plus).as_slice().to_vec(),
            gluing_residual,
            v_minus: None,
            v_plus: None,
        });
        mode = e.mode;
        trace.samples.push(record(e.time, mode, &x_plus));
        trace.slowest_decay = trace.slowest_decay.min(decay_rate(&re_l.a));
        seg_start = e.time;
        seg_x = x_plus;
        // A grid point coinciding with the event is covered by the post record.
        if j <= n_steps && grid(j) == e.time {
            j += 1;
        }
    }
    Ok(trace)
}

impl Trace {
    pub fn final_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn final_state(&self) -> Option<DVector<f64>> {
        self.final_sample().map(|s| DVector::from_column_slice(&s.x))
    }

    /// Fills in `V = xᵀK̄x` on samples and events.
    pub fn attach_certificate(&mut self, cert: &MlfCertificate) -> Result<()> {
        let value = |mode: usize, x: &[f64]| -> Result<f64> {
            let k = &cert
                .modes
                .get(mode - 1)
                .ok_or_else(|| Error::Invalid(format!("certificate has no mode {mode}")))?
                .k;
            if k.nrows() != x.len() {
                return Err(Error::Dimension {
                    op: "certificate value",
                    left: k.shape(),
                    right: (x.len(), 1),
                });
            }
            let x = DVector::from_column_slice(x);
            Ok(x.dot(&(k * &x)))
        };
        for s in &mut self.samples {
            s.v = Some(value(s.mode, &s.x)?);
        }
        for e in &mut self.events {
            e.v_minus = Some(value(e.from, &e.x_minus)?);
            e.v_plus = Some(value(e.to, &e.x_plus)?);
        }
        Ok(())
    }

    /// Columns `t, mode, x1…, w1…, V`; shorter states leave trailing `x`
    /// cells empty.
    pub fn to_csv(&self) -> String {
        let nx = self.samples.iter().map(|s| s.x.len()).max().unwrap_or(0);
        let nw = self.samples.first().map_or(0, |s| s.w.len());
        let mut out = String::from("t,mode");
        for i in 1..=nx {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=nw {
            let _ = write!(out, ",w{i}");
        }
        out.push_str(",V\n");
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.t, s.mode);
            for i in 0..nx {
                out.push(',');
                if let Some(v) = s.x.get(i) {
                    let _ = write!(out, "{v}");
                }
            }
            for v in &s.w {
                let _ = write!(out, ",{v}");
            }
            out.push(',');
            if let Some(v) = s.v {
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn events_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.events)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub t: f64,
    pub mode: usize,
    /// Increase of `V`, relative to the largest value on the trace.
    pub increase: f64,
    pub at_switch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Largest relative increase between consecutive samples of a mode.
    pub worst_flow: f64,
    /// Largest relative increase across an event.
    pub worst_jump: f64,
    /// Sample pairs where `V` did not decrease although it was well above
    /// the tolerance; zero for a strict Lyapunov function.
    pub stalled_steps: usize,
    pub scale: f64,
    pub tolerance: f64,
    pub jump_tolerance: f64,
    pub violations: Vec<AuditViolation>,
    pub passed: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "audit: worst flow increase {:+.3e} (tol {:.0e}), worst jump increase {:+.3e} (tol {:.0e}), relative; {} stalled steps: {}",
            self.worst_flow,
            self.tolerance,
            self.worst_jump,
            self.jump_tolerance,
            self.stalled_steps,
            if self.passed { "passed" } else { "FAILED" }
        )
    }
}

/// Relative tolerance on increases between switches.
pub const AUDIT_TOL: f64 = 1e-10;
/// Relative tolerance on increases across switches. Switch conditions
/// between modes sharing a state hold with equality, so they are only as
/// exact as the solver's verification tolerance.
pub const JUMP_TOL: f64 = 1e-8;

/// Checks that `V` decreases between switches and does not increase at
/// switches along `trace`.
pub fn audit_mlf(trace: &Trace, cert: &MlfCertificate) -> Result<AuditReport> {
    let mut t = trace.clone();
    t.attach_certificate(cert)?;
    let vals: Vec<f64> = t.samples.iter().map(|s| s.v.unwrap_or(0.0)).collect();
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let denom = scale.max(1e-300);
    let mut report = AuditReport {
        worst_flow: f64::NEG_INFINITY,
        worst_jump: f64::NEG_INFINITY,
        stalled_steps: 0,
        scale,
        tolerance: AUDIT_TOL,
        jump_tolerance: JUMP_TOL,
        violations: Vec::new(),
        passed: true,
    };
    for (i, pair) in t.samples.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let inc = (vals[i + 1] - vals[i]) / denom;
        let at_switch = a.t == b.t;
        if at_switch {
            report.worst_jump = report.worst_jump.max(inc);
        } else {
            report.worst_flow = report.worst_flow.max(inc);
            if inc >= 0.0 && vals[i] > 1e-6 * scale {
                report.stalled_steps += 1;
            }
        }
        if inc > if at_switch { JUMP_TOL } else { AUDIT_TOL } {
            report.passed = false;
            report.violations.push(AuditViolation {
                t: b.t,
                mode: b.mode,
                increase: inc,
                at_switch,
            });
        }
    }
    if report.stalled_steps > 0 {
        report.passed = false;
    }
    report.worst_flow = report.worst_flow.max(f64::MIN);
    report.worst_jump = report.worst_jump.max(f64::MIN);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCheck {
    pub w_initial: f64,
    pub w_final: f64,
    pub x_initial: f64,
    pub x_final: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// `‖w(t_end)‖ ≤ 1e-6·‖w(0)‖`; `‖x‖` is reported alongside.
pub fn asymptotic_check(trace: &Trace) -> AsymptoticCheck {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (first, last) = match (trace.samples.first(), trace.samples.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return AsymptoticCheck {
                w_initial: 0.0,
                w_final: 0.0,
                x_initial: 0.0,
                x_final: 0.0,
                passed: true,
                warning: Some("empty trace".into()),
            }
        }
    };
    let (w0, w1) = (norm(&first.w), norm(&last.w));
    let mut warning = None;
    if trace.truncated.is_some() {
        warning = Some("trace was truncated before t_end".into());
    } else if trace.slowest_decay <= 0.0 {
        warning = Some("a visited mode is not asymptotically stable".into());
    } else if trace.t_end * trace.slowest_decay < 1e6f64.ln() {
        warning = Some(format!(
            "t_end = {} is short for the slowest decay rate {:.3e}",
            trace.t_end, trace.slowest_decay
        ));
    }
    AsymptoticCheck {
        w_initial: w0,
        w_final: w1,
        x_initial: norm(&first.x),
        x_final: norm(&last.x),
        passed: w1 <= 1e-6 * w0,
        warning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlf::{MlfCertificate, Route};

    const CIRCUIT: &str = include_str!("../../../fixtures/elcirc.json");

    fn circuit() -> SldsModel {
        SldsModel::from_json(CIRCUIT).unwrap()
    }

    fn single(coeffs: &[f64]) -> SldsModel {
        let poly = serde_json::to_string(coeffs).unwrap();
        SldsModel::from_json(&format!(r#"{{"variables": 1, "modes": [[[{poly}]]], "gluing": []}}"#)).unwrap()
    }

    fn x(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn signal_validation() {
        assert!(SwitchingSignal::from_sequence(&[1, 2, 1], &[1.0, 2.0]).is_ok());
        assert!(SwitchingSignal::from_sequence(&[1, 2, 1], &[2.0, 1.0]).is_err());
        assert!(SwitchingSignal::from_sequence(&[1, 1], &[1.0]).is_err());
        assert!(SwitchingSignal::from_sequence(&[0], &[]).is_err());
        assert!(SwitchingSignal::from_json(r#"{"initial": 1, "events": [{"time": 1, "mode": 1}]}"#).is_err());
        let s = SwitchingSignal::from_json(r#"{"initial": 2, "events": [{"time": 0.5, "mode": 1}]}"#).unwrap();
        assert_eq!(s.mode_at(0.4), 2);
        assert_eq!(s.mode_at(0.5), 1);
    }

    #[test]
    fn first_order_decay() {
        let m = single(&[1.0, 1.0]);
        let tr = simulate(&m, &SwitchingSignal::constant(1).unwrap(), &x(&[1.0]), 1.0, 0.1).unwrap();
        let last = tr.final_sample().unwrap();
        assert_eq!(last.t, 1.0);
        assert!((last.w[0] - (-1f64).exp()).abs() < 1e-14);
        assert_eq!(tr.samples.len(), 11);
    }

    #[test]
    fn circuit_jump_halves() {
        let m = circuit();
        let sig = SwitchingSignal::from_sequence(&[2, 1], &[0.0]).unwrap();
        let tr = simulate(&m, &sig, &x(&[1.0]), 1.0, 0.25).unwrap();
        let e = &tr.events[0];
        assert_eq!((e.from, e.to), (2, 1));
        assert!((e.w_minus[1] - 1.0).abs() < 1e-14);
        assert!((e.w_plus[0] - 0.5).abs() < 1e-14 && (e.w_plus[1] - 0.5).abs() < 1e-14, "{:?}", e.w_plus);
        assert!(e.gluing_residual < 1e-12);
        // Pre and post records share the event time.
        assert_eq!(tr.samples[0].t, 0.0);
        assert_eq!(tr.samples[1].t, 0.0);
        assert_eq!(tr.samples[1].mode, 1);
    }

    #[test]
    fn circuit_audit_values() {
        let m = circuit();
        let cert = MlfCertificate::from_kernels(Route::UserSupplied, 0.0, vec![DMatrix::identity(1, 1); 2]);
        let sig = SwitchingSignal::from_sequence(&[1, 2, 1], &[0.7, 1.3]).unwrap();
        let mut tr = simulate(&m, &sig, &x(&[2.0]), 3.0, 0.05).unwrap();
        tr.attach_certificate(&cert).unwrap();
        let (up, down) = (&tr.events[0], &tr.events[1]);
        assert!((up.v_plus.unwrap() - up.v_minus.unwrap()).abs() < 1e-15);
        assert!((down.v_plus.unwrap() * 4.0 - down.v_minus.unwrap()).abs() < 1e-14);
        let rep = audit_mlf(&tr, &cert).unwrap();
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn flipped_certificate_fails_audit() {
        let m = circuit();
        let cert = MlfCertificate::from_kernels(Route::UserSupplied, 0.0, vec![-DMatrix::identity(1, 1); 2]);
        let sig = SwitchingSignal::from_sequence(&[1, 2], &[0.5]).unwrap();
        let tr = simulate(&m, &sig, &x(&[1.0]), 2.0, 0.1).unwrap();
        let rep = audit_mlf(&tr, &cert).unwrap();
        assert!(!rep.passed);
        assert!(rep.worst_flow > 0.0);
    }

    #[test]
    fn zero_trajectory() {
        let m = circuit();
        let cert = MlfCertificate::from_kernels(Route::UserSupplied, 0.0, vec![DMatrix::identity(1, 1); 2]);
        let sig = SwitchingSignal::from_sequence(&[1, 2], &[0.5]).unwrap();
        let tr = simulate(&m, &sig, &x(&[0.0]), 2.0, 0.1).unwrap();
        assert!(audit_mlf(&tr, &cert).unwrap().passed);
        assert!(asymptotic_check(&tr).passed);
    }

    #[test]
    fn asymptotic_verdicts() {
        let m = circuit();
        let sig = SwitchingSignal::from_sequence(&[1, 2, 1, 2], &[1.0, 2.5, 4.0]).unwrap();
        let tr = simulate(&m, &sig, &x(&[1.0]), 20.0, 0.5).unwrap();
        let c = asymptotic_check(&tr);
        assert!(c.passed && c.warning.is_none(), "{c:?}");

        let unstable = single(&[-1.0, 1.0]);
        let tr = simulate(&unstable, &SwitchingSignal::constant(1).unwrap(), &x(&[1.0]), 5.0, 0.5).unwrap();
        let c = asymptotic_check(&tr);
        assert!(!c.passed && c.warning.is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = circuit();
        let sig = SwitchingSignal::constant(3).unwrap();
        assert!(simulate(&m, &sig, &x(&[1.0]), 1.0, 0.1).is_err());
        let sig = SwitchingSignal::constant(1).unwrap();
        assert!(simulate(&m, &sig, &x(&[1.0, 2.0]), 1.0, 0.1).is_err());
        assert!(simulate(&m, &sig, &x(&[1.0]), 1.0, 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = circuit();
        let sig = SwitchingSignal::from_sequence(&[1, 2], &[0.5]).unwrap();
        let tr = simulate(&m, &sig, &x(&[1.0]), 1.0, 0.5).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,mode,x1,w1,w2,V"));
        assert_eq!(csv.lines().count(), 1 + tr.samples.len());
        let events: Vec<EventRecord> = serde_json::from_str(&tr.events_json().unwrap()).unwrap();
        assert_eq!(events, tr.events);
    }
}
