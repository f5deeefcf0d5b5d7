mod common;

use std::sync::OnceLock;

use common::{load_model, mode_residual_fd};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use slds_core::linalg;
use slds_core::mlf::{self, CertificateStatus, MlfCertificate, MlfOptions, SwitchForm};
use slds_core::model::SldsModel;
use slds_core::sim::{self, SwitchEvent, SwitchingSignal};

const CERTIFIED: &[&str] = &[
    "elcirc.json",
    "exmath.json",
    "source_converter_4mode.json",
    "source_converter_6mode.json",
];

fn fastest_rate(model: &SldsModel) -> f64 {
    model
        .realizations
        .iter()
        .flat_map(|re| re.a.complex_eigenvalues().iter().map(|z| z.norm()).collect::<Vec<_>>())
        .fold(1e-3, f64::max)
}

fn slowest_rate(model: &SldsModel) -> f64 {
    model
        .realizations
        .iter()
        .flat_map(|re| re.a.complex_eigenvalues().iter().map(|z| -z.re).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min)
}

/// Random admissible signal: each event picks a transition out of the
/// current mode, dwell times scale with the fastest mode.
fn random_signal(model: &SldsModel, rng: &mut StdRng, events: usize, dwell: f64) -> SwitchingSignal {
    let mut mode = rng.gen_range(1..=model.n_modes());
    let initial = mode;
    let mut t = 0.0;
    let mut out = Vec::new();
    for _ in 0..events {
        let next: Vec<usize> = model
            .transitions
            .keys()
            .filter(|(k, _)| *k + 1 == mode)
            .map(|(_, l)| l + 1)
            .collect();
        if next.is_empty() {
            break;
        }
        t += dwell * rng.gen_range(0.2..2.0);
        mode = next[rng.gen_range(0..next.len())];
        out.push(SwitchEvent { time: t, mode });
    }
    SwitchingSignal::new(initial, out).unwrap()
}

fn random_state(n: usize, rng: &mut StdRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn certificates() -> &'static Vec<(SldsModel, MlfCertificate)> {
    static CERTS: OnceLock<Vec<(SldsModel, MlfCertificate)>> = OnceLock::new();
    CERTS.get_or_init(|| {
        CERTIFIED
            .iter()
            .map(|name| {
                let m = load_model(name);
                let c = mlf::certify(&m, &MlfOptions { form: SwitchForm::Exact, ..Default::default() }).unwrap();
                assert_eq!(c.status, CertificateStatus::Certified, "{name}");
                (m, c)
            })
            .collect()
    })
}

#[test]
fn converter_dimensions_follow_reinit_maps() {
    let m = load_model("source_converter_4mode.json");
    let mut rng = StdRng::seed_from_u64(7);
    let mut times: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..5e-3)).collect();
    times.sort_by(f64::total_cmp);
    let sig = SwitchingSignal::from_sequence(&[1, 3, 4, 2], &times).unwrap();
    let x0 = DVector::from_column_slice(&[1.0, 0.5]);
    let tr = sim::simulate(&m, &sig, &x0, 5e-3, 1e-5).unwrap();
    let dims: Vec<usize> = std::iter::once(tr.events[0].x_minus.len())
        .chain(tr.events.iter().map(|e| e.x_plus.len()))
        .collect();
    assert_eq!(dims, vec![2, 3, 3, 2]);
    for e in &tr.events {
        let l = &m.transition(e.from - 1, e.to - 1).unwrap().reinit.as_ref().unwrap().l;
        let xp = l * DVector::from_column_slice(&e.x_minus);
        assert_eq!(xp.as_slice(), e.x_plus.as_slice());
        assert!(e.gluing_residual < 1e-8, "{}->{}: {:.2e}", e.from, e.to, e.gluing_residual);
    }
}

#[test]
fn circuit_decays_under_any_signal() {
    let m = load_model("elcirc.json");
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..20 {
        let sig = random_signal(&m, &mut rng, 12, 1.0);
        let x0 = random_state(m.realizations[sig.initial() - 1].n(), &mut rng);
        let tr = sim::simulate(&m, &sig, &x0, 20.0, 0.1).unwrap();
        let c = sim::asymptotic_check(&tr);
        assert!(c.passed, "{c:?}");
    }
}

#[test]
fn certificates_decrease_along_random_signals() {
    let mut rng = StdRng::seed_from_u64(3);
    for (m, cert) in certificates() {
        let rate = fastest_rate(m);
        // Guaranteed decay: V̇ ≤ (λ_max(F̄)/λ_max(K̄)) V on every mode.
        let decay: Vec<f64> = cert
            .modes
            .iter()
            .zip(&m.realizations)
            .map(|(c, re)| {
                let f = re.a.transpose() * &c.k + &c.k * &re.a;
                linalg::max_eig(&f) / linalg::max_eig(&c.k)
            })
            .collect();
        for _ in 0..100 {
            let sig = random_signal(m, &mut rng, 6, 1.0 / rate);
            let x0 = random_state(m.realizations[sig.initial() - 1].n(), &mut rng);
            let t_end = sig.events().last().map_or(1.0 / rate, |e| e.time * 1.2);
            let mut tr = sim::simulate(m, &sig, &x0, t_end, 0.05 / rate).unwrap();
            let audit = sim::audit_mlf(&tr, cert).unwrap();
            assert!(audit.passed, "{}: {audit}", m.spec.name.clone().unwrap_or_default());
            tr.attach_certificate(cert).unwrap();
            for e in &tr.events {
                assert!(e.v_plus.unwrap() - e.v_minus.unwrap() <= sim::JUMP_TOL * audit.scale);
            }
            for p in tr.samples.windows(2) {
                if p[0].t == p[1].t {
                    continue;
                }
                let bound = p[0].v.unwrap() * (decay[p[0].mode - 1] * (p[1].t - p[0].t)).exp();
                assert!(p[1].v.unwrap() <= bound * (1.0 + 1e-9) + 1e-12 * audit.scale);
            }
        }
    }
}

#[test]
fn audit_catches_corrupted_certificate() {
    let (m, cert) = &certificates()[2];
    let mut bad = cert.clone();
    for mode in &mut bad.modes {
        mode.k = -&mode.k;
    }
    let mut rng = StdRng::seed_from_u64(5);
    let sig = random_signal(m, &mut rng, 4, 1.0 / fastest_rate(m));
    let x0 = random_state(m.realizations[sig.initial() - 1].n(), &mut rng);
    let tr = sim::simulate(m, &sig, &x0, sig.events().last().unwrap().time, 0.05 / fastest_rate(m)).unwrap();
    assert!(!sim::audit_mlf(&tr, &bad).unwrap().passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn semigroup(which in 0usize..CERTIFIED.len(), seed in any::<u64>()) {
        let m = load_model(CERTIFIED[which]);
        let mut rng = StdRng::seed_from_u64(seed);
        let rate = fastest_rate(&m);
        let sig = random_signal(&m, &mut rng, 5, 1.0 / rate);
        let x0 = random_state(m.realizations[sig.initial() - 1].n(), &mut rng);
        let t_end = 6.0 / rate;
        let dt = 0.1 / rate;
        let whole = sim::simulate(&m, &sig, &x0, t_end, dt).unwrap();
        let half = t_end / 2.0;
        let first = sim::simulate(&m, &sig, &x0, half, dt).unwrap();
        let mut x_mid = first.final_state().unwrap();
        // An event exactly at the split would be applied by the shifted signal.
        if let Some(e) = sig.events().iter().find(|e| e.time == half) {
            x_mid = DVector::from_column_slice(&first.events.iter().find(|r| r.t == e.time).unwrap().x_plus);
        }
        let second = sim::simulate(&m, &sig.shifted(half).unwrap(), &x_mid, t_end - half, dt).unwrap();
        let a = whole.final_state().unwrap();
        let b = second.final_state().unwrap();
        prop_assert_eq!(whole.final_sample().unwrap().mode, second.final_sample().unwrap().mode);
        let scale = whole.samples.iter().map(|s| s.x.iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0, f64::max);
        prop_assert!((&a - &b).amax() <= 1e-12 * scale.max(1e-300), "{} vs {}", a, b);
    }

    #[test]
    fn simulated_segments_solve_their_modes(which in 0usize..CERTIFIED.len(), seed in any::<u64>()) {
        let m = load_model(CERTIFIED[which]);
        let mut rng = StdRng::seed_from_u64(seed);
        let rate = fastest_rate(&m);
        let sig = random_signal(&m, &mut rng, 3, 2.0 / rate);
        let x0 = random_state(m.realizations[sig.initial() - 1].n(), &mut rng);
        // Dense sampling at 1e-4 of the fastest time constant.
        let dt = 1e-4 / rate;
        let t_end = sig.events().last().map_or(1.0 / rate, |e| e.time) + 0.5 / rate;
        let tr = sim::simulate(&m, &sig, &x0, t_end, dt).unwrap();
        for e in &tr.events {
            prop_assert!(e.gluing_residual < 1e-8, "{}->{}: {:.2e}", e.from, e.to, e.gluing_residual);
        }
        // Pick interior samples and difference the recorded w.
        let half = 4;
        let mut checked = 0;
        for i in (half..tr.samples.len().saturating_sub(half)).step_by(97) {
            let win = &tr.samples[i - half..=i + half];
            if win.iter().any(|s| s.mode != win[0].mode) || win.windows(2).any(|p| p[0].t == p[1].t) {
                continue;
            }
            let re = &m.realizations[win[0].mode - 1];
            let h = win[1].t - win[0].t;
            if win.windows(2).any(|p| ((p[1].t - p[0].t) - h).abs() > 1e-6 * h) {
                continue;
            }
            let center = win[half].t;
            let w_of = |s: f64| {
                let j = (((s - center) / h).round() + half as f64) as usize;
                DVector::from_column_slice(&win[j].w)
            };
            let res = mode_residual_fd(&re.r, w_of, center, h, half);
            prop_assert!(res < 1e-4, "residual {res:.2e} at t = {}", win[half].t);
            checked += 1;
        }
        prop_assert!(checked > 0);
    }
}

#[test]
fn slowest_rate_is_positive_on_certified_fixtures() {
    for name in CERTIFIED {
        assert!(slowest_rate(&load_model(name)) > 0.0, "{name}");
    }
}

