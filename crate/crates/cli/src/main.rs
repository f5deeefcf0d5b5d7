use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use slds_core::config::Tolerances;
use slds_core::mlf::{
    self, CertificateStatus, MlfCertificate, MlfOptions, MlfReport, Route, SwitchForm, VerifyTolerance,
};
use slds_core::model::{ModelSpec, SldsModel};
use slds_core::polymat::PolyMatrix;
use slds_core::posreal::{self, StandardSlds};
use slds_core::sim::{self, SwitchingSignal};
use slds_core::statespace::express_in_state_basis;
use slds_core::Error;

const EXIT_CERTIFIED: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_NOT_FOUND: u8 = 2;
const EXIT_AUDIT_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "slds", version, about = "Stability certificates for switched linear differential systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search for (or re-verify) a multiple quadratic Lyapunov function.
    Check(CheckArgs),
    /// Simulate the system under a switching signal.
    Simulate(SimulateArgs),
    /// Positive-realness tools for the standard two-mode system.
    Posreal {
        #[command(subcommand)]
        command: PosrealCommand,
    },
    /// Emit the generic model of the standard two-mode system.
    Standard(PairArgs),
    /// Scan the candidate family K1 = 1, K2 = rho of a two-mode scalar-state model.
    Scan(ScanArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RouteArg {
    Exact,
    Conservative,
    Posreal,
    All,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Model file; optional with --verify-only when the certificate embeds its model.
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RouteArg::All)]
    route: RouteArg,
    /// Where to write the certificate.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Absolute strictness margin (default: relative to the largest ‖A_k‖).
    #[arg(long)]
    eps: Option<f64>,
    /// Solver iteration budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Re-verify a stored certificate instead of searching.
    #[arg(long, value_name = "CERT")]
    verify_only: Option<PathBuf>,
    /// JSON file overriding numerical tolerances.
    #[arg(long)]
    tolerances: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    model: PathBuf,
    /// Switching signal file.
    #[arg(long)]
    signal: PathBuf,
    /// Initial state, comma separated, or a file holding it.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long)]
    t_end: f64,
    #[arg(long)]
    dt: f64,
    /// Certificate to audit along the trace.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Trace CSV; events go to a `.events.json` sidecar.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tolerances: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PairArgs {
    #[arg(long)]
    r1: PathBuf,
    #[arg(long)]
    r2: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PosrealCommand {
    /// Test whether R2·R1⁻¹ is strictly positive-real.
    Sprcheck(PairArgs),
    /// Build the multiple Lyapunov function from the spectral factorization.
    Mlf {
        #[command(flatten)]
        pair: PairArgs,
        /// Where to write the equivalent generic model.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Use the structured LMI instead of the spectral factorization.
        #[arg(long)]
        structured: bool,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Recover the feedback M with R2 = M·R1 + … from a certificate.
    Complete {
        #[command(flatten)]
        pair: PairArgs,
        /// Certificate on the standard model; computed when absent.
        #[arg(long)]
        cert: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ScanArgs {
    model: PathBuf,
    /// Ratios to test, comma separated (default: 1e-3 to 1e3 by half decades).
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLDS_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Check(a) => cmd_check(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Posreal { command } => cmd_posreal(&command),
        Command::Standard(a) => cmd_standard(&a),
        Command::Scan(a) => cmd_scan(&a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Parses JSON, naming the offending path and line on failure.
fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        anyhow::anyhow!("{}: at `{}`: {}", path.display(), at, e.into_inner())
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn load_tolerances(path: Option<&Path>) -> Result<Tolerances> {
    match path {
        None => Ok(Tolerances::default()),
        Some(p) => {
            let t: Tolerances = parse_json(p)?;
            t.validate().with_context(|| p.display().to_string())?;
            Ok(t)
        }
    }
}

fn load_model(path: &Path, tol: Tolerances) -> Result<SldsModel> {
    let spec: ModelSpec = parse_json(path)?;
    SldsModel::with_tolerances(spec, tol).with_context(|| path.display().to_string())
}

fn verdict(cert: &MlfCertificate) -> u8 {
    match cert.status {
        CertificateStatus::Certified => {
            println!("verdict: certified, asymptotically stable under every admissible switching signal");
            EXIT_CERTIFIED
        }
        CertificateStatus::NoCertificateFound => {
            println!("verdict: {}", mlf::NOT_FOUND_NOTE);
            EXIT_NOT_FOUND
        }
    }
}

fn cmd_check(a: &CheckArgs) -> Result<u8> {
    let tol = load_tolerances(a.tolerances.as_deref())?;
    if let Some(cert_path) = &a.verify_only {
        return verify_only(a.model.as_deref(), cert_path, tol);
    }
    let Some(model_path) = &a.model else {
        bail!("a model file is required unless --verify-only is given");
    };
    let model = load_model(model_path, tol)?;
    model.check_well_posed()?;
    model.check_hurwitz()?;
    for k in 0..model.n_modes() {
        let roots: Vec<String> = model.mode_roots(k)?.into_iter().map(slds_core::linalg::fmt_c).collect();
        info!("mode {}: characteristic roots {}", k + 1, roots.join(", "));
    }
    let mut opts = MlfOptions {
        epsilon: a.eps,
        ..Default::default()
    };
    if let Some(b) = a.budget {
        opts.budget = b;
    }
    let routes: &[RouteArg] = match a.route {
        RouteArg::All => &[RouteArg::Exact, RouteArg::Conservative, RouteArg::Posreal],
        ref r => std::slice::from_ref(r),
    };
    let mut best: Option<MlfCertificate> = None;
    for &r in routes {
        let cert = match r {
            RouteArg::Exact | RouteArg::Conservative => {
                opts.form = if r == RouteArg::Exact { SwitchForm::Exact } else { SwitchForm::Conservative };
                match mlf::certify(&model, &opts) {
                    Ok(c) => c,
                    Err(e @ Error::Multiplicity { .. }) if a.route == RouteArg::All => {
                        println!("route lmi-exact: skipped ({e}); trying the conservative form");
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            RouteArg::Posreal => match posreal_route(&model, a.eps) {
                Ok(c) => c,
                Err(e) if a.route == RouteArg::All => {
                    println!("route positive-real: skipped ({e})");
                    continue;
                }
                Err(Error::NotPositiveReal(msg)) => {
                    println!("route positive-real: {msg}");
                    println!("verdict: {}", mlf::NOT_FOUND_NOTE);
                    return Ok(EXIT_NOT_FOUND);
                }
                Err(e) => return Err(e.into()),
            },
            RouteArg::All => unreachable!(),
        };
        let report = mlf::verify_mlf(&model, &cert, VerifyTolerance::relative(model.tolerances.verify))?;
        println!("route {}: {:?}", cert.route, cert.status);
        if let Some(s) = &cert.solver {
            println!("  solver {} {:?} after {} of {} iterations", s.backend, s.status, s.iterations, s.budget);
        }
        println!("{report}");
        let done = cert.status == CertificateStatus::Certified;
        if best.is_none() || done {
            best = Some(cert);
        }
        if done {
            break;
        }
    }
    let Some(cert) = best else {
        bail!("no route applies to this model");
    };
    if let Some(out) = &a.out {
        write(out, &cert.to_json())?;
        info!("certificate written to {}", out.display());
    }
    Ok(verdict(&cert))
}

fn verify_only(model_path: Option<&Path>, cert_path: &Path, tol: Tolerances) -> Result<u8> {
    let cert: MlfCertificate = parse_json(cert_path)?;
    let model = match (model_path, &cert.model) {
        (Some(p), _) => load_model(p, tol)?,
        (None, Some(spec)) => SldsModel::with_tolerances(spec.clone(), tol)?,
        (None, None) => bail!("{} embeds no model; pass the model file", cert_path.display()),
    };
    let report = mlf::check_certificate(&model, &cert, VerifyTolerance::relative(model.tolerances.verify))
        .with_context(|| cert_path.display().to_string())?;
    println!("route {}: recorded margins reproduced", cert.route);
    println!("{report}");
    if cert.status == CertificateStatus::Certified && report.passed {
        Ok(verdict(&cert))
    } else {
        println!("verdict: {}", mlf::NOT_FOUND_NOTE);
        Ok(EXIT_NOT_FOUND)
    }
}

/// Runs the spectral-factorization construction on the first two modes
/// and carries the kernels over to the state maps of `model`.
fn posreal_route(model: &SldsModel, eps: Option<f64>) -> std::result::Result<MlfCertificate, Error> {
    if model.n_modes() != 2 {
        return Err(Error::NotSupported("the positive-real route needs exactly two modes".into()));
    }
    let s = posreal::build_standard_slds(&model.spec.modes[0], &model.spec.modes[1])?;
    let pr = posreal::mlf_from_positive_real(&s)?;
    let mut ks = Vec::new();
    for (k, kbar) in pr.certificate.kernels().into_iter().enumerate() {
        let ours = &model.realizations[k];
        let theirs = &pr.model.realizations[k];
        if ours.n() != theirs.n() {
            return Err(Error::Model(format!("mode {}: state dimensions differ from the standard system", k + 1)));
        }
        let t = express_in_state_basis(&theirs.x, &ours.x, &ours.r)?;
        ks.push(t.transpose() * kbar * &t);
    }
    let mut cert = MlfCertificate::from_kernels(Route::PositiveReal, eps.unwrap_or_else(|| mlf::mlf_epsilon(model)), ks);
    cert.model = Some(model.resolved_spec());
    let report = mlf::verify_mlf(model, &cert, VerifyTolerance::relative(model.tolerances.verify))?;
    cert.record(&report);
    if !report.passed {
        cert.status = CertificateStatus::NoCertificateFound;
        cert.note = Some(mlf::NOT_FOUND_NOTE.into());
    }
    Ok(cert)
}

fn parse_x0(s: &str) -> Result<Vec<f64>> {
    let text = if Path::new(s).is_file() { read(Path::new(s))? } else { s.to_string() };
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad initial state entry `{t}`")))
        .collect()
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".events.json");
    PathBuf::from(s)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<u8> {
    let model = load_model(&a.model, load_tolerances(a.tolerances.as_deref())?)?;
    let signal: SwitchingSignal = parse_json(&a.signal)?;
    signal.check_against(&model)?;
    let x0 = DVector::from_vec(parse_x0(&a.x0)?);
    let mut trace = sim::simulate(&model, &signal, &x0, a.t_end, a.dt)?;
    let audit = match &a.cert {
        Some(p) => {
            let cert: MlfCertificate = parse_json(p)?;
            trace.attach_certificate(&cert)?;
            Some(sim::audit_mlf(&trace, &cert)?)
        }
        None => None,
    };
    write(&a.out, &trace.to_csv())?;
    write(&sidecar(&a.out), &trace.events_json()?)?;
    println!(
        "{} samples, {} switches, trace in {}",
        trace.samples.len(),
        trace.events.len(),
        a.out.display()
    );
    let worst_gluing = trace.events.iter().map(|e| e.gluing_residual).fold(0.0, f64::max);
    if !trace.events.is_empty() {
        println!("largest gluing residual at switches {worst_gluing:.3e}");
    }
    let asym = sim::asymptotic_check(&trace);
    println!(
        "|w(0)| = {:.6e}, |w(t_end)| = {:.6e}, |x(t_end)| = {:.6e}",
        asym.w_initial, asym.w_final, asym.x_final
    );
    if let Some(w) = &asym.warning {
        warn!("{w}");
    }
    if let Some(reason) = &trace.truncated {
        eprintln!("error: trace truncated: {reason}");
        return Ok(EXIT_INVALID);
    }
    match audit {
        Some(r) => {
            println!("{r}");
            Ok(if r.passed { EXIT_CERTIFIED } else { EXIT_AUDIT_FAILED })
        }
        None => Ok(EXIT_CERTIFIED),
    }
}

fn load_pair(p: &PairArgs) -> Result<(PolyMatrix, PolyMatrix)> {
    Ok((parse_json(&p.r1)?, parse_json(&p.r2)?))
}

fn load_standard(p: &PairArgs) -> Result<StandardSlds> {
    let (r1, r2) = load_pair(p)?;
    Ok(posreal::build_standard_slds(&r1, &r2)?)
}

fn cmd_posreal(c: &PosrealCommand) -> Result<u8> {
    match c {
        PosrealCommand::Sprcheck(p) => {
            let (r1, r2) = load_pair(p)?;
            let check = posreal::is_strictly_positive_real(&r2, &r1)?;
            println!("boundary D(-xi)'N(xi) + N(-xi)'D(xi) =\n{}", check.boundary);
            if let Some(out) = &p.out {
                write(out, &to_json(&check))?;
            }
            if check.positive_real {
                println!("R2·R1⁻¹ is strictly positive-real");
                Ok(EXIT_CERTIFIED)
            } else {
                println!("R2·R1⁻¹ is not strictly positive-real: {}", describe_witness(&check));
                Ok(EXIT_NOT_FOUND)
            }
        }
        PosrealCommand::Mlf {
            pair,
            model_out,
            structured,
            budget,
        } => {
            let s = load_standard(pair)?;
            let spr = posreal::is_strictly_positive_real(&s.r2, &s.r1)?;
            if !spr.positive_real {
                println!("R2·R1⁻¹ is not strictly positive-real: {}", describe_witness(&spr));
                println!("verdict: {}", mlf::NOT_FOUND_NOTE);
                return Ok(EXIT_NOT_FOUND);
            }
            let (cert, report) = if *structured {
                posreal::structured_mlf(&s, budget.unwrap_or(slds_core::sdp::DEFAULT_BUDGET))?
            } else {
                let pr = posreal::mlf_from_positive_real(&s)?;
                println!("spectral factor Q =\n{}", pr.q.q);
                println!(
                    "division residual {:.3e}, block identity residual {:.3e}, K2 identity residual {:.3e}",
                    pr.division_residual, pr.block_residual, pr.r2_identity_residual
                );
                (pr.certificate, pr.report)
            };
            print_kernels(&cert, &report);
            if let Some(out) = &pair.out {
                write(out, &cert.to_json())?;
            }
            if let Some(out) = model_out {
                write(out, &to_json(&s.to_spec()?))?;
            }
            Ok(verdict(&cert))
        }
        PosrealCommand::Complete { pair, cert } => {
            let s = load_standard(pair)?;
            let cert = match cert {
                Some(p) => parse_json(p)?,
                None => posreal::mlf_from_positive_real(&s)?.certificate,
            };
            let c = posreal::positive_real_completion(&s, &cert)?;
            println!("M =\n{}", c.m);
            println!(
                "division residual {:.3e}, identity residual {:.3e}",
                c.division_residual, c.identity_residual
            );
            if let Some(out) = &pair.out {
                write(out, &to_json(&c.m))?;
            }
            if c.spr.positive_real {
                println!("R2·R1⁻¹ recomputed from M is strictly positive-real");
                Ok(EXIT_CERTIFIED)
            } else {
                println!("the recovered M does not give a strictly positive-real ratio: {}", describe_witness(&c.spr));
                Ok(EXIT_NOT_FOUND)
            }
        }
    }
}

fn describe_witness(c: &posreal::SprCheck) -> String {
    match &c.witness {
        Some(posreal::SprWitness::Pole { re, im }) => format!("pole {re:+.6e}{im:+.6e}j in the closed right half-plane"),
        Some(posreal::SprWitness::Frequency { omega, min_eig }) => {
            format!("at frequency {omega:.6e} the Hermitian part has eigenvalue {min_eig:.6e}")
        }
        None => "no witness".into(),
    }
}

fn print_kernels(cert: &MlfCertificate, report: &MlfReport) {
    for (k, m) in cert.modes.iter().enumerate() {
        println!("K{} = {}", k + 1, fmt_matrix(&m.k));
    }
    println!("{report}");
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.10}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn cmd_standard(p: &PairArgs) -> Result<u8> {
    let s = load_standard(p)?;
    println!("Pi = {}", fmt_matrix(&s.pi));
    println!("K limit = {}", fmt_matrix(&s.k_limit));
    println!("n1 = {}, n2 = {}", s.n1(), s.n2());
    let spec = to_json(&s.to_spec()?);
    match &p.out {
        Some(out) => write(out, &spec)?,
        None => println!("{spec}"),
    }
    Ok(EXIT_CERTIFIED)
}

fn cmd_scan(a: &ScanArgs) -> Result<u8> {
    let model = load_model(&a.model, Tolerances::default())?;
    let ratios = a
        .ratios
        .clone()
        .unwrap_or_else(|| (-6..=6).map(|i| 10f64.powf(i as f64 / 2.0)).collect());
    let report = mlf::scan_candidate_family(&model, &ratios, a.budget.unwrap_or(slds_core::sdp::DEFAULT_BUDGET))?;
    println!("{report}");
    if let Some(out) = &a.out {
        write(out, &to_json(&report))?;
    }
    if !report.consistent {
        warn!("the scan and the LMI outcome disagree");
    }
    Ok(match report.lmi_status {
        CertificateStatus::Certified => EXIT_CERTIFIED,
        CertificateStatus::NoCertificateFound => {
            println!("verdict: {}", mlf::NOT_FOUND_NOTE);
            EXIT_NOT_FOUND
        }
    })
}
