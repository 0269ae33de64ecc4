//! Acceptance suite: one PASS/FAIL/SKIPPED line per criterion.
//!
//! Runs without the libtest harness so the lines reach stdout; exits nonzero
//! when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ezcare::calibrate::{
    fit_gompertz, fit_healthcare, regression_baseline, synthesize_cohort, CalibrationResult, FitSetup,
    OptMethod, OptimizerConfig, REFERENCE_FITS,
};
use ezcare::closed_form::{u_q, u_q_with_derivative, QuadratureConfig};
use ezcare::data_io::{parse_hmd_cohort, read_text, Sex};
use ezcare::mortality::{age_grid, gompertz_path, integrate_endogenous};
use ezcare::ode::{log_grid, solve_u_star, SolverConfig};
use ezcare::params::{us_baseline, EfficacyPower, ModelParams};
use ezcare::simulate::{horizon_check, sample_lifetimes, Regime, SimConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = fn(&mut Audit) -> Outcome;

/// Calibrated results collected for the feasibility audit.
#[derive(Default)]
struct Audit {
    results: Vec<(String, CalibrationResult)>,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn constants(_: &mut Audit) -> Outcome {
    // Oracle: plain arithmetic on the baseline inputs.
    let (gamma, psi, delta, r, mu, sigma) = (2.0_f64, 1.5_f64, 0.03_f64, 0.01_f64, 0.052_f64, 0.154_f64);
    let excess = mu * mu / (2.0 * gamma * sigma * sigma);
    let k = delta * psi + (1.0 - psi) * (r + excess);
    let theta = (1.0 - gamma) / (1.0 - 1.0 / psi);
    let lambda = delta * theta + (1.0 - theta) * k;
    let pi = mu / (gamma * sigma * sigma);

    let p = us_baseline();
    let got = [p.k_star(), p.lambda_star(), p.merton_fraction()];
    let oracle = [k, lambda, pi];
    let quoted = [0.025748, 0.012991, 1.09631];
    let worst = got.iter().zip(&oracle).map(|(g, o)| (g - o).abs()).fold(0.0, f64::max);
    let deltas: Vec<String> = got.iter().zip(&quoted).map(|(g, q)| format!("{:+.2e}", g - q)).collect();
    verdict(
        worst <= 1e-6,
        format!(
            "k*={:.10} Lambda*={:.10} pi*={:.10}; max |impl-oracle|={worst:.1e}; vs quoted figures {}",
            got[0],
            got[1],
            got[2],
            deltas.join(" ")
        ),
    )
}

fn sandwich(_: &mut Audit) -> Outcome {
    let p = us_baseline();
    let cfg = QuadratureConfig::default();
    let k = p.k_star();
    let grid = log_grid(1e-5, 1.0, 200);
    let mut strict = true;
    let mut worst_res: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for q in [p.beta_lower().expect("efficacy present"), p.beta] {
        worst_zero = worst_zero.max((u_q(0.0, q, &p, &cfg).unwrap() - k).abs());
        for &m in &grid {
            let (u, du) = u_q_with_derivative(m, q, &p, &cfg).unwrap();
            let c0 = p.tilde_c0(m);
            strict &= c0 < u && u < c0 + q;
            let res = u * u - c0 * u - q * m * du;
            worst_res = worst_res.max(res.abs() / u.powi(2).max(1.0));
        }
    }
    verdict(
        strict && worst_zero <= 1e-8 && worst_res <= 1e-5,
        format!(
            "strict sandwich at 400 points: {strict}; |u_q(0)-k*|={worst_zero:.1e}; scaled residual={worst_res:.1e}"
        ),
    )
}

fn envelope(_: &mut Audit) -> Outcome {
    let p = us_baseline();
    let cfg = SolverConfig::default();
    let t = Instant::now();
    let curve = match solve_u_star(&p, &cfg) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("solve failed: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let slack = curve.envelope_slack();
    let increasing = curve.is_strictly_increasing();
    let defect = curve.concavity_defect();

    let quad = QuadratureConfig::default();
    let faint = p.with_efficacy(Some(EfficacyPower::new(1e-6, p.efficacy.unwrap().q()).unwrap())).unwrap();
    let faint_curve = solve_u_star(&faint, &cfg).unwrap();
    let gap = faint_curve
        .grid
        .iter()
        .zip(&faint_curve.values)
        .map(|(&m, &u)| (u - u_q(m, faint.beta, &faint, &quad).unwrap()).abs())
        .fold(0.0, f64::max);

    let flat = p.with_zeta(1.0).unwrap();
    let flat_curve = solve_u_star(&flat, &cfg).unwrap();
    let collapse = flat_curve.values.iter().map(|u| (u - flat.k_star()).abs()).fold(0.0, f64::max);

    verdict(
        slack >= 0.0 && increasing && defect <= 0.0 && gap <= 1e-4 && collapse <= 1e-12 && secs < 30.0,
        format!(
            "{} nodes in {secs:.2}s; envelope slack={slack:.2e}; increasing={increasing}; \
             concavity defect={defect:.2e}; a=1e-6 gap to u_beta={gap:.2e}; zeta=1 gap to k*={collapse:.1e}",
            curve.grid.len()
        ),
    )
}

fn band(_: &mut Audit) -> Outcome {
    let t = Instant::now();
    let p = us_baseline();
    let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
    let ages = age_grid(0.0, 100.0, 0.05).unwrap();
    let path = integrate_endogenous(&p, &curve, &ages, 0.05).unwrap();
    let (lo, hi) = (p.beta - p.max_growth_reduction(), p.beta);
    let mut inside = path.growth.iter().all(|&g| lo < g && g < hi);
    for i in 1..ages.len() {
        let step = (path.rates[i].ln() - path.rates[i - 1].ln()) / (ages[i] - ages[i - 1]);
        inside &= lo < step && step < hi;
    }
    let none = p.with_efficacy(None).unwrap();
    let none_curve = solve_u_star(&none, &SolverConfig::default()).unwrap();
    let endo = integrate_endogenous(&none, &none_curve, &ages, 0.05).unwrap();
    let gomp = gompertz_path(none.m0, none.beta, &ages).unwrap();
    let dev = endo
        .rates
        .iter()
        .zip(&gomp.rates)
        .map(|(a, b)| (a / b - 1.0).abs())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        inside && dev <= 1e-10,
        format!(
            "band ({lo:.7}, {hi:.7}) holds at every node and step: {inside}; \
             no-healthcare relative deviation from Gompertz={dev:.1e}; {secs:.2}s (includes two solves)"
        ),
    )
}

fn recursion(_: &mut Audit) -> Outcome {
    let t = Instant::now();
    let cfg = SimConfig::default();
    let base = us_baseline();
    let cases = [
        ("no-aging", base, Regime::NoAging),
        ("aging zeta=1", base.with_zeta(1.0).unwrap(), Regime::AgingNoHealthcare),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, params, regime) in cases {
        match horizon_check(1.0, 0.01, &params, &cfg, regime) {
            Ok(h) => {
                let good = h.base.z_score.abs() <= 3.0 && h.stable();
                ok &= good;
                parts.push(format!(
                    "{name}: z={:+.3} (2T z={:+.3}), shift/se={:.2}",
                    h.base.z_score,
                    h.doubled.z_score,
                    h.shift / h.combined_se
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        ok && secs < 120.0,
        format!("n={} dt={} T={}; {}; {secs:.1}s", cfg.n_paths, cfg.dt, cfg.horizon, parts.join("; ")),
    )
}

fn lifetimes(_: &mut Audit) -> Outcome {
    let t = Instant::now();
    let (m0, beta) = (1.34995e-4, 0.0724069);
    let path = gompertz_path(m0, beta, &age_grid(0.0, 150.0, 0.1).unwrap()).unwrap();
    let n = 100_000;
    let life = sample_lifetimes(&path, n, SimConfig::default().seed);
    let ks = life.ks_statistic(|a| (-(m0 / beta) * ((beta * a).exp() - 1.0)).exp());
    let threshold = 1.63 / (n as f64).sqrt();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        ks < threshold && life.censored == 0 && secs < 10.0,
        format!("KS={ks:.5} threshold={threshold:.5} censored={} {secs:.2}s", life.censored),
    )
}

fn round_trip(audit: &mut Audit) -> Outcome {
    let t = Instant::now();
    let p = us_baseline();
    let setup = FitSetup::default();
    let data = synthesize_cohort(&p, &setup).unwrap();
    let start = Some([0.23, 0.57, p.m0 * 1.08]);
    let mut fits = Vec::new();
    for (seed, restarts) in [(7, 2), (11, 4)] {
        let opt = OptimizerConfig {
            start,
            seed,
            restarts,
            ..OptimizerConfig::default()
        };
        match fit_healthcare(&data, p.beta, &p, &opt, &setup) {
            Ok(r) => fits.push(r),
            Err(e) => return Outcome::Fail(format!("fit failed: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let r = &fits[0];
    let agree = (fits[0].model_mse - fits[1].model_mse).abs();
    let ok = r.model_mse < 1e-12
        && (r.a - 0.19).abs() <= 0.02
        && (r.q - 0.61).abs() <= 0.02
        && (r.m0_1940 / p.m0 - 1.0).abs() <= 0.05
        && agree <= 1e-10
        && secs < 300.0;
    let detail = format!(
        "a={:.5} q={:.5} m0={:.5e} objective={:.1e}; second start pattern objective={:.1e}; {} evals; {secs:.1}s for two fits",
        r.a, r.q, r.m0_1940, r.model_mse, fits[1].model_mse, r.evaluations
    );
    for (i, f) in fits.into_iter().enumerate() {
        audit.results.push((format!("round trip #{}", i + 1), f));
    }
    verdict(ok, detail)
}

fn hmd_dir() -> PathBuf {
    std::env::var_os("EZCARE_HMD_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/hmd"))
}

/// `<dir>/<CODE>.cMx_1x1.txt` or `<dir>/<CODE>/cMx_1x1.txt`.
fn hmd_file(dir: &Path, code: &str) -> Option<PathBuf> {
    [dir.join(format!("{code}.cMx_1x1.txt")), dir.join(code).join("cMx_1x1.txt")]
        .into_iter()
        .find(|p| p.is_file())
}

fn cohort_data(audit: &mut Audit) -> Outcome {
    let dir = hmd_dir();
    let files: Vec<_> = REFERENCE_FITS.iter().map(|f| hmd_file(&dir, f.code)).collect();
    if files.iter().any(Option::is_none) {
        let missing: Vec<&str> = REFERENCE_FITS
            .iter()
            .zip(&files)
            .filter(|(_, f)| f.is_none())
            .map(|(r, _)| r.code)
            .collect();
        return Outcome::Skipped(format!(
            "cohort death-rate files for {} not found under {} (set EZCARE_HMD_DIR)",
            missing.join(", "),
            dir.display()
        ));
    }
    let base = us_baseline();
    let mut ok = true;
    let mut parts = Vec::new();
    for (reference, file) in REFERENCE_FITS.iter().zip(files.into_iter().flatten()) {
        let outcome = (|| -> ezcare::Result<String> {
            let text = read_text(&file)?;
            let source = file.display().to_string();
            let early = parse_hmd_cohort(&text, &source, 1900, Sex::Total)?;
            let late = parse_hmd_cohort(&text, &source, 1940, Sex::Total)?;
            let setup = FitSetup {
                gompertz_lo: reference.gompertz_window.0,
                gompertz_hi: reference.gompertz_window.1,
                ..FitSetup::default()
            };
            let (beta, _) = fit_gompertz(&early, setup.gompertz_lo, setup.gompertz_hi)?;
            let opt = OptimizerConfig {
                method: OptMethod::GridThenNelderMead,
                ..OptimizerConfig::default()
            };
            let r = fit_healthcare(&late, beta, &base, &opt, &setup)?;
            let reg = regression_baseline(&late, setup.fit_lo, setup.fit_hi)?;
            let ratio = r.model_mse / reference.model_mse;
            let good = (beta - reference.beta).abs() <= 1e-3 && (0.5..=2.0).contains(&ratio) && r.model_mse < reg;
            ok &= good;
            let line = format!(
                "{}: beta={beta:.5} (ref {:.5}) mse={:.3e} (x{ratio:.2} of ref) regression={reg:.3e} a={:.3} q={:.3}",
                reference.code, reference.beta, r.model_mse, r.a, r.q
            );
            audit.results.push((reference.code.to_string(), r));
            Ok(line)
        })();
        match outcome {
            Ok(line) => parts.push(line),
            Err(e) => {
                ok = false;
                parts.push(format!("{}: {e}", reference.code));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn feasibility(audit: &mut Audit) -> Outcome {
    let p: ModelParams = us_baseline();
    let us = p.max_growth_reduction();
    let mut ok = us < p.beta;
    let mut parts = vec![format!("US g(I(psi-1))={us:.7} < beta={:.7}", p.beta)];
    if audit.results.is_empty() {
        ok = false;
        parts.push("no calibrated results to audit".into());
    }
    for (name, r) in &audit.results {
        let good = r.feasible();
        ok &= good;
        parts.push(format!("{name}: {:.9e} < {:.9e} {}", r.max_growth_reduction, r.beta, good));
    }
    verdict(ok, parts.join("; "))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("constants", constants),
        ("closed-form sandwich and residual", sandwich),
        ("collocation envelope", envelope),
        ("mortality band", band),
        ("recursion verification", recursion),
        ("lifetime sampler", lifetimes),
        ("calibration round trip", round_trip),
        ("cohort-data reproduction", cohort_data),
        ("feasibility audit", feasibility),
    ];
    let mut audit = Audit::default();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut audit)))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {} {tag}: {name} [{secs:.1}s] {detail}", i + 1);
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: ok");
}
