//! Command-line front end: one subcommand per pipeline stage, flat key-value
//! reports and a manifest beside every output file.

use std::ffi::OsString;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::calibrate::{calibrate_cohorts, forward_model, FitSetup, OptimizerConfig};
use crate::closed_form::{closed_form_table, QuadratureConfig};
use crate::data_io::{
    fmt_num, key_values, load_series, parse_curve_csv, read_text, table_to_csv, write_text, Sex,
};
use crate::error::{Error, Result};
use crate::mortality::{age_grid, gompertz_path, healthcare_at, integrate_endogenous, MortalityPath, DEFAULT_STEP};
use crate::ode::{log_grid, node_residuals, solve_u_star, RateCurve, SolverConfig, SolverMode};
use crate::params::{us_baseline, validate, EfficacyPower, ModelParams};
use crate::plot::{self, emit_figure, FigureKind};
use crate::simulate::{horizon_check, sample_lifetimes, simulate_wealth, verify_recursion, PolicySource, Regime, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "ezcare", version, about = "Consumption, investment and healthcare under Epstein-Zin preferences")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress the report on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the consumption-rate curve u*(m).
    Solve(SolveArgs),
    /// Integrate endogenous mortality along a solved curve.
    Mortality(MortalityArgs),
    /// Fit beta on one cohort, then (a, q, m0) on a later one.
    Calibrate(CalibrateArgs),
    /// Simulate optimal wealth and sample lifetimes.
    Simulate(SimulateArgs),
    /// Monte-Carlo check of the utility recursion against closed forms.
    Verify(VerifyArgs),
    /// Emit an SVG figure with its data CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ParamsArg {
    /// Parameter file (`key = value`); the US baseline when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub params: ParamsArg,
    #[arg(long, default_value = "collocation")]
    pub mode: SolverMode,
    #[arg(long, default_value_t = 2000)]
    pub nodes: usize,
    #[arg(long)]
    pub m_max: Option<f64>,
    #[arg(long, default_value_t = 1e-7)]
    pub m_min: f64,
    /// Tabulate the no-healthcare closed forms instead.
    #[arg(long)]
    pub closed_form: bool,
    #[arg(long, default_value = "u_star.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MortalityArgs {
    #[command(flatten)]
    pub params: ParamsArg,
    /// Curve CSV from `solve`; solved on the fly when omitted.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 40.0)]
    pub start_age: f64,
    #[arg(long, default_value_t = 80.0)]
    pub end_age: f64,
    /// Output age spacing.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value = "mortality.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub cohort1900: PathBuf,
    #[arg(long)]
    pub cohort1940: PathBuf,
    #[command(flatten)]
    pub params: ParamsArg,
    #[arg(long)]
    pub opt_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1900)]
    pub year_early: i32,
    #[arg(long, default_value_t = 1940)]
    pub year_late: i32,
    #[arg(long, default_value = "total")]
    pub sex: Sex,
    #[arg(long, default_value_t = 40.0)]
    pub gompertz_lo: f64,
    #[arg(long, default_value_t = 95.0)]
    pub gompertz_hi: f64,
    #[arg(long, default_value_t = 40.0)]
    pub fit_lo: f64,
    #[arg(long, default_value_t = 80.0)]
    pub fit_hi: f64,
    /// Age at which the endogenous path starts from m0.
    #[arg(long, default_value_t = 0.0)]
    pub anchor_age: f64,
    #[arg(long, default_value = "calibration.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 30.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub antithetic: bool,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.paths,
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
            antithetic: self.antithetic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamsArg,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 40.0)]
    pub start_age: f64,
    /// Last age of the mortality path; later deaths are censored.
    #[arg(long, default_value_t = 160.0)]
    pub end_age: f64,
    /// Lifetimes to sample (0 skips).
    #[arg(long, default_value_t = 100_000)]
    pub lifetimes: usize,
    #[arg(long, default_value = "simulate.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub params: ParamsArg,
    #[arg(long, default_value = "no-aging")]
    pub regime: Regime,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 1.0)]
    pub x: f64,
    #[arg(long, default_value_t = 0.01)]
    pub m: f64,
    /// Skip the rerun at twice the horizon.
    #[arg(long)]
    pub no_horizon_check: bool,
    #[arg(long, default_value = "verify.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub kind: FigureKind,
    #[command(flatten)]
    pub params: ParamsArg,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Efficacy pairs `a:q,a:q,...` for the efficacy figure.
    #[arg(long, default_value = "0.19:0.61,0.19:0.60,0.16:0.53,0.14:0.56")]
    pub efficacies: String,
    #[arg(long, default_value_t = 0.3)]
    pub h_max: f64,
    #[arg(long, default_value_t = 40.0)]
    pub start_age: f64,
    #[arg(long, default_value_t = 80.0)]
    pub end_age: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance written beside each output as `<output>.manifest`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    /// `(path, sha256)` of every input file.
    pub inputs: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub version: String,
    /// Effective settings, for reruns.
    pub settings: Vec<(String, String)>,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            inputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
            settings: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path, text: &str) {
        self.inputs.push((path.display().to_string(), sha256_hex(text.as_bytes())));
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut e = vec![
            ("subcommand".to_string(), self.subcommand.clone()),
            ("version".to_string(), self.version.clone()),
            (
                "seed".to_string(),
                self.seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
            ),
        ];
        for (p, d) in &self.inputs {
            e.push((format!("input.{p}"), format!("sha256:{d}")));
        }
        for (k, v) in &self.settings {
            e.push((format!("setting.{k}"), v.clone()));
        }
        key_values(&e)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Joins `rel` under `out_dir`, refusing paths that would escape it.
pub fn resolve_output(out_dir: &Path, rel: &Path) -> Result<PathBuf> {
    let escapes = rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, Component::ParentDir | Component::Prefix(_) | Component::RootDir));
    if escapes {
        return Err(Error::InvalidParameter(format!(
            "output path {} must be relative to --out-dir without `..`",
            rel.display()
        )));
    }
    Ok(out_dir.join(rel))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest");
    PathBuf::from(s)
}

struct Session {
    out_dir: PathBuf,
    quiet: bool,
}

impl Session {
    fn write(&self, rel: &Path, text: &str) -> Result<PathBuf> {
        let path = resolve_output(&self.out_dir, rel)?;
        write_text(&path, text)?;
        Ok(path)
    }

    fn finish(&self, primary: &Path, manifest: &RunManifest, report: &[(String, String)]) -> Result<()> {
        write_text(&manifest_path(primary), &manifest.render())?;
        if !self.quiet {
            print!("{}", key_values(report));
        }
        Ok(())
    }
}

fn load_params(arg: &ParamsArg, manifest: &mut RunManifest) -> Result<ModelParams> {
    let params = match &arg.params {
        Some(path) => {
            let text = read_text(path)?;
            manifest.input(path, &text);
            ModelParams::from_config_str(&text, &path.display().to_string())?
        }
        None => {
            manifest.set("params", "us-baseline");
            us_baseline()
        }
    };
    let diag = validate(&params);
    if !diag.well_posed {
        return Err(Error::IllPosed(diag.messages[0].clone()));
    }
    if !diag.gompertz_dominant {
        return Err(Error::NonDominantEfficacy(diag.messages.last().cloned().unwrap_or_default()));
    }
    Ok(params)
}

fn load_or_solve_curve(curve: &Option<PathBuf>, params: &ModelParams, manifest: &mut RunManifest) -> Result<RateCurve> {
    match curve {
        Some(path) => {
            let text = read_text(path)?;
            manifest.input(path, &text);
            parse_curve_csv(&text, &path.display().to_string())
        }
        None => solve_u_star(params, &SolverConfig::default()),
    }
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn num(key: &str, value: f64) -> (String, String) {
    (key.to_string(), fmt_num(value))
}

/// Parses and runs; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("ERROR {code}: {e}");
            code
        }
    }
}

/// Runs a parsed command. `Ok` carries the exit code (nonzero when a check fails).
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let session = Session {
        out_dir: cli.out_dir,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Solve(a) => solve_cmd(&session, a),
        Command::Mortality(a) => mortality_cmd(&session, a),
        Command::Calibrate(a) => calibrate_cmd(&session, a),
        Command::Simulate(a) => simulate_cmd(&session, a),
        Command::Verify(a) => verify_cmd(&session, a),
        Command::Plot(a) => plot_cmd(&session, a),
    }
}

fn solve_cmd(s: &Session, a: SolveArgs) -> Result<i32> {
    let mut man = RunManifest::new("solve");
    let params = load_params(&a.params, &mut man)?;
    man.set("nodes", a.nodes);
    if a.closed_form {
        man.set("closed_form", true);
        let m_max = a.m_max.unwrap_or(1.0);
        let grid = log_grid(a.m_min, m_max, a.nodes);
        let rows = closed_form_table(&grid, &params, &QuadratureConfig::default())?;
        let mut csv = String::from("m,tilde_c0,u_beta,u_beta_lower,bounds_ok\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_num(r.m),
                fmt_num(r.tilde_c0),
                fmt_num(r.u_beta),
                fmt_num(r.u_beta_lower),
                r.bounds_ok
            ));
        }
        let out = s.write(&a.out, &csv)?;
        let report = vec![
            num("k_star", params.k_star()),
            kv("rows", rows.len()),
            kv("bounds_ok", rows.iter().all(|r| r.bounds_ok)),
            kv("out", out.display()),
        ];
        s.finish(&out, &man, &report)?;
        return Ok(0);
    }
    let cfg = SolverConfig {
        mode: a.mode,
        n_nodes: a.nodes,
        m_min: a.m_min,
        m_max: a.m_max,
        ..SolverConfig::default()
    };
    man.set("mode", cfg.mode);
    let curve = solve_u_star(&params, &cfg)?;
    let residuals = node_residuals(&curve, &params);
    let h: Vec<f64> = curve
        .grid
        .iter()
        .map(|&m| healthcare_at(m, &curve, &params).map(|(h, _)| h))
        .collect::<Result<_>>()?;
    let csv = table_to_csv(
        &["m", "u_star", "u_prime", "h_star", "lower_env", "upper_env", "residual"],
        &[
            &curve.grid,
            &curve.values,
            &curve.derivs,
            &h,
            &curve.lower_env,
            &curve.upper_env,
            &residuals,
        ],
    )?;
    let out = s.write(&a.out, &csv)?;
    let report = vec![
        kv("mode", curve.meta.mode),
        kv("nodes", curve.grid.len()),
        num("m_min", curve.range().0),
        num("m_max", curve.range().1),
        num("k_star", params.k_star()),
        num("max_residual", curve.meta.residual),
        num("envelope_slack", curve.envelope_slack()),
        num("concavity_defect", curve.concavity_defect()),
        kv("strictly_increasing", curve.is_strictly_increasing()),
        kv("out", out.display()),
    ];
    s.finish(&out, &man, &report)?;
    Ok(0)
}

fn endogenous_or_gompertz(params: &ModelParams, curve: Option<&RateCurve>, ages: &[f64]) -> Result<MortalityPath> {
    match (params.efficacy, curve) {
        (Some(_), Some(c)) => integrate_endogenous(params, c, ages, DEFAULT_STEP),
        _ => gompertz_path(params.m0, params.beta, ages),
    }
}

fn mortality_cmd(s: &Session, a: MortalityArgs) -> Result<i32> {
    let mut man = RunManifest::new("mortality");
    let params = load_params(&a.params, &mut man)?;
    man.set("start_age", a.start_age);
    man.set("end_age", a.end_age);
    let ages = age_grid(a.start_age, a.end_age, a.step)?;
    let curve = match params.efficacy {
        Some(_) => Some(load_or_solve_curve(&a.curve, &params, &mut man)?),
        None => None,
    };
    let path = endogenous_or_gompertz(&params, curve.as_ref(), &ages)?;
    let log10: Vec<f64> = path.rates.iter().map(|m| m.log10()).collect();
    let csv = table_to_csv(
        &["age", "M", "log10_M", "h_star", "growth_rate"],
        &[&path.ages, &path.rates, &log10, &path.healthcare, &path.growth],
    )?;
    let out = s.write(&a.out, &csv)?;
    let last = path.rates.len() - 1;
    let report = vec![
        kv("kind", path.kind),
        kv("points", path.ages.len()),
        num("M_start", path.rates[0]),
        num("M_end", path.rates[last]),
        num("h_star_end", path.healthcare[last]),
        kv("out", out.display()),
    ];
    s.finish(&out, &man, &report)?;
    Ok(0)
}

fn calibrate_cmd(s: &Session, a: CalibrateArgs) -> Result<i32> {
    let mut man = RunManifest::new("calibrate");
    let params = load_params(&a.params, &mut man)?;
    let opt = match &a.opt_config {
        Some(path) => {
            let text = read_text(path)?;
            man.input(path, &text);
            OptimizerConfig::from_config_str(&text, &path.display().to_string())?
        }
        None => OptimizerConfig::default(),
    };
    man.seed = Some(opt.seed);
    let early = load_series(&a.cohort1900, a.year_early, a.sex)?;
    let late = load_series(&a.cohort1940, a.year_late, a.sex)?;
    for p in [&a.cohort1900, &a.cohort1940] {
        man.input(p, &read_text(p)?);
    }
    let setup = FitSetup {
        anchor_age: a.anchor_age,
        fit_lo: a.fit_lo,
        fit_hi: a.fit_hi,
        gompertz_lo: a.gompertz_lo,
        gompertz_hi: a.gompertz_hi,
        ..FitSetup::default()
    };
    for (k, v) in [
        ("anchor_age", a.anchor_age),
        ("fit_lo", a.fit_lo),
        ("fit_hi", a.fit_hi),
        ("gompertz_lo", a.gompertz_lo),
        ("gompertz_hi", a.gompertz_hi),
    ] {
        man.set(k, v);
    }
    man.set("method", opt.method);
    let r = calibrate_cohorts(&early, &late, &params, &opt, &setup)?;
    let fitted = params
        .with_beta(r.beta)?
        .with_efficacy(Some(EfficacyPower::new(r.a, r.q)?))?
        .with_m0(r.m0_1940)?;
    let (ages, data) = late.window(a.fit_lo, a.fit_hi);
    let path = forward_model(&fitted, &setup, &ages)?;
    let model = &path.rates[path.rates.len() - ages.len()..];
    let resid: Vec<f64> = model.iter().zip(&data).map(|(m, d)| m - d).collect();
    let residual_csv = table_to_csv(&["age", "data", "model", "residual"], &[&ages, &data, model, &resid])?;
    let report = vec![
        num("beta", r.beta),
        num("beta_percent", 100.0 * r.beta),
        num("m0_1900", r.m0_1900),
        num("a", r.a),
        num("q", r.q),
        num("m0_1940", r.m0_1940),
        num("m0_1940_e4", 1e4 * r.m0_1940),
        num("model_mse", r.model_mse),
        num("model_mse_e6", 1e6 * r.model_mse),
        num("regression_mse", r.regression_mse),
        num("regression_mse_e6", 1e6 * r.regression_mse),
        num("max_growth_reduction", r.max_growth_reduction),
        kv("feasible", r.feasible()),
        kv("evaluations", r.evaluations),
        kv("converged", r.converged),
        num("anchor_age", r.anchor_age),
    ];
    let out = s.write(&a.out, &key_values(&report))?;
    let resid_path = s.write(&a.out.with_extension("residuals.csv"), &residual_csv)?;
    write_text(&manifest_path(&resid_path), &man.render())?;
    s.finish(&out, &man, &report)?;
    Ok(0)
}

fn simulate_cmd(s: &Session, a: SimulateArgs) -> Result<i32> {
    let mut man = RunManifest::new("simulate");
    let params = load_params(&a.params, &mut man)?;
    let cfg = a.sim.config();
    man.seed = Some(cfg.seed);
    man.set("paths", cfg.n_paths);
    man.set("horizon", cfg.horizon);
    man.set("dt", cfg.dt);
    man.set("antithetic", cfg.antithetic);
    man.set("start_age", a.start_age);
    if a.start_age + cfg.horizon > a.end_age {
        return Err(Error::InvalidParameter(format!(
            "horizon {} runs past --end-age {}",
            cfg.horizon, a.end_age
        )));
    }
    let curve = load_or_solve_curve(&a.curve, &params, &mut man)?;
    let ages = age_grid(a.start_age, a.end_age, 0.25)?;
    let path = endogenous_or_gompertz(&params, Some(&curve), &ages)?;
    let stats = simulate_wealth(PolicySource::Curve(&curve), &params, &path, a.x0, &cfg)?;
    let mut report = vec![
        num("x0", a.x0),
        num("mean_terminal_power", stats.mean_terminal_power),
        num("std_error", stats.std_error),
        num("ruin_fraction", stats.ruin_fraction),
        kv("samples", stats.samples),
    ];
    if a.lifetimes > 0 {
        let life = sample_lifetimes(&path, a.lifetimes, cfg.seed);
        report.push(kv("lifetimes", life.total()));
        report.push(kv("censored", life.censored));
        report.push(num("median_death_age", life.median().unwrap_or(f64::NAN)));
    }
    let out = s.write(&a.out, &key_values(&report))?;
    s.finish(&out, &man, &report)?;
    Ok(0)
}

fn verify_cmd(s: &Session, a: VerifyArgs) -> Result<i32> {
    let mut man = RunManifest::new("verify");
    let params = load_params(&a.params, &mut man)?;
    let cfg = a.sim.config();
    man.seed = Some(cfg.seed);
    man.set("regime", a.regime);
    man.set("paths", cfg.n_paths);
    man.set("horizon", cfg.horizon);
    man.set("dt", cfg.dt);
    man.set("antithetic", cfg.antithetic);
    let (base, stable) = if a.no_horizon_check {
        (verify_recursion(a.x, a.m, &params, &cfg, a.regime)?, None)
    } else {
        let h = horizon_check(a.x, a.m, &params, &cfg, a.regime)?;
        (h.base, Some(h))
    };
    let z_ok = base.z_score.abs() <= 3.0;
    let mut report = vec![
        kv("regime", a.regime),
        num("lhs", base.lhs),
        num("rhs_estimate", base.rhs_estimate),
        num("std_error", base.std_error),
        num("z_score", base.z_score),
        kv("z_ok", z_ok),
    ];
    let mut pass = z_ok;
    if let Some(h) = stable {
        report.push(num("rhs_doubled_horizon", h.doubled.rhs_estimate));
        report.push(num("z_score_doubled_horizon", h.doubled.z_score));
        report.push(num("horizon_shift", h.shift));
        report.push(num("horizon_combined_se", h.combined_se));
        report.push(kv("horizon_stable", h.stable()));
        pass &= h.stable() && h.doubled.z_score.abs() <= 3.0;
    }
    report.push(kv("pass", pass));
    let out = s.write(&a.out, &key_values(&report))?;
    s.finish(&out, &man, &report)?;
    if pass {
        Ok(0)
    } else {
        eprintln!("ERROR 1: recursion check failed (z = {:.3})", base.z_score);
        Ok(1)
    }
}

fn parse_efficacies(text: &str) -> Result<Vec<EfficacyPower>> {
    text.split(',')
        .map(|pair| {
            let (a, q) = pair.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("efficacy `{pair}` must look like a:q"))
            })?;
            let p = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad number `{v}` in efficacy list")))
            };
            EfficacyPower::new(p(a)?, p(q)?)
        })
        .collect()
}

fn plot_cmd(s: &Session, a: PlotArgs) -> Result<i32> {
    let mut man = RunManifest::new("plot");
    let params = load_params(&a.params, &mut man)?;
    man.set("kind", a.kind);
    let need_curve = matches!(
        a.kind,
        FigureKind::MortalityCompare | FigureKind::HealthcareShare | FigureKind::UCurve
    ) && params.efficacy.is_some();
    let curve = if need_curve {
        Some(load_or_solve_curve(&a.curve, &params, &mut man)?)
    } else {
        None
    };
    let ages = || age_grid(a.start_age, a.end_age, 1.0);
    let fig = match a.kind {
        FigureKind::MortalityCompare => {
            let ages = ages()?;
            let gomp = gompertz_path(params.m0, params.beta, &ages)?;
            let mut curves = vec![("gompertz".to_string(), gomp.rates)];
            if let Some(c) = &curve {
                curves.push(("endogenous".to_string(), integrate_endogenous(&params, c, &ages, DEFAULT_STEP)?.rates));
            }
            plot::mortality_compare(&ages, &curves)
        }
        FigureKind::Efficacy => plot::efficacy(&parse_efficacies(&a.efficacies)?, a.h_max, 121),
        FigureKind::HealthcareShare => {
            let c = curve.as_ref().ok_or_else(|| {
                Error::InvalidParameter("healthcare-share needs efficacy parameters a and q".into())
            })?;
            let ages = ages()?;
            let path = integrate_endogenous(&params, c, &ages, DEFAULT_STEP)?;
            let u: Vec<f64> = path.rates.iter().map(|&m| c.value_at(m)).collect::<Result<_>>()?;
            plot::healthcare_share(&ages, &u, &path.healthcare)
        }
        FigureKind::UCurve => {
            let c = match curve {
                Some(c) => c,
                None => solve_u_star(&params, &SolverConfig::default())?,
            };
            plot::u_curve(&c.grid, &c.values, &c.lower_env, &c.upper_env)
        }
    };
    let rel = a.out.unwrap_or_else(|| PathBuf::from(format!("{}.svg", a.kind)));
    let target = resolve_output(&s.out_dir, &rel)?;
    let (svg, csv) = emit_figure(&fig, &target)?;
    write_text(&manifest_path(&csv), &man.render())?;
    let report = vec![
        kv("kind", a.kind),
        kv("series", fig.series.len()),
        kv("points", fig.xs.len()),
        kv("svg", svg.display()),
        kv("csv", csv.display()),
    ];
    s.finish(&svg, &man, &report)?;
    Ok(0)
}
