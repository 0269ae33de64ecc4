//! Monte-Carlo wealth paths, lifetime sampling and a check of the recursive
//! utility equation against closed-form values.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::closed_form::{u_q, value_from_rate, QuadratureConfig};
use crate::error::{Error, Result};
use crate::mortality::{healthcare_at, MortalityPath};
use crate::ode::RateCurve;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            horizon: 30.0,
            dt: 0.01,
            seed: 7,
            antithetic: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon = {} must be positive",
                self.horizon
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidParameter("need at least two paths".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidParameter(
                "antithetic sampling needs an even number of paths".into(),
            ));
        }
        Ok(())
    }

    /// Number of steps and the step actually used.
    fn steps(&self) -> (usize, f64) {
        let n = (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.horizon / n as f64)
    }
}

/// Independent generator for one path (or antithetic pair).
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Draws the per-sample outcomes, pairing antithetic paths into one sample.
fn run_paths(
    cfg: &SimConfig,
    path: impl Fn(&mut dyn FnMut() -> f64) -> f64 + Sync,
) -> Vec<f64> {
    let samples = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i);
            if cfg.antithetic {
                let mut record = Vec::new();
                let plus = path(&mut || {
                    let z: f64 = rng.sample(StandardNormal);
                    record.push(z);
                    z
                });
                let mut it = record.into_iter();
                let minus = path(&mut || -it.next().expect("antithetic replay"));
                0.5 * (plus + minus)
            } else {
                path(&mut || rng.sample(StandardNormal))
            }
        })
        .collect()
}

/// Where the consumption and healthcare rates come from.
#[derive(Debug, Clone, Copy)]
pub enum PolicySource<'a> {
    Curve(&'a RateCurve),
    Constant {
        consumption: f64,
        portfolio: f64,
        healthcare: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthStats {
    /// Estimate of `E[X_T^(1-gamma)]`.
    pub mean_terminal_power: f64,
    pub std_error: f64,
    pub ruin_fraction: f64,
    pub samples: usize,
}

/// Simulates wealth under a proportional policy with exact log-Euler steps.
pub fn simulate_wealth(
    policy: PolicySource<'_>,
    params: &ModelParams,
    mortality: &MortalityPath,
    x0: f64,
    cfg: &SimConfig,
) -> Result<WealthStats> {
    cfg.validate()?;
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("initial wealth {x0} must be positive")));
    }
    let (n, dt) = cfg.steps();
    let (r, mu, sigma) = (params.market.r, params.market.mu, params.market.sigma);
    let age0 = mortality.ages[0];
    let mut drift = Vec::with_capacity(n);
    let mut vol = Vec::with_capacity(n);
    for k in 0..n {
        let (u, pi, h) = match policy {
            PolicySource::Curve(curve) => {
                let m = mortality.rate_at(age0 + k as f64 * dt)?;
                (curve.value_at(m)?, params.merton_fraction(), healthcare_at(m, curve, params)?.0)
            }
            PolicySource::Constant {
                consumption,
                portfolio,
                healthcare,
            } => (consumption, portfolio, healthcare),
        };
        drift.push((r + mu * pi - h - u - 0.5 * sigma * sigma * pi * pi) * dt);
        vol.push(sigma * pi * dt.sqrt());
    }
    let power = 1.0 - params.prefs.gamma();
    let floor = f64::MIN_POSITIVE.ln();
    let outcomes = run_paths(cfg, |normal| {
        let mut lx = x0.ln();
        let mut ruined = false;
        for k in 0..n {
            lx += drift[k] + vol[k] * normal();
            ruined |= lx < floor;
        }
        if ruined {
            f64::NAN
        } else {
            (power * lx).exp()
        }
    });
    let ruined = outcomes.iter().filter(|v| v.is_nan()).count();
    let kept: Vec<f64> = outcomes.into_iter().filter(|v| !v.is_nan()).collect();
    let (mean, se) = mean_and_se(&kept);
    Ok(WealthStats {
        mean_terminal_power: mean,
        std_error: se,
        ruin_fraction: ruined as f64 / (ruined + kept.len()) as f64,
        samples: ruined + kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lifetimes {
    /// Death ages of uncensored draws, in draw order.
    pub ages: Vec<f64>,
    /// Draws whose hazard budget exceeded the path's cumulative hazard.
    pub censored: usize,
}

impl Lifetimes {
    pub fn total(&self) -> usize {
        self.ages.len() + self.censored
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.total();
        let mut sorted = self.ages.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.get(n / 2).copied()
    }

    /// Kolmogorov-Smirnov distance between the empirical death-age
    /// distribution and `1 - survival(age)`; censored draws count as beyond
    /// the last age.
    pub fn ks_statistic(&self, survival: impl Fn(f64) -> f64) -> f64 {
        let n = self.total() as f64;
        let mut sorted = self.ages.clone();
        sorted.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, &a) in sorted.iter().enumerate() {
            let cdf = 1.0 - survival(a);
            d = d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs());
        }
        d
    }
}

/// Death ages from `Z ~ Exp(1)` crossing the piecewise-linear-rate
/// cumulative hazard of `mortality`.
pub fn sample_lifetimes(mortality: &MortalityPath, n: usize, seed: u64) -> Lifetimes {
    let hazard = mortality.cumulative_hazard();
    let total = *hazard.last().expect("nonempty path");
    let draws: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let u: f64 = rng.gen();
            let z = -(-u).ln_1p();
            if z >= total {
                return None;
            }
            let j = hazard.partition_point(|&h| h <= z).max(1) - 1;
            let (a0, a1) = (mortality.ages[j], mortality.ages[j + 1]);
            let (m0, m1) = (mortality.rates[j], mortality.rates[j + 1]);
            let need = z - hazard[j];
            // m0 s + (m1 - m0) s^2 / (2 w) = need, stable root.
            let w = a1 - a0;
            let c2 = 0.5 * (m1 - m0) / w;
            let s = 2.0 * need / (m0 + (m0 * m0 + 4.0 * c2 * need).sqrt());
            Some(a0 + s.min(w))
        })
        .collect();
    let censored = draws.iter().filter(|d| d.is_none()).count();
    Lifetimes {
        ages: draws.into_iter().flatten().collect(),
        censored,
    }
}

/// Epstein-Zin aggregator in its power form.
pub fn aggregator(c: f64, v: f64, params: &ModelParams) -> Result<f64> {
    let p = &params.prefs;
    let (gamma, psi, delta, theta) = (p.gamma(), p.psi(), p.delta(), p.theta());
    let base = (1.0 - gamma) * v;
    if !(base > 0.0) || !(c > 0.0) {
        return Err(Error::Domain(format!(
            "aggregator needs c > 0 and (1-gamma) v > 0, got c = {c}, v = {v}"
        )));
    }
    let rho = 1.0 - 1.0 / psi;
    Ok(delta * c.powf(rho) / rho * base.powf(1.0 - 1.0 / theta) - delta * theta * v)
}

/// The same aggregator written as
/// `delta (1-gamma) v / (1-1/psi) [(c ((1-gamma) v)^(-1/(1-gamma)))^(1-1/psi) - 1]`.
pub fn aggregator_ratio_form(c: f64, v: f64, params: &ModelParams) -> Result<f64> {
    let p = &params.prefs;
    let (gamma, psi, delta) = (p.gamma(), p.psi(), p.delta());
    let base = (1.0 - gamma) * v;
    if !(base > 0.0) || !(c > 0.0) {
        return Err(Error::Domain(format!(
            "aggregator needs c > 0 and (1-gamma) v > 0, got c = {c}, v = {v}"
        )));
    }
    let rho = 1.0 - 1.0 / psi;
    Ok(delta * base / rho * ((c * base.powf(-1.0 / (1.0 - gamma))).powf(rho) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Constant mortality, no healthcare.
    NoAging,
    /// Gompertz mortality, no healthcare.
    AgingNoHealthcare,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::NoAging => "no-aging",
            Regime::AgingNoHealthcare => "aging-no-healthcare",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-aging" => Ok(Regime::NoAging),
            "aging-no-healthcare" | "aging" => Ok(Regime::AgingNoHealthcare),
            other => Err(Error::InvalidParameter(format!(
                "unknown regime `{other}` (expected no-aging or aging-no-healthcare)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionReport {
    pub lhs: f64,
    pub rhs_estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
}

/// Deterministic per-step inputs of the recursion along the time grid.
struct Schedule {
    dt: f64,
    /// Log-wealth drift over each step.
    drift: Vec<f64>,
    vol: f64,
    /// `exp(-∫ M)` at each node.
    discount: Vec<f64>,
    /// `f(u, w) + zeta^(1-gamma) M w` at each node, per unit `X^(1-gamma)`.
    flow: Vec<f64>,
    /// `w = v(1, M)` at each node.
    unit_value: Vec<f64>,
}

fn schedule(
    x: f64,
    m: f64,
    params: &ModelParams,
    cfg: &SimConfig,
    regime: Regime,
) -> Result<(f64, Schedule)> {
    let quad = QuadratureConfig::default();
    let (n, dt) = cfg.steps();
    let p = &params.prefs;
    if !(p.delta() > 0.0) {
        return Err(Error::IllPosed("the recursion check needs delta > 0".into()));
    }
    if regime == Regime::AgingNoHealthcare && !(params.beta > 0.0) {
        return Err(Error::IllPosed("aging regime needs beta > 0".into()));
    }
    let rate_at = |mt: f64| -> Result<f64> {
        match regime {
            Regime::NoAging => Ok(params.tilde_c0(mt)),
            Regime::AgingNoHealthcare => u_q(mt, params.beta, params, &quad),
        }
    };
    let lhs = value_from_rate(x, m, rate_at(m)?, params)?.value;
    let mort: Vec<f64> = (0..=n)
        .map(|k| match regime {
            Regime::NoAging => m,
            Regime::AgingNoHealthcare => m * (params.beta * k as f64 * dt).exp(),
        })
        .collect();
    let rates: Vec<f64> = match regime {
        Regime::NoAging => vec![rate_at(m)?; n + 1],
        Regime::AgingNoHealthcare => mort.iter().map(|&mt| rate_at(mt)).collect::<Result<_>>()?,
    };
    let zeta_pow = p.zeta_pow();
    let mut discount = Vec::with_capacity(n + 1);
    let mut flow = Vec::with_capacity(n + 1);
    let mut unit_value = Vec::with_capacity(n + 1);
    let mut hazard = 0.0;
    for k in 0..=n {
        if k > 0 {
            hazard += 0.5 * (mort[k] + mort[k - 1]) * dt;
        }
        let w = value_from_rate(1.0, mort[k], rates[k], params)?.value;
        // f(u X, X^(1-gamma) w) = X^(1-gamma) f(u, w).
        let f = aggregator(rates[k], w, params)?;
        discount.push((-hazard).exp());
        flow.push(f + zeta_pow * mort[k] * w);
        unit_value.push(w);
    }
    let (r, mu, sigma) = (params.market.r, params.market.mu, params.market.sigma);
    let pi = params.merton_fraction();
    let growth = r + mu * pi - 0.5 * sigma * sigma * pi * pi;
    let drift = (0..n)
        .map(|k| (growth - 0.5 * (rates[k] + rates[k + 1])) * dt)
        .collect();
    Ok((
        lhs,
        Schedule {
            dt,
            drift,
            vol: sigma * pi * dt.sqrt(),
            discount,
            flow,
            unit_value,
        },
    ))
}

/// Right side of the recursion for one path of standard normal increments,
/// per the trapezoid rule in time.
fn recursion_path(s: &Schedule, x: f64, power: f64, normal: &mut dyn FnMut() -> f64) -> f64 {
    let n = s.drift.len();
    let mut lx = x.ln();
    let mut xp = (power * lx).exp();
    let mut integral = 0.5 * s.discount[0] * s.flow[0] * xp;
    for k in 0..n {
        lx += s.drift[k] + s.vol * normal();
        xp = (power * lx).exp();
        let term = s.discount[k + 1] * s.flow[k + 1] * xp;
        integral += if k + 1 == n { 0.5 * term } else { term };
    }
    integral * s.dt + s.discount[n] * s.unit_value[n] * xp
}

/// Monte-Carlo check of
/// `V_0 = E[∫_0^T e^{-∫M} (f(c, V) + zeta^(1-gamma) M V) ds + e^{-∫_0^T M} V_T]`
/// with `V` the regime's closed-form value along each path.
pub fn verify_recursion(
    x: f64,
    m: f64,
    params: &ModelParams,
    cfg: &SimConfig,
    regime: Regime,
) -> Result<RecursionReport> {
    cfg.validate()?;
    if !(x > 0.0 && m >= 0.0) {
        return Err(Error::Domain(format!("need x > 0 and m >= 0, got x = {x}, m = {m}")));
    }
    let (lhs, sched) = schedule(x, m, params, cfg, regime)?;
    let power = 1.0 - params.prefs.gamma();
    let samples = run_paths(cfg, |normal| recursion_path(&sched, x, power, normal));
    let (rhs, se) = mean_and_se(&samples);
    if !(se > 0.0) {
        return Err(Error::Degenerate("recursion estimate has zero variance".into()));
    }
    Ok(RecursionReport {
        lhs,
        rhs_estimate: rhs,
        std_error: se,
        z_score: (rhs - lhs) / se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonCheck {
    pub base: RecursionReport,
    pub doubled: RecursionReport,
    /// `|rhs(2T) - rhs(T)|`.
    pub shift: f64,
    /// `sqrt(se(T)^2 + se(2T)^2)`.
    pub combined_se: f64,
}

impl HorizonCheck {
    pub fn stable(&self) -> bool {
        self.shift < 2.0 * self.combined_se
    }
}

/// Runs [`verify_recursion`] at `T` and `2T` with the same seed.
pub fn horizon_check(
    x: f64,
    m: f64,
    params: &ModelParams,
    cfg: &SimConfig,
    regime: Regime,
) -> Result<HorizonCheck> {
    let base = verify_recursion(x, m, params, cfg, regime)?;
    let long = SimConfig {
        horizon: 2.0 * cfg.horizon,
        ..*cfg
    };
    let doubled = verify_recursion(x, m, params, &long, regime)?;
    Ok(HorizonCheck {
        base,
        doubled,
        shift: (doubled.rhs_estimate - base.rhs_estimate).abs(),
        combined_se: base.std_error.hypot(doubled.std_error),
    })
}

/// Deterministic telescoping check: with `f = 0`, `zeta = 1` and constant
/// `V = v0`, the discounted right side over `[0, T]` equals `v0`.
pub fn telescoping_rhs(mortality: &MortalityPath, v0: f64) -> f64 {
    let hazard = mortality.cumulative_hazard();
    let n = mortality.ages.len();
    let mut integral = 0.0;
    for k in 1..n {
        let dt = mortality.ages[k] - mortality.ages[k - 1];
        let a = mortality.rates[k - 1] * (-hazard[k - 1]).exp() * v0;
        let b = mortality.rates[k] * (-hazard[k]).exp() * v0;
        integral += 0.5 * (a + b) * dt;
    }
    integral + (-hazard[n - 1]).exp() * v0
}
