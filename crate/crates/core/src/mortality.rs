//! Deterministic mortality paths: Gompertz and the endogenous path under
//! optimal healthcare.

use std::fmt;

use crate::error::{Error, Result};
use crate::ode::RateCurve;
use crate::params::{validate, ModelParams};

/// Default RK4 step in years.
pub const DEFAULT_STEP: f64 = 0.05;

/// Elasticities below this are treated as a flat rate curve (no healthcare).
pub const ELASTICITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Gompertz,
    Endogenous,
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathKind::Gompertz => "gompertz",
            PathKind::Endogenous => "endogenous",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPath {
    pub ages: Vec<f64>,
    pub rates: Vec<f64>,
    /// Healthcare fraction `h*` at each age (zero for Gompertz).
    pub healthcare: Vec<f64>,
    /// `d log M / dt` at each age.
    pub growth: Vec<f64>,
    pub kind: PathKind,
    /// Short provenance string, e.g. the parameter digest.
    pub label: String,
}

impl MortalityPath {
    /// Log-linear interpolation of `M` at `age`.
    pub fn rate_at(&self, age: f64) -> Result<f64> {
        let n = self.ages.len();
        let i = crate::interp::locate(&self.ages, age).ok_or(Error::Extrapolation {
            value: age,
            lo: self.ages[0],
            hi: self.ages[n - 1],
        })?;
        let (a0, a1) = (self.ages[i], self.ages[i + 1]);
        let t = (age - a0) / (a1 - a0);
        Ok((self.rates[i].ln() * (1.0 - t) + self.rates[i + 1].ln() * t).exp())
    }

    /// `∫ M ds` from the first age to each age by the trapezoid rule.
    pub fn cumulative_hazard(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ages.len());
        let mut acc = 0.0;
        out.push(0.0);
        for i in 1..self.ages.len() {
            acc += 0.5 * (self.rates[i] + self.rates[i - 1]) * (self.ages[i] - self.ages[i - 1]);
            out.push(acc);
        }
        out
    }
}

fn check_ages(ages: &[f64]) -> Result<()> {
    if ages.len() < 2 {
        return Err(Error::InvalidParameter("age grid needs at least two ages".into()));
    }
    if ages.iter().any(|a| !a.is_finite()) || ages.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("ages must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Evenly spaced ages from `start` to `end` inclusive.
pub fn age_grid(start: f64, end: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(end > start && spacing > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "age grid needs end > start and spacing > 0, got [{start}, {end}] by {spacing}"
        )));
    }
    let n = ((end - start) / spacing).round() as usize;
    Ok((0..=n)
        .map(|i| if i == n { end } else { start + spacing * i as f64 })
        .collect())
}

/// `M(age) = m0 exp(beta (age - age_0))`.
pub fn gompertz_path(m0: f64, beta: f64, ages: &[f64]) -> Result<MortalityPath> {
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::InvalidParameter(format!("m0 = {m0} must be positive")));
    }
    if !beta.is_finite() {
        return Err(Error::InvalidParameter("beta must be finite".into()));
    }
    check_ages(ages)?;
    let a0 = ages[0];
    Ok(MortalityPath {
        ages: ages.to_vec(),
        rates: ages.iter().map(|a| m0 * (beta * (a - a0)).exp()).collect(),
        healthcare: vec![0.0; ages.len()],
        growth: vec![beta; ages.len()],
        kind: PathKind::Gompertz,
        label: format!("gompertz m0={m0:e} beta={beta:e}"),
    })
}

/// Integrates `d y / dt = f(y)` with classical RK4, reporting `y` at each
/// age. Steps between ages are the smallest equal split not exceeding
/// `step`.
pub fn rk4_log(
    mut f: impl FnMut(f64) -> Result<f64>,
    y0: f64,
    ages: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step = {step} must be positive")));
    }
    check_ages(ages)?;
    let mut ys = Vec::with_capacity(ages.len());
    let mut y = y0;
    ys.push(y);
    for w in ages.windows(2) {
        let span = w[1] - w[0];
        let n = (span / step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            let k1 = f(y)?;
            let k2 = f(y + 0.5 * h * k1)?;
            let k3 = f(y + 0.5 * h * k2)?;
            let k4 = f(y + h * k3)?;
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        ys.push(y);
    }
    Ok(ys)
}

/// Healthcare fraction and growth reduction `g(h*)` at mortality `m`.
pub fn healthcare_at(m: f64, curve: &RateCurve, params: &ModelParams) -> Result<(f64, f64)> {
    let Some(eff) = params.efficacy else {
        return Ok((0.0, 0.0));
    };
    let eps = curve.elasticity_at(m)?;
    if eps <= ELASTICITY_FLOOR {
        return Ok((0.0, 0.0));
    }
    let h = eff.marginal_inverse((params.prefs.psi() - 1.0) / eps)?;
    Ok((h, eff.g(h)))
}

/// Endogenous mortality `d log M = (beta - g(h*(M))) dt` from `params.m0` at
/// `ages[0]`.
pub fn integrate_endogenous(
    params: &ModelParams,
    curve: &RateCurve,
    ages: &[f64],
    step: f64,
) -> Result<MortalityPath> {
    let diag = validate(params);
    if !diag.ok() {
        return Err(Error::IllPosed(diag.messages.join("; ")));
    }
    let beta = params.beta;
    let floor = beta - params.max_growth_reduction();
    let slack = 1e-12 * beta.max(1.0);
    let growth = |y: f64| -> Result<f64> {
        let m = y.exp();
        let (_, g) = healthcare_at(m, curve, params)?;
        let rate = beta - g;
        if !(rate >= floor - slack && rate <= beta + slack) {
            return Err(Error::Instability(format!(
                "log-growth {rate:.6e} at M = {m:.6e} outside [{floor:.6e}, {beta:.6e}]"
            )));
        }
        Ok(rate)
    };
    let logs = rk4_log(growth, params.m0.ln(), ages, step)?;
    let rates: Vec<f64> = logs.iter().map(|y| y.exp()).collect();
    let mut healthcare = Vec::with_capacity(rates.len());
    let mut growth_out = Vec::with_capacity(rates.len());
    for &m in &rates {
        let (h, g) = healthcare_at(m, curve, params)?;
        healthcare.push(h);
        growth_out.push(beta - g);
    }
    Ok(MortalityPath {
        ages: ages.to_vec(),
        rates,
        healthcare,
        growth: growth_out,
        kind: PathKind::Endogenous,
        label: format!(
            "endogenous m0={:e} beta={:e} a={:e} q={:e}",
            params.m0,
            beta,
            params.efficacy.map_or(0.0, |e| e.a()),
            params.efficacy.map_or(0.0, |e| e.q())
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{solve_u_star, SolverConfig};
    use crate::params::us_baseline;

    #[test]
    fn gompertz_examples() {
        let ages = age_grid(40.0, 80.0, 1.0).unwrap();
        let p = gompertz_path(1.34995e-4, 0.0724069, &ages).unwrap();
        assert_eq!(p.ages.len(), 41);
        assert!((p.rates[40] - 0.002_444_299_213_830_87).abs() < 1e-17);
        let flat = gompertz_path(0.01, 0.0, &ages).unwrap();
        assert!(flat.rates.iter().all(|&m| m == 0.01));
        // Slope of log M against age.
        let n = ages.len() as f64;
        let (sx, sy) = (ages.iter().sum::<f64>() / n, p.rates.iter().map(|m| m.ln()).sum::<f64>() / n);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (a, m) in ages.iter().zip(&p.rates) {
            sxy += (a - sx) * (m.ln() - sy);
            sxx += (a - sx) * (a - sx);
        }
        assert!((sxy / sxx - 0.0724069).abs() < 1e-13);
        assert!(gompertz_path(0.0, 0.07, &ages).is_err());
    }

    #[test]
    fn rk4_fourth_order_on_smooth_growth() {
        // Logistic-type growth with a closed form: y' = b - c tanh(y - y0).
        let f = |y: f64| Ok(0.08 - 0.05 * (y + 7.0).tanh());
        let ages = [40.0, 80.0];
        let end = |h: f64| rk4_log(f, -9.0, &ages, h).unwrap()[1];
        let (a, b, c) = (end(2.0), end(1.0), end(0.5));
        let ratio = (a - b) / (b - c);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn endogenous_path_band_and_shape() {
        let p = us_baseline();
        let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
        let ages = age_grid(40.0, 80.0, 0.5).unwrap();
        let path = integrate_endogenous(&p, &curve, &ages, DEFAULT_STEP).unwrap();
        let lo = p.beta - p.max_growth_reduction();
        assert!((lo - 0.003_832_469_122_754_18).abs() < 1e-12);
        for w in path.rates.windows(2) {
            let g = (w[1] / w[0]).ln() / 0.5;
            assert!(g > lo && g < p.beta, "{g}");
        }
        assert!(path.healthcare.windows(2).all(|w| w[1] > w[0]));
        let gomp = gompertz_path(p.m0, p.beta, &ages).unwrap();
        assert!(path.rates.last().unwrap() < gomp.rates.last().unwrap());
        // Step halving leaves the terminal rate essentially unchanged.
        let half = integrate_endogenous(&p, &curve, &ages, DEFAULT_STEP / 2.0).unwrap();
        let rel = (half.rates.last().unwrap() / path.rates.last().unwrap() - 1.0).abs();
        assert!(rel < 1e-6, "{rel}");
        let again = integrate_endogenous(&p, &curve, &ages, DEFAULT_STEP).unwrap();
        assert_eq!(path, again);
    }

    #[test]
    fn no_healthcare_reproduces_gompertz() {
        let ages = age_grid(40.0, 80.0, 1.0).unwrap();
        let base = us_baseline();
        for p in [base.with_efficacy(None).unwrap(), base.with_zeta(1.0).unwrap()] {
            let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
            let path = integrate_endogenous(&p, &curve, &ages, DEFAULT_STEP).unwrap();
            let gomp = gompertz_path(p.m0, p.beta, &ages).unwrap();
            for (x, y) in path.rates.iter().zip(&gomp.rates) {
                assert!((x / y - 1.0).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn leaving_the_curve_is_an_error() {
        let p = us_baseline().with_m0(6.0).unwrap();
        let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
        let ages = age_grid(40.0, 240.0, 1.0).unwrap();
        assert!(matches!(
            integrate_endogenous(&p, &curve, &ages, DEFAULT_STEP),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn interpolation_and_hazard() {
        let ages = [0.0, 1.0, 2.0];
        let p = gompertz_path(0.01, 0.1, &ages).unwrap();
        assert!((p.rate_at(0.5).unwrap() - 0.01 * 0.05f64.exp()).abs() < 1e-15);
        assert!(p.rate_at(2.5).is_err());
        let h = p.cumulative_hazard();
        assert_eq!(h[0], 0.0);
        assert!((h[2] - 0.01 * (0.5 + 0.1f64.exp() + 0.5 * 0.2f64.exp())).abs() < 1e-15);
    }
}
