//! Explicit solutions of the reduced problem without healthcare.
//!
//! `u_q(m)` solves `0 = u^2 - c0(m) u - q m u'` with `u(0) = k*`. It is the
//! reciprocal of
//!
//! ```text
//! (1/q) ∫_0^∞ exp(-(kappa m / q) y) (1 + y)^-(1 + k*/q) dy,
//! ```
//!
//! with `kappa = (psi-1)(1-zeta^(1-gamma))/(1-gamma) >= 0`. Substituting
//! `s = (1+y)^(-k*/q)` turns it into `u_q = k* / J` with
//!
//! ```text
//! J(z) = ∫_0^1 exp(-z (s^(-q/k*) - 1)) ds,   z = kappa m / q,
//! ```
//!
//! a bounded integrand on a bounded interval, equal to 1 at `z = 0`.

use crate::error::{Error, Result};
use crate::params::ModelParams;
pub use crate::quadrature::QuadratureConfig;
use crate::quadrature::integrate_vec;

/// Value function evaluated at a state, with the policy rates used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueQuote {
    pub x: f64,
    pub m: f64,
    pub value: f64,
    /// Consumption-wealth ratio.
    pub rate: f64,
    /// Merton fraction of wealth in the risky asset.
    pub portfolio: f64,
}

fn check_family(m: f64, q: f64, params: &ModelParams) -> Result<()> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("growth rate q = {q} must be positive")));
    }
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("mortality m = {m} must be nonnegative")));
    }
    let k = params.k_star();
    if !(k > 0.0) {
        return Err(Error::IllPosed(format!(
            "k* = {k:.6e} <= 0; the rate family requires k* > 0"
        )));
    }
    // The exponential factor must not grow in y, otherwise the integral diverges.
    let kappa = params.prefs.mortality_loading();
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(Error::IllPosed(format!(
            "mortality loading {kappa:.6e} < 0 makes the rate integral diverge"
        )));
    }
    Ok(())
}

/// Returns `(J, ∫ w e^{-z w} ds)` with `w = s^(-q/k) - 1`.
fn rate_integrals(z: f64, ratio: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    if z == 0.0 {
        // Only J is needed here; the second moment may diverge.
        return Ok((1.0, f64::NAN));
    }
    // s at which z*w reaches a given level; the integrand is below e^-745
    // (zero in double precision) left of the last breakpoint.
    let s_at = |level: f64| (1.0 + level / z).powf(-1.0 / ratio);
    let breaks = [s_at(745.0), s_at(30.0), s_at(1.0), 1.0];
    let integrand = |s: f64| {
        if s <= 0.0 {
            return [0.0, 0.0];
        }
        let w = (-ratio * s.ln()).exp_m1();
        let e = (-z * w).exp();
        [e, if e == 0.0 { 0.0 } else { w * e }]
    };
    let mut j = 0.0;
    let mut jw = 0.0;
    for win in breaks.windows(2) {
        if win[1] <= win[0] {
            continue;
        }
        let [a, b] = integrate_vec(integrand, win[0], win[1], cfg)?;
        j += a.value;
        jw += b.value;
    }
    Ok((j, jw))
}

/// `u_q(m)` and its derivative in `m`, the latter by differentiating under
/// the integral sign.
pub fn u_q_with_derivative(
    m: f64,
    q: f64,
    params: &ModelParams,
    cfg: &QuadratureConfig,
) -> Result<(f64, f64)> {
    check_family(m, q, params)?;
    let k = params.k_star();
    let kappa = params.prefs.mortality_loading();
    if kappa == 0.0 {
        return Ok((k, 0.0));
    }
    if m == 0.0 {
        // u'(0+) = kappa k/(k-q) when q < k, unbounded otherwise.
        let d = if q < k { kappa * k / (k - q) } else { f64::INFINITY };
        return Ok((k, d));
    }
    let z = kappa * m / q;
    let (j, jw) = rate_integrals(z, q / k, cfg)?;
    if !(j > 0.0) {
        return Err(Error::NonConvergence(format!(
            "rate integral underflowed at m = {m}, q = {q}"
        )));
    }
    Ok((k / j, k * kappa * jw / (q * j * j)))
}

pub fn u_q(m: f64, q: f64, params: &ModelParams, cfg: &QuadratureConfig) -> Result<f64> {
    check_family(m, q, params)?;
    let k = params.k_star();
    let kappa = params.prefs.mortality_loading();
    if kappa == 0.0 || m == 0.0 {
        return Ok(k);
    }
    let (j, _) = rate_integrals(kappa * m / q, q / k, cfg)?;
    if !(j > 0.0) {
        return Err(Error::NonConvergence(format!(
            "rate integral underflowed at m = {m}, q = {q}"
        )));
    }
    Ok(k / j)
}

/// Argument of the incomplete-gamma representation, `m psi (1-zeta^(1-gamma)) / (theta q)`.
pub fn gamma_argument(m: f64, q: f64, params: &ModelParams) -> f64 {
    let p = &params.prefs;
    m * p.psi() * (1.0 - p.zeta_pow()) / (p.theta() * q)
}

/// Cross-check of `u_q` through `q e^{-z} z^{-k/q} / Γ̄(-k/q, z)`, with the
/// upper incomplete gamma function integrated directly by composite Simpson
/// in `t = z e^w`. Valid for `m > 0`, `zeta < 1`, `gamma > 1`.
pub fn u_q_gamma_check(m: f64, q: f64, params: &ModelParams) -> Result<f64> {
    check_family(m, q, params)?;
    let p = &params.prefs;
    if !(m > 0.0) || p.zeta() >= 1.0 || p.gamma() <= 1.0 {
        return Err(Error::Domain(
            "incomplete-gamma representation needs m > 0, zeta < 1 and gamma > 1".into(),
        ));
    }
    let z = gamma_argument(m, q, params);
    let s = -params.k_star() / q;
    // Γ̄(s, z) = z^s e^{-z} ∫_0^∞ exp(s w - z (e^w - 1)) dw; the prefactor is
    // carried in logs and cancels against the numerator.
    let log_prefactor = s * z.ln() - z;
    let exponent = |w: f64| s * w - z * w.exp_m1();
    let mut upper = 1.0;
    while exponent(upper) > -60.0 {
        upper *= 2.0;
    }
    let n = 200_000usize;
    let h = upper / n as f64;
    let mut sum = (exponent(0.0)).exp() + exponent(upper).exp();
    for i in 1..n {
        let w = i as f64 * h;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * exponent(w).exp();
    }
    let scaled_gamma = sum * h / 3.0;
    let log_upper_gamma = log_prefactor + scaled_gamma.ln();
    let log_numerator = -z + s * z.ln();
    Ok(q * (log_numerator - log_upper_gamma).exp())
}

pub fn value_from_rate(x: f64, m: f64, rate: f64, params: &ModelParams) -> Result<ValueQuote> {
    let p = &params.prefs;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("wealth x = {x} must be positive")));
    }
    if !(p.delta() > 0.0) {
        return Err(Error::IllPosed("the value function needs delta > 0".into()));
    }
    let value = p.delta().powf(p.theta()) * x.powf(1.0 - p.gamma()) / (1.0 - p.gamma())
        * rate.powf(-p.theta() / p.psi());
    Ok(ValueQuote {
        x,
        m,
        value,
        rate,
        portfolio: params.merton_fraction(),
    })
}

/// Value and policy with constant mortality and no healthcare.
pub fn value_no_aging(x: f64, m: f64, params: &ModelParams) -> Result<ValueQuote> {
    let c0 = params.tilde_c0(m);
    if !(c0 > 0.0) {
        return Err(Error::IllPosed(format!(
            "consumption rate c0({m}) = {c0:.6e} <= 0"
        )));
    }
    value_from_rate(x, m, c0, params)
}

/// Value and policy with Gompertz aging and no healthcare.
pub fn value_aging_no_healthcare(
    x: f64,
    m: f64,
    params: &ModelParams,
    cfg: &QuadratureConfig,
) -> Result<ValueQuote> {
    if !(params.beta > 0.0) {
        return Err(Error::Domain("aging regime needs beta > 0".into()));
    }
    let rate = u_q(m, params.beta, params, cfg)?;
    value_from_rate(x, m, rate, params)
}

/// Row of the closed-form table: `c0(m)`, `u_beta(m)`, `u_beta_lower(m)` and
/// whether both satisfy the strict sandwich `c0 < u_q < c0 + q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormRow {
    pub m: f64,
    pub tilde_c0: f64,
    pub u_beta: f64,
    pub u_beta_lower: f64,
    pub bounds_ok: bool,
}

pub fn closed_form_table(
    grid: &[f64],
    params: &ModelParams,
    cfg: &QuadratureConfig,
) -> Result<Vec<ClosedFormRow>> {
    let beta = params.beta;
    let beta_lower = params.beta_lower().unwrap_or(beta);
    grid.iter()
        .map(|&m| {
            let c0 = params.tilde_c0(m);
            let ub = u_q(m, beta, params, cfg)?;
            let ul = u_q(m, beta_lower, params, cfg)?;
            let strict = |u: f64, q: f64| c0 < u && u < c0 + q;
            let bounds_ok = if m > 0.0 && params.prefs.zeta() < 1.0 {
                strict(ub, beta) && strict(ul, beta_lower)
            } else {
                ub == c0 && ul == c0
            };
            Ok(ClosedFormRow {
                m,
                tilde_c0: c0,
                u_beta: ub,
                u_beta_lower: ul,
                bounds_ok,
            })
        })
        .collect()
}
