//! Consumption-rate ODE with aging and healthcare, and the optimal policy.
//!
//! In `x = ln m` the reduced equation reads `R(u, m) = Φ(v; u)` with
//! `v = m u'(m) = du/dx`, `R = u (u - c0(m))` and
//!
//! ```text
//! Φ(v; u) = inf_{h >= 0} { v (beta - g(h)) + (psi - 1) u h },
//! ```
//!
//! concave and increasing in `v` on the admissible range. Perturbations of
//! a solution grow like `exp(∫ λ dx)` with `λ ≈ (2u - c0)/(beta - g(h*)) > 0`,
//! so the far-field condition `u ≈ c0 + beta_lower` is imposed at `m_max` and
//! the collocation system is swept towards small `m`, where every solution
//! contracts onto `k*`.

use std::fmt;
use std::str::FromStr;

use crate::closed_form::u_q_with_derivative;
use crate::error::{Error, Result};
use crate::interp::{hermite, locate, MonotoneCubic};
use crate::params::{validate, ModelParams};
use crate::quadrature::QuadratureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Log-midpoint of the analytic envelope; no ODE solve.
    BoundsApprox,
    /// Backward-differentiation collocation on a log grid with the far-field
    /// condition.
    Collocation,
    /// Closed-form `u_q` curve (no healthcare).
    ClosedForm,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::BoundsApprox => "bounds",
            SolverMode::Collocation => "collocation",
            SolverMode::ClosedForm => "closed-form",
        })
    }
}

impl FromStr for SolverMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds" | "bounds-approx" => Ok(SolverMode::BoundsApprox),
            "collocation" => Ok(SolverMode::Collocation),
            other => Err(Error::InvalidParameter(format!(
                "unknown solver mode `{other}` (expected bounds or collocation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub n_nodes: usize,
    pub m_min: f64,
    /// Far-field truncation; chosen from `far_field_gap` when `None`.
    pub m_max: Option<f64>,
    /// Largest admissible envelope width at `m_max`.
    pub far_field_gap: f64,
    /// Acceptance threshold for the scaled ODE residual.
    pub newton_tol: f64,
    /// Allowed excursion outside the envelope, relative to `max(1, u)`.
    pub envelope_tol: f64,
    /// Newton iteration cap per node.
    pub max_iters: usize,
    /// Newton step multiplier in (0, 1].
    pub damping: f64,
    pub quad: QuadratureConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolverMode::Collocation,
            n_nodes: 2000,
            m_min: 1e-7,
            m_max: None,
            far_field_gap: 1e-3,
            newton_tol: 1e-6,
            envelope_tol: 1e-5,
            max_iters: 100,
            damping: 1.0,
            quad: QuadratureConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn bounds_approx() -> Self {
        Self {
            mode: SolverMode::BoundsApprox,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_nodes < 5 {
            return Err(Error::InvalidParameter("solver needs at least 5 nodes".into()));
        }
        if !(self.m_min > 0.0) {
            return Err(Error::InvalidParameter("m_min must be positive".into()));
        }
        if let Some(m) = self.m_max {
            if !(m > self.m_min) {
                return Err(Error::InvalidParameter("m_max must exceed m_min".into()));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()));
        }
        if !(self.newton_tol > 0.0 && self.far_field_gap > 0.0 && self.envelope_tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        self.quad.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveMeta {
    pub mode: SolverMode,
    /// Scaled residual from [`residual_report`].
    pub residual: f64,
    pub iterations: usize,
}

/// Grid representation of a consumption-rate function with its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `u'(m_i)`.
    pub derivs: Vec<f64>,
    pub lower_env: Vec<f64>,
    pub upper_env: Vec<f64>,
    pub meta: CurveMeta,
    elasticity: MonotoneCubic,
}

impl RateCurve {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<f64>,
        derivs: Vec<f64>,
        lower_env: Vec<f64>,
        upper_env: Vec<f64>,
        meta: CurveMeta,
    ) -> Result<Self> {
        let n = grid.len();
        if n < 2
            || values.len() != n
            || derivs.len() != n
            || lower_env.len() != n
            || upper_env.len() != n
        {
            return Err(Error::InvalidParameter("rate curve arrays must share a length >= 2".into()));
        }
        if grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "rate curve grid must be positive and strictly increasing".into(),
            ));
        }
        let xs: Vec<f64> = grid.iter().map(|m| m.ln()).collect();
        let eps: Vec<f64> = (0..n).map(|i| grid[i] * derivs[i] / values[i]).collect();
        let elasticity = MonotoneCubic::new(xs, eps);
        Ok(Self {
            grid,
            values,
            derivs,
            lower_env,
            upper_env,
            meta,
            elasticity,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().expect("nonempty"))
    }

    fn out_of_range(&self, m: f64) -> Error {
        let (lo, hi) = self.range();
        Error::Extrapolation { value: m, lo, hi }
    }

    /// `u(m)` by cubic Hermite interpolation in `ln m` with the node slopes.
    pub fn value_at(&self, m: f64) -> Result<f64> {
        let x = m.ln();
        let xs = self.elasticity.xs();
        let i = locate(xs, x).ok_or_else(|| self.out_of_range(m))?;
        let d = |j: usize| self.grid[j] * self.derivs[j];
        Ok(hermite(xs[i], xs[i + 1], self.values[i], self.values[i + 1], d(i), d(i + 1), x).0)
    }

    /// Elasticity `m u'(m) / u(m)`, interpolated monotonically in `ln m`.
    pub fn elasticity_at(&self, m: f64) -> Result<f64> {
        self.elasticity
            .eval(m.ln())
            .ok_or_else(|| self.out_of_range(m))
    }

    /// `u'(m)` consistent with [`RateCurve::elasticity_at`].
    pub fn derivative_at(&self, m: f64) -> Result<f64> {
        Ok(self.value_at(m)? * self.elasticity_at(m)? / m)
    }

    /// Smallest slack of the envelope `lower <= u <= upper` over the nodes
    /// (negative when violated).
    pub fn envelope_slack(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| (self.values[i] - self.lower_env[i]).min(self.upper_env[i] - self.values[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest increase of the divided-difference slope between neighbouring
    /// intervals; nonpositive for a discretely concave curve.
    pub fn concavity_defect(&self) -> f64 {
        let slopes: Vec<f64> = (0..self.grid.len() - 1)
            .map(|i| (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i]))
            .collect();
        slopes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }
}

/// Log-spaced grid of `n` nodes on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// The reduced ODE with power efficacy.
#[derive(Debug, Clone, Copy)]
struct ReducedOde {
    k: f64,
    kappa: f64,
    beta: f64,
    psi1: f64,
    eff: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct PhiEval {
    phi: f64,
    /// `beta - g(h*)`.
    d_v: f64,
    /// `(psi - 1) h*`.
    d_u: f64,
}

impl ReducedOde {
    fn new(params: &ModelParams) -> Self {
        Self {
            k: params.k_star(),
            kappa: params.prefs.mortality_loading(),
            beta: params.beta,
            psi1: params.prefs.psi() - 1.0,
            eff: params.efficacy.map(|e| (e.a(), e.q())),
        }
    }

    fn c0(&self, m: f64) -> f64 {
        self.k + self.kappa * m
    }

    /// Optimal healthcare for state `(u, v)`: `I((psi-1) u / v)`.
    fn h_star(&self, u: f64, v: f64) -> f64 {
        match self.eff {
            Some((a, q)) if v > 0.0 => (a * v / (self.psi1 * u)).powf(1.0 / (1.0 - q)),
            _ => 0.0,
        }
    }

    fn phi(&self, v: f64, u: f64) -> PhiEval {
        let h = self.h_star(u, v);
        let g = match self.eff {
            Some((a, q)) if h > 0.0 => a * h.powf(q) / q,
            _ => 0.0,
        };
        PhiEval {
            phi: v * (self.beta - g) + self.psi1 * u * h,
            d_v: self.beta - g,
            d_u: self.psi1 * h,
        }
    }

    /// Largest `v` with `d Φ / d v >= 0` at fixed `u`.
    fn v_peak(&self, u: f64) -> f64 {
        match self.eff {
            Some((a, q)) => {
                let h_beta = (q * self.beta / a).powf(1.0 / q);
                self.psi1 * u * h_beta.powf(1.0 - q) / a
            }
            None => f64::INFINITY,
        }
    }
}

/// Solves `Φ(v; base - slope*v) = R(base - slope*v, m)` for `v`, starting
/// from `v0`. `slope = 0` solves the algebraic relation at fixed `u`.
fn solve_node(
    ode: &ReducedOde,
    m: f64,
    base: f64,
    slope: f64,
    v0: f64,
    cfg: &SolverConfig,
) -> Result<(f64, usize)> {
    let c0 = ode.c0(m);
    let u_of = |v: f64| base - slope * v;
    let eval = |v: f64| -> (f64, f64) {
        let u = u_of(v);
        let p = ode.phi(v, u);
        let r = u * (u - c0);
        (p.phi - r, p.d_v + slope * (2.0 * u - c0 - p.d_u))
    };
    let scale = (base * base).max(1e-300);

    // Bracket the root; G is increasing wherever dΦ/dv > 0 and u > 0.
    let mut lo = 0.0;
    let mut g_lo = eval(lo).0;
    if g_lo == 0.0 {
        return Ok((0.0, 0));
    }
    if g_lo > 0.0 {
        let mut step = (base.abs() * 1e-3).max(1e-12);
        loop {
            let cand = lo - step;
            let g = eval(cand).0;
            if g < 0.0 {
                lo = cand;
                g_lo = g;
                break;
            }
            step *= 4.0;
            if step > 1e12 * base.abs().max(1.0) {
                return Err(Error::NonConvergence(format!(
                    "no lower bracket for the rate slope at m = {m:.3e}"
                )));
            }
        }
    }
    let cap = {
        let mut cap = ode.v_peak(base);
        if slope > 0.0 {
            cap = cap.min(base / slope * (1.0 - 1e-12));
        }
        cap
    };
    let mut hi = (lo.abs().max(base * 1e-6)).max(1e-300);
    let mut g_hi;
    loop {
        if hi > cap {
            hi = cap;
        }
        g_hi = eval(hi).0;
        if g_hi >= 0.0 {
            break;
        }
        if hi >= cap {
            return Err(Error::NonConvergence(format!(
                "rate slope at m = {m:.3e} exceeds the admissible range (u = {base:.6e}): \
                 u left the band [c0, c0 + beta_lower]"
            )));
        }
        hi *= 2.0;
    }
    let _ = g_lo;

    let mut v = v0.clamp(lo, hi);
    if !v.is_finite() {
        v = 0.5 * (lo + hi);
    }
    for it in 1..=cfg.max_iters {
        let (g, dg) = eval(v);
        if g.abs() <= 1e-15 * scale {
            return Ok((v, it));
        }
        if g < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let mut next = if dg > 0.0 { v - cfg.damping * g / dg } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()) || next == v {
            return Ok((next, it));
        }
        v = next;
    }
    Err(Error::NonConvergence(format!(
        "node Newton at m = {m:.3e} did not converge in {} iterations (bracket [{lo:.6e}, {hi:.6e}])",
        cfg.max_iters
    )))
}

struct Envelope {
    lower: Vec<f64>,
    lower_d: Vec<f64>,
    upper: Vec<f64>,
    upper_d: Vec<f64>,
}

fn envelope(params: &ModelParams, grid: &[f64], quad: &QuadratureConfig) -> Result<Envelope> {
    let beta = params.beta;
    let beta_lower = params.beta_lower().unwrap_or(beta);
    let kappa = params.prefs.mortality_loading();
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .iter()
        .map(|&m| {
            let (ub, ubd) = u_q_with_derivative(m, beta, params, quad)?;
            let (ul, uld) = if beta_lower == beta {
                (ub, ubd)
            } else {
                u_q_with_derivative(m, beta_lower, params, quad)?
            };
            let asym = params.tilde_c0(m) + beta_lower;
            let (up, upd) = if ub <= asym { (ub, ubd) } else { (asym, kappa) };
            Ok((ul, uld, up, upd))
        })
        .collect::<Result<_>>()?;
    Ok(Envelope {
        lower: rows.iter().map(|r| r.0).collect(),
        lower_d: rows.iter().map(|r| r.1).collect(),
        upper: rows.iter().map(|r| r.2).collect(),
        upper_d: rows.iter().map(|r| r.3).collect(),
    })
}

/// Width of the envelope at `m`.
fn envelope_gap(params: &ModelParams, m: f64, quad: &QuadratureConfig) -> Result<f64> {
    let env = envelope(params, &[m], quad)?;
    Ok(env.upper[0] - env.lower[0])
}

fn choose_m_max(params: &ModelParams, cfg: &SolverConfig) -> Result<f64> {
    if let Some(m) = cfg.m_max {
        let gap = envelope_gap(params, m, &cfg.quad)?;
        if gap >= cfg.far_field_gap {
            return Err(Error::InvalidParameter(format!(
                "m_max = {m} leaves an envelope gap {gap:.3e} >= {:.3e}; increase m_max",
                cfg.far_field_gap
            )));
        }
        return Ok(m);
    }
    let mut m = 1.0_f64.max(cfg.m_min * 10.0);
    while envelope_gap(params, m, &cfg.quad)? >= cfg.far_field_gap {
        m *= 2.0;
        if m > 1e6 {
            return Err(Error::InvalidParameter(
                "no far-field truncation below m = 1e6 meets the envelope gap".into(),
            ));
        }
    }
    Ok(m)
}

/// Solves for the consumption-wealth ratio `u*` on a log grid.
///
/// Without efficacy the closed-form `u_beta` curve is returned.
pub fn solve_u_star(params: &ModelParams, cfg: &SolverConfig) -> Result<RateCurve> {
    cfg.check()?;
    let diag = validate(params);
    if !diag.ok() {
        return Err(Error::IllPosed(diag.messages.join("; ")));
    }
    if !(params.beta > 0.0) {
        return Err(Error::Domain("the consumption-rate ODE needs beta > 0".into()));
    }
    let m_max = choose_m_max(params, cfg)?;
    let grid = log_grid(cfg.m_min, m_max, cfg.n_nodes);
    solve_on_grid(params, cfg, grid)
}

/// As [`solve_u_star`] on a caller-supplied increasing grid.
pub fn solve_on_grid(params: &ModelParams, cfg: &SolverConfig, grid: Vec<f64>) -> Result<RateCurve> {
    let env = envelope(params, &grid, &cfg.quad)?;
    let n = grid.len();
    let mode = if params.efficacy.is_none() {
        SolverMode::ClosedForm
    } else {
        cfg.mode
    };
    let (values, derivs, iterations) = match mode {
        SolverMode::ClosedForm => (env.upper.clone(), env.upper_d.clone(), 0),
        SolverMode::BoundsApprox => {
            let mut values = Vec::with_capacity(n);
            let mut derivs = Vec::with_capacity(n);
            for i in 0..n {
                let u = (env.lower[i] * env.upper[i]).sqrt();
                values.push(u);
                derivs.push(
                    (env.lower_d[i] * env.upper[i] + env.lower[i] * env.upper_d[i]) / (2.0 * u),
                );
            }
            (values, derivs, 0)
        }
        SolverMode::Collocation => collocate(params, cfg, &grid, &env)?,
    };
    let meta = CurveMeta {
        mode,
        residual: f64::NAN,
        iterations,
    };
    let mut curve = RateCurve::new(grid, values, derivs, env.lower, env.upper, meta)?;
    curve.meta.residual = residual_report(&curve, params);
    if mode == SolverMode::Collocation {
        let tol = cfg.newton_tol;
        let slack = (0..n)
            .map(|i| {
                let t = cfg.envelope_tol * curve.values[i].max(1.0);
                (curve.values[i] - curve.lower_env[i] + t).min(curve.upper_env[i] - curve.values[i] + t)
            })
            .fold(f64::INFINITY, f64::min);
        if slack < 0.0 {
            return Err(Error::BoundViolation(format!(
                "collocation iterate exits the envelope by {:.3e}",
                -slack
            )));
        }
        if !(curve.meta.residual <= tol) {
            return Err(Error::NonConvergence(format!(
                "collocation residual {:.3e} exceeds {tol:.1e} with {n} nodes (best iterate after {} Newton steps)",
                curve.meta.residual, curve.meta.iterations
            )));
        }
    }
    Ok(curve)
}

const FAR_FIELD_PAD: usize = 24;

fn collocate(
    params: &ModelParams,
    cfg: &SolverConfig,
    requested: &[f64],
    requested_env: &Envelope,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let ode = ReducedOde::new(params);
    let keep = requested.len();
    // The far-field condition is imposed past the requested range; its error
    // decays within a few nodes of the stiff sweep.
    let mut grid = requested.to_vec();
    let step = (requested[keep - 1] / requested[keep - 2]).ln();
    let pad: Vec<f64> = (1..=FAR_FIELD_PAD)
        .map(|j| requested[keep - 1] * (step * j as f64).exp())
        .collect();
    let pad_env = envelope(params, &pad, &cfg.quad)?;
    grid.extend_from_slice(&pad);
    let mut upper = requested_env.upper.clone();
    upper.extend_from_slice(&pad_env.upper);
    let mut lower = requested_env.lower.clone();
    lower.extend_from_slice(&pad_env.lower);
    let env = Envelope {
        lower,
        lower_d: Vec::new(),
        upper,
        upper_d: Vec::new(),
    };
    let n = grid.len();
    let xs: Vec<f64> = grid.iter().map(|m| m.ln()).collect();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let last = n - 1;
    u[last] = env.upper[last];
    let (v_last, mut iterations) = solve_node(&ode, grid[last], u[last], 0.0, u[last], cfg)?;
    v[last] = v_last;
    let h = (xs[last] - xs[0]) / last as f64;
    let uniform = xs.windows(2).all(|w| ((w[1] - w[0]) / h - 1.0).abs() < 1e-6);
    for i in (0..last).rev() {
        let h1 = xs[i + 1] - xs[i];
        let behind = last - i;
        let (base, slope) = if behind == 1 {
            (u[i + 1] - 0.5 * h1 * v[i + 1], 0.5 * h1)
        } else if uniform && behind >= 4 {
            // BDF4 towards decreasing x.
            (
                (48.0 * u[i + 1] - 36.0 * u[i + 2] + 16.0 * u[i + 3] - 3.0 * u[i + 4]) / 25.0,
                12.0 / 25.0 * h1,
            )
        } else if uniform && behind == 3 {
            (
                (18.0 * u[i + 1] - 9.0 * u[i + 2] + 2.0 * u[i + 3]) / 11.0,
                6.0 / 11.0 * h1,
            )
        } else {
            // Variable-step BDF2.
            let w = h1 / (xs[i + 2] - xs[i + 1]);
            let d = 1.0 + 2.0 * w;
            (
                ((1.0 + w) * (1.0 + w) * u[i + 1] - w * w * u[i + 2]) / d,
                h1 * (1.0 + w) / d,
            )
        };
        let u_mid = (env.lower[i] * env.upper[i]).sqrt();
        let v0 = (base - u_mid) / slope;
        let (vi, it) = solve_node(&ode, grid[i], base, slope, v0, cfg)?;
        iterations += it;
        v[i] = vi;
        u[i] = base - slope * vi;
    }
    u.truncate(keep);
    let derivs = (0..keep).map(|i| v[i] / grid[i]).collect();
    Ok((u, derivs, iterations))
}

/// Closed-form `u_q` curve on a grid.
pub fn closed_form_curve(
    params: &ModelParams,
    q: f64,
    grid: Vec<f64>,
    quad: &QuadratureConfig,
) -> Result<RateCurve> {
    let rows: Vec<(f64, f64)> = grid
        .iter()
        .map(|&m| u_q_with_derivative(m, q, params, quad))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let derivs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let meta = CurveMeta {
        mode: SolverMode::ClosedForm,
        residual: f64::NAN,
        iterations: 0,
    };
    let mut curve = RateCurve::new(grid, values.clone(), derivs, values.clone(), values, meta)?;
    let reference = params.with_beta(q)?.with_efficacy(None)?;
    curve.meta.residual = residual_report(&curve, &reference);
    Ok(curve)
}

/// Five-point first-derivative weights at `x[c]` for arbitrary nodes.
fn derivative_weights(x: &[f64; 5], c: usize) -> [f64; 5] {
    let mut w = [0.0; 5];
    for j in 0..5 {
        let mut denom = 1.0;
        for k in 0..5 {
            if k != j {
                denom *= x[j] - x[k];
            }
        }
        // d/dx of the Lagrange basis l_j at x[c].
        let mut num = 0.0;
        for skip in 0..5 {
            if skip == j {
                continue;
            }
            let mut prod = 1.0;
            for k in 0..5 {
                if k != j && k != skip {
                    prod *= x[c] - x[k];
                }
            }
            num += prod;
        }
        w[j] = num / denom;
    }
    w
}

/// Scaled residual `|res| / max(1, u^2)` of the reduced equation at each node,
/// with `m u'` recomputed by a fourth-order five-point stencil in `ln m` and
/// the healthcare supremum in its power closed form. The two nodes at each
/// end carry `NaN`.
pub fn node_residuals(curve: &RateCurve, params: &ModelParams) -> Vec<f64> {
    let n = curve.grid.len();
    let mut out = vec![f64::NAN; n];
    if n < 5 {
        return out;
    }
    let k = params.k_star();
    let kappa = params.prefs.mortality_loading();
    let beta = params.beta;
    let psi1 = params.prefs.psi() - 1.0;
    let xs: Vec<f64> = curve.grid.iter().map(|m| m.ln()).collect();
    for i in 2..n - 2 {
        let pts = [xs[i - 2], xs[i - 1], xs[i], xs[i + 1], xs[i + 2]];
        let w = derivative_weights(&pts, 2);
        let v: f64 = (0..5).map(|j| w[j] * curve.values[i - 2 + j]).sum();
        let u = curve.values[i];
        let m = curve.grid[i];
        let mut res = u * u - (k + kappa * m) * u - beta * v;
        if let (Some(e), true) = (params.efficacy, v > 0.0) {
            let (a, q) = (e.a(), e.q());
            res += (1.0 - q) / q
                * a.powf(1.0 / (1.0 - q))
                * (psi1 * u).powf(-q / (1.0 - q))
                * v.powf(1.0 / (1.0 - q));
        }
        out[i] = res.abs() / (u * u).max(1.0);
    }
    out
}

/// Largest entry of [`node_residuals`] over interior nodes.
pub fn residual_report(curve: &RateCurve, params: &ModelParams) -> f64 {
    let res = node_residuals(curve, params);
    if res.len() < 5 {
        return f64::NAN;
    }
    res[2..res.len() - 2].iter().fold(0.0, |a, &b| a.max(b))
}

/// Optimal rates at a mortality level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub consumption_rate: f64,
    pub portfolio_fraction: f64,
    pub healthcare_fraction: f64,
}

/// Healthcare fraction from the elasticity `eps = m u'/u` in both the
/// inverse-marginal form and the explicit power form.
pub fn h_star_forms(eps: f64, params: &ModelParams) -> Result<(f64, f64)> {
    let eff = params
        .efficacy
        .ok_or_else(|| Error::InvalidParameter("healthcare needs an efficacy function".into()))?;
    if !(eps > 0.0) {
        return Err(Error::Degenerate(format!(
            "elasticity {eps:.3e} <= 0: interpolated u' is not positive"
        )));
    }
    let psi1 = params.prefs.psi() - 1.0;
    let general = eff.marginal_inverse(psi1 / eps)?;
    let power = (psi1 / (eff.a() * eps)).powf(-1.0 / (1.0 - eff.q()));
    Ok((general, power))
}

/// `h*(m) = I((psi-1) u*(m) / (m u*'(m)))`.
pub fn h_star(m: f64, curve: &RateCurve, params: &ModelParams) -> Result<f64> {
    let eps = curve.elasticity_at(m)?;
    Ok(h_star_forms(eps, params)?.0)
}

pub fn policy_rates(m: f64, curve: &RateCurve, params: &ModelParams) -> Result<Policy> {
    Ok(Policy {
        consumption_rate: curve.value_at(m)?,
        portfolio_fraction: params.merton_fraction(),
        healthcare_fraction: h_star(m, curve, params)?,
    })
}

/// Consumption, risky position and healthcare spending for wealth `x`.
pub fn policy_at(x: f64, m: f64, curve: &RateCurve, params: &ModelParams) -> Result<(f64, f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("wealth x = {x} must be positive")));
    }
    let p = policy_rates(m, curve, params)?;
    Ok((
        x * p.consumption_rate,
        x * p.portfolio_fraction,
        x * p.healthcare_fraction,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::u_q;
    use crate::params::{us_baseline, EfficacyPower};
    use proptest::prelude::*;

    fn quick(mode: SolverMode, n: usize) -> SolverConfig {
        SolverConfig {
            mode,
            n_nodes: n,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn derivative_weights_are_exact_on_quartics() {
        let x = [0.0, 0.3, 0.7, 1.2, 2.0];
        let f = |t: f64| t.powi(4) - t * t + 3.0;
        let df = |t: f64| 4.0 * t.powi(3) - 2.0 * t;
        for c in 0..5 {
            let w = derivative_weights(&x, c);
            let est: f64 = (0..5).map(|j| w[j] * f(x[j])).sum();
            assert!((est - df(x[c])).abs() < 1e-10);
        }
    }

    #[test]
    fn phi_matches_supremum_form() {
        let p = us_baseline();
        let ode = ReducedOde::new(&p);
        let e = p.efficacy.unwrap();
        let (u, v) = (0.06, 0.02);
        let eval = ode.phi(v, u);
        // Brute-force infimum over a fine h grid.
        let brute = (0..200_000)
            .map(|i| {
                let h = i as f64 * 1e-6;
                v * (p.beta - e.g(h)) + 0.5 * u * h
            })
            .fold(f64::INFINITY, f64::min);
        assert!((eval.phi - brute).abs() < 1e-9, "{} vs {brute}", eval.phi);
        assert!(ode.v_peak(u) > u);
    }

    #[test]
    fn zeta_one_collapses_to_k_star() {
        let p = us_baseline().with_zeta(1.0).unwrap();
        let curve = solve_u_star(&p, &quick(SolverMode::Collocation, 200)).unwrap();
        let k = p.k_star();
        assert!(curve.values.iter().all(|&u| (u - k).abs() < 1e-15), "{:?}", &curve.values[..3]);
        assert!(curve.grid.iter().zip(&curve.derivs).all(|(m, d)| (m * d).abs() < 1e-14));
        let approx = solve_u_star(&p, &quick(SolverMode::BoundsApprox, 50)).unwrap();
        assert!(approx.values.iter().all(|&u| (u - p.k_star()).abs() < 1e-15));
    }

    #[test]
    fn collocation_inside_envelope() {
        let p = us_baseline();
        let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
        assert!(curve.envelope_slack() > 0.0, "{}", curve.envelope_slack());
        assert!(curve.is_strictly_increasing());
        assert!(curve.concavity_defect() <= 1e-9, "{}", curve.concavity_defect());
        assert!(curve.meta.residual <= 1e-6, "{}", curve.meta.residual);
        assert!((curve.values[0] - p.k_star()).abs() < 1e-3);
        // Envelope at m = 0.01 from the closed forms.
        let quad = QuadratureConfig::default();
        let lo = u_q(0.01, p.beta_lower().unwrap(), &p, &quad).unwrap();
        let hi = u_q(0.01, p.beta, &p, &quad).unwrap().min(p.tilde_c0(0.01) + p.beta_lower().unwrap());
        assert!((lo - 0.041_530_860_930_41).abs() < 1e-10);
        assert!((hi - 0.048_239_146_679_83).abs() < 1e-10);
        let u = curve.value_at(0.01).unwrap();
        assert!(lo < u && u < hi, "{lo} < {u} < {hi}");
    }

    #[test]
    fn vanishing_efficacy_recovers_u_beta() {
        let p = us_baseline()
            .with_efficacy(Some(EfficacyPower::new(1e-6, 0.61).unwrap()))
            .unwrap();
        let curve = solve_u_star(&p, &SolverConfig::default()).unwrap();
        let quad = QuadratureConfig::default();
        for (m, u) in curve.grid.iter().zip(&curve.values).step_by(7) {
            let ub = u_q(*m, p.beta, &p, &quad).unwrap();
            assert!((u - ub).abs() < 1e-4, "m={m}: {u} vs {ub}");
        }
    }

    #[test]
    fn bounds_mode_is_envelope_midpoint() {
        let p = us_baseline();
        let curve = solve_u_star(&p, &quick(SolverMode::BoundsApprox, 300)).unwrap();
        assert_eq!(curve.meta.mode, SolverMode::BoundsApprox);
        assert!(curve.meta.residual.is_finite());
        for i in 0..curve.grid.len() {
            let mid = (curve.lower_env[i] * curve.upper_env[i]).sqrt();
            assert_eq!(curve.values[i], mid);
        }
        assert!(curve.envelope_slack() >= 0.0);
        assert!(curve.is_strictly_increasing());
        assert!(curve.concavity_defect() <= 1e-12);
    }

    #[test]
    fn closed_form_curve_residual_small() {
        let p = us_baseline();
        let curve = closed_form_curve(&p, p.beta, log_grid(1e-5, 5.0, 800), &QuadratureConfig::default())
            .unwrap();
        assert!(curve.meta.residual <= 1e-5, "{}", curve.meta.residual);
        let without = p.with_efficacy(None).unwrap();
        assert!(residual_report(&curve, &without) <= 1e-5);
    }

    #[test]
    fn h_star_bounds_and_forms() {
        let p = us_baseline();
        let curve = solve_u_star(&p, &quick(SolverMode::BoundsApprox, 400)).unwrap();
        let cap = p.max_healthcare().unwrap();
        assert!((cap - 0.083_660_805_670_24).abs() < 1e-12);
        let mut prev = 0.0;
        for &m in curve.grid.iter().skip(1).step_by(5) {
            let eps = curve.elasticity_at(m).unwrap();
            let (g, pw) = h_star_forms(eps, &p).unwrap();
            assert!((g - pw).abs() <= 1e-10 * g.max(1e-300));
            assert!(g <= cap && g >= prev, "m={m}: {g}");
            assert!(p.efficacy.unwrap().g(g) < p.beta);
            prev = g;
        }
        let small = h_star(curve.grid[0], &curve, &p).unwrap();
        assert!(small < 1e-6, "{small}");
        assert!(matches!(h_star(1e3, &curve, &p), Err(Error::Extrapolation { .. })));
        assert!(matches!(h_star_forms(0.0, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn policy_linear_in_wealth() {
        let p = us_baseline();
        let curve = solve_u_star(&p, &quick(SolverMode::BoundsApprox, 200)).unwrap();
        let (c1, p1, h1) = policy_at(1.0, 0.02, &curve, &p).unwrap();
        let (c2, p2, h2) = policy_at(2.0, 0.02, &curve, &p).unwrap();
        assert!((p1 - 1.096_306_291_111_486).abs() < 1e-12);
        assert!((c2 - 2.0 * c1).abs() < 1e-15 && (p2 - 2.0 * p1).abs() < 1e-15);
        assert!((h2 - 2.0 * h1).abs() < 1e-15);
        let (c0, _, _) = policy_at(1.0, curve.grid[0], &curve, &p).unwrap();
        assert!((c0 - p.k_star()).abs() < 2e-3);
        assert!(policy_at(0.0, 0.02, &curve, &p).is_err());
    }

    #[test]
    fn second_order_grid_refinement() {
        let p = us_baseline();
        let solve = |n: usize| {
            let cfg = SolverConfig {
                n_nodes: n,
                m_max: Some(8.0),
                newton_tol: 1e-4,
                ..SolverConfig::default()
            };
            solve_u_star(&p, &cfg).unwrap()
        };
        let curves: Vec<RateCurve> = [500, 1000, 2000].iter().map(|&n| solve(n)).collect();
        let probes = [1e-6, 1e-4, 1e-2, 0.1, 1.0, 5.0];
        let diff = |a: &RateCurve, b: &RateCurve| {
            probes
                .iter()
                .map(|&m| (a.value_at(m).unwrap() - b.value_at(m).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let coarse = diff(&curves[0], &curves[1]);
        let fine = diff(&curves[1], &curves[2]);
        // At least second order; the uniform-grid scheme is fourth order.
        let ratio = coarse / fine;
        assert!(ratio > 4.0, "ratio {ratio}");
        assert!(fine < 1e-8, "{fine}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn collocation_shape_over_efficacies(a in 0.02f64..0.25, q in 0.35f64..0.85) {
            let p = us_baseline().with_efficacy(Some(EfficacyPower::new(a, q).unwrap())).unwrap();
            prop_assume!(validate(&p).ok());
            let cfg = SolverConfig::default();
            let curve = solve_u_star(&p, &cfg).unwrap();
            prop_assert!(curve.envelope_slack() > -1e-5);
            prop_assert!(curve.is_strictly_increasing());
            prop_assert!(curve.concavity_defect() <= 1e-9);
            let cap = p.max_healthcare().unwrap();
            for &m in curve.grid.iter().skip(1).step_by(37) {
                let h = h_star(m, &curve, &p).unwrap();
                prop_assert!(h >= 0.0 && h <= cap * (1.0 + 1e-9));
            }
        }

        #[test]
        fn bounds_curve_inside_envelope(a in 0.02f64..0.25, q in 0.35f64..0.85) {
            let p = us_baseline().with_efficacy(Some(EfficacyPower::new(a, q).unwrap())).unwrap();
            prop_assume!(validate(&p).ok());
            let curve = solve_u_star(&p, &quick(SolverMode::BoundsApprox, 120)).unwrap();
            prop_assert!(curve.envelope_slack() >= 0.0);
            prop_assert!(curve.is_strictly_increasing());
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let p = us_baseline();
        let strong = p
            .with_efficacy(Some(EfficacyPower::new(2.0, 0.61).unwrap()))
            .unwrap();
        assert!(matches!(solve_u_star(&strong, &SolverConfig::default()), Err(Error::IllPosed(_))));
        let cfg = SolverConfig {
            m_max: Some(0.5),
            ..SolverConfig::default()
        };
        assert!(matches!(solve_u_star(&p, &cfg), Err(Error::InvalidParameter(_))));
    }
}
