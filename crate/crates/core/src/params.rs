//! Model parameters, derived rate constants and the power efficacy function.
//!
//! All rates are per-year reals in natural units (0.01, not 1%). Every type is
//! an immutable value once constructed; constructors reject the regimes the
//! model does not cover (`psi <= 1`, `gamma <= 1/psi`, `gamma == 1`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Preference parameters of the recursive utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    gamma: f64,
    psi: f64,
    delta: f64,
    zeta: f64,
    theta: f64,
    /// `zeta^(1-gamma)`, the utility scaling applied at death.
    zeta_pow: f64,
}

impl Preferences {
    pub fn new(gamma: f64, psi: f64, delta: f64, zeta: f64) -> Result<Self> {
        if !(gamma.is_finite() && psi.is_finite() && delta.is_finite() && zeta.is_finite()) {
            return Err(Error::InvalidParameter("preferences must be finite".into()));
        }
        if psi <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "psi = {psi}: elasticity of intertemporal substitution must exceed 1"
            )));
        }
        if gamma <= 1.0 / psi {
            return Err(Error::InvalidParameter(format!(
                "gamma = {gamma} must exceed 1/psi = {}",
                1.0 / psi
            )));
        }
        if gamma == 1.0 {
            return Err(Error::InvalidParameter("gamma = 1 is excluded".into()));
        }
        if delta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta}: time preference must be nonnegative"
            )));
        }
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "zeta = {zeta}: bequest retention must lie in (0, 1]"
            )));
        }
        let theta = (1.0 - gamma) / (1.0 - 1.0 / psi);
        Ok(Self {
            gamma,
            psi,
            delta,
            zeta,
            theta,
            zeta_pow: zeta.powf(1.0 - gamma),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn psi(&self) -> f64 {
        self.psi
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    /// `zeta^(1-gamma)`.
    pub fn zeta_pow(&self) -> f64 {
        self.zeta_pow
    }

    /// Coefficient of `m` in the constant-mortality consumption rate,
    /// `(psi-1)(1 - zeta^(1-gamma))/(1-gamma)`. Nonnegative in every admitted
    /// regime and zero exactly when `zeta = 1`.
    pub fn mortality_loading(&self) -> f64 {
        (self.psi - 1.0) * (1.0 - self.zeta_pow) / (1.0 - self.gamma)
    }
}

/// Black-Scholes market coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Market {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Market {
    pub fn new(r: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(r.is_finite() && mu.is_finite() && sigma.is_finite()) {
            return Err(Error::InvalidParameter("market coefficients must be finite".into()));
        }
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!("r = {r} must be positive")));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
        }
        Ok(Self { r, mu, sigma })
    }
}

/// Power efficacy `g(h) = a h^q / q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficacyPower {
    a: f64,
    q: f64,
}

impl EfficacyPower {
    pub fn new(a: f64, q: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!("efficacy scale a = {a} must be positive")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!("efficacy exponent q = {q} must lie in (0, 1)")));
        }
        Ok(Self { a, q })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn g(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.a * h.powf(self.q) / self.q
        }
    }

    /// `(g(h), g'(h))`; the derivative at zero is `+inf` (Inada).
    pub fn eval(&self, h: f64) -> (f64, f64) {
        if h <= 0.0 {
            (0.0, f64::INFINITY)
        } else {
            (self.g(h), self.a * h.powf(self.q - 1.0))
        }
    }

    /// Inverse marginal efficacy `I = (g')^{-1}`.
    pub fn marginal_inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Domain(format!("marginal efficacy y = {y} must be positive")));
        }
        if y == f64::INFINITY {
            return Ok(0.0);
        }
        Ok((y / self.a).powf(1.0 / (self.q - 1.0)))
    }

    /// `sup_{h>=0} { g(h) - slope*h }` together with its maximizer `I(slope)`.
    pub fn net_benefit_sup(&self, slope: f64) -> Result<(f64, f64)> {
        let h = self.marginal_inverse(slope)?;
        Ok((self.g(h) - slope * h, h))
    }
}

/// Rate constants derived from preferences and market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub k_star: f64,
    pub lambda_star: f64,
    pub theta: f64,
}

/// `r + mu^2 / (2 gamma sigma^2)`, the certainty-equivalent return of the
/// Merton portfolio.
pub fn certainty_equivalent_return(prefs: &Preferences, market: &Market) -> f64 {
    market.r + market.mu * market.mu / (2.0 * prefs.gamma * market.sigma * market.sigma)
}

pub fn derive_constants(prefs: &Preferences, market: &Market) -> DerivedConstants {
    let ce = certainty_equivalent_return(prefs, market);
    let (gamma, psi, delta) = (prefs.gamma, prefs.psi, prefs.delta);
    DerivedConstants {
        k_star: delta * psi + (1.0 - psi) * ce,
        lambda_star: delta * gamma * psi + (1.0 - gamma * psi) * ce,
        theta: prefs.theta,
    }
}

/// Full parameter set: preferences, market, Gompertz mortality and optional
/// healthcare efficacy, with derived constants cached at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub prefs: Preferences,
    pub market: Market,
    pub beta: f64,
    pub m0: f64,
    pub efficacy: Option<EfficacyPower>,
    k_star: f64,
    lambda_star: f64,
    beta_lower: Option<f64>,
}

impl ModelParams {
    pub fn new(
        prefs: Preferences,
        market: Market,
        beta: f64,
        m0: f64,
        efficacy: Option<EfficacyPower>,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be nonnegative")));
        }
        if !(m0.is_finite() && m0 > 0.0) {
            return Err(Error::InvalidParameter(format!("m0 = {m0} must be positive")));
        }
        let c = derive_constants(&prefs, &market);
        let beta_lower = match &efficacy {
            Some(eff) => Some(beta - eff.net_benefit_sup(prefs.psi - 1.0)?.0),
            None => None,
        };
        Ok(Self {
            prefs,
            market,
            beta,
            m0,
            efficacy,
            k_star: c.k_star,
            lambda_star: c.lambda_star,
            beta_lower,
        })
    }

    pub fn k_star(&self) -> f64 {
        self.k_star
    }
    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }
    pub fn theta(&self) -> f64 {
        self.prefs.theta
    }

    /// Effective minimal mortality growth under the best static healthcare
    /// trade-off; `None` without efficacy.
    pub fn beta_lower(&self) -> Option<f64> {
        self.beta_lower
    }

    /// Merton fraction `mu / (gamma sigma^2)`.
    pub fn merton_fraction(&self) -> f64 {
        self.market.mu / (self.prefs.gamma * self.market.sigma * self.market.sigma)
    }

    /// Consumption rate under constant mortality `m`.
    pub fn tilde_c0(&self, m: f64) -> f64 {
        self.k_star + self.prefs.mortality_loading() * m
    }

    /// Same rate evaluated term by term from its defining expression.
    pub fn tilde_c0_direct(&self, m: f64) -> f64 {
        let p = &self.prefs;
        p.psi * p.delta
            + (1.0 - p.psi)
                * ((p.zeta_pow - 1.0) * m / (1.0 - p.gamma)
                    + certainty_equivalent_return(p, &self.market))
    }

    /// Healthcare threshold `I(psi - 1)`: the largest spending fraction the
    /// optimal policy can select.
    pub fn max_healthcare(&self) -> Option<f64> {
        self.efficacy
            .map(|e| e.marginal_inverse(self.prefs.psi - 1.0).expect("psi > 1"))
    }

    /// `g(I(psi-1))`, the largest reduction of mortality growth.
    pub fn max_growth_reduction(&self) -> f64 {
        match (self.efficacy, self.max_healthcare()) {
            (Some(e), Some(h)) => e.g(h),
            _ => 0.0,
        }
    }

    pub fn with_efficacy(&self, efficacy: Option<EfficacyPower>) -> Result<Self> {
        Self::new(self.prefs, self.market, self.beta, self.m0, efficacy)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.prefs, self.market, beta, self.m0, self.efficacy)
    }

    pub fn with_m0(&self, m0: f64) -> Result<Self> {
        Self::new(self.prefs, self.market, self.beta, m0, self.efficacy)
    }

    pub fn with_zeta(&self, zeta: f64) -> Result<Self> {
        let p = &self.prefs;
        let prefs = Preferences::new(p.gamma, p.psi, p.delta, zeta)?;
        Self::new(prefs, self.market, self.beta, self.m0, self.efficacy)
    }

    /// Parses the flat `key = value` format. Keys: gamma, psi, delta, zeta, r,
    /// mu, sigma, beta, m0 and optionally a, q (both or neither).
    pub fn from_config_str(text: &str, origin: &str) -> Result<Self> {
        let kv = parse_key_values(text, origin)?;
        let get = |key: &str| -> Result<f64> {
            kv.get(key).map(|(v, _)| *v).ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: 0,
                message: format!("missing key `{key}`"),
            })
        };
        for (key, (_, line)) in &kv {
            if !PARAM_KEYS.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: *line,
                    message: format!("unknown key `{key}`"),
                });
            }
        }
        let prefs = Preferences::new(get("gamma")?, get("psi")?, get("delta")?, get("zeta")?)?;
        let market = Market::new(get("r")?, get("mu")?, get("sigma")?)?;
        let efficacy = match (kv.get("a"), kv.get("q")) {
            (Some((a, _)), Some((q, _))) => Some(EfficacyPower::new(*a, *q)?),
            (None, None) => None,
            _ => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: 0,
                    message: "efficacy keys `a` and `q` must be given together".into(),
                })
            }
        };
        Self::new(prefs, market, get("beta")?, get("m0")?, efficacy)
    }

    pub fn to_config_string(&self) -> String {
        let p = &self.prefs;
        let mut out = String::new();
        let mut put = |k: &str, v: f64| {
            let _ = writeln!(out, "{k} = {v:?}");
        };
        put("gamma", p.gamma);
        put("psi", p.psi);
        put("delta", p.delta);
        put("zeta", p.zeta);
        put("r", self.market.r);
        put("mu", self.market.mu);
        put("sigma", self.market.sigma);
        put("beta", self.beta);
        put("m0", self.m0);
        if let Some(e) = self.efficacy {
            put("a", e.a);
            put("q", e.q);
        }
        out
    }
}

const PARAM_KEYS: [&str; 11] = [
    "gamma", "psi", "delta", "zeta", "r", "mu", "sigma", "beta", "m0", "a", "q",
];

/// Reads `key = value` lines with `#` comments into a map of numbers, keeping
/// the line number of each key.
pub fn parse_key_values(text: &str, origin: &str) -> Result<BTreeMap<String, (f64, usize)>> {
    let mut out = BTreeMap::new();
    for (key, value, line) in parse_key_strings(text, origin)? {
        let v: f64 = value.parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("`{value}` is not a number"),
        })?;
        out.insert(key, (v, line));
    }
    Ok(out)
}

/// Reads `key = value` lines as strings, rejecting duplicate keys.
pub fn parse_key_strings(text: &str, origin: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: "empty key".into(),
            });
        }
        if out.iter().any(|(existing, _, _)| *existing == key) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push((key, v.trim().to_string(), line));
    }
    Ok(out)
}

/// Outcome of the model checks. Never an error: callers decide what to do
/// with a failed flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub well_posed: bool,
    pub gompertz_dominant: bool,
    pub messages: Vec<String>,
}

impl Diagnostics {
    pub fn ok(&self) -> bool {
        self.well_posed && self.gompertz_dominant
    }
}

pub fn validate(params: &ModelParams) -> Diagnostics {
    let mut messages = Vec::new();
    let k = params.k_star();
    let well_posed = k > 0.0;
    if !well_posed {
        messages.push(format!(
            "k* = {k:.6e} <= 0: the model is solvable only if k* > 0 \
             (k* = delta*psi + (1-psi)(r + mu^2/(2 gamma sigma^2)))"
        ));
    }
    let gompertz_dominant = match params.efficacy {
        None => {
            messages.push("no healthcare efficacy: Gompertz dominance holds vacuously".into());
            true
        }
        Some(_) => {
            let reduction = params.max_growth_reduction();
            let ok = reduction < params.beta;
            if !ok {
                messages.push(format!(
                    "g(I(psi-1)) = {reduction:.6e} >= beta = {:.6e}: healthcare could reverse aging",
                    params.beta
                ));
            }
            ok
        }
    };
    Diagnostics {
        well_posed,
        gompertz_dominant,
        messages,
    }
}

/// Lower growth rate `beta - sup_h {g(h) - (psi-1)h}`.
pub fn beta_lower(beta: f64, prefs: &Preferences, eff: &EfficacyPower) -> Result<f64> {
    let (sup, _) = eff.net_benefit_sup(prefs.psi - 1.0)?;
    let lower = beta - sup;
    if lower <= 0.0 {
        return Err(Error::NonDominantEfficacy(format!(
            "beta - sup(g(h) - (psi-1)h) = {lower:.6e} <= 0"
        )));
    }
    Ok(lower)
}

/// The calibration baseline: r = 1%, delta = 3%, psi = 1.5, gamma = 2,
/// zeta = 50%, mu = 5.2%, sigma = 15.4%, with the US efficacy fit.
pub fn us_baseline() -> ModelParams {
    let prefs = Preferences::new(2.0, 1.5, 0.03, 0.5).expect("valid preferences");
    let market = Market::new(0.01, 0.052, 0.154).expect("valid market");
    let eff = EfficacyPower::new(0.19, 0.61).expect("valid efficacy");
    ModelParams::new(prefs, market, 0.0724069, 1.34995e-4, Some(eff)).expect("valid params")
}
