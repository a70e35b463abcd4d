//! Scaling-law functional forms and the training FLOPs model.
//!
//! Every law shares the Chinchilla base `E + A/N^alpha + B/D^beta`. The
//! repetition extensions either replace `N`/`D` by saturating effective
//! counts, or keep `D = U_D * epochs` and add an explicit overfitting
//! penalty that vanishes at a single epoch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base Chinchilla constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaParams {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
}

impl ChinchillaParams {
    pub const NAMES: [&'static str; 5] = ["E", "A", "alpha", "B", "beta"];

    pub fn new(e: f64, a: f64, alpha: f64, b: f64, beta: f64) -> Result<Self> {
        let p = Self { e, a, alpha, b, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.e, self.a, self.alpha, self.b, self.beta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite Chinchilla constant in {self:?}")));
        }
        if self.e < 0.0 || self.a <= 0.0 || self.b <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "need E >= 0, A > 0, B > 0 (got E={}, A={}, B={})",
                self.e, self.a, self.b
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0 && self.beta > 0.0 && self.beta < 2.0) {
            return Err(Error::InvalidParams(format!(
                "exponents must lie in (0, 2) (got alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; 5] {
        [self.e, self.a, self.alpha, self.b, self.beta]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { e: v[0], a: v[1], alpha: v[2], b: v[3], beta: v[4] }
    }

    #[inline]
    pub(crate) fn loss(&self, n: f64, d: f64) -> f64 {
        self.e + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }

    /// Partial derivatives of `loss(n, d)` with respect to (E, A, alpha, B, beta).
    pub(crate) fn loss_gradient(&self, n: f64, d: f64) -> [f64; 5] {
        let n_term = n.powf(-self.alpha);
        let d_term = d.powf(-self.beta);
        [
            1.0,
            n_term,
            -self.a * n_term * n.ln(),
            d_term,
            -self.b * d_term * d.ln(),
        ]
    }
}

/// A training configuration: total parameters, unique tokens, and epochs
/// (`epochs = 1 + R_D`). Epochs are real-valued so fractional passes from
/// public run tables are representable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub n_params: f64,
    pub u_tokens: f64,
    pub epochs: f64,
}

impl RunPoint {
    pub fn new(n_params: f64, u_tokens: f64, epochs: f64) -> Result<Self> {
        let p = Self { n_params, u_tokens, epochs };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 1.0;
        if !(ok(self.n_params) && ok(self.u_tokens) && ok(self.epochs)) {
            return Err(Error::InvalidPoint(format!(
                "need n_params, u_tokens, epochs >= 1 (got {}, {}, {})",
                self.n_params, self.u_tokens, self.epochs
            )));
        }
        Ok(())
    }

    /// Additional passes beyond the first.
    #[inline]
    pub fn repetitions(&self) -> f64 {
        self.epochs - 1.0
    }

    #[inline]
    pub fn is_single_epoch(&self) -> bool {
        self.epochs <= 1.0
    }

    #[inline]
    pub fn total_tokens(&self) -> f64 {
        self.u_tokens * self.epochs
    }
}

/// Identifies a law family without its fitted values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    Chinchilla,
    ExpDecay,
    EffParam,
    Add1,
    Add2,
    Add4,
}

impl LawKind {
    pub const ALL: [LawKind; 6] = [
        LawKind::Chinchilla,
        LawKind::ExpDecay,
        LawKind::EffParam,
        LawKind::Add1,
        LawKind::Add2,
        LawKind::Add4,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LawKind::Chinchilla => "chinchilla",
            LawKind::ExpDecay => "exp-decay",
            LawKind::EffParam => "eff-param",
            LawKind::Add1 => "add1",
            LawKind::Add2 => "add2",
            LawKind::Add4 => "add4",
        }
    }

    /// Row label used in human-readable tables.
    pub fn label(&self) -> &'static str {
        match self {
            LawKind::Chinchilla => "Chinchilla",
            LawKind::ExpDecay => "Exp. Decay (D^)",
            LawKind::EffParam => "Eff. Param. (D^, N^)",
            LawKind::Add1 => "Add. Penalty (1p)",
            LawKind::Add2 => "Add. Penalty (2p)",
            LawKind::Add4 => "Add. Penalty (4p)",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LawKind::Chinchilla => &[],
            LawKind::ExpDecay => &["r_star_d"],
            LawKind::EffParam => &["r_star_d", "r_star_n"],
            LawKind::Add1 => &["p"],
            LawKind::Add2 => &["p", "kappa"],
            LawKind::Add4 => &["p", "delta", "kappa", "gamma"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, LawKind::Add1 | LawKind::Add2 | LawKind::Add4)
    }
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LawKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LawKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "law", name: s.to_string() })
    }
}

/// Repetition extension on top of the base law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum RepetitionLaw {
    None,
    ExpDecayData { r_star_d: f64 },
    EffectiveParam { r_star_d: f64, r_star_n: f64 },
    AddPenalty1 { p: f64 },
    AddPenalty2 { p: f64, kappa: f64 },
    AddPenalty4 { p: f64, delta: f64, kappa: f64, gamma: f64 },
}

impl RepetitionLaw {
    pub fn kind(&self) -> LawKind {
        match self {
            RepetitionLaw::None => LawKind::Chinchilla,
            RepetitionLaw::ExpDecayData { .. } => LawKind::ExpDecay,
            RepetitionLaw::EffectiveParam { .. } => LawKind::EffParam,
            RepetitionLaw::AddPenalty1 { .. } => LawKind::Add1,
            RepetitionLaw::AddPenalty2 { .. } => LawKind::Add2,
            RepetitionLaw::AddPenalty4 { .. } => LawKind::Add4,
        }
    }

    /// Parameter values in the order of [`LawKind::param_names`].
    pub fn params(&self) -> Vec<f64> {
        match *self {
            RepetitionLaw::None => vec![],
            RepetitionLaw::ExpDecayData { r_star_d } => vec![r_star_d],
            RepetitionLaw::EffectiveParam { r_star_d, r_star_n } => vec![r_star_d, r_star_n],
            RepetitionLaw::AddPenalty1 { p } => vec![p],
            RepetitionLaw::AddPenalty2 { p, kappa } => vec![p, kappa],
            RepetitionLaw::AddPenalty4 { p, delta, kappa, gamma } => vec![p, delta, kappa, gamma],
        }
    }

    pub fn from_params(kind: LawKind, v: &[f64]) -> Result<Self> {
        if v.len() != kind.n_params() {
            return Err(Error::InvalidParams(format!(
                "{kind} takes {} parameters, got {}",
                kind.n_params(),
                v.len()
            )));
        }
        let law = match kind {
            LawKind::Chinchilla => RepetitionLaw::None,
            LawKind::ExpDecay => RepetitionLaw::ExpDecayData { r_star_d: v[0] },
            LawKind::EffParam => RepetitionLaw::EffectiveParam { r_star_d: v[0], r_star_n: v[1] },
            LawKind::Add1 => RepetitionLaw::AddPenalty1 { p: v[0] },
            LawKind::Add2 => RepetitionLaw::AddPenalty2 { p: v[0], kappa: v[1] },
            LawKind::Add4 => {
                RepetitionLaw::AddPenalty4 { p: v[0], delta: v[1], kappa: v[2], gamma: v[3] }
            }
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite parameter in {self:?}")));
        }
        let ok = match *self {
            RepetitionLaw::None => true,
            RepetitionLaw::ExpDecayData { r_star_d } => r_star_d > 0.0,
            RepetitionLaw::EffectiveParam { r_star_d, r_star_n } => r_star_d > 0.0 && r_star_n > 0.0,
            RepetitionLaw::AddPenalty1 { p } => p >= 0.0,
            RepetitionLaw::AddPenalty2 { p, kappa } => p >= 0.0 && kappa > 0.0,
            RepetitionLaw::AddPenalty4 { p, delta, kappa, gamma } => {
                p >= 0.0 && delta > 0.0 && kappa > 0.0 && gamma > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("out-of-range parameter in {self:?}")))
        }
    }

    /// The additive overfitting term; zero for the non-additive variants.
    pub fn penalty(&self, pt: &RunPoint) -> f64 {
        let r = pt.repetitions();
        if r <= 0.0 {
            return 0.0;
        }
        let (n, u) = (pt.n_params, pt.u_tokens);
        match *self {
            RepetitionLaw::AddPenalty1 { p } => p * r * n / u,
            RepetitionLaw::AddPenalty2 { p, kappa } => p * r * (n / u).powf(kappa),
            RepetitionLaw::AddPenalty4 { p, delta, kappa, gamma } => {
                p * r.powf(delta) * (n / u.powf(gamma)).powf(kappa)
            }
            _ => 0.0,
        }
    }
}

/// A base law plus its repetition extension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawSpec {
    pub base: ChinchillaParams,
    pub rep: RepetitionLaw,
}

impl LawSpec {
    pub fn new(base: ChinchillaParams, rep: RepetitionLaw) -> Result<Self> {
        base.validate()?;
        rep.validate()?;
        Ok(Self { base, rep })
    }

    pub fn chinchilla(base: ChinchillaParams) -> Self {
        Self { base, rep: RepetitionLaw::None }
    }

    pub fn kind(&self) -> LawKind {
        self.rep.kind()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.rep.validate()
    }

    /// Predicted loss without finiteness checks; used on hot paths.
    pub(crate) fn predict(&self, pt: &RunPoint) -> f64 {
        let base = &self.base;
        match self.rep {
            RepetitionLaw::ExpDecayData { r_star_d } => {
                let d_hat = effective_data(pt.u_tokens, pt.repetitions(), r_star_d);
                base.loss(pt.n_params, d_hat)
            }
            RepetitionLaw::EffectiveParam { r_star_d, r_star_n } => {
                let d_hat = effective_data(pt.u_tokens, pt.repetitions(), r_star_d);
                let n_hat = effective_params(pt.n_params, pt.u_tokens, base, r_star_n);
                base.loss(n_hat, d_hat)
            }
            rep => base.loss(pt.n_params, pt.total_tokens()) + rep.penalty(pt),
        }
    }

    /// Partial derivatives of the prediction with respect to the repetition
    /// parameters (raw, untransformed), in [`LawKind::param_names`] order.
    pub(crate) fn rep_gradient(&self, pt: &RunPoint) -> Vec<f64> {
        let base = &self.base;
        let r = pt.repetitions();
        let (n, u) = (pt.n_params, pt.u_tokens);
        match self.rep {
            RepetitionLaw::None => vec![],
            RepetitionLaw::ExpDecayData { r_star_d } => {
                let d_hat = effective_data(u, r, r_star_d);
                let dd = u * saturation_scale_derivative(r, r_star_d);
                vec![-base.beta * base.b * d_hat.powf(-base.beta - 1.0) * dd]
            }
            RepetitionLaw::EffectiveParam { r_star_d, r_star_n } => {
                let d_hat = effective_data(u, r, r_star_d);
                let dd = u * saturation_scale_derivative(r, r_star_d);
                let n_opt = chinchilla_n_opt(base, u);
                let (u_n, r_n) = param_repetition(n, n_opt);
                let n_hat = saturate(u_n, r_n, r_star_n);
                let dn = u_n * saturation_scale_derivative(r_n, r_star_n);
                vec![
                    -base.beta * base.b * d_hat.powf(-base.beta - 1.0) * dd,
                    -base.alpha * base.a * n_hat.powf(-base.alpha - 1.0) * dn,
                ]
            }
            RepetitionLaw::AddPenalty1 { .. } => {
                if r <= 0.0 {
                    vec![0.0]
                } else {
                    vec![r * n / u]
                }
            }
            RepetitionLaw::AddPenalty2 { p, kappa } => {
                if r <= 0.0 {
                    return vec![0.0, 0.0];
                }
                let ratio = n / u;
                let unit = r * ratio.powf(kappa);
                vec![unit, p * unit * ratio.ln()]
            }
            RepetitionLaw::AddPenalty4 { p, delta, kappa, gamma } => {
                if r <= 0.0 {
                    return vec![0.0; 4];
                }
                let ratio = n / u.powf(gamma);
                let unit = r.powf(delta) * ratio.powf(kappa);
                let pen = p * unit;
                vec![unit, pen * r.ln(), pen * ratio.ln(), -pen * kappa * u.ln()]
            }
        }
    }

    /// Partial derivatives of the prediction with respect to the five base
    /// constants. Only meaningful for the plain and additive laws, whose
    /// base term is evaluated at `(N, U_D * epochs)`.
    pub(crate) fn base_gradient(&self, pt: &RunPoint) -> [f64; 5] {
        self.base.loss_gradient(pt.n_params, pt.total_tokens())
    }
}

/// `E + A/n^alpha + B/d^beta`.
pub fn eval_chinchilla(params: &ChinchillaParams, n: f64, d: f64) -> Result<f64> {
    let v = params.loss(n, d);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("Chinchilla loss at n={n}, d={d}")))
    }
}

/// `r_star * (1 - exp(-r / r_star))`, evaluated without cancellation.
#[inline]
fn saturating_gain(r: f64, r_star: f64) -> f64 {
    -r_star * (-r / r_star).exp_m1()
}

#[inline]
fn saturate(unique: f64, r: f64, r_star: f64) -> f64 {
    unique + unique * saturating_gain(r, r_star)
}

/// d/d(r_star) of `r_star * (1 - exp(-r/r_star))`.
#[inline]
fn saturation_scale_derivative(r: f64, r_star: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let x = r / r_star;
    -(-x).exp_m1() - x * (-x).exp()
}

/// Effective token count under repetition, saturating at `U_D * (1 + R*_D)`.
pub fn effective_data(u_tokens: f64, r_d: f64, r_star_d: f64) -> f64 {
    saturate(u_tokens, r_d, r_star_d)
}

/// Model size at which `(N, U_D)` is Chinchilla compute-optimal:
/// `(alpha * A * U_D^beta / (beta * B))^(1/alpha)`.
pub fn chinchilla_n_opt(base: &ChinchillaParams, u_tokens: f64) -> f64 {
    // Work in logs so large U_D^beta / alpha ratios do not overflow.
    let ln = (base.alpha * base.a).ln() + base.beta * u_tokens.ln() - (base.beta * base.b).ln();
    (ln / base.alpha).exp()
}

/// `(U_N, R_N)` with `U_N = min(N_opt, N)` and `R_N = N/U_N - 1` (zero when
/// `N <= N_opt`).
fn param_repetition(n: f64, n_opt: f64) -> (f64, f64) {
    if n > n_opt {
        (n_opt, n / n_opt - 1.0)
    } else {
        (n, 0.0)
    }
}

/// Effective parameter count; equals `n` whenever `n <= N_opt(U_D)`.
pub fn effective_params(n: f64, u_tokens: f64, base: &ChinchillaParams, r_star_n: f64) -> f64 {
    let n_opt = chinchilla_n_opt(base, u_tokens);
    let (u_n, r_n) = param_repetition(n, n_opt);
    if r_n == 0.0 {
        return n;
    }
    saturate(u_n, r_n, r_star_n)
}

/// Predicted final validation loss (nats) for a run under `spec`.
pub fn eval_law(spec: &LawSpec, pt: &RunPoint) -> Result<f64> {
    let v = spec.predict(pt);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{} loss at {pt:?}", spec.kind())))
    }
}

/// Training FLOPs, `6 * N * U_D * epochs`.
pub fn train_flops(n: f64, u_tokens: f64, epochs: f64) -> f64 {
    6.0 * n * u_tokens * epochs
}
