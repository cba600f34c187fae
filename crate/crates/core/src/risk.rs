//! Coherent risk measures: expectation, CVaR and EVaR.
//!
//! All measures are evaluated through their variational forms:
//!
//! * CVaR_ε(v) = min_ζ ζ + (1/ε) E[(v − ζ)+], minimized exactly over the
//!   support points (the objective is piecewise linear with breakpoints there).
//! * EVaR_ε(v) = inf_{ζ>0} (log E[e^{ζv}] − log ε)/ζ, minimized by golden-section
//!   search on `log(ζ·range(v))`.
//!
//! Risk is measured on costs, so larger values are worse and ε → 0 approaches
//! the worst case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PROB_TOL;

/// Ranges below this are treated as a constant random variable.
const DEGENERATE_RANGE: f64 = 1e-12;
/// Lower end of the dimensionless EVaR search interval.
const EVAR_X_MIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("confidence level {0} is outside (0, 1]")]
    InvalidEpsilon(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("value vector contains a non-finite entry")]
    NonFiniteValue,
    #[error("value and probability vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    EmptySamples,
    #[error("unknown risk measure kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub enum RiskMeasure {
    Expectation,
    Cvar { epsilon: f64 },
    Evar { epsilon: f64 },
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    kind: String,
    #[serde(default)]
    epsilon: Option<f64>,
}

impl TryFrom<RawMeasure> for RiskMeasure {
    type Error = RiskError;

    fn try_from(raw: RawMeasure) -> Result<Self, RiskError> {
        RiskMeasure::parse(&raw.kind, raw.epsilon.unwrap_or(1.0))
    }
}

impl From<RiskMeasure> for RawMeasure {
    fn from(m: RiskMeasure) -> Self {
        RawMeasure { kind: m.kind().to_string(), epsilon: Some(m.epsilon()) }
    }
}

impl RiskMeasure {
    pub fn cvar(epsilon: f64) -> Result<Self, RiskError> {
        check_epsilon(epsilon)?;
        Ok(RiskMeasure::Cvar { epsilon })
    }

    pub fn evar(epsilon: f64) -> Result<Self, RiskError> {
        check_epsilon(epsilon)?;
        Ok(RiskMeasure::Evar { epsilon })
    }

    /// Builds a measure from its kind name (`expectation`, `cvar`, `evar`).
    pub fn parse(kind: &str, epsilon: f64) -> Result<Self, RiskError> {
        match kind.to_ascii_lowercase().as_str() {
            "expectation" | "expected" | "mean" => Ok(RiskMeasure::Expectation),
            "cvar" => Self::cvar(epsilon),
            "evar" => Self::evar(epsilon),
            other => Err(RiskError::UnknownKind(other.to_string())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RiskMeasure::Expectation => "expectation",
            RiskMeasure::Cvar { .. } => "cvar",
            RiskMeasure::Evar { .. } => "evar",
        }
    }

    /// Confidence level; 1 for the expectation.
    pub fn epsilon(&self) -> f64 {
        match *self {
            RiskMeasure::Expectation => 1.0,
            RiskMeasure::Cvar { epsilon } | RiskMeasure::Evar { epsilon } => epsilon,
        }
    }

    /// Same measure family at a different confidence level.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, RiskError> {
        match self {
            RiskMeasure::Expectation => Ok(RiskMeasure::Expectation),
            RiskMeasure::Cvar { .. } => Self::cvar(epsilon),
            RiskMeasure::Evar { .. } => Self::evar(epsilon),
        }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        match *self {
            RiskMeasure::Expectation => Ok(()),
            RiskMeasure::Cvar { epsilon } | RiskMeasure::Evar { epsilon } => check_epsilon(epsilon),
        }
    }

    /// Risk of a finite distribution given as `(value, probability)` pairs.
    ///
    /// Probabilities must be nonnegative and sum to 1 within `1e-9`; they are
    /// renormalized before use.
    pub fn evaluate(&self, outcomes: &[(f64, f64)], params: &InnerSolveParams) -> Result<RiskEval, RiskError> {
        self.validate()?;
        let support = normalized_support(outcomes, true)?;
        Ok(self.evaluate_support(&support, params))
    }

    /// Evaluation on a support whose mass is already known to be ~1 (rows of
    /// validated kernels and their products); it is renormalized silently.
    pub(crate) fn evaluate_unchecked(&self, outcomes: &[(f64, f64)], params: &InnerSolveParams) -> Result<RiskEval, RiskError> {
        if let RiskMeasure::Expectation = self {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for &(v, p) in outcomes {
                acc += v * p;
                mass += p;
            }
            if !acc.is_finite() {
                return Err(RiskError::NonFiniteValue);
            }
            return Ok(RiskEval::plain(acc / mass));
        }
        let support = normalized_support(outcomes, false)?;
        Ok(self.evaluate_support(&support, params))
    }

    fn evaluate_support(&self, support: &[(f64, f64)], params: &InnerSolveParams) -> RiskEval {
        match *self {
            RiskMeasure::Expectation => RiskEval::plain(expectation(support)),
            RiskMeasure::Cvar { epsilon } => cvar(support, epsilon),
            RiskMeasure::Evar { epsilon } => evar(support, epsilon, params),
        }
    }
}

impl std::fmt::Display for RiskMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskMeasure::Expectation => write!(f, "expectation"),
            RiskMeasure::Cvar { epsilon } => write!(f, "cvar(eps={epsilon})"),
            RiskMeasure::Evar { epsilon } => write!(f, "evar(eps={epsilon})"),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), RiskError> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidEpsilon(epsilon))
    }
}

/// Controls for the one-dimensional EVaR search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolveParams {
    /// Cap on the dimensionless product `ζ · range(v)`.
    pub zeta_max: f64,
    /// Width of the final search bracket in log space.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InnerSolveParams {
    fn default() -> Self {
        InnerSolveParams { zeta_max: 1e6, tol: 1e-10, max_iters: 200 }
    }
}

/// Result of a risk evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEval {
    pub value: f64,
    /// Minimizing auxiliary variable, in the units of the variational form.
    pub zeta: Option<f64>,
    /// The EVaR search stopped at the `zeta_max` cap.
    pub cap_active: bool,
}

impl RiskEval {
    fn plain(value: f64) -> Self {
        RiskEval { value, zeta: None, cap_active: false }
    }
}

/// `σ(v, p)` over a dense value vector and a probability vector of equal length.
pub fn sigma(measure: &RiskMeasure, values: &[f64], dist: &[f64], params: &InnerSolveParams) -> Result<f64, RiskError> {
    sigma_eval(measure, values, dist, params).map(|e| e.value)
}

/// Like [`sigma`], also returning the minimizer and cap flag.
pub fn sigma_eval(
    measure: &RiskMeasure,
    values: &[f64],
    dist: &[f64],
    params: &InnerSolveParams,
) -> Result<RiskEval, RiskError> {
    if values.len() != dist.len() {
        return Err(RiskError::LengthMismatch(values.len(), dist.len()));
    }
    let pairs: Vec<(f64, f64)> = values.iter().copied().zip(dist.iter().copied()).collect();
    measure.evaluate(&pairs, params)
}

/// Risk of an empirical sample, each sample weighted `1/n`.
pub fn static_risk(measure: &RiskMeasure, samples: &[f64], params: &InnerSolveParams) -> Result<f64, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    let w = 1.0 / samples.len() as f64;
    let pairs: Vec<(f64, f64)> = samples.iter().map(|&v| (v, w)).collect();
    measure.evaluate(&pairs, params).map(|e| e.value)
}

fn normalized_support(outcomes: &[(f64, f64)], strict: bool) -> Result<Vec<(f64, f64)>, RiskError> {
    if outcomes.is_empty() {
        return Err(RiskError::InvalidDistribution("empty distribution".into()));
    }
    let mut total = 0.0;
    for &(v, p) in outcomes {
        if !(p.is_finite() && p >= 0.0) {
            return Err(RiskError::InvalidDistribution(format!("probability {p}")));
        }
        if p > 0.0 && !v.is_finite() {
            return Err(RiskError::NonFiniteValue);
        }
        total += p;
    }
    if (strict && (total - 1.0).abs() > PROB_TOL) || !(total > 0.0) {
        return Err(RiskError::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    Ok(outcomes
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(v, p)| (v, p / total))
        .collect())
}

fn expectation(support: &[(f64, f64)]) -> f64 {
    support.iter().map(|(v, p)| v * p).sum()
}

fn bounds(support: &[(f64, f64)]) -> (f64, f64) {
    support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(v, _)| (lo.min(v), hi.max(v)))
}

fn cvar(support: &[(f64, f64)], epsilon: f64) -> RiskEval {
    let mut sorted = support.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (sorted[0].0, sorted[sorted.len() - 1].0);

    // suffix sums over strictly later entries; tied values contribute zero
    let mut best = f64::INFINITY;
    let mut best_zeta = hi;
    let mut tail_mass = 0.0;
    let mut tail_moment = 0.0;
    for k in (0..sorted.len()).rev() {
        let zeta = sorted[k].0;
        let f = zeta + (tail_moment - zeta * tail_mass).max(0.0) / epsilon;
        if f <= best {
            best = f;
            best_zeta = zeta;
        }
        tail_mass += sorted[k].1;
        tail_moment += sorted[k].1 * sorted[k].0;
    }
    RiskEval { value: best.clamp(lo, hi), zeta: Some(best_zeta), cap_active: false }
}

/// `log E[exp(x·w)]` for `w ∈ [-1, 0]` with `max w = 0`.
fn log_mgf(shifted: &[(f64, f64)], x: f64) -> f64 {
    if x < 1.0 {
        let s: f64 = shifted.iter().map(|&(w, p)| p * (x * w).exp_m1()).sum();
        s.ln_1p()
    } else {
        shifted.iter().map(|&(w, p)| p * (x * w).exp()).sum::<f64>().ln()
    }
}

fn evar(support: &[(f64, f64)], epsilon: f64, params: &InnerSolveParams) -> RiskEval {
    let (lo, hi) = bounds(support);
    let range = hi - lo;
    if range < DEGENERATE_RANGE {
        return RiskEval::plain(hi);
    }
    if epsilon >= 1.0 {
        return RiskEval::plain(expectation(support).clamp(lo, hi));
    }
    let shifted: Vec<(f64, f64)> = support.iter().map(|&(v, p)| ((v - hi) / range, p)).collect();
    let log_eps = epsilon.ln();
    // objective in units of range, relative to the maximum
    let f = |u: f64| {
        let x = u.exp();
        (log_mgf(&shifted, x) - log_eps) / x
    };

    let x_max = params.zeta_max.max(EVAR_X_MIN * 10.0);
    let (mut a, mut b) = (EVAR_X_MIN.ln(), x_max.ln());
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = (f(b), b);
    let mut upper_moved = false;
    for (fv, u) in [(fc, c), (fd, d)] {
        if fv < best.0 {
            best = (fv, u);
        }
    }
    let mut iters = 0;
    while b - a > params.tol && iters < params.max_iters {
        if fc <= fd {
            b = d;
            upper_moved = true;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
            if fc < best.0 {
                best = (fc, c);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
            if fd < best.0 {
                best = (fd, d);
            }
        }
        iters += 1;
    }
    let value = (hi + range * best.0).clamp(lo, hi);
    RiskEval { value, zeta: Some(best.1.exp() / range), cap_active: !upper_moved }
}
