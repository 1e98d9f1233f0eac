//! Closed-form regret bounds for the optimistic agent.
//!
//! All quantities are functions of the instance dimensions, the bonus
//! parameters `(alpha, mu, K)`, the analysis parameter `gamma` and the
//! instance gap. With `burn = H * ceil(K^gamma)`:
//!
//! ```text
//! m_K      = 4 H^2 (H-1)(2H-1) S A (S ln2 + 2 mu K^alpha) / (3 gap*)
//! delta_K  = S A H K exp(-2 mu K^alpha)            (KD)
//!          = S A H K exp(-2 mu K^(gamma alpha))    (KI)
//! P(R_K >= x) <= exp(-(x - burn - m_K)_+^2 / (2 H^3 K)) + delta_K
//! E[R_K]   <= m_K + burn + 2 H^2 (K - ceil(K^gamma)) delta_K
//! n_bar_h  = (2 S ln2 + 4 mu K^alpha) (2 H (H-h-1))^2 / gap*^2
//! ```
//!
//! An infinite gap (every action optimal) sets `m_K = 0` and leaves
//! `n_bar_h` undefined.

use serde::{Deserialize, Serialize};

use crate::agent::{pow_exact, BonusSchedule};
use crate::error::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "K")]
    pub episodes: u64,
    pub alpha: f64,
    pub mu: f64,
    pub gamma: f64,
    /// `f64::INFINITY` encodes the degenerate all-optimal case.
    #[serde(with = "gap_serde")]
    pub gap_star: f64,
    pub schedule: BonusSchedule,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 || self.episodes == 0 {
            return Err(Error::Domain("S, A, H and K must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma = {} is outside [0, 1]", self.gamma)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Domain(format!("mu = {} must be positive", self.mu)));
        }
        check_gap(self.gap_star)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    fn k_pow_alpha(&self) -> f64 {
        pow_exact(self.episodes as f64, self.alpha)
    }

    /// `ceil(K^gamma)`.
    pub fn burn_in_episodes(&self) -> u64 {
        ceil_pow(self.episodes, self.gamma)
    }

    /// `H * ceil(K^gamma)`.
    pub fn burn_in_regret(&self) -> f64 {
        self.horizon as f64 * self.burn_in_episodes() as f64
    }
}

fn check_gap(gap: f64) -> Result<()> {
    if gap > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("gap* = {gap} must be positive (or the infinite sentinel)")))
    }
}

/// `ceil(K^gamma)`, exact at `gamma` in {0, 1}.
///
/// A relative guard of 1e-12 is subtracted before rounding up so that a
/// power landing a few ulps above an integer does not round to the next one.
pub fn ceil_pow(k: u64, gamma: f64) -> u64 {
    if gamma == 0.0 {
        return 1;
    }
    if gamma == 1.0 {
        return k;
    }
    let v = (k as f64).powf(gamma);
    ((v - 1e-12 * v.max(1.0)).ceil() as u64).max(1)
}

/// Baseline regret scale `m_K`; zero for the infinite-gap sentinel.
pub fn compute_m_k(inputs: &BoundInputs) -> Result<f64> {
    check_gap(inputs.gap_star)?;
    if inputs.gap_star.is_infinite() {
        return Ok(0.0);
    }
    let h = inputs.horizon as f64;
    let (s, a) = (inputs.num_states as f64, inputs.num_actions as f64);
    let budget = s * LN_2 + 2.0 * inputs.mu * inputs.k_pow_alpha();
    Ok(4.0 * h * h * (h - 1.0) * (2.0 * h - 1.0) * s * a * budget / (3.0 * inputs.gap_star))
}

/// Failure mass `delta_K` of the good event (unclipped).
pub fn compute_delta_k(inputs: &BoundInputs) -> f64 {
    let exponent = match inputs.schedule {
        BonusSchedule::KD => inputs.k_pow_alpha(),
        BonusSchedule::KI => pow_exact(inputs.episodes as f64, inputs.gamma * inputs.alpha),
    };
    let sah = (inputs.num_states * inputs.num_actions * inputs.horizon) as f64;
    sah * inputs.episodes as f64 * (-2.0 * inputs.mu * exponent).exp()
}

/// Visit threshold `n_bar_h`.
pub fn compute_n_bar(inputs: &BoundInputs, h: usize) -> Result<f64> {
    if h >= inputs.horizon {
        return Err(Error::Domain(format!("stage {h} is outside 0..{}", inputs.horizon)));
    }
    check_gap(inputs.gap_star)?;
    if inputs.gap_star.is_infinite() {
        return Err(Error::DegenerateGap);
    }
    let s = inputs.num_states as f64;
    let scale = 2.0 * inputs.horizon as f64 * (inputs.horizon - h - 1) as f64;
    Ok((2.0 * s * LN_2 + 4.0 * inputs.mu * inputs.k_pow_alpha()) * scale * scale
        / (inputs.gap_star * inputs.gap_star))
}

/// A tail bound before and after clipping to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailValue {
    pub raw: f64,
    pub clipped: f64,
}

/// Tail bound assembled from precomputed pieces.
pub fn tail_from_parts(x: f64, burn_in_regret: f64, m_k: f64, delta_k: f64, horizon: usize, episodes: u64) -> TailValue {
    let excess = (x - burn_in_regret - m_k).max(0.0);
    let h = horizon as f64;
    let raw = (-excess * excess / (2.0 * h * h * h * episodes as f64)).exp() + delta_k;
    TailValue {
        raw,
        clipped: raw.min(1.0),
    }
}

/// Upper bound on `P(R_K >= x)` at the inputs' `gamma`.
pub fn tail_bound(inputs: &BoundInputs, x: f64) -> Result<TailValue> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("tail threshold x = {x} must be non-negative")));
    }
    Ok(tail_from_parts(
        x,
        inputs.burn_in_regret(),
        compute_m_k(inputs)?,
        compute_delta_k(inputs),
        inputs.horizon,
        inputs.episodes,
    ))
}

/// Expected-regret bound assembled from precomputed pieces.
pub fn expectation_from_parts(m_k: f64, horizon: usize, episodes: u64, burn_in_episodes: u64, delta_k: f64) -> f64 {
    let h = horizon as f64;
    m_k + h * burn_in_episodes as f64 + 2.0 * h * h * (episodes - burn_in_episodes) as f64 * delta_k
}

/// Upper bound on `E[R_K]`.
pub fn expectation_bound(inputs: &BoundInputs) -> Result<f64> {
    Ok(expectation_from_parts(
        compute_m_k(inputs)?,
        inputs.horizon,
        inputs.episodes,
        inputs.burn_in_episodes(),
        compute_delta_k(inputs),
    ))
}

/// Per-threshold burn-in exponent `clamp(log_K(x / 2H), 0, 1)`.
pub fn threshold_gamma(episodes: u64, horizon: usize, x: f64) -> f64 {
    let ratio = x / (2.0 * horizon as f64);
    if episodes <= 1 || !(ratio > 1.0) {
        return 0.0;
    }
    (ratio.ln() / (episodes as f64).ln()).clamp(0.0, 1.0)
}

/// Tail bound with `gamma` chosen per threshold (used for `KI` curves).
pub fn tail_bound_adaptive(inputs: &BoundInputs, x: f64) -> Result<(f64, TailValue)> {
    let gamma = threshold_gamma(inputs.episodes, inputs.horizon, x);
    Ok((gamma, tail_bound(&inputs.with_gamma(gamma), x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    BelowBaseline,
    SubGaussian,
    SubWeibull,
}

/// Which tail regime a threshold falls in.
///
/// Both boundaries are the leading terms with logarithmic factors dropped, so
/// they locate the transition only up to constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeClassification {
    pub regime: Regime,
    pub sub_gaussian_lo: f64,
    pub regime_threshold: f64,
    /// The burn-in exponent `KI` would pick at this threshold.
    pub gamma_x: Option<f64>,
}

/// Lower end of the sub-Gaussian range, `H^4 S A (S + K^alpha) / gap*`.
pub fn sub_gaussian_lo(inputs: &BoundInputs) -> f64 {
    if !inputs.gap_star.is_finite() {
        return 0.0;
    }
    let h = inputs.horizon as f64;
    let (s, a) = (inputs.num_states as f64, inputs.num_actions as f64);
    h.powi(4) * s * a * (s + inputs.k_pow_alpha()) / inputs.gap_star
}

/// Threshold above which the tail turns sub-Weibull.
pub fn regime_threshold(inputs: &BoundInputs) -> f64 {
    let h = inputs.horizon as f64;
    let k = inputs.episodes as f64;
    match inputs.schedule {
        BonusSchedule::KD => h.powf(1.5) * pow_exact(k, (1.0 + inputs.alpha) / 2.0),
        BonusSchedule::KI => {
            let denom = 2.0 - inputs.alpha;
            h.powf(3.0 / denom) * k.powf(1.0 / denom)
        }
    }
}

pub fn classify_regimes(inputs: &BoundInputs, x: f64) -> RegimeClassification {
    let lo = sub_gaussian_lo(inputs);
    let threshold = regime_threshold(inputs);
    let regime = if x > threshold {
        Regime::SubWeibull
    } else if x >= lo {
        Regime::SubGaussian
    } else {
        Regime::BelowBaseline
    };
    let gamma_x = match inputs.schedule {
        BonusSchedule::KD => None,
        BonusSchedule::KI => Some(threshold_gamma(inputs.episodes, inputs.horizon, x)),
    };
    RegimeClassification {
        regime,
        sub_gaussian_lo: lo,
        regime_threshold: threshold,
        gamma_x,
    }
}

/// Every closed-form quantity for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub m_k: f64,
    pub delta_k: f64,
    pub burn_in_episodes: u64,
    /// `H * ceil(K^gamma)`.
    pub burn_in: f64,
    /// `None` when the gap is infinite.
    pub n_bar: Option<Vec<f64>>,
    pub expectation_bound: f64,
    pub regime_threshold: f64,
    pub sub_gaussian_lo: f64,
}

impl BoundReport {
    pub fn compute(inputs: &BoundInputs) -> Result<Self> {
        inputs.validate()?;
        let n_bar = if inputs.gap_star.is_finite() {
            Some(
                (0..inputs.horizon)
                    .map(|h| compute_n_bar(inputs, h))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            inputs: *inputs,
            m_k: compute_m_k(inputs)?,
            delta_k: compute_delta_k(inputs),
            burn_in_episodes: inputs.burn_in_episodes(),
            burn_in: inputs.burn_in_regret(),
            n_bar,
            expectation_bound: expectation_bound(inputs)?,
            regime_threshold: regime_threshold(inputs),
            sub_gaussian_lo: sub_gaussian_lo(inputs),
        })
    }

    /// Tail bound at `x` with the report's `gamma`.
    pub fn tail(&self, x: f64) -> TailValue {
        tail_from_parts(
            x.max(0.0),
            self.burn_in,
            self.m_k,
            self.delta_k,
            self.inputs.horizon,
            self.inputs.episodes,
        )
    }

    /// Flat `key = value` lines for terminal output.
    pub fn to_table(&self) -> String {
        let i = &self.inputs;
        let mut rows: Vec<(String, String)> = vec![
            ("S".into(), i.num_states.to_string()),
            ("A".into(), i.num_actions.to_string()),
            ("H".into(), i.horizon.to_string()),
            ("K".into(), i.episodes.to_string()),
            ("schedule".into(), format!("{:?}", i.schedule)),
            ("alpha".into(), i.alpha.to_string()),
            ("mu".into(), i.mu.to_string()),
            ("gamma".into(), i.gamma.to_string()),
            ("gap_star".into(), fmt_gap(i.gap_star)),
            ("m_K".into(), format!("{:.6e}", self.m_k)),
            ("delta_K".into(), format!("{:.6e}", self.delta_k)),
            ("burn_in_episodes".into(), self.burn_in_episodes.to_string()),
            ("burn_in".into(), format!("{:.6e}", self.burn_in)),
            ("expectation_bound".into(), format!("{:.6e}", self.expectation_bound)),
            ("sub_gaussian_lo".into(), format!("{:.6e}", self.sub_gaussian_lo)),
            ("regime_threshold".into(), format!("{:.6e}", self.regime_threshold)),
        ];
        match &self.n_bar {
            Some(n_bar) => {
                for (h, v) in n_bar.iter().enumerate() {
                    rows.push((format!("n_bar[{h}]"), format!("{v:.6e}")));
                }
            }
            None => rows.push(("n_bar".into(), "unavailable (infinite gap)".into())),
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

fn fmt_gap(gap: f64) -> String {
    if gap.is_infinite() {
        "inf".into()
    } else {
        gap.to_string()
    }
}

/// JSON has no infinity; the sentinel travels as `null`.
mod gap_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(gap: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if gap.is_finite() {
            ser.serialize_some(gap)
        } else {
            ser.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(de)?.unwrap_or(f64::INFINITY))
    }
}
