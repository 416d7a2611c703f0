//! Domain types and survival primitives: subjects, counting and at-risk
//! processes, right-continuous step curves and RMST integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which indicator marks a subject as a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventDefinition {
    /// Event observed before both censoring and the truncation time.
    #[serde(alias = "conv")]
    Conventional,
    /// Restricted time observed uncensored; survivors to tau count as events.
    #[serde(alias = "gde")]
    Generalized,
}

impl EventDefinition {
    pub fn label(self) -> &'static str {
        match self {
            EventDefinition::Conventional => "conv",
            EventDefinition::Generalized => "gde",
        }
    }
}

impl std::str::FromStr for EventDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" | "conventional" => Ok(EventDefinition::Conventional),
            "gde" | "generalized" | "generalised" => Ok(EventDefinition::Generalized),
            other => Err(Error::Config(format!("unknown event definition `{other}`"))),
        }
    }
}

/// Subcohort membership and inverse sampling weight, known once a
/// case-cohort sample has been drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingState {
    pub in_subcohort: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub covariates: Vec<f64>,
    pub exposed: bool,
    /// Observed time, `min(T0, tau, C)`.
    pub obs_time: f64,
    pub event_conventional: bool,
    pub event_generalized: bool,
    /// Zero-based stratum index.
    pub stratum: usize,
    pub sampling: Option<SamplingState>,
}

impl Subject {
    pub fn is_case(&self, definition: EventDefinition) -> bool {
        match definition {
            EventDefinition::Conventional => self.event_conventional,
            EventDefinition::Generalized => self.event_generalized,
        }
    }

    /// Case-cohort weight; subjects that were never sampled carry weight one
    /// (full-cohort analysis).
    pub fn weight(&self) -> f64 {
        self.sampling.map_or(1.0, |s| s.weight)
    }

    pub fn in_subcohort(&self) -> bool {
        self.sampling.is_some_and(|s| s.in_subcohort)
    }

    /// Checks the subject-level invariants against a truncation time.
    pub fn validate(&self, tau: f64) -> Result<()> {
        if !(self.obs_time >= 0.0) || self.obs_time > tau {
            return Err(Error::contract(format!(
                "subject {}: observation time {} outside [0, {tau}]",
                self.id, self.obs_time
            )));
        }
        if self.event_conventional && !self.event_generalized {
            return Err(Error::contract(format!(
                "subject {}: conventional event without generalized event",
                self.id
            )));
        }
        if let Some(s) = self.sampling {
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::contract(format!(
                    "subject {}: invalid weight {}",
                    self.id, s.weight
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub tau: f64,
    /// Covariate dimension.
    pub p: usize,
    /// Number of continuous covariates.
    pub k: usize,
    /// Per-stratum subcohort sampling probabilities; `alpha.len()` is the
    /// number of strata.
    pub alpha: Vec<f64>,
    pub event_definition: EventDefinition,
}

impl StudyConfig {
    pub fn n_strata(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k > self.p {
            return Err(Error::domain(format!(
                "continuous covariates ({}) exceed covariate dimension ({})",
                self.k, self.p
            )));
        }
        if self.alpha.is_empty() {
            return Err(Error::domain("at least one stratum is required"));
        }
        for (b, &a) in self.alpha.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::domain(format!(
                    "sampling probability for stratum {b} must lie in (0, 1], got {a}"
                )));
            }
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be nonnegative, got {t}")))
    }
}

/// Raw counting process `N(t) = I(T <= t)`.
pub fn raw_counting_process(subject: &Subject, t: f64) -> Result<bool> {
    check_time(t)?;
    Ok(subject.obs_time <= t)
}

/// Event counting process `I(T <= t, event = 1)`: only events contribute jumps.
pub fn counting_process(subject: &Subject, t: f64, definition: EventDefinition) -> Result<bool> {
    check_time(t)?;
    Ok(subject.obs_time <= t && subject.is_case(definition))
}

/// At-risk process `Y(t) = I(T >= t)`.
pub fn at_risk(subject: &Subject, t: f64) -> Result<bool> {
    check_time(t)?;
    Ok(subject.obs_time >= t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    CumulativeHazard,
    Survival,
}

/// Right-continuous step function stored by its jump points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    kind: CurveKind,
    times: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepCurve {
    pub fn cumulative_hazard(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let curve = StepCurve { kind: CurveKind::CumulativeHazard, times, values, initial_value: 0.0 };
        curve.check()?;
        Ok(curve)
    }

    pub fn survival(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let curve = StepCurve { kind: CurveKind::Survival, times, values, initial_value: 1.0 };
        curve.check()?;
        Ok(curve)
    }

    fn check(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::contract("step curve times and values differ in length"));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::contract("step curve times must be finite and nonnegative"));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::contract("step curve times must be strictly increasing"));
        }
        let mut prev = self.initial_value;
        for &v in &self.values {
            let ok = match self.kind {
                CurveKind::CumulativeHazard => v >= prev && v.is_finite(),
                CurveKind::Survival => v <= prev && v >= 0.0,
            };
            if !ok {
                return Err(Error::contract(format!(
                    "{:?} curve is not monotone at value {v}",
                    self.kind
                )));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at `t`, by binary search over the jump points.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => self.initial_value,
            i => self.values[i - 1],
        }
    }
}

/// Pointwise `S(t) = exp(-H(t))`.
pub fn survival_from_hazard(hazard: &StepCurve) -> Result<StepCurve> {
    if hazard.kind != CurveKind::CumulativeHazard {
        return Err(Error::contract("expected a cumulative hazard curve"));
    }
    let values = hazard.values.iter().map(|h| (-h).exp()).collect();
    StepCurve::survival(hazard.times.clone(), values)
}

/// Exact area under a survival step curve on `[0, tau]`.
pub fn rmst_from_survival(curve: &StepCurve, tau: f64) -> Result<f64> {
    if curve.kind != CurveKind::Survival {
        return Err(Error::contract("expected a survival curve"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    let mut area = 0.0;
    let mut prev_time = 0.0;
    let mut level = curve.initial_value;
    for (&t, &v) in curve.times.iter().zip(&curve.values) {
        if t >= tau {
            break;
        }
        area += level * (t - prev_time);
        prev_time = t;
        level = v;
    }
    area += level * (tau - prev_time);
    Ok(area)
}

/// Point estimate summary shared by every estimation route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub att: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rmst_treated: f64,
    pub rmst_control: f64,
    pub n_pairs: usize,
}
