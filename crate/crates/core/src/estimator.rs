//! Weighted Nelson-Aalen hazards for both arms of the matched sample, the
//! RMST difference, and the bootstrap over matched pairs.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::DistanceKind;
use crate::propensity::{fit_phi, AlphaConvention, PhiFunction, PhiPredictor};
use crate::rng;
use crate::stats;
use crate::survival::{rmst_from_survival, survival_from_hazard, AttEstimate, StepCurve};

/// Normal quantile used for 95% intervals.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PsTemplate,
    PsPlain,
    CovarTemplate,
    CovarPlain,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PsTemplate, Method::PsPlain, Method::CovarTemplate, Method::CovarPlain];

    pub fn label(self) -> &'static str {
        match self {
            Method::PsTemplate => "ps_template",
            Method::PsPlain => "ps_plain",
            Method::CovarTemplate => "covar_template",
            Method::CovarPlain => "covar_plain",
        }
    }

    pub fn distance(self) -> DistanceKind {
        match self {
            Method::PsTemplate | Method::PsPlain => DistanceKind::PropensityEuclidean,
            Method::CovarTemplate | Method::CovarPlain => DistanceKind::Mahalanobis,
        }
    }

    pub fn uses_template(self) -> bool {
        matches!(self, Method::PsTemplate | Method::CovarTemplate)
    }

    pub fn phi_predictor(self) -> PhiPredictor {
        match self.distance() {
            DistanceKind::PropensityEuclidean => PhiPredictor::Propensity,
            DistanceKind::Mahalanobis => PhiPredictor::Covariates,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One arm of a matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub time: f64,
    pub event: bool,
    /// Case-cohort weight.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub treated: ArmRecord,
    pub control: ArmRecord,
    /// Where the control's event model is evaluated.
    pub phi_predictor: Vec<f64>,
    pub control_stratum: usize,
}

/// Inputs for refitting the event model on any set of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSettings {
    pub alpha: Vec<f64>,
    pub pooled_alpha: f64,
    pub convention: AlphaConvention,
}

pub fn fit_pair_phi(pairs: &[PairRecord], settings: &PhiSettings) -> Result<PhiFunction> {
    let events: Vec<bool> = pairs.iter().map(|p| p.control.event).collect();
    let predictors: Vec<Vec<f64>> = pairs.iter().map(|p| p.phi_predictor.clone()).collect();
    fit_phi(&events, &predictors, &settings.alpha, settings.pooled_alpha, settings.convention)
}

pub fn phi_values(pairs: &[PairRecord], phi: &PhiFunction) -> Vec<f64> {
    pairs.iter().map(|p| phi.eval(&p.phi_predictor, p.control_stratum)).collect()
}

/// `H(t) = sum_{event times u <= min(t, tau)} [sum_{events at u} a_i] /
/// [sum_i I(T_i >= u) b_i]`.
pub fn weighted_nelson_aalen(times: &[f64], events: &[bool], num: &[f64], den: &[f64], tau: f64) -> Result<StepCurve> {
    let n = times.len();
    if events.len() != n || num.len() != n || den.len() != n {
        return Err(Error::contract("hazard inputs differ in length"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    // at-risk weight from position k onward
    let mut at_risk = vec![0.0; n + 1];
    for k in (0..n).rev() {
        at_risk[k] = at_risk[k + 1] + den[order[k]];
    }
    let mut out_t = Vec::new();
    let mut out_v = Vec::new();
    let mut h = 0.0;
    let mut k = 0;
    while k < n {
        let u = times[order[k]];
        if u > tau {
            break;
        }
        let mut end = k;
        let mut d = 0.0;
        let mut any = false;
        while end < n && times[order[end]] == u {
            if events[order[end]] {
                d += num[order[end]];
                any = true;
            }
            end += 1;
        }
        if any {
            let r = at_risk[k];
            if !(r > 0.0) {
                return Err(Error::ZeroRiskSet { time: u });
            }
            h += d / r;
            out_t.push(u);
            out_v.push(h);
        }
        k = end;
    }
    StepCurve::cumulative_hazard(out_t, out_v)
}

/// Exposed-arm hazard: weights `rho_1` in the risk set only.
pub fn hazard_treated(pairs: &[PairRecord], tau: f64) -> Result<StepCurve> {
    let times: Vec<f64> = pairs.iter().map(|p| p.treated.time).collect();
    let events: Vec<bool> = pairs.iter().map(|p| p.treated.event).collect();
    let den: Vec<f64> = pairs.iter().map(|p| p.treated.weight).collect();
    weighted_nelson_aalen(&times, &events, &vec![1.0; pairs.len()], &den, tau)
}

/// Counterfactual control hazard: events weighted by `rho_1 / phi`, risk
/// set by `rho_1 rho_0 / phi`.
pub fn hazard_control(pairs: &[PairRecord], phi: &[f64], tau: f64) -> Result<StepCurve> {
    if phi.len() != pairs.len() {
        return Err(Error::contract("one phi value per pair is required"));
    }
    if let Some(bad) = phi.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::contract(format!("phi must be positive, got {bad}")));
    }
    let times: Vec<f64> = pairs.iter().map(|p| p.control.time).collect();
    let events: Vec<bool> = pairs.iter().map(|p| p.control.event).collect();
    let num: Vec<f64> = pairs.iter().zip(phi).map(|(p, f)| p.treated.weight / f).collect();
    let den: Vec<f64> = pairs
        .iter()
        .zip(phi)
        .map(|(p, f)| p.treated.weight * p.control.weight / f)
        .collect();
    weighted_nelson_aalen(&times, &events, &num, &den, tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub att: f64,
    pub rmst_treated: f64,
    pub rmst_control: f64,
    pub hazard_treated: StepCurve,
    pub hazard_control: StepCurve,
}

/// RMST difference between the exposed arm and its counterfactual.
pub fn estimate_att(pairs: &[PairRecord], phi: &[f64], tau: f64) -> Result<PointEstimate> {
    if pairs.is_empty() {
        return Err(Error::EmptyArm("treated"));
    }
    for (arm, max_time) in [
        ("treated", pairs.iter().map(|p| p.treated.time).fold(f64::NEG_INFINITY, f64::max)),
        ("control", pairs.iter().map(|p| p.control.time).fold(f64::NEG_INFINITY, f64::max)),
    ] {
        if tau > max_time {
            return Err(Error::TruncationBeyondFollowUp { arm, tau, max_time });
        }
    }
    let hazard_treated = hazard_treated(pairs, tau)?;
    let hazard_control = hazard_control(pairs, phi, tau)?;
    let rmst_treated = rmst_from_survival(&survival_from_hazard(&hazard_treated)?, tau)?;
    let rmst_control = rmst_from_survival(&survival_from_hazard(&hazard_control)?, tau)?;
    Ok(PointEstimate { att: rmst_treated - rmst_control, rmst_treated, rmst_control, hazard_treated, hazard_control })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    #[default]
    Normal,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub refit_phi: bool,
    pub ci: CiKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// One entry per draw in draw order; `None` for degenerate resamples.
    pub draws: Vec<Option<f64>>,
    pub n_missing: usize,
}

fn draw_att(pairs: &[PairRecord], phi: &[f64], settings: &PhiSettings, refit: bool, tau: f64, idx: &[usize]) -> Result<f64> {
    let sample: Vec<PairRecord> = idx.iter().map(|&i| pairs[i].clone()).collect();
    if !sample.iter().any(|p| p.treated.event) || !sample.iter().any(|p| p.control.event) {
        return Err(Error::domain("resample has an arm without events"));
    }
    let phi_draw = if refit {
        phi_values(&sample, &fit_pair_phi(&sample, settings)?)
    } else {
        idx.iter().map(|&i| phi[i]).collect()
    };
    Ok(estimate_att(&sample, &phi_draw, tau)?.att)
}

/// Resamples pairs with replacement, keeping the matching fixed.
pub fn bootstrap_variance(
    pairs: &[PairRecord],
    att: f64,
    phi: &[f64],
    settings: &PhiSettings,
    tau: f64,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    use rand::Rng;
    if options.draws < 2 {
        return Err(Error::domain("at least two bootstrap draws are required"));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyArm("treated"));
    }
    let m = pairs.len();
    let base = rng::derive_seed(options.seed, rng::purpose::BOOTSTRAP);
    let draws: Vec<Option<f64>> = (0..options.draws)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(base, b as u64);
            let idx: Vec<usize> = (0..m).map(|_| r.random_range(0..m)).collect();
            match draw_att(pairs, phi, settings, options.refit_phi, tau, &idx) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::debug!("bootstrap draw {b} discarded: {e}");
                    None
                }
            }
        })
        .collect();
    let mut valid: Vec<f64> = draws.iter().flatten().copied().collect();
    let n_missing = draws.len() - valid.len();
    if n_missing * 20 > draws.len() {
        log::warn!("{n_missing} of {} bootstrap draws were degenerate", draws.len());
    }
    let se = stats::sample_sd(&valid).ok_or_else(|| Error::domain("fewer than two usable bootstrap draws"))?;
    let (ci_low, ci_high) = match options.ci {
        CiKind::Normal => (att - Z_975 * se, att + Z_975 * se),
        CiKind::Percentile => {
            let lo = stats::quantile_type7(&mut valid, 0.025);
            let hi = stats::quantile_type7(&mut valid, 0.975);
            (lo, hi)
        }
    };
    Ok(BootstrapResult { se, ci_low, ci_high, draws, n_missing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiDiagnostics {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub warning: Option<String>,
}

impl PhiDiagnostics {
    pub fn new(values: &[f64], phi: &PhiFunction) -> Self {
        PhiDiagnostics {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: stats::mean(values),
            warning: phi.warning.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttResult {
    pub estimate: AttEstimate,
    pub hazard_treated: StepCurve,
    pub hazard_control: StepCurve,
    pub bootstrap_draws: Vec<Option<f64>>,
    pub n_missing_draws: usize,
    pub method: Method,
    pub phi_diagnostics: PhiDiagnostics,
    pub tau: f64,
}

/// Fits the event model, estimates the ATT and bootstraps its SE.
pub fn analyze_pairs(
    pairs: &[PairRecord],
    settings: &PhiSettings,
    tau: f64,
    method: Method,
    options: &BootstrapOptions,
) -> Result<AttResult> {
    let phi = fit_pair_phi(pairs, settings)?;
    let phi_vals = phi_values(pairs, &phi);
    let point = estimate_att(pairs, &phi_vals, tau)?;
    let boot = bootstrap_variance(pairs, point.att, &phi_vals, settings, tau, options)?;
    Ok(AttResult {
        estimate: AttEstimate {
            att: point.att,
            se: boot.se,
            ci_low: boot.ci_low,
            ci_high: boot.ci_high,
            rmst_treated: point.rmst_treated,
            rmst_control: point.rmst_control,
            n_pairs: pairs.len(),
        },
        hazard_treated: point.hazard_treated,
        hazard_control: point.hazard_control,
        bootstrap_draws: boot.draws,
        n_missing_draws: boot.n_missing,
        method,
        phi_diagnostics: PhiDiagnostics::new(&phi_vals, &phi),
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm(time: f64, event: bool, weight: f64) -> ArmRecord {
        ArmRecord { time, event, weight }
    }

    fn pair(t: ArmRecord, c: ArmRecord) -> PairRecord {
        PairRecord { treated: t, control: c, phi_predictor: vec![0.0], control_stratum: 0 }
    }

    #[test]
    fn treated_hazard_examples() {
        let pairs: Vec<PairRecord> = [(1.0, true), (2.0, false), (3.0, true)]
            .iter()
            .map(|&(t, e)| pair(arm(t, e, 1.0), arm(1.0, true, 1.0)))
            .collect();
        let h = hazard_treated(&pairs, 10.0).unwrap();
        assert_eq!(h.eval(1.0), 1.0 / 3.0);
        assert_eq!(h.eval(3.0), 1.0 / 3.0 + 1.0);

        let pairs = vec![pair(arm(1.0, true, 2.0), arm(1.0, true, 1.0)), pair(arm(2.0, true, 1.0), arm(1.0, true, 1.0))];
        let h = hazard_treated(&pairs, 10.0).unwrap();
        assert_eq!(h.eval(1.0), 1.0 / 3.0);
        assert_eq!(h.eval(2.0), 1.0 / 3.0 + 1.0);
    }

    #[test]
    fn control_hazard_example() {
        let pairs = vec![pair(arm(5.0, false, 1.0), arm(1.0, true, 1.0)), pair(arm(5.0, false, 2.0), arm(2.0, true, 1.0))];
        let h = hazard_control(&pairs, &[1.0, 2.0], 10.0).unwrap();
        assert_eq!(h.eval(1.0), 0.5);
        assert_eq!(h.eval(2.0), 1.5);
    }

    #[test]
    fn jumps_beyond_tau_are_dropped() {
        let pairs = vec![pair(arm(1.0, true, 1.0), arm(1.0, true, 1.0)), pair(arm(4.0, true, 1.0), arm(1.0, true, 1.0))];
        let h = hazard_treated(&pairs, 3.0).unwrap();
        assert_eq!(h.times(), &[1.0]);
    }

    #[test]
    fn symmetric_pairs_give_zero_att() {
        let pairs: Vec<PairRecord> = (1..6).map(|i| pair(arm(i as f64, i % 2 == 0, 1.0), arm(i as f64, i % 2 == 0, 1.0))).collect();
        let est = estimate_att(&pairs, &[1.0; 5], 4.0).unwrap();
        assert_eq!(est.att, 0.0);
    }

    #[test]
    fn truncation_beyond_follow_up_names_arm() {
        let pairs = vec![pair(arm(5.0, true, 1.0), arm(2.0, true, 1.0))];
        match estimate_att(&pairs, &[1.0], 3.0) {
            Err(Error::TruncationBeyondFollowUp { arm, .. }) => assert_eq!(arm, "control"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_pairs_have_zero_se() {
        let pairs: Vec<PairRecord> = (0..6).map(|_| pair(arm(1.0, true, 1.0), arm(2.0, true, 1.0))).collect();
        let settings = PhiSettings { alpha: vec![1.0], pooled_alpha: 1.0, convention: AlphaConvention::Stratum };
        let opts = BootstrapOptions { draws: 20, refit_phi: true, ci: CiKind::Normal, seed: 4 };
        let res = analyze_pairs(&pairs, &settings, 1.0, Method::PsTemplate, &opts).unwrap();
        assert_eq!(res.estimate.se, 0.0);
        assert_eq!(res.n_missing_draws, 0);
        assert_eq!(res.estimate.ci_low, res.estimate.att);
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
