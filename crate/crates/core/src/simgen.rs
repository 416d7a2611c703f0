//! Synthetic full cohorts and the brute-force true-effect oracle.
//!
//! Six covariates come from a Gaussian copula with uniform margins on
//! `[-3, 3]`; the last three are dichotomized at zero. Exposure follows a
//! logistic model, event times are exponential with a covariate-dependent
//! hazard, censoring is exponential and independent of everything else.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::stats::{expit, quantile_type7};
use crate::survival::{EventDefinition, Subject};

pub const N_COVARIATES: usize = 6;
pub const N_CONTINUOUS: usize = 3;
/// Covariates whose binary combination defines the four sampling strata.
pub const STRATUM_COLUMNS: [usize; 2] = [4, 5];
pub const N_STRATA: usize = 4;
/// Truncation time is this quantile of the observed times.
pub const TAU_QUANTILE: f64 = 0.8;

const EXPOSURE_SLOPES: [f64; N_COVARIATES] = [-0.5, 0.5, -0.5, 0.5, -0.5, 0.5];
const HAZARD_SLOPES: [f64; N_COVARIATES] = [1.2, -1.2, 1.2, -1.2, 1.2, -1.2];
const EXPOSURE_LOG_HR: f64 = 3.0;
/// Coefficient of the `X2 * A` interaction in the log hazard.
const INTERACTION_LOG_HR: f64 = 1.2;

const CHUNK: usize = 1 << 15;

/// Marginal exposed-to-unexposed ratio of the full cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExposureRatio {
    #[serde(rename = "1:2")]
    OneToTwo,
    #[serde(rename = "1:3")]
    OneToThree,
    #[serde(rename = "1:4")]
    OneToFour,
}

impl ExposureRatio {
    pub fn controls_per_exposed(self) -> u32 {
        match self {
            ExposureRatio::OneToTwo => 2,
            ExposureRatio::OneToThree => 3,
            ExposureRatio::OneToFour => 4,
        }
    }

    pub fn exposed_fraction(self) -> f64 {
        1.0 / (1.0 + self.controls_per_exposed() as f64)
    }

    pub fn label(self) -> &'static str {
        match self {
            ExposureRatio::OneToTwo => "1:2",
            ExposureRatio::OneToThree => "1:3",
            ExposureRatio::OneToFour => "1:4",
        }
    }
}

impl std::str::FromStr for ExposureRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1:2" | "2" => Ok(ExposureRatio::OneToTwo),
            "1:3" | "3" => Ok(ExposureRatio::OneToThree),
            "1:4" | "4" => Ok(ExposureRatio::OneToFour),
            other => Err(Error::Config(format!("unknown exposure ratio `{other}`"))),
        }
    }
}

/// Data-generating constants for one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_full: usize,
    pub gamma0: f64,
    pub exposure_ratio: ExposureRatio,
    pub baseline_hazard: f64,
    pub censor_hazard: f64,
    pub copula_corr: f64,
    pub seed: u64,
    /// Targeted event rate under the conventional definition.
    pub event_rate_target: f64,
    /// True ATT if known (preset value or oracle output).
    #[serde(default)]
    pub true_effect: Option<f64>,
}

// Frozen outputs of `calibrate` (pilot 10^6 for the exposure and event-rate
// constants; the time scale is fixed by a 4e7-subject oracle run so that the
// true effect lands on the reference value).
const PRESET_1_2: (f64, f64, f64, f64) = (-1.211_733_706, 0.017_386_230, 2.421_615_131, -0.0509);
const PRESET_1_3: (f64, f64, f64, f64) = (-1.759_476_763, 0.017_182_712, 1.940_023_859, -0.0606);
const PRESET_1_4: (f64, f64, f64, f64) = (-2.137_841_846, 0.020_761_944, 2.084_874_613, -0.0542);

impl SimScenario {
    /// Calibrated preset for a given exposure ratio and cohort size.
    pub fn preset(ratio: ExposureRatio, n_full: usize) -> Self {
        let (gamma0, h0, censor, effect) = match ratio {
            ExposureRatio::OneToTwo => PRESET_1_2,
            ExposureRatio::OneToThree => PRESET_1_3,
            ExposureRatio::OneToFour => PRESET_1_4,
        };
        SimScenario {
            n_full,
            gamma0,
            exposure_ratio: ratio,
            baseline_hazard: h0,
            censor_hazard: censor,
            copula_corr: 0.2,
            seed: 20_240_601,
            event_rate_target: 0.10,
            true_effect: Some(effect),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_full == 0 {
            return Err(Error::domain("cohort size must be positive"));
        }
        if !(0.0..1.0).contains(&self.copula_corr) {
            return Err(Error::domain(format!(
                "copula correlation must lie in [0, 1), got {}",
                self.copula_corr
            )));
        }
        if !(self.baseline_hazard > 0.0) || !(self.censor_hazard > 0.0) {
            return Err(Error::domain("hazards must be positive"));
        }
        Ok(())
    }
}

/// Latent Gaussian correlation giving Pearson correlation `rho_u` between
/// uniform margins: inverts `rho_u = (6/pi) asin(r/2)`.
pub fn latent_correlation(rho_u: f64) -> f64 {
    2.0 * (std::f64::consts::PI * rho_u / 6.0).sin()
}

/// Lower Cholesky factor of the equicorrelation matrix.
fn equicorrelation_cholesky(dim: usize, r: f64) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { r };
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (target - s).sqrt();
            } else {
                l[i][j] = (target - s) / l[j][j];
            }
        }
    }
    l
}

/// Copula sampler for one covariate row.
pub struct CovariateSampler {
    chol: Vec<Vec<f64>>,
    normal: Normal,
}

impl CovariateSampler {
    pub fn new(corr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&corr) {
            return Err(Error::domain(format!("copula correlation must lie in [0, 1), got {corr}")));
        }
        Ok(CovariateSampler {
            chol: equicorrelation_cholesky(N_COVARIATES, latent_correlation(corr)),
            normal: Normal::standard(),
        })
    }

    /// Underlying uniforms on `[-3, 3]`, before dichotomization.
    pub fn sample_uniforms<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; N_COVARIATES] {
        let z: [f64; N_COVARIATES] = std::array::from_fn(|_| rng.sample(StandardNormal));
        std::array::from_fn(|i| {
            let latent: f64 = (0..=i).map(|k| self.chol[i][k] * z[k]).sum();
            6.0 * self.normal.cdf(latent) - 3.0
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; N_COVARIATES] {
        let mut x = self.sample_uniforms(rng);
        for v in &mut x[N_CONTINUOUS..] {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
        x
    }
}

/// `n` covariate rows: three continuous uniforms and three binaries.
pub fn generate_covariates<R: Rng + ?Sized>(n: usize, corr: f64, rng: &mut R) -> Result<Vec<[f64; N_COVARIATES]>> {
    if n == 0 {
        return Err(Error::domain("number of rows must be positive"));
    }
    let sampler = CovariateSampler::new(corr)?;
    Ok((0..n).map(|_| sampler.sample(rng)).collect())
}

pub fn exposure_logit(x: &[f64; N_COVARIATES], gamma0: f64) -> f64 {
    gamma0 + x.iter().zip(EXPOSURE_SLOPES).map(|(a, b)| a * b).sum::<f64>()
}

pub fn exposure_probability(x: &[f64; N_COVARIATES], gamma0: f64) -> f64 {
    expit(exposure_logit(x, gamma0))
}

pub fn generate_exposure<R: Rng + ?Sized>(x: &[[f64; N_COVARIATES]], gamma0: f64, rng: &mut R) -> Vec<bool> {
    x.iter()
        .map(|row| rng.random::<f64>() < exposure_probability(row, gamma0))
        .collect()
}

/// Event hazard `h0 exp(lin + 3A + 1.2 X2 A)`.
pub fn event_hazard(x: &[f64; N_COVARIATES], exposed: bool, h0: f64) -> f64 {
    let mut lin: f64 = x.iter().zip(HAZARD_SLOPES).map(|(a, b)| a * b).sum();
    if exposed {
        lin += EXPOSURE_LOG_HR + INTERACTION_LOG_HR * x[1];
    }
    h0 * lin.exp()
}

/// Conditional log hazard ratio of exposure at a covariate row.
pub fn exposure_log_hazard_ratio(x: &[f64; N_COVARIATES]) -> f64 {
    (event_hazard(x, true, 1.0) / event_hazard(x, false, 1.0)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalOutcomes {
    pub obs_time: Vec<f64>,
    pub delta: Vec<bool>,
    pub delta_star: Vec<bool>,
    pub tau: f64,
}

fn finish_outcomes(event_times: &[f64], censor_times: &[f64]) -> SurvivalOutcomes {
    let mut observed: Vec<f64> = event_times.iter().zip(censor_times).map(|(t, c)| t.min(*c)).collect();
    let tau = quantile_type7(&mut observed, TAU_QUANTILE);
    let mut obs_time = Vec::with_capacity(event_times.len());
    let mut delta = Vec::with_capacity(event_times.len());
    let mut delta_star = Vec::with_capacity(event_times.len());
    for (&t0, &c) in event_times.iter().zip(censor_times) {
        let restricted = t0.min(tau);
        obs_time.push(restricted.min(c));
        delta.push(t0 < c && t0 < tau);
        delta_star.push(restricted < c);
    }
    SurvivalOutcomes { obs_time, delta, delta_star, tau }
}

/// Exponential event and censoring times; tau is the 80th percentile of the
/// observed `min(T0, C)` of this cohort.
pub fn generate_survival<R: Rng + ?Sized>(
    x: &[[f64; N_COVARIATES]],
    exposed: &[bool],
    h0: f64,
    censor_hazard: f64,
    rng: &mut R,
) -> Result<SurvivalOutcomes> {
    if !(h0 > 0.0) || !(censor_hazard > 0.0) {
        return Err(Error::domain("hazards must be positive"));
    }
    if x.len() != exposed.len() || x.is_empty() {
        return Err(Error::domain("covariates and exposure must be nonempty and of equal length"));
    }
    let mut event_times = Vec::with_capacity(x.len());
    let mut censor_times = Vec::with_capacity(x.len());
    for (row, &a) in x.iter().zip(exposed) {
        let e: f64 = rng.sample(Exp1);
        let c: f64 = rng.sample(Exp1);
        event_times.push(e / event_hazard(row, a, h0));
        censor_times.push(c / censor_hazard);
    }
    Ok(finish_outcomes(&event_times, &censor_times))
}

/// Zero-based stratum from the binary combination of `X5` and `X6`.
pub fn stratum_of(x: &[f64; N_COVARIATES]) -> usize {
    2 * (x[STRATUM_COLUMNS[0]] > 0.5) as usize + (x[STRATUM_COLUMNS[1]] > 0.5) as usize
}

#[derive(Debug, Clone)]
pub struct SimCohort {
    pub subjects: Vec<Subject>,
    pub tau: f64,
}

impl SimCohort {
    pub fn event_rate(&self, definition: EventDefinition) -> f64 {
        self.subjects.iter().filter(|s| s.is_case(definition)).count() as f64 / self.subjects.len() as f64
    }
}

/// One full cohort for a scenario.
pub fn generate_cohort<R: Rng + ?Sized>(scenario: &SimScenario, rng: &mut R) -> Result<SimCohort> {
    scenario.validate()?;
    let x = generate_covariates(scenario.n_full, scenario.copula_corr, rng)?;
    let a = generate_exposure(&x, scenario.gamma0, rng);
    let out = generate_survival(&x, &a, scenario.baseline_hazard, scenario.censor_hazard, rng)?;
    let subjects = x
        .iter()
        .enumerate()
        .map(|(i, row)| Subject {
            id: (i + 1).to_string(),
            covariates: row.to_vec(),
            exposed: a[i],
            obs_time: out.obs_time[i],
            event_conventional: out.delta[i],
            event_generalized: out.delta_star[i],
            stratum: stratum_of(row),
            sampling: None,
        })
        .collect();
    Ok(SimCohort { subjects, tau: out.tau })
}

/// Result of the Monte Carlo true-effect computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub att: f64,
    pub mc_se: f64,
    pub tau: f64,
    pub n_mc: usize,
    pub n_exposed: usize,
}

/// Latent draws for one subject; both the observed outcome and the two
/// potential outcomes are functions of the same exponential variate.
struct LatentDraw {
    x: [f64; N_COVARIATES],
    exposed: bool,
    event_unit: f64,
    censor_unit: f64,
}

fn latent_chunk(sampler: &CovariateSampler, gamma0: f64, seed: u64, chunk: usize, len: usize) -> Vec<LatentDraw> {
    let mut rng: SimRng = rng::stream(rng::derive_seed(seed, chunk as u64), rng::purpose::COHORT);
    (0..len)
        .map(|_| {
            let x = sampler.sample(&mut rng);
            let exposed = rng.random::<f64>() < exposure_probability(&x, gamma0);
            let event_unit: f64 = rng.sample(Exp1);
            let censor_unit: f64 = rng.sample(Exp1);
            LatentDraw { x, exposed, event_unit, censor_unit }
        })
        .collect()
}

fn chunk_lengths(n: usize) -> Vec<usize> {
    (0..n.div_ceil(CHUNK)).map(|c| CHUNK.min(n - c * CHUNK)).collect()
}

/// Mean of `min(T1, tau) - min(T0, tau)` over the exposed subjects of a very
/// large uncensored-potential-outcome cohort. tau is computed from the
/// observed (censored) times of the same cohort.
pub fn true_att_oracle(scenario: &SimScenario, n_mc: usize, seed: u64) -> Result<OracleResult> {
    scenario.validate()?;
    if n_mc < 1_000_000 {
        return Err(Error::domain(format!("oracle needs at least 10^6 draws, got {n_mc}")));
    }
    oracle_unchecked(scenario, n_mc, seed)
}

pub(crate) fn oracle_unchecked(scenario: &SimScenario, n_mc: usize, seed: u64) -> Result<OracleResult> {
    let sampler = CovariateSampler::new(scenario.copula_corr)?;
    let lengths = chunk_lengths(n_mc);
    let h0 = scenario.baseline_hazard;
    let hc = scenario.censor_hazard;

    let mut observed: Vec<f64> = lengths
        .par_iter()
        .enumerate()
        .map(|(c, &len)| {
            latent_chunk(&sampler, scenario.gamma0, seed, c, len)
                .into_iter()
                .map(|d| (d.event_unit / event_hazard(&d.x, d.exposed, h0)).min(d.censor_unit / hc))
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let tau = quantile_type7(&mut observed, TAU_QUANTILE);
    drop(observed);

    // per chunk: (count, sum, sum of squares) of the exposed differences
    let partials: Vec<(usize, f64, f64)> = lengths
        .par_iter()
        .enumerate()
        .map(|(c, &len)| {
            let mut acc = (0usize, 0.0, 0.0);
            for d in latent_chunk(&sampler, scenario.gamma0, seed, c, len) {
                if !d.exposed {
                    continue;
                }
                let t1 = (d.event_unit / event_hazard(&d.x, true, h0)).min(tau);
                let t0 = (d.event_unit / event_hazard(&d.x, false, h0)).min(tau);
                let diff = t1 - t0;
                acc.0 += 1;
                acc.1 += diff;
                acc.2 += diff * diff;
            }
            acc
        })
        .collect();
    let (n, sum, sumsq) = partials
        .into_iter()
        .fold((0usize, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if n < 2 {
        return Err(Error::domain("oracle cohort has fewer than two exposed subjects"));
    }
    let mean = sum / n as f64;
    let var = (sumsq - n as f64 * mean * mean) / (n as f64 - 1.0);
    Ok(OracleResult { att: mean, mc_se: (var / n as f64).sqrt(), tau, n_mc, n_exposed: n })
}

/// Calibrated scenario constants plus the rates they achieve on the pilot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub exposure_ratio: ExposureRatio,
    pub gamma0: f64,
    pub baseline_hazard: f64,
    pub censor_hazard: f64,
    pub exposed_fraction: f64,
    pub conventional_event_rate: f64,
    pub generalized_event_rate: f64,
    pub pilot_n: usize,
    pub scale_n: usize,
    pub unit_scale_att: Option<f64>,
    pub target_true_effect: Option<f64>,
}

fn bisect(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) and f(hi) have opposite signs
    let flo = f(lo);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn pilot_event_rates(event_times: &[f64], censor_units: &[f64], censor_hazard: f64) -> (f64, f64) {
    let censor_times: Vec<f64> = censor_units.iter().map(|c| c / censor_hazard).collect();
    let out = finish_outcomes(event_times, &censor_times);
    let n = event_times.len() as f64;
    (
        out.delta.iter().filter(|&&d| d).count() as f64 / n,
        out.delta_star.iter().filter(|&&d| d).count() as f64 / n,
    )
}

/// Solves for the exposure intercept, the censoring-to-baseline hazard ratio
/// giving the target conventional event rate, and (when a target true effect
/// is given) the time scale at which the oracle reproduces it.
///
/// Event rates are invariant to a common rescaling of both hazards while the
/// ATT scales inversely with it, so the scale is solved in closed form from a
/// unit-scale oracle run.
pub fn calibrate(
    ratio: ExposureRatio,
    copula_corr: f64,
    event_rate_target: f64,
    target_true_effect: Option<f64>,
    pilot_n: usize,
    scale_n: usize,
    seed: u64,
) -> Result<Calibration> {
    if !(event_rate_target > 0.0 && event_rate_target < TAU_QUANTILE) {
        return Err(Error::domain("event rate target must lie in (0, 0.8)"));
    }
    let sampler = CovariateSampler::new(copula_corr)?;
    let lengths = chunk_lengths(pilot_n);
    let draws: Vec<LatentDraw> = lengths
        .par_iter()
        .enumerate()
        .map(|(c, &len)| latent_chunk(&sampler, 0.0, rng::derive_seed(seed, 17), c, len))
        .flatten()
        .collect();

    let logits: Vec<f64> = draws.iter().map(|d| exposure_logit(&d.x, 0.0)).collect();
    let target_fraction = ratio.exposed_fraction();
    let gamma0 = bisect(-10.0, 10.0, 80, |g| {
        logits.iter().map(|l| expit(g + l)).sum::<f64>() / logits.len() as f64 - target_fraction
    });

    // Exposure drawn from the calibrated model with fresh uniforms.
    let mut rng = rng::stream(rng::derive_seed(seed, 18), rng::purpose::COHORT);
    let exposed: Vec<bool> = logits.iter().map(|l| rng.random::<f64>() < expit(gamma0 + l)).collect();
    let exposed_fraction = exposed.iter().filter(|&&a| a).count() as f64 / exposed.len() as f64;
    let event_times: Vec<f64> = draws
        .iter()
        .zip(&exposed)
        .map(|(d, &a)| d.event_unit / event_hazard(&d.x, a, 1.0))
        .collect();
    let censor_units: Vec<f64> = draws.iter().map(|d| d.censor_unit).collect();

    let log_ratio = bisect((1e-4f64).ln(), (1e5f64).ln(), 60, |lk| {
        pilot_event_rates(&event_times, &censor_units, lk.exp()).0 - event_rate_target
    });
    let censor_ratio = log_ratio.exp();
    let (conv, gen) = pilot_event_rates(&event_times, &censor_units, censor_ratio);

    let mut unit_scale_att = None;
    let mut h0 = 1.0;
    if let Some(target) = target_true_effect {
        let unit = SimScenario {
            n_full: 1,
            gamma0,
            exposure_ratio: ratio,
            baseline_hazard: 1.0,
            censor_hazard: censor_ratio,
            copula_corr,
            seed,
            event_rate_target,
            true_effect: None,
        };
        let oracle = oracle_unchecked(&unit, scale_n, rng::derive_seed(seed, 19))?;
        unit_scale_att = Some(oracle.att);
        h0 = oracle.att / target;
        if !(h0 > 0.0) {
            return Err(Error::domain("target true effect has the wrong sign for this scenario"));
        }
    }

    Ok(Calibration {
        exposure_ratio: ratio,
        gamma0,
        baseline_hazard: h0,
        censor_hazard: censor_ratio * h0,
        exposed_fraction,
        conventional_event_rate: conv,
        generalized_event_rate: gen,
        pilot_n,
        scale_n,
        unit_scale_att,
        target_true_effect,
    })
}
