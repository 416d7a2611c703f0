//! Monte Carlo experiments: replicated cohort generation, case-cohort
//! sampling, matching and estimation, summarized per method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccsample::{default_alphas, draw_case_cohort};
use crate::error::{Error, Result};
use crate::estimator::{analyze_pairs, BootstrapOptions, CiKind, Method};
use crate::pipeline::{prepare, MatchingConfig};
use crate::propensity::AlphaConvention;
use crate::rng::{self, derive_seed, purpose};
use crate::simgen::{generate_cohort, SimScenario, N_COVARIATES, N_STRATA};
use crate::stats;
use crate::ccsample::CaseCohortSample;
use crate::simgen::SimCohort;
use crate::survival::{EventDefinition, StepCurve, StudyConfig};

/// Largest tolerated share of failed replications per method.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: SimScenario,
    pub methods: Vec<Method>,
    pub event_definition: EventDefinition,
    pub replications: usize,
    pub bootstrap: usize,
    pub matching: MatchingConfig,
    pub refit_phi: bool,
    pub ci: CiKind,
    pub alpha_convention: AlphaConvention,
    /// Fixed per-stratum sampling probabilities instead of the data-driven
    /// default; all ones gives the full cohort.
    pub alpha_override: Option<Vec<f64>>,
    /// Fit the propensity model with case-cohort weights (default) or
    /// unweighted.
    pub weighted_propensity: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(scenario: SimScenario, methods: Vec<Method>, event_definition: EventDefinition) -> Self {
        let seed = scenario.seed;
        ExperimentConfig {
            scenario,
            methods,
            event_definition,
            replications: 400,
            bootstrap: 500,
            matching: MatchingConfig::default(),
            refit_phi: true,
            ci: CiKind::Normal,
            alpha_convention: AlphaConvention::Stratum,
            alpha_override: None,
            weighted_propensity: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        if self.bootstrap < 2 {
            return Err(Error::Config("at least two bootstrap draws are required".into()));
        }
        if let Some(a) = &self.alpha_override {
            if a.len() != N_STRATA {
                return Err(Error::Config(format!("alpha override needs {N_STRATA} strata")));
            }
        }
        self.matching.validate()?;
        self.scenario.validate()
    }
}

/// One method's outcome in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub att: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_pairs: usize,
    pub n_missing_draws: usize,
    pub tau: f64,
    /// Hazard curves (treated, control), kept for the first replication.
    #[serde(skip)]
    pub curves: Option<Box<(StepCurve, StepCurve)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: Option<Method>,
    pub seed: u64,
    pub message: String,
}

/// Metrics for one method across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub n: usize,
    pub n_failed: usize,
    pub mean_att: f64,
    pub percent_bias: f64,
    /// Mean bootstrap SE.
    pub sem: f64,
    /// SD of the estimates; undefined for a single replication.
    pub see: Option<f64>,
    /// Percent of intervals covering the true effect.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub true_effect: f64,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
    pub metrics: Vec<MethodMetrics>,
}

fn replication_seed(config: &ExperimentConfig, r: usize) -> u64 {
    derive_seed(config.seed, r as u64)
}

/// The simulated cohort and its case-cohort sample for replication `r`.
pub fn replication_data(config: &ExperimentConfig, r: usize) -> Result<(SimCohort, CaseCohortSample)> {
    let seed = replication_seed(config, r);
    let cohort = generate_cohort(&config.scenario, &mut rng::stream(seed, purpose::COHORT))?;
    let alpha = match &config.alpha_override {
        Some(a) => a.clone(),
        None => default_alphas(&cohort.subjects, N_STRATA, config.event_definition)?,
    };
    let study = StudyConfig { tau: cohort.tau, p: N_COVARIATES, k: 3, alpha, event_definition: config.event_definition };
    let sample = draw_case_cohort(&cohort.subjects, &study, &mut rng::stream(seed, purpose::SAMPLING))?;
    Ok((cohort, sample))
}

type Outcome = std::result::Result<ReplicationRecord, ReplicationFailure>;

/// Runs every configured method on one simulated cohort.
pub fn run_replication(config: &ExperimentConfig, r: usize) -> Result<Vec<Outcome>> {
    let seed = replication_seed(config, r);
    let (cohort, sample) = replication_data(config, r)?;
    let rows: Vec<Vec<f64>> = sample.subjects.iter().map(|s| s.covariates.clone()).collect();
    let names = (1..=N_COVARIATES).map(|j| format!("x{j}")).collect();
    let prepared = prepare(&sample, rows, names, config.weighted_propensity)?;
    let settings = prepared.phi_settings(config.alpha_convention);

    Ok(config
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let run = || -> Result<ReplicationRecord> {
                let mut template_rng = rng::stream(derive_seed(seed, purpose::TEMPLATES), mi as u64);
                let (pairs, _) = prepared.match_method(method, &config.matching, &mut template_rng)?;
                let records = prepared.pair_records(&pairs, method, &config.matching);
                let options = BootstrapOptions {
                    draws: config.bootstrap,
                    refit_phi: config.refit_phi,
                    ci: config.ci,
                    seed: derive_seed(seed, 16 + mi as u64),
                };
                let res = analyze_pairs(&records, &settings, cohort.tau, method, &options)?;
                Ok(ReplicationRecord {
                    replication: r,
                    method,
                    att: res.estimate.att,
                    se: res.estimate.se,
                    ci_low: res.estimate.ci_low,
                    ci_high: res.estimate.ci_high,
                    n_pairs: res.estimate.n_pairs,
                    n_missing_draws: res.n_missing_draws,
                    tau: cohort.tau,
                    curves: (r == 0).then(|| Box::new((res.hazard_treated, res.hazard_control))),
                })
            };
            run().map_err(|e| ReplicationFailure { replication: r, method: Some(method), seed, message: e.to_string() })
        })
        .collect())
}

/// Per-method metrics against the true effect.
pub fn summarize(method: Method, records: &[&ReplicationRecord], n_failed: usize, true_effect: f64) -> MethodMetrics {
    let atts: Vec<f64> = records.iter().map(|r| r.att).collect();
    let ses: Vec<f64> = records.iter().map(|r| r.se).collect();
    let mean_att = stats::mean(&atts);
    let covered = records.iter().filter(|r| r.ci_low <= true_effect && true_effect <= r.ci_high).count();
    MethodMetrics {
        method,
        n: records.len(),
        n_failed,
        mean_att,
        percent_bias: 100.0 * (mean_att - true_effect) / true_effect,
        sem: stats::mean(&ses),
        see: stats::sample_sd(&atts),
        coverage: 100.0 * covered as f64 / records.len() as f64,
    }
}

/// All replications in parallel; results are ordered by replication index
/// so they do not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let true_effect = config
        .scenario
        .true_effect
        .ok_or_else(|| Error::Config("scenario has no true effect; run the oracle first".into()))?;
    let outcomes: Vec<_> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_replication(config, r).unwrap_or_else(|e| {
                let failure = ReplicationFailure {
                    replication: r,
                    method: None,
                    seed: replication_seed(config, r),
                    message: e.to_string(),
                };
                config.methods.iter().map(|&m| Err(ReplicationFailure { method: Some(m), ..failure.clone() })).collect()
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(rec) => records.push(rec),
            Err(f) => {
                log::warn!("replication {} (seed {}) failed for {:?}: {}", f.replication, f.seed, f.method, f.message);
                failures.push(f);
            }
        }
    }

    let mut metrics = Vec::new();
    for &method in &config.methods {
        let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == method).collect();
        let failed = failures.iter().filter(|f| f.method == Some(method)).count();
        if failed as f64 > MAX_FAILURE_FRACTION * config.replications as f64 || ok.is_empty() {
            let detail = failures
                .iter()
                .filter(|f| f.method == Some(method))
                .take(3)
                .map(|f| format!("rep {} seed {}: {}", f.replication, f.seed, f.message))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::TooManyFailures { failed, total: config.replications, detail: format!("{method}: {detail}") });
        }
        metrics.push(summarize(method, &ok, failed, true_effect));
    }
    Ok(ExperimentResult { true_effect, records, failures, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(att: f64, se: f64) -> ReplicationRecord {
        ReplicationRecord {
            replication: 0,
            method: Method::PsTemplate,
            att,
            se,
            ci_low: att - 1.96 * se,
            ci_high: att + 1.96 * se,
            n_pairs: 1,
            n_missing_draws: 0,
            tau: 1.0,
            curves: None,
        }
    }

    #[test]
    fn metrics_by_hand() {
        let recs = [record(-0.9, 0.1), record(-1.1, 0.3), record(-1.3, 0.05)];
        let refs: Vec<&ReplicationRecord> = recs.iter().collect();
        let m = summarize(Method::PsTemplate, &refs, 0, -1.0);
        assert!((m.mean_att + 1.1).abs() < 1e-12);
        assert!((m.percent_bias - 10.0).abs() < 1e-9);
        assert!((m.sem - 0.15).abs() < 1e-12);
        assert!((m.see.unwrap() - 0.2).abs() < 1e-12);
        // the third interval (-1.398, -1.202) misses -1
        assert!((m.coverage - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_replication_has_no_see() {
        let recs = [record(-0.9, 0.1)];
        let refs: Vec<&ReplicationRecord> = recs.iter().collect();
        assert_eq!(summarize(Method::PsTemplate, &refs, 0, -1.0).see, None);
    }

    #[test]
    fn empty_method_list_rejected() {
        let cfg = ExperimentConfig::new(
            SimScenario::preset(crate::simgen::ExposureRatio::OneToTwo, 500),
            vec![],
            EventDefinition::Generalized,
        );
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
