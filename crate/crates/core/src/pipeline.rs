//! Steps shared by simulation replications and dataset analysis: propensity
//! fitting on a case-cohort sample, matching by method, and conversion of
//! matched pairs into estimator input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ccsample::CaseCohortSample;
use crate::error::{Error, Result};
use crate::estimator::{ArmRecord, Method, PairRecord, PhiSettings};
use crate::matching::{self, weighted_covariance, DistanceKind, DistanceSpec, MatchedPairSet};
use crate::propensity::{fit_weighted_logistic, predict_propensity, AlphaConvention, Design, LogisticFit};
use crate::survival::Subject;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    /// Unexposed subjects per template member.
    pub template_ratio: f64,
    pub n_candidates: usize,
    /// Covariate columns used for Mahalanobis matching; all when `None`.
    pub matching_covariates: Option<Vec<usize>>,
    /// Pair member whose propensity score (or covariates) indexes `phi`.
    pub phi_arm: PhiArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiArm {
    /// The matched unexposed subject, on whom the event model is fit.
    #[default]
    Unexposed,
    Exposed,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { template_ratio: 5.0, n_candidates: 50, matching_covariates: None, phi_arm: PhiArm::Unexposed }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.template_ratio > 0.0 && self.template_ratio.is_finite()) {
            return Err(Error::Config(format!("template ratio must be positive, got {}", self.template_ratio)));
        }
        if self.n_candidates == 0 {
            return Err(Error::Config("candidate count must be at least one".into()));
        }
        Ok(())
    }
}

/// A case-cohort sample with fitted propensity scores, split by exposure.
#[derive(Debug, Clone)]
pub struct PreparedSample<'a> {
    pub sample: &'a CaseCohortSample,
    pub propensity_fit: LogisticFit,
    /// Propensity score per subject, aligned with `sample.subjects`.
    pub propensity: Vec<f64>,
    pub exposed: Vec<usize>,
    pub unexposed: Vec<usize>,
}

/// Logistic regression of exposure on the given design rows, weighted by
/// the case-cohort weights unless `weighted` is false.
pub fn prepare<'a>(
    sample: &'a CaseCohortSample,
    design_rows: Vec<Vec<f64>>,
    names: Vec<String>,
    weighted: bool,
) -> Result<PreparedSample<'a>> {
    if design_rows.len() != sample.len() {
        return Err(Error::contract("one design row per sampled subject is required"));
    }
    let exposed: Vec<usize> = (0..sample.len()).filter(|&i| sample.subjects[i].exposed).collect();
    let unexposed: Vec<usize> = (0..sample.len()).filter(|&i| !sample.subjects[i].exposed).collect();
    if exposed.is_empty() {
        return Err(Error::EmptyArm("treated"));
    }
    if unexposed.is_empty() {
        return Err(Error::EmptyArm("control"));
    }
    let y: Vec<bool> = sample.subjects.iter().map(|s| s.exposed).collect();
    let w: Vec<f64> = if weighted {
        sample.subjects.iter().map(Subject::weight).collect()
    } else {
        vec![1.0; sample.len()]
    };
    let design = Design::new(design_rows, names)?;
    let fit = fit_weighted_logistic(&y, &design, &w)?;
    if !fit.converged {
        log::warn!("propensity model did not converge after {} iterations", fit.iterations);
    }
    let propensity = (0..design.nrows()).map(|i| predict_propensity(&fit, design.row(i))).collect();
    Ok(PreparedSample { sample, propensity_fit: fit, propensity, exposed, unexposed })
}

impl PreparedSample<'_> {
    fn covariate_columns(&self, config: &MatchingConfig) -> Vec<usize> {
        config
            .matching_covariates
            .clone()
            .unwrap_or_else(|| (0..self.sample.subjects[0].covariates.len()).collect())
    }

    /// Distance specification for a matching method.
    pub fn distance_spec(&self, kind: DistanceKind, config: &MatchingConfig) -> Result<DistanceSpec> {
        match kind {
            DistanceKind::PropensityEuclidean => Ok(DistanceSpec::propensity()),
            DistanceKind::Mahalanobis => {
                let cols = self.covariate_columns(config);
                let x: Vec<Vec<f64>> = self
                    .sample
                    .subjects
                    .iter()
                    .map(|s| cols.iter().map(|&j| s.covariates[j]).collect())
                    .collect();
                let rho: Vec<f64> = self.sample.subjects.iter().map(Subject::weight).collect();
                let cov = weighted_covariance(&x, &rho)?;
                DistanceSpec::mahalanobis(&cov, cols)
            }
        }
    }

    fn embed(&self, spec: &DistanceSpec, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter()
            .map(|&i| spec.embed(&self.sample.subjects[i].covariates, self.propensity[i]))
            .collect()
    }

    /// Template size implied by the configured ratio.
    pub fn template_size(&self, config: &MatchingConfig) -> usize {
        matching::template_size(self.unexposed.len(), config.template_ratio)
    }

    /// Pairs for `method`, as indices into the exposed and unexposed lists.
    pub fn match_method<R: Rng + ?Sized>(
        &self,
        method: Method,
        config: &MatchingConfig,
        rng: &mut R,
    ) -> Result<(MatchedPairSet, DistanceSpec)> {
        let spec = self.distance_spec(method.distance(), config)?;
        let exposed = self.embed(&spec, &self.exposed);
        let unexposed = self.embed(&spec, &self.unexposed);
        let pairs = if method.uses_template() {
            let m = self.template_size(config);
            matching::template_match(&exposed, &unexposed, spec.kind, m, config.n_candidates, rng)?
        } else {
            matching::plain_match(&exposed, &unexposed, spec.kind)?
        };
        Ok((pairs, spec))
    }

    /// Sample indices of the exposed and unexposed member of each pair.
    pub fn pair_subjects(&self, pairs: &MatchedPairSet) -> Vec<(usize, usize)> {
        pairs.pairs.iter().map(|&(e, u)| (self.exposed[e], self.unexposed[u])).collect()
    }

    /// Estimator input for matched pairs.
    pub fn pair_records(&self, pairs: &MatchedPairSet, method: Method, config: &MatchingConfig) -> Vec<PairRecord> {
        let def = self.sample.event_definition;
        let cols = self.covariate_columns(config);
        let arm = |s: &Subject| ArmRecord { time: s.obs_time, event: s.is_case(def), weight: s.weight() };
        self.pair_subjects(pairs)
            .into_iter()
            .map(|(e, u)| {
                let (t, c) = (&self.sample.subjects[e], &self.sample.subjects[u]);
                let k = match config.phi_arm {
                    PhiArm::Unexposed => u,
                    PhiArm::Exposed => e,
                };
                let phi_predictor = match method.distance() {
                    DistanceKind::PropensityEuclidean => vec![self.propensity[k]],
                    DistanceKind::Mahalanobis => cols.iter().map(|&j| self.sample.subjects[k].covariates[j]).collect(),
                };
                PairRecord { treated: arm(t), control: arm(c), phi_predictor, control_stratum: c.stratum }
            })
            .collect()
    }

    pub fn phi_settings(&self, convention: AlphaConvention) -> PhiSettings {
        PhiSettings { alpha: self.sample.alpha.clone(), pooled_alpha: self.sample.pooled_alpha(), convention }
    }
}
