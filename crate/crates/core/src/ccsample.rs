//! Stratified case-cohort sampling with Bernoulli subcohorts and inverse
//! sampling probability weights `rho = delta + (1 - delta) xi / alpha_b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{EventDefinition, SamplingState, StudyConfig, Subject};

/// Subjects retained by the design (`rho > 0`), with sampling state set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseCohortSample {
    pub subjects: Vec<Subject>,
    pub alpha: Vec<f64>,
    pub event_definition: EventDefinition,
    pub n0: usize,
    pub n1: usize,
    /// Strata that had no cohort members.
    pub empty_strata: Vec<usize>,
}

impl CaseCohortSample {
    /// Wraps subjects whose sampling state is already known (e.g. ingested
    /// from a file), keeping only those with positive weight.
    pub fn from_sampled(subjects: Vec<Subject>, alpha: Vec<f64>, event_definition: EventDefinition) -> Result<Self> {
        for s in &subjects {
            if s.sampling.is_none() {
                return Err(Error::contract(format!("subject {} has no sampling state", s.id)));
            }
            if s.stratum >= alpha.len() {
                return Err(Error::contract(format!("subject {} has stratum {} out of range", s.id, s.stratum)));
            }
        }
        let subjects: Vec<Subject> = subjects.into_iter().filter(|s| s.weight() > 0.0).collect();
        let n1 = subjects.iter().filter(|s| s.exposed).count();
        Ok(CaseCohortSample {
            n0: subjects.len() - n1,
            n1,
            subjects,
            alpha,
            event_definition,
            empty_strata: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn exposed(&self) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(|s| s.exposed)
    }

    pub fn unexposed(&self) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(|s| !s.exposed)
    }

    /// Sampling probability of a subject's own stratum.
    pub fn alpha_of(&self, subject: &Subject) -> f64 {
        self.alpha[subject.stratum]
    }

    /// Single pooled subcohort probability: the overall subcohort fraction
    /// implied by the stratum probabilities and the cohort stratum sizes is
    /// not available from the sample alone, so it is estimated as the
    /// weighted fraction of non-cases that were sampled.
    pub fn pooled_alpha(&self) -> f64 {
        let mut sampled = 0.0;
        let mut represented = 0.0;
        for s in &self.subjects {
            if !s.is_case(self.event_definition) {
                sampled += 1.0;
                represented += s.weight();
            }
        }
        if represented > 0.0 {
            (sampled / represented).clamp(f64::MIN_POSITIVE, 1.0)
        } else {
            1.0
        }
    }
}

/// The inverse sampling weight for one subject.
pub fn sampling_weight(is_case: bool, in_subcohort: bool, alpha: f64) -> f64 {
    if is_case {
        1.0
    } else if in_subcohort {
        1.0 / alpha
    } else {
        0.0
    }
}

/// Per-stratum `alpha_b = min(1, cases_b / noncases_b)`, which targets a
/// case-to-control ratio near one within each stratum.
pub fn default_alphas(cohort: &[Subject], n_strata: usize, definition: EventDefinition) -> Result<Vec<f64>> {
    let mut cases = vec![0usize; n_strata];
    let mut noncases = vec![0usize; n_strata];
    for s in cohort {
        if s.stratum >= n_strata {
            return Err(Error::domain(format!("subject {} has stratum {} out of range", s.id, s.stratum)));
        }
        if s.is_case(definition) {
            cases[s.stratum] += 1;
        } else {
            noncases[s.stratum] += 1;
        }
    }
    Ok(cases
        .iter()
        .zip(&noncases)
        .map(|(&c, &nc)| if nc == 0 { 1.0 } else { (c as f64 / nc as f64).min(1.0) })
        .map(|a| if a > 0.0 { a } else { 1.0 })
        .collect())
}

/// Bernoulli subcohort selection within strata plus all cases.
pub fn draw_case_cohort<R: Rng + ?Sized>(cohort: &[Subject], config: &StudyConfig, rng: &mut R) -> Result<CaseCohortSample> {
    config.validate()?;
    let n_strata = config.n_strata();
    let mut stratum_sizes = vec![0usize; n_strata];
    for s in cohort {
        if s.stratum >= n_strata {
            return Err(Error::domain(format!("subject {} has stratum {} out of range", s.id, s.stratum)));
        }
        stratum_sizes[s.stratum] += 1;
    }
    let empty_strata: Vec<usize> = (0..n_strata).filter(|&b| stratum_sizes[b] == 0).collect();
    for b in &empty_strata {
        log::warn!("stratum {b} has no cohort members");
    }

    let mut subjects = Vec::new();
    for s in cohort {
        let alpha = config.alpha[s.stratum];
        // xi is drawn for every subject so that the stream does not depend
        // on case status
        let xi = rng.random::<f64>() < alpha;
        let weight = sampling_weight(s.is_case(config.event_definition), xi, alpha);
        if weight > 0.0 {
            let mut kept = s.clone();
            kept.sampling = Some(SamplingState { in_subcohort: xi, weight });
            subjects.push(kept);
        }
    }
    let n1 = subjects.iter().filter(|s| s.exposed).count();
    Ok(CaseCohortSample {
        n0: subjects.len() - n1,
        n1,
        subjects,
        alpha: config.alpha.clone(),
        event_definition: config.event_definition,
        empty_strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn subject(id: usize, stratum: usize, case: bool) -> Subject {
        Subject {
            id: id.to_string(),
            covariates: vec![id as f64],
            exposed: id.is_multiple_of(2),
            obs_time: 1.0,
            event_conventional: case,
            event_generalized: case,
            stratum,
            sampling: None,
        }
    }

    #[test]
    fn weight_formula_examples() {
        assert_eq!(sampling_weight(true, false, 0.2), 1.0);
        assert_eq!(sampling_weight(true, true, 0.2), 1.0);
        assert_eq!(sampling_weight(false, true, 0.2), 5.0);
        assert_eq!(sampling_weight(false, false, 0.2), 0.0);
    }

    #[test]
    fn default_alpha_examples() {
        let mut cohort: Vec<Subject> = (0..500).map(|i| subject(i, 0, i < 50)).collect();
        cohort.extend((0..20).map(|i| subject(1000 + i, 1, i < 15)));
        let alpha = default_alphas(&cohort, 3, EventDefinition::Conventional).unwrap();
        assert!((alpha[0] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(alpha[1], 1.0);
        // empty stratum
        assert_eq!(alpha[2], 1.0);
    }

    #[test]
    fn cases_always_sampled_with_unit_weight() {
        let cohort: Vec<Subject> = (0..2000).map(|i| subject(i, i % 2, i % 7 == 0)).collect();
        let config = StudyConfig {
            tau: 2.0,
            p: 1,
            k: 1,
            alpha: vec![0.2, 0.5],
            event_definition: EventDefinition::Conventional,
        };
        let sample = draw_case_cohort(&cohort, &config, &mut rng::stream(1, 0)).unwrap();
        let n_cases = cohort.iter().filter(|s| s.event_conventional).count();
        let sampled_cases: Vec<&Subject> = sample.subjects.iter().filter(|s| s.event_conventional).collect();
        assert_eq!(sampled_cases.len(), n_cases);
        assert!(sampled_cases.iter().all(|s| s.weight() == 1.0));
        for s in sample.subjects.iter().filter(|s| !s.event_conventional) {
            assert!(s.in_subcohort());
            assert_eq!(s.weight(), 1.0 / config.alpha[s.stratum]);
        }
        assert_eq!(sample.n0 + sample.n1, sample.len());
    }

    #[test]
    fn zero_alpha_is_domain_error() {
        let cohort = vec![subject(0, 0, false)];
        let config = StudyConfig {
            tau: 1.0,
            p: 1,
            k: 1,
            alpha: vec![0.0],
            event_definition: EventDefinition::Conventional,
        };
        assert!(matches!(
            draw_case_cohort(&cohort, &config, &mut rng::stream(1, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_stratum_is_reported_not_fatal() {
        let cohort: Vec<Subject> = (0..10).map(|i| subject(i, 0, false)).collect();
        let config = StudyConfig {
            tau: 1.0,
            p: 1,
            k: 1,
            alpha: vec![0.5, 0.5],
            event_definition: EventDefinition::Generalized,
        };
        let sample = draw_case_cohort(&cohort, &config, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(sample.empty_strata, vec![1]);
    }
}
