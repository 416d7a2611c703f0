//! Analysis of a user-supplied case-cohort dataset: CSV ingestion with
//! row-level validation, propensity and covariate matching with and without
//! templates, balance diagnostics and the ATT table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ccsample::{sampling_weight, CaseCohortSample};
use crate::error::{Error, Result};
use crate::estimator::{analyze_pairs, AttResult, BootstrapOptions, CiKind, Method};
use crate::matching::{BalanceReference, BalanceRow, BalanceStage};
use crate::pipeline::{prepare, MatchingConfig, PhiArm, PreparedSample};
use crate::propensity::AlphaConvention;
use crate::rng::{self, derive_seed, purpose};
use crate::survival::{EventDefinition, SamplingState, Subject};

/// Relative tolerance when checking a supplied weight against the design.
const WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Columns {
    pub id: String,
    pub exposure: String,
    pub time: String,
    pub event: String,
    pub stratum: String,
    pub subcohort: String,
    /// Optional weight column, checked against the design when present.
    pub weight: Option<String>,
    /// Optional per-row stratum sampling probability.
    pub alpha: Option<String>,
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            id: "id".into(),
            exposure: "exposure".into(),
            time: "time".into(),
            event: "event".into(),
            stratum: "stratum".into(),
            subcohort: "xi".into(),
            weight: Some("rho".into()),
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub columns: Columns,
    pub covariates: Vec<String>,
    /// Exposure is `value > threshold` when set; otherwise the column must
    /// hold 0/1.
    pub exposure_threshold: Option<f64>,
    /// Truncation time; defaults to the smaller of the two arms' largest
    /// follow-up times.
    pub tau: Option<f64>,
    pub event_definition: EventDefinition,
    /// Sampling probability per stratum label, if not in a column.
    pub alpha: Option<BTreeMap<String, f64>>,
    /// Adds stratum indicators to the propensity model.
    pub strata_in_propensity: bool,
    /// Fit the propensity model with the case-cohort weights.
    pub weighted_propensity: bool,
    pub methods: Vec<Method>,
    /// Unexposed-per-template-member ratios, reported side by side.
    pub template_ratios: Vec<f64>,
    pub n_candidates: usize,
    /// Names of the covariates used for Mahalanobis matching (all if empty).
    pub matching_covariates: Vec<String>,
    /// Pair member indexing the event-probability model.
    pub phi_arm: PhiArm,
    pub bootstrap: usize,
    pub refit_phi: bool,
    pub ci: CiKind,
    pub alpha_convention: AlphaConvention,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            columns: Columns::default(),
            covariates: Vec::new(),
            exposure_threshold: None,
            tau: None,
            event_definition: EventDefinition::Conventional,
            alpha: None,
            strata_in_propensity: true,
            weighted_propensity: true,
            methods: Method::ALL.to_vec(),
            template_ratios: vec![5.0, 4.0],
            n_candidates: 75,
            matching_covariates: Vec::new(),
            phi_arm: PhiArm::Unexposed,
            bootstrap: 500,
            refit_phi: true,
            ci: CiKind::Normal,
            alpha_convention: AlphaConvention::Stratum,
            seed: 1,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Config("no covariates listed".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.bootstrap < 2 {
            return Err(Error::Config("at least two bootstrap draws are required".into()));
        }
        if self.methods.iter().any(|m| m.uses_template()) && self.template_ratios.is_empty() {
            return Err(Error::Config("template methods need at least one template ratio".into()));
        }
        for &r in &self.template_ratios {
            MatchingConfig { template_ratio: r, n_candidates: self.n_candidates, ..Default::default() }.validate()?;
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tau must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// Exposure from a continuous marker: `value > threshold`.
pub fn dichotomize(value: f64, threshold: f64) -> bool {
    value > threshold
}

/// One parsed input row, before truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub row: usize,
    pub id: String,
    pub covariates: Vec<f64>,
    pub exposed: bool,
    pub time: f64,
    pub event: bool,
    pub stratum_label: String,
    pub in_subcohort: bool,
    pub weight: Option<f64>,
    pub alpha: Option<f64>,
}

fn parse_flag(raw: &str, row: usize, name: &str) -> Result<bool> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" => Ok(false),
        other => Err(Error::Validation { row, message: format!("column `{name}` must be binary, got `{other}`") }),
    }
}

fn parse_num(raw: &str, row: usize, name: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Validation { row, message: format!("column `{name}` is not a finite number: `{raw}`") })
}

/// Reads and validates rows; `row` numbers count data rows from 1.
pub fn read_records<R: std::io::Read>(reader: R, config: &AnalysisConfig) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing = std::cell::RefCell::new(Vec::new());
    let find = |name: &str| -> usize {
        headers.iter().position(|h| h.trim() == name).unwrap_or_else(|| {
            missing.borrow_mut().push(name.to_string());
            usize::MAX
        })
    };
    let c = &config.columns;
    let id = find(&c.id);
    let exposure = find(&c.exposure);
    let time = find(&c.time);
    let event = find(&c.event);
    let stratum = find(&c.stratum);
    let subcohort = find(&c.subcohort);
    let weight = c.weight.as_deref().map(&find);
    let alpha = c.alpha.as_deref().map(&find);
    let covs: Vec<usize> = config.covariates.iter().map(|n| find(n)).collect();
    let missing = missing.into_inner();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing columns: {}", missing.join(", "))));
    }

    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let exposed = match config.exposure_threshold {
            Some(th) => dichotomize(parse_num(field(exposure), row, &c.exposure)?, th),
            None => parse_flag(field(exposure), row, &c.exposure)?,
        };
        let t = parse_num(field(time), row, &c.time)?;
        if t < 0.0 {
            return Err(Error::Validation { row, message: format!("negative time {t}") });
        }
        let covariates = covs
            .iter()
            .zip(&config.covariates)
            .map(|(&i, n)| parse_num(field(i), row, n))
            .collect::<Result<_>>()?;
        out.push(RawRecord {
            row,
            id: field(id).to_string(),
            covariates,
            exposed,
            time: t,
            event: parse_flag(field(event), row, &c.event)?,
            stratum_label: field(stratum).trim().to_string(),
            in_subcohort: parse_flag(field(subcohort), row, &c.subcohort)?,
            weight: weight.map(|i| parse_num(field(i), row, c.weight.as_deref().unwrap_or(""))).transpose()?,
            alpha: alpha.map(|i| parse_num(field(i), row, c.alpha.as_deref().unwrap_or(""))).transpose()?,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("input has no data rows".into()));
    }
    Ok(out)
}

/// Stratum sampling probabilities from, in order of preference, the config,
/// an alpha column, or the weights of sampled non-cases.
fn resolve_alpha(records: &[RawRecord], labels: &[String], config: &AnalysisConfig) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|label| {
            if let Some(a) = config.alpha.as_ref().and_then(|m| m.get(label)) {
                return Ok(*a);
            }
            let in_stratum = records.iter().filter(|r| &r.stratum_label == label);
            if let Some(r) = in_stratum.clone().find(|r| r.alpha.is_some()) {
                return Ok(r.alpha.unwrap());
            }
            in_stratum
                .filter(|r| !r.event && r.in_subcohort)
                .find_map(|r| r.weight.filter(|w| *w > 0.0).map(|w| 1.0 / w))
                .ok_or_else(|| Error::Config(format!("no sampling probability available for stratum `{label}`")))
        })
        .collect::<Result<Vec<f64>>>()
        .and_then(|a| {
            if let Some((b, bad)) = a.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
                Err(Error::Config(format!("sampling probability {bad} for stratum `{}` outside (0, 1]", labels[b])))
            } else {
                Ok(a)
            }
        })
}

/// The ingested sample with strata mapped to indices in label order.
#[derive(Debug, Clone)]
pub struct IngestedSample {
    pub sample: CaseCohortSample,
    pub stratum_labels: Vec<String>,
    pub tau: f64,
}

/// Truncates at tau, derives event flags for both definitions, checks the
/// supplied weights against the design and assigns weights for the active
/// definition.
pub fn build_sample(records: &[RawRecord], config: &AnalysisConfig) -> Result<IngestedSample> {
    let mut labels: Vec<String> = records.iter().map(|r| r.stratum_label.clone()).collect();
    labels.sort();
    labels.dedup();
    let alpha = resolve_alpha(records, &labels, config)?;
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    for r in records {
        if let Some(w) = r.weight {
            let a = alpha[index[r.stratum_label.as_str()]];
            let expected = sampling_weight(r.event, r.in_subcohort, a);
            if (w - expected).abs() > WEIGHT_TOLERANCE * expected.max(1.0) {
                return Err(Error::Validation {
                    row: r.row,
                    message: format!(
                        "weight {w} inconsistent with event={}, subcohort={}, alpha={a} (expected {expected})",
                        r.event as u8, r.in_subcohort as u8
                    ),
                });
            }
        }
        if !r.event && !r.in_subcohort {
            return Err(Error::Validation { row: r.row, message: "non-case outside the subcohort cannot be in the sample".into() });
        }
    }

    let max_time = |exposed: bool| {
        records.iter().filter(|r| r.exposed == exposed).map(|r| r.time).fold(f64::NEG_INFINITY, f64::max)
    };
    let (max1, max0) = (max_time(true), max_time(false));
    if max1 == f64::NEG_INFINITY {
        return Err(Error::EmptyArm("treated"));
    }
    if max0 == f64::NEG_INFINITY {
        return Err(Error::EmptyArm("control"));
    }
    let tau = config.tau.unwrap_or(max1.min(max0));

    let subjects = records
        .iter()
        .map(|r| {
            let stratum = index[r.stratum_label.as_str()];
            let event_conventional = r.event && r.time < tau;
            let event_generalized = event_conventional || r.time >= tau;
            let case = match config.event_definition {
                EventDefinition::Conventional => event_conventional,
                EventDefinition::Generalized => event_generalized,
            };
            Subject {
                id: r.id.clone(),
                covariates: r.covariates.clone(),
                exposed: r.exposed,
                obs_time: r.time.min(tau),
                event_conventional,
                event_generalized,
                stratum,
                sampling: Some(SamplingState {
                    in_subcohort: r.in_subcohort,
                    weight: sampling_weight(case, r.in_subcohort, alpha[stratum]),
                }),
            }
        })
        .collect();
    let sample = CaseCohortSample::from_sampled(subjects, alpha, config.event_definition)?;
    Ok(IngestedSample { sample, stratum_labels: labels, tau })
}

pub fn load(path: &Path, config: &AnalysisConfig) -> Result<IngestedSample> {
    let file = std::fs::File::open(path)?;
    build_sample(&read_records(file, config)?, config)
}

/// Propensity design rows: covariates plus optional stratum indicators
/// (the first stratum is the reference).
pub fn propensity_design(ingested: &IngestedSample, config: &AnalysisConfig) -> (Vec<Vec<f64>>, Vec<String>) {
    let n_strata = ingested.stratum_labels.len();
    let with_strata = config.strata_in_propensity && n_strata > 1;
    let mut names = config.covariates.clone();
    if with_strata {
        names.extend(ingested.stratum_labels[1..].iter().map(|l| format!("stratum_{l}")));
    }
    let rows = ingested
        .sample
        .subjects
        .iter()
        .map(|s| {
            let mut row = s.covariates.clone();
            if with_strata {
                row.extend((1..n_strata).map(|b| (s.stratum == b) as u8 as f64));
            }
            row
        })
        .collect();
    (rows, names)
}

/// Fits the propensity model; stratum indicators that are collinear with
/// the covariates (e.g. strata built from listed covariates) are dropped.
fn prepare_dropping_redundant_strata<'a>(ingested: &'a IngestedSample, config: &AnalysisConfig) -> Result<PreparedSample<'a>> {
    let (mut rows, mut names) = propensity_design(ingested, config);
    loop {
        match prepare(&ingested.sample, rows.clone(), names.clone(), config.weighted_propensity) {
            Err(Error::RankDeficient { column }) if column.starts_with("stratum_") => {
                log::info!("dropping redundant propensity column `{column}`");
                let j = names.iter().position(|n| *n == column).expect("named column");
                names.remove(j);
                rows.iter_mut().for_each(|r| {
                    r.remove(j);
                });
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRun {
    pub method: Method,
    /// `None` for matching without a template.
    pub template_ratio: Option<f64>,
    pub template_size: Option<usize>,
    pub result: AttResult,
}

/// Balance rows tagged with the matching method and template ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedBalance {
    pub method: Option<Method>,
    pub template_ratio: Option<f64>,
    pub row: BalanceRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tau: f64,
    pub n_exposed: usize,
    pub n_unexposed: usize,
    pub alpha: Vec<f64>,
    pub stratum_labels: Vec<String>,
    pub propensity_coefficients: Vec<f64>,
    pub runs: Vec<AnalysisRun>,
    pub balance: Vec<TaggedBalance>,
}

fn rows_of<'a>(prepared: &'a PreparedSample<'_>, idx: impl Iterator<Item = usize>) -> Vec<&'a [f64]> {
    idx.map(|i| prepared.sample.subjects[i].covariates.as_slice()).collect()
}

/// Runs every configured method (template methods once per ratio) and
/// reports balance before and after matching.
pub fn analyze(ingested: &IngestedSample, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let prepared = prepare_dropping_redundant_strata(ingested, config)?;
    let settings = prepared.phi_settings(config.alpha_convention);
    let matching_covariates = if config.matching_covariates.is_empty() {
        None
    } else {
        Some(
            config
                .matching_covariates
                .iter()
                .map(|n| {
                    config
                        .covariates
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::Config(format!("matching covariate `{n}` is not a listed covariate")))
                })
                .collect::<Result<Vec<_>>>()?,
        )
    };

    let reference = BalanceReference::new(
        config.covariates.clone(),
        &rows_of(&prepared, prepared.exposed.iter().copied()),
        &rows_of(&prepared, prepared.unexposed.iter().copied()),
    )?;
    let mut balance: Vec<TaggedBalance> = reference
        .report(
            BalanceStage::PreMatch,
            &rows_of(&prepared, prepared.exposed.iter().copied()),
            &rows_of(&prepared, prepared.unexposed.iter().copied()),
        )?
        .into_iter()
        .map(|row| TaggedBalance { method: None, template_ratio: None, row })
        .collect();

    let mut plan: Vec<(Method, Option<f64>)> = Vec::new();
    for &method in &config.methods {
        if method.uses_template() {
            plan.extend(config.template_ratios.iter().map(|&r| (method, Some(r))));
        } else {
            plan.push((method, None));
        }
    }

    let mut runs = Vec::new();
    for (k, &(method, ratio)) in plan.iter().enumerate() {
        let mc = MatchingConfig {
            template_ratio: ratio.unwrap_or(1.0),
            n_candidates: config.n_candidates,
            matching_covariates: matching_covariates.clone(),
            phi_arm: config.phi_arm,
        };
        let mut template_rng = rng::stream(derive_seed(config.seed, purpose::TEMPLATES), k as u64);
        let (pairs, _) = prepared.match_method(method, &mc, &mut template_rng)?;
        let subjects = prepared.pair_subjects(&pairs);
        let stage = if method.uses_template() { BalanceStage::TemplateMatch } else { BalanceStage::PlainMatch };
        balance.extend(
            reference
                .report(
                    stage,
                    &rows_of(&prepared, subjects.iter().map(|p| p.0)),
                    &rows_of(&prepared, subjects.iter().map(|p| p.1)),
                )?
                .into_iter()
                .map(|row| TaggedBalance { method: Some(method), template_ratio: ratio, row }),
        );
        let records = prepared.pair_records(&pairs, method, &mc);
        let options = BootstrapOptions {
            draws: config.bootstrap,
            refit_phi: config.refit_phi,
            ci: config.ci,
            seed: derive_seed(config.seed, 16 + k as u64),
        };
        let result = analyze_pairs(&records, &settings, ingested.tau, method, &options)?;
        runs.push(AnalysisRun {
            method,
            template_ratio: ratio,
            template_size: ratio.map(|_| pairs.len()),
            result,
        });
    }

    Ok(AnalysisReport {
        tau: ingested.tau,
        n_exposed: prepared.exposed.len(),
        n_unexposed: prepared.unexposed.len(),
        alpha: ingested.sample.alpha.clone(),
        stratum_labels: ingested.stratum_labels.clone(),
        propensity_coefficients: prepared.propensity_fit.coefficients.clone(),
        runs,
        balance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> AnalysisConfig {
        AnalysisConfig { covariates: vec!["age".into()], ..AnalysisConfig::default() }
    }

    #[test]
    fn threshold_dichotomizes() {
        assert!(dichotomize(3.5, 3.0));
        assert!(!dichotomize(3.0, 3.0));
        assert!(!dichotomize(1.2, 3.0));
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "id,exposure,time,event,stratum,xi\n1,1,2.0,1,a,1\n";
        match read_records(csv.as_bytes(), &config()) {
            Err(Error::Config(m)) => assert!(m.contains("age")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_exposure_names_row() {
        let csv = "id,age,exposure,time,event,stratum,xi,rho\n1,50,1,2.0,1,a,1,1\n2,51,2,2.0,1,a,1,1\n";
        match read_records(csv.as_bytes(), &config()) {
            Err(Error::Validation { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_weight_names_row() {
        let csv = "id,age,exposure,time,event,stratum,xi,rho\n\
                   1,50,1,2.0,1,a,1,1\n\
                   2,51,0,3.0,0,a,1,4\n\
                   3,52,0,3.0,0,a,1,5\n";
        let mut cfg = config();
        cfg.alpha = Some(BTreeMap::from([("a".to_string(), 0.25)]));
        let recs = read_records(csv.as_bytes(), &cfg).unwrap();
        match build_sample(&recs, &cfg) {
            Err(Error::Validation { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_inferred_from_weights_and_tau_defaulted() {
        let csv = "id,age,exposure,time,event,stratum,xi,rho\n\
                   1,50,1,2.0,1,a,0,1\n\
                   2,51,0,3.0,0,a,1,4\n\
                   3,52,1,5.0,0,b,1,2\n\
                   4,53,0,4.0,1,b,0,1\n";
        let cfg = config();
        let ing = build_sample(&read_records(csv.as_bytes(), &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(ing.sample.alpha, vec![0.25, 0.5]);
        assert_eq!(ing.tau, 4.0);
        assert_eq!(ing.sample.subjects[2].obs_time, 4.0);
        assert!(ing.sample.subjects[2].event_generalized);
    }
}
