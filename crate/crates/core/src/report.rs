//! CSV and JSON outputs.

use std::io::Write;

use serde::Serialize;

use crate::analysis::{AnalysisReport, TaggedBalance};
use crate::ccsample::CaseCohortSample;
use crate::error::Result;
use crate::experiment::{MethodMetrics, ReplicationRecord};
use crate::survival::{StepCurve, Subject};

/// Version of the JSON run record layout.
pub const SCHEMA_VERSION: u32 = 1;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn cohort_header(p: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((1..=p).map(|j| format!("x{j}")));
    h.extend(["a", "time", "delta", "delta_star", "stratum"].map(String::from));
    h
}

fn cohort_fields(s: &Subject) -> Vec<String> {
    let mut rec = vec![s.id.clone()];
    rec.extend(s.covariates.iter().map(|v| v.to_string()));
    rec.push((s.exposed as u8).to_string());
    rec.push(s.obs_time.to_string());
    rec.push((s.event_conventional as u8).to_string());
    rec.push((s.event_generalized as u8).to_string());
    rec.push(s.stratum.to_string());
    rec
}

/// Full cohort: `id, x1..xp, a, time, delta, delta_star, stratum`.
pub fn write_cohort<W: Write>(subjects: &[Subject], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(cohort_header(subjects.first().map_or(0, |s| s.covariates.len())))?;
    for s in subjects {
        w.write_record(cohort_fields(s))?;
    }
    w.flush()?;
    Ok(())
}

/// Case-cohort sample: the cohort columns plus `xi, rho, alpha_stratum`.
pub fn write_case_cohort<W: Write>(sample: &CaseCohortSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = cohort_header(sample.subjects.first().map_or(0, |s| s.covariates.len()));
    header.extend(["xi", "rho", "alpha_stratum"].map(String::from));
    w.write_record(&header)?;
    for s in &sample.subjects {
        let mut rec = cohort_fields(s);
        rec.push((s.in_subcohort() as u8).to_string());
        rec.push(s.weight().to_string());
        rec.push(sample.alpha_of(s).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Experiment metrics, one row per method.
pub fn write_metrics<W: Write>(metrics: &[MethodMetrics], true_effect: f64, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n", "n_failed", "true_effect", "mean_att", "percent_bias", "sem", "see", "sem_over_see", "coverage"])?;
    for m in metrics {
        w.write_record([
            m.method.label().to_string(),
            m.n.to_string(),
            m.n_failed.to_string(),
            true_effect.to_string(),
            m.mean_att.to_string(),
            m.percent_bias.to_string(),
            m.sem.to_string(),
            fmt_opt(m.see),
            fmt_opt(m.see.map(|s| m.sem / s)),
            m.coverage.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replication estimates.
pub fn write_replications<W: Write>(records: &[ReplicationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replication", "method", "att", "se", "ci_low", "ci_high", "n_pairs", "missing_draws", "tau"])?;
    for r in records {
        w.write_record([
            r.replication.to_string(),
            r.method.label().to_string(),
            r.att.to_string(),
            r.se.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n_pairs.to_string(),
            r.n_missing_draws.to_string(),
            r.tau.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// ATT table of a dataset analysis.
pub fn write_att_table<W: Write>(report: &AnalysisReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "template_ratio", "template_size", "n_pairs", "att", "se", "ci_low", "ci_high", "rmst_treated", "rmst_control", "missing_draws"])?;
    for r in &report.runs {
        let e = &r.result.estimate;
        w.write_record([
            r.method.label().to_string(),
            fmt_opt(r.template_ratio),
            r.template_size.map_or_else(|| "NA".into(), |m| m.to_string()),
            e.n_pairs.to_string(),
            e.att.to_string(),
            e.se.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
            e.rmst_treated.to_string(),
            e.rmst_control.to_string(),
            r.result.n_missing_draws.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Balance rows: `method, template_ratio, covariate, stage, metric, value`.
pub fn write_balance<W: Write>(rows: &[TaggedBalance], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "template_ratio", "covariate", "stage", "metric", "value"])?;
    for t in rows {
        w.write_record([
            t.method.map_or("none", |m| m.label()).to_string(),
            fmt_opt(t.template_ratio),
            t.row.covariate.clone(),
            t.row.stage.label().to_string(),
            t.row.metric.label().to_string(),
            fmt_opt(t.row.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A labelled pair of hazard curves.
pub struct CurveSet<'a> {
    pub label: String,
    pub hazard_treated: &'a StepCurve,
    pub hazard_control: &'a StepCurve,
}

/// Step-curve dump: `label, arm, time, cumulative_hazard, survival`.
pub fn write_curves<W: Write>(sets: &[CurveSet<'_>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "arm", "time", "cumulative_hazard", "survival"])?;
    for set in sets {
        for (arm, curve) in [("treated", set.hazard_treated), ("control", set.hazard_control)] {
            w.write_record([set.label.clone(), arm.into(), "0".into(), "0".into(), "1".into()])?;
            for (t, h) in curve.times().iter().zip(curve.values()) {
                w.write_record([set.label.clone(), arm.into(), t.to_string(), h.to_string(), (-h).exp().to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Provenance record written next to every result table.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub crate_version: &'static str,
    pub command: String,
    pub config: C,
    pub results: R,
}

impl<C: Serialize, R: Serialize> RunRecord<C, R> {
    pub fn new(command: &str, config: C, results: R) -> Self {
        RunRecord { schema_version: SCHEMA_VERSION, crate_version: env!("CARGO_PKG_VERSION"), command: command.into(), config, results }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}
