//! Synthetic cardiovascular-cohort-like data for exercising the dataset
//! workflow: ten baseline covariates, a continuous inflammation marker
//! dichotomized into exposure, strata from sex, race and age group, and a
//! stratified case-cohort sample of the cohort.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::ccsample::sampling_weight;
use crate::error::Result;
use crate::rng::{self, purpose};
use crate::stats::expit;

pub const COVARIATES: [&str; 10] = [
    "age", "male", "black", "bmi", "sbp", "total_chol", "hdl", "diabetes", "hypertension", "smoker",
];

/// Marker level above which a subject counts as exposed.
pub const CRP_THRESHOLD: f64 = 3.0;
/// End of administrative follow-up, in days.
pub const MAX_FOLLOW_UP: f64 = 9_125.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureRow {
    pub id: usize,
    pub covariates: [f64; 10],
    pub crp: f64,
    pub time: f64,
    pub event: bool,
    pub stratum: String,
    pub xi: bool,
    pub rho: f64,
}

struct CohortMember {
    covariates: [f64; 10],
    crp: f64,
    time: f64,
    event: bool,
    stratum: String,
}

fn member<R: Rng + ?Sized>(rng: &mut R) -> CohortMember {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut z = || std.sample(rng);
    let age = 45.0 + 19.0 * expit(1.2 * z()).clamp(0.0, 1.0);
    let (u1, u2, u3) = (z(), z(), z());
    let male = (u1 < -0.1) as u8 as f64;
    let black = (u2 > 0.75) as u8 as f64;
    let bmi = (27.5 + 1.2 * black - 0.5 * male + 5.0 * z()).max(16.0);
    let sbp = 105.0 + 0.5 * (age - 45.0) + 0.4 * (bmi - 27.5) + 5.0 * black + 15.0 * z();
    let total_chol = 212.0 + 0.6 * (age - 45.0) - 6.0 * male + 40.0 * z();
    let hdl = (55.0 - 9.0 * male - 0.6 * (bmi - 27.5) + 14.0 * z()).max(15.0);
    let diabetes = (z() < -1.9 + 0.08 * (bmi - 27.5) + 0.03 * (age - 45.0)) as u8 as f64;
    let hypertension = (sbp > 135.0 || z() > 1.4) as u8 as f64;
    let smoker = (u3 > 0.65) as u8 as f64;
    let log_crp = 0.8 + 0.09 * (bmi - 27.5) - 0.25 * male + 0.2 * black + 0.3 * diabetes + 0.25 * smoker + 0.9 * z();
    let crp = log_crp.exp();

    let lp = 0.06 * (age - 55.0) + 0.8 * male + 0.2 * black + 0.02 * (bmi - 27.5) + 0.015 * (sbp - 120.0)
        + 0.006 * (total_chol - 210.0)
        - 0.02 * (hdl - 50.0)
        + 0.6 * diabetes
        + 0.3 * hypertension
        + 0.6 * smoker
        + 0.2 * (crp > CRP_THRESHOLD) as u8 as f64;
    let h = 3.5e-6 * lp.exp();
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    let t_event = e1 / h;
    let t_censor = (e2 / 2.0e-5).min(MAX_FOLLOW_UP);
    let time = t_event.min(t_censor).round().max(1.0);
    let event = t_event <= t_censor;
    let stratum = format!(
        "{}{}{}",
        if male == 1.0 { "M" } else { "F" },
        if black == 1.0 { "B" } else { "W" },
        if age >= 55.0 { "O" } else { "Y" }
    );
    CohortMember {
        covariates: [age, male, black, bmi, sbp, total_chol, hdl, diabetes, hypertension, smoker],
        crp,
        time,
        event,
        stratum,
    }
}

/// Generates a cohort of `n_cohort` and returns its stratified case-cohort
/// sample (all cases plus a Bernoulli subcohort with roughly one control
/// per case in each stratum).
pub fn generate(n_cohort: usize, seed: u64) -> Vec<FixtureRow> {
    let mut rng = rng::stream(seed, purpose::COHORT);
    let cohort: Vec<CohortMember> = (0..n_cohort).map(|_| member(&mut rng)).collect();

    let mut labels: Vec<&str> = cohort.iter().map(|m| m.stratum.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let alpha = |label: &str| {
        let (cases, non): (Vec<&CohortMember>, Vec<&CohortMember>) =
            cohort.iter().filter(|m| m.stratum == label).partition(|m| m.event);
        if non.is_empty() {
            1.0
        } else {
            (cases.len() as f64 / non.len() as f64).clamp(0.05, 1.0)
        }
    };
    let alphas: Vec<(String, f64)> = labels.iter().map(|l| (l.to_string(), alpha(l))).collect();

    let mut srng = rng::stream(seed, purpose::SAMPLING);
    cohort
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let a = alphas.iter().find(|(l, _)| *l == m.stratum).unwrap().1;
            let xi = srng.random::<f64>() < a;
            let rho = sampling_weight(m.event, xi, a);
            (rho > 0.0).then(|| FixtureRow {
                id: i + 1,
                covariates: m.covariates,
                crp: m.crp,
                time: m.time,
                event: m.event,
                stratum: m.stratum,
                xi,
                rho,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[FixtureRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["id"];
    header.extend(COVARIATES);
    header.extend(["crp", "time", "event", "stratum", "xi", "rho"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.id.to_string()];
        for (j, v) in r.covariates.iter().enumerate() {
            // continuous covariates to one decimal, indicators as integers
            rec.push(if matches!(j, 1 | 2 | 7 | 8 | 9) { format!("{v:.0}") } else { format!("{v:.1}") });
        }
        rec.push(format!("{:.2}", r.crp));
        rec.push(format!("{:.0}", r.time));
        rec.push((r.event as u8).to_string());
        rec.push(r.stratum.clone());
        rec.push((r.xi as u8).to_string());
        rec.push(format!("{}", r.rho));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
