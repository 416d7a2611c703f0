//! Covariate balance: standardized mean differences for continuous
//! covariates and proportion differences for binary ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStage {
    PreMatch,
    PlainMatch,
    TemplateMatch,
}

impl BalanceStage {
    pub fn label(self) -> &'static str {
        match self {
            BalanceStage::PreMatch => "pre_match",
            BalanceStage::PlainMatch => "plain_match",
            BalanceStage::TemplateMatch => "template_match",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMetric {
    Smd,
    ProportionDifference,
}

impl BalanceMetric {
    pub fn label(self) -> &'static str {
        match self {
            BalanceMetric::Smd => "smd",
            BalanceMetric::ProportionDifference => "proportion_difference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub stage: BalanceStage,
    pub metric: BalanceMetric,
    /// `None` when the pooled SD is zero but the means differ.
    pub value: Option<f64>,
}

/// Reference scale for every stage: the pre-match groups.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReference {
    pub names: Vec<String>,
    pub binary: Vec<bool>,
    pub pooled_sd: Vec<f64>,
}

fn mean_var(rows: &[&[f64]], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// `sqrt(((n1 - 1) s1^2 + (n0 - 1) s0^2) / (n1 + n0 - 2))`.
pub fn pooled_sd(n1: usize, sd1: f64, n0: usize, sd0: f64) -> f64 {
    let (a, b) = ((n1 as f64 - 1.0).max(0.0), (n0 as f64 - 1.0).max(0.0));
    if a + b == 0.0 {
        return 0.0;
    }
    ((a * sd1 * sd1 + b * sd0 * sd0) / (a + b)).sqrt()
}

impl BalanceReference {
    pub fn new(names: Vec<String>, exposed: &[&[f64]], unexposed: &[&[f64]]) -> Result<Self> {
        if exposed.is_empty() || unexposed.is_empty() {
            return Err(Error::domain("balance needs both exposure groups"));
        }
        let p = names.len();
        if exposed.iter().chain(unexposed).any(|r| r.len() != p) {
            return Err(Error::contract("covariate rows do not match the covariate names"));
        }
        let binary = (0..p)
            .map(|j| exposed.iter().chain(unexposed).all(|r| r[j] == 0.0 || r[j] == 1.0))
            .collect();
        let pooled_sd = (0..p)
            .map(|j| {
                let (_, v1) = mean_var(exposed, j);
                let (_, v0) = mean_var(unexposed, j);
                pooled_sd(exposed.len(), v1.sqrt(), unexposed.len(), v0.sqrt())
            })
            .collect();
        Ok(BalanceReference { names, binary, pooled_sd })
    }

    /// Balance of one pair of groups on the reference scale.
    pub fn report(&self, stage: BalanceStage, exposed: &[&[f64]], unexposed: &[&[f64]]) -> Result<Vec<BalanceRow>> {
        if exposed.is_empty() || unexposed.is_empty() {
            return Err(Error::domain("balance needs both exposure groups"));
        }
        Ok((0..self.names.len())
            .map(|j| {
                let diff = mean_var(exposed, j).0 - mean_var(unexposed, j).0;
                let (metric, value) = if self.binary[j] {
                    (BalanceMetric::ProportionDifference, Some(diff))
                } else if self.pooled_sd[j] > 0.0 {
                    (BalanceMetric::Smd, Some(diff / self.pooled_sd[j]))
                } else if diff == 0.0 {
                    (BalanceMetric::Smd, Some(0.0))
                } else {
                    (BalanceMetric::Smd, None)
                };
                BalanceRow { covariate: self.names[j].clone(), stage, metric, value }
            })
            .collect())
    }
}

/// Mean absolute balance value over the covariates with a defined value.
pub fn mean_abs_imbalance(rows: &[BalanceRow]) -> f64 {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.value.map(f64::abs)).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}
