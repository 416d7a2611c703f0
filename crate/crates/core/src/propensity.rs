//! Weighted logistic regression (IRLS) for propensity scores, and the
//! event-probability model behind the expected control weight `phi`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::expit;

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// Relative pivot below which a design column counts as collinear.
const RANK_TOLERANCE: f64 = 1e-10;
/// Coefficient magnitude beyond which pinned fits are reported as separated.
const SEPARATION_COEF: f64 = 15.0;

/// Row-major design matrix without the intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Design {
    pub fn new(rows: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let cols = names.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::contract(format!("design row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Design { rows: rows.len(), cols, data, names })
    }

    /// Columns named `x1..xp`.
    pub fn unnamed(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        Design::new(rows, (1..=p).map(|j| format!("x{j}")).collect())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one slope per design column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub max_weighted_gradient_norm: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len() + 1, self.coefficients.len(), "covariate dimension mismatch");
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogisticOptions {
    /// Ridge added to the diagonal of the information matrix (slopes and
    /// intercept alike); zero reproduces the plain MLE.
    pub ridge: f64,
}

fn augmented(x: &Design, i: usize) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(1.0).chain(x.row(i).iter().copied())
}

/// Names the first column that is a linear combination of earlier ones on
/// the positively weighted rows.
fn check_rank(x: &Design, w: &[f64]) -> Result<()> {
    let p = x.ncols() + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for (i, _) in w.iter().enumerate().filter(|(_, &wi)| wi > 0.0) {
        let row: Vec<f64> = augmented(x, i).collect();
        for a in 0..p {
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    // Cholesky with explicit pivot inspection.
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let diag = gram[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if diag <= RANK_TOLERANCE * gram[(j, j)].max(1.0) {
            let column = if j == 0 { "(intercept)".to_string() } else { x.names()[j - 1].clone() };
            return Err(Error::RankDeficient { column });
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..p {
            let s = gram[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / d;
        }
    }
    Ok(())
}

fn weighted_log_likelihood(x: &Design, y: &[bool], w: &[f64], beta: &DVector<f64>) -> f64 {
    (0..x.nrows())
        .filter(|&i| w[i] > 0.0)
        .map(|i| {
            let eta: f64 = augmented(x, i).zip(beta.iter()).map(|(a, b)| a * b).sum();
            // log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
            let ll = if y[i] { -softplus(-eta) } else { -softplus(eta) };
            w[i] * ll
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Maximizes `sum w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]` by IRLS with
/// step halving.
pub fn fit_weighted_logistic(y: &[bool], x: &Design, w: &[f64]) -> Result<LogisticFit> {
    fit_weighted_logistic_with(y, x, w, LogisticOptions::default())
}

pub fn fit_weighted_logistic_with(y: &[bool], x: &Design, w: &[f64], options: LogisticOptions) -> Result<LogisticFit> {
    let n = x.nrows();
    if y.len() != n || w.len() != n {
        return Err(Error::contract("response, design and weights differ in length"));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    let has = |cls: bool| (0..n).any(|i| y[i] == cls && w[i] > 0.0);
    if !has(true) || !has(false) {
        return Err(Error::domain("logistic regression needs both outcomes with positive weight"));
    }
    check_rank(x, w)?;

    let p = x.ncols() + 1;
    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = weighted_log_likelihood(x, y, w, &beta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            if w[i] <= 0.0 {
                continue;
            }
            let row: Vec<f64> = augmented(x, i).collect();
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let resid = w[i] * ((y[i] as u8 as f64) - mu);
            let curv = w[i] * mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += resid * row[a];
                for b in 0..=a {
                    info[(a, b)] += curv * row[a] * row[b];
                }
            }
        }
        grad_norm = grad.amax();
        if grad_norm < SCORE_TOLERANCE {
            converged = true;
            break;
        }
        for a in 0..p {
            info[(a, a)] += options.ridge;
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        iterations += 1;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_ll = weighted_log_likelihood(x, y, w, &candidate);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let pinned = (0..n).filter(|&i| w[i] > 0.0).any(|i| {
        let eta: f64 = augmented(x, i).zip(beta.iter()).map(|(a, b)| a * b).sum();
        let mu = expit(eta);
        mu * (1.0 - mu) < 1e-10
    });
    let separated = pinned && beta.amax() > SEPARATION_COEF;
    if separated {
        converged = false;
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::contract("logistic coefficients are not finite"));
    }
    Ok(LogisticFit {
        coefficients,
        converged,
        separated,
        iterations,
        max_weighted_gradient_norm: grad_norm,
    })
}

/// Fitted probability for one covariate vector, kept strictly inside (0, 1).
pub fn predict_propensity(fit: &LogisticFit, x: &[f64]) -> f64 {
    expit(fit.linear_predictor(x)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Which subject features the event-probability model conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiPredictor {
    Propensity,
    Covariates,
}

/// Sampling probability entering `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaConvention {
    /// One pooled subcohort probability for every subject.
    Single,
    /// The subject's own stratum probability.
    Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventModel {
    Logistic(LogisticFit),
    /// Degenerate outcome (all events or none): the sample mean.
    Constant(f64),
}

/// `phi(z) = E(delta | z) + (1 - E(delta | z)) / alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiFunction {
    pub model: EventModel,
    pub convention: AlphaConvention,
    /// Per-stratum probabilities (used under the stratum convention).
    pub alpha: Vec<f64>,
    pub pooled_alpha: f64,
    pub warning: Option<String>,
}

impl PhiFunction {
    pub fn expected_event(&self, z: &[f64]) -> f64 {
        match &self.model {
            EventModel::Logistic(fit) => predict_propensity(fit, z),
            EventModel::Constant(m) => *m,
        }
    }

    pub fn alpha_for(&self, stratum: usize) -> f64 {
        match self.convention {
            AlphaConvention::Single => self.pooled_alpha,
            AlphaConvention::Stratum => self.alpha[stratum],
        }
    }

    pub fn eval(&self, z: &[f64], stratum: usize) -> f64 {
        phi_value(self.expected_event(z), self.alpha_for(stratum))
    }
}

pub fn phi_value(expected_event: f64, alpha: f64) -> f64 {
    expected_event + (1.0 - expected_event) / alpha
}

/// Unweighted logistic model of the case indicator on the matched
/// unexposed subjects' predictors.
pub fn fit_phi(
    events: &[bool],
    predictors: &[Vec<f64>],
    alpha: &[f64],
    pooled_alpha: f64,
    convention: AlphaConvention,
) -> Result<PhiFunction> {
    if events.is_empty() || events.len() != predictors.len() {
        return Err(Error::contract("phi needs one predictor row per matched unexposed subject"));
    }
    if alpha.iter().chain(std::iter::once(&pooled_alpha)).any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::domain("sampling probabilities must lie in (0, 1]"));
    }
    let n_events = events.iter().filter(|&&e| e).count();
    let mut warning = None;
    let model = if n_events == 0 || n_events == events.len() {
        warning = Some(format!("degenerate event indicator ({n_events} of {}); using the sample mean", events.len()));
        EventModel::Constant(n_events as f64 / events.len() as f64)
    } else {
        let design = Design::unnamed(predictors.to_vec())?;
        let w = vec![1.0; events.len()];
        let fit = fit_weighted_logistic(events, &design, &w)?;
        if !fit.converged {
            warning = Some(format!(
                "event model did not converge after {} iterations{}",
                fit.iterations,
                if fit.separated { " (separation)" } else { "" }
            ));
        }
        EventModel::Logistic(fit)
    };
    if let Some(w) = &warning {
        log::debug!("{w}");
    }
    Ok(PhiFunction { model, convention, alpha: alpha.to_vec(), pooled_alpha, warning })
}
