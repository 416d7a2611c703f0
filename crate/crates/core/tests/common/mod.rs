//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ccrmst::estimator::{ArmRecord, PairRecord};
use ccrmst::matching::CostMatrix;
use rand::Rng;

/// Minimum total over every injective row-to-column map, by recursion.
pub fn brute_force_min(costs: &CostMatrix) -> f64 {
    fn go(costs: &CostMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == costs.rows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..costs.cols() {
            if !used[j] {
                used[j] = true;
                best = best.min(costs.get(row, j) + go(costs, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(costs, 0, &mut vec![false; costs.cols()])
}

/// Every injective map as a list of totals computed left to right, so the
/// exact floating-point sum order matches a row-ordered accumulation.
pub fn brute_force_totals(costs: &CostMatrix) -> Vec<f64> {
    fn go(costs: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, out: &mut Vec<f64>) {
        if row == costs.rows() {
            out.push(acc);
            return;
        }
        for j in 0..costs.cols() {
            if !used[j] {
                used[j] = true;
                go(costs, row + 1, used, acc + costs.get(row, j), out);
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(costs, 0, &mut vec![false; costs.cols()], 0.0, &mut out);
    out
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (k, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[col + 1 + k] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Plain Newton-Raphson for the weighted logistic log-likelihood, intercept
/// first.
pub fn newton_logistic(y: &[bool], x: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for i in 0..y.len() {
            let z: Vec<f64> = std::iter::once(1.0).chain(x[i].iter().copied()).collect();
            let eta: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let r = if y[i] { 1.0 } else { 0.0 } - mu;
            for a in 0..p {
                grad[a] += w[i] * r * z[a];
                for b in 0..p {
                    hess[a][b] += w[i] * mu * (1.0 - mu) * z[a] * z[b];
                }
            }
        }
        let step = solve_linear(hess, grad);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if step.iter().all(|s| s.abs() < 1e-13) {
            break;
        }
    }
    beta
}

/// Textbook Nelson-Aalen: at each distinct event time `u <= tau`, add the
/// number of events at `u` over the number still at risk.
pub fn reference_nelson_aalen(times: &[f64], events: &[bool], tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(t, e)| **e && **t <= tau).map(|(t, _)| *t).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut h = 0.0;
    let mut values = Vec::new();
    for &u in &event_times {
        let d = times.iter().zip(events).filter(|(t, e)| **e && **t == u).count() as f64;
        let r = times.iter().filter(|t| **t >= u).count() as f64;
        h += d / r;
        values.push(h);
    }
    (event_times, values)
}

/// Unit-weight pairs on a coarse time grid so that ties are common.
pub fn unit_weight_pairs<R: Rng>(rng: &mut R, n: usize) -> Vec<PairRecord> {
    let arm = |rng: &mut R| ArmRecord {
        time: rng.random_range(1..=12) as f64 * 0.5,
        event: rng.random_bool(0.6),
        weight: 1.0,
    };
    (0..n)
        .map(|_| PairRecord {
            treated: arm(rng),
            control: arm(rng),
            phi_predictor: vec![rng.random()],
            control_stratum: 0,
        })
        .collect()
}
