//! Candidate templates drawn from the exposed group, selection of the most
//! representative one, and optimal one-to-one matching to it.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assignment::{self, CostMatrix};
use super::distance::{embedded_distance, DistanceKind};
use crate::error::{Error, Result};

/// `n_candidates` simple random subsets of size `m` of `0..n_exposed`,
/// each sorted ascending.
pub fn draw_templates<R: Rng + ?Sized>(
    n_exposed: usize,
    m: usize,
    n_candidates: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m >= n_exposed {
        return Err(Error::domain(format!(
            "template size {m} must be positive and smaller than the exposed group ({n_exposed})"
        )));
    }
    if n_candidates == 0 {
        return Err(Error::domain("at least one candidate template is required"));
    }
    Ok((0..n_candidates)
        .map(|_| {
            let mut t = index::sample(rng, n_exposed, m).into_vec();
            t.sort_unstable();
            t
        })
        .collect())
}

/// Total distance from each exposed member to the whole exposed group.
pub fn exposed_row_sums(exposed: &[Vec<f64>]) -> Vec<f64> {
    exposed
        .par_iter()
        .map(|a| exposed.iter().map(|b| embedded_distance(a, b)).sum())
        .collect()
}

/// Index and total of the candidate whose members are closest in total to
/// the full exposed group; ties go to the lowest index.
pub fn select_template(candidates: &[Vec<usize>], exposed: &[Vec<f64>]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidate templates"));
    }
    let row_sums = exposed_row_sums(exposed);
    let totals: Vec<f64> = candidates
        .iter()
        .map(|c| c.iter().map(|&i| row_sums[i]).sum())
        .collect();
    let mut best = 0;
    for (i, &t) in totals.iter().enumerate() {
        if t < totals[best] {
            best = i;
        }
    }
    Ok((best, totals[best]))
}

/// Matched pairs as `(exposed, unexposed)` indices into the caller's
/// exposed and unexposed lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairSet {
    pub pairs: Vec<(usize, usize)>,
    pub total_distance: f64,
    pub kind: DistanceKind,
    /// Selected candidate, or `None` when every exposed subject was matched.
    pub template_id: Option<usize>,
}

impl MatchedPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Exact minimum-total-distance matching of distinct unexposed subjects to
/// the given exposed members.
pub fn optimal_match(
    members: &[usize],
    exposed: &[Vec<f64>],
    unexposed: &[Vec<f64>],
    kind: DistanceKind,
    template_id: Option<usize>,
) -> Result<MatchedPairSet> {
    if members.len() > unexposed.len() {
        return Err(Error::Infeasible { rows: members.len(), cols: unexposed.len() });
    }
    let costs = CostMatrix::from_fn(members.len(), unexposed.len(), |i, j| {
        embedded_distance(&exposed[members[i]], &unexposed[j])
    });
    let solution = assignment::solve(&costs)?;
    let pairs = members.iter().copied().zip(solution.row_to_col).collect();
    Ok(MatchedPairSet { pairs, total_distance: solution.total, kind, template_id })
}
