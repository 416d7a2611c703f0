//! Distances, template selection, optimal matching and balance.

pub mod assignment;
pub mod balance;
pub mod distance;
pub mod template;

pub use assignment::{greedy, solve, Assignment, CostMatrix};
pub use balance::{BalanceMetric, BalanceReference, BalanceRow, BalanceStage};
pub use distance::{mahalanobis, weighted_covariance, DistanceKind, DistanceSpec};
pub use template::{draw_templates, optimal_match, select_template, MatchedPairSet};

use rand::Rng;

use crate::error::Result;

/// Template size from a template-to-unexposed ratio: `round(n0 / ratio)`.
pub fn template_size(n_unexposed: usize, ratio: f64) -> usize {
    (n_unexposed as f64 / ratio).round() as usize
}

/// Draws candidates, selects the template and matches controls to it.
pub fn template_match<R: Rng + ?Sized>(
    exposed: &[Vec<f64>],
    unexposed: &[Vec<f64>],
    kind: DistanceKind,
    m: usize,
    n_candidates: usize,
    rng: &mut R,
) -> Result<MatchedPairSet> {
    let candidates = draw_templates(exposed.len(), m, n_candidates, rng)?;
    let (best, _) = select_template(&candidates, exposed)?;
    optimal_match(&candidates[best], exposed, unexposed, kind, Some(best))
}

/// Matches every exposed subject to a distinct control.
pub fn plain_match(exposed: &[Vec<f64>], unexposed: &[Vec<f64>], kind: DistanceKind) -> Result<MatchedPairSet> {
    let members: Vec<usize> = (0..exposed.len()).collect();
    optimal_match(&members, exposed, unexposed, kind, None)
}
