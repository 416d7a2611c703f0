//! Exact rectangular linear assignment by shortest augmenting paths with
//! dual potentials (Hungarian method, O(rows^2 * cols)).

use crate::error::{Error, Result};

/// Dense row-major cost matrix with `rows <= cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract("cost matrix data does not match its shape"));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend((0..cols).map(|j| f(i, j)));
        }
        CostMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    /// Sum of the assigned costs, accumulated in row order.
    pub total: f64,
}

/// Minimum-cost injective assignment of every row to a distinct column.
/// Ties resolve deterministically by input order.
pub fn solve(costs: &CostMatrix) -> Result<Assignment> {
    let (n, m) = (costs.rows, costs.cols);
    if n > m {
        return Err(Error::Infeasible { rows: n, cols: m });
    }
    if costs.data.iter().any(|c| !c.is_finite()) {
        return Err(Error::contract("assignment costs must be finite"));
    }
    if n == 0 {
        return Ok(Assignment { row_to_col: Vec::new(), total: 0.0 });
    }

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);

        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = costs.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] > 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| costs.get(i, j)).sum();
    Ok(Assignment { row_to_col, total })
}

/// Row-by-row nearest free column; an upper bound on the optimum.
pub fn greedy(costs: &CostMatrix) -> Result<Assignment> {
    if costs.rows > costs.cols {
        return Err(Error::Infeasible { rows: costs.rows, cols: costs.cols });
    }
    let mut taken = vec![false; costs.cols];
    let mut row_to_col = Vec::with_capacity(costs.rows);
    for i in 0..costs.rows {
        let (j, _) = costs
            .row(i)
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .fold((usize::MAX, f64::INFINITY), |best, (j, &c)| if c < best.1 { (j, c) } else { best });
        taken[j] = true;
        row_to_col.push(j);
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| costs.get(i, j)).sum();
    Ok(Assignment { row_to_col, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_takes_nearest_column() {
        let c = CostMatrix::new(1, 4, vec![3.0, 1.0, 2.0, 1.0]).unwrap();
        let a = solve(&c).unwrap();
        assert_eq!(a.row_to_col, vec![1]);
        assert_eq!(a.total, 1.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let c = CostMatrix::from_fn(4, 6, |i, j| if i == j { 0.0 } else { 1.0 + (i + j) as f64 });
        let a = solve(&c).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1, 2, 3]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn greedy_is_not_optimal_here() {
        let c = CostMatrix::new(2, 2, vec![1.0, 2.0, 1.5, 10.0]).unwrap();
        assert_eq!(solve(&c).unwrap().total, 3.5);
        assert_eq!(greedy(&c).unwrap().total, 11.0);
    }

    #[test]
    fn more_rows_than_columns_is_infeasible() {
        let c = CostMatrix::from_fn(3, 2, |_, _| 1.0);
        assert!(matches!(solve(&c), Err(Error::Infeasible { rows: 3, cols: 2 })));
    }

    #[test]
    fn non_finite_costs_rejected() {
        let c = CostMatrix::new(1, 2, vec![f64::NAN, 1.0]).unwrap();
        assert!(solve(&c).is_err());
    }
}
