use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EmpiricalMeasure;

/// A bijection between the atoms of two uniform measures of equal size.
/// `perm[j]` is the atom of the second measure coupled to atom `j` of the
/// first, and `cost` is `(1/M) Σ_j ‖y_j − x_{perm[j]}‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

impl Assignment {
    /// Optimal coupling between the atoms of `y` (rows) and `x` (columns).
    pub fn optimal(y: &EmpiricalMeasure, x: &EmpiricalMeasure) -> Result<Self> {
        check_compatible(y, x)?;
        let cost = cost_matrix(y, x);
        let perm = solve_assignment(&cost, y.len());
        Ok(Assignment::with_perm(y, x, perm))
    }

    /// The coupling given by `perm`, with its cost evaluated between `y` and `x`.
    pub fn with_perm(y: &EmpiricalMeasure, x: &EmpiricalMeasure, perm: Vec<usize>) -> Self {
        let total: f64 = perm.iter().enumerate().map(|(j, &i)| sq_dist(y.atom(j), x.atom(i))).sum();
        Assignment {
            cost: total / y.len() as f64,
            perm,
        }
    }

    /// `inv[i]` is the atom of the first measure coupled to atom `i` of the second.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (j, &i) in self.perm.iter().enumerate() {
            inv[i] = j;
        }
        inv
    }
}

pub(crate) fn check_compatible(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::UnequalAtomCounts {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.atom_dim() != b.atom_dim() {
        return Err(Error::DimensionMismatch {
            what: "atom dimension",
            expected: a.atom_dim(),
            found: b.atom_dim(),
        });
    }
    Ok(())
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cost_matrix(y: &EmpiricalMeasure, x: &EmpiricalMeasure) -> Vec<f64> {
    let m = y.len();
    let mut cost = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            cost.push(sq_dist(y.atom(j), x.atom(i)));
        }
    }
    cost
}

/// Minimum-cost perfect matching for a row-major `n × n` cost matrix by the
/// shortest augmenting path method with dual potentials, `O(n³)`. Returns
/// the column matched to each row. Ties go to the lowest column index
/// reached in row-scan order.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    // 1-based: index 0 is the virtual column used to start each augmentation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        while col0 != 0 {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
        }
    }
    let mut perm = vec![0; n];
    for col in 1..=n {
        perm[row_of[col] - 1] = col - 1;
    }
    perm
}

/// Exact 2-Wasserstein distance between two uniform measures with the same
/// number of atoms, together with the optimal coupling.
pub fn w2_empirical(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, Assignment)> {
    let a = Assignment::optimal(mu, nu)?;
    Ok((a.cost.sqrt(), a))
}
