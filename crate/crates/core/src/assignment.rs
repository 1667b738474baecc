//! Optimal (Hungarian) and greedy assignment with post-hoc gating.
//!
//! Costs are stored row-major; an infinite entry forbids that pairing. Both
//! solvers match as many rows as possible and then drop pairs whose cost
//! exceeds the gate.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} costs for a {rows}x{cols} matrix",
                costs.len()
            )));
        }
        if costs.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Error::Dimension("costs must be finite or +inf".into()));
        }
        Ok(CostMatrix { rows, cols, costs })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut costs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                costs.push(if v.is_nan() { f64::INFINITY } else { v });
            }
        }
        CostMatrix { rows, cols, costs }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged cost rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    /// Copy where every entry above `limit` is forbidden.
    pub fn forbid_above(&self, limit: f64) -> Self {
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            costs: self
                .costs
                .iter()
                .map(|&c| if c > limit { f64::INFINITY } else { c })
                .collect(),
        }
    }

    /// Sum of the costs of `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }

    fn transposed(&self) -> Self {
        CostMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

fn apply_gate(cost: &CostMatrix, pairs: Vec<(usize, usize)>, gate: Option<f64>) -> Vec<(usize, usize)> {
    match gate {
        Some(g) => pairs.into_iter().filter(|&(r, c)| cost.get(r, c) <= g).collect(),
        None => pairs,
    }
}

/// Minimum-cost matching of size `min(rows, cols)` over permitted pairs,
/// sorted by row. When forbidden entries make a full matching impossible the
/// largest feasible matching is returned. Pairs costing more than `gate` are
/// removed after solving.
pub fn hungarian(cost: &CostMatrix, gate: Option<f64>) -> Vec<(usize, usize)> {
    if cost.is_empty() {
        return Vec::new();
    }
    let mut pairs = if cost.rows <= cost.cols {
        solve_rows_le_cols(cost)
    } else {
        solve_rows_le_cols(&cost.transposed())
            .into_iter()
            .map(|(r, c)| (c, r))
            .collect()
    };
    pairs.sort_unstable();
    apply_gate(cost, pairs, gate)
}

/// Shortest augmenting path Hungarian method (potentials form), O(n²m).
fn solve_rows_le_cols(cost: &CostMatrix) -> Vec<(usize, usize)> {
    let (n, m) = (cost.rows, cost.cols);
    // forbidden entries become a penalty larger than any finite matching
    let finite_sum: f64 = cost.costs.iter().filter(|c| c.is_finite()).map(|c| c.abs()).sum();
    let big = 1.0 + 2.0 * finite_sum;
    let a = |i: usize, j: usize| {
        let c = cost.get(i, j);
        if c.is_finite() {
            c
        } else {
            big
        }
    };

    // 1-based arrays; p[j] = row matched to column j, 0 = none
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(r, c)| cost.get(r, c).is_finite())
        .collect()
}

/// Greedy matching: repeatedly take the globally cheapest remaining pair
/// (ties by lower row, then lower column) until one side is exhausted, then
/// remove pairs costing more than `gate`. Pairs are returned in selection
/// order.
pub fn greedy_assign(cost: &CostMatrix, gate: Option<f64>) -> Vec<(usize, usize)> {
    let mut entries: Vec<(f64, usize, usize)> = (0..cost.rows)
        .flat_map(|r| (0..cost.cols).map(move |c| (r, c)))
        .map(|(r, c)| (cost.get(r, c), r, c))
        .filter(|e| e.0.is_finite())
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; cost.rows];
    let mut col_used = vec![false; cost.cols];
    let mut pairs = Vec::new();
    let limit = cost.rows.min(cost.cols);
    for (_, r, c) in entries {
        if pairs.len() == limit {
            break;
        }
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            pairs.push((r, c));
        }
    }
    apply_gate(cost, pairs, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Exhaustive minimum over all injections of the smaller side.
    fn brute_force(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, skips: usize, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            if skips > 0 {
                rec(cost, row + 1, used, skips - 1, acc, best);
            }
            for c in 0..cost.cols() {
                if !used[c] {
                    used[c] = true;
                    rec(cost, row + 1, used, skips, acc + cost.get(row, c), best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let skips = cost.rows().saturating_sub(cost.cols());
        rec(cost, 0, &mut vec![false; cost.cols()], skips, 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_examples() {
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(hungarian(&a, None), vec![(0, 0), (1, 1)]);
        assert_eq!(a.total(&hungarian(&a, None)), 2.0);
        assert!(hungarian(&a, Some(0.5)).is_empty());

        let b = m(&[&[4.0, 1.0], &[2.0, 3.0]]);
        assert_eq!(hungarian(&b, None), vec![(0, 1), (1, 0)]);
        assert_eq!(b.total(&hungarian(&b, None)), 3.0);
    }

    #[test]
    fn greedy_examples() {
        let a = m(&[&[1.0, 5.0], &[2.0, 0.5]]);
        assert_eq!(greedy_assign(&a, None), vec![(1, 1), (0, 0)]);
        let id = CostMatrix::from_fn(4, 4, |r, c| if r == c { 0.0 } else { 10.0 });
        let mut g = greedy_assign(&id, None);
        g.sort_unstable();
        assert_eq!(g, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn greedy_ties_break_by_row_then_column() {
        let a = CostMatrix::from_fn(3, 3, |_, _| 1.0);
        assert_eq!(greedy_assign(&a, None), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn empty_and_rectangular() {
        assert!(hungarian(&CostMatrix::from_fn(0, 3, |_, _| 0.0), None).is_empty());
        assert!(greedy_assign(&CostMatrix::from_fn(2, 0, |_, _| 0.0), None).is_empty());
        let tall = m(&[&[5.0], &[1.0], &[3.0]]);
        assert_eq!(hungarian(&tall, None), vec![(1, 0)]);
        let wide = m(&[&[5.0, 1.0, 3.0]]);
        assert_eq!(hungarian(&wide, None), vec![(0, 1)]);
    }

    #[test]
    fn forbidden_pairs_are_never_matched() {
        let inf = f64::INFINITY;
        let a = m(&[&[inf, 1.0], &[inf, 2.0]]);
        assert_eq!(hungarian(&a, None), vec![(0, 1)]);
        assert_eq!(greedy_assign(&a, None), vec![(0, 1)]);
        // maximum cardinality beats cheaper partial matchings
        let b = m(&[&[0.0, 10.0], &[inf, 1.0]]).forbid_above(5.0);
        assert_eq!(hungarian(&b, None), vec![(0, 0), (1, 1)]);
        let c = m(&[&[1.0, 2.0], &[inf, 1.0]]).forbid_above(1.5);
        assert_eq!(hungarian(&c, None), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn bad_matrices_are_rejected() {
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(CostMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0..100.0f64, r * c)
                .prop_map(move |v| CostMatrix::new(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(cost in matrix()) {
            let pairs = hungarian(&cost, None);
            prop_assert_eq!(pairs.len(), cost.rows().min(cost.cols()));
            prop_assert!((cost.total(&pairs) - brute_force(&cost)).abs() < 1e-9);
        }

        #[test]
        fn greedy_never_beats_hungarian(cost in matrix()) {
            let g = greedy_assign(&cost, None);
            let h = hungarian(&cost, None);
            prop_assert_eq!(g.len(), h.len());
            prop_assert!(cost.total(&h) <= cost.total(&g) + 1e-9);
        }

        #[test]
        fn matchings_are_injective_and_gated(cost in matrix(), gate in 0.0..100.0f64) {
            for pairs in [hungarian(&cost, Some(gate)), greedy_assign(&cost, Some(gate))] {
                let mut rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
                let mut cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
                rows.sort_unstable();
                cols.sort_unstable();
                rows.dedup();
                cols.dedup();
                prop_assert_eq!(rows.len(), pairs.len());
                prop_assert_eq!(cols.len(), pairs.len());
                prop_assert!(pairs.iter().all(|&(r, c)| cost.get(r, c) <= gate));
            }
        }
    }
}
