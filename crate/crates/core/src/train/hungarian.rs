//! Minimum-cost one-to-one assignment on rectangular cost matrices.

use crate::error::{Error, Result};

/// Assignment pairs `(row, column)`, sorted by row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    /// Columns left without a row because there were fewer rows than columns.
    pub unmatched_columns: Vec<usize>,
}

/// Kuhn-Munkres with potentials (shortest augmenting paths), `O(n^2 m)`.
///
/// `cost` is row-major `rows x cols`; rows are predictions and columns
/// ground truths. When `rows >= cols` every column is matched.
pub fn hungarian_match(cost: &[f64], rows: usize, cols: usize) -> Result<MatchResult> {
    if cost.len() != rows * cols {
        return Err(Error::Shape {
            op: "hungarian_match",
            detail: format!("{} costs for a {rows}x{cols} matrix", cost.len()),
        });
    }
    if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!(
            "cost of prediction {} and ground truth {} is {}",
            i / cols,
            i % cols,
            cost[i]
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(MatchResult { unmatched_columns: (0..cols).collect(), ..Default::default() });
    }
    // the algorithm assigns every row of an n x m matrix with n <= m
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j * cols + i] } else { cost[i * cols + j] };

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (a, b) = (owner[j] - 1, j - 1);
            if transposed {
                (b, a)
            } else {
                (a, b)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum();
    let mut matched = vec![false; cols];
    pairs.iter().for_each(|&(_, c)| matched[c] = true);
    let unmatched_columns = (0..cols).filter(|&c| !matched[c]).collect();
    Ok(MatchResult { pairs, total_cost, unmatched_columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injective maps from the smaller side.
    fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], rows: usize, cols: usize, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if r == rows {
                *best = best.min(acc);
                return;
            }
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    rec(cost, rows, cols, r + 1, used, acc + cost[r * cols + c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        if rows <= cols {
            rec(cost, rows, cols, 0, &mut vec![false; cols], 0.0, &mut best);
        } else {
            let t: Vec<f64> = (0..cols).flat_map(|c| (0..rows).map(move |r| cost[r * cols + c])).collect();
            rec(&t, cols, rows, 0, &mut vec![false; rows], 0.0, &mut best);
        }
        best
    }

    #[test]
    fn two_by_two_picks_the_diagonal() {
        let m = hungarian_match(&[1.0, 2.0, 2.0, 1.0], 2, 2).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total_cost, 2.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 5;
        let cost: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 0.0 } else { 1.0 + i as f64 }).collect();
        let m = hungarian_match(&cost, n, n).unwrap();
        assert_eq!(m.pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn nan_cost_names_the_pair() {
        let err = hungarian_match(&[0.0, 1.0, f64::NAN, 2.0], 2, 2).unwrap_err().to_string();
        assert!(err.contains("prediction 1") && err.contains("ground truth 0"), "{err}");
    }

    #[test]
    fn fewer_rows_than_columns_flags_unmatched() {
        let m = hungarian_match(&[5.0, 1.0, 3.0], 1, 3).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.unmatched_columns, vec![0, 2]);
    }

    #[test]
    fn empty_ground_truth_matches_nothing() {
        let m = hungarian_match(&[], 4, 0).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn equals_exhaustive_search_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let cols = 1 + trial % 6;
            let rows = rng.gen_range(1..=7);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..10.0)).collect();
            let m = hungarian_match(&cost, rows, cols).unwrap();
            assert_eq!(m.pairs.len(), rows.min(cols));
            let mut seen_r = vec![false; rows];
            let mut seen_c = vec![false; cols];
            for &(r, c) in &m.pairs {
                assert!(!seen_r[r] && !seen_c[c]);
                seen_r[r] = true;
                seen_c[c] = true;
            }
            let best = brute_force(&cost, rows, cols);
            assert!((m.total_cost - best).abs() < 1e-9, "trial {trial}: {} vs {best}", m.total_cost);
        }
    }
}
