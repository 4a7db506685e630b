//! Optimal one-to-one matching between predicted clusters and true users.

/// Maximum-weight assignment of rows to columns (Hungarian algorithm on the
/// padded square cost matrix). Returns, for every row, the matched column or
/// `None` when the row is left unmatched because there are more rows than
/// columns.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    let n = rows.max(cols);
    let max_w = weights.iter().flatten().copied().max().unwrap_or(0).max(0);
    // cost[i][j] (1-based, padded with zero-weight dummies)
    let cost = |i: usize, j: usize| -> i64 {
        let w = if i < rows && j < cols { weights[i][j] } else { 0 };
        max_w - w
    };
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
            for j in 0..=n {
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
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(weights: &[Vec<i64>]) -> i64 {
        let rows = weights.len();
        let cols = weights[0].len();
        fn rec(r: usize, w: &[Vec<i64>], used: &mut Vec<bool>) -> i64 {
            if r == w.len() {
                return 0;
            }
            let mut best = rec(r + 1, w, used); // leave row unmatched
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[r][c] + rec(r + 1, w, used));
                    used[c] = false;
                }
            }
            best
        }
        let _ = rows;
        rec(0, weights, &mut vec![false; cols])
    }

    fn total(weights: &[Vec<i64>], a: &[Option<usize>]) -> i64 {
        a.iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| weights[r][c]))
            .sum()
    }

    #[test]
    fn diagonal_preference() {
        let w = vec![vec![1, 9, 0], vec![8, 1, 0], vec![0, 0, 5]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn more_rows_than_columns() {
        let w = vec![vec![5, 0], vec![0, 5], vec![4, 4]];
        let a = max_weight_assignment(&w);
        assert_eq!(total(&w, &a), 10);
        assert_eq!(a.iter().filter(|x| x.is_none()).count(), 1);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in prop::collection::vec(0i64..20, 36),
        ) {
            let w: Vec<Vec<i64>> = (0..rows).map(|r| (0..cols).map(|c| seed[r * 6 + c]).collect()).collect();
            let a = max_weight_assignment(&w);
            let mut seen = std::collections::HashSet::new();
            for c in a.iter().flatten() {
                prop_assert!(seen.insert(*c));
            }
            prop_assert_eq!(total(&w, &a), brute(&w));
        }
    }
}
