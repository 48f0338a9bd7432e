//! Rectangular linear assignment (Hungarian method with potentials).

/// Solves the rectangular assignment maximizing the summed weight.
///
/// `weights[r][c]` is the benefit of pairing row `r` with column `c`.
/// Returns, for each row, the assigned column (rows beyond the column count
/// stay unassigned). Every row or column is used at most once and the
/// total is optimal. Ties resolve deterministically from input order.
pub fn maximize(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    debug_assert!(weights.iter().all(|r| r.len() == cols));
    if rows <= cols {
        let cost: Vec<Vec<f64>> = weights
            .iter()
            .map(|r| r.iter().map(|w| -w).collect())
            .collect();
        solve_min(&cost).into_iter().map(Some).collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| -weights[r][c]).collect())
            .collect();
        let col_to_row = solve_min(&cost);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

/// Like [`maximize`] but only keeps pairs whose weight is at least `gate`.
/// Pairs under the gate are zeroed before solving so they cannot displace
/// admissible pairs.
pub fn maximize_gated(weights: &[Vec<f64>], gate: f64) -> Vec<(usize, usize)> {
    let gated: Vec<Vec<f64>> = weights
        .iter()
        .map(|r| r.iter().map(|&w| if w >= gate { w } else { 0.0 }).collect())
        .collect();
    maximize(&gated)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .filter(|&(r, c)| weights[r][c] >= gate)
        .collect()
}

/// O(n^2 m) shortest augmenting path; requires n <= m. Returns column per row.
fn solve_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    let inf = f64::INFINITY;
    // 1-based arrays, index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive best partial matching value with gating, for small instances.
    pub(crate) fn brute_force_best(weights: &[Vec<f64>], gate: f64) -> f64 {
        fn rec(r: usize, w: &[Vec<f64>], used: &mut Vec<bool>, gate: f64) -> f64 {
            if r == w.len() {
                return 0.0;
            }
            let mut best = rec(r + 1, w, used, gate);
            for c in 0..used.len() {
                if !used[c] && w[r][c] >= gate {
                    used[c] = true;
                    best = best.max(w[r][c] + rec(r + 1, w, used, gate));
                    used[c] = false;
                }
            }
            best
        }
        let cols = weights.first().map_or(0, Vec::len);
        rec(0, weights, &mut vec![false; cols], gate)
    }

    #[test]
    fn simple_square() {
        let w = vec![vec![1.0, 0.0], vec![0.9, 0.8]];
        assert_eq!(maximize(&w), vec![Some(0), Some(1)]);
    }

    #[test]
    fn optimal_beats_greedy() {
        // greedy would take (0,0)=0.9 then (1,1)=0.1; optimal is 0.8+0.8
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.1]];
        assert_eq!(maximize(&w), vec![Some(1), Some(0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let tall = vec![vec![0.2], vec![0.9], vec![0.5]];
        assert_eq!(maximize(&tall), vec![None, Some(0), None]);
        let wide = vec![vec![0.2, 0.9, 0.5]];
        assert_eq!(maximize(&wide), vec![Some(1)]);
        assert!(maximize(&[]).is_empty());
        assert_eq!(maximize(&[vec![], vec![]]), vec![None, None]);
    }

    #[test]
    fn gated_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let n = rng.random_range(0..=6);
            let m = rng.random_range(0..=6);
            let w: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.0..1.0) })
                        .collect()
                })
                .collect();
            let gate = 0.1;
            let pairs = maximize_gated(&w, gate);
            let total: f64 = pairs.iter().map(|&(r, c)| w[r][c]).sum();
            let best = brute_force_best(&w, gate);
            assert!((total - best).abs() < 1e-9, "{total} vs {best} for {w:?}");
            let mut seen_c = std::collections::HashSet::new();
            for &(_, c) in &pairs {
                assert!(seen_c.insert(c));
            }
        }
    }
}
