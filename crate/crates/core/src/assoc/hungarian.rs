use nalgebra::DMatrix;

use crate::num::Real;

/// Maximum-weight assignment on a dense non-negative weight matrix.
///
/// Returns, for each row, the matched column. Rows may stay unmatched when
/// there are more rows than columns. Zero-weight pairs are legal matches
/// here; callers drop them afterwards.
pub(crate) fn max_weight_assignment<T: Real>(w: &DMatrix<T>) -> Vec<Option<usize>> {
    let (n, m) = w.shape();
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let cols = max_weight_assignment(&w.transpose());
        let mut rows = vec![None; n];
        for (c, r) in cols.into_iter().enumerate() {
            if let Some(r) = r {
                rows[r] = Some(c);
            }
        }
        return rows;
    }
    let max = w.max();
    // Shortest augmenting path with potentials on cost = max - w (n <= m).
    let cost = |i: usize, j: usize| max - w[(i, j)];
    let inf = T::max_value().unwrap_or(T::lit(f64::MAX));
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
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
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}

/// Optimal total weight counting only positive pairs.
pub(crate) fn optimum<T: Real>(w: &DMatrix<T>) -> T {
    max_weight_assignment(w)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| w[(i, j)]))
        .fold(T::zero(), |acc, x| acc + x)
}

/// Maximum-weight matching over strictly positive entries, choosing the
/// lexicographically smallest row-to-column map among optimal matchings
/// (rows in order, smaller column first, "unmatched" last).
pub(crate) fn lexicographic_max_matching<T: Real>(w: &DMatrix<T>) -> Vec<Option<usize>> {
    let (n, m) = w.shape();
    let mut result = vec![None; n];
    if n == 0 || m == 0 {
        return result;
    }
    let tol = T::eps() * T::lit(64.0 * (n + m) as f64) * w.max().max(T::one());
    let mut remaining = optimum(w);
    let mut free_cols: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let wij = w[(i, j)];
            if wij <= T::zero() {
                continue;
            }
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let sub = w.select_rows(&rest_rows).select_columns(&cols);
            if wij + optimum(&sub) >= remaining - tol {
                chosen = Some((pos, j));
                break;
            }
        }
        if let Some((pos, j)) = chosen {
            remaining -= w[(i, j)];
            free_cols.remove(pos);
            result[i] = Some(j);
        }
    }
    result
}
