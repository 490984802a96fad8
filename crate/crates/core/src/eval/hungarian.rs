//! Rectangular minimum-cost assignment (shortest augmenting path with
//! potentials, O(n²m)).

use crate::num::Scalar;

/// Minimum-total-cost one-to-one assignment of rows to columns.
///
/// `cost` is row-major with equal-length rows. Non-finite entries mark
/// forbidden pairs; they are never returned as matches. Returns, for each
/// row, the assigned column. When rows outnumber columns some rows stay
/// unassigned, and vice versa.
pub fn hungarian<T: Scalar>(cost: &[Vec<T>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    debug_assert!(cost.iter().all(|r| r.len() == m));

    let finite_max = cost
        .iter()
        .flatten()
        .map(|c| c.as_f64())
        .filter(|c| c.is_finite())
        .fold(0.0f64, |a, c| a.max(c.abs()));
    // Large enough that any assignment using a forbidden pair loses to one
    // that avoids it whenever such an assignment of equal cardinality exists.
    let forbidden = (finite_max + 1.0) * (n.max(m) as f64 + 1.0) * 2.0;
    let at = |i: usize, j: usize| {
        let c = cost[i][j].as_f64();
        if c.is_finite() {
            c
        } else {
            forbidden
        }
    };

    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let c = |i: usize, j: usize| if transposed { at(j, i) } else { at(i, j) };

    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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

    let mut out = vec![None; n];
    for j in 1..=cols {
        if p[j] == 0 {
            continue;
        }
        let (r, cidx) = if transposed {
            (j - 1, p[j] - 1)
        } else {
            (p[j] - 1, j - 1)
        };
        if cost[r][cidx].as_f64().is_finite() {
            out[r] = Some(cidx);
        }
    }
    out
}

/// Total cost of an assignment over its matched pairs.
pub fn assignment_cost<T: Scalar>(cost: &[Vec<T>], assign: &[Option<usize>]) -> T {
    assign
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[i][j]))
        .fold(T::zero(), |a, c| a + c)
}

/// Maximum-weight matching on a `score` matrix restricted to entries at or
/// above `gate`. Returns `(row, col)` pairs in row order.
pub fn match_above<T: Scalar>(score: &[Vec<T>], gate: T) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<T>> = score
        .iter()
        .map(|r| {
            r.iter()
                .map(|&s| if s >= gate { -s } else { T::infinity() })
                .collect()
        })
        .collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}
