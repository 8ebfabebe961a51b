//! Linear assignment by the potentials form of the Hungarian algorithm,
//! O(n^2 m) for an n x m cost matrix with n <= m.

use nalgebra::DMatrix;

use crate::Scalar;

/// Minimum-cost row-to-column assignment.
///
/// Requires `rows <= cols`; every row is matched to a distinct column.
/// Returns the matched column per row and the total cost.
pub fn min_cost_assignment<T: Scalar>(cost: &DMatrix<T>) -> (Vec<usize>, T) {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m, "assignment needs rows <= cols, got {n} x {m}");
    assert!(n > 0, "assignment needs a non-empty matrix");
    let inf = T::lit(f64::INFINITY);

    // 1-indexed potentials over rows (u) and columns (v); p[j] is the row
    // currently matched to column j, with p[0] the row being inserted.
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
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
        // Unwind the augmenting path.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n)
        .map(|i| cost[(i, row_to_col[i])])
        .fold(T::zero(), |a, b| a + b);
    (row_to_col, total)
}

/// Maximum-weight assignment, a thin wrapper negating the weights.
pub fn max_weight_assignment<T: Scalar>(weight: &DMatrix<T>) -> (Vec<usize>, T) {
    let neg = weight.map(|w| -w);
    let (assign, total) = min_cost_assignment(&neg);
    (assign, -total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn brute_force_min(cost: &DMatrix<f64>) -> f64 {
        let n = cost.nrows();
        let m = cost.ncols();
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        permute(&mut cols, n, &mut |perm| {
            let total: f64 = (0..n).map(|i| cost[(i, perm[i])]).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    // Enumerates all ordered selections of `k` items from `items`.
    fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        fn rec(items: &mut Vec<usize>, depth: usize, k: usize, f: &mut impl FnMut(&[usize])) {
            if depth == k {
                f(&items[..k]);
                return;
            }
            for i in depth..items.len() {
                items.swap(depth, i);
                rec(items, depth + 1, k, f);
                items.swap(depth, i);
            }
        }
        rec(items, 0, k, f);
    }

    #[test]
    fn solves_textbook_instance() {
        let cost = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let (assign, total) = min_cost_assignment(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(assign, vec![1, 0, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_square_matrices() {
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=6 {
            for _ in 0..30 {
                let cost = DMatrix::from_fn(n, n, |_, _| next() * 10.0 - 5.0);
                let (assign, total) = min_cost_assignment(&cost);
                let direct: f64 = (0..n).map(|i| cost[(i, assign[i])]).sum();
                assert!((total - direct).abs() < 1e-12);
                let best = brute_force_min(&cost);
                assert!(
                    (total - best).abs() < 1e-9,
                    "n={n}: hungarian {total} vs brute force {best}"
                );
            }
        }
    }

    #[test]
    fn matches_brute_force_on_rectangular_matrices() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for &(n, m) in &[(2usize, 4usize), (3, 5), (4, 6)] {
            for _ in 0..20 {
                let cost = DMatrix::from_fn(n, m, |_, _| next() * 4.0);
                let (assign, total) = min_cost_assignment(&cost);
                let mut seen = assign.clone();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen.len(), n, "columns must be distinct");
                let best = brute_force_min(&cost);
                assert!((total - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn max_weight_flips_the_objective() {
        let w = DMatrix::from_row_slice(2, 2, &[0.9f64, 0.1, 0.2, 0.8]);
        let (assign, total) = max_weight_assignment(&w);
        assert_eq!(assign, vec![0, 1]);
        assert!((total - 1.7).abs() < 1e-12);
    }
}
