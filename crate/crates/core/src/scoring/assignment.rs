//! Rectangular linear assignment (Hungarian method with potentials).

/// Minimum-cost matching of `min(rows, cols)` pairs. Returns `(row, col)`
/// pairs sorted by row and the total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (Vec::new(), 0.0);
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        let (pairs, total) = hungarian(&transposed);
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return (pairs, total);
    }

    // 1-based arrays; index 0 is the virtual column used to start each phase.
    let (n, m) = (rows, cols);
    let mut u = vec![0f64; n + 1];
    let mut v = vec![0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
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

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    (pairs, total)
}

fn sub_optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let sub: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    hungarian(&sub).1
}

/// Optimal assignment whose sorted pair list is lexicographically smallest
/// among all optimal assignments (costs compared with a small relative
/// tolerance).
pub fn lexicographic_assignment(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let (_, optimum) = hungarian(cost);
    let need = rows.min(cols);
    let tol = 1e-9 * optimum.abs().max(1.0);

    let mut pairs = Vec::with_capacity(need);
    let mut free_cols: Vec<usize> = (0..cols).collect();
    let mut acc = 0.0;
    for x in 0..rows {
        if pairs.len() == need {
            break;
        }
        let later_rows: Vec<usize> = (x + 1..rows).collect();
        let mut chosen = None;
        for (slot, &y) in free_cols.iter().enumerate() {
            let rest: Vec<usize> = free_cols.iter().copied().filter(|&c| c != y).collect();
            if pairs.len() + 1 + later_rows.len().min(rest.len()) < need {
                continue;
            }
            let best = acc + cost[x][y] + sub_optimum(cost, &later_rows, &rest);
            if best <= optimum + tol {
                chosen = Some(slot);
                break;
            }
        }
        if let Some(slot) = chosen {
            let y = free_cols.remove(slot);
            acc += cost[x][y];
            pairs.push((x, y));
        }
        // Otherwise row x stays unmatched, which is only possible when rows
        // outnumber columns.
    }
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    (pairs, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, left: usize) -> f64 {
            if left == 0 || r == cost.len() {
                return if left == 0 { 0.0 } else { f64::INFINITY };
            }
            let mut best = rec(cost, r + 1, used, left); // skip row
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + rec(cost, r + 1, used, left - 1));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cols], rows.min(cols))
    }

    #[test]
    fn known_square_case() {
        let cost = vec![vec![4.0, 3.0, 5.0], vec![3.0, 5.0, 9.0], vec![4.0, 1.0, 4.0]];
        let (pairs, total) = hungarian(&cost);
        assert_eq!(total, 9.0);
        assert_eq!(pairs, vec![(0, 2), (1, 0), (2, 1)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let cost = vec![vec![1.0, 5.0, 0.5], vec![2.0, 0.0, 3.0]];
        let (pairs, total) = hungarian(&cost);
        assert_eq!(total, 0.5);
        assert_eq!(pairs, vec![(0, 2), (1, 1)]);
        let t: Vec<Vec<f64>> = (0..3).map(|c| (0..2).map(|r| cost[r][c]).collect()).collect();
        assert_eq!(hungarian(&t).1, 0.5);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let r = rng.random_range(1..=5);
            let c = rng.random_range(1..=5);
            let cost: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..c).map(|_| -rng.random_range(0..4) as f64 / 3.0).collect())
                .collect();
            let expected = brute_force(&cost);
            let (p1, t1) = hungarian(&cost);
            let (p2, t2) = lexicographic_assignment(&cost);
            assert!((t1 - expected).abs() < 1e-9);
            assert!((t2 - expected).abs() < 1e-9);
            assert_eq!(p1.len(), r.min(c));
            assert_eq!(p2.len(), r.min(c));
        }
    }

    #[test]
    fn ties_resolve_to_smallest_pair_list() {
        let cost = vec![vec![0.0; 3]; 3];
        assert_eq!(lexicographic_assignment(&cost).0, vec![(0, 0), (1, 1), (2, 2)]);
        let wide = vec![vec![0.0; 2]; 3];
        assert_eq!(lexicographic_assignment(&wide).0, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(hungarian(&[]), (vec![], 0.0));
        assert_eq!(lexicographic_assignment(&[vec![]]).0, vec![]);
    }
}
