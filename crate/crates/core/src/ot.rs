//! Exact 1-Wasserstein distance between equal-size point sets via optimal
//! assignment. Ground truth for validating the critic's dual estimate.

use crate::real::{fl, l2_dist, Real};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OtError {
    #[error("cost matrix must be square and non-empty; got {rows} rows, row {bad_row} has {bad_len} entries")]
    NotSquare { rows: usize, bad_row: usize, bad_len: usize },
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("point sets must have equal nonzero size; got {a} and {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error("points at index {0} have mismatched dimensions")]
    DimMismatch(usize),
}

/// Square matrix of pairwise transport costs.
#[derive(Debug, Clone)]
pub struct CostMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> CostMatrix<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, OtError> {
        let n = rows.len();
        if n == 0 {
            return Err(OtError::NotSquare { rows: 0, bad_row: 0, bad_len: 0 });
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(OtError::NotSquare { rows: n, bad_row: i, bad_len: row.len() });
            }
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() {
                    return Err(OtError::NonFinite { row: i, col: j });
                }
                data.push(c);
            }
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }
}

/// O(n^3) Hungarian algorithm (potentials + shortest augmenting paths).
/// Returns the row-to-column assignment minimizing total cost, and that cost.
pub fn hungarian<T: Real>(cost: &CostMatrix<T>) -> (Vec<usize>, T) {
    let n = cost.n();
    let inf = T::infinity();
    // 1-based potentials; job[j] = row matched to column j (0 = none).
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut job = vec![0usize; n + 1];

    for row in 1..=n {
        job[0] = row;
        let mut j0 = 0usize;
        let mut min_to = vec![inf; n + 1];
        let mut prev = vec![0usize; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = job[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    prev[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[job[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if job[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        while j0 != 0 {
            let j1 = prev[j0];
            job[j0] = job[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if job[j] > 0 {
            assignment[job[j] - 1] = j - 1;
        }
    }
    let mut total = T::zero();
    for (i, &j) in assignment.iter().enumerate() {
        total += cost.at(i, j);
    }
    (assignment, total)
}

/// Exact empirical W1 between equal-size point sets under Euclidean cost:
/// minimal assignment cost divided by n. The matched edge costs are summed
/// in sorted order so that swapping the arguments gives the identical float.
pub fn exact_w1<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<T, OtError> {
    if a.is_empty() || a.len() != b.len() {
        return Err(OtError::SizeMismatch { a: a.len(), b: b.len() });
    }
    let dim = a[0].len();
    for (i, p) in a.iter().chain(b.iter()).enumerate() {
        if p.len() != dim {
            return Err(OtError::DimMismatch(i % a.len()));
        }
    }
    let n = a.len();
    let rows: Vec<Vec<T>> = a
        .iter()
        .map(|p| b.iter().map(|q| l2_dist(p, q)).collect())
        .collect();
    let cost = CostMatrix::from_rows(&rows)?;
    let (assignment, _) = hungarian(&cost);
    let mut edges: Vec<T> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.at(i, j))
        .collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let total: T = edges.into_iter().sum();
    Ok(total / fl::<T>(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{streams, SeedStream};

    fn brute_force_min_cost(cost: &CostMatrix<f64>) -> f64 {
        fn permute(rest: &mut Vec<usize>, chosen: &mut Vec<usize>, cost: &CostMatrix<f64>, best: &mut f64) {
            if rest.is_empty() {
                let total: f64 = chosen.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for k in 0..rest.len() {
                let j = rest.remove(k);
                chosen.push(j);
                permute(rest, chosen, cost, best);
                chosen.pop();
                rest.insert(k, j);
            }
        }
        let mut best = f64::INFINITY;
        permute(&mut (0..cost.n()).collect(), &mut Vec::new(), cost, &mut best);
        best
    }

    #[test]
    fn diagonal_zeros_pick_identity() {
        let cost = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (perm, total) = hungarian(&cost);
        assert_eq!(perm, vec![0, 1]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn three_by_three_matches_enumeration() {
        let rows = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let (perm, total) = hungarian(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(perm, vec![1, 0, 2]);
        assert_eq!(brute_force_min_cost(&cost), 5.0);
    }

    #[test]
    fn constant_shift_preserves_assignment() {
        let rows = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let shifted: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().map(|c| c + 10.0).collect()).collect();
        let (p1, t1) = hungarian(&CostMatrix::from_rows(&rows).unwrap());
        let (p2, t2) = hungarian(&CostMatrix::from_rows(&shifted).unwrap());
        assert_eq!(p1, p2);
        assert!((t2 - t1 - 30.0).abs() < 1e-12);
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = SeedStream::new(17, streams::DATA_GEN);
        for trial in 0..30 {
            let n = 2 + trial % 5;
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| rng.uniform::<f64>() * 10.0).collect()).collect();
            let cost = CostMatrix::from_rows(&rows).unwrap();
            let (_, total) = hungarian(&cost);
            let best = brute_force_min_cost(&cost);
            assert!((total - best).abs() < 1e-9, "trial {trial}: {total} vs {best}");
        }
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(matches!(
            CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]),
            Err(OtError::NotSquare { bad_row: 1, .. })
        ));
        assert!(matches!(
            CostMatrix::from_rows(&[vec![1.0, f64::NAN], vec![3.0, 1.0]]),
            Err(OtError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn w1_identity_and_single_pair() {
        let a = vec![vec![0.25f64], vec![0.5]];
        assert_eq!(exact_w1(&a, &a).unwrap(), 0.0);
        assert_eq!(exact_w1(&[vec![0.0f64]], &[vec![1.0]]).unwrap(), 1.0);
    }

    #[test]
    fn w1_two_point_enumeration() {
        // both matchings cost (1+3)/2 = 2
        let a = vec![vec![0.0f64], vec![0.0]];
        let b = vec![vec![1.0f64], vec![3.0]];
        assert_eq!(exact_w1(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn w1_is_exactly_symmetric() {
        let mut rng = SeedStream::new(23, streams::DATA_GEN);
        for _ in 0..10 {
            let a: Vec<Vec<f64>> =
                (0..8).map(|_| (0..2).map(|_| rng.uniform::<f64>()).collect()).collect();
            let b: Vec<Vec<f64>> =
                (0..8).map(|_| (0..2).map(|_| rng.uniform::<f64>()).collect()).collect();
            assert_eq!(exact_w1(&a, &b).unwrap(), exact_w1(&b, &a).unwrap());
        }
    }

    #[test]
    fn w1_triangle_inequality_on_random_triples() {
        let mut rng = SeedStream::new(29, streams::DATA_GEN);
        for _ in 0..100 {
            let mk = |rng: &mut SeedStream| -> Vec<Vec<f64>> {
                (0..8).map(|_| (0..2).map(|_| rng.uniform::<f64>()).collect()).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = exact_w1(&a, &b).unwrap();
            let bc = exact_w1(&b, &c).unwrap();
            let ac = exact_w1(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn w1_one_dimensional_equals_sorted_coupling() {
        let mut rng = SeedStream::new(31, streams::DATA_GEN);
        for _ in 0..20 {
            let n = 16;
            let a: Vec<f64> = (0..n).map(|_| rng.uniform::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.uniform::<f64>()).collect();
            let pa: Vec<Vec<f64>> = a.iter().map(|&x| vec![x]).collect();
            let pb: Vec<Vec<f64>> = b.iter().map(|&x| vec![x]).collect();
            let w1 = exact_w1(&pa, &pb).unwrap();

            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut gaps: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).collect();
            gaps.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let sorted: f64 = gaps.iter().sum::<f64>() / n as f64;
            assert!((w1 - sorted).abs() < 1e-12, "{w1} vs {sorted}");
        }
    }

    #[test]
    fn w1_rejects_size_mismatch() {
        let a = vec![vec![0.0f64]];
        let b = vec![vec![0.0f64], vec![1.0]];
        assert_eq!(exact_w1(&a, &b).unwrap_err(), OtError::SizeMismatch { a: 1, b: 2 });
    }
}
