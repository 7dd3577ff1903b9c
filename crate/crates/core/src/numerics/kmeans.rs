//! Lloyd's algorithm with k-means++ seeding.

use super::matrix::Matrix;
use super::rng::CounterRng;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeans {
    /// `k x d`, one center per row.
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned center after every assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus(points: &Matrix, k: usize, rng: &mut CounterRng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in min_d.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centers
}

fn assign(points: &Matrix, centers: &Matrix, out: &mut [usize]) -> (f64, bool) {
    let mut changed = false;
    let mut objective = 0.0;
    for (i, slot) in out.iter_mut().enumerate() {
        let p = points.row(i);
        let (best, d) = (0..centers.rows())
            .map(|c| (c, sq_dist(p, centers.row(c))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if *slot != best {
            changed = true;
            *slot = best;
        }
        objective += d;
    }
    (objective, changed)
}

/// Clusters the rows of `points` into `k` groups.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeans> {
    let (n, d) = points.shape();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { needed: k.max(1), got: n });
    }
    if d == 0 {
        return Err(Error::shape("d >= 1", "d = 0"));
    }
    let mut rng = CounterRng::new(seed).fork_str("kmeans++");
    let mut centers = seed_plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    let (obj, _) = assign(points, &centers, &mut assignments);
    history.push(obj);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // Update step.
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                let inv = 1.0 / n as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        // Empty clusters take the point currently farthest from its center.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .map(|i| (i, sq_dist(points.row(i), centers.row(assignments[i]))))
                    .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                if far == usize::MAX {
                    continue;
                }
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
                let row = points.row(far).to_vec();
                centers.row_mut(c).copy_from_slice(&row);
            }
        }
        let (obj, changed) = assign(points, &centers, &mut assignments);
        history.push(obj);
        if !changed {
            break;
        }
    }
    Ok(KMeans { centers, assignments, objective_history: history, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> (Matrix, [f64; 2], [f64; 2]) {
        let mut rng = CounterRng::new(seed);
        let mut rows = Vec::new();
        for i in 0..60 {
            let c = if i % 2 == 0 { 10.0 } else { -10.0 };
            rows.push(vec![c + 0.1 * rng.normal(), c + 0.1 * rng.normal()]);
        }
        let mean = |s: f64| {
            let sel: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0].signum() == s).collect();
            let n = sel.len() as f64;
            [sel.iter().map(|r| r[0]).sum::<f64>() / n, sel.iter().map(|r| r[1]).sum::<f64>() / n]
        };
        let (a, b) = (mean(1.0), mean(-1.0));
        (Matrix::from_rows(&rows).unwrap(), a, b)
    }

    #[test]
    fn separated_blobs_recover_means() {
        let (pts, a, b) = blobs(5);
        let km = kmeans(&pts, 2, 1).unwrap();
        for target in [a, b] {
            let best = (0..2).map(|c| sq_dist(km.centers.row(c), &target).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.5, "center off by {best}");
        }
    }

    #[test]
    fn k_equals_n_returns_points() {
        let pts = Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, -2.0], vec![5.0, 5.0], vec![-4.0, 0.5]]).unwrap();
        let km = kmeans(&pts, 4, 9).unwrap();
        let mut got: Vec<Vec<f64>> = (0..4).map(|c| km.centers.row(c).to_vec()).collect();
        let mut want: Vec<Vec<f64>> = (0..4).map(|r| pts.row(r).to_vec()).collect();
        got.sort_by(|x, y| x.partial_cmp(y).unwrap());
        want.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn k_one_is_mean() {
        let pts = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]]).unwrap();
        let km = kmeans(&pts, 1, 0).unwrap();
        assert!((km.centers[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((km.centers[(0, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts = Matrix::zeros(2, 3);
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn objective_never_increases_and_is_deterministic() {
        let mut rng = CounterRng::new(17);
        let pts = Matrix::from_fn(200, 4, |_, _| rng.normal() * 3.0);
        let km = kmeans(&pts, 7, 3).unwrap();
        for w in km.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        let again = kmeans(&pts, 7, 3).unwrap();
        assert_eq!(km.centers, again.centers);
    }
}
