//! Skeleton topology and the fixed pooling hierarchy 29 -> 14 -> 7.

use crate::geometry::{BOX_CORNERS, HAND_JOINTS, NUM_POINTS};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl SkeletonGraph {
    /// Hand kinematic tree, the 12 box edges and a bridge from the wrist to
    /// every corner.
    pub fn hand_object() -> Self {
        let mut edges = Vec::new();
        for finger in 0..5 {
            let base = 1 + 4 * finger;
            edges.push((0, base));
            for j in 0..3 {
                edges.push((base + j, base + j + 1));
            }
        }
        for a in 0..BOX_CORNERS {
            for bit in 0..3 {
                let b = a ^ (1 << bit);
                if a < b {
                    edges.push((HAND_JOINTS + a, HAND_JOINTS + b));
                }
            }
        }
        for c in 0..BOX_CORNERS {
            edges.push((0, HAND_JOINTS + c));
        }
        Self { n: NUM_POINTS, edges }
    }

    pub fn from_edges(n: usize, edges: Vec<(usize, usize)>) -> Self {
        Self { n, edges }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Symmetric 0/1 adjacency without self loops.
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            if i != j {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
        a
    }

    /// Row-stochastic `D^-1 (A + I)`.
    pub fn normalized(&self) -> Matrix {
        row_normalize_with_self_loops(&self.adjacency())
    }

    pub fn is_connected(&self) -> bool {
        let a = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..self.n {
                if a[(i, j)] != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Graph on clusters: two clusters are adjacent if any members are.
    pub fn coarsen(&self, clusters: &[Vec<usize>]) -> Self {
        let mut owner = vec![0; self.n];
        for (c, members) in clusters.iter().enumerate() {
            for &m in members {
                owner[m] = c;
            }
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| (owner[i].min(owner[j]), owner[i].max(owner[j])))
            .filter(|(a, b)| a != b)
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Self { n: clusters.len(), edges }
    }
}

pub(crate) fn row_normalize_with_self_loops(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = a.clone();
    for i in 0..n {
        out[(i, i)] += 1.0;
        let s: f64 = out.row(i).iter().sum();
        for v in out.row_mut(i) {
            *v /= s;
        }
    }
    out
}

/// 29 -> 14: wrist with the first two thumb joints, the rest of each finger
/// in consecutive pairs, and box corners in pairs along the first box axis.
pub fn clusters_level1() -> Vec<Vec<usize>> {
    let mut c = vec![vec![0, 1, 2], vec![3, 4]];
    for finger in 1..5 {
        let base = 1 + 4 * finger;
        c.push(vec![base, base + 1]);
        c.push(vec![base + 2, base + 3]);
    }
    for pair in 0..4 {
        c.push(vec![HAND_JOINTS + 2 * pair, HAND_JOINTS + 2 * pair + 1]);
    }
    c
}

/// 14 -> 7: one node per finger (the thumb keeps the wrist) and the four
/// corner pairs merged pairwise again.
pub fn clusters_level2() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9], vec![10, 11], vec![12, 13]]
}

/// `n_clusters x n` averaging matrix.
pub fn pooling_matrix(clusters: &[Vec<usize>], n: usize) -> Matrix {
    let mut p = Matrix::zeros(clusters.len(), n);
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            p[(c, m)] = 1.0 / members.len() as f64;
        }
    }
    p
}

/// `n x n_clusters` copy-to-members matrix.
pub fn unpooling_matrix(clusters: &[Vec<usize>], n: usize) -> Matrix {
    let mut u = Matrix::zeros(n, clusters.len());
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            u[(m, c)] = 1.0;
        }
    }
    u
}
