//! Exact nearest-neighbor search and farthest-point sampling in 3D.
//!
//! Every ordering is by `(squared distance, index)`, so equal distances
//! resolve to the smaller index and results are reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a point set. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, nearest first.
    pub fn nearest(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // ties on the far side may still carry a smaller index
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Indices of the `k` nearest `points` for every query, nearest first.
pub fn knn(points: &[Vec3], queries: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(points);
    queries
        .iter()
        .map(|q| tree.nearest(q, k).into_iter().map(|n| n.index).collect())
        .collect()
}

/// Greedy farthest-point sampling seeded at index 0. Each step picks the point
/// with the largest distance to the chosen set (smallest index on ties).
pub fn fps(points: &[Vec3], m: usize) -> Vec<usize> {
    let m = m.min(points.len());
    if m == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d2: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    chosen.push(0);
    min_d2[0] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        chosen.push(best);
        let p = points[best];
        min_d2[best] = f64::NEG_INFINITY;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d != f64::NEG_INFINITY {
                *d = d.min((points[i] - p).norm_squared());
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn knn_matches_exhaustive_scan() {
        let pts = random_points(200, 1);
        let queries = random_points(50, 2);
        let got = knn(&pts, &queries, 7);
        for (q, g) in queries.iter().zip(&got) {
            assert_eq!(*g, brute(&pts, q, 7));
        }
    }

    #[test]
    fn knn_edge_cases() {
        let pts = random_points(30, 3);
        assert_eq!(knn(&pts, &[pts[17]], 1), vec![vec![17]]);
        let all = knn(&pts, &[Vec3::zeros()], 30);
        assert_eq!(all[0], brute(&pts, &Vec3::zeros(), 30));
    }

    #[test]
    fn ties_prefer_smaller_index() {
        // a grid has many equal distances
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for l in 0..3 {
                    pts.push(Vec3::new(i as f64, j as f64, l as f64));
                }
            }
        }
        pts.reverse();
        let q = Vec3::new(2.0, 3.0, 1.0);
        assert_eq!(knn(&pts, &[q], 11)[0], brute(&pts, &q, 11));
    }

    #[test]
    fn fps_examples() {
        let line: Vec<Vec3> = [0.0, 1.0, 2.0, 10.0].iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect();
        assert_eq!(fps(&line, 3), vec![0, 3, 2]);
        assert_eq!(fps(&line, 1), vec![0]);
        let all = fps(&line, 4);
        assert_eq!(all, vec![0, 3, 2, 1]);
    }

    proptest! {
        #[test]
        fn kd_tree_is_exact(seed in 0u64..500, n in 1usize..120, k in 1usize..12) {
            let pts = random_points(n, seed);
            let q = random_points(1, seed + 10_000)[0];
            let tree = KdTree::new(&pts);
            let got: Vec<usize> = tree.nearest(&q, k).into_iter().map(|x| x.index).collect();
            prop_assert_eq!(got, brute(&pts, &q, k));
        }

        #[test]
        fn fps_matches_greedy_oracle(seed in 0u64..200, n in 1usize..40, m in 1usize..40) {
            let pts = random_points(n, seed);
            let m = m.min(n);
            let mut chosen = vec![0usize];
            while chosen.len() < m {
                let mut best = (f64::NEG_INFINITY, 0);
                for i in 0..n {
                    if chosen.contains(&i) { continue; }
                    let d = chosen.iter().map(|&c| (pts[i] - pts[c]).norm_squared()).fold(f64::INFINITY, f64::min);
                    if d > best.0 { best = (d, i); }
                }
                chosen.push(best.1);
            }
            prop_assert_eq!(fps(&pts, m), chosen);
        }
    }
}
