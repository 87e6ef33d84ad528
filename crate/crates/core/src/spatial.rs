//! Exact nearest-neighbor search over a fixed point set.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the point set the tree was built from.
    pub index: usize,
    pub point: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// A k-d tree. Queries are exact; equidistant points resolve to the lowest index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("cannot index an empty point set"));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(points, &mut order, 0, &mut nodes);
        let reordered = order.iter().map(|&i| points[i]).collect();
        Ok(NeighborIndex {
            points: reordered,
            order,
            nodes,
        })
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn nearest(&self, query: &Vec3) -> Neighbor {
        let mut best = (f64::INFINITY, usize::MAX, 0usize);
        self.search(0, query, &mut best);
        let (d2, index, slot) = best;
        Neighbor {
            index,
            point: self.points[slot],
            distance: d2.sqrt(),
        }
    }

    /// Nearest neighbors for many queries, computed in parallel.
    pub fn nearest_all(&self, queries: &[Vec3]) -> Vec<Neighbor> {
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut (f64, usize, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = (self.points[slot] - q).norm_squared();
                    let idx = self.order[slot];
                    if d2 < best.0 || (d2 == best.0 && idx < best.1) {
                        *best = (d2, idx, slot);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates with lower indices reachable
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(points: &[Vec3], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let (mut lo, mut hi) = (points[order[0]], points[order[0]]);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build_node(points, l, offset, nodes);
    let right = build_node(points, r, offset + mid, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
