use std::collections::VecDeque;

use super::{Mesh, SegmentedTemplate};

/// Edge-by-vertex ±1 matrix stored as its edge list.
///
/// Row `e` holds −1 at column `edges[e].0` and +1 at column `edges[e].1`,
/// where `edges[e].0 < edges[e].1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    pub edges: Vec<(usize, usize)>,
    pub vertex_count: usize,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.edges.len()
    }

    pub fn cols(&self) -> usize {
        self.vertex_count
    }

    /// Nonzeros of row `e` as `(column, value)`.
    pub fn row(&self, e: usize) -> [(usize, f64); 2] {
        let (a, b) = self.edges[e];
        [(a, -1.0), (b, 1.0)]
    }

    /// `M x` for a vertex-indexed field with `dim` components per vertex.
    pub fn apply(&self, x: &[f64], dim: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.vertex_count * dim);
        let mut out = vec![0.0; self.edges.len() * dim];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            for d in 0..dim {
                out[e * dim + d] = x[b * dim + d] - x[a * dim + d];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.vertex_count]; self.edges.len()];
        for (e, row) in m.iter_mut().enumerate() {
            for (c, v) in self.row(e) {
                row[c] = v;
            }
        }
        m
    }
}

pub fn node_arc_incidence(mesh: &Mesh) -> IncidenceMatrix {
    IncidenceMatrix {
        edges: mesh.edges(),
        vertex_count: mesh.vertices.len(),
    }
}

/// Recomputes the per-part boundary sets of a template.
pub fn part_boundaries(template: &SegmentedTemplate) -> Vec<Vec<usize>> {
    boundary_sets(template.labels(), &template.mesh.edges(), template.part_count)
}

pub(super) fn boundary_sets(labels: &[u32], edges: &[(usize, usize)], part_count: usize) -> Vec<Vec<usize>> {
    let mut on_boundary = vec![false; labels.len()];
    for &(a, b) in edges {
        if labels[a] != labels[b] {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
    }
    let mut sets = vec![Vec::new(); part_count];
    for (v, &flag) in on_boundary.iter().enumerate() {
        if flag {
            sets[labels[v] as usize].push(v);
        }
    }
    sets
}

/// Whether `subset` induces a connected subgraph of the edge graph.
pub fn is_connected(subset: &[usize], edges: &[(usize, usize)], vertex_count: usize) -> bool {
    if subset.is_empty() {
        return true;
    }
    let mut inside = vec![false; vertex_count];
    for &v in subset {
        inside[v] = true;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
    for &(a, b) in edges {
        if inside[a] && inside[b] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; vertex_count];
    let mut queue = VecDeque::from([subset[0]]);
    seen[subset[0]] = true;
    let mut reached = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    reached == subset.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn strip() -> Mesh {
        // 2×4 vertex strip: bottom row 0..4, top row 4..8
        let mut v = Vec::new();
        for y in 0..2 {
            for x in 0..4 {
                v.push(Vec3::new(x as f64, y as f64, 0.0));
            }
        }
        let mut f = Vec::new();
        for x in 0..3 {
            f.push([x, x + 1, x + 5]);
            f.push([x, x + 5, x + 4]);
        }
        Mesh::new(v, f).unwrap()
    }

    #[test]
    fn single_triangle_incidence() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let inc = node_arc_incidence(&m);
        assert_eq!(inc.rows(), 3);
        for row in inc.to_dense() {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn two_triangles_have_five_edges() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        assert_eq!(node_arc_incidence(&m).rows(), 5);
    }

    #[test]
    fn incidence_annihilates_constants() {
        let inc = node_arc_incidence(&strip());
        let x: Vec<f64> = (0..8).flat_map(|_| [1.5, -2.0, 0.25]).collect();
        assert!(inc.apply(&x, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn strip_split_in_middle() {
        // columns 0,1 -> part 0; columns 2,3 -> part 1
        let labels: Vec<u32> = (0..8).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
        let t = SegmentedTemplate::new(strip().with_labels(labels).unwrap(), 2).unwrap();
        assert_eq!(t.boundary_sets[0], vec![1, 5]);
        assert_eq!(t.boundary_sets[1], vec![2, 6]);
        assert_eq!(part_boundaries(&t), t.boundary_sets);
    }

    #[test]
    fn single_part_has_no_boundary() {
        let t = SegmentedTemplate::new(strip().with_labels(vec![0; 8]).unwrap(), 1).unwrap();
        assert!(t.boundary_sets[0].is_empty());
    }
}
