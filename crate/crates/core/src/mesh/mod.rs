//! Triangle meshes, segmentation and mesh topology.

mod io;
mod topology;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Vec3;

pub use io::{load_labels, load_mesh, read_label_file, save_labels, save_mesh, LabelFile, MeshFormat};
pub use topology::{is_connected, node_arc_incidence, part_boundaries, IncidenceMatrix};

/// A triangle mesh, or a bare point cloud when `faces` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Option<Vec<u32>>,
    pub name: String,
}

impl Mesh {
    /// Builds a mesh and checks its invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            part_labels: None,
            name: String::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn point_cloud(vertices: Vec<Vec3>) -> Self {
        Mesh {
            vertices,
            faces: Vec::new(),
            part_labels: None,
            name: String::new(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.vertices.len() {
            return Err(Error::LabelCount {
                expected: self.vertices.len(),
                found: labels.len(),
            });
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} {:?} is degenerate (repeated vertex)",
                    face
                )));
            }
        }
        if let Some(labels) = &self.part_labels {
            if labels.len() != n {
                return Err(Error::LabelCount {
                    expected: n,
                    found: labels.len(),
                });
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)`. Zero box for an empty mesh.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }

    /// Unique undirected edges as `(lo, hi)` pairs, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertex adjacency lists, each sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Area-weighted vertex normals. Isolated vertices get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        vertex_normals(&self.vertices, &self.faces)
    }

    /// Flags vertices lying on an edge used by exactly one face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut flags = vec![false; self.vertices.len()];
        for ((a, b), c) in count {
            if c == 1 {
                flags[a] = true;
                flags[b] = true;
            }
        }
        flags
    }

    /// Closed oriented 2-manifold check: every directed edge appears exactly
    /// once and its reverse appears exactly once.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Signed enclosed volume; positive when faces are wound outward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

pub fn bbox(points: &[Vec3]) -> (Vec3, Vec3) {
    if points.is_empty() {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let (lo, hi) = bbox(points);
    (hi - lo).norm()
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}

pub fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for &v in f {
            normals[v] += n;
        }
    }
    for n in &mut normals {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    normals
}

/// A template mesh with a full per-vertex part labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedTemplate {
    pub mesh: Mesh,
    pub part_count: usize,
    /// Per part, ascending vertices that share an edge with another part.
    pub boundary_sets: Vec<Vec<usize>>,
    /// Per part, ascending vertex indices carrying that label.
    pub part_vertices: Vec<Vec<usize>>,
}

impl SegmentedTemplate {
    pub const DEFAULT_PART_COUNT: usize = 16;

    /// Validates the labeling and precomputes part vertex lists and boundaries.
    ///
    /// Every part must be non-empty and induce a connected subgraph.
    pub fn new(mesh: Mesh, part_count: usize) -> Result<Self> {
        mesh.validate()?;
        let labels = mesh
            .part_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidMesh("template has no part labels".into()))?;
        if let Some((v, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= part_count) {
            return Err(Error::InvalidMesh(format!(
                "vertex {v} has label {l} outside [0, {part_count})"
            )));
        }
        let mut part_vertices = vec![Vec::new(); part_count];
        for (v, &l) in labels.iter().enumerate() {
            part_vertices[l as usize].push(v);
        }
        let edges = mesh.edges();
        for (part, verts) in part_vertices.iter().enumerate() {
            if verts.is_empty() {
                return Err(Error::InvalidMesh(format!("part {part} has no vertices")));
            }
            if !is_connected(verts, &edges, mesh.vertices.len()) {
                return Err(Error::DisconnectedPart(part));
            }
        }
        let boundary_sets = topology::boundary_sets(labels, &edges, part_count);
        Ok(SegmentedTemplate {
            mesh,
            part_count,
            boundary_sets,
            part_vertices,
        })
    }

    pub fn labels(&self) -> &[u32] {
        self.mesh
            .part_labels
            .as_deref()
            .expect("segmented template always carries labels")
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_degenerate_and_out_of_range_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 0, 1]]),
            Err(Error::InvalidMesh(_))
        ));
        assert!(matches!(Mesh::new(v, vec![[0, 1, 3]]), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn tetrahedron_is_watertight_and_outward() {
        let m = tetra();
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        assert_eq!(m.edges().len(), 6);
        assert!(m.boundary_vertices().iter().all(|b| !b));
    }

    #[test]
    fn open_triangle_has_boundary() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!(!m.is_watertight());
        assert!(m.boundary_vertices().iter().all(|&b| b));
    }

    #[test]
    fn template_rejects_disconnected_part() {
        // two triangles joined by a shared edge, part 0 = {0, 3}: not adjacent
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap()
        .with_labels(vec![0, 1, 1, 0])
        .unwrap();
        assert!(matches!(SegmentedTemplate::new(m, 2), Err(Error::DisconnectedPart(0))));
    }
}
