//! Closest-point correspondences from template vertices to a target scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{self, Mesh};
use crate::spatial::NeighborIndex;
use crate::Vec3;

/// When a closest-point match is discarded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneRule {
    /// Maximum match distance as a fraction of the target bounding-box diagonal.
    pub max_dist_fraction: f64,
    /// Reject matches whose normals point more than 90° apart (mesh targets only).
    pub normal_check: bool,
    /// Reject matches landing on an open boundary of the target mesh.
    pub reject_boundary: bool,
}

impl Default for PruneRule {
    fn default() -> Self {
        PruneRule {
            max_dist_fraction: 0.05,
            normal_check: true,
            reject_boundary: true,
        }
    }
}

impl PruneRule {
    pub fn distance_only(max_dist_fraction: f64) -> Self {
        PruneRule {
            max_dist_fraction,
            normal_check: false,
            reject_boundary: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_dist_fraction > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prune max_dist_fraction must be positive, got {}",
                self.max_dist_fraction
            )));
        }
        Ok(())
    }
}

/// A target scan prepared for closest-point queries.
#[derive(Debug, Clone)]
pub struct TargetCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub boundary: Vec<bool>,
    pub diagonal: f64,
    index: NeighborIndex,
}

impl TargetCloud {
    /// Uses face normals and open-boundary flags when the target has faces.
    pub fn from_mesh(target: &Mesh) -> Result<Self> {
        if target.faces.is_empty() {
            return Self::from_points(target.vertices.clone());
        }
        let normals = target.vertex_normals();
        let boundary = target.boundary_vertices();
        Self::with_attributes(target.vertices.clone(), Some(normals), boundary)
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        let n = points.len();
        Self::with_attributes(points, None, vec![false; n])
    }

    pub fn with_attributes(points: Vec<Vec3>, normals: Option<Vec<Vec3>>, boundary: Vec<bool>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("target has no points"));
        }
        let index = NeighborIndex::build(&points)?;
        Ok(TargetCloud {
            diagonal: mesh::bbox_diagonal(&points),
            points,
            normals,
            boundary,
            index,
        })
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    /// Copy with every point and normal moved by `f` and rotated by `rot`.
    pub fn mapped(&self, f: impl Fn(&Vec3) -> Vec3, rot: &crate::Mat3) -> Result<Self> {
        let points = self.points.iter().map(f).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| rot * n).collect());
        Self::with_attributes(points, normals, self.boundary.clone())
    }
}

/// One closest-point match per template vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub targets: Vec<Vec3>,
    /// 1 for kept matches, 0 for pruned ones.
    pub weights: Vec<f64>,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn active(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.active() as f64 / self.len() as f64
        }
    }

    /// Restriction to the given vertex indices, in that order.
    pub fn select(&self, vertices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            targets: vertices.iter().map(|&v| self.targets[v]).collect(),
            weights: vertices.iter().map(|&v| self.weights[v]).collect(),
            indices: vertices.iter().map(|&v| self.indices[v]).collect(),
            distances: vertices.iter().map(|&v| self.distances[v]).collect(),
        }
    }

    /// Weighted sum of squared distances between `points` and their matches.
    pub fn weighted_sq_residual(&self, points: &[Vec3]) -> f64 {
        points
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((p, u), w)| w * (p - u).norm_squared())
            .sum()
    }

    /// Weighted root mean squared distance over active matches (0 when none are active).
    pub fn active_rms(&self, points: &[Vec3]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return 0.0;
        }
        (self.weighted_sq_residual(points) / total).sqrt()
    }
}

/// Matches each point to its nearest target point and applies `rule`.
///
/// `normals` are the template normals at `points`; the normal test runs only
/// when both they and the target normals are available.
pub fn correspond(
    points: &[Vec3],
    normals: Option<&[Vec3]>,
    target: &TargetCloud,
    rule: &PruneRule,
) -> CorrespondenceSet {
    let max_dist = rule.max_dist_fraction * target.diagonal;
    let hits = target.index.nearest_all(points);
    let mut set = CorrespondenceSet {
        targets: Vec::with_capacity(points.len()),
        weights: Vec::with_capacity(points.len()),
        indices: Vec::with_capacity(points.len()),
        distances: Vec::with_capacity(points.len()),
    };
    for (j, hit) in hits.iter().enumerate() {
        let mut keep = hit.distance <= max_dist;
        if keep && rule.reject_boundary && target.boundary[hit.index] {
            keep = false;
        }
        if keep && rule.normal_check {
            if let (Some(tn), Some(sn)) = (&target.normals, normals) {
                if tn[hit.index].dot(&sn[j]) < 0.0 {
                    keep = false;
                }
            }
        }
        set.targets.push(hit.point);
        set.weights.push(if keep { 1.0 } else { 0.0 });
        set.indices.push(hit.index);
        set.distances.push(hit.distance);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_correspondence_is_exact() {
        let pts: Vec<Vec3> = (0..30).map(|i| Vec3::new(i as f64, (i % 4) as f64, 1.0)).collect();
        let target = TargetCloud::from_points(pts.clone()).unwrap();
        let set = correspond(&pts, None, &target, &PruneRule::default());
        assert!(set.distances.iter().all(|d| *d == 0.0));
        assert_eq!(set.active(), 30);
        assert_eq!(set.indices, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn far_vertex_is_pruned() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let target = TargetCloud::from_points(pts.clone()).unwrap();
        let mut query = pts.clone();
        query[3].y = 5.0;
        let set = correspond(&query, None, &target, &PruneRule::distance_only(0.05));
        assert_eq!(set.weights[3], 0.0);
        assert_eq!(set.active(), 9);
    }

    #[test]
    fn opposing_normals_are_pruned() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let target = TargetCloud::from_mesh(&m).unwrap();
        let rule = PruneRule {
            reject_boundary: false,
            ..PruneRule::distance_only(1.0)
        };
        let rule = PruneRule { normal_check: true, ..rule };
        let up = vec![Vec3::z(); 3];
        let down = vec![-Vec3::z(); 3];
        assert_eq!(correspond(&m.vertices, Some(&up), &target, &rule).active(), 3);
        assert_eq!(correspond(&m.vertices, Some(&down), &target, &rule).active(), 0);
    }
}
