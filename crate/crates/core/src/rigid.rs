//! Principal-axis rigid alignment.

use nalgebra::{Matrix3xX, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::metrics::chamfer;
use crate::{Mat3, Vec3};

/// Points used per cloud when scoring sign-flip candidates.
pub const CANDIDATE_SAMPLE: usize = 2000;
const CANDIDATE_SEED: u64 = 0x5eed_a11c;
const DEGENERATE_RATIO: f64 = 1e-9;

/// Proper rigid motion `p ↦ R (p − c_b) + c_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    /// Centroid of the reference (source) shape.
    pub source_centroid: Vec3,
    /// Centroid of the moving (target) shape.
    pub target_centroid: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            source_centroid: Vec3::zeros(),
            target_centroid: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, source_centroid: Vec3, target_centroid: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation: source_centroid - rotation * target_centroid,
            source_centroid,
            target_centroid,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.target_centroid) + self.source_centroid
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        RigidTransform::new(self.rotation.transpose(), self.target_centroid, self.source_centroid)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> Self {
        let rotation = self.rotation * first.rotation;
        let source_centroid = self.apply(&first.source_centroid);
        RigidTransform::new(rotation, source_centroid, first.target_centroid)
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Mat3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalFrame {
    pub centroid: Vec3,
    /// Columns are unit eigenvectors, ordered by descending eigenvalue.
    pub axes: Mat3,
    pub eigenvalues: [f64; 3],
}

/// Centered coordinates as a 3×n matrix, one column per point.
pub fn centered_matrix(points: &[Vec3]) -> Result<Matrix3xX<f64>> {
    if points.is_empty() {
        return Err(Error::Empty("centered_matrix needs at least one point"));
    }
    let c = crate::mesh::centroid(points);
    Ok(Matrix3xX::from_iterator(
        points.len(),
        points.iter().flat_map(|p| {
            let d = p - c;
            [d.x, d.y, d.z]
        }),
    ))
}

/// Raw second-moment matrix `P Pᵀ` of the centered points.
pub fn scatter_matrix(points: &[Vec3]) -> Result<Mat3> {
    let p = centered_matrix(points)?;
    Ok(&p * p.transpose())
}

pub fn principal_frame(points: &[Vec3]) -> Result<PrincipalFrame> {
    let m = scatter_matrix(points)?;
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    if !(eigenvalues[0] > 0.0) || eigenvalues[2] / eigenvalues[0] < DEGENERATE_RATIO {
        return Err(Error::DegenerateShape(format!(
            "principal moments {:.3e}, {:.3e}, {:.3e} are rank deficient",
            eigenvalues[0], eigenvalues[1], eigenvalues[2]
        )));
    }
    let e1 = canonical_sign(eig.eigenvectors.column(order[0]).into_owned());
    let e2 = canonical_sign(eig.eigenvectors.column(order[1]).into_owned());
    let e3 = e1.cross(&e2).normalize();
    Ok(PrincipalFrame {
        centroid: crate::mesh::centroid(points),
        axes: Mat3::from_columns(&[e1, e2, e3]),
        eigenvalues,
    })
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    let v = v.normalize();
    if v[v.iamax()] < 0.0 {
        -v
    } else {
        v
    }
}

/// The four proper rotations taking the target frame onto the source frame,
/// one per sign choice of the first two target axes.
pub fn candidate_rotations(source: &PrincipalFrame, target: &PrincipalFrame) -> [Mat3; 4] {
    [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].map(|(s1, s2)| {
        let flip = Mat3::from_diagonal(&Vec3::new(s1, s2, s1 * s2));
        source.axes * flip * target.axes.transpose()
    })
}

/// Deterministic subsample of at most `CANDIDATE_SAMPLE` points.
pub fn subsample(points: &[Vec3]) -> Vec<Vec3> {
    if points.len() <= CANDIDATE_SAMPLE {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CANDIDATE_SEED);
    let mut idx = rand::seq::index::sample(&mut rng, points.len(), CANDIDATE_SAMPLE).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Rigid transform taking `target` into the frame of `source`.
///
/// Of the four sign-flip candidates, the one with the smallest symmetric
/// chamfer distance between subsampled clouds wins; earlier candidates win ties.
pub fn align_points(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    let fa = principal_frame(source)?;
    let fb = principal_frame(target)?;
    let sa = subsample(source);
    let sb = subsample(target);
    let mut best: Option<(f64, RigidTransform)> = None;
    for rotation in candidate_rotations(&fa, &fb) {
        let t = RigidTransform::new(rotation, fa.centroid, fb.centroid);
        let moved = t.apply_all(&sb);
        let score = chamfer(&sa, &moved)?;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, t));
        }
    }
    Ok(best.expect("four candidates").1)
}

/// Aligns `target` to `source`, returning the transform and the moved copy.
pub fn align_rigid(source: &Mesh, target: &Mesh) -> Result<(RigidTransform, Mesh)> {
    let t = align_points(&source.vertices, &target.vertices)?;
    let mut moved = target.clone();
    moved.vertices = t.apply_all(&target.vertices);
    Ok((t, moved))
}
