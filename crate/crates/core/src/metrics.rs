//! Error measures between fitted meshes, ground truth and raw scans.

use crate::error::{Error, Result};
use crate::spatial::NeighborIndex;
use crate::Vec3;

/// Root mean square of per-vertex Euclidean distances between corresponding points.
pub fn rms_error(fitted: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: fitted.len(),
        });
    }
    if fitted.is_empty() {
        return Err(Error::Empty("rms_error of empty point sets"));
    }
    let sum: f64 = fitted.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sum / fitted.len() as f64).sqrt())
}

/// RMS restricted to the vertices of each part label.
pub fn per_part_rms(fitted: &[Vec3], truth: &[Vec3], labels: &[u32], part_count: usize) -> Result<Vec<f64>> {
    if fitted.len() != truth.len() || labels.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: fitted.len().min(labels.len()),
        });
    }
    let mut sum = vec![0.0; part_count];
    let mut count = vec![0usize; part_count];
    for ((a, b), &l) in fitted.iter().zip(truth).zip(labels) {
        sum[l as usize] += (a - b).norm_squared();
        count[l as usize] += 1;
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
        .collect())
}

/// Mean nearest-neighbor distance from every point of `from` to `to_index`.
pub fn mean_nn_distance(from: &[Vec3], to_index: &NeighborIndex) -> f64 {
    let d: f64 = to_index.nearest_all(from).iter().map(|n| n.distance).sum();
    d / from.len() as f64
}

/// Symmetric chamfer distance: the average of the two directed mean
/// nearest-neighbor distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer needs two non-empty point sets"));
    }
    let ia = NeighborIndex::build(a)?;
    let ib = NeighborIndex::build(b)?;
    Ok(0.5 * (mean_nn_distance(a, &ib) + mean_nn_distance(b, &ia)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_of_uniform_offset_is_offset_length() {
        let truth: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 1.0, -2.0)).collect();
        let d = Vec3::new(0.3, -0.4, 1.2);
        let fitted: Vec<Vec3> = truth.iter().map(|p| p + d).collect();
        assert!((rms_error(&fitted, &truth).unwrap() - d.norm()).abs() < 1e-14);
        assert_eq!(rms_error(&truth, &truth).unwrap(), 0.0);
        assert!(rms_error(&truth[..3], &truth).is_err());
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(0.0, 3.0, 4.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 5.0);
        assert_eq!(chamfer(&b, &b).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn per_part_split() {
        let truth = vec![Vec3::zeros(); 4];
        let fitted = vec![Vec3::x(), Vec3::x(), Vec3::zeros(), Vec3::y() * 2.0];
        let r = per_part_rms(&fitted, &truth, &[0, 0, 1, 1], 2).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        assert!((r[1] - 2f64.sqrt()).abs() < 1e-15);
    }
}
