//! Scan-like corruption: pose jitter, outlier sheets, noise, holes.
//!
//! Lengths are fractions of the input's bounding-box diagonal. Steps run in
//! that order from one seeded stream.

use std::path::Path;

use nalgebra::{Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CHEST, FOOT_L, FOOT_R, HAND_L, HAND_R, HEAD};
use crate::error::{Error, Result};
use crate::mesh::{centroid, Mesh};
use crate::Vec3;

/// Where a hole or sheet goes: a named body location or an explicit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Named(String),
    Point([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub region: Region,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSheet {
    pub region: Region,
    /// Radius of the copied surface patch.
    pub extent: f64,
    /// Displacement along the patch's mean normal.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub seed: u64,
    /// Largest rotation of the head and each limb about its attachment, in degrees.
    pub pose_jitter_deg: f64,
    pub outlier_sheets: Vec<OutlierSheet>,
    /// Per-coordinate standard deviation of Gaussian noise.
    pub noise_sigma: f64,
    pub holes: Vec<HoleSpec>,
}

impl CorruptionSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: CorruptionSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!("{what} must be finite and ≥ 0, got {v}")))
        };
        for (what, v) in [("pose_jitter_deg", self.pose_jitter_deg), ("noise_sigma", self.noise_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(what, v);
            }
        }
        for h in &self.holes {
            if !(h.radius.is_finite() && h.radius >= 0.0) {
                return bad("hole radius", h.radius);
            }
        }
        for s in &self.outlier_sheets {
            if !(s.extent.is_finite() && s.extent >= 0.0) {
                return bad("sheet extent", s.extent);
            }
            if !s.offset.is_finite() {
                return bad("sheet offset", s.offset);
            }
        }
        Ok(())
    }
}

const REGIONS: [&str; 7] = ["head_top", "chest", "back", "hand_l", "hand_r", "sole_l", "sole_r"];

/// Position of a region on a labeled body.
///
/// Named regions: `head_top`, `chest` (front), `back`, `hand_l`, `hand_r`,
/// `sole_l`, `sole_r`.
pub fn region_center(mesh: &Mesh, region: &Region) -> Result<Vec3> {
    let name = match region {
        Region::Point(p) => return Ok(Vec3::new(p[0], p[1], p[2])),
        Region::Named(n) => n.as_str(),
    };
    let labels = mesh
        .part_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("region {name:?} needs part labels")))?;
    let pick = |label: u32, key: &dyn Fn(&Vec3) -> f64| {
        mesh.vertices
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(v, _)| *v)
            .fold(None::<Vec3>, |best, v| match best {
                Some(b) if key(&b) >= key(&v) => Some(b),
                _ => Some(v),
            })
            .ok_or_else(|| Error::InvalidParameter(format!("no vertices labeled {label}")))
    };
    let part_centroid = |label: u32| {
        let pts: Vec<Vec3> = mesh
            .vertices
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(v, _)| *v)
            .collect();
        if pts.is_empty() {
            Err(Error::InvalidParameter(format!("no vertices labeled {label}")))
        } else {
            Ok(centroid(&pts))
        }
    };
    match name {
        "head_top" => pick(HEAD, &|v| v.z),
        "chest" => pick(CHEST, &|v| v.y),
        "back" => pick(CHEST, &|v| -v.y),
        "hand_l" => part_centroid(HAND_L),
        "hand_r" => part_centroid(HAND_R),
        "sole_l" => pick(FOOT_L, &|v| -v.z),
        "sole_r" => pick(FOOT_R, &|v| -v.z),
        _ => Err(Error::InvalidParameter(format!(
            "unknown region {name:?} (known: {})",
            REGIONS.join(", ")
        ))),
    }
}

const JITTER_GROUPS: [&[u32]; 5] = [&[HEAD], &[4, 5, 6], &[7, 8, 9], &[10, 11, 12], &[13, 14, 15]];

fn jitter_pose(mesh: &mut Mesh, max_deg: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let labels = mesh
        .part_labels
        .clone()
        .ok_or_else(|| Error::InvalidParameter("pose jitter needs part labels".into()))?;
    let edges = mesh.edges();
    for group in JITTER_GROUPS {
        let member = |v: usize| group.contains(&labels[v]);
        let mut seam = Vec::new();
        for &(a, b) in &edges {
            if member(a) != member(b) {
                seam.push(if member(a) { a } else { b });
            }
        }
        seam.sort_unstable();
        seam.dedup();
        let axis = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let angle = rng.random_range(-1.0..=1.0) * max_deg.to_radians();
        if seam.is_empty() || axis.norm() == 0.0 {
            continue;
        }
        let pivot = seam.iter().map(|&v| mesh.vertices[v]).sum::<Vec3>() / seam.len() as f64;
        let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle);
        for (v, p) in mesh.vertices.iter_mut().enumerate() {
            if member(v) {
                *p = pivot + rot * (*p - pivot);
            }
        }
    }
    Ok(())
}

fn add_sheet(mesh: &mut Mesh, center: Vec3, radius: f64, offset: f64) {
    let normals = mesh.vertex_normals();
    let picked: Vec<usize> = (0..mesh.vertices.len())
        .filter(|&v| (mesh.vertices[v] - center).norm() <= radius)
        .collect();
    if picked.is_empty() {
        return;
    }
    let mean = picked.iter().map(|&v| normals[v]).sum::<Vec3>();
    let n = if mean.norm() > 0.0 { mean.normalize() } else { Vec3::z() };
    let base = mesh.vertices.len();
    let mut remap = vec![usize::MAX; base];
    for (i, &v) in picked.iter().enumerate() {
        remap[v] = base + i;
        let p = mesh.vertices[v] + n * offset;
        mesh.vertices.push(p);
    }
    let copied: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| remap[v] != usize::MAX))
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    mesh.faces.extend(copied);
}

fn cut_holes(mesh: &Mesh, centers: &[(Vec3, f64)]) -> Result<Mesh> {
    let keep: Vec<bool> = mesh
        .vertices
        .iter()
        .map(|p| centers.iter().all(|(c, r)| (p - c).norm() > *r))
        .collect();
    let mut remap = vec![usize::MAX; keep.len()];
    let mut vertices = Vec::new();
    for (v, &k) in keep.iter().enumerate() {
        if k {
            remap[v] = vertices.len();
            vertices.push(mesh.vertices[v]);
        }
    }
    if vertices.is_empty() {
        return Err(Error::Empty("corrupted scan"));
    }
    let faces = mesh
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| keep[v]))
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    Mesh::new(vertices, faces)
}

/// Corrupted copy of `body`; the result carries no part labels.
///
/// Named regions and jitter need `body` to be labeled. Hole membership is
/// decided on the final (noisy) positions.
pub fn corrupt(body: &Mesh, spec: &CorruptionSpec) -> Result<Mesh> {
    spec.validate()?;
    if body.vertices.is_empty() {
        return Err(Error::Empty("body"));
    }
    let diag = body.bbox_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mesh = body.clone();
    if spec.pose_jitter_deg > 0.0 {
        jitter_pose(&mut mesh, spec.pose_jitter_deg, &mut rng)?;
    }
    let hole_centers = spec
        .holes
        .iter()
        .map(|h| Ok((region_center(&mesh, &h.region)?, h.radius * diag)))
        .collect::<Result<Vec<_>>>()?;
    let sheets = spec
        .outlier_sheets
        .iter()
        .map(|s| Ok((region_center(&mesh, &s.region)?, s)))
        .collect::<Result<Vec<_>>>()?;
    for (center, s) in sheets {
        add_sheet(&mut mesh, center, s.extent * diag, s.offset * diag);
    }
    mesh.part_labels = None;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma * diag)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for p in &mut mesh.vertices {
            for a in 0..3 {
                p[a] += normal.sample(&mut rng);
            }
        }
    }
    let name = body.name.clone();
    let out = if hole_centers.is_empty() {
        mesh
    } else {
        cut_holes(&mesh, &hole_centers)?
    };
    Ok(out.with_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_body, BodyParams, Resolution};

    fn body() -> Mesh {
        generate_body(&BodyParams::default(), Resolution::Desk).unwrap()
    }

    #[test]
    fn empty_spec_copies_geometry() {
        let b = body();
        let out = corrupt(&b, &CorruptionSpec::default()).unwrap();
        assert_eq!(out.vertices, b.vertices);
        assert_eq!(out.faces, b.faces);
        assert!(out.part_labels.is_none());
    }

    #[test]
    fn hole_removes_vertices_in_sphere() {
        let b = body();
        let spec = CorruptionSpec {
            holes: vec![HoleSpec {
                region: Region::Named("head_top".into()),
                radius: 0.05,
            }],
            ..Default::default()
        };
        let c = region_center(&b, &Region::Named("head_top".into())).unwrap();
        let r = 0.05 * b.bbox_diagonal();
        let inside = b.vertices.iter().filter(|p| (*p - c).norm() <= r).count();
        let out = corrupt(&b, &spec).unwrap();
        assert!(inside > 0);
        assert_eq!(out.vertices.len(), b.vertices.len() - inside);
        assert!(out.validate().is_ok());
    }

    #[test]
    fn sheet_adds_offset_copy() {
        let b = body();
        let spec = CorruptionSpec {
            outlier_sheets: vec![OutlierSheet {
                region: Region::Named("chest".into()),
                extent: 0.05,
                offset: 0.02,
            }],
            ..Default::default()
        };
        let out = corrupt(&b, &spec).unwrap();
        assert!(out.vertices.len() > b.vertices.len());
        assert!(out.faces.len() > b.faces.len());
    }

    #[test]
    fn seeded_and_reproducible() {
        let b = body();
        let spec = CorruptionSpec {
            seed: 3,
            noise_sigma: 0.005,
            pose_jitter_deg: 4.0,
            ..Default::default()
        };
        let x = corrupt(&b, &spec).unwrap();
        let y = corrupt(&b, &spec).unwrap();
        assert_eq!(x, y);
        let z = corrupt(&b, &CorruptionSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(x.vertices, z.vertices);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
seed = 9
noise_sigma = 0.005
[[holes]]
region = "head_top"
radius = 0.1
[[holes]]
region = [0.0, 0.1, 1.0]
radius = 0.02
[[outlier_sheets]]
region = "chest"
extent = 0.08
offset = 0.02
"#;
        let spec = CorruptionSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.holes.len(), 2);
        assert_eq!(spec.holes[1].region, Region::Point([0.0, 0.1, 1.0]));
        assert!(CorruptionSpec::from_toml_str("noise_sigma = -1.0").is_err());
        assert!(CorruptionSpec::from_toml_str("bogus = 1").is_err());
        let unknown = CorruptionSpec {
            holes: vec![HoleSpec {
                region: Region::Named("elbow".into()),
                radius: 0.1,
            }],
            ..Default::default()
        };
        assert!(corrupt(&body(), &unknown).is_err());
    }
}
