//! Parametric humanoid meshes in dense correspondence, and scan corruption.

mod body;
mod corrupt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub use body::{body_topology, generate_body, BodyTopology};
pub use corrupt::{corrupt, region_center, CorruptionSpec, HoleSpec, OutlierSheet, Region};

pub const PART_COUNT: usize = 16;

pub const PART_NAMES: [&str; PART_COUNT] = [
    "head", "chest", "abdomen", "pelvis",
    "upper_arm_l", "forearm_l", "hand_l",
    "upper_arm_r", "forearm_r", "hand_r",
    "thigh_l", "shin_l", "foot_l",
    "thigh_r", "shin_r", "foot_r",
];

pub const HEAD: u32 = 0;
pub const CHEST: u32 = 1;
pub const ABDOMEN: u32 = 2;
pub const PELVIS: u32 = 3;
pub const HAND_L: u32 = 6;
pub const HAND_R: u32 = 9;
pub const FOOT_L: u32 = 12;
pub const FOOT_R: u32 = 15;
pub const EXTREMITY_LABELS: [u32; 4] = [HAND_L, HAND_R, FOOT_L, FOOT_R];

/// Mesh resolution. Vertex counts are fixed per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// 2,434 vertices.
    Desk,
    /// 12,514 vertices.
    Paper,
    /// 50,050 vertices.
    Dense,
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Resolution::Desk),
            "paper" => Ok(Resolution::Paper),
            "dense" => Ok(Resolution::Dense),
            _ => Err(Error::InvalidParameter(format!(
                "unknown resolution {s:?} (desk, paper, dense)"
            ))),
        }
    }
}

/// Body proportions. `stature` is in model units (about meters); the other
/// fields are relative factors around 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub stature: f64,
    pub arm_length_l: f64,
    pub arm_length_r: f64,
    pub leg_length_l: f64,
    pub leg_length_r: f64,
    pub torso_girth: f64,
    pub limb_girth: f64,
    pub head_girth: f64,
    pub shoulder_width: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        BodyParams {
            stature: 1.75,
            arm_length_l: 1.0,
            arm_length_r: 1.0,
            leg_length_l: 1.0,
            leg_length_r: 1.0,
            torso_girth: 1.0,
            limb_girth: 1.0,
            head_girth: 1.0,
            shoulder_width: 1.0,
        }
    }
}

impl BodyParams {
    /// Accepted stature range.
    pub const STATURE_RANGE: (f64, f64) = (0.5, 4.0);
    /// Accepted range of every relative factor.
    pub const FACTOR_RANGE: (f64, f64) = (0.7, 1.3);
    /// Stature range drawn by [`BodyParams::sample`].
    pub const SAMPLE_STATURE: (f64, f64) = (1.55, 1.95);
    /// Factor range drawn by [`BodyParams::sample`].
    pub const SAMPLE_FACTOR: (f64, f64) = (0.9, 1.1);

    fn factors(&self) -> [(&'static str, f64); 8] {
        [
            ("arm_length_l", self.arm_length_l),
            ("arm_length_r", self.arm_length_r),
            ("leg_length_l", self.leg_length_l),
            ("leg_length_r", self.leg_length_r),
            ("torso_girth", self.torso_girth),
            ("limb_girth", self.limb_girth),
            ("head_girth", self.head_girth),
            ("shoulder_width", self.shoulder_width),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::STATURE_RANGE;
        if !(self.stature >= lo && self.stature <= hi) {
            return Err(Error::InvalidParameter(format!(
                "stature {} outside [{lo}, {hi}]",
                self.stature
            )));
        }
        let (lo, hi) = Self::FACTOR_RANGE;
        for (name, v) in self.factors() {
            if !(v >= lo && v <= hi) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let (slo, shi) = Self::SAMPLE_STATURE;
        let (flo, fhi) = Self::SAMPLE_FACTOR;
        let mut f = || rng.random_range(flo..=fhi);
        let arm_length_l = f();
        let arm_length_r = f();
        let leg_length_l = f();
        let leg_length_r = f();
        let torso_girth = f();
        let limb_girth = f();
        let head_girth = f();
        let shoulder_width = f();
        BodyParams {
            stature: rng.random_range(slo..=shi),
            arm_length_l,
            arm_length_r,
            leg_length_l,
            leg_length_r,
            torso_girth,
            limb_girth,
            head_girth,
            shoulder_width,
        }
    }
}

/// `n` bodies with parameters drawn from the sampling ranges.
pub fn sample_corpus(n: usize, seed: u64, resolution: Resolution) -> Result<(Vec<Mesh>, Vec<BodyParams>)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("corpus needs at least 2 bodies, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<BodyParams> = (0..n).map(|_| BodyParams::sample(&mut rng)).collect();
    let topo = body_topology(resolution);
    let meshes = params
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(topo.build(p)?.with_name(format!("body_{i:04}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((meshes, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SegmentedTemplate;

    #[test]
    fn vertex_counts_per_level() {
        assert_eq!(body_topology(Resolution::Desk).vertex_count(), 2434);
        assert_eq!(body_topology(Resolution::Paper).vertex_count(), 12514);
    }

    #[test]
    fn desk_body_is_watertight_and_segmented() {
        let m = generate_body(&BodyParams::default(), Resolution::Desk).unwrap();
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        let t = SegmentedTemplate::new(m, PART_COUNT).unwrap();
        assert!(t.part_vertices.iter().all(|p| !p.is_empty()));
        for e in EXTREMITY_LABELS {
            assert!(!t.boundary_sets[e as usize].is_empty());
        }
    }

    #[test]
    fn deterministic_and_corresponding() {
        let a = generate_body(&BodyParams::default(), Resolution::Desk).unwrap();
        let b = generate_body(&BodyParams::default(), Resolution::Desk).unwrap();
        assert_eq!(a, b);
        let other = BodyParams {
            stature: 1.6,
            arm_length_l: 1.1,
            torso_girth: 0.9,
            ..BodyParams::default()
        };
        let c = generate_body(&other, Resolution::Desk).unwrap();
        assert_eq!(a.faces, c.faces);
        assert_eq!(a.vertices.len(), c.vertices.len());
    }

    #[test]
    fn stature_scales_height() {
        let p = BodyParams::default();
        let tall = BodyParams { stature: 2.0 * p.stature, ..p };
        let h = |m: &Mesh| {
            let (lo, hi) = m.bbox();
            hi.z - lo.z
        };
        let a = generate_body(&p, Resolution::Desk).unwrap();
        let b = generate_body(&tall, Resolution::Desk).unwrap();
        assert!((h(&b) / h(&a) - 2.0).abs() < 0.02);
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let p = BodyParams {
            limb_girth: 2.0,
            ..BodyParams::default()
        };
        assert!(generate_body(&p, Resolution::Desk).is_err());
    }

    #[test]
    fn corpus_is_reproducible() {
        let (a, pa) = sample_corpus(3, 7, Resolution::Desk).unwrap();
        let (b, pb) = sample_corpus(3, 7, Resolution::Desk).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(sample_corpus(1, 7, Resolution::Desk).is_err());
    }
}
