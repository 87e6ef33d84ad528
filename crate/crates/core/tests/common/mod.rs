#![allow(dead_code)]

use mabr::correspondence::CorrespondenceSet;
use mabr::shape_model::{Scope, ShapeModel};
use mabr::{Mesh, SegmentedTemplate, Vec3};
use mabr_oracle::{Dense, Point};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn pt(v: &Vec3) -> Point {
    [v.x, v.y, v.z]
}

pub fn pts(vs: &[Vec3]) -> Vec<Point> {
    vs.iter().map(pt).collect()
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gauss_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(gauss(rng), gauss(rng), gauss(rng)) * scale
}

/// A model over `n` vertices with `k` random orthonormal components.
///
/// Also returns the basis and mean with the homogeneous rows dropped
/// (`3n × k` and `3n`), in the layout the oracles expect.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (ShapeModel, Dense, Vec<f64>) {
    let raw = DMatrix::from_fn(3 * n, k, |_, _| gauss(rng));
    let q = raw.qr().q();
    let mut basis = DMatrix::zeros(4 * n, k);
    let mut mean = DVector::zeros(4 * n);
    let mut basis3 = Dense::zeros(3 * n, k);
    let mut mean3 = vec![0.0; 3 * n];
    for j in 0..n {
        for a in 0..3 {
            let m = gauss(rng);
            mean[4 * j + a] = m;
            mean3[3 * j + a] = m;
            for c in 0..k {
                basis[(4 * j + a, c)] = q[(3 * j + a, c)];
                basis3.set(3 * j + a, c, q[(3 * j + a, c)]);
            }
        }
        mean[4 * j + 3] = 1.0;
    }
    let eigenvalues = (0..k).map(|i| 1.0 / (i + 1) as f64).collect();
    let model = ShapeModel {
        scope: Scope::Holistic,
        mean,
        basis,
        eigenvalues,
    };
    (model, basis3, mean3)
}

/// Random targets; roughly `zero_fraction` of the matches are pruned and the
/// rest carry weights in (0.2, 1].
pub fn random_matches(rng: &mut ChaCha8Rng, n: usize, zero_fraction: f64) -> CorrespondenceSet {
    let targets: Vec<Vec3> = (0..n).map(|_| gauss_vec3(rng, 1.0)).collect();
    let weights: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < zero_fraction { 0.0 } else { rng.random_range(0.2..=1.0) })
        .collect();
    CorrespondenceSet {
        distances: vec![0.0; n],
        indices: (0..n).collect(),
        targets,
        weights,
    }
}

/// A `rows × cols` triangulated grid with jittered vertices.
pub fn grid_mesh(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            vertices.push(Vec3::new(c as f64, r as f64, 0.0) + gauss_vec3(rng, 0.1));
        }
    }
    let mut faces = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let v = r * cols + c;
            faces.push([v, v + 1, v + cols + 1]);
            faces.push([v, v + cols + 1, v + cols]);
        }
    }
    Mesh::new(vertices, faces).expect("grid is valid")
}

/// A grid split into vertical bands, one part per band.
pub fn banded_template(rng: &mut ChaCha8Rng, rows: usize, cols: usize, parts: usize) -> SegmentedTemplate {
    let mesh = grid_mesh(rng, rows, cols);
    let labels = (0..rows * cols).map(|v| ((v % cols) * parts / cols) as u32).collect();
    SegmentedTemplate::new(mesh.with_labels(labels).expect("labels fit"), parts).expect("bands are connected")
}
