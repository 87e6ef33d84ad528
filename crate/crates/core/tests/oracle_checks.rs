//! Main-module results against the independent implementations in `mabr-oracle`.

mod common;

use common::*;
use mabr::coarse::solve_coarse;
use mabr::correspondence::CorrespondenceSet;
use mabr::fine::{homogeneous, solve_shape, Affine, StiffnessSystem};
use mabr::metrics::{chamfer, rms_error};
use mabr::rigid::{principal_frame, scatter_matrix};
use mabr::shape_model::{train_points, ComponentCount, Scope};
use mabr::synth::{corrupt, generate_body, BodyParams, CorruptionSpec, HoleSpec, Region, Resolution};
use mabr::{NeighborIndex, Vec3};
use mabr_oracle::{
    brute_chamfer, brute_rms, dense_lsq, edge_sum_stiffness, full_pca, global_affine_fit, in_sphere_count, linear_nn,
    symmetric_eigen, Dense,
};
use nalgebra::{DVector, Vector4};
use rand::Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn desk_body(seed: u64) -> mabr::Mesh {
    generate_body(&BodyParams::sample(&mut rng(seed)), Resolution::Desk).unwrap()
}

#[test]
fn kd_tree_agrees_with_linear_scan_including_ties() {
    let mut r = rng(1);
    // a coarse lattice makes duplicate points and equidistant neighbors common
    let lattice = |r: &mut rand_chacha::ChaCha8Rng| Vec3::new(
        r.random_range(0..6) as f64 * 0.5,
        r.random_range(0..6) as f64 * 0.5,
        r.random_range(0..3) as f64 * 0.5,
    );
    for size in [1, 7, 64, 900] {
        let points: Vec<Vec3> = (0..size).map(|_| lattice(&mut r)).collect();
        let index = NeighborIndex::build(&points).unwrap();
        let flat = pts(&points);
        for _ in 0..300 {
            let q = if r.random::<bool>() { lattice(&mut r) } else { gauss_vec3(&mut r, 1.5) };
            let hit = index.nearest(&q);
            let expected = linear_nn(&flat, &pt(&q)).unwrap();
            assert_eq!(hit.index, expected, "query {q:?}");
            assert!((hit.distance - (points[expected] - q).norm()).abs() < 1e-15);
        }
    }
}

#[test]
fn chamfer_and_rms_agree_with_brute_force() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.random_range(1..120);
        let m = r.random_range(1..120);
        let a: Vec<Vec3> = (0..n).map(|_| gauss_vec3(&mut r, 1.0)).collect();
        let b: Vec<Vec3> = (0..m).map(|_| gauss_vec3(&mut r, 1.0)).collect();
        let ours = chamfer(&a, &b).unwrap();
        assert!(rel(ours, brute_chamfer(&pts(&a), &pts(&b)).unwrap()) < 1e-12);
        let c: Vec<Vec3> = a.iter().map(|p| p + gauss_vec3(&mut r, 0.1)).collect();
        assert!(rel(rms_error(&a, &c).unwrap(), brute_rms(&pts(&a), &pts(&c)).unwrap()) < 1e-12);
    }
}

#[test]
fn ridge_solve_matches_augmented_least_squares() {
    let mut r = rng(3);
    for _ in 0..30 {
        let n = r.random_range(4..30);
        let k = r.random_range(1..=6);
        let (model, basis3, mean3) = random_model(&mut r, n, k);
        let corr = random_matches(&mut r, n, 0.3);
        let ridge = r.random_range(0.01..2.0);
        let c = solve_coarse(&model, &corr, ridge).unwrap();

        let active: Vec<usize> = (0..n).filter(|&j| corr.weights[j] > 0.0).collect();
        let mut a = Dense::zeros(3 * active.len() + k, k);
        let mut b = vec![0.0; 3 * active.len() + k];
        for (row, &j) in active.iter().enumerate() {
            let s = corr.weights[j].sqrt();
            for axis in 0..3 {
                for col in 0..k {
                    a.set(3 * row + axis, col, s * basis3.get(3 * j + axis, col));
                }
                b[3 * row + axis] = s * (corr.targets[j][axis] - mean3[3 * j + axis]);
            }
        }
        for i in 0..k {
            a.set(3 * active.len() + i, i, (ridge / model.eigenvalues[i]).sqrt());
        }
        let expected = dense_lsq(&a, &b).unwrap();
        let err = (0..k).map(|i| (c[i] - expected[i]).powi(2)).sum::<f64>().sqrt();
        let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * norm.max(1.0), "error {err:.3e}");
    }
}

#[test]
fn shape_step_matches_least_squares_under_fixed_affines() {
    let mut r = rng(4);
    for _ in 0..30 {
        let n = r.random_range(3..25);
        let k = r.random_range(1..=6);
        let (model, basis3, mean3) = random_model(&mut r, n, k);
        let corr = random_matches(&mut r, n, 0.2);
        let x: Vec<Affine> = (0..n).map(|_| Affine::from_fn(|_, _| gauss(&mut r))).collect();
        let Some(c) = solve_shape(&model, &x, &corr).unwrap() else {
            continue;
        };
        // point j lands at Xⱼᵀ (B̂ⱼ c + m̂ⱼ), homogeneous row of B̂ⱼ zero, of m̂ⱼ one
        let active: Vec<usize> = (0..n).filter(|&j| corr.weights[j] > 0.0).collect();
        let mut a = Dense::zeros(3 * active.len(), k);
        let mut b = vec![0.0; 3 * active.len()];
        for (row, &j) in active.iter().enumerate() {
            let s = corr.weights[j].sqrt();
            for out in 0..3 {
                for col in 0..k {
                    let v: f64 = (0..3).map(|i| x[j][(i, out)] * basis3.get(3 * j + i, col)).sum();
                    a.set(3 * row + out, col, s * v);
                }
                let fixed: f64 = (0..3).map(|i| x[j][(i, out)] * mean3[3 * j + i]).sum::<f64>() + x[j][(3, out)];
                b[3 * row + out] = s * (corr.targets[j][out] - fixed);
            }
        }
        let expected = dense_lsq(&a, &b).unwrap();
        for i in 0..k {
            assert!((c[i] - expected[i]).abs() <= 1e-8 * (1.0 + expected[i].abs()));
        }
    }
}

#[test]
fn very_stiff_affine_step_is_one_global_affine() {
    let mut r = rng(5);
    for _ in 0..5 {
        let template = banded_template(&mut r, 4, 5, 1);
        let system = StiffnessSystem::for_part(&template, 0, 1.0).unwrap();
        let src = &template.mesh.vertices;
        let warp = Affine::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * gauss(&mut r));
        let targets: Vec<Vec3> = src.iter().map(|p| warp.tr_mul(&homogeneous(p)) + gauss_vec3(&mut r, 0.05)).collect();
        let corr = CorrespondenceSet {
            weights: vec![1.0; src.len()],
            indices: (0..src.len()).collect(),
            distances: vec![0.0; src.len()],
            targets: targets.clone(),
        };
        let vhat: Vec<Vector4<f64>> = src.iter().map(homogeneous).collect();
        let global = global_affine_fit(&pts(src), &pts(&targets)).unwrap();
        // the gap to the single best affine closes like 1/β
        let deviation = |beta: f64| {
            let x = system.solve_affine(&vhat, &corr, beta).unwrap();
            x.iter()
                .flat_map(|xj| (0..12).map(move |i| (xj[(i / 3, i % 3)] - global[i / 3][i % 3]).abs()))
                .fold(0.0, f64::max)
        };
        let (loose, stiff) = (deviation(1e3), deviation(1e7));
        assert!(stiff < 1e-6, "deviation {stiff:.3e}");
        assert!(stiff < 1e-3 * loose);
    }
}

#[test]
fn body_stiffness_with_mixed_gamma_matches_edge_sum() {
    let mut r = rng(6);
    let body = desk_body(6);
    let template = mabr::SegmentedTemplate::new(body, 16).unwrap();
    let gamma: Vec<f64> = (0..16).map(|_| r.random_range(0.1..3.0)).collect();
    let vertex_gamma: Vec<f64> = template.labels().iter().map(|&l| gamma[l as usize]).collect();
    let all: Vec<usize> = (0..template.vertex_count()).collect();
    let system = StiffnessSystem::new(&template, &all, &vertex_gamma).unwrap();
    let x: Vec<Affine> = (0..all.len()).map(|_| Affine::from_fn(|_, _| gauss(&mut r))).collect();
    let edges = template.mesh.edges();
    let edge_gamma: Vec<f64> = edges.iter().map(|&(a, b)| 0.5 * (vertex_gamma[a] + vertex_gamma[b])).collect();
    let rows: Vec<[[f64; 3]; 4]> = x
        .iter()
        .map(|xj| std::array::from_fn(|row| std::array::from_fn(|col| xj[(row, col)])))
        .collect();
    let expected = edge_sum_stiffness(&edges, &edge_gamma, &rows);
    assert!(rel(system.energy(&x), expected) < 1e-10);
}

#[test]
fn training_matches_full_eigendecomposition() {
    let mut r = rng(7);
    for trial in 0..6 {
        let shapes = r.random_range(3..=10);
        let nv = r.random_range(2..=16);
        let corpus: Vec<Vec<Vec3>> = (0..shapes)
            .map(|_| (0..nv).map(|_| gauss_vec3(&mut r, 1.0)).collect())
            .collect();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        let k = r.random_range(1..shapes);
        let model = train_points(&views, ComponentCount::Fixed(k), Scope::Holistic).unwrap();

        let rows: Vec<Vec<f64>> = corpus.iter().map(|s| s.iter().flat_map(|p| [p.x, p.y, p.z]).collect()).collect();
        let (mean, values, vectors) = full_pca(&Dense::from_rows(&rows).unwrap()).unwrap();
        for j in 0..nv {
            for a in 0..3 {
                assert!((model.mean[4 * j + a] - mean[3 * j + a]).abs() < 1e-12);
            }
        }
        for i in 0..k {
            assert!(rel(model.eigenvalues[i], values[i]) < 1e-9, "trial {trial} eigenvalue {i}");
        }
        // equal reconstructions of an unseen shape
        let probe: Vec<Vec3> = (0..nv).map(|_| gauss_vec3(&mut r, 1.0)).collect();
        let ours = model.synthesize(&model.project(&probe).unwrap()).unwrap();
        let centered: Vec<f64> = probe.iter().flat_map(|p| [p.x, p.y, p.z]).zip(&mean).map(|(v, m)| v - m).collect();
        let mut recon = mean.clone();
        for i in 0..k {
            let dot: f64 = (0..3 * nv).map(|d| vectors.get(d, i) * centered[d]).sum();
            for d in 0..3 * nv {
                recon[d] += dot * vectors.get(d, i);
            }
        }
        for j in 0..nv {
            for a in 0..3 {
                assert!((ours[j][a] - recon[3 * j + a]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn principal_moments_match_symmetric_eigensolver() {
    for seed in 0..5 {
        let body = desk_body(seed);
        let frame = principal_frame(&body.vertices).unwrap();
        let scatter = scatter_matrix(&body.vertices).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| scatter[(i, j)]).collect()).collect();
        let (values, _) = symmetric_eigen(&Dense::from_rows(&rows).unwrap()).unwrap();
        for i in 0..3 {
            assert!(rel(frame.eigenvalues[i], values[i]) < 1e-9);
        }
    }
}

#[test]
fn hole_removes_exactly_the_vertices_inside_its_sphere() {
    let body = desk_body(8);
    let diag = body.bbox_diagonal();
    for (i, radius) in [0.02, 0.05, 0.1, 0.2].into_iter().enumerate() {
        let center = body.vertices[i * 500];
        let spec = CorruptionSpec {
            holes: vec![HoleSpec {
                region: Region::Point([center.x, center.y, center.z]),
                radius,
            }],
            ..Default::default()
        };
        let holed = corrupt(&body, &spec).unwrap();
        let inside = in_sphere_count(&pts(&body.vertices), &pt(&center), radius * diag);
        assert!(inside > 0);
        assert_eq!(holed.vertex_count(), body.vertex_count() - inside);
    }
}

#[test]
fn noise_has_the_requested_spread() {
    let body = desk_body(9);
    let diag = body.bbox_diagonal();
    let sigma = 0.004;
    let spec = CorruptionSpec {
        seed: 17,
        noise_sigma: sigma,
        ..Default::default()
    };
    let noisy = corrupt(&body, &spec).unwrap();
    let d: Vec<f64> = noisy
        .vertices
        .iter()
        .zip(&body.vertices)
        .flat_map(|(a, b)| {
            let e = a - b;
            [e.x, e.y, e.z]
        })
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    assert!(mean.abs() < 0.05 * sigma * diag, "mean {mean:.3e}");
    assert!((std / (sigma * diag) - 1.0).abs() < 0.05, "std {std:.3e}");
}

#[test]
fn coarse_solve_beats_nearby_coefficients() {
    let mut r = rng(10);
    let (model, _, _) = random_model(&mut r, 20, 5);
    let corr = random_matches(&mut r, 20, 0.25);
    let c = solve_coarse(&model, &corr, 0.0).unwrap();
    let best = mabr::coarse::coarse_objective(&model, &corr, &c).unwrap();
    for _ in 0..200 {
        let probe = &c + DVector::from_fn(5, |_, _| 1e-3 * gauss(&mut r));
        assert!(best <= mabr::coarse::coarse_objective(&model, &corr, &probe).unwrap() + 1e-12);
    }
}
