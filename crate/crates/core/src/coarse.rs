//! Coarse registration in the span of the holistic shape model.

use nalgebra::{DMatrix, DVector, Rotation3};
use serde::{Deserialize, Serialize};

use crate::correspondence::{correspond, CorrespondenceSet, PruneRule, TargetCloud};
use crate::error::{Error, Result};
use crate::mesh::{centroid, vertex_normals};
use crate::rigid::RigidTransform;
use crate::shape_model::ShapeModel;
use crate::trace::TracePoint;
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseOptions {
    /// Relative change of the RMS below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of `‖c / √eigenvalue‖²`; 0 gives the plain least-squares fit.
    pub ridge: f64,
    /// Re-estimate a rigid motion together with the coefficients at every
    /// iteration; off solves for the coefficients alone.
    pub rigid: bool,
    /// Weight of the point-to-plane term against target normals, used with
    /// `rigid` on mesh targets; 0 keeps point-to-point matching only.
    pub plane_weight: f64,
    pub prune: PruneRule,
}

impl Default for CoarseOptions {
    fn default() -> Self {
        CoarseOptions {
            tol: 1e-6,
            max_iter: 100,
            ridge: 0.0,
            rigid: true,
            plane_weight: 10.0,
            prune: PruneRule::default(),
        }
    }
}

impl CoarseOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol >= 0.0) || !(self.ridge >= 0.0) || !(self.plane_weight >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coarse options need max_iter ≥ 1 and tol, ridge, plane_weight ≥ 0 (got {}, {}, {}, {})",
                self.max_iter, self.tol, self.ridge, self.plane_weight
            )));
        }
        self.prune.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseResult {
    pub coefficients: DVector<f64>,
    /// `B c + m`, in the model frame.
    pub model_vertices: Vec<Vec3>,
    /// Model frame to target frame; the identity unless `rigid` is on.
    pub motion: RigidTransform,
    /// `motion` applied to `model_vertices`.
    pub vertices: Vec<Vec3>,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    pub correspondences: CorrespondenceSet,
}

/// Weighted objective `Σ w_j ‖(B c + m)_j − u_j‖²`.
pub fn coarse_objective(model: &ShapeModel, corr: &CorrespondenceSet, c: &DVector<f64>) -> Result<f64> {
    let v = model.synthesize(c)?;
    Ok(corr.weighted_sq_residual(&v))
}

fn check_len(model: &ShapeModel, corr: &CorrespondenceSet) -> Result<()> {
    if corr.len() != model.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: model.vertex_count(),
            got: corr.len(),
        });
    }
    Ok(())
}

/// Adds `w · rowᵀ row` (upper triangle only) and `w · rowᵀ resid`.
fn accumulate(a: &mut DMatrix<f64>, b: &mut DVector<f64>, row: &[f64], w: f64, resid: f64) {
    for c1 in 0..row.len() {
        let wr = w * row[c1];
        if wr == 0.0 {
            continue;
        }
        b[c1] += wr * resid;
        for c2 in c1..row.len() {
            a[(c1, c2)] += wr * row[c2];
        }
    }
}

/// Weighted normal equations `Σ w_j B_jᵀ B_j` and `Σ w_j B_jᵀ (u_j − m_j)`.
pub fn normal_equations(model: &ShapeModel, corr: &CorrespondenceSet) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_len(model, corr)?;
    let k = model.component_count();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for j in 0..model.vertex_count() {
        let w = corr.weights[j];
        if w == 0.0 {
            continue;
        }
        for axis in 0..3 {
            let r = 4 * j + axis;
            for (c, x) in row.iter_mut().enumerate() {
                *x = model.basis[(r, c)];
            }
            accumulate(&mut a, &mut b, &row, w, corr.targets[j][axis] - model.mean[r]);
        }
    }
    a.fill_lower_triangle_with_upper_triangle();
    Ok((a, b))
}

fn check_rows(unknowns: usize, corr: &CorrespondenceSet) -> Result<()> {
    let rows = 3 * corr.active();
    if rows < unknowns {
        return Err(Error::UnderConstrained { active: rows, unknowns });
    }
    Ok(())
}

fn add_ridge(a: &mut DMatrix<f64>, model: &ShapeModel, ridge: f64) {
    if ridge > 0.0 {
        for (i, e) in model.eigenvalues.iter().enumerate() {
            a[(i, i)] += ridge / e.max(f64::MIN_POSITIVE);
        }
    }
}

/// Coefficients minimizing the weighted objective, plus an optional ridge.
pub fn solve_coarse(model: &ShapeModel, corr: &CorrespondenceSet, ridge: f64) -> Result<DVector<f64>> {
    check_rows(model.component_count(), corr)?;
    let (mut a, b) = normal_equations(model, corr)?;
    add_ridge(&mut a, model, ridge);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("coarse normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&b))
}

/// Target normals at each match, with the weight of the point-to-plane term.
#[derive(Debug, Clone, Copy)]
pub struct PlaneTerm<'a> {
    pub normals: &'a [Vec3],
    pub weight: f64,
}

/// One joint step for the coefficients and a small motion of the model.
///
/// With the model placed as `R (B c + m) + t`, the rotation is linearized
/// about its current value: the rows for vertex `j` are
/// `[R B_j | −[p_j − p̄]× | I]` acting on `(c, ω, δ)`, where `p` are the current
/// positions. A plane term adds the row `nᵀ [R B_j | −[p_j − p̄]× | I]` per
/// vertex, so motion along the target surface is not penalized by it.
/// Returns the coefficients and the updated placement.
pub fn solve_coarse_rigid(
    model: &ShapeModel,
    corr: &CorrespondenceSet,
    ridge: f64,
    placement: (&Mat3, &Vec3),
    current: &[Vec3],
    plane: Option<PlaneTerm>,
) -> Result<(DVector<f64>, Mat3, Vec3)> {
    check_len(model, corr)?;
    let k = model.component_count();
    let n = k + 6;
    check_rows(n, corr)?;
    let (rot, trans) = placement;
    let pivot = centroid(current);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut rows = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut normal_row = vec![0.0; n];
    for j in 0..model.vertex_count() {
        let w = corr.weights[j];
        if w == 0.0 {
            continue;
        }
        let q = current[j] - pivot;
        let resid = corr.targets[j] - (rot * model.mean_at(j) + trans);
        let cross = [[0.0, q.z, -q.y], [-q.z, 0.0, q.x], [q.y, -q.x, 0.0]];
        for (axis, row) in rows.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().take(k).enumerate() {
                *x = (0..3).map(|i| rot[(axis, i)] * model.basis[(4 * j + i, c)]).sum();
            }
            row[k..k + 3].copy_from_slice(&cross[axis]);
            for i in 0..3 {
                row[k + 3 + i] = if i == axis { 1.0 } else { 0.0 };
            }
            accumulate(&mut a, &mut b, row, w, resid[axis]);
        }
        if let Some(p) = plane {
            let nj = p.normals[j];
            for (c, x) in normal_row.iter_mut().enumerate() {
                *x = nj.x * rows[0][c] + nj.y * rows[1][c] + nj.z * rows[2][c];
            }
            accumulate(&mut a, &mut b, &normal_row, w * p.weight, nj.dot(&resid));
        }
    }
    a.fill_lower_triangle_with_upper_triangle();
    add_ridge(&mut a, model, ridge);
    let x = a
        .cholesky()
        .ok_or_else(|| Error::Singular("coarse rigid normal matrix is not positive definite".into()))?
        .solve(&b);
    let c = x.rows(0, k).into_owned();
    let omega = Vec3::new(x[k], x[k + 1], x[k + 2]);
    let delta = Vec3::new(x[k + 3], x[k + 4], x[k + 5]);
    let step = Rotation3::new(omega).into_inner();
    // p ↦ step (p − p̄) + p̄ + δ, after the current placement
    let new_rot = step * rot;
    let new_trans = step * (trans - pivot) + pivot + delta;
    Ok((c, new_rot, new_trans))
}

fn place(points: &[Vec3], rot: &Mat3, trans: &Vec3) -> Vec<Vec3> {
    points.iter().map(|p| rot * p + trans).collect()
}

/// Alternates closest-point matching and the closed-form solve.
///
/// `faces` supplies template normals for the normal-compatibility test.
pub fn coarse_register(
    model: &ShapeModel,
    faces: Option<&[[usize; 3]]>,
    target: &TargetCloud,
    opts: &CoarseOptions,
    initial: Option<DVector<f64>>,
) -> Result<CoarseResult> {
    opts.validate()?;
    let mut c = initial.unwrap_or_else(|| DVector::zeros(model.component_count()));
    let mut rot = Mat3::identity();
    let mut trans = Vec3::zeros();
    let mut model_vertices = model.synthesize(&c)?;
    let mut vertices = model_vertices.clone();
    let mut trace = Vec::new();
    let mut corr;
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let normals = faces.map(|f| vertex_normals(&vertices, f));
        corr = correspond(&vertices, normals.as_deref(), target, &opts.prune);
        let start_objective = corr.weighted_sq_residual(&vertices);
        if opts.rigid {
            let matched_normals: Option<Vec<Vec3>> = match &target.normals {
                Some(tn) if opts.plane_weight > 0.0 => Some(corr.indices.iter().map(|&i| tn[i]).collect()),
                _ => None,
            };
            let plane = matched_normals.as_deref().map(|normals| PlaneTerm {
                normals,
                weight: opts.plane_weight,
            });
            let (c_new, r, t) =
                solve_coarse_rigid(model, &corr, opts.ridge, (&rot, &trans), &vertices, plane)?;
            c = c_new;
            rot = r;
            trans = t;
        } else {
            c = solve_coarse(model, &corr, opts.ridge)?;
        }
        model_vertices = model.synthesize(&c)?;
        vertices = place(&model_vertices, &rot, &trans);
        let data = corr.weighted_sq_residual(&vertices);
        let rms = corr.active_rms(&vertices);
        trace.push(TracePoint {
            iteration: iterations,
            beta: 0.0,
            start_objective,
            objective: data,
            data,
            stiffness: 0.0,
            rms,
            valid_fraction: corr.valid_fraction(),
        });
        let converged = match prev {
            Some(p) => (p - rms).abs() <= opts.tol * p || rms == 0.0,
            None => rms == 0.0,
        };
        if converged || iterations >= opts.max_iter {
            break;
        }
        prev = Some(rms);
    }
    Ok(CoarseResult {
        coefficients: c,
        model_vertices,
        motion: RigidTransform::new(rot, trans, Vec3::zeros()),
        vertices,
        trace,
        iterations,
        correspondences: corr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape_model::{train_points, ComponentCount, Scope};

    fn toy_model() -> ShapeModel {
        let base: Vec<Vec3> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.5;
                Vec3::new(t.cos() * (1.0 + 0.1 * i as f64), t.sin(), 0.3 * i as f64)
            })
            .collect();
        let corpus: Vec<Vec<Vec3>> = (0..5)
            .map(|s| {
                let a = s as f64 * 0.1 - 0.2;
                let b = ((s * 7) % 5) as f64 * 0.05 - 0.1;
                base.iter()
                    .enumerate()
                    .map(|(i, p)| p + Vec3::new(a * p.x, b * p.z, a * b * i as f64))
                    .collect()
            })
            .collect();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        train_points(&views, ComponentCount::Fixed(3), Scope::Holistic).unwrap()
    }

    #[test]
    fn recovers_in_span_target() {
        let model = toy_model();
        let c = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let truth = model.synthesize(&c).unwrap();
        let target = TargetCloud::from_points(truth).unwrap();
        let opts = CoarseOptions {
            rigid: false,
            prune: PruneRule::distance_only(1.0),
            ..CoarseOptions::default()
        };
        let res = coarse_register(&model, None, &target, &opts, Some(c.clone())).unwrap();
        assert!((res.coefficients - c).norm() < 1e-9);
        assert!(res.trace.last().unwrap().rms < 1e-9);
        assert_eq!(res.motion, RigidTransform::new(Mat3::identity(), Vec3::zeros(), Vec3::zeros()));
    }

    #[test]
    fn joint_step_recovers_small_motion() {
        let model = toy_model();
        let c = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let truth = model.synthesize(&c).unwrap();
        let r = Rotation3::new(Vec3::new(0.01, -0.02, 0.015)).into_inner();
        let t = Vec3::new(0.01, 0.0, -0.02);
        let moved: Vec<Vec3> = truth.iter().map(|p| r * p + t).collect();
        let target = TargetCloud::from_points(moved.clone()).unwrap();
        let opts = CoarseOptions {
            prune: PruneRule::distance_only(1.0),
            tol: 0.0,
            max_iter: 20,
            ..CoarseOptions::default()
        };
        let res = coarse_register(&model, None, &target, &opts, Some(c)).unwrap();
        let err = res
            .vertices
            .iter()
            .zip(&moved)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
        assert!(res.motion.is_proper(1e-12));
    }

    #[test]
    fn too_few_matches_is_under_constrained() {
        let model = toy_model();
        let truth = model.mean_points();
        let target = TargetCloud::from_points(truth.clone()).unwrap();
        let mut corr = correspond(&truth, None, &target, &PruneRule::distance_only(1.0));
        corr.weights.iter_mut().for_each(|w| *w = 0.0);
        assert!(matches!(
            solve_coarse(&model, &corr, 0.0),
            Err(Error::UnderConstrained { active: 0, unknowns: 3 })
        ));
    }
}
