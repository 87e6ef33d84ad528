//! Extremity fitting from a part model with a boundary stitching term.
//!
//! The fitted part `v = B c + m` minimizes
//! `‖A (B c + m) − U‖²` with `A = [α W; (1 − α) S]` and `U = [α u; (1 − α) F]`,
//! where `W` keeps the matched data rows, `S` selects the part's boundary
//! vertices and `F` holds their anchors on the neighboring, already fitted part.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correspondence::{correspond, CorrespondenceSet, PruneRule, TargetCloud};
use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, SegmentedTemplate};
use crate::shape_model::ShapeModel;
use crate::trace::{DescentCheck, TracePoint};
use crate::Vec3;

/// How boundary anchors are placed relative to the neighboring part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchor at the neighbor vertex itself.
    Coincident,
    /// Anchor at the neighbor vertex plus the edge vector from a reference
    /// shape, so the stitched edge keeps its length and direction.
    EdgeOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartFitOptions {
    /// Data weight in (0, 1]; the boundary term gets `1 − alpha`.
    pub alpha: f64,
    pub anchor: AnchorMode,
    pub tol: f64,
    pub max_iter: usize,
    pub prune: PruneRule,
}

impl Default for PartFitOptions {
    fn default() -> Self {
        PartFitOptions {
            alpha: 0.7,
            anchor: AnchorMode::EdgeOffset,
            tol: 1e-4,
            max_iter: 30,
            prune: PruneRule::default(),
        }
    }
}

impl PartFitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.max_iter == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "part fit needs max_iter ≥ 1 and tol ≥ 0".into(),
            ));
        }
        self.prune.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConstraint {
    pub part: usize,
    /// Row `r` of the selection matrix picks part-local vertex `selection[r]`.
    pub selection: Vec<usize>,
    /// Global id of the neighboring vertex paired with each boundary vertex.
    pub neighbors: Vec<usize>,
    pub anchors: Vec<Vec3>,
    pub alpha: f64,
}

impl BoundaryConstraint {
    pub fn len(&self) -> usize {
        self.selection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selection.is_empty()
    }

    /// Dense selection matrix, `b × n_part`.
    pub fn selection_matrix(&self, part_size: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.selection.len(), part_size);
        for (r, &j) in self.selection.iter().enumerate() {
            s[(r, j)] = 1.0;
        }
        s
    }
}

/// Pairs each boundary vertex of `part` with its closest edge-adjacent vertex
/// of another part (template geometry; ties to the lowest index) and anchors
/// it at that vertex's position in `fitted`.
///
/// With [`AnchorMode::EdgeOffset`] the anchor is shifted by the boundary edge
/// vector measured in `reference`.
pub fn boundary_constraint(
    template: &SegmentedTemplate,
    part: usize,
    fitted: &[Vec3],
    reference: &[Vec3],
    alpha: f64,
    mode: AnchorMode,
) -> Result<BoundaryConstraint> {
    let boundary = &template.boundary_sets[part];
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary(part));
    }
    let labels = template.labels();
    let adjacency = template.mesh.adjacency();
    let geometry = &template.mesh.vertices;
    let local: std::collections::HashMap<usize, usize> = template.part_vertices[part]
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let mut selection = Vec::with_capacity(boundary.len());
    let mut neighbors = Vec::with_capacity(boundary.len());
    let mut anchors = Vec::with_capacity(boundary.len());
    for &b in boundary {
        let mut best: Option<(f64, usize)> = None;
        for &w in &adjacency[b] {
            if labels[w] as usize == part {
                continue;
            }
            let d = (geometry[w] - geometry[b]).norm_squared();
            if best.is_none_or(|(bd, bw)| d < bd || (d == bd && w < bw)) {
                best = Some((d, w));
            }
        }
        let (_, w) = best.expect("boundary vertex has a neighbor in another part");
        let anchor = match mode {
            AnchorMode::Coincident => fitted[w],
            AnchorMode::EdgeOffset => fitted[w] + (reference[b] - reference[w]),
        };
        selection.push(local[&b]);
        neighbors.push(w);
        anchors.push(anchor);
    }
    Ok(BoundaryConstraint {
        part,
        selection,
        neighbors,
        anchors,
        alpha,
    })
}

/// `‖A (B c + m) − U‖²` at coefficients `c`.
pub fn part_objective(
    model: &ShapeModel,
    corr: &CorrespondenceSet,
    constraint: &BoundaryConstraint,
    c: &DVector<f64>,
) -> Result<f64> {
    let v = model.synthesize(c)?;
    let (data, boundary) = split_terms(&v, corr, constraint);
    let a = constraint.alpha;
    Ok(a * a * data + (1.0 - a) * (1.0 - a) * boundary)
}

/// Unweighted data and boundary sums of squares.
fn split_terms(v: &[Vec3], corr: &CorrespondenceSet, constraint: &BoundaryConstraint) -> (f64, f64) {
    let data = corr.weighted_sq_residual(v);
    let boundary = constraint
        .selection
        .iter()
        .zip(&constraint.anchors)
        .map(|(&j, f)| (v[j] - f).norm_squared())
        .sum();
    (data, boundary)
}

/// Largest distance between a fitted boundary vertex and its anchor.
pub fn boundary_gap(part_points: &[Vec3], constraint: &BoundaryConstraint) -> f64 {
    constraint
        .selection
        .iter()
        .zip(&constraint.anchors)
        .map(|(&j, f)| (part_points[j] - f).norm())
        .fold(0.0, f64::max)
}

/// Closed-form coefficients of the stacked least-squares problem.
///
/// A rank-deficient system is retried with a ridge of `1e-8 · trace`; the
/// second value is then a warning.
pub fn solve_part(
    model: &ShapeModel,
    corr: &CorrespondenceSet,
    constraint: &BoundaryConstraint,
) -> Result<(DVector<f64>, Option<String>)> {
    let n = model.vertex_count();
    if corr.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: corr.len(),
        });
    }
    let k = model.component_count();
    let a2 = constraint.alpha * constraint.alpha;
    let b2 = (1.0 - constraint.alpha) * (1.0 - constraint.alpha);
    let mut lhs = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut accumulate = |j: usize, weight: f64, target: &Vec3| {
        let rows = model.basis.rows(4 * j, 3);
        let resid = DVector::from_fn(3, |a, _| target[a] - model.mean[4 * j + a]);
        lhs += rows.tr_mul(&rows) * weight;
        rhs += rows.tr_mul(&resid) * weight;
    };
    for j in 0..n {
        let w = corr.weights[j];
        if w != 0.0 {
            accumulate(j, a2 * w, &corr.targets[j]);
        }
    }
    if b2 > 0.0 {
        for (&j, f) in constraint.selection.iter().zip(&constraint.anchors) {
            accumulate(j, b2, f);
        }
    }
    if let Some(ch) = lhs.clone().cholesky() {
        return Ok((ch.solve(&rhs), None));
    }
    let trace = lhs.trace();
    if !(trace > 0.0) {
        return Err(Error::Singular(format!(
            "part {} has neither data nor boundary rows",
            constraint.part
        )));
    }
    let ridge = 1e-8 * trace;
    for i in 0..k {
        lhs[(i, i)] += ridge;
    }
    let ch = lhs
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("part {} system singular after ridge", constraint.part)))?;
    Ok((
        ch.solve(&rhs),
        Some(format!(
            "part {}: rank-deficient fit, ridge {ridge:.3e} applied",
            constraint.part
        )),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartFitResult {
    pub part: usize,
    pub coefficients: DVector<f64>,
    /// Fitted positions in part-local order.
    pub vertices: Vec<Vec3>,
    pub trace: Vec<TracePoint>,
    pub boundary_gap: f64,
    pub descent: DescentCheck,
    pub warnings: Vec<String>,
}

/// Alternates matching the part's vertices to the target and the closed-form
/// solve, starting from the current positions in `mesh_vertices`.
///
/// Only the part's vertices are ever moved; `mesh_vertices` and `faces`
/// provide template normals for the normal-compatibility test.
pub fn fit_extremity(
    model: &ShapeModel,
    template: &SegmentedTemplate,
    constraint: &BoundaryConstraint,
    mesh_vertices: &[Vec3],
    target: &TargetCloud,
    opts: &PartFitOptions,
) -> Result<PartFitResult> {
    opts.validate()?;
    let part = constraint.part;
    let verts = &template.part_vertices[part];
    let start: Vec<Vec3> = verts.iter().map(|&v| mesh_vertices[v]).collect();
    let mut c = model.project(&start)?;
    let mut full = mesh_vertices.to_vec();
    let mut points = start;
    let mut trace = Vec::new();
    let mut descent = DescentCheck::default();
    let mut warnings = Vec::new();
    let mut prev: Option<f64> = None;
    let a2 = constraint.alpha * constraint.alpha;
    let b2 = (1.0 - constraint.alpha) * (1.0 - constraint.alpha);

    for iteration in 1..=opts.max_iter {
        let normals = vertex_normals(&full, &template.mesh.faces);
        let part_normals: Vec<Vec3> = verts.iter().map(|&v| normals[v]).collect();
        let corr = correspond(&points, Some(&part_normals), target, &opts.prune);
        let (d0, b0) = split_terms(&points, &corr, constraint);
        let before = a2 * d0 + b2 * b0;
        let (c_new, warn) = solve_part(model, &corr, constraint)?;
        if let Some(w) = warn {
            warnings.push(w);
        }
        c = c_new;
        points = model.synthesize(&c)?;
        let (d1, b1) = split_terms(&points, &corr, constraint);
        let after = a2 * d1 + b2 * b1;
        descent.record(before, after);
        for (&v, p) in verts.iter().zip(&points) {
            full[v] = *p;
        }
        trace.push(TracePoint {
            iteration,
            beta: 0.0,
            start_objective: before,
            objective: after,
            data: a2 * d1,
            stiffness: b2 * b1,
            rms: corr.active_rms(&points),
            valid_fraction: corr.valid_fraction(),
        });
        let converged = prev.is_some_and(|p| (p - after).abs() <= opts.tol * p) || after == 0.0;
        prev = Some(after);
        if converged {
            break;
        }
    }
    Ok(PartFitResult {
        part,
        coefficients: c,
        boundary_gap: boundary_gap(&points, constraint),
        vertices: points,
        trace,
        descent,
        warnings,
    })
}
