//! Fine registration of the main body: per-vertex affine transforms
//! alternating with per-part shape coefficients.
//!
//! Vertex `j` of part `i` sits at `v̂_jᵀ X_j` where `v̂_j = B_j cᵢ + m_j` is its
//! homogeneous position under the part model and `X_j` is a 4×3 affine
//! matrix. The energy is
//!
//! ```text
//! Σ_j w_j ‖v̂_jᵀ X_j − u_jᵀ‖² + β Σ_(a,b) ‖G (X_a − X_b)‖²_F,   G = diag(1, 1, 1, γ)
//! ```
//!
//! and is minimized alternately over all `X` (one sparse linear system) and
//! over each part's coefficients (a small dense one).

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, Matrix4x3, Vector4};
use serde::{Deserialize, Serialize};

use crate::correspondence::{correspond, CorrespondenceSet, PruneRule, TargetCloud};
use crate::error::{Error, Result};
use crate::mesh::{is_connected, vertex_normals, SegmentedTemplate};
use crate::shape_model::ShapeModelSet;
use crate::trace::{DescentCheck, TracePoint};
use crate::Vec3;

pub type Affine = Matrix4x3<f64>;

/// Identity affine block in the row-vector convention `p' = v̂ᵀ X`.
pub fn identity_affine() -> Affine {
    let mut x = Affine::zeros();
    x[(0, 0)] = 1.0;
    x[(1, 1)] = 1.0;
    x[(2, 2)] = 1.0;
    x
}

pub fn homogeneous(p: &Vec3) -> Vector4<f64> {
    Vector4::new(p.x, p.y, p.z, 1.0)
}

/// `v̂ᵀ X` as a point.
pub fn transform(vhat: &Vector4<f64>, x: &Affine) -> Vec3 {
    x.tr_mul(vhat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineOptions {
    /// Stiffness weights, strictly descending and positive.
    pub schedule: Vec<f64>,
    /// Translation-row weight γ: one value for every part, or one per part.
    pub gamma: Vec<f64>,
    /// Alternations per stiffness weight.
    pub inner_iterations: usize,
    /// Relative change of the residual below which a stiffness level ends.
    pub tol: f64,
    pub prune: PruneRule,
}

impl Default for FineOptions {
    fn default() -> Self {
        FineOptions {
            schedule: vec![50.0, 20.0, 5.0, 2.0, 0.8],
            gamma: vec![1.0],
            inner_iterations: 10,
            tol: 1e-5,
            prune: PruneRule::default(),
        }
    }
}

impl FineOptions {
    pub fn validate(&self, part_count: usize) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::InvalidParameter("stiffness schedule is empty".into()));
        }
        if self.schedule.iter().any(|b| !(*b > 0.0)) || self.schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(format!(
                "stiffness schedule must be positive and strictly descending: {:?}",
                self.schedule
            )));
        }
        if self.gamma.len() != 1 && self.gamma.len() != part_count {
            return Err(Error::InvalidParameter(format!(
                "gamma needs 1 or {part_count} values, got {}",
                self.gamma.len()
            )));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        if self.inner_iterations == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "fine options need inner_iterations ≥ 1 and tol ≥ 0".into(),
            ));
        }
        self.prune.validate()
    }

    pub fn gamma_for(&self, part: usize) -> f64 {
        if self.gamma.len() == 1 {
            self.gamma[0]
        } else {
            self.gamma[part]
        }
    }
}

/// Stiffness regularizer over a vertex subset and the sparse normal-equation
/// structure of the affine step, factorized symbolically once.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    /// Global vertex ids, ascending; position = slot.
    pub vertices: Vec<usize>,
    /// Edges as `(slot_a, slot_b)` with `slot_a < slot_b`.
    pub edges: Vec<(usize, usize)>,
    /// Per-edge γ.
    pub edge_gamma: Vec<f64>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    llt: SymbolicLlt<usize>,
}

impl StiffnessSystem {
    /// `vertex_gamma[v]` is the γ of vertex `v`; an edge takes the mean of its
    /// endpoints' values. Only edges with both endpoints in `vertices` count.
    pub fn new(template: &SegmentedTemplate, vertices: &[usize], vertex_gamma: &[f64]) -> Result<Self> {
        let n_all = template.vertex_count();
        let mut slot = vec![usize::MAX; n_all];
        let mut sorted = vertices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for (s, &v) in sorted.iter().enumerate() {
            slot[v] = s;
        }
        let all_edges = template.mesh.edges();
        if !is_connected(&sorted, &all_edges, n_all) {
            return Err(Error::InvalidMesh(
                "stiffness vertex set does not induce a connected graph".into(),
            ));
        }
        let mut edges = Vec::new();
        let mut edge_gamma = Vec::new();
        for &(a, b) in &all_edges {
            if slot[a] != usize::MAX && slot[b] != usize::MAX {
                edges.push((slot[a].min(slot[b]), slot[a].max(slot[b])));
                edge_gamma.push(0.5 * (vertex_gamma[a] + vertex_gamma[b]));
            }
        }
        let n = sorted.len() * 4;
        let pairs = lower_pattern(sorted.len(), &edges);
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| Error::Singular(format!("sparse pattern: {e:?}")))?;
        let llt = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("symbolic factorization: {e:?}")))?;
        Ok(StiffnessSystem {
            vertices: sorted,
            edges,
            edge_gamma,
            symbolic,
            argsort,
            llt,
        })
    }

    /// Stiffness system of a single part.
    pub fn for_part(template: &SegmentedTemplate, part: usize, gamma: f64) -> Result<Self> {
        let verts = &template.part_vertices[part];
        if !is_connected(verts, &template.mesh.edges(), template.vertex_count()) {
            return Err(Error::DisconnectedPart(part));
        }
        Self::new(template, verts, &vec![gamma; template.vertex_count()])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Nonzeros of the Kronecker operator `M ⊗ G` as `(row, col, value)`:
    /// row `4e + r` holds `−g_r` at column `4a + r` and `+g_r` at `4b + r`.
    pub fn kronecker_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edges.len() * 8);
        for (e, (&(a, b), &gamma)) in self.edges.iter().zip(&self.edge_gamma).enumerate() {
            let g = [1.0, 1.0, 1.0, gamma];
            for r in 0..4 {
                out.push((4 * e + r, 4 * a + r, -g[r]));
                out.push((4 * e + r, 4 * b + r, g[r]));
            }
        }
        out
    }

    /// `‖(M ⊗ G) X‖²_F` with `X` stacked as `4n × 3`.
    pub fn energy(&self, x: &[Affine]) -> f64 {
        let mut prod = vec![[0.0; 3]; self.edges.len() * 4];
        for (row, col, val) in self.kronecker_entries() {
            let (s, r) = (col / 4, col % 4);
            for c in 0..3 {
                prod[row][c] += val * x[s][(r, c)];
            }
        }
        prod.iter().flatten().map(|v| v * v).sum()
    }

    /// Minimizes `Σ w_j ‖v̂_jᵀ X_j − u_jᵀ‖² + β ‖(M ⊗ G) X‖²_F` over all `X`.
    ///
    /// `vhat`, `corr` are in slot order.
    pub fn solve_affine(&self, vhat: &[Vector4<f64>], corr: &CorrespondenceSet, beta: f64) -> Result<Vec<Affine>> {
        let n = self.len();
        if vhat.len() != n || corr.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: vhat.len().min(corr.len()),
            });
        }
        let mut diag = vec![[0.0; 4]; n];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let g2 = self.edge_gamma[e] * self.edge_gamma[e];
            let g = [beta, beta, beta, beta * g2];
            for r in 0..4 {
                diag[a][r] += g[r];
                diag[b][r] += g[r];
            }
        }
        let mut values = Vec::with_capacity(10 * n + 4 * self.edges.len());
        let mut rhs = Mat::<f64>::zeros(4 * n, 3);
        for s in 0..n {
            let w = corr.weights[s];
            let v = &vhat[s];
            for c in 0..4 {
                for r in c..4 {
                    let mut val = w * v[r] * v[c];
                    if r == c {
                        val += diag[s][r];
                    }
                    values.push(val);
                }
            }
            if w != 0.0 {
                let u = &corr.targets[s];
                for r in 0..4 {
                    for c in 0..3 {
                        rhs[(4 * s + r, c)] = w * v[r] * u[c];
                    }
                }
            }
        }
        for (e, _) in self.edges.iter().enumerate() {
            let g2 = self.edge_gamma[e] * self.edge_gamma[e];
            let g = [beta, beta, beta, beta * g2];
            for gr in g {
                values.push(-gr);
            }
        }
        let a = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &values)
            .map_err(|e| Error::Singular(format!("sparse assembly: {e:?}")))?;
        let llt = Llt::try_new_with_symbolic(self.llt.clone(), a.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("affine system is not positive definite: {e:?}")))?;
        llt.solve_in_place(rhs.as_mut());
        let mut out = Vec::with_capacity(n);
        for s in 0..n {
            let mut x = Affine::zeros();
            for r in 0..4 {
                for c in 0..3 {
                    x[(r, c)] = rhs[(4 * s + r, c)];
                }
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Singular("affine solve produced non-finite values".into()));
            }
            out.push(x);
        }
        Ok(out)
    }
}

/// Lower-triangle pattern in the same order `solve_affine` emits values.
fn lower_pattern(n: usize, edges: &[(usize, usize)]) -> Vec<Pair<usize, usize>> {
    let mut pairs = Vec::with_capacity(10 * n + 4 * edges.len());
    for s in 0..n {
        for c in 0..4 {
            for r in c..4 {
                pairs.push(Pair::new(4 * s + r, 4 * s + c));
            }
        }
    }
    for &(a, b) in edges {
        for r in 0..4 {
            pairs.push(Pair::new(4 * b + r, 4 * a + r));
        }
    }
    pairs
}

/// Data term `Σ w_j ‖v̂_jᵀ X_j − u_j‖²`.
pub fn data_energy(vhat: &[Vector4<f64>], x: &[Affine], corr: &CorrespondenceSet) -> f64 {
    vhat.iter()
        .zip(x)
        .zip(corr.targets.iter().zip(&corr.weights))
        .map(|((v, xj), (u, w))| if *w == 0.0 { 0.0 } else { w * (transform(v, xj) - u).norm_squared() })
        .sum()
}

/// Coefficients minimizing the data term of one part at fixed `X`.
///
/// Returns `None` when the weighted system is rank deficient.
pub fn solve_shape(
    model: &crate::shape_model::ShapeModel,
    x: &[Affine],
    corr: &CorrespondenceSet,
) -> Result<Option<DVector<f64>>> {
    let n = model.vertex_count();
    if x.len() != n || corr.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().min(corr.len()),
        });
    }
    let k = model.component_count();
    if 3 * corr.active() < k {
        return Ok(None);
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut bj = DMatrix::<f64>::zeros(4, k);
    for j in 0..n {
        let w = corr.weights[j];
        if w == 0.0 {
            continue;
        }
        bj.copy_from(&model.basis.rows(4 * j, 4));
        let mj = Vector4::new(model.mean[4 * j], model.mean[4 * j + 1], model.mean[4 * j + 2], model.mean[4 * j + 3]);
        // P_j = X_jᵀ B_j (3×k), residual target u_j − X_jᵀ m_j
        let p = x[j].transpose() * &bj;
        let rhs = corr.targets[j] - x[j].tr_mul(&mj);
        a += p.tr_mul(&p) * w;
        b += p.tr_mul(&DVector::from_column_slice(rhs.as_slice())) * w;
    }
    Ok(a.cholesky().map(|ch| ch.solve(&b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineResult {
    /// Affine blocks of the main-body vertices, in `main_vertices` order.
    pub affines: Vec<Affine>,
    pub main_vertices: Vec<usize>,
    /// Coefficients for every part (extremities keep their initial values).
    pub coefficients: Vec<DVector<f64>>,
    /// Full template vertex positions; extremity vertices are unchanged.
    pub vertices: Vec<Vec3>,
    pub trace: Vec<TracePoint>,
    pub descent: DescentCheck,
    /// Stiffness energy at the end of each schedule level.
    pub stiffness_by_level: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Main-body vertices of a template, ascending.
pub fn main_body_vertices(template: &SegmentedTemplate, extremities: &[u32]) -> Vec<usize> {
    template
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| !extremities.contains(l))
        .map(|(v, _)| v)
        .collect()
}

/// Current state of the alternation, kept in main-body slot order.
struct State<'a> {
    models: &'a ShapeModelSet,
    main: Vec<usize>,
    /// For each slot: (part, index within part).
    owner: Vec<(usize, usize)>,
    /// For each main-body part: slots of its vertices, in part order.
    part_slots: Vec<Vec<usize>>,
    coefficients: Vec<DVector<f64>>,
    x: Vec<Affine>,
}

impl State<'_> {
    fn vhat(&self) -> Vec<Vector4<f64>> {
        let mut out = vec![Vector4::zeros(); self.main.len()];
        for (s, &(part, idx)) in self.owner.iter().enumerate() {
            let m = &self.models.parts[part];
            let c = &self.coefficients[part];
            let block = m.basis.rows(4 * idx, 4) * c;
            out[s] = Vector4::new(
                block[0] + m.mean[4 * idx],
                block[1] + m.mean[4 * idx + 1],
                block[2] + m.mean[4 * idx + 2],
                block[3] + m.mean[4 * idx + 3],
            );
        }
        out
    }

    fn positions(&self, vhat: &[Vector4<f64>]) -> Vec<Vec3> {
        vhat.iter().zip(&self.x).map(|(v, x)| transform(v, x)).collect()
    }
}

/// Runs the stiffness schedule from the given starting vertex positions.
///
/// Part coefficients start at the projection of `start` onto each part model;
/// each affine block starts as the identity plus whatever translation puts
/// its vertex exactly at `start`.
pub fn fine_register(
    models: &ShapeModelSet,
    start: &[Vec3],
    target: &TargetCloud,
    opts: &FineOptions,
) -> Result<FineResult> {
    let template = &models.template;
    let p = models.part_count();
    opts.validate(p)?;
    if start.len() != template.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: template.vertex_count(),
            got: start.len(),
        });
    }
    let labels = template.labels();
    let main = main_body_vertices(template, &models.extremities);
    if main.is_empty() {
        return Err(Error::Empty("template has no main-body vertices"));
    }
    let vertex_gamma: Vec<f64> = labels.iter().map(|&l| opts.gamma_for(l as usize)).collect();
    let system = StiffnessSystem::new(template, &main, &vertex_gamma)?;

    let mut index_in_part = vec![0usize; template.vertex_count()];
    for verts in &template.part_vertices {
        for (i, &v) in verts.iter().enumerate() {
            index_in_part[v] = i;
        }
    }
    let owner: Vec<(usize, usize)> = main.iter().map(|&v| (labels[v] as usize, index_in_part[v])).collect();
    let mut part_slots = vec![Vec::new(); p];
    for (s, &(part, _)) in owner.iter().enumerate() {
        part_slots[part].push(s);
    }
    let coefficients = (0..p)
        .map(|part| {
            let pts: Vec<Vec3> = template.part_vertices[part].iter().map(|&v| start[v]).collect();
            models.parts[part].project(&pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = State {
        models,
        main: main.clone(),
        owner,
        part_slots,
        coefficients,
        x: Vec::new(),
    };
    let vhat = state.vhat();
    state.x = vhat
        .iter()
        .zip(&main)
        .map(|(v, &g)| {
            let mut x = identity_affine();
            let offset = start[g] - v.xyz();
            for c in 0..3 {
                x[(3, c)] = offset[c];
            }
            x
        })
        .collect();

    let mut vertices = start.to_vec();
    let mut trace = Vec::new();
    let mut descent = DescentCheck::default();
    let mut stiffness_by_level = Vec::with_capacity(opts.schedule.len());
    let mut warnings = Vec::new();
    let mut iteration = 0;

    for &beta in &opts.schedule {
        let mut prev_rms: Option<f64> = None;
        for _ in 0..opts.inner_iterations {
            iteration += 1;
            let normals = vertex_normals(&vertices, &template.mesh.faces);
            let main_pts: Vec<Vec3> = main.iter().map(|&v| vertices[v]).collect();
            let main_normals: Vec<Vec3> = main.iter().map(|&v| normals[v]).collect();
            let corr = correspond(&main_pts, Some(&main_normals), target, &opts.prune);

            let mut vhat = state.vhat();
            let before = data_energy(&vhat, &state.x, &corr) + beta * system.energy(&state.x);
            state.x = system.solve_affine(&vhat, &corr, beta)?;
            let stiff = system.energy(&state.x);
            let after_affine = data_energy(&vhat, &state.x, &corr) + beta * stiff;
            descent.record(before, after_affine);

            for part in 0..p {
                let slots = &state.part_slots[part];
                if slots.is_empty() {
                    continue;
                }
                let part_model = &models.parts[part];
                let xs: Vec<Affine> = slots.iter().map(|&s| state.x[s]).collect();
                let sub = corr.select(slots);
                match solve_shape(part_model, &xs, &sub)? {
                    Some(c) => state.coefficients[part] = c,
                    None => warnings.push(format!(
                        "fine: part {part} shape step rank deficient at β={beta}; coefficients kept"
                    )),
                }
            }
            vhat = state.vhat();
            let data = data_energy(&vhat, &state.x, &corr);
            descent.record(after_affine, data + beta * stiff);

            let pts = state.positions(&vhat);
            for (s, &g) in main.iter().enumerate() {
                vertices[g] = pts[s];
            }
            let rms = corr.active_rms(&pts);
            trace.push(TracePoint {
                iteration,
                beta,
                start_objective: before,
                objective: data + beta * stiff,
                data,
                stiffness: stiff,
                rms,
                valid_fraction: corr.valid_fraction(),
            });
            let converged = prev_rms.is_some_and(|pr| (pr - rms).abs() <= opts.tol * pr) || rms == 0.0;
            prev_rms = Some(rms);
            if converged {
                break;
            }
        }
        stiffness_by_level.push(system.energy(&state.x));
    }

    Ok(FineResult {
        affines: state.x,
        main_vertices: main,
        coefficients: state.coefficients,
        vertices,
        trace,
        descent,
        stiffness_by_level,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn strip_template(cols: usize) -> SegmentedTemplate {
        let mut v = Vec::new();
        for y in 0..2 {
            for x in 0..cols {
                v.push(Vec3::new(x as f64 * 0.1, y as f64 * 0.1, 0.01 * (x * x) as f64));
            }
        }
        let mut f = Vec::new();
        for x in 0..cols - 1 {
            f.push([x, x + 1, x + cols + 1]);
            f.push([x, x + cols + 1, x + cols]);
        }
        let n = v.len();
        let mesh = Mesh::new(v, f).unwrap().with_labels(vec![0; n]).unwrap();
        SegmentedTemplate::new(mesh, 1).unwrap()
    }

    #[test]
    fn constant_field_has_zero_energy() {
        let t = strip_template(5);
        let sys = StiffnessSystem::for_part(&t, 0, 2.5).unwrap();
        let mut x = identity_affine();
        x[(3, 1)] = 4.0;
        x[(0, 2)] = -0.3;
        assert_eq!(sys.energy(&vec![x; sys.len()]), 0.0);
    }

    #[test]
    fn single_edge_translation_energy() {
        let mesh = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]])
            .unwrap()
            .with_labels(vec![0, 0, 1])
            .unwrap();
        let t = SegmentedTemplate::new(mesh, 2).unwrap();
        let gamma = 3.0;
        let sys = StiffnessSystem::for_part(&t, 0, gamma).unwrap();
        assert_eq!(sys.edges.len(), 1);
        let a = identity_affine();
        let mut b = identity_affine();
        let tvec = [0.5, -1.0, 2.0];
        for c in 0..3 {
            b[(3, c)] = tvec[c];
        }
        let expect = gamma * gamma * tvec.iter().map(|v| v * v).sum::<f64>();
        assert!((sys.energy(&[a, b]) - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_fixed_point_is_identity() {
        let t = strip_template(6);
        let sys = StiffnessSystem::for_part(&t, 0, 1.0).unwrap();
        let vhat: Vec<Vector4<f64>> = t.mesh.vertices.iter().map(homogeneous).collect();
        let corr = CorrespondenceSet {
            targets: t.mesh.vertices.clone(),
            weights: vec![1.0; vhat.len()],
            indices: (0..vhat.len()).collect(),
            distances: vec![0.0; vhat.len()],
        };
        for beta in [1e-3, 1.0, 100.0] {
            let x = sys.solve_affine(&vhat, &corr, beta).unwrap();
            for xj in &x {
                assert!((xj - identity_affine()).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn schedule_validation() {
        let mut o = FineOptions::default();
        assert!(o.validate(16).is_ok());
        o.schedule = vec![5.0, 5.0];
        assert!(o.validate(16).is_err());
        o.schedule = vec![5.0, -1.0];
        assert!(o.validate(16).is_err());
        o = FineOptions {
            gamma: vec![1.0, 2.0],
            ..FineOptions::default()
        };
        assert!(o.validate(16).is_err());
    }
}
