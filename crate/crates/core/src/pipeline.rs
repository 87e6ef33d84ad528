//! End-to-end registration: normalize, align, coarse, fine, extremities.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coarse::{coarse_register, CoarseOptions};
use crate::correspondence::TargetCloud;
use crate::error::{Error, Result, Stage};
use crate::fine::{fine_register, FineOptions};
use crate::mesh::{bbox_diagonal, centroid, Mesh};
use crate::metrics::{chamfer, per_part_rms, rms_error};
use crate::part_fit::{boundary_constraint, fit_extremity, PartFitOptions};
use crate::rigid::{align_points, RigidTransform};
use crate::shape_model::ShapeModelSet;
use crate::trace::{DescentCheck, TracePoint};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub rigid: bool,
    pub coarse: bool,
    pub fine: bool,
    pub extremities: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            rigid: true,
            coarse: true,
            fine: true,
            extremities: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: StageToggles,
    /// Scale both shapes by the inverse template diagonal before fitting.
    pub normalize: bool,
    pub coarse: CoarseOptions,
    pub fine: FineOptions,
    pub extremities: PartFitOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: StageToggles::default(),
            normalize: true,
            coarse: CoarseOptions::default(),
            fine: FineOptions::default(),
            extremities: PartFitOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, part_count: usize) -> Result<()> {
        self.coarse.validate()?;
        self.fine.validate(part_count)?;
        self.extremities.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub rigid: f64,
    pub coarse: f64,
    pub fine: f64,
    pub extremities: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Symmetric chamfer distance between the fitted vertices and the scan.
    pub chamfer: f64,
    /// Against ground truth in vertex correspondence, when available.
    pub rms: Option<f64>,
    pub per_part_rms: Option<Vec<f64>>,
}

impl Metrics {
    pub fn compute(fitted: &[Vec3], scan: &[Vec3], truth: Option<(&[Vec3], &[u32], usize)>) -> Result<Self> {
        let (rms, per_part) = match truth {
            Some((t, labels, parts)) => (
                Some(rms_error(fitted, t)?),
                Some(per_part_rms(fitted, t, labels, parts)?),
            ),
            None => (None, None),
        };
        Ok(Metrics {
            chamfer: chamfer(fitted, scan)?,
            rms,
            per_part_rms: per_part,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremityReport {
    pub part: usize,
    pub trace: Vec<TracePoint>,
    /// Largest boundary-to-anchor distance, in scan units.
    pub boundary_gap: f64,
    pub descent: DescentCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub scan: String,
    pub scan_points: usize,
    /// Scale applied to both shapes during fitting.
    pub scale: f64,
    /// Rows of the rotation taking the scan into the template frame.
    pub rotation: [[f64; 3]; 3],
    /// Objective values are in normalized units.
    pub coarse_trace: Vec<TracePoint>,
    pub fine_trace: Vec<TracePoint>,
    pub fine_descent: DescentCheck,
    pub stiffness_by_level: Vec<f64>,
    pub extremities: Vec<ExtremityReport>,
    pub metrics: Metrics,
    pub warnings: Vec<String>,
    pub timings: Timings,
    pub config: PipelineConfig,
}

impl RegistrationReport {
    pub const TRACE_CSV_HEADER: &'static str =
        "stage,part,iteration,beta,start_objective,objective,data,stiffness,rms,valid_fraction";

    /// Every residual trace, one row per iteration; `part` is empty except
    /// for extremity rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(Self::TRACE_CSV_HEADER);
        out.push('\n');
        let mut push = |stage: &str, part: Option<usize>, t: &TracePoint| {
            let part = part.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{stage},{part},{},{},{},{},{},{},{},{}\n",
                t.iteration, t.beta, t.start_objective, t.objective, t.data, t.stiffness, t.rms, t.valid_fraction
            ));
        };
        for t in &self.coarse_trace {
            push("coarse", None, t);
        }
        for t in &self.fine_trace {
            push("fine", None, t);
        }
        for e in &self.extremities {
            for t in &e.trace {
                push("extremity", Some(e.part), t);
            }
        }
        out
    }
}

/// Intermediate vertex sets, in scan coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    pub rigid: Vec<Vec3>,
    pub coarse: Vec<Vec3>,
    pub fine: Vec<Vec3>,
    pub final_vertices: Vec<Vec3>,
}

/// Registers the template of `models` onto `scan`.
///
/// The returned mesh has the template's faces and labels, in scan coordinates.
pub fn register(models: &ShapeModelSet, scan: &Mesh, config: &PipelineConfig) -> Result<(Mesh, RegistrationReport)> {
    let (mesh, report, _) = register_detailed(models, scan, config)?;
    Ok((mesh, report))
}

/// As [`register`], also returning the vertices after each stage.
pub fn register_detailed(
    models: &ShapeModelSet,
    scan: &Mesh,
    config: &PipelineConfig,
) -> Result<(Mesh, RegistrationReport, StageOutputs)> {
    let total_start = Instant::now();
    config.validate(models.part_count())?;
    if scan.vertices.is_empty() {
        return Err(Error::Empty("scan has no points"));
    }
    let template_pts = &models.template.mesh.vertices;
    let (scale, model_origin, scan_origin) = if config.normalize {
        let diag = bbox_diagonal(template_pts);
        if !(diag > 0.0) {
            return Err(Error::DegenerateShape("template has zero extent".into()));
        }
        let model_origin = centroid(template_pts);
        let scan_origin = if config.stages.rigid { centroid(&scan.vertices) } else { model_origin };
        (1.0 / diag, model_origin, scan_origin)
    } else {
        (1.0, Vec3::zeros(), Vec3::zeros())
    };
    let models_n = models.transformed(&model_origin, scale);
    let scan_n: Vec<Vec3> = scan.vertices.iter().map(|p| (p - scan_origin) * scale).collect();
    let scan_mesh_n = Mesh {
        vertices: scan_n.clone(),
        faces: scan.faces.clone(),
        part_labels: None,
        name: scan.name.clone(),
    };
    let to_scan = |frame: &RigidTransform, pts: &[Vec3]| -> Vec<Vec3> {
        let inv = frame.inverse();
        pts.iter().map(|p| inv.apply(p) / scale + scan_origin).collect()
    };
    let template = &models_n.template;
    let mut warnings = Vec::new();
    let mut timings = Timings::default();

    // Frame mapping normalized scan points into the template frame.
    let t0 = Instant::now();
    let mut frame = if config.stages.rigid {
        align_points(&template.mesh.vertices, &scan_n).map_err(|e| e.at_stage(Stage::Rigid))?
    } else {
        RigidTransform::identity()
    };
    let base_target = TargetCloud::from_mesh(&scan_mesh_n)?;
    let mut target = base_target.mapped(|p| frame.apply(p), &frame.rotation)?;
    timings.rigid = t0.elapsed().as_secs_f64();
    let rigid_out = to_scan(&frame, &template.mesh.vertices);

    let t0 = Instant::now();
    let holistic = &models_n.holistic;
    let mut coarse_trace = Vec::new();
    let mut coarse_vertices = template.mesh.vertices.clone();
    if config.stages.coarse {
        let res = coarse_register(holistic, Some(&template.mesh.faces), &target, &config.coarse, None)
            .map_err(|e| e.at_stage(Stage::Coarse))?;
        coarse_trace = res.trace;
        coarse_vertices = res.model_vertices;
        // Fold the coarse motion into the frame so the model stays unrotated.
        frame = res.motion.inverse().after(&frame);
        target = base_target.mapped(|p| frame.apply(p), &frame.rotation)?;
    }
    timings.coarse = t0.elapsed().as_secs_f64();
    let coarse_out = to_scan(&frame, &coarse_vertices);

    let t0 = Instant::now();
    let mut vertices = coarse_vertices.clone();
    let mut fine_trace = Vec::new();
    let mut fine_descent = DescentCheck::default();
    let mut stiffness_by_level = Vec::new();
    if config.stages.fine {
        let res = fine_register(&models_n, &coarse_vertices, &target, &config.fine).map_err(|e| e.at_stage(Stage::Fine))?;
        vertices = res.vertices;
        fine_trace = res.trace;
        fine_descent = res.descent;
        stiffness_by_level = res.stiffness_by_level;
        warnings.extend(res.warnings);
        if fine_descent.violations > 0 {
            warnings.push(format!(
                "fine: {} of {} solves raised their objective (worst relative {:.2e})",
                fine_descent.violations, fine_descent.steps, fine_descent.worst_increase
            ));
        }
    }
    timings.fine = t0.elapsed().as_secs_f64();
    let fine_out = to_scan(&frame, &vertices);

    let t0 = Instant::now();
    let mut extremities = Vec::new();
    if config.stages.extremities {
        let fitted_main = vertices.clone();
        for &e in &models_n.extremities {
            let part = e as usize;
            let constraint = boundary_constraint(
                template,
                part,
                &fitted_main,
                &coarse_vertices,
                config.extremities.alpha,
                config.extremities.anchor,
            )
            .map_err(|err| err.at_stage(Stage::Extremities))?;
            let res = fit_extremity(
                &models_n.parts[part],
                template,
                &constraint,
                &vertices,
                &target,
                &config.extremities,
            )
            .map_err(|err| err.at_stage(Stage::Extremities))?;
            for (&v, p) in template.part_vertices[part].iter().zip(&res.vertices) {
                vertices[v] = *p;
            }
            warnings.extend(res.warnings);
            extremities.push(ExtremityReport {
                part,
                trace: res.trace,
                boundary_gap: res.boundary_gap / scale,
                descent: res.descent,
            });
        }
    }
    timings.extremities = t0.elapsed().as_secs_f64();

    let final_vertices = to_scan(&frame, &vertices);
    let metrics = Metrics::compute(&final_vertices, &scan.vertices, None)?;
    let fitted = Mesh::new(final_vertices.clone(), models.template.mesh.faces.clone())?
        .with_labels(models.template.labels().to_vec())?
        .with_name(scan.name.clone());
    timings.total = total_start.elapsed().as_secs_f64();
    let r = frame.rotation;
    let report = RegistrationReport {
        scan: scan.name.clone(),
        scan_points: scan.vertices.len(),
        scale,
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        coarse_trace,
        fine_trace,
        fine_descent,
        stiffness_by_level,
        extremities,
        metrics,
        warnings,
        timings,
        config: config.clone(),
    };
    let outputs = StageOutputs {
        rigid: rigid_out,
        coarse: coarse_out,
        fine: fine_out,
        final_vertices,
    };
    Ok((fitted, report, outputs))
}
