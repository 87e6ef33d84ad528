//! Multilevel active body registration.
//!
//! A high-resolution segmented template is deformed onto noisy, incomplete
//! body scans in three passes: a principal-axis rigid alignment, a coarse fit
//! in the span of a holistic PCA shape model, and a fine fit that alternates
//! per-vertex affine transforms with per-part shape coefficients. Hands and
//! feet are fitted last from their own part models, stitched to the body
//! through a boundary term.
//!
//! ```no_run
//! use mabr::{pipeline, shape_model::ShapeModelSet, mesh};
//!
//! let models = ShapeModelSet::load("model.mabr")?;
//! let scan = mesh::load_mesh("scan.ply", None)?;
//! let (fitted, report) = pipeline::register(&models, &scan, &pipeline::PipelineConfig::default())?;
//! mesh::save_mesh(&fitted, "fitted.obj", None)?;
//! println!("chamfer {:.3e}", report.metrics.chamfer);
//! # Ok::<(), mabr::Error>(())
//! ```

pub mod coarse;
pub mod correspondence;
pub mod error;
pub mod fine;
pub mod mesh;
pub mod metrics;
pub mod part_fit;
pub mod pipeline;
pub mod rigid;
pub mod shape_model;
pub mod spatial;
pub mod synth;
pub mod trace;

pub use error::{Error, Result, Stage};
pub use mesh::{Mesh, SegmentedTemplate};
pub use spatial::NeighborIndex;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
