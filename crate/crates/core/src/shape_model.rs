//! Linear PCA shape models in homogeneous vertex layout.
//!
//! A model stores `v = B c + m` with four rows per vertex `(x, y, z, 1)`.
//! The fourth row of every basis column is zero and the fourth entry of the
//! mean is one, so every synthesized shape keeps its homogeneous coordinate.

use std::fs;
use std::path::Path;

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, SegmentedTemplate};
use crate::Vec3;

pub const HOLISTIC_K_CAP: usize = 60;
pub const PART_K_CAP: usize = 20;
pub const DEFAULT_VARIANCE: f64 = 0.98;
const MAGIC: &[u8; 8] = b"MABRMDL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Holistic,
    Part(u32),
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCount {
    Fixed(usize),
    /// Smallest count reaching `fraction` of the eigenvalue mass, at most `cap`.
    Variance { fraction: f64, cap: usize },
}

impl ComponentCount {
    pub fn holistic_default() -> Self {
        ComponentCount::Variance {
            fraction: DEFAULT_VARIANCE,
            cap: HOLISTIC_K_CAP,
        }
    }

    pub fn part_default() -> Self {
        ComponentCount::Variance {
            fraction: DEFAULT_VARIANCE,
            cap: PART_K_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub scope: Scope,
    /// Length `4 n`.
    pub mean: DVector<f64>,
    /// `4 n × k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Variance of each coefficient, descending.
    pub eigenvalues: Vec<f64>,
}

impl ShapeModel {
    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 4
    }

    pub fn component_count(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean_points(&self) -> Vec<Vec3> {
        unstack(&self.mean)
    }

    /// Mean position of vertex `j`.
    pub fn mean_at(&self, j: usize) -> Vec3 {
        Vec3::new(self.mean[4 * j], self.mean[4 * j + 1], self.mean[4 * j + 2])
    }

    /// `B c + m` in homogeneous layout.
    pub fn synthesize_homogeneous(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        if c.len() != self.component_count() {
            return Err(Error::DimensionMismatch {
                expected: self.component_count(),
                got: c.len(),
            });
        }
        Ok(&self.basis * c + &self.mean)
    }

    pub fn synthesize(&self, c: &DVector<f64>) -> Result<Vec<Vec3>> {
        Ok(unstack(&self.synthesize_homogeneous(c)?))
    }

    /// Least-squares coefficients `Bᵀ (u − m)` of a point set.
    pub fn project(&self, points: &[Vec3]) -> Result<DVector<f64>> {
        if points.len() != self.vertex_count() {
            return Err(Error::DimensionMismatch {
                expected: self.vertex_count(),
                got: points.len(),
            });
        }
        Ok(self.basis.tr_mul(&(stack(points) - &self.mean)))
    }

    /// Expresses the model in new coordinates `p' = s (p − origin)`.
    ///
    /// The basis is unchanged; coefficients scale by `s`, variances by `s²`.
    pub fn transformed(&self, origin: &Vec3, s: f64) -> ShapeModel {
        let mut mean = self.mean.clone();
        for j in 0..self.vertex_count() {
            for a in 0..3 {
                mean[4 * j + a] = (mean[4 * j + a] - origin[a]) * s;
            }
        }
        ShapeModel {
            scope: self.scope,
            mean,
            basis: self.basis.clone(),
            eigenvalues: self.eigenvalues.iter().map(|e| e * s * s).collect(),
        }
    }
}

/// Stacks points as `(x, y, z, 1)` quadruples.
pub fn stack(points: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 4, points.iter().flat_map(|p| [p.x, p.y, p.z, 1.0]))
}

pub fn unstack(v: &DVector<f64>) -> Vec<Vec3> {
    v.as_slice()
        .chunks_exact(4)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Trains a model from corresponding point sets (all of equal length).
pub fn train_points(corpus: &[&[Vec3]], count: ComponentCount, scope: Scope) -> Result<ShapeModel> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "training needs at least 2 shapes, got {n}"
        )));
    }
    let nv = corpus[0].len();
    if nv == 0 {
        return Err(Error::Empty("training shapes have no vertices"));
    }
    if let Some((i, s)) = corpus.iter().enumerate().find(|(_, s)| s.len() != nv) {
        return Err(Error::CorrespondenceMismatch(format!(
            "shape {i} has {} vertices, expected {nv}",
            s.len()
        )));
    }
    let max_k = (n - 1).min(3 * nv);
    if let ComponentCount::Fixed(k) = count {
        if k == 0 || k > max_k {
            return Err(Error::TooManyComponents { requested: k, max: max_k });
        }
    }

    let rows = 3 * nv;
    let mut mean = vec![0.0; rows];
    for shape in corpus {
        for (j, p) in shape.iter().enumerate() {
            for a in 0..3 {
                mean[3 * j + a] += p[a];
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let svd = Mat::<f64>::from_fn(rows, n, |r, c| corpus[c][r / 3][r % 3] - mean[r])
        .thin_svd()
        .map_err(|e| Error::Singular(format!("corpus SVD did not converge: {e:?}")))?;
    let singular = DVector::from_fn(svd.S().dim(), |i, _| svd.S()[i]);
    let order = sorted_order(&singular);
    let u = DMatrix::from_fn(rows, order.len(), |r, c| svd.U()[(r, order[c])]);
    let sigma: Vec<f64> = order.iter().map(|&i| singular[i]).collect();
    let eig_all: Vec<f64> = sigma.iter().map(|s| s * s / (n - 1) as f64).collect();

    let k = match count {
        ComponentCount::Fixed(k) => k,
        ComponentCount::Variance { fraction, cap } => {
            let total: f64 = eig_all.iter().take(max_k).sum();
            let mut k = 1;
            if total > 0.0 {
                let mut acc = 0.0;
                for (i, e) in eig_all.iter().take(max_k).enumerate() {
                    acc += e;
                    k = i + 1;
                    if acc >= fraction * total {
                        break;
                    }
                }
            }
            k.min(cap.max(1)).min(max_k)
        }
    };

    let mut basis = DMatrix::zeros(4 * nv, k);
    for c in 0..k {
        let col = u.column(c);
        let flip = if col[col.iamax()] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nv {
            for a in 0..3 {
                basis[(4 * j + a, c)] = flip * col[3 * j + a];
            }
        }
    }
    let mean4 = DVector::from_iterator(
        4 * nv,
        mean.chunks_exact(3).flat_map(|m| [m[0], m[1], m[2], 1.0]),
    );
    Ok(ShapeModel {
        scope,
        mean: mean4,
        basis,
        eigenvalues: eig_all[..k].to_vec(),
    })
}

fn sorted_order(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn check_topology(corpus: &[Mesh]) -> Result<()> {
    let first = corpus.first().ok_or(Error::Empty("empty training corpus"))?;
    for (i, m) in corpus.iter().enumerate().skip(1) {
        if m.vertices.len() != first.vertices.len() || m.faces != first.faces {
            return Err(Error::CorrespondenceMismatch(format!(
                "mesh {i} ({}) does not share the topology of mesh 0",
                m.name
            )));
        }
    }
    Ok(())
}

/// Trains a holistic model over whole meshes in dense correspondence.
pub fn train(corpus: &[Mesh], count: ComponentCount) -> Result<ShapeModel> {
    check_topology(corpus)?;
    let views: Vec<&[Vec3]> = corpus.iter().map(|m| m.vertices.as_slice()).collect();
    train_points(&views, count, Scope::Holistic)
}

/// One holistic model, one model per part, and the segmented template they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModelSet {
    pub holistic: ShapeModel,
    pub parts: Vec<ShapeModel>,
    /// Template mesh (holistic mean) with its segmentation.
    pub template: SegmentedTemplate,
    /// Part labels fitted by coefficients only (hands and feet).
    pub extremities: Vec<u32>,
    pub tag: String,
}

impl ShapeModelSet {
    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Part vertex positions scattered back into a full-template vertex list.
    pub fn assemble(&self, part_points: &[Vec<Vec3>]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.template.vertex_count()];
        for (part, pts) in part_points.iter().enumerate() {
            for (&v, p) in self.template.part_vertices[part].iter().zip(pts) {
                out[v] = *p;
            }
        }
        out
    }

    /// Same set in coordinates `p' = s (p − origin)`.
    pub fn transformed(&self, origin: &Vec3, s: f64) -> ShapeModelSet {
        let mut template = self.template.clone();
        for v in &mut template.mesh.vertices {
            *v = (*v - origin) * s;
        }
        ShapeModelSet {
            holistic: self.holistic.transformed(origin, s),
            parts: self.parts.iter().map(|m| m.transformed(origin, s)).collect(),
            template,
            extremities: self.extremities.clone(),
            tag: self.tag.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put_u32(&mut out, self.parts.len());
        put_u32(&mut out, self.template.vertex_count());
        for m in std::iter::once(&self.holistic).chain(&self.parts) {
            put_u32(&mut out, m.component_count());
        }
        for m in std::iter::once(&self.holistic).chain(&self.parts) {
            put_u32(&mut out, m.vertex_count());
            for v in m.mean.iter().chain(m.basis.iter()).chain(&m.eigenvalues) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &l in self.template.labels() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        // trailing extension: template faces, extremity labels, tag
        put_u32(&mut out, self.template.mesh.faces.len());
        for f in &self.template.mesh.faces {
            for &v in f {
                put_u32(&mut out, v);
            }
        }
        put_u32(&mut out, self.extremities.len());
        for &e in &self.extremities {
            out.extend_from_slice(&e.to_le_bytes());
        }
        put_u32(&mut out, self.tag.len());
        out.extend_from_slice(self.tag.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| Error::BadMagic)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let p = r.u32()? as usize;
        let n = r.u32()? as usize;
        let ks: Vec<usize> = (0..=p).map(|_| r.u32().map(|k| k as usize)).collect::<Result<_>>()?;
        let mut models = Vec::with_capacity(p + 1);
        for (i, &k) in ks.iter().enumerate() {
            let ni = r.u32()? as usize;
            let mean = DVector::from_vec(r.f64s(4 * ni)?);
            let basis = DMatrix::from_vec(4 * ni, k, r.f64s(4 * ni * k)?);
            let eigenvalues = r.f64s(k)?;
            let scope = if i == 0 { Scope::Holistic } else { Scope::Part(i as u32 - 1) };
            models.push(ShapeModel {
                scope,
                mean,
                basis,
                eigenvalues,
            });
        }
        let labels: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        let face_count = r.u32()? as usize;
        let mut faces = Vec::with_capacity(face_count);
        for _ in 0..face_count {
            faces.push([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]);
        }
        let ext_count = r.u32()? as usize;
        let extremities: Vec<u32> = (0..ext_count).map(|_| r.u32()).collect::<Result<_>>()?;
        let tag_len = r.u32()? as usize;
        let tag = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| Error::ModelFormat("tag is not UTF-8".into()))?;
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!(
                "{} trailing bytes after model data",
                bytes.len() - r.pos
            )));
        }

        let holistic = models.remove(0);
        if holistic.vertex_count() != n {
            return Err(Error::ModelFormat(format!(
                "holistic model has {} vertices, header says {n}",
                holistic.vertex_count()
            )));
        }
        let mesh = Mesh::new(holistic.mean_points(), faces)?
            .with_labels(labels)?
            .with_name(tag.clone());
        let template = SegmentedTemplate::new(mesh, p)?;
        for (i, m) in models.iter().enumerate() {
            if m.vertex_count() != template.part_vertices[i].len() {
                return Err(Error::ModelFormat(format!(
                    "part {i} model has {} vertices but the labeling assigns {}",
                    m.vertex_count(),
                    template.part_vertices[i].len()
                )));
            }
        }
        Ok(ShapeModelSet {
            holistic,
            parts: models,
            template,
            extremities,
            tag,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Options for training a complete model set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub holistic: ComponentCount,
    pub parts: ComponentCount,
    pub extremities: Vec<u32>,
    pub tag: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            holistic: ComponentCount::holistic_default(),
            parts: ComponentCount::part_default(),
            extremities: crate::synth::EXTREMITY_LABELS.to_vec(),
            tag: String::new(),
        }
    }
}

/// Trains the holistic model and one model per labeled part.
///
/// The labels segment the shared corpus topology; the returned template is
/// the holistic mean shape carrying that segmentation.
pub fn train_parts(corpus: &[Mesh], labels: &[u32], part_count: usize, opts: &TrainOptions) -> Result<ShapeModelSet> {
    let holistic = train(corpus, opts.holistic)?;
    let mesh = Mesh::new(holistic.mean_points(), corpus[0].faces.clone())?
        .with_labels(labels.to_vec())?
        .with_name(opts.tag.clone());
    let template = SegmentedTemplate::new(mesh, part_count)?;
    if let Some(&bad) = opts.extremities.iter().find(|&&e| e as usize >= part_count) {
        return Err(Error::InvalidParameter(format!(
            "extremity label {bad} outside [0, {part_count})"
        )));
    }
    let mut parts = Vec::with_capacity(part_count);
    for (i, verts) in template.part_vertices.iter().enumerate() {
        let subsets: Vec<Vec<Vec3>> = corpus
            .iter()
            .map(|m| verts.iter().map(|&v| m.vertices[v]).collect())
            .collect();
        let views: Vec<&[Vec3]> = subsets.iter().map(Vec::as_slice).collect();
        parts.push(train_points(&views, opts.parts, Scope::Part(i as u32))?);
    }
    Ok(ShapeModelSet {
        holistic,
        parts,
        template,
        extremities: opts.extremities.clone(),
        tag: opts.tag.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_corpus() -> (Vec<Vec<Vec3>>, Vec<Vec3>) {
        let base: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, (i % 2) as f64, 0.3 * i as f64)).collect();
        let d: Vec<Vec3> = (0..6).map(|i| Vec3::new(0.1, -0.2 * i as f64, 0.05)).collect();
        let corpus = [-1.0, 0.0, 1.0]
            .iter()
            .map(|t| base.iter().zip(&d).map(|(b, dd)| b + dd * *t).collect())
            .collect();
        (corpus, d)
    }

    #[test]
    fn one_dimensional_span_is_recovered() {
        let (corpus, d) = line_corpus();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        let m = train_points(&views, ComponentCount::Fixed(1), Scope::Holistic).unwrap();
        let dn = stack(&d);
        let dir: Vec<f64> = (0..dn.len()).filter(|r| r % 4 != 3).map(|r| dn[r]).collect();
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let b = m.basis.column(0);
        let dot: f64 = (0..dn.len()).filter(|r| r % 4 != 3).map(|r| b[r] * dn[r]).sum::<f64>() / len;
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        for shape in &corpus {
            let rec = m.synthesize(&m.project(shape).unwrap()).unwrap();
            for (a, b) in rec.iter().zip(shape) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_pair_has_zero_variance() {
        let s: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 1.0, 2.0)).collect();
        let m = train_points(&[&s, &s], ComponentCount::Fixed(1), Scope::Holistic).unwrap();
        assert!(m.eigenvalues.iter().all(|e| *e <= 1e-12));
        assert_eq!(m.mean_points(), s);
    }

    #[test]
    fn too_many_components() {
        let (corpus, _) = line_corpus();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        assert!(matches!(
            train_points(&views, ComponentCount::Fixed(3), Scope::Holistic),
            Err(Error::TooManyComponents { requested: 3, max: 2 })
        ));
    }

    #[test]
    fn homogeneous_slots_are_exact() {
        let (corpus, _) = line_corpus();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        let m = train_points(&views, ComponentCount::Fixed(2), Scope::Holistic).unwrap();
        let v = m.synthesize_homogeneous(&DVector::from_vec(vec![3.7, -12.5])).unwrap();
        assert!((0..m.vertex_count()).all(|j| v[4 * j + 3] == 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let (corpus, _) = line_corpus();
        let views: Vec<&[Vec3]> = corpus.iter().map(Vec::as_slice).collect();
        let m = train_points(&views, ComponentCount::Fixed(1), Scope::Holistic).unwrap();
        assert!(m.synthesize(&DVector::zeros(2)).is_err());
        assert!(m.project(&corpus[0][..3]).is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(ShapeModelSet::from_bytes(b"NOTAMODEL"), Err(Error::BadMagic)));
        assert!(matches!(ShapeModelSet::from_bytes(b"MABRMDL1\x01\x00"), Err(Error::Truncated)));
    }
}
