use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::Unsupported(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

/// Loads a mesh, inferring the format from the extension when `format` is `None`.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<Mesh> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = match format {
        MeshFormat::Ply if bytes.starts_with(b"ply") && !is_ascii_ply(&bytes) => {
            return Err(Error::Unsupported(format!(
                "{}: only ASCII PLY is supported",
                path.display()
            )))
        }
        _ => String::from_utf8(bytes)
            .map_err(|_| Error::parse(path, 0, "file is not valid UTF-8 text"))?,
    };
    let mesh = match format {
        MeshFormat::Obj => parse_obj(&text, path)?,
        MeshFormat::Ply => parse_ply(&text, path)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(mesh.with_name(name))
}

fn is_ascii_ply(bytes: &[u8]) -> bool {
    let head = &bytes[..bytes.len().min(512)];
    let head = String::from_utf8_lossy(head);
    head.lines()
        .any(|l| l.trim_start().starts_with("format ascii"))
}

fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, line_no, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| Error::parse(path, line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let k: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(path, line_no, format!("bad face index {tok:?}")))?;
                    let resolved = if k > 0 {
                        k - 1
                    } else if k < 0 {
                        vertices.len() as i64 + k
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(Error::parse(path, line_no, format!("face index {k} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(path, line_no, "face needs at least 3 vertices"));
                }
                for t in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[t], idx[t + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
}

fn parse_ply(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (i, raw) in lines.by_ref() {
        let line_no = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(Error::Unsupported("only ASCII PLY is supported".into()));
                }
            }
            Some("element") => {
                let (name, count) = match (toks.get(1), toks.get(2).and_then(|c| c.parse().ok())) {
                    (Some(n), Some(c)) => (n.to_string(), c),
                    _ => return Err(Error::parse(path, line_no, "malformed element line")),
                };
                elements.push(PlyElement {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                let name = toks
                    .last()
                    .ok_or_else(|| Error::parse(path, line_no, "malformed property"))?;
                el.props.push(name.to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(Error::parse(path, 0, "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (i, raw) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file in element {}", el.name)))?;
            let line_no = i + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let mut xyz = [0.0; 3];
                    for (axis, c) in ["x", "y", "z"].iter().zip(xyz.iter_mut()) {
                        let col = el
                            .props
                            .iter()
                            .position(|p| p == axis)
                            .ok_or_else(|| Error::parse(path, line_no, format!("vertex has no {axis} property")))?;
                        let tok = toks
                            .get(col)
                            .ok_or_else(|| Error::parse(path, line_no, "too few vertex values"))?;
                        *c = tok
                            .parse()
                            .map_err(|_| Error::parse(path, line_no, format!("bad coordinate {tok:?}")))?;
                    }
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                "face" => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, line_no, "bad face vertex count"))?;
                    if n < 3 || toks.len() < n + 1 {
                        return Err(Error::parse(path, line_no, "malformed face"));
                    }
                    let idx: Vec<usize> = toks[1..=n]
                        .iter()
                        .map(|t| t.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::parse(path, line_no, "bad face index"))?;
                    for t in 1..n - 1 {
                        faces.push([idx[0], idx[t], idx[t + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    Mesh::new(vertices, faces)
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<()> {
    let path = path.as_ref();
    if mesh.vertices.is_empty() {
        return Err(Error::Empty("refusing to write a mesh with no vertices"));
    }
    mesh.validate()?;
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let mut out = String::with_capacity(mesh.vertices.len() * 80 + mesh.faces.len() * 24);
    match format {
        MeshFormat::Obj => {
            if !mesh.name.is_empty() {
                let _ = writeln!(out, "# {}", mesh.name);
            }
            for v in &mesh.vertices {
                let _ = writeln!(out, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
            }
            for f in &mesh.faces {
                let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        MeshFormat::Ply => {
            out.push_str("ply\nformat ascii 1.0\n");
            let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
            out.push_str("property double x\nproperty double y\nproperty double z\n");
            let _ = writeln!(out, "element face {}", mesh.faces.len());
            out.push_str("property list uchar int vertex_indices\nend_header\n");
            for v in &mesh.vertices {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
            }
            for f in &mesh.faces {
                let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Contents of a label file: one part label per line plus optional
/// `# extremities: a b c` header listing the extremity part labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelFile {
    pub labels: Vec<u32>,
    pub extremities: Option<Vec<u32>>,
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<LabelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut file = LabelFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(list) = comment.trim().strip_prefix("extremities:") {
                let parts = list
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<u32>, _>>()
                    .map_err(|_| Error::parse(path, i + 1, "bad extremity list"))?;
                file.extremities = Some(parts);
            }
            continue;
        }
        let label = line
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("not a non-negative integer: {line:?}")))?;
        file.labels.push(label);
    }
    Ok(file)
}

/// Reads labels and checks the count against the template vertex count.
pub fn load_labels(path: impl AsRef<Path>, vertex_count: usize) -> Result<Vec<u32>> {
    let file = read_label_file(path)?;
    if file.labels.len() != vertex_count {
        return Err(Error::LabelCount {
            expected: vertex_count,
            found: file.labels.len(),
        });
    }
    Ok(file.labels)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[u32], extremities: Option<&[u32]>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(labels.len() * 3 + 32);
    if let Some(ext) = extremities {
        let list: Vec<String> = ext.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "# extremities: {}", list.join(" "));
    }
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
