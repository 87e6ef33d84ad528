//! Box-modeled body: a lattice box for the torso with five extruded tubes
//! (neck and head, two arms, two legs), each closed by a cap.
//!
//! Connectivity depends only on the resolution; parameters move vertices.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{UnitQuaternion, Vector3};

use super::{BodyParams, Resolution, ABDOMEN, CHEST, HEAD, PELVIS};
use crate::error::Result;
use crate::mesh::Mesh;
use crate::Vec3;

const LIMBS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Limb {
    Head,
    ArmL,
    ArmR,
    LegL,
    LegR,
}

const LIMB_ORDER: [Limb; LIMBS] = [Limb::Head, Limb::ArmL, Limb::ArmR, Limb::LegL, Limb::LegR];

/// Box face: fixed axis, which side, and in-plane axes with `a1 × a2` outward.
#[derive(Debug, Clone, Copy)]
struct BoxFace {
    axis: usize,
    high: bool,
    a1: usize,
    a2: usize,
}

const FACES: [BoxFace; 6] = [
    BoxFace { axis: 0, high: false, a1: 2, a2: 1 },
    BoxFace { axis: 0, high: true, a1: 1, a2: 2 },
    BoxFace { axis: 1, high: false, a1: 0, a2: 2 },
    BoxFace { axis: 1, high: true, a1: 2, a2: 0 },
    BoxFace { axis: 2, high: false, a1: 1, a2: 0 },
    BoxFace { axis: 2, high: true, a1: 0, a2: 1 },
];

impl BoxFace {
    fn lattice(&self, u: usize, v: usize, dims: [usize; 3]) -> [usize; 3] {
        let mut p = [0; 3];
        p[self.axis] = if self.high { dims[self.axis] } else { 0 };
        p[self.a1] = u;
        p[self.a2] = v;
        p
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    limb: Limb,
    face: usize,
    u0: usize,
    v0: usize,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    /// Point of the `[-1, 1]³` box surface.
    Torso([f64; 3]),
    Ring {
        limb: usize,
        ring: usize,
        st: [f64; 2],
        anchor: [f64; 3],
    },
    Cap {
        limb: usize,
        st: [f64; 2],
    },
}

/// Fixed connectivity and labels for one resolution.
#[derive(Debug, Clone)]
pub struct BodyTopology {
    pub resolution: Resolution,
    nodes: Vec<Node>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Vec<u32>,
    /// Ring counts per tube segment, in [`LIMB_ORDER`].
    segments: [Vec<usize>; LIMBS],
}

fn ring_counts(resolution: Resolution) -> (usize, [Vec<usize>; LIMBS]) {
    let (q, arm, leg, head) = match resolution {
        Resolution::Desk => (2, vec![8, 8, 6], vec![10, 10, 8], vec![4, 10]),
        Resolution::Paper => (4, vec![22, 22, 17], vec![28, 28, 21], vec![11, 28]),
        Resolution::Dense => (8, vec![44, 44, 34], vec![56, 56, 42], vec![22, 56]),
    };
    (q, [head, arm.clone(), arm, leg.clone(), leg])
}

fn segment_labels(limb: Limb) -> &'static [u32] {
    match limb {
        Limb::Head => &[HEAD, HEAD],
        Limb::ArmL => &[4, 5, 6],
        Limb::ArmR => &[7, 8, 9],
        Limb::LegL => &[10, 11, 12],
        Limb::LegR => &[13, 14, 15],
    }
}

fn torso_label(a: [f64; 3]) -> u32 {
    if a[2] < -0.4 {
        PELVIS
    } else if a[2] < 0.15 {
        ABDOMEN
    } else {
        CHEST
    }
}

/// Connectivity for `resolution`.
pub fn body_topology(resolution: Resolution) -> BodyTopology {
    let (q, segments) = ring_counts(resolution);
    let dims = [6 * q, 2 * q, 8 * q];
    let side = 2 * q;
    let patches = [
        Patch { limb: Limb::Head, face: 5, u0: 2 * q, v0: 0 },
        Patch { limb: Limb::ArmL, face: 0, u0: dims[2] - 3 * q, v0: 0 },
        Patch { limb: Limb::ArmR, face: 1, u0: 0, v0: dims[2] - 3 * q },
        Patch { limb: Limb::LegL, face: 4, u0: 0, v0: q / 2 },
        Patch { limb: Limb::LegR, face: 4, u0: 0, v0: dims[0] - 5 * q / 2 },
    ];
    let inside = |face: usize, u: usize, v: usize, strict: bool| {
        patches.iter().any(|p| {
            p.face == face
                && if strict {
                    u > p.u0 && u < p.u0 + side && v > p.v0 && v < p.v0 + side
                } else {
                    u >= p.u0 && u < p.u0 + side && v >= p.v0 && v < p.v0 + side
                }
        })
    };

    let stride = [1, dims[0] + 1, (dims[0] + 1) * (dims[1] + 1)];
    let flat = |p: [usize; 3]| p[0] * stride[0] + p[1] * stride[1] + p[2] * stride[2];
    let mut removed = vec![false; (dims[0] + 1) * (dims[1] + 1) * (dims[2] + 1)];
    for p in &patches {
        let f = FACES[p.face];
        for u in p.u0 + 1..p.u0 + side {
            for v in p.v0 + 1..p.v0 + side {
                removed[flat(f.lattice(u, v, dims))] = true;
            }
        }
    }

    let mut nodes = Vec::new();
    let mut labels = Vec::new();
    let mut index = vec![usize::MAX; removed.len()];
    let box_coord = |p: [usize; 3]| {
        [
            2.0 * p[0] as f64 / dims[0] as f64 - 1.0,
            2.0 * p[1] as f64 / dims[1] as f64 - 1.0,
            2.0 * p[2] as f64 / dims[2] as f64 - 1.0,
        ]
    };
    for k in 0..=dims[2] {
        for j in 0..=dims[1] {
            for i in 0..=dims[0] {
                let p = [i, j, k];
                let surface = i == 0 || j == 0 || k == 0 || i == dims[0] || j == dims[1] || k == dims[2];
                if !surface || removed[flat(p)] {
                    continue;
                }
                index[flat(p)] = nodes.len();
                let a = box_coord(p);
                nodes.push(Node::Torso(a));
                labels.push(torso_label(a));
            }
        }
    }

    let mut faces = Vec::new();
    let mut quad = |a: usize, b: usize, c: usize, d: usize| {
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    };
    for (fi, f) in FACES.iter().enumerate() {
        for u in 0..dims[f.a1] {
            for v in 0..dims[f.a2] {
                if inside(fi, u, v, false) {
                    continue;
                }
                let id = |du: usize, dv: usize| index[flat(f.lattice(u + du, v + dv, dims))];
                quad(id(0, 0), id(1, 0), id(1, 1), id(0, 1));
            }
        }
    }

    for (li, p) in patches.iter().enumerate() {
        debug_assert_eq!(p.limb, LIMB_ORDER[li]);
        let f = FACES[p.face];
        let mut outline = Vec::with_capacity(4 * side);
        for i in 0..side {
            outline.push((p.u0 + i, p.v0));
        }
        for i in 0..side {
            outline.push((p.u0 + side, p.v0 + i));
        }
        for i in 0..side {
            outline.push((p.u0 + side - i, p.v0 + side));
        }
        for i in 0..side {
            outline.push((p.u0, p.v0 + side - i));
        }
        let st = |u: usize, v: usize| {
            [
                (u as f64 - (p.u0 + q) as f64) / q as f64,
                (v as f64 - (p.v0 + q) as f64) / q as f64,
            ]
        };
        let loop_ids: Vec<usize> = outline.iter().map(|&(u, v)| index[flat(f.lattice(u, v, dims))]).collect();
        let l = outline.len();
        let seg_labels = segment_labels(p.limb);
        let mut prev = loop_ids.clone();
        let mut ring = 0;
        for (s, &count) in segments[li].iter().enumerate() {
            for _ in 0..count {
                ring += 1;
                let start = nodes.len();
                for (&(u, v), &anchor) in outline.iter().zip(&loop_ids) {
                    let a = match nodes[anchor] {
                        Node::Torso(a) => a,
                        _ => unreachable!("patch outline lies on the box"),
                    };
                    nodes.push(Node::Ring {
                        limb: li,
                        ring,
                        st: st(u, v),
                        anchor: a,
                    });
                    labels.push(seg_labels[s]);
                }
                let cur: Vec<usize> = (start..start + l).collect();
                for i in 0..l {
                    let j = (i + 1) % l;
                    quad(prev[i], prev[j], cur[j], cur[i]);
                }
                prev = cur;
            }
        }
        let cap_label = *seg_labels.last().expect("limb has segments");
        let mut cap_index = std::collections::HashMap::new();
        for (i, &(u, v)) in outline.iter().enumerate() {
            cap_index.insert((u, v), prev[i]);
        }
        for u in p.u0 + 1..p.u0 + side {
            for v in p.v0 + 1..p.v0 + side {
                cap_index.insert((u, v), nodes.len());
                nodes.push(Node::Cap { limb: li, st: st(u, v) });
                labels.push(cap_label);
            }
        }
        for u in p.u0..p.u0 + side {
            for v in p.v0..p.v0 + side {
                let id = |du: usize, dv: usize| cap_index[&(u + du, v + dv)];
                quad(id(0, 0), id(1, 0), id(1, 1), id(0, 1));
            }
        }
    }

    BodyTopology {
        resolution,
        nodes,
        faces,
        labels,
        segments,
    }
}

/// Cross-section of a tube at one ring.
#[derive(Debug, Clone, Copy)]
struct Section {
    center: Vec3,
    es: Vec3,
    et: Vec3,
    rs: f64,
    rt: f64,
}

impl Section {
    fn point(&self, st: [f64; 2], spread: f64) -> Vec3 {
        let n = (st[0] * st[0] + st[1] * st[1]).sqrt();
        if n == 0.0 {
            return self.center;
        }
        let (ds, dt) = (st[0] / n, st[1] / n);
        self.center + spread * (self.rs * ds * self.es + self.rt * dt * self.et)
    }
}

#[derive(Debug, Clone)]
struct Tube {
    sections: Vec<Section>,
    /// Fraction of the first segment over which rings blend out of the torso.
    blend: f64,
    /// Ring count of the first segment.
    first: usize,
    axis: Vec3,
    dome: f64,
}

/// Torso surface: the box point pushed onto a superquadric.
#[derive(Debug, Clone, Copy)]
struct Torso {
    half: Vec3,
    exponent: f64,
}

impl Torso {
    fn point(&self, a: [f64; 3]) -> Vec3 {
        let (x, y, z) = (a[0], a[1], a[2]);
        let (x2, y2, z2) = (x * x, y * y, z * z);
        let u = [
            x * (1.0 - y2 / 2.0 - z2 / 2.0 + y2 * z2 / 3.0).sqrt(),
            y * (1.0 - z2 / 2.0 - x2 / 2.0 + z2 * x2 / 3.0).sqrt(),
            z * (1.0 - x2 / 2.0 - y2 / 2.0 + x2 * y2 / 3.0).sqrt(),
        ];
        Vec3::from_fn(|i, _| self.half[i] * u[i].signum() * u[i].abs().powf(self.exponent))
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn frame(from: Vec3, to: Vec3, a1: Vec3, a2: Vec3) -> (Vec3, Vec3) {
    let r = UnitQuaternion::rotation_between(&from, &to).unwrap_or_else(UnitQuaternion::identity);
    (r * a1, r * a2)
}

fn rot_x(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle)
}

fn arm(p: &BodyParams, torso: &Torso, counts: &[usize], side: f64) -> Tube {
    let s = p.stature;
    let (length, g) = if side < 0.0 {
        (p.arm_length_l, p.limb_girth)
    } else {
        (p.arm_length_r, p.limb_girth)
    };
    let n_out = Vec3::new(side, 0.0, 0.0);
    let shoulder = torso.point([side, 0.0, 0.5]);
    let abduction = (28.0 + 40.0 * (p.shoulder_width - 1.0)).to_radians();
    let d = Vec3::new(side * abduction.sin(), 0.0, -abduction.cos());
    let (a1, a2) = if side < 0.0 { (Vec3::z(), Vec3::y()) } else { (Vec3::y(), Vec3::z()) };
    let (es, et) = frame(n_out, d, a1, a2);
    let start = shoulder + n_out * (0.03 * s);
    let (l1, l2, l3) = (0.18 * s * length, 0.155 * s * length, 0.10 * s);
    let (r_sh, r_el, r_wr) = (0.048 * s * g, 0.036 * s * g, 0.027 * s * g);
    let (width, thick) = (0.042 * s, 0.016 * s);
    let bulge = 0.006 * s * g * g;
    let mut sections = Vec::new();
    let mut push = |tau: f64, rs: f64, rt: f64| {
        sections.push(Section {
            center: start + d * tau,
            es,
            et,
            rs,
            rt,
        })
    };
    for k in 1..=counts[0] {
        let h = k as f64 / counts[0] as f64;
        let r = lerp(r_sh, r_el, h) + bulge * (PI * h).sin();
        push(l1 * h, r, r);
    }
    for k in 1..=counts[1] {
        let h = k as f64 / counts[1] as f64;
        let r = lerp(r_el, r_wr, h) + 0.5 * bulge * (PI * h).sin();
        push(l1 + l2 * h, r, r);
    }
    for k in 1..=counts[2] {
        let h = k as f64 / counts[2] as f64;
        let w = (2.0 * h).min(1.0);
        let (wd, th) = (lerp(r_wr, width, w), lerp(r_wr, thick, w));
        let (rs, rt) = if side < 0.0 { (th, wd) } else { (wd, th) };
        push(l1 + l2 + 0.8 * l3 * h, rs, rt);
    }
    Tube {
        sections,
        blend: 0.3,
        first: counts[0],
        axis: d,
        dome: 0.2 * l3,
    }
}

fn leg(p: &BodyParams, torso: &Torso, counts: &[usize], side: f64) -> Tube {
    let s = p.stature;
    let length = if side < 0.0 { p.leg_length_l } else { p.leg_length_r };
    let g = p.limb_girth;
    let hip = torso.point([0.5 * side, 0.0, -1.0]);
    let splay = (3.0 + 6.0 * (p.torso_girth - 1.0)).to_radians();
    let d = Vec3::new(side * splay.sin(), 0.0, -splay.cos());
    let (es0, et0) = frame(-Vec3::z(), d, Vec3::y(), Vec3::x());
    let start = hip + d * (0.02 * s);
    let (lt, ls) = (0.235 * s * length, 0.225 * s * length);
    let (drop, bend, fwd) = (0.03 * s, 0.045 * s, 0.09 * s);
    let r_th = 0.085 * s * g * (0.6 + 0.4 * p.torso_girth);
    let (r_kn, r_an) = (0.052 * s * g, 0.034 * s * g);
    let bulge = 0.008 * s * g * g;
    let (foot_v, foot_l) = (0.03 * s, 0.045 * s);
    let mut sections = Vec::new();
    for k in 1..=counts[0] {
        let h = k as f64 / counts[0] as f64;
        let r = lerp(r_th, r_kn, h) + bulge * (PI * h).sin();
        sections.push(Section { center: start + d * (lt * h), es: es0, et: et0, rs: r, rt: r });
    }
    let knee = start + d * lt;
    for k in 1..=counts[1] {
        let h = k as f64 / counts[1] as f64;
        let r = lerp(r_kn, r_an, h) + 0.6 * bulge * (PI * h).sin();
        sections.push(Section { center: knee + d * (ls * h), es: es0, et: et0, rs: r, rt: r });
    }
    let ankle = knee + d * ls;
    let arc = bend * FRAC_PI_2;
    let total = drop + arc + 0.85 * fwd;
    let heel = ankle + d * drop;
    for k in 1..=counts[2] {
        let u = total * k as f64 / counts[2] as f64;
        let (center, rot) = if u <= drop {
            (ankle + d * u, UnitQuaternion::identity())
        } else if u <= drop + arc {
            let phi = (u - drop) / bend;
            let off = Vec3::new(d.x * phi, -d.z * (1.0 - phi.cos()), d.z * phi.sin());
            (heel + off * bend, rot_x(phi))
        } else {
            let toe = heel + Vec3::new(d.x * FRAC_PI_2, -d.z, d.z) * bend;
            (toe + rot_x(FRAC_PI_2) * d * (u - drop - arc), rot_x(FRAC_PI_2))
        };
        let w = (u / (0.4 * total)).min(1.0);
        sections.push(Section {
            center,
            es: rot * es0,
            et: rot * et0,
            rs: lerp(r_an, foot_v, w),
            rt: lerp(r_an, foot_l, w),
        });
    }
    Tube {
        sections,
        blend: 0.3,
        first: counts[0],
        axis: rot_x(FRAC_PI_2) * d,
        dome: 0.15 * fwd,
    }
}

fn head(p: &BodyParams, torso: &Torso, counts: &[usize]) -> Tube {
    let s = p.stature;
    let g = p.head_girth;
    let base = torso.point([0.0, 0.0, 1.0]);
    let start = base + Vec3::z() * (0.01 * s);
    let neck_len = 0.06 * s;
    let (nx, ny) = (0.052 * s * g, 0.047 * s * g);
    let (rx, ry, rz) = (0.072 * s * g, 0.088 * s * g.powf(1.5), 0.112 * s * g);
    let mut sections = Vec::new();
    for k in 1..=counts[0] {
        let h = k as f64 / counts[0] as f64;
        sections.push(Section {
            center: start + Vec3::z() * (neck_len * h),
            es: Vec3::x(),
            et: Vec3::y(),
            rs: nx,
            rt: ny,
        });
    }
    let (lo, hi) = (-0.75, 0.6);
    let center = start + Vec3::new(0.0, 0.01 * s, neck_len - lo * rz);
    for k in 1..=counts[1] {
        let h = lerp(lo, hi, k as f64 / counts[1] as f64);
        let f = (1.0 - h * h).sqrt();
        sections.push(Section {
            center: center + Vec3::z() * (h * rz),
            es: Vec3::x(),
            et: Vec3::y(),
            rs: rx * f,
            rt: ry * f,
        });
    }
    Tube {
        sections,
        blend: 0.5,
        first: counts[0],
        axis: Vec3::z(),
        dome: (1.0 - hi) * rz,
    }
}

impl BodyTopology {
    pub fn vertex_count(&self) -> usize {
        self.nodes.len()
    }

    /// Vertex positions for `params`, labeled by part.
    pub fn build(&self, params: &BodyParams) -> Result<Mesh> {
        params.validate()?;
        let s = params.stature;
        let torso = Torso {
            half: Vec3::new(
                0.13 * s * params.shoulder_width * (0.5 + 0.5 * params.torso_girth),
                0.08 * s * params.torso_girth,
                0.17 * s,
            ),
            exponent: 0.6 + 0.4 * (params.torso_girth - 1.0),
        };
        let tubes: Vec<Tube> = LIMB_ORDER
            .iter()
            .zip(&self.segments)
            .map(|(limb, counts)| match limb {
                Limb::Head => head(params, &torso, counts),
                Limb::ArmL => arm(params, &torso, counts, -1.0),
                Limb::ArmR => arm(params, &torso, counts, 1.0),
                Limb::LegL => leg(params, &torso, counts, -1.0),
                Limb::LegR => leg(params, &torso, counts, 1.0),
            })
            .collect();
        let vertices = self
            .nodes
            .iter()
            .map(|node| match *node {
                Node::Torso(a) => torso.point(a),
                Node::Ring { limb, ring, st, anchor } => {
                    let tube = &tubes[limb];
                    let p = tube.sections[ring - 1].point(st, 1.0);
                    let w = ring as f64 / tube.first as f64 / tube.blend;
                    if w < 1.0 {
                        torso.point(anchor) * (1.0 - w) + p * w
                    } else {
                        p
                    }
                }
                Node::Cap { limb, st } => {
                    let tube = &tubes[limb];
                    let last = tube.sections.last().expect("tube has rings");
                    let r = st[0].abs().max(st[1].abs());
                    let angle = FRAC_PI_2 * r;
                    last.point(st, angle.sin()) + tube.axis * (tube.dome * angle.cos())
                }
            })
            .collect();
        Mesh::new(vertices, self.faces.clone())?.with_labels(self.labels.clone())
    }
}

/// One body at the given resolution.
pub fn generate_body(params: &BodyParams, resolution: Resolution) -> Result<Mesh> {
    body_topology(resolution).build(params)
}
