use std::fmt::Write as _;
use std::path::Path;

use super::{Aabb, RenderError, Vec3};
use crate::sketch::LabelSet;

/// Prefix of OBJ group names that carry a part label.
pub const PART_PREFIX: &str = "part_";

/// Triangle mesh with a part label per triangle, centered at the origin
/// and scaled into the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    pub id: String,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Label index per triangle, always >= 1.
    pub part_of: Vec<u32>,
    /// Names for label indices, index 0 being the background.
    pub part_names: Vec<String>,
}

impl LabeledMesh {
    /// Labels that own at least one triangle, ascending.
    pub fn parts(&self) -> Vec<u32> {
        let mut p = self.part_of.clone();
        p.sort_unstable();
        p.dedup();
        p
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Box of the vertices used by triangles of `label`.
    pub fn part_box(&self, label: u32) -> Option<Aabb> {
        Aabb::from_points(
            self.triangles
                .iter()
                .zip(&self.part_of)
                .filter(|(_, &p)| p == label)
                .flat_map(|(t, _)| t.iter().map(|&i| self.vertices[i as usize])),
        )
    }

    /// Moves the bounding-box center to the origin and scales the farthest
    /// vertex to distance 1.
    pub fn normalize(&mut self) {
        let Some(b) = Aabb::from_points(self.vertices.iter().copied()) else {
            return;
        };
        for v in &mut self.vertices {
            *v = v.sub(b.center);
        }
        let r = self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if r > 0.0 {
            for v in &mut self.vertices {
                *v = v.scale(1.0 / r);
            }
        }
    }

    /// Writes the mesh as OBJ with one `g part_<name>` group per label.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for label in self.parts() {
            let _ = writeln!(s, "g {PART_PREFIX}{}", self.part_names[label as usize]);
            for (t, _) in self.triangles.iter().zip(&self.part_of).filter(|(_, &p)| p == label) {
                let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        s
    }
}

fn parse_index(tok: &str, n_vertices: usize, line: usize) -> Result<u32, RenderError> {
    let head = tok.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| RenderError::obj(line, format!("bad vertex reference {tok:?}")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        n_vertices as i64 + i
    } else {
        -1
    };
    if idx < 0 || idx as usize >= n_vertices {
        return Err(RenderError::obj(line, format!("vertex reference {i} out of range")));
    }
    Ok(idx as u32)
}

/// Parses the OBJ subset `v`, `f`, `g`, `o`. Faces are fan-triangulated,
/// degenerate triangles dropped, and every face must sit in a
/// `part_<name>` group whose name is in `labels`.
pub fn parse_obj(text: &str, labels: &LabelSet, id: &str) -> Result<LabeledMesh, RenderError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut part_of = Vec::new();
    let mut current: Option<u32> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| RenderError::obj(line, "bad vertex"))?;
                if c.len() != 3 || c.iter().any(|v| !v.is_finite()) {
                    return Err(RenderError::obj(line, "vertex needs 3 finite coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("g") | Some("o") => {
                let name = toks.next().unwrap_or("");
                current = match name.strip_prefix(PART_PREFIX) {
                    Some(part) => Some(
                        labels
                            .index_of(part)
                            .filter(|&l| l > 0)
                            .ok_or_else(|| RenderError::UnknownPart(part.to_string()))?,
                    ),
                    None => None,
                };
            }
            Some("f") => {
                let idx = toks
                    .map(|t| parse_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(RenderError::obj(line, "face with fewer than 3 vertices"));
                }
                let label = current
                    .ok_or_else(|| RenderError::obj(line, "face outside a part_<name> group"))?;
                for i in 1..idx.len() - 1 {
                    let t = [idx[0], idx[i], idx[i + 1]];
                    let [a, b, c] = t.map(|j| vertices[j as usize]);
                    if b.sub(a).cross(c.sub(a)).norm() > 0.0 {
                        triangles.push(t);
                        part_of.push(label);
                    }
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(RenderError::EmptyMesh(id.to_string()));
    }
    let mut mesh = LabeledMesh {
        id: id.to_string(),
        vertices,
        triangles,
        part_of,
        part_names: labels.names.clone(),
    };
    mesh.normalize();
    Ok(mesh)
}

/// Reads an OBJ file; the mesh id is the file stem.
pub fn load_labeled_mesh(path: impl AsRef<Path>, labels: &LabelSet) -> Result<LabeledMesh, RenderError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_obj(&text, labels, &id)
}

/// Axis-aligned box as 12 outward-wound triangles.
pub fn push_box(mesh: &mut LabeledMesh, lo: Vec3, hi: Vec3, label: u32) {
    let base = mesh.vertices.len() as u32;
    for i in 0..8u32 {
        mesh.vertices.push(Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        ));
    }
    const QUADS: [[u32; 4]; 6] = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    for q in QUADS {
        for t in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
            mesh.triangles.push(t.map(|i| base + i));
            mesh.part_of.push(label);
        }
    }
}

/// Label names of the bundled toy chair.
pub fn toy_chair_labels() -> LabelSet {
    LabelSet::new(
        "chair",
        ["background", "back", "seat", "leg"].map(String::from).to_vec(),
    )
    .expect("static labels")
}

/// A chair built from boxes: seat, back and four legs (3 parts). `variant`
/// changes proportions so that several distinct models exist.
pub fn toy_chair(variant: u32) -> LabeledMesh {
    let labels = toy_chair_labels();
    let v = variant as f64;
    let mut m = LabeledMesh {
        id: format!("toy_chair_{variant}"),
        vertices: Vec::new(),
        triangles: Vec::new(),
        part_of: Vec::new(),
        part_names: labels.names,
    };
    let w = 0.5 + 0.07 * (v % 3.0);
    let d = 0.5 + 0.05 * (v % 2.0);
    let seat_y = 0.45 + 0.05 * (v % 4.0);
    let leg = 0.06;
    push_box(&mut m, Vec3::new(-w, seat_y, -d), Vec3::new(w, seat_y + 0.1, d), 2);
    let back_h = 0.6 + 0.1 * (v % 3.0);
    push_box(
        &mut m,
        Vec3::new(-w, seat_y + 0.1, -d),
        Vec3::new(w, seat_y + 0.1 + back_h, -d + 0.1),
        1,
    );
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let cx = sx * (w - leg);
        let cz = sz * (d - leg);
        push_box(
            &mut m,
            Vec3::new(cx - leg, 0.0, cz - leg),
            Vec3::new(cx + leg, seat_y, cz + leg),
            3,
        );
    }
    m.normalize();
    m
}

/// Per-axis scalings of `mesh` with every combination of `factors`, each
/// renormalized. Combinations with equal factors on all axes only rescale
/// the model, which normalization undoes, so they are skipped. The original
/// comes first.
pub fn augment_scale(mesh: &LabeledMesh, factors: &[f64]) -> Result<Vec<LabeledMesh>, RenderError> {
    if factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(RenderError::InvalidFactor(factors.to_vec()));
    }
    let mut out = vec![mesh.clone()];
    for &fx in factors {
        for &fy in factors {
            for &fz in factors {
                if fx == fy && fy == fz {
                    continue;
                }
                let mut m = mesh.clone();
                let s = Vec3::new(fx, fy, fz);
                for v in &mut m.vertices {
                    *v = v.mul(s);
                }
                m.normalize();
                m.id = format!("{}@{fx}x{fy}x{fz}", mesh.id);
                out.push(m);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_obj(scale: f64, quads: bool) -> String {
        let mut s = String::new();
        for i in 0..8 {
            let c = |b: i32| if i & b == 0 { -scale } else { scale };
            s += &format!("v {} {} {}\n", c(1), c(2), c(4));
        }
        let faces = [
            [1, 3, 4, 2],
            [5, 6, 8, 7],
            [1, 2, 6, 5],
            [3, 7, 8, 4],
            [1, 5, 7, 3],
            [2, 4, 8, 6],
        ];
        for (i, f) in faces.iter().enumerate() {
            if i == 0 {
                s += "g part_seat\n";
            }
            if i == 3 {
                s += "g part_back\n";
            }
            if quads {
                s += &format!("f {} {} {} {}\n", f[0], f[1], f[2], f[3]);
            } else {
                s += &format!("f {}/1 {}/1 {}/1\nf {} {} {}\n", f[0], f[1], f[2], f[0], f[2], f[3]);
            }
        }
        s
    }

    #[test]
    fn cube_in_two_groups() {
        let m = parse_obj(&cube_obj(1.0, false), &toy_chair_labels(), "c").unwrap();
        assert_eq!(m.triangles.len(), 12);
        assert_eq!(m.parts(), [1, 2]);
        let r = m.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let m = parse_obj(&cube_obj(1.0, true), &toy_chair_labels(), "c").unwrap();
        assert_eq!(m.triangles.len(), 2 * 6);
    }

    #[test]
    fn scale_on_disk_is_normalized_away() {
        let a = parse_obj(&cube_obj(1.0, true), &toy_chair_labels(), "c").unwrap();
        let b = parse_obj(&cube_obj(100.0, true), &toy_chair_labels(), "c").unwrap();
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!(p.sub(*q).norm() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let l = toy_chair_labels();
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\ng part_wing\nf 1 2 3\n", &l, "x"),
            Err(RenderError::UnknownPart(p)) if p == "wing"
        ));
        assert!(matches!(parse_obj("v 0 0 0\n", &l, "x"), Err(RenderError::EmptyMesh(_))));
        // Only a degenerate face: dropped, leaving nothing.
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\ng part_seat\nf 1 2 3\n", &l, "x"),
            Err(RenderError::EmptyMesh(_))
        ));
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", &l, "x").is_err());
        assert!(parse_obj("v 0 0 0\ng part_seat\nf 1 2 9\n", &l, "x").is_err());
    }

    #[test]
    fn obj_round_trip() {
        let m = toy_chair(2);
        let back = parse_obj(&m.to_obj(), &toy_chair_labels(), &m.id).unwrap();
        assert_eq!(back.triangles.len(), m.triangles.len());
        assert_eq!(back.parts(), [1, 2, 3]);
    }

    #[test]
    fn bundled_chair_loads() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/cube_chair.obj");
        let m = load_labeled_mesh(path, &toy_chair_labels()).unwrap();
        assert_eq!(m.id, "cube_chair");
        assert_eq!(m.triangles.len(), 2 * 36);
        assert_eq!(m.parts(), [1, 2, 3]);
    }

    #[test]
    fn augment_counts() {
        let m = toy_chair(0);
        let all = augment_scale(&m, &[0.5, 1.5]).unwrap();
        assert_eq!(all.len(), 7);
        assert_eq!(all[0], m);
        for a in &all {
            assert_eq!(a.triangles, m.triangles);
            assert_eq!(a.part_of, m.part_of);
        }
        assert_eq!(augment_scale(&m, &[1.0]).unwrap(), vec![m.clone()]);
        assert!(augment_scale(&m, &[0.0]).is_err());
    }
}
