//! Sketch-based part retrieval and box assembly.
//!
//! Offline, every part of every mesh is rendered alone from a set of
//! cameras (keeping the full model's framing), turned into an edge map and
//! described by the network's innermost encoder features. Online, each
//! labeled part of a sketch is described the same way and matched by
//! Euclidean distance against parts of the same label. The chosen parts are
//! then placed by least squares so that their relative offsets and sizes
//! follow the models they came from.
//!
//! Feature database file, little-endian, magic `SKFD`:
//! ```text
//! u32 version, str category, u32 n_entries
//! per entry: u32 label, str mesh, u32 camera, 6 × f64 box (center, size),
//!   2048 × f32 feature
//! u32 n_models, per model: str mesh, u32 n_parts, per part: u32 label,
//!   6 × f64 box
//! ```
//! Strings are a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Model, NetworkError, Reader};
use crate::render::{part_edges, Aabb, Camera, LabeledMesh, RenderError, Vec3};
use crate::sketch::{normalize_sketch, rasterize, PointRef, RasterImage, Sketch, SketchError, Stroke};

pub const FEATURE_MAGIC: &[u8; 4] = b"SKFD";
pub const FEATURE_VERSION: u32 = 1;
/// Length of every stored feature vector.
pub const FEATURE_LEN: usize = 2048;
/// Floor for box sizes, so flat parts keep a positive extent.
pub const MIN_BOX_SIZE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no meshes to index")]
    NoMeshes,
    #[error("no cameras to render from")]
    NoCameras,
    #[error("camera side {camera} differs from network input side {network}")]
    CameraSide { camera: usize, network: usize },
    #[error("feature length {got}, expected {FEATURE_LEN}")]
    FeatureLength { got: usize },
    #[error("mesh {0:?} is not in the database")]
    UnknownMesh(String),
    #[error("mesh {mesh:?} has no part labeled {label}")]
    UnknownPart { mesh: String, label: u32 },
    #[error("nothing to assemble")]
    NoParts,
    #[error("placement is not determined: part {0} is not related to the others")]
    Singular(usize),
    #[error("bad feature database magic")]
    BadMagic,
    #[error("feature database version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("feature database: {0}")]
    Format(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartBox {
    pub label: u32,
    pub bbox: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartFeature {
    pub label: u32,
    pub mesh: String,
    pub camera: u32,
    pub bbox: Aabb,
    pub vector: Vec<f32>,
}

/// Part features of one category plus the part layout of every indexed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDb {
    pub category: String,
    pub features: Vec<PartFeature>,
    /// Part boxes per mesh id, ascending by label.
    pub configs: BTreeMap<String, Vec<PartBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mesh: String,
    pub camera: u32,
    pub distance: f64,
}

/// A part chosen for assembly: which label and which source mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub label: u32,
    pub mesh: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedPart {
    pub label: u32,
    pub mesh: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub placed: Vec<PlacedPart>,
    /// Least-squares objective at the solution.
    pub residual: f64,
}

fn positive_box(b: Aabb) -> Aabb {
    Aabb {
        center: b.center,
        size: Vec3::new(
            b.size.x.max(MIN_BOX_SIZE),
            b.size.y.max(MIN_BOX_SIZE),
            b.size.z.max(MIN_BOX_SIZE),
        ),
    }
}

fn mask_raster(mask: &[bool], side: usize) -> RasterImage {
    let mut r = RasterImage::empty(side, side);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        r.values[i] = 1;
        r.point_map[i] = Some(PointRef { stroke: 0, point: 0 });
    }
    r
}

fn check_len(v: &[f32]) -> Result<(), RetrievalError> {
    if v.len() != FEATURE_LEN {
        return Err(RetrievalError::FeatureLength { got: v.len() });
    }
    Ok(())
}

impl FeatureDb {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn part_box(&self, mesh: &str, label: u32) -> Result<Aabb, RetrievalError> {
        let parts = self
            .configs
            .get(mesh)
            .ok_or_else(|| RetrievalError::UnknownMesh(mesh.to_string()))?;
        parts
            .iter()
            .find(|p| p.label == label)
            .map(|p| p.bbox)
            .ok_or_else(|| RetrievalError::UnknownPart {
                mesh: mesh.to_string(),
                label,
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = FEATURE_MAGIC.to_vec();
        let u32_ = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        let str_ = |b: &mut Vec<u8>, s: &str| {
            b.extend_from_slice(&(s.len() as u32).to_le_bytes());
            b.extend_from_slice(s.as_bytes());
        };
        let box_ = |b: &mut Vec<u8>, a: &Aabb| {
            for v in a.center.to_array().into_iter().chain(a.size.to_array()) {
                b.extend_from_slice(&v.to_le_bytes());
            }
        };
        u32_(&mut b, FEATURE_VERSION as usize);
        str_(&mut b, &self.category);
        u32_(&mut b, self.features.len());
        for f in &self.features {
            u32_(&mut b, f.label as usize);
            str_(&mut b, &f.mesh);
            u32_(&mut b, f.camera as usize);
            box_(&mut b, &f.bbox);
            for v in &f.vector {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        u32_(&mut b, self.configs.len());
        for (mesh, parts) in &self.configs {
            str_(&mut b, mesh);
            u32_(&mut b, parts.len());
            for p in parts {
                u32_(&mut b, p.label as usize);
                box_(&mut b, &p.bbox);
            }
        }
        b
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, RetrievalError> {
        if buf.len() < 4 || &buf[..4] != FEATURE_MAGIC {
            return Err(RetrievalError::BadMagic);
        }
        let mut r = Reader::new(&buf[4..]);
        let version = r.u32()? as u32;
        if version != FEATURE_VERSION {
            return Err(RetrievalError::Version {
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let read_box = |r: &mut Reader| -> Result<Aabb, RetrievalError> {
            let v = r.f64s(6)?;
            Ok(Aabb {
                center: Vec3::new(v[0], v[1], v[2]),
                size: Vec3::new(v[3], v[4], v[5]),
            })
        };
        let category = r.str()?;
        let n = r.len()?;
        let mut features = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let label = r.u32()? as u32;
            let mesh = r.str()?;
            let camera = r.u32()? as u32;
            let bbox = read_box(&mut r)?;
            let vector = r.f32s(FEATURE_LEN)?;
            features.push(PartFeature {
                label,
                mesh,
                camera,
                bbox,
                vector,
            });
        }
        let n_models = r.len()?;
        let mut configs = BTreeMap::new();
        for _ in 0..n_models {
            let mesh = r.str()?;
            let n_parts = r.len()?;
            let parts = (0..n_parts)
                .map(|_| {
                    Ok(PartBox {
                        label: r.u32()? as u32,
                        bbox: read_box(&mut r)?,
                    })
                })
                .collect::<Result<Vec<_>, RetrievalError>>()?;
            configs.insert(mesh, parts);
        }
        if !r.at_end() {
            return Err(RetrievalError::Format("trailing bytes".into()));
        }
        if let Some(f) = features.iter().find(|f| !configs.contains_key(&f.mesh)) {
            return Err(RetrievalError::Format(format!("feature of unlisted mesh {:?}", f.mesh)));
        }
        Ok(Self {
            category,
            features,
            configs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Renders every part of every mesh from every camera and stores the
/// network's features of the part's edge map. Entries are ordered by mesh,
/// camera index, then label.
pub fn build_feature_db(model: &Model, meshes: &[LabeledMesh], cameras: &[Camera]) -> Result<FeatureDb, RetrievalError> {
    if meshes.is_empty() {
        return Err(RetrievalError::NoMeshes);
    }
    if cameras.is_empty() {
        return Err(RetrievalError::NoCameras);
    }
    let side = model.spec.input_side;
    if let Some(c) = cameras.iter().find(|c| c.side != side) {
        return Err(RetrievalError::CameraSide {
            camera: c.side,
            network: side,
        });
    }
    let mut features = Vec::new();
    let mut configs = BTreeMap::new();
    for mesh in meshes {
        let boxes: Vec<PartBox> = mesh
            .parts()
            .into_iter()
            .map(|label| PartBox {
                label,
                bbox: positive_box(mesh.part_box(label).expect("label has triangles")),
            })
            .collect();
        for (ci, cam) in cameras.iter().enumerate() {
            for b in &boxes {
                let (mask, _) = part_edges(mesh, b.label, cam)?;
                let vector = model.extract_features(&mask_raster(&mask, side))?;
                check_len(&vector)?;
                features.push(PartFeature {
                    label: b.label,
                    mesh: mesh.id.clone(),
                    camera: ci as u32,
                    bbox: b.bbox,
                    vector,
                });
            }
        }
        configs.insert(mesh.id.clone(), boxes);
    }
    Ok(FeatureDb {
        category: model.category().to_string(),
        features,
        configs,
    })
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The `top_n` nearest features of `label`, nearest first; equal distances
/// are ordered by mesh id, then camera. An unknown label yields nothing.
pub fn query_parts(feature: &[f32], label: u32, db: &FeatureDb, top_n: usize) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = db
        .features
        .iter()
        .filter(|f| f.label == label)
        .map(|f| Candidate {
            mesh: f.mesh.clone(),
            camera: f.camera,
            distance: euclidean(feature, &f.vector),
        })
        .collect();
    if out.is_empty() {
        log::warn!("no database parts labeled {label}");
    }
    out.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.mesh.cmp(&b.mesh))
            .then(a.camera.cmp(&b.camera))
    });
    out.truncate(top_n);
    out
}

/// Features of every labeled part of a sketch, ascending by label. Each
/// part keeps the framing of the whole sketch: the sketch is fitted to the
/// network input first, then only points of that label are drawn, split
/// into runs where a stroke changes label.
pub fn sketch_part_features(model: &Model, sketch: &Sketch, labels: &[Vec<u32>]) -> Result<Vec<(u32, Vec<f32>)>, RetrievalError> {
    let fitted = normalize_sketch(sketch, model.spec.input_side)?;
    let mut present: Vec<u32> = labels.iter().flatten().copied().collect();
    present.sort_unstable();
    present.dedup();
    let mut out = Vec::with_capacity(present.len());
    for label in present {
        let mut part = Sketch::new(fitted.category.clone(), fitted.canvas_w, fitted.canvas_h);
        for (stroke, ls) in fitted.strokes.iter().zip(labels) {
            let mut run = Vec::new();
            for (p, &l) in stroke.points.iter().zip(ls) {
                if l == label {
                    run.push(*p);
                } else if !run.is_empty() {
                    part.strokes.push(Stroke::new(std::mem::take(&mut run)));
                }
            }
            if !run.is_empty() {
                part.strokes.push(Stroke::new(run));
            }
        }
        let v = model.extract_features(&rasterize(&part))?;
        check_len(&v)?;
        out.push((label, v));
    }
    Ok(out)
}

/// Solves the symmetric positive definite system `a x = b` in place by
/// Cholesky factorization. `None` when `a` is not positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<usize> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 1e-12 {
            return Some(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    None
}

/// One offset target per ordered pair `(i, j)` with `i != j`: where part
/// `j`'s source mesh puts it relative to its part of label `i`. Pairs whose
/// label is missing from that mesh are skipped.
pub fn pair_targets(selections: &[Selection], db: &FeatureDb) -> Result<Vec<(usize, usize, Vec3)>, RetrievalError> {
    let mut out = Vec::new();
    for (j, sj) in selections.iter().enumerate() {
        let cj = db.part_box(&sj.mesh, sj.label)?.center;
        for (i, si) in selections.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Ok(bi) = db.part_box(&sj.mesh, si.label) {
                out.push((i, j, cj.sub(bi.center)));
            }
        }
    }
    Ok(out)
}

/// Places the selected parts: sizes follow their source boxes, centers
/// minimize the squared deviation of every pairwise offset from its target
/// with the first part pinned at the origin. Solved per axis through the
/// normal equations.
pub fn assemble(selections: &[Selection], db: &FeatureDb) -> Result<Assembly, RetrievalError> {
    let n = selections.len();
    if n == 0 {
        return Err(RetrievalError::NoParts);
    }
    let sizes = selections
        .iter()
        .map(|s| db.part_box(&s.mesh, s.label).map(|b| b.size))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = pair_targets(selections, db)?;
    // Unknowns are the centers of parts 1..n; part 0 sits at the origin.
    let m = n - 1;
    let mut normal = vec![0.0; m * m];
    for &(i, j, _) in &pairs {
        for (a, sa) in [(i, -1.0), (j, 1.0)] {
            for (b, sb) in [(i, -1.0), (j, 1.0)] {
                if a > 0 && b > 0 {
                    normal[(a - 1) * m + (b - 1)] += sa * sb;
                }
            }
        }
    }
    let mut centers = vec![[0.0f64; 3]; n];
    for axis in 0..3 {
        let mut rhs = vec![0.0; m];
        for &(i, j, o) in &pairs {
            let t = o.to_array()[axis];
            if j > 0 {
                rhs[j - 1] += t;
            }
            if i > 0 {
                rhs[i - 1] -= t;
            }
        }
        let mut a = normal.clone();
        if let Some(bad) = cholesky_solve(&mut a, &mut rhs, m) {
            return Err(RetrievalError::Singular(bad + 1));
        }
        for p in 1..n {
            centers[p][axis] = rhs[p - 1];
        }
    }
    let mut residual = 0.0;
    for &(i, j, o) in &pairs {
        let o = o.to_array();
        for axis in 0..3 {
            let r = centers[j][axis] - centers[i][axis] - o[axis];
            residual += r * r;
        }
    }
    Ok(Assembly {
        placed: selections
            .iter()
            .zip(centers)
            .zip(sizes)
            .map(|((s, c), size)| PlacedPart {
                label: s.label,
                mesh: s.mesh.clone(),
                center: c,
                size: size.to_array(),
            })
            .collect(),
        residual,
    })
}
