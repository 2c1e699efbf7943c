//! Synthetic training data: mesh rendering, edge detection, labeled edge
//! maps, and a procedural 2-D sketch generator.

mod camera;
mod canny;
mod edges;
mod geom;
mod io;
mod mesh;
mod raster;
mod sample;
mod synth;

pub use camera::{sample_viewpoints, Camera, ViewGrid, ViewPoint, FOV_DEG};
pub use canny::{canny, CannyParams};
pub use edges::{make_edge_map_sample, part_edges, DEPTH_EPS};
pub use geom::{Aabb, Vec3};
pub use io::{
    load_dataset, read_manifest, read_pgm, write_dataset, write_pgm, Dataset, Manifest, ManifestEntry,
    MANIFEST_NAME,
};
pub use mesh::{
    augment_scale, load_labeled_mesh, parse_obj, push_box, toy_chair, toy_chair_labels,
    LabeledMesh, PART_PREFIX,
};
pub use raster::{render_normal_depth, GBuffer};
pub use sample::{EdgeMapSample, Provenance};
pub use synth::{synth_sketch_dataset, CategorySpec, SynthSample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("unknown part name {0:?}")]
    UnknownPart(String),
    #[error("mesh {0:?} has no triangles")]
    EmptyMesh(String),
    #[error("nothing to render for part filter {part:?}")]
    EmptyGeometry { part: Option<u32> },
    #[error("scale factors must be positive and finite, got {0:?}")]
    InvalidFactor(Vec<f64>),
    #[error("invalid Canny parameters {0:?}")]
    InvalidCanny(CannyParams),
    #[error("PGM: {0}")]
    Pgm(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Sketch(#[from] crate::sketch::SketchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RenderError {
    pub(crate) fn obj(line: usize, message: impl Into<String>) -> Self {
        Self::Obj {
            line,
            message: message.into(),
        }
    }
}
