//! Stroke-based sketch data model.
//!
//! A [`Sketch`] is an ordered list of strokes, each an ordered polyline of
//! canvas points. Before it reaches the network a sketch is fitted into a
//! square canvas with [`normalize_sketch`], rasterized with [`rasterize`],
//! and after inference every stroke point reads its label back from the
//! score volume through [`sample_point_labels`].

mod io;
mod raster;
mod segmap;

pub use io::{parse_sketch, serialize_sketch, sketch_from_value, sketch_to_value, SKETCH_FORMAT_VERSION};
pub use raster::{draw_line, rasterize, LabelImage, PointRef, RasterImage};
pub(crate) use raster::rasterize_stroke;
pub use segmap::{sample_point_labels, PointLabels, SegMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the target canvas covered by the fitted bounding box.
pub const NORMALIZE_INSET: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("malformed sketch at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("sketch has no points")]
    EmptySketch,
    #[error("canvas side {0} is below the minimum of 16 pixels")]
    InvalidSide(usize),
    #[error("stroke {stroke}: label {label} outside [1, {k})")]
    LabelOutOfRange { stroke: usize, label: u32, k: usize },
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("segmentation map is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SegMapSize {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

impl SketchError {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        SketchError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Canvas position in pixels; x grows rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One continuous pen trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<Point2>,
    /// Ground-truth part labels, one per point, when known.
    pub gt_labels: Option<Vec<u32>>,
}

impl Stroke {
    pub fn new(points: Vec<Point2>) -> Self {
        Self {
            points,
            gt_labels: None,
        }
    }

    pub fn with_labels(points: Vec<Point2>, labels: Vec<u32>) -> Self {
        Self {
            points,
            gt_labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub category: String,
    pub canvas_w: f64,
    pub canvas_h: f64,
    pub strokes: Vec<Stroke>,
}

impl Sketch {
    pub fn new(category: impl Into<String>, canvas_w: f64, canvas_h: f64) -> Self {
        Self {
            category: category.into(),
            canvas_w,
            canvas_h,
            strokes: Vec::new(),
        }
    }

    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.point_count() == 0
    }

    /// True when every stroke carries ground-truth labels.
    pub fn has_gt(&self) -> bool {
        !self.strokes.is_empty() && self.strokes.iter().all(|s| s.gt_labels.is_some())
    }

    /// Checks every ground-truth label against a label count `k`.
    pub fn validate_labels(&self, k: usize) -> Result<(), SketchError> {
        for (si, stroke) in self.strokes.iter().enumerate() {
            if let Some(labels) = &stroke.gt_labels {
                if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l as usize >= k) {
                    return Err(SketchError::LabelOutOfRange {
                        stroke: si,
                        label: bad,
                        k,
                    });
                }
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds `(min, max)` over all points.
    pub fn bounds(&self) -> Option<(Point2, Point2)> {
        let mut it = self.strokes.iter().flat_map(|s| s.points.iter());
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (
                Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }

    /// Applies `p -> p * scale + offset` to every point.
    pub fn transformed(&self, scale: f64, offset: Point2, canvas: (f64, f64)) -> Sketch {
        Sketch {
            category: self.category.clone(),
            canvas_w: canvas.0,
            canvas_h: canvas.1,
            strokes: self
                .strokes
                .iter()
                .map(|s| Stroke {
                    points: s
                        .points
                        .iter()
                        .map(|p| Point2::new(p.x * scale + offset.x, p.y * scale + offset.y))
                        .collect(),
                    gt_labels: s.gt_labels.clone(),
                })
                .collect(),
        }
    }
}

/// Ordered part-label names of one category. Index 0 is the background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub category: String,
    pub names: Vec<String>,
}

impl LabelSet {
    pub fn new(category: impl Into<String>, names: Vec<String>) -> Result<Self, SketchError> {
        if names.len() < 2 {
            return Err(SketchError::InvalidLabelSet(format!(
                "need at least 2 labels (background + 1 part), got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SketchError::InvalidLabelSet(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self {
            category: category.into(),
            names,
        })
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }
}

/// Fits the sketch's bounding box, centered, into the inner 90% of a
/// `side`×`side` canvas with a uniform scale.
pub fn normalize_sketch(sketch: &Sketch, side: usize) -> Result<Sketch, SketchError> {
    if side < 16 {
        return Err(SketchError::InvalidSide(side));
    }
    let (lo, hi) = sketch.bounds().ok_or(SketchError::EmptySketch)?;
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    let side_f = side as f64;
    let scale = if extent > 0.0 {
        NORMALIZE_INSET * side_f / extent
    } else {
        1.0
    };
    let cx = 0.5 * (lo.x + hi.x);
    let cy = 0.5 * (lo.y + hi.y);
    let offset = Point2::new(0.5 * side_f - cx * scale, 0.5 * side_f - cy * scale);
    Ok(sketch.transformed(scale, offset, (side_f, side_f)))
}
