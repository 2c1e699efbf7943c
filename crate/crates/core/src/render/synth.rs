//! Procedural sketches built from jittered polyline templates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeMapSample, Provenance, RenderError};
use crate::network::mix_seed;
use crate::sketch::{normalize_sketch, rasterize, LabelSet, Point2, Sketch, Stroke};

/// Longest gap between consecutive stroke points after resampling, pixels.
const MAX_POINT_GAP: f64 = 3.0;

/// One semantic part: alternative shapes, each a set of polylines in a unit
/// frame (x right, y down), plus how far an instance may stray.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTemplate {
    pub name: String,
    pub variants: Vec<Vec<Vec<(f64, f64)>>>,
    /// Maximum displacement of the whole part, per axis.
    pub shift: f64,
    /// Maximum relative change of the part's size.
    pub scale: f64,
    /// Maximum displacement of each template vertex, per axis.
    pub jitter: f64,
}

/// A procedural object category of 2 to 4 parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySpec {
    pub name: String,
    pub parts: Vec<PartTemplate>,
    /// Maximum relative change of the overall aspect ratio.
    pub aspect: f64,
}

/// A generated sketch and its raster as a training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sketch: Sketch,
    pub sample: EdgeMapSample,
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn part(name: &str, variants: Vec<Vec<Vec<(f64, f64)>>>, shift: f64, scale: f64, jitter: f64) -> PartTemplate {
    PartTemplate {
        name: name.into(),
        variants,
        shift,
        scale,
        jitter,
    }
}

impl CategorySpec {
    /// Base, pole and shade.
    pub fn lamp() -> Self {
        let base = vec![
            vec![rect(0.3, 0.9, 0.7, 1.0)],
            vec![arc(0.5, 0.95, 0.2, 0.05, 0.0, 360.0, 24)],
            vec![vec![(0.25, 1.0), (0.35, 0.9), (0.65, 0.9), (0.75, 1.0), (0.25, 1.0)]],
        ];
        let pole = vec![
            vec![vec![(0.5, 0.36), (0.5, 0.89)]],
            vec![vec![(0.48, 0.36), (0.48, 0.89)], vec![(0.52, 0.36), (0.52, 0.89)]],
            vec![vec![(0.5, 0.89), (0.5, 0.62), (0.6, 0.36)]],
        ];
        let shade = vec![
            vec![vec![(0.4, 0.05), (0.6, 0.05), (0.75, 0.35), (0.25, 0.35), (0.4, 0.05)]],
            vec![arc(0.5, 0.35, 0.22, 0.3, 180.0, 360.0, 16), vec![(0.28, 0.35), (0.72, 0.35)]],
            vec![rect(0.32, 0.08, 0.68, 0.35)],
        ];
        Self {
            name: "lamp".into(),
            parts: vec![
                part("base", base, 0.03, 0.2, 0.015),
                part("pole", pole, 0.02, 0.1, 0.01),
                part("shade", shade, 0.03, 0.2, 0.015),
            ],
            aspect: 0.2,
        }
    }

    /// Back, seat and legs.
    pub fn chair() -> Self {
        let back = vec![
            vec![rect(0.25, 0.0, 0.75, 0.42)],
            vec![
                vec![(0.27, 0.45), (0.27, 0.0), (0.73, 0.0), (0.73, 0.45)],
                vec![(0.27, 0.15), (0.73, 0.15)],
            ],
            vec![arc(0.5, 0.2, 0.25, 0.2, 180.0, 360.0, 12), vec![(0.25, 0.2), (0.25, 0.45)], vec![(0.75, 0.2), (0.75, 0.45)]],
        ];
        let seat = vec![
            vec![vec![(0.2, 0.5), (0.8, 0.5), (0.85, 0.6), (0.15, 0.6), (0.2, 0.5)]],
            vec![rect(0.2, 0.5, 0.8, 0.58)],
        ];
        let legs = vec![
            vec![vec![(0.22, 0.62), (0.22, 1.0)], vec![(0.78, 0.62), (0.78, 1.0)]],
            vec![
                vec![(0.2, 0.62), (0.2, 1.0)],
                vec![(0.8, 0.62), (0.8, 1.0)],
                vec![(0.35, 0.62), (0.35, 0.9)],
                vec![(0.65, 0.62), (0.65, 0.9)],
            ],
            vec![vec![(0.2, 1.0), (0.3, 0.62), (0.7, 0.62), (0.8, 1.0)]],
        ];
        Self {
            name: "chair".into(),
            parts: vec![
                part("back", back, 0.03, 0.15, 0.015),
                part("seat", seat, 0.02, 0.1, 0.01),
                part("leg", legs, 0.02, 0.15, 0.015),
            ],
            aspect: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "lamp" => Some(Self::lamp()),
            "chair" => Some(Self::chair()),
            _ => None,
        }
    }

    /// Background followed by the part names.
    pub fn labels(&self) -> LabelSet {
        let names = std::iter::once("background".to_string())
            .chain(self.parts.iter().map(|p| p.name.clone()))
            .collect();
        LabelSet::new(self.name.clone(), names).expect("part names are distinct")
    }

    fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidSample(format!("category {}: {m}", self.name)));
        if !(2..=4).contains(&self.parts.len()) {
            return bad(format!("{} parts, expected 2 to 4", self.parts.len()));
        }
        for p in &self.parts {
            if p.variants.is_empty() || p.variants.iter().any(|v| v.is_empty() || v.iter().any(|l| l.is_empty())) {
                return bad(format!("part {} has an empty template", p.name));
            }
        }
        Ok(())
    }
}

/// Points along a polyline no more than `gap` apart, keeping the vertices.
fn resample(points: &[Point2], gap: f64) -> Vec<Point2> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = (a.distance(b) / gap).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t));
        }
    }
    out
}

fn instance(spec: &CategorySpec, rng: &mut ChaCha8Rng, side: usize, index: usize) -> Result<Sketch, RenderError> {
    let sx = 1.0 + rng.random_range(-spec.aspect..=spec.aspect);
    let mut strokes = Vec::new();
    for (pi, p) in spec.parts.iter().enumerate() {
        let label = pi as u32 + 1;
        let variant = &p.variants[rng.random_range(0..p.variants.len())];
        let s = 1.0 + rng.random_range(-p.scale..=p.scale);
        let (dx, dy) = (rng.random_range(-p.shift..=p.shift), rng.random_range(-p.shift..=p.shift));
        let all: Vec<&(f64, f64)> = variant.iter().flatten().collect();
        let cx = all.iter().map(|q| q.0).sum::<f64>() / all.len() as f64;
        let cy = all.iter().map(|q| q.1).sum::<f64>() / all.len() as f64;
        for line in variant {
            let pts: Vec<Point2> = line
                .iter()
                .map(|&(x, y)| {
                    let jx = rng.random_range(-p.jitter..=p.jitter);
                    let jy = rng.random_range(-p.jitter..=p.jitter);
                    let x = cx + (x - cx) * s + dx + jx;
                    let y = cy + (y - cy) * s + dy + jy;
                    Point2::new(x * sx, y)
                })
                .collect();
            strokes.push((label, pts));
        }
    }
    strokes.shuffle(rng);
    let mut sketch = Sketch::new(spec.name.clone(), 1.0, 1.0);
    for (label, pts) in strokes {
        let n = pts.len();
        sketch.strokes.push(Stroke::with_labels(pts, vec![label; n]));
    }
    let mut sketch = normalize_sketch(&sketch, side)?;
    for s in &mut sketch.strokes {
        s.points = resample(&s.points, MAX_POINT_GAP);
        let label = s.gt_labels.as_ref().expect("labeled")[0];
        s.gt_labels = Some(vec![label; s.points.len()]);
    }
    log::trace!("synth {} #{index}: {} strokes", spec.name, sketch.strokes.len());
    Ok(sketch)
}

/// `n` random labeled sketches fitted to a `side`×`side` canvas with their
/// rasterized training pairs. Instance `i` depends only on `seed` and `i`.
pub fn synth_sketch_dataset(
    spec: &CategorySpec,
    n: usize,
    seed: u64,
    side: usize,
) -> Result<Vec<SynthSample>, RenderError> {
    spec.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let sketch = instance(spec, &mut rng, side, i)?;
            let raster = rasterize(&sketch);
            let labels = raster.label_image(&sketch).expect("every stroke is labeled").labels;
            let sample = EdgeMapSample::from_labels(
                side,
                labels,
                Provenance {
                    source: format!("synth:{}:{seed}:{i}", spec.name),
                    camera: None,
                    depth_tested: false,
                },
            );
            Ok(SynthSample { sketch, sample })
        })
        .collect()
}
