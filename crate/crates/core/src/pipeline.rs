//! Sketch in, per-point part labels out: normalize, rasterize, segment,
//! read labels back at the stroke points and smooth them along strokes.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Model, NetworkError};
use crate::refine::{
    build_chain_graph, energy, refine_alpha_expansion, refine_dp, EnergyParams, RefineError,
};
use crate::sketch::{normalize_sketch, rasterize, sample_point_labels, Sketch, SketchError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sketch has no points")]
    EmptySketch,
    #[error("sketch category {sketch:?} does not match model category {model:?}")]
    CategoryMismatch { sketch: String, model: String },
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Which minimizer smooths the labels along strokes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Solver {
    /// Exact dynamic programming over each stroke.
    #[default]
    Dp,
    /// Graph-cut moves with a seeded label order.
    AlphaExpansion { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub params: EnergyParams,
    pub refine: bool,
    pub solver: Solver,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            params: EnergyParams::default(),
            refine: true,
            solver: Solver::Dp,
        }
    }
}

/// Wall time per stage in milliseconds. Inference time of a batch is split
/// evenly over its sketches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub rasterize: f64,
    pub infer: f64,
    pub refine: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.rasterize + self.infer + self.refine
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    /// Final label per point, grouped by stroke.
    pub labels: Vec<Vec<u32>>,
    /// Most frequent final label per stroke, lowest label on ties.
    pub majority: Vec<u32>,
    /// Network labels before smoothing.
    pub raw: Vec<Vec<u32>>,
    pub label_names: Vec<String>,
    /// Smoothing energy of `raw` and of `labels`.
    pub raw_energy: f64,
    pub energy: f64,
    pub timing: StageTimes,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn majority(labels: &[u32]) -> u32 {
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|c| c.0 == l) {
            Some(c) => c.1 += 1,
            None => counts.push((l, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |c| c.0)
}

/// Segments one sketch as a batch of one.
pub fn segment_sketch(
    sketch: &Sketch,
    model: &Model,
    opts: &SegmentOptions,
) -> Result<SegmentResult, PipelineError> {
    let mut out = segment_batch(std::slice::from_ref(sketch), model, opts)?;
    Ok(out.pop().expect("one result per sketch"))
}

/// Segments sketches jointly: they share one network pass, so batch
/// normalization sees all of them. Results follow input order.
pub fn segment_batch(
    sketches: &[Sketch],
    model: &Model,
    opts: &SegmentOptions,
) -> Result<Vec<SegmentResult>, PipelineError> {
    let side = model.spec.input_side;
    let mut normalized = Vec::with_capacity(sketches.len());
    let mut rasters = Vec::with_capacity(sketches.len());
    let mut raster_ms = Vec::with_capacity(sketches.len());
    for s in sketches {
        if s.category != model.category() {
            return Err(PipelineError::CategoryMismatch {
                sketch: s.category.clone(),
                model: model.category().to_string(),
            });
        }
        if s.is_empty() {
            return Err(PipelineError::EmptySketch);
        }
        let t = Instant::now();
        let n = normalize_sketch(s, side)?;
        rasters.push(rasterize(&n));
        normalized.push(n);
        raster_ms.push(ms(t));
    }
    if sketches.is_empty() {
        return Ok(Vec::new());
    }
    let t = Instant::now();
    let maps = model.infer_batch(&rasters)?;
    let infer_ms = ms(t) / sketches.len() as f64;

    let k = model.k();
    let mut results = Vec::with_capacity(sketches.len());
    for ((n, map), rasterize_ms) in normalized.iter().zip(&maps).zip(raster_ms) {
        let t = Instant::now();
        let points = sample_point_labels(n, map)?;
        let graph = build_chain_graph(n, &points.flat_labels(), k)?;
        let raw_labeling = graph.queried_labeling();
        let raw_energy = energy(&raw_labeling, &graph, &opts.params);
        let (labeling, e) = if opts.refine {
            match opts.solver {
                Solver::Dp => {
                    let r = refine_dp(&graph, &opts.params)?;
                    (r.labeling, r.energy)
                }
                Solver::AlphaExpansion { seed } => {
                    let r = refine_alpha_expansion(&graph, &opts.params, seed)?;
                    (r.labeling, r.energy)
                }
            }
        } else {
            (raw_labeling.clone(), raw_energy)
        };
        results.push(SegmentResult {
            majority: labeling.chains.iter().map(|c| majority(c)).collect(),
            labels: labeling.chains,
            raw: raw_labeling.chains,
            label_names: model.labels.names.clone(),
            raw_energy,
            energy: e,
            timing: StageTimes {
                rasterize: rasterize_ms,
                infer: infer_ms,
                refine: ms(t),
            },
        });
    }
    Ok(results)
}

/// Copy of `sketch` with every stroke's labels set from `labels`.
pub fn apply_labels(sketch: &Sketch, labels: &[Vec<u32>]) -> Sketch {
    let mut out = sketch.clone();
    for (s, l) in out.strokes.iter_mut().zip(labels) {
        s.gt_labels = Some(l.clone());
    }
    out
}
