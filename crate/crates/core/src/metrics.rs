//! Labeling accuracy per stroke pixel and per stroke, and the batched
//! evaluation harness.
//!
//! Each stroke is rasterized on its own, so a pixel where strokes cross
//! counts once for each of them and stroke order never matters. A pixel's
//! predicted and true labels are those of the stroke point that drew it.
//! Points are clamped into the canvas, so every stroke covers at least one
//! pixel.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Model;
use crate::pipeline::{segment_batch, PipelineError, SegmentOptions, StageTimes};
use crate::refine::EnergyParams;
use crate::sketch::{normalize_sketch, rasterize_stroke, Point2, Sketch};

/// Fraction of correctly labeled pixels a stroke needs to count as
/// correct. The comparison is inclusive.
pub const COMPONENT_THRESHOLD: f64 = 0.75;

/// Batch sizes of the default evaluation table.
pub const DEFAULT_BATCH_SIZES: [usize; 6] = [1, 2, 4, 6, 8, 10];

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("stroke {stroke} has no ground-truth labels")]
    MissingGroundTruth { stroke: usize },
    #[error("prediction shape does not match the sketch at stroke {stroke}")]
    ShapeMismatch { stroke: usize },
    #[error("sketch has no strokes")]
    NoStrokes,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("no sketches to evaluate")]
    EmptyDataset,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Pixel counts of one stroke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StrokeScore {
    pub pixels: usize,
    pub correct: usize,
}

/// Counts pixels and correctly labeled pixels of every stroke.
pub fn stroke_scores(pred: &[Vec<u32>], sketch: &Sketch) -> Result<Vec<StrokeScore>, MetricError> {
    if sketch.strokes.is_empty() {
        return Err(MetricError::NoStrokes);
    }
    if pred.len() != sketch.strokes.len() {
        return Err(MetricError::ShapeMismatch {
            stroke: pred.len().min(sketch.strokes.len()),
        });
    }
    let max_x = (sketch.canvas_w.round() - 1.0).max(0.0);
    let max_y = (sketch.canvas_h.round() - 1.0).max(0.0);
    let mut out = Vec::with_capacity(pred.len());
    for (si, (stroke, p)) in sketch.strokes.iter().zip(pred).enumerate() {
        let gt = stroke
            .gt_labels
            .as_ref()
            .ok_or(MetricError::MissingGroundTruth { stroke: si })?;
        if p.len() != stroke.len() || gt.len() != stroke.len() {
            return Err(MetricError::ShapeMismatch { stroke: si });
        }
        let points: Vec<Point2> = stroke
            .points
            .iter()
            .map(|q| Point2::new(q.x.clamp(0.0, max_x), q.y.clamp(0.0, max_y)))
            .collect();
        let mut owner: HashMap<(i64, i64), u32> = HashMap::new();
        rasterize_stroke(&points, si as u32, |x, y, r| {
            owner.insert((x, y), r.point);
        });
        let correct = owner
            .values()
            .filter(|&&i| p[i as usize] == gt[i as usize])
            .count();
        out.push(StrokeScore {
            pixels: owner.len(),
            correct,
        });
    }
    Ok(out)
}

/// Percentage of stroke pixels whose predicted label is the true one.
pub fn pixel_metric(pred: &[Vec<u32>], sketch: &Sketch) -> Result<f64, MetricError> {
    Ok(pixel_percent(&stroke_scores(pred, sketch)?))
}

/// Percentage of strokes with at least `threshold` of their pixels correct.
pub fn component_metric(pred: &[Vec<u32>], sketch: &Sketch, threshold: f64) -> Result<f64, MetricError> {
    Ok(component_percent(&stroke_scores(pred, sketch)?, threshold))
}

fn pixel_percent(scores: &[StrokeScore]) -> f64 {
    let pixels: usize = scores.iter().map(|s| s.pixels).sum();
    let correct: usize = scores.iter().map(|s| s.correct).sum();
    100.0 * correct as f64 / pixels.max(1) as f64
}

fn component_percent(scores: &[StrokeScore], threshold: f64) -> f64 {
    let ok = scores
        .iter()
        .filter(|s| s.correct as f64 >= threshold * s.pixels as f64)
        .count();
    100.0 * ok as f64 / scores.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchMetrics {
    pub pixel: f64,
    pub component: f64,
    /// Smoothing energy of the reported labeling.
    pub energy: f64,
    pub timing: StageTimes,
}

/// Results of one evaluation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub category: String,
    pub batch: usize,
    pub refine: bool,
    /// In input order.
    pub per_sketch: Vec<SketchMetrics>,
    /// Means over sketches.
    pub pixel_metric: f64,
    pub component_metric: f64,
    pub mean_timing: StageTimes,
    pub mean_ms: f64,
    pub total_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub params: EnergyParams,
    pub batch_sizes: Vec<usize>,
    pub refine: bool,
    /// Seed of the partition into batches.
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            params: EnergyParams::default(),
            batch_sizes: DEFAULT_BATCH_SIZES.to_vec(),
            refine: true,
            seed: 0,
            threshold: COMPONENT_THRESHOLD,
        }
    }
}

/// Name of an evaluation variant, e.g. `ours-4` or `ours-nogc-1`.
pub fn variant_name(batch: usize, refine: bool) -> String {
    if refine {
        format!("ours-{batch}")
    } else {
        format!("ours-nogc-{batch}")
    }
}

/// Segments `sketches` in batches of each size in `cfg.batch_sizes` and
/// scores them against their ground truth, one report per size.
///
/// Sketches are shuffled with `cfg.seed` and cut into consecutive batches;
/// a short last batch is filled up with sketches tested earlier, whose
/// second results are discarded.
pub fn evaluate_dataset(model: &Model, sketches: &[Sketch], cfg: &EvalConfig) -> Result<Vec<MetricReport>, MetricError> {
    if sketches.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let side = model.spec.input_side;
    // Ground truth in the frame the pipeline labels.
    let truth = sketches
        .iter()
        .map(|s| {
            if let Some(stroke) = s.strokes.iter().position(|st| st.gt_labels.is_none()) {
                return Err(MetricError::MissingGroundTruth { stroke });
            }
            Ok(normalize_sketch(s, side).map_err(PipelineError::from)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let opts = SegmentOptions {
        params: cfg.params,
        refine: cfg.refine,
        ..SegmentOptions::default()
    };
    let mut order: Vec<usize> = (0..sketches.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut reports = Vec::with_capacity(cfg.batch_sizes.len());
    for &x in &cfg.batch_sizes {
        if x == 0 {
            return Err(MetricError::ZeroBatch);
        }
        let mut per: Vec<Option<SketchMetrics>> = vec![None; sketches.len()];
        for chunk in order.chunks(x) {
            let mut batch: Vec<usize> = chunk.to_vec();
            let mut fill = order.iter().cycle();
            while batch.len() < x {
                batch.push(*fill.next().expect("non-empty order"));
            }
            let input: Vec<Sketch> = batch.iter().map(|&i| sketches[i].clone()).collect();
            let results = segment_batch(&input, model, &opts)?;
            for (&i, r) in chunk.iter().zip(&results) {
                let scores = stroke_scores(&r.labels, &truth[i])?;
                per[i] = Some(SketchMetrics {
                    pixel: pixel_percent(&scores),
                    component: component_percent(&scores, cfg.threshold),
                    energy: r.energy,
                    timing: r.timing,
                });
            }
        }
        let per: Vec<SketchMetrics> = per.into_iter().map(|m| m.expect("every sketch tested")).collect();
        let n = per.len() as f64;
        let mean = |f: fn(&SketchMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
        let mean_timing = StageTimes {
            rasterize: mean(|m| m.timing.rasterize),
            infer: mean(|m| m.timing.infer),
            refine: mean(|m| m.timing.refine),
        };
        reports.push(MetricReport {
            variant: variant_name(x, cfg.refine),
            category: model.category().to_string(),
            batch: x,
            refine: cfg.refine,
            pixel_metric: mean(|m| m.pixel),
            component_metric: mean(|m| m.component),
            mean_ms: mean_timing.total(),
            mean_timing,
            total_energy: per.iter().map(|m| m.energy).sum(),
            per_sketch: per,
        });
    }
    Ok(reports)
}

pub const CSV_HEADER: &str = "variant,category,pixel_metric,component_metric,mean_ms,n_sketches";

/// One row per report under [`CSV_HEADER`].
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{:.2},{:.2},{:.3},{}",
            r.variant,
            r.category,
            r.pixel_metric,
            r.component_metric,
            r.mean_ms,
            r.per_sketch.len()
        );
    }
    s
}
