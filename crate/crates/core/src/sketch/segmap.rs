use super::{Sketch, SketchError};

/// k-channel score volume over part labels, channel-major `(k, H, W)`.
/// Channel 0 is the background. Scores are raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMap {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl SegMap {
    pub fn new(k: usize, width: usize, height: usize, data: Vec<f32>) -> Self {
        assert!(k >= 2, "segmentation map needs at least 2 channels");
        assert_eq!(data.len(), k * width * height, "segmentation map data length");
        Self {
            k,
            width,
            height,
            data,
        }
    }

    pub fn zeros(k: usize, width: usize, height: usize) -> Self {
        Self::new(k, width, height, vec![0.0; k * width * height])
    }

    #[inline]
    pub fn score(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, channel: usize, x: usize, y: usize, v: f32) {
        self.data[(channel * self.height + y) * self.width + x] = v;
    }

    pub fn scores_at(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.k).map(|c| self.score(c, x, y)).collect()
    }

    /// Highest-scoring non-background channel; ties go to the lowest index.
    pub fn part_argmax(&self, x: usize, y: usize) -> u32 {
        let mut best = 1;
        let mut best_v = self.score(1, x, y);
        for c in 2..self.k {
            let v = self.score(c, x, y);
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        best as u32
    }

    /// Argmax over all channels including background, lowest index on ties.
    pub fn full_argmax(&self, x: usize, y: usize) -> u32 {
        let mut best = 0;
        let mut best_v = self.score(0, x, y);
        for c in 1..self.k {
            let v = self.score(c, x, y);
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        best as u32
    }

    /// Per-pixel softmax over channels.
    pub fn probabilities(&self) -> SegMap {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; self.data.len()];
        for i in 0..plane {
            let m = (0..self.k)
                .map(|c| self.data[c * plane + i])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for c in 0..self.k {
                let e = (self.data[c * plane + i] - m).exp();
                out[c * plane + i] = e;
                sum += e;
            }
            for c in 0..self.k {
                out[c * plane + i] /= sum;
            }
        }
        SegMap::new(self.k, self.width, self.height, out)
    }
}

/// Labels and channel scores read at every stroke point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLabels {
    /// One label per point, grouped by stroke; never 0.
    pub labels: Vec<Vec<u32>>,
    /// The k channel values at each point's pixel.
    pub scores: Vec<Vec<Vec<f32>>>,
}

impl PointLabels {
    pub fn flat_labels(&self) -> Vec<u32> {
        self.labels.iter().flatten().copied().collect()
    }
}

/// Reads the segmentation map at each stroke point's rounded (and clamped)
/// pixel. Stroke points cannot be background, so the label is the argmax
/// over channels `1..k`.
pub fn sample_point_labels(sketch: &Sketch, segmap: &SegMap) -> Result<PointLabels, SketchError> {
    let want_w = sketch.canvas_w.round() as usize;
    let want_h = sketch.canvas_h.round() as usize;
    if segmap.width != want_w || segmap.height != want_h {
        return Err(SketchError::SegMapSize {
            got_w: segmap.width,
            got_h: segmap.height,
            want_w,
            want_h,
        });
    }
    let max_x = (segmap.width - 1) as f64;
    let max_y = (segmap.height - 1) as f64;
    let mut labels = Vec::with_capacity(sketch.strokes.len());
    let mut scores = Vec::with_capacity(sketch.strokes.len());
    for stroke in &sketch.strokes {
        let mut ls = Vec::with_capacity(stroke.len());
        let mut ss = Vec::with_capacity(stroke.len());
        for p in &stroke.points {
            let x = p.x.round().clamp(0.0, max_x) as usize;
            let y = p.y.round().clamp(0.0, max_y) as usize;
            ls.push(segmap.part_argmax(x, y));
            ss.push(segmap.scores_at(x, y));
        }
        labels.push(ls);
        scores.push(ss);
    }
    Ok(PointLabels { labels, scores })
}
