use super::{Point2, Sketch};

/// Index of a stroke point inside a sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointRef {
    pub stroke: u32,
    pub point: u32,
}

/// Binary occupancy raster with the stroke point that produced each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub point_map: Vec<Option<PointRef>>,
}

/// Per-pixel integer part labels, 0 for background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl RasterImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
            point_map: vec![None; width * height],
        }
    }

    pub fn occupied(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    fn mark(&mut self, x: i64, y: i64, owner: PointRef) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = y as usize * self.width + x as usize;
        self.values[i] = 1;
        self.point_map[i] = Some(owner);
    }

    /// Label image built from the generating points' ground-truth labels.
    /// `None` when the sketch carries no labels on some stroke.
    pub fn label_image(&self, sketch: &Sketch) -> Option<LabelImage> {
        if !sketch.has_gt() {
            return None;
        }
        let labels = self
            .point_map
            .iter()
            .map(|owner| match owner {
                Some(r) => {
                    let gt = sketch.strokes[r.stroke as usize].gt_labels.as_ref().unwrap();
                    gt[r.point as usize] as u8
                }
                None => 0,
            })
            .collect();
        Some(LabelImage {
            width: self.width,
            height: self.height,
            labels,
        })
    }
}

fn pixel_of(p: Point2) -> (i64, i64) {
    (p.x.round() as i64, p.y.round() as i64)
}

/// Integer Bresenham line from `a` to `b`, both endpoints included.
pub fn draw_line(a: (i64, i64), b: (i64, i64), mut plot: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws every stroke as a chain of 1-pixel lines on a raster the size of
/// the sketch canvas. Later strokes overwrite earlier ones where they cross;
/// each pixel is attributed to the nearer endpoint of its segment.
pub fn rasterize(sketch: &Sketch) -> RasterImage {
    let w = sketch.canvas_w.round().max(1.0) as usize;
    let h = sketch.canvas_h.round().max(1.0) as usize;
    let mut img = RasterImage::empty(w, h);
    for (si, stroke) in sketch.strokes.iter().enumerate() {
        rasterize_stroke(&stroke.points, si as u32, |x, y, owner| img.mark(x, y, owner));
    }
    img
}

pub(crate) fn rasterize_stroke(
    points: &[Point2],
    stroke: u32,
    mut mark: impl FnMut(i64, i64, PointRef),
) {
    match points {
        [] => {}
        [p] => {
            let (x, y) = pixel_of(*p);
            mark(x, y, PointRef { stroke, point: 0 });
        }
        _ => {
            for (i, seg) in points.windows(2).enumerate() {
                let (a, b) = (seg[0], seg[1]);
                draw_line(pixel_of(a), pixel_of(b), |x, y| {
                    let px = Point2::new(x as f64, y as f64);
                    let near_b = px.distance(b) < px.distance(a);
                    let point = if near_b { i + 1 } else { i } as u32;
                    mark(x, y, PointRef { stroke, point });
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::Stroke;

    fn sketch(strokes: Vec<Vec<(f64, f64)>>) -> Sketch {
        let mut s = Sketch::new("t", 256.0, 256.0);
        for pts in strokes {
            s.strokes
                .push(Stroke::new(pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect()));
        }
        s
    }

    #[test]
    fn diagonal_line() {
        let img = rasterize(&sketch(vec![vec![(0.0, 0.0), (255.0, 255.0)]]));
        assert_eq!(img.occupied(), 256);
        for i in 0..256 {
            assert_eq!(img.get(i, i), 1);
        }
    }

    #[test]
    fn empty_sketch_is_blank() {
        let img = rasterize(&sketch(vec![]));
        assert_eq!(img.occupied(), 0);
        assert_eq!(img.values.len(), 256 * 256);
    }

    #[test]
    fn corner_counted_once() {
        let img = rasterize(&sketch(vec![vec![(10.0, 10.0), (20.0, 10.0), (20.0, 20.0)]]));
        assert_eq!(img.occupied(), 21);
        let corner = img.point_map[10 * 256 + 20].unwrap();
        assert_eq!(corner.point, 1);
    }

    #[test]
    fn nearest_endpoint_owns_pixel() {
        let img = rasterize(&sketch(vec![vec![(0.0, 5.0), (10.0, 5.0)]]));
        assert_eq!(img.point_map[5 * 256 + 2].unwrap().point, 0);
        assert_eq!(img.point_map[5 * 256 + 8].unwrap().point, 1);
        // equidistant pixel goes to the first endpoint
        assert_eq!(img.point_map[5 * 256 + 5].unwrap().point, 0);
    }

    #[test]
    fn label_image_follows_owners() {
        let mut s = sketch(vec![vec![(0.0, 0.0), (4.0, 0.0)], vec![(0.0, 9.0)]]);
        s.strokes[0].gt_labels = Some(vec![1, 2]);
        s.strokes[1].gt_labels = Some(vec![3]);
        let img = rasterize(&s);
        let li = img.label_image(&s).unwrap();
        assert_eq!(&li.labels[0..5], &[1, 1, 1, 2, 2]);
        assert_eq!(li.labels[9 * 256], 3);
        let nonzero = li.labels.iter().filter(|&&l| l != 0).count();
        assert_eq!(nonzero, img.occupied());
    }

    #[test]
    fn out_of_bounds_pixels_are_skipped() {
        let img = rasterize(&sketch(vec![vec![(-5.0, 0.0), (5.0, 0.0)]]));
        assert_eq!(img.occupied(), 6);
    }
}
