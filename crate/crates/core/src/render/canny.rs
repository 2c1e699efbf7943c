//! Multi-channel Canny edge detector.

use super::RenderError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds on the gradient magnitude normalized by its
    /// image maximum.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).round() as usize
    }

    /// Normalized 1-D Gaussian taps, `2 * radius + 1` of them.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius() as i64;
        let k: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    }
}

fn clamp(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn blur(img: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * img[y * w + clamp(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[clamp(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Sobel gradients with replicated borders.
fn sobel(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: i64, y: i64| img[clamp(y, h) * w + clamp(x, w)];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Neighbor offset along the gradient, quantized to 0°, 45°, 90° or 135°.
/// `y` grows downward.
pub(crate) fn direction(gx: f64, gy: f64) -> (i64, i64) {
    let mut a = gy.atan2(gx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    if !(22.5..157.5).contains(&a) {
        (1, 0)
    } else if a < 67.5 {
        (1, 1)
    } else if a < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Edge mask of a `w`×`h` image given as equally sized channel planes.
///
/// Each channel is blurred, the channel with the largest Sobel magnitude
/// wins per pixel, magnitudes are divided by their maximum, thinned by
/// non-maximum suppression and linked by hysteresis. Suppression is
/// asymmetric (strictly greater than the pixel behind, at least the pixel
/// ahead) so a plateau keeps one pixel. Border pixels are never edges.
pub fn canny(
    channels: &[Vec<f64>],
    w: usize,
    h: usize,
    params: &CannyParams,
) -> Result<Vec<bool>, RenderError> {
    if !(params.low < params.high) || !(params.sigma > 0.0) {
        return Err(RenderError::InvalidCanny(*params));
    }
    if let Some(c) = channels.iter().find(|c| c.len() != w * h) {
        return Err(RenderError::InvalidSample(format!(
            "channel of {} pixels for {w}x{h}",
            c.len()
        )));
    }
    let n = w * h;
    let kernel = params.kernel();
    let mut mag = vec![0.0f64; n];
    let mut gxs = vec![0.0f64; n];
    let mut gys = vec![0.0f64; n];
    for ch in channels {
        let (gx, gy) = sobel(&blur(ch, w, h, &kernel), w, h);
        for i in 0..n {
            let m = gx[i].hypot(gy[i]);
            if m > mag[i] {
                mag[i] = m;
                gxs[i] = gx[i];
                gys[i] = gy[i];
            }
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut mask = vec![false; n];
    if max <= 0.0 || w < 3 || h < 3 {
        return Ok(mask);
    }
    for m in &mut mag {
        *m /= max;
    }

    let mut thin = vec![0.0f64; n];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m < params.low {
                continue;
            }
            let (dx, dy) = direction(gxs[i], gys[i]);
            let ahead = mag[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize];
            let behind = mag[(y as i64 - dy) as usize * w + (x as i64 - dx) as usize];
            if m > behind && m >= ahead {
                thin[i] = m;
            }
        }
    }

    let mut stack: Vec<usize> = (0..n).filter(|&i| thin[i] >= params.high).collect();
    for &i in &stack {
        mask[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !mask[j] && thin[j] >= params.low {
                    mask[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(mask)
}
