use serde::{Deserialize, Serialize};

use super::{Camera, RenderError};

/// Where a training pair came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub camera: Option<Camera>,
    pub depth_tested: bool,
}

/// Binary edge image with per-pixel part labels, `side`×`side`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMapSample {
    pub side: usize,
    /// 0 or 1 per pixel.
    pub image: Vec<u8>,
    /// Part label per pixel, 0 for background.
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl EdgeMapSample {
    /// Builds a sample from a label image; the edge image is its support.
    pub fn from_labels(side: usize, labels: Vec<u8>, provenance: Provenance) -> Self {
        assert_eq!(labels.len(), side * side, "label image size");
        let image = labels.iter().map(|&l| u8::from(l != 0)).collect();
        Self {
            side,
            image,
            labels,
            provenance,
        }
    }

    pub fn edge_pixels(&self) -> usize {
        self.image.iter().filter(|&&v| v != 0).count()
    }

    /// Checks sizes and that labels are nonzero exactly on edge pixels.
    pub fn validate(&self) -> Result<(), RenderError> {
        let n = self.side * self.side;
        if self.image.len() != n || self.labels.len() != n {
            return Err(RenderError::InvalidSample(format!(
                "buffers of {} and {} pixels for side {}",
                self.image.len(),
                self.labels.len(),
                self.side
            )));
        }
        if let Some(i) = (0..n).find(|&i| (self.image[i] != 0) != (self.labels[i] != 0)) {
            return Err(RenderError::InvalidSample(format!(
                "pixel ({}, {}) has image {} but label {}",
                i % self.side,
                i / self.side,
                self.image[i],
                self.labels[i]
            )));
        }
        Ok(())
    }
}
