use serde::{Deserialize, Serialize};

use super::Vec3;

/// Vertical field of view of every camera, degrees.
pub const FOV_DEG: f64 = 40.0;

/// Perspective camera on a sphere around the origin, looking at it with +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// In multiples of the bounding radius (meshes are normalized to 1).
    pub distance: f64,
    pub fov_deg: f64,
    pub side: usize,
}

/// Camera-space position of a point: `x` right, `y` up, `depth` along the
/// view direction (positive in front of the camera).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Camera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, distance: f64, side: usize) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            distance,
            fov_deg: FOV_DEG,
            side,
        }
    }

    pub fn eye(&self) -> Vec3 {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()).scale(self.distance)
    }

    /// Orthonormal `(right, up, forward)` basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = self.eye().scale(-1.0).normalized();
        let world_up = Vec3::new(0.0, 1.0, 0.0);
        let right = forward.cross(world_up).normalized();
        let up = right.cross(forward);
        (right, up, forward)
    }

    pub fn to_view(&self, p: Vec3) -> ViewPoint {
        let (r, u, f) = self.basis();
        let d = p.sub(self.eye());
        ViewPoint {
            x: d.dot(r),
            y: d.dot(u),
            depth: d.dot(f),
        }
    }

    /// Continuous pixel coordinates of a camera-space point, `y` downward.
    pub fn project(&self, v: ViewPoint) -> (f64, f64) {
        let t = (0.5 * self.fov_deg.to_radians()).tan();
        let half = 0.5 * self.side as f64;
        let nx = v.x / (v.depth * t);
        let ny = v.y / (v.depth * t);
        (half * (1.0 + nx), half * (1.0 - ny))
    }
}

/// Viewpoint grid on the upper hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrid {
    pub n_azimuth: usize,
    pub elevations_deg: Vec<f64>,
    pub distances: Vec<f64>,
}

impl Default for ViewGrid {
    fn default() -> Self {
        Self {
            n_azimuth: 12,
            elevations_deg: vec![15.0, 35.0, 55.0],
            distances: vec![2.2, 3.0],
        }
    }
}

/// Evenly spaced azimuths starting at 0°, crossed with every elevation and
/// distance. Order: azimuth, then elevation, then distance.
pub fn sample_viewpoints(grid: &ViewGrid, side: usize) -> Vec<Camera> {
    let step = 360.0 / grid.n_azimuth.max(1) as f64;
    let mut out = Vec::new();
    for a in 0..grid.n_azimuth {
        for &el in &grid.elevations_deg {
            for &d in &grid.distances {
                out.push(Camera::new(a as f64 * step, el, d, side));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_72_cameras() {
        let cams = sample_viewpoints(&ViewGrid::default(), 256);
        assert_eq!(cams.len(), 72);
        assert!(cams.iter().all(|c| c.elevation_deg > 0.0 && c.elevation_deg < 90.0));
        assert_eq!(cams[1].azimuth_deg, 0.0);
        assert_eq!(cams[6].azimuth_deg, 30.0);
    }

    #[test]
    fn six_azimuths_give_36() {
        let g = ViewGrid {
            n_azimuth: 6,
            ..ViewGrid::default()
        };
        assert_eq!(sample_viewpoints(&g, 256).len(), 36);
    }

    #[test]
    fn origin_projects_to_center() {
        for c in sample_viewpoints(&ViewGrid::default(), 200) {
            let v = c.to_view(Vec3::default());
            assert!((v.depth - c.distance).abs() < 1e-12);
            let (x, y) = c.project(v);
            assert!((x - 100.0).abs() < 1e-9 && (y - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn up_is_up_on_screen() {
        let c = Camera::new(30.0, 20.0, 3.0, 100);
        let (_, y_top) = c.project(c.to_view(Vec3::new(0.0, 0.5, 0.0)));
        assert!(y_top < 50.0);
        let front = Camera::new(0.0, 1e-3, 3.0, 100);
        // Azimuth 0 looks down -z, so +x appears on the right.
        let (x, _) = front.project(front.to_view(Vec3::new(0.5, 0.0, 0.0)));
        assert!(x > 50.0);
    }
}
