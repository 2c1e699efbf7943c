use super::{Camera, LabeledMesh, RenderError};

/// Nearest depth a triangle vertex may have; anything closer is skipped.
const NEAR: f64 = 1e-3;

/// Per-pixel render output, `side`×`side`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub side: usize,
    /// Camera-space unit normal facing the viewer, mapped to [0, 1]; zero
    /// where empty.
    pub normal: Vec<[f32; 3]>,
    /// Camera-space depth, `+inf` where empty.
    pub depth: Vec<f64>,
    /// Part label of the visible triangle, 0 where empty.
    pub part: Vec<u32>,
}

impl GBuffer {
    fn empty(side: usize) -> Self {
        let n = side * side;
        Self {
            side,
            normal: vec![[0.0; 3]; n],
            depth: vec![f64::INFINITY; n],
            part: vec![0; n],
        }
    }

    pub fn covered(&self) -> usize {
        self.part.iter().filter(|&&p| p != 0).count()
    }

    /// The normal image as three planes, the layout `canny` takes.
    pub fn normal_planes(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| self.normal.iter().map(|n| n[c] as f64).collect())
    }
}

/// Z-buffered rasterization of `mesh` (optionally only triangles of part
/// `only`) with flat per-face normals. Pixel centers sit at half-integers;
/// depth is interpolated perspective-correctly and ties keep the earlier
/// triangle.
pub fn render_normal_depth(
    mesh: &LabeledMesh,
    only: Option<u32>,
    camera: &Camera,
) -> Result<GBuffer, RenderError> {
    let side = camera.side;
    let mut gb = GBuffer::empty(side);
    let (right, up, forward) = camera.basis();
    let eye = camera.eye();
    let mut drawn = 0usize;
    for (t, &label) in mesh.part_of.iter().enumerate() {
        if only.is_some_and(|p| p != label) {
            continue;
        }
        drawn += 1;
        let tri = mesh.triangle(t);
        let view = tri.map(|p| camera.to_view(p));
        if view.iter().any(|v| v.depth < NEAR) {
            continue;
        }
        let mut n = tri[1].sub(tri[0]).cross(tri[2].sub(tri[0])).normalized();
        let centroid = tri[0].add(tri[1]).add(tri[2]).scale(1.0 / 3.0);
        if n.dot(eye.sub(centroid)) < 0.0 {
            n = n.scale(-1.0);
        }
        let cam_n = [n.dot(right), n.dot(up), -n.dot(forward)];
        let color = cam_n.map(|c| (0.5 * (c + 1.0)).clamp(0.0, 1.0) as f32);

        let p = view.map(|v| camera.project(v));
        let inv_z = view.map(|v| 1.0 / v.depth);
        let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let lo_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let hi_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let hi_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (lo_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (lo_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((hi_x - 0.5).floor()).min(side as f64 - 1.0);
        let y1 = ((hi_y - 0.5).floor()).min(side as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for y in y0..=y1 {
            let cy = y as f64 + 0.5;
            for x in x0..=x1 {
                let cx = x as f64 + 0.5;
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (cy - a.1) - (cx - a.0) * (b.1 - a.1);
                let w0 = edge(p[1], p[2]) / area;
                let w1 = edge(p[2], p[0]) / area;
                let w2 = edge(p[0], p[1]) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
                let i = y * side + x;
                if z < gb.depth[i] {
                    gb.depth[i] = z;
                    gb.normal[i] = color;
                    gb.part[i] = label;
                }
            }
        }
    }
    if drawn == 0 {
        return Err(RenderError::EmptyGeometry { part: only });
    }
    Ok(gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{push_box, toy_chair, Vec3};

    fn mesh_of(tris: Vec<([Vec3; 3], u32)>) -> LabeledMesh {
        let mut m = LabeledMesh {
            id: "t".into(),
            vertices: Vec::new(),
            triangles: Vec::new(),
            part_of: Vec::new(),
            part_names: vec!["bg".into(), "a".into(), "b".into()],
        };
        for (t, l) in tris {
            let b = m.vertices.len() as u32;
            m.vertices.extend(t);
            m.triangles.push([b, b + 1, b + 2]);
            m.part_of.push(l);
        }
        m
    }

    /// Camera on +z looking at the origin.
    fn front(side: usize) -> Camera {
        Camera::new(0.0, 0.0, 3.0, side)
    }

    #[test]
    fn single_triangle_is_flat() {
        let big = 50.0;
        let m = mesh_of(vec![(
            [Vec3::new(-big, -big, 0.0), Vec3::new(big, -big, 0.0), Vec3::new(0.0, big, 0.0)],
            1,
        )]);
        let gb = render_normal_depth(&m, None, &front(32)).unwrap();
        let covered: Vec<usize> = (0..gb.part.len()).filter(|&i| gb.part[i] != 0).collect();
        assert_eq!(covered.len(), 32 * 32);
        for &i in &covered {
            assert_eq!(gb.normal[i], gb.normal[covered[0]]);
        }
        // Facing the camera: camera-space normal (0, 0, 1).
        assert_eq!(gb.normal[0], [0.5, 0.5, 1.0]);
    }

    #[test]
    fn z_buffer_keeps_nearer() {
        // Camera at z = 3 looking toward -z: depth 2 means z = 1, depth 3 means z = 0.
        let tri = |z: f64, l: u32| {
            ([Vec3::new(-1.0, -1.0, z), Vec3::new(1.0, -1.0, z), Vec3::new(0.0, 1.0, z)], l)
        };
        for order in [vec![tri(1.0, 1), tri(0.0, 2)], vec![tri(0.0, 2), tri(1.0, 1)]] {
            let gb = render_normal_depth(&mesh_of(order), None, &front(64)).unwrap();
            let mut both = 0;
            for i in 0..gb.part.len() {
                if gb.part[i] != 0 {
                    // The far triangle projects smaller and lies inside the near one.
                    assert_eq!(gb.part[i], 1);
                    assert!((gb.depth[i] - 2.0).abs() < 1e-9);
                    both += 1;
                }
            }
            assert!(both > 100);
        }
    }

    #[test]
    fn depth_finite_exactly_where_covered() {
        let m = toy_chair(1);
        let gb = render_normal_depth(&m, None, &Camera::new(30.0, 35.0, 2.2, 64)).unwrap();
        for i in 0..gb.part.len() {
            assert_eq!(gb.depth[i].is_finite(), gb.part[i] != 0);
        }
        assert!(gb.covered() > 200);
    }

    #[test]
    fn cube_silhouette_is_resolution_consistent() {
        let mut m = mesh_of(vec![]);
        push_box(&mut m, Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), 1);
        m.normalize();
        for cam in [(0.0, 15.0, 2.2), (40.0, 35.0, 3.0), (125.0, 55.0, 2.2), (300.0, 20.0, 3.0)] {
            let full = render_normal_depth(&m, None, &Camera::new(cam.0, cam.1, cam.2, 256)).unwrap();
            let half = render_normal_depth(&m, None, &Camera::new(cam.0, cam.1, cam.2, 128)).unwrap();
            let (a, b) = (full.covered() as f64, 4.0 * half.covered() as f64);
            assert!((a - b).abs() <= 0.05 * a, "{cam:?}: {a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_filtered() {
        let m = toy_chair(0);
        let cam = Camera::new(60.0, 15.0, 3.0, 64);
        assert_eq!(
            render_normal_depth(&m, Some(2), &cam).unwrap(),
            render_normal_depth(&m, Some(2), &cam).unwrap()
        );
        let seat = render_normal_depth(&m, Some(2), &cam).unwrap();
        assert!(seat.part.iter().all(|&p| p == 0 || p == 2));
        assert!(matches!(
            render_normal_depth(&m, Some(7), &cam),
            Err(RenderError::EmptyGeometry { part: Some(7) })
        ));
    }
}
