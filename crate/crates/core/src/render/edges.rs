use super::{canny, render_normal_depth, Camera, CannyParams, EdgeMapSample, GBuffer, LabeledMesh, Provenance, RenderError};

/// Depth slack of the visibility test, in bounding radii.
pub const DEPTH_EPS: f64 = 1e-3;

/// Depth at an edge pixel. Canny can put an edge one pixel outside the
/// silhouette, so empty pixels take the nearest depth in their 5×5
/// neighborhood, widening from 3×3.
fn depth_near(gb: &GBuffer, x: usize, y: usize) -> f64 {
    let d = gb.depth[y * gb.side + x];
    if d.is_finite() {
        return d;
    }
    for r in 1..=2i64 {
        let mut best = f64::INFINITY;
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < gb.side && (ny as usize) < gb.side {
                    best = best.min(gb.depth[ny as usize * gb.side + nx as usize]);
                }
            }
        }
        if best.is_finite() {
            return best;
        }
    }
    f64::INFINITY
}

/// Canny edges of part `part` rendered alone, with its G-buffer.
pub fn part_edges(mesh: &LabeledMesh, part: u32, camera: &Camera) -> Result<(Vec<bool>, GBuffer), RenderError> {
    let gb = render_normal_depth(mesh, Some(part), camera)?;
    let edges = canny(&gb.normal_planes(), camera.side, camera.side, &CannyParams::default())?;
    Ok((edges, gb))
}

/// Labeled edge map of `mesh` seen from `camera`.
///
/// Every part is rendered alone and run through Canny; its edge pixels get
/// its label. Where parts compete for a pixel the nearer one wins, ties going
/// to the lower label. With `depth_tested`, edge pixels lying behind the
/// full model's surface by more than [`DEPTH_EPS`] are dropped first.
pub fn make_edge_map_sample(
    mesh: &LabeledMesh,
    camera: &Camera,
    depth_tested: bool,
) -> Result<EdgeMapSample, RenderError> {
    let side = camera.side;
    let parts = mesh.parts();
    if parts.is_empty() {
        return Err(RenderError::EmptyMesh(mesh.id.clone()));
    }
    if parts.iter().any(|&p| p > u8::MAX as u32) {
        return Err(RenderError::InvalidSample("part label above 255".into()));
    }
    let full = render_normal_depth(mesh, None, camera)?;
    let mut best = vec![(f64::INFINITY, 0u8); side * side];
    for &p in &parts {
        let (edges, gb) = part_edges(mesh, p, camera)?;
        for (i, _) in edges.iter().enumerate().filter(|(_, &e)| e) {
            let (x, y) = (i % side, i / side);
            let d = depth_near(&gb, x, y);
            if depth_tested && !(d <= depth_near(&full, x, y) + DEPTH_EPS) {
                continue;
            }
            let slot = &mut best[i];
            if slot.1 == 0 || d < slot.0 {
                *slot = (d, p as u8);
            }
        }
    }
    let labels = best.into_iter().map(|(_, l)| l).collect();
    Ok(EdgeMapSample::from_labels(
        side,
        labels,
        Provenance {
            source: mesh.id.clone(),
            camera: Some(*camera),
            depth_tested,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{push_box, sample_viewpoints, toy_chair, ViewGrid, Vec3};

    fn two_cubes() -> LabeledMesh {
        let mut m = LabeledMesh {
            id: "cubes".into(),
            vertices: Vec::new(),
            triangles: Vec::new(),
            part_of: Vec::new(),
            part_names: vec!["bg".into(), "front".into(), "back".into()],
        };
        // A large box in front (toward +z) hides a small one behind it.
        push_box(&mut m, Vec3::new(-1.0, -1.0, 0.5), Vec3::new(1.0, 1.0, 1.0), 1);
        push_box(&mut m, Vec3::new(-0.3, -0.3, -1.0), Vec3::new(0.3, 0.3, -0.6), 2);
        m.normalize();
        m
    }

    #[test]
    fn occluded_part_vanishes_when_depth_tested() {
        let m = two_cubes();
        let cam = Camera::new(0.0, 5.0, 3.0, 128);
        let open = make_edge_map_sample(&m, &cam, false).unwrap();
        let tested = make_edge_map_sample(&m, &cam, true).unwrap();
        assert!(open.labels.iter().any(|&l| l == 2));
        assert_eq!(tested.labels.iter().filter(|&&l| l == 2).count(), 0);
        assert!(tested.labels.iter().any(|&l| l == 1));
        tested.validate().unwrap();
    }

    #[test]
    fn depth_tested_is_subset() {
        let m = toy_chair(0);
        let grid = ViewGrid {
            n_azimuth: 4,
            ..ViewGrid::default()
        };
        for cam in sample_viewpoints(&grid, 96).iter().step_by(5) {
            let open = make_edge_map_sample(&m, cam, false).unwrap();
            let tested = make_edge_map_sample(&m, cam, true).unwrap();
            open.validate().unwrap();
            for i in 0..open.image.len() {
                assert!(tested.image[i] <= open.image[i]);
            }
            assert!(tested.edge_pixels() > 50);
        }
    }

    #[test]
    fn single_part_variants_agree() {
        let mut m = LabeledMesh {
            id: "box".into(),
            vertices: Vec::new(),
            triangles: Vec::new(),
            part_of: Vec::new(),
            part_names: vec!["bg".into(), "a".into()],
        };
        push_box(&mut m, Vec3::new(-1.0, -0.5, -0.7), Vec3::new(1.0, 0.5, 0.7), 1);
        m.normalize();
        let cam = Camera::new(35.0, 30.0, 2.2, 96);
        let a = make_edge_map_sample(&m, &cam, false).unwrap();
        let b = make_edge_map_sample(&m, &cam, true).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.labels, b.labels);
    }
}
