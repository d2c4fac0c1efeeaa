use super::{normalize_angle, Box3D, GtObject, Point, PointCloud};

/// Mirrors the scene across the x-z plane.
pub fn flip_y(cloud: &PointCloud, labels: &[GtObject]) -> (PointCloud, Vec<GtObject>) {
    let points = cloud
        .points
        .iter()
        .map(|p| Point::new(p.x, -p.y, p.z, p.r))
        .collect();
    let labels = labels
        .iter()
        .map(|g| {
            let b = g.bbox;
            GtObject {
                class_name: g.class_name.clone(),
                bbox: Box3D {
                    cy: -b.cy,
                    theta: normalize_angle(-b.theta),
                    ..b
                },
            }
        })
        .collect();
    (PointCloud::new(cloud.frame_id, points), labels)
}

/// Rotates points and boxes by `phi` radians about the z axis.
pub fn rotate_z(cloud: &PointCloud, labels: &[GtObject], phi: f64) -> (PointCloud, Vec<GtObject>) {
    let (s, c) = phi.sin_cos();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (x, y) = (p.x as f64, p.y as f64);
            Point::new((x * c - y * s) as f32, (x * s + y * c) as f32, p.z, p.r)
        })
        .collect();
    let labels = labels
        .iter()
        .map(|g| {
            let b = g.bbox;
            GtObject {
                class_name: g.class_name.clone(),
                bbox: Box3D {
                    cx: b.cx * c - b.cy * s,
                    cy: b.cx * s + b.cy * c,
                    theta: normalize_angle(b.theta + phi),
                    ..b
                },
            }
        })
        .collect();
    (PointCloud::new(cloud.frame_id, points), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{gen_synthetic_scene, SynthParams};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn scene(seed: u64) -> (PointCloud, Vec<GtObject>) {
        gen_synthetic_scene(&SynthParams {
            seed,
            ground_density: 0.2,
            ..Default::default()
        })
        .unwrap()
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        normalize_angle(a - b).abs()
    }

    #[test]
    fn flip_point_and_boundary_yaw() {
        let c = PointCloud::new(0, vec![Point::new(1.0, 2.0, 0.0, 0.5)]);
        let g = vec![GtObject::car(Box3D::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], PI))];
        let (fc, fg) = flip_y(&c, &g);
        assert_eq!(fc.points[0], Point::new(1.0, -2.0, 0.0, 0.5));
        assert_eq!(fg[0].bbox.theta, PI);
        assert_eq!(fg[0].bbox.cy, -2.0);
    }

    #[test]
    fn flip_is_an_involution() {
        for seed in 0..4 {
            let (c, g) = scene(seed);
            let (c1, g1) = flip_y(&c, &g);
            let (c2, g2) = flip_y(&c1, &g1);
            assert_eq!(c2, c);
            for (a, b) in g2.iter().zip(&g) {
                assert_eq!(a.bbox.cy, b.bbox.cy);
                assert!(angle_diff(a.bbox.theta, b.bbox.theta) < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_quarter_turn_and_identity() {
        let c = PointCloud::new(0, vec![Point::new(1.0, 0.0, 0.0, 0.3)]);
        let (r, _) = rotate_z(&c, &[], FRAC_PI_2);
        assert!(r.points[0].x.abs() < 1e-6 && (r.points[0].y - 1.0).abs() < 1e-6);
        assert_eq!(r.points[0].r, 0.3);

        let (c, g) = scene(5);
        let (c0, g0) = rotate_z(&c, &g, 0.0);
        assert_eq!(c0, c);
        assert_eq!(g0, g);
    }

    #[test]
    fn rotation_composes() {
        let (c, g) = scene(11);
        for (a, b) in [(0.3, 1.1), (-2.0, 2.9), (3.0, 3.0)] {
            let (c1, g1) = rotate_z(&c, &g, a);
            let (c2, g2) = rotate_z(&c1, &g1, b);
            let (c3, g3) = rotate_z(&c, &g, a + b);
            assert_eq!(c2.len(), c.len());
            for (p, q) in c2.points.iter().zip(&c3.points) {
                assert!((p.x - q.x).abs() < 1e-5 && (p.y - q.y).abs() < 1e-5);
                assert_eq!(p.z, q.z);
            }
            for (p, q) in g2.iter().zip(&g3) {
                assert!((p.bbox.cx - q.bbox.cx).abs() < 1e-5);
                assert!((p.bbox.cy - q.bbox.cy).abs() < 1e-5);
                assert!(angle_diff(p.bbox.theta, q.bbox.theta) < 1e-5);
                assert_eq!((p.bbox.dx, p.bbox.dy, p.bbox.dz), (q.bbox.dx, q.bbox.dy, q.bbox.dz));
            }
        }
    }
}
