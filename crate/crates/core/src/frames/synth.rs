//! Synthetic labeled scenes: a flat ground plane plus cuboid point shells for cars.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Box3D, GtObject, Point, PointCloud};
use crate::error::{Error, Result};

const PLACEMENT_RETRIES: usize = 20;
const CAR_LENGTH: (f64, f64) = (3.5, 4.5);
const CAR_WIDTH: (f64, f64) = (1.5, 1.9);
const CAR_HEIGHT: (f64, f64) = (1.4, 1.7);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_cars: usize,
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    /// Ground returns per square meter.
    pub ground_density: f64,
    /// Car-surface returns per square meter of cuboid surface.
    pub surface_density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_cars: 5,
            range_x: (2.0, 44.0),
            range_y: (-20.0, 20.0),
            ground_density: 1.0,
            surface_density: 20.0,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok_range(self.range_x) || !ok_range(self.range_y) {
            return Err(Error::InvalidArgument("synthetic scene range is empty".into()));
        }
        if !(self.ground_density >= 0.0 && self.surface_density >= 0.0) {
            return Err(Error::InvalidArgument("densities must be >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generates one scene; identical params (including seed) give identical output.
pub fn gen_synthetic_scene(params: &SynthParams) -> Result<(PointCloud, Vec<GtObject>)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (x0, x1) = params.range_x;
    let (y0, y1) = params.range_y;

    let mut boxes: Vec<Box3D> = Vec::with_capacity(params.n_cars);
    for car in 0..params.n_cars {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let dx = rng.random_range(CAR_LENGTH.0..CAR_LENGTH.1);
            let dy = rng.random_range(CAR_WIDTH.0..CAR_WIDTH.1);
            let dz = rng.random_range(CAR_HEIGHT.0..CAR_HEIGHT.1);
            let cx = rng.random_range(x0..x1);
            let cy = rng.random_range(y0..y1);
            let theta = rng.random_range(-PI..PI);
            let cand = Box3D::new([cx, cy, dz / 2.0], [dx, dy, dz], theta);
            let radius = |b: &Box3D| 0.5 * b.dx.hypot(b.dy);
            let clear = boxes.iter().all(|b| {
                (b.cx - cand.cx).hypot(b.cy - cand.cy) > radius(b) + radius(&cand)
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(Error::Placement {
                    car,
                    retries: PLACEMENT_RETRIES,
                })
            }
        }
    }

    let mut points = Vec::new();

    let n_ground = ((x1 - x0) * (y1 - y0) * params.ground_density).round() as usize;
    for _ in 0..n_ground {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let r = rng.random_range(0.05..0.3);
        if boxes.iter().any(|b| b.contains_bev(x, y)) {
            continue;
        }
        points.push([x, y, 0.0, r]);
    }

    for b in &boxes {
        sample_cuboid_shell(b, params.surface_density, &mut rng, &mut points);
    }

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in points.iter_mut() {
            for v in p.iter_mut().take(3) {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let cloud = PointCloud::new(
        0,
        points
            .into_iter()
            .map(|[x, y, z, r]| Point::new(x as f32, y as f32, z as f32, r as f32))
            .collect(),
    );
    let labels = boxes.into_iter().map(GtObject::car).collect();
    Ok((cloud, labels))
}

fn sample_cuboid_shell(b: &Box3D, density: f64, rng: &mut ChaCha8Rng, out: &mut Vec<[f64; 4]>) {
    let (l, w, h) = (b.dx, b.dy, b.dz);
    // faces as (normal axis, sign); areas pair up
    let areas = [w * h, w * h, l * h, l * h, l * w, l * w];
    let total: f64 = areas.iter().sum();
    let n = (total * density).round() as usize;
    let (s, c) = b.theta.sin_cos();
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut face = 5;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
        let mut local = [
            rng.random_range(-0.5..0.5) * l,
            rng.random_range(-0.5..0.5) * w,
            rng.random_range(-0.5..0.5) * h,
        ];
        local[face / 2] = sign * [l, w, h][face / 2];
        let x = b.cx + local[0] * c - local[1] * s;
        let y = b.cy + local[0] * s + local[1] * c;
        let z = b.cz + local[2];
        out.push([x, y, z, rng.random_range(0.4..0.9)]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Distance from a point to the surface of an oriented cuboid.
    fn surface_distance(b: &Box3D, p: &Point) -> f64 {
        let [u, v, w] = b.to_local(p.x as f64, p.y as f64, p.z as f64);
        let half = [b.dx / 2.0, b.dy / 2.0, b.dz / 2.0];
        let q = [u.abs() - half[0], v.abs() - half[1], w.abs() - half[2]];
        let outside = q.iter().map(|d| d.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside.abs()
    }

    #[test]
    fn degenerate_params() {
        let p = SynthParams {
            n_cars: 0,
            ground_density: 0.0,
            ..Default::default()
        };
        let (cloud, labels) = gen_synthetic_scene(&p).unwrap();
        assert!(cloud.is_empty());
        assert!(labels.is_empty());
    }

    #[test]
    fn deterministic() {
        let p = SynthParams {
            seed: 99,
            ..Default::default()
        };
        let a = gen_synthetic_scene(&p).unwrap();
        let b = gen_synthetic_scene(&p).unwrap();
        assert_eq!(super::super::io::encode_frame(&a.0), super::super::io::encode_frame(&b.0));
        assert_eq!(a.1, b.1);
        let c = gen_synthetic_scene(&SynthParams { seed: 100, ..p }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn car_points_lie_on_their_cuboids() {
        for seed in 0..5 {
            let p = SynthParams {
                n_cars: 3,
                range_x: (-8.0, 8.0),
                range_y: (-8.0, 8.0),
                ground_density: 2.0,
                surface_density: 30.0,
                noise_sigma: 0.0,
                seed,
            };
            let (cloud, labels) = gen_synthetic_scene(&p).unwrap();
            assert_eq!(labels.len(), 3);
            let mut car_points = 0;
            for pt in &cloud.points {
                let on_car = labels
                    .iter()
                    .map(|g| surface_distance(&g.bbox, pt))
                    .fold(f64::INFINITY, f64::min);
                if on_car <= 1e-6 {
                    car_points += 1;
                    continue;
                }
                // every other point must be ground outside all footprints
                assert_eq!(pt.z, 0.0, "stray point {pt:?} (distance {on_car})");
                assert!(labels
                    .iter()
                    .all(|g| !g.bbox.contains_bev(pt.x as f64, pt.y as f64)));
            }
            assert!(car_points > 100);
            for g in &labels {
                assert!(g.bbox.dx >= 3.5 && g.bbox.dx <= 4.5);
                assert!((g.bbox.cz - g.bbox.dz / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn placement_failure() {
        let p = SynthParams {
            n_cars: 20,
            range_x: (0.0, 3.0),
            range_y: (0.0, 3.0),
            ..Default::default()
        };
        assert!(matches!(
            gen_synthetic_scene(&p),
            Err(Error::Placement { .. })
        ));
    }

    #[test]
    fn invalid_params() {
        let p = SynthParams {
            noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(gen_synthetic_scene(&p).is_err());
    }
}
