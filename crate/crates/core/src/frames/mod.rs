//! Point-cloud frames, ground-truth labels, the synthetic scene generator and
//! the flip/rotate augmentations.
//!
//! Coordinates follow the sensor frame: x forward, y left, z up, meters.

mod augment;
mod io;
mod synth;

pub use augment::{flip_y, rotate_z};
pub use io::{
    frame_id_from_path, format_labels, parse_labels, read_frame, read_labels, write_frame,
    write_labels,
};
pub use synth::{gen_synthetic_scene, SynthParams};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Reflectance in [0, 1].
    pub r: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, r: f32) -> Self {
        Point { x, y, z, r }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn new(frame_id: u64, points: Vec<Point>) -> Self {
        PointCloud { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.r.is_finite()) {
                return Err(Error::Format(format!("point {i} has a non-finite value")));
            }
            if !(0.0..=1.0).contains(&p.r) {
                return Err(Error::Format(format!(
                    "point {i} reflectance {} outside [0, 1]",
                    p.r
                )));
            }
        }
        Ok(())
    }
}

/// Oriented 3D box: center, size along the box-local length/width/height
/// axes, and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub theta: f64,
}

impl Box3D {
    /// Builds a box, normalizing the yaw. Sizes are not checked; see [`Box3D::validate`].
    pub fn new(center: [f64; 3], size: [f64; 3], theta: f64) -> Self {
        Box3D {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            dx: size[0],
            dy: size[1],
            dz: size[2],
            theta: normalize_angle(theta),
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.theta,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Format("box has a non-finite field".into()));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return Err(Error::Format(format!(
                "box size must be positive, got ({}, {}, {})",
                self.dx, self.dy, self.dz
            )));
        }
        Ok(())
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let hl = self.dx / 2.0;
        let hw = self.dy / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.cx + u * c - v * s, self.cy + u * s + v * c])
    }

    pub fn bev_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Maps a world point into box-local coordinates.
    pub fn to_local(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        let tx = x - self.cx;
        let ty = y - self.cy;
        [tx * c + ty * s, -tx * s + ty * c, z - self.cz]
    }

    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let [u, v, _] = self.to_local(x, y, self.cz);
        u.abs() <= self.dx / 2.0 && v.abs() <= self.dy / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class_name: String,
    pub bbox: Box3D,
}

impl GtObject {
    pub fn car(bbox: Box3D) -> Self {
        GtObject {
            class_name: "Car".to_string(),
            bbox,
        }
    }
}
