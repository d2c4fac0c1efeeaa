use crate::error::{Error, Result};
use crate::frames::{normalize_angle, Box3D};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// One anchor per (row, col, slot); anchor `(i * Wo + j) * A + a` sits on
/// head cell (i, j) in slot `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub anchors: Vec<Box3D>,
    pub rows: usize,
    pub cols: usize,
    pub per_cell: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// (row, col, slot) of an anchor index.
    pub fn locate(&self, idx: usize) -> (usize, usize, usize) {
        let cell = idx / self.per_cell;
        (cell / self.cols, cell % self.cols, idx % self.per_cell)
    }
}

pub fn gen_anchors(config: &ModelConfig) -> Result<AnchorGrid> {
    config.validate()?;
    let (rows, cols) = config.output_dims();
    let cell = config.grid.pillar_size * config.output_stride() as f64;
    let spec = &config.anchor;
    let mut anchors = Vec::with_capacity(rows * cols * spec.yaws.len());
    for i in 0..rows {
        let y = config.grid.y_min + (i as f64 + 0.5) * cell;
        for j in 0..cols {
            let x = config.grid.x_min + (j as f64 + 0.5) * cell;
            for &yaw in &spec.yaws {
                anchors.push(Box3D::new([x, y, spec.z_center], spec.size, yaw));
            }
        }
    }
    Ok(AnchorGrid {
        anchors,
        rows,
        cols,
        per_cell: spec.yaws.len(),
    })
}

/// Applies residuals (dx, dy, dz, dl, dw, dh, dtheta) to an anchor.
pub fn decode_box(anchor: &Box3D, d: &[f64; 7]) -> Result<Box3D> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite box residual {d:?}")));
    }
    let diag = anchor.dx.hypot(anchor.dy);
    let b = Box3D::new(
        [
            anchor.cx + d[0] * diag,
            anchor.cy + d[1] * diag,
            anchor.cz + d[2] * anchor.dz,
        ],
        [
            anchor.dx * d[3].exp(),
            anchor.dy * d[4].exp(),
            anchor.dz * d[5].exp(),
        ],
        anchor.theta + d[6],
    );
    b.validate()?;
    Ok(b)
}

/// Exact inverse of [`decode_box`] for residual yaws in (-pi, pi].
pub fn encode_box(anchor: &Box3D, b: &Box3D) -> [f64; 7] {
    let diag = anchor.dx.hypot(anchor.dy);
    [
        (b.cx - anchor.cx) / diag,
        (b.cy - anchor.cy) / diag,
        (b.cz - anchor.cz) / anchor.dz,
        (b.dx / anchor.dx).ln(),
        (b.dy / anchor.dy).ln(),
        (b.dz / anchor.dz).ln(),
        normalize_angle(b.theta - anchor.theta),
    ]
}

/// Residuals of anchor `idx` from a `[A*7, Ho, Wo]` box map.
pub(crate) fn residuals_at(grid: &AnchorGrid, box_map: &Tensor, idx: usize) -> [f64; 7] {
    let (i, j, a) = grid.locate(idx);
    let plane = grid.rows * grid.cols;
    let data = box_map.data();
    std::array::from_fn(|d| data[(a * 7 + d) * plane + i * grid.cols + j] as f64)
}

pub fn decode_boxes(grid: &AnchorGrid, box_map: &Tensor) -> Result<Vec<Box3D>> {
    if box_map.dims() != [grid.per_cell * 7, grid.rows, grid.cols] {
        return Err(Error::Shape(format!(
            "box map {:?} does not match anchor grid {}x{}x{}",
            box_map.dims(),
            grid.per_cell,
            grid.rows,
            grid.cols
        )));
    }
    (0..grid.len())
        .map(|idx| decode_box(&grid.anchors[idx], &residuals_at(grid, box_map, idx)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn default_grid_counts_and_origin() {
        let c = ModelConfig::default();
        let g = gen_anchors(&c).unwrap();
        assert_eq!(g.len(), 248 * 216 * 2);
        let a = g.anchors[0];
        assert!((a.cx - 0.16).abs() < 1e-9 && (a.cy + 39.52).abs() < 1e-9);
        assert_eq!((a.dx, a.dy, a.dz, a.cz), (3.9, 1.6, 1.56, -1.0));
        assert_eq!(g.anchors[1].theta, PI / 2.0);
        assert_eq!(g, gen_anchors(&c).unwrap());
    }

    #[test]
    fn zero_residual_is_anchor() {
        let a = Box3D::new([5.0, -2.0, -1.0], [3.9, 1.6, 1.56], 0.3);
        assert_eq!(decode_box(&a, &[0.0; 7]).unwrap(), a);
    }

    #[test]
    fn scalar_offset() {
        let a = Box3D::new([0.0, 0.0, -1.0], [3.9, 1.6, 1.56], 0.0);
        let b = decode_box(&a, &[0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((b.cx - 0.42154).abs() < 1e-5);
        assert!(decode_box(&a, &[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn map_layout() {
        let mut c = ModelConfig::desk();
        c.grid.x_max = 2.56;
        c.grid.y_min = -1.28;
        c.grid.y_max = 1.28;
        let g = gen_anchors(&c).unwrap();
        let (h, w) = (g.rows, g.cols);
        let mut m = Tensor::zeros(&[14, h, w]);
        // slot 1, cell (1, 0): dx residual
        m.data_mut()[7 * h * w + w] = 0.5;
        let boxes = decode_boxes(&g, &m).unwrap();
        let idx = w * 2 + 1;
        assert!((boxes[idx].cx - g.anchors[idx].cx - 0.5 * 3.9f64.hypot(1.6)).abs() < 1e-9);
        assert_eq!(boxes[idx - 1], g.anchors[idx - 1]);
        assert!(decode_boxes(&g, &Tensor::zeros(&[7, h, w])).is_err());
    }

    proptest! {
        #[test]
        fn encode_inverts_decode(
            d in prop::array::uniform7(-1.0f64..1.0),
            yaw in -3.0f64..3.0,
            dt in -3.1f64..3.1,
        ) {
            let a = Box3D::new([10.0, -4.0, -1.0], [3.9, 1.6, 1.56], yaw);
            let mut d = d;
            d[6] = dt;
            let b = decode_box(&a, &d).unwrap();
            let e = encode_box(&a, &b);
            for k in 0..7 {
                prop_assert!((e[k] - d[k]).abs() < 1e-5, "{k}: {} vs {}", e[k], d[k]);
            }
            let b2 = decode_box(&a, &e).unwrap();
            for (p, q) in b.to_array().iter().zip(b2.to_array()) {
                prop_assert!((p - q).abs() < 1e-5);
            }
        }
    }
}
