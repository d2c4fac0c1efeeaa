use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadOutput;

use super::anchors::{decode_box, residuals_at, AnchorGrid};
use super::iou::Footprint;
use super::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostConfig {
    /// Minimum sigmoid score kept.
    pub conf_thr: f64,
    /// Boxes overlapping a kept box at or above this IoU are dropped.
    pub nms_iou: f64,
    /// Candidates kept after score filtering, before NMS.
    pub top_k: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig {
            conf_thr: 0.3,
            nms_iou: 0.5,
            top_k: 1000,
        }
    }
}

impl PostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf_thr) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must lie in [0, 1] (conf {}, nms {})",
                self.conf_thr, self.nms_iou
            )));
        }
        Ok(())
    }
}

/// Spatial hash cell edge for NMS, meters.
const NMS_CELL: f64 = 2.0;
/// Boxes whose bounds cross this many cells per axis skip the hash.
const NMS_MAX_SPAN: i64 = 16;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(anchor index, score)` for every anchor scoring at least `thr`, ordered
/// by descending score with ties broken by anchor index.
pub fn score_filter(grid: &AnchorGrid, head: &HeadOutput, thr: f64) -> Result<Vec<(usize, f64)>> {
    let dims = head.cls_map.dims();
    if dims != [grid.per_cell, grid.rows, grid.cols] {
        return Err(Error::Shape(format!(
            "class map {dims:?} does not match anchor grid {}x{}x{}",
            grid.per_cell, grid.rows, grid.cols
        )));
    }
    let plane = grid.rows * grid.cols;
    let data = head.cls_map.data();
    let mut out = Vec::new();
    for idx in 0..grid.len() {
        let (i, j, a) = grid.locate(idx);
        let logit = data[a * plane + i * grid.cols + j] as f64;
        if logit.is_nan() {
            return Err(Error::Format(format!("NaN logit at anchor {idx}")));
        }
        let s = sigmoid(logit);
        if s >= thr {
            out.push((idx, s));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}

/// Greedy NMS. Returns kept indices into `dets` in descending score order;
/// equal scores keep their input order.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let fps: Vec<Footprint> = dets.iter().map(|d| Footprint::of(&d.bbox)).collect();
    // Each kept box is registered in every grid cell its bounding box touches;
    // a candidate is only compared with boxes sharing one of its cells. Boxes
    // spanning too many cells go to `wide` and are compared with everything.
    let span = |f: &Footprint| {
        let (lo, hi) = f.bounds();
        let c = |v: f64| (v / NMS_CELL).floor().clamp(-1e12, 1e12) as i64;
        ((c(lo[0]), c(hi[0])), (c(lo[1]), c(hi[1])))
    };
    let is_wide = |((x0, x1), (y0, y1)): ((i64, i64), (i64, i64))| x1 - x0 >= NMS_MAX_SPAN || y1 - y0 >= NMS_MAX_SPAN;
    let cells = |((x0, x1), (y0, y1)): ((i64, i64), (i64, i64))| (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| (x, y)));
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut wide: Vec<usize> = Vec::new();
    let mut seen = vec![usize::MAX; dets.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let sp = span(&fps[i]);
        let suppressed = if is_wide(sp) {
            kept.iter().any(|&k| fps[k].iou(&fps[i]) >= iou_thr)
        } else {
            wide.iter().any(|&k| fps[k].iou(&fps[i]) >= iou_thr)
                || cells(sp).any(|cell| {
                    grid.get(&cell).into_iter().flatten().any(|&k| {
                        if seen[k] == i {
                            return false;
                        }
                        seen[k] = i;
                        fps[k].iou(&fps[i]) >= iou_thr
                    })
                })
        };
        if !suppressed {
            kept.push(i);
            if is_wide(sp) {
                wide.push(i);
            } else {
                for cell in cells(sp) {
                    grid.entry(cell).or_default().push(i);
                }
            }
        }
    }
    kept
}

/// Head maps to final detections for one frame.
pub fn postprocess(
    grid: &AnchorGrid,
    head: &HeadOutput,
    cfg: &PostConfig,
    frame_id: u64,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let box_dims = head.box_map.dims();
    if box_dims != [grid.per_cell * 7, grid.rows, grid.cols] {
        return Err(Error::Shape(format!("box map {box_dims:?} does not match anchor grid")));
    }
    let mut cands = score_filter(grid, head, cfg.conf_thr)?;
    cands.truncate(cfg.top_k);
    let dets = cands
        .into_iter()
        .map(|(idx, score)| {
            let bbox = decode_box(&grid.anchors[idx], &residuals_at(grid, &head.box_map, idx))?;
            Ok(Detection {
                frame_id,
                class_name: "Car".into(),
                score,
                bbox,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nms(&dets, cfg.nms_iou).into_iter().map(|k| dets[k].clone()).collect())
}
