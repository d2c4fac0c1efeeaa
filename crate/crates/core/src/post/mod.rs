//! CPU post-processing: anchors, box residual decoding, score filtering,
//! rotated bird's-eye-view IoU and greedy NMS.

mod anchors;
mod iou;
mod nms;

pub use anchors::{decode_box, decode_boxes, encode_box, gen_anchors, AnchorGrid};
pub use iou::{bev_iou, polygon_area, clip_convex};
pub use nms::{nms, postprocess, score_filter, sigmoid, PostConfig};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Box3D;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u64,
    pub class_name: String,
    /// Confidence in [0, 1].
    pub score: f64,
    pub bbox: Box3D,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    frame_id: u64,
    class: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 7],
}

impl Detection {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&DetectionLine {
            frame_id: self.frame_id,
            class: self.class_name.clone(),
            score: self.score,
            bbox: self.bbox.to_array(),
        })
        .expect("detection serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let d: DetectionLine =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("detection line: {e}")))?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Format(format!("detection score {} outside [0, 1]", d.score)));
        }
        let bbox = Box3D::from_array(d.bbox);
        bbox.validate()?;
        Ok(Detection {
            frame_id: d.frame_id,
            class_name: d.class,
            score: d.score,
            bbox,
        })
    }
}

/// Writes detections as JSON Lines.
pub fn write_detections(mut w: impl Write, dets: &[Detection]) -> Result<()> {
    for d in dets {
        writeln!(w, "{}", d.to_json_line()).map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<detections>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            Detection::from_json_line(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
