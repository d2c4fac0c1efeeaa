//! Detection metrics: greedy IoU matching, precision/recall/F1 and
//! all-point average precision, plus a perturbed-ground-truth detector used
//! to self-check the harness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Box3D, GtObject};
use crate::post::{bev_iou, Detection};

pub type GtByFrame = BTreeMap<u64, Vec<GtObject>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thr: f64,
    pub conf_thr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thr: 0.3,
            conf_thr: 0.3,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("iou", self.iou_thr), ("conf", self.conf_thr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} threshold {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fneg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
}

impl EvalReport {
    /// One `metric=value` line per metric.
    pub fn to_text(&self) -> String {
        format!(
            "tp={}\nfp={}\nfn={}\nprecision={:.6}\nrecall={:.6}\nf1={:.6}\nap={:.6}\n",
            self.tp, self.fp, self.fneg, self.precision, self.recall, self.f1, self.ap
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fneg: usize,
    /// (detection index, gt index) for every true positive.
    pub pairs: Vec<(usize, usize)>,
    /// Per-detection TP flag, indexed like the input.
    pub is_tp: Vec<bool>,
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy single-frame matching in descending score order.
pub fn match_detections(dets: &[Detection], gts: &[GtObject], iou_thr: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut res = MatchResult {
        is_tp: vec![false; dets.len()],
        ..Default::default()
    };
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = bev_iou(&dets[d].bbox, &gt.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) if iou >= iou_thr => {
                taken[g] = true;
                res.tp += 1;
                res.pairs.push((d, g));
                res.is_tp[d] = true;
            }
            _ => res.fp += 1,
        }
    }
    res.fneg = gts.len() - res.tp;
    res
}

pub fn prf1(tp: usize, fp: usize, fneg: usize) -> (f64, f64, f64) {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fneg);
    (p, r, f1_from(p, r))
}

pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn group_by_frame<'a>(dets: &'a [Detection], gts: &GtByFrame) -> Result<BTreeMap<u64, Vec<&'a Detection>>> {
    let mut by: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        if !gts.contains_key(&d.frame_id) {
            return Err(Error::Eval(format!("frame {} has detections but no labels", d.frame_id)));
        }
        by.entry(d.frame_id).or_default().push(d);
    }
    Ok(by)
}

/// All-point interpolated AP over every frame. No confidence threshold is
/// applied; frames are matched independently and pooled by score.
pub fn average_precision(dets: &[Detection], gts: &GtByFrame, iou_thr: f64) -> Result<f64> {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::Eval("average precision is undefined without ground truth".into()));
    }
    let by = group_by_frame(dets, gts)?;
    // (score, global input position, tp)
    let mut scored: Vec<(f64, usize, bool)> = Vec::with_capacity(dets.len());
    let mut pos = 0;
    for (fid, fdets) in &by {
        let owned: Vec<Detection> = fdets.iter().map(|d| (*d).clone()).collect();
        let m = match_detections(&owned, &gts[fid], iou_thr);
        for (k, d) in owned.iter().enumerate() {
            scored.push((d.score, pos, m.is_tp[k]));
            pos += 1;
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, _, hit) in &scored {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Ok(ap.clamp(0.0, 1.0))
}

/// Operating-point metrics at `conf_thr` plus AP over the unfiltered set.
pub fn evaluate(dets: &[Detection], gts: &GtByFrame, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let by = group_by_frame(dets, gts)?;
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (fid, frame_gts) in gts {
        let kept: Vec<Detection> = by
            .get(fid)
            .map(|v| v.iter().filter(|d| d.score >= cfg.conf_thr).map(|d| (*d).clone()).collect())
            .unwrap_or_default();
        let m = match_detections(&kept, frame_gts, cfg.iou_thr);
        tp += m.tp;
        fp += m.fp;
        fneg += m.fneg;
    }
    let (precision, recall, f1) = prf1(tp, fp, fneg);
    let ap = average_precision(dets, gts, cfg.iou_thr)?;
    Ok(EvalReport {
        tp,
        fp,
        fneg,
        precision,
        recall,
        f1,
        ap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbParams {
    /// Probability that a ground-truth object is missed.
    pub drop_rate: f64,
    /// Probability that a frame gets one false positive.
    pub fp_rate: f64,
    /// Std-dev of center (m) and yaw (rad) jitter on kept objects.
    pub jitter_sigma: f64,
    /// Region in which false positives are placed.
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            drop_rate: 0.0,
            fp_rate: 0.0,
            jitter_sigma: 0.0,
            range_x: (2.0, 44.0),
            range_y: (-20.0, 20.0),
            seed: 0,
        }
    }
}

const FP_SIZE: [f64; 3] = [3.9, 1.6, 1.56];
const FP_TRIES: usize = 100;

/// Synthetic detector derived from ground truth.
pub fn perturb_gt_to_dets(gts: &GtByFrame, params: &PerturbParams) -> Result<Vec<Detection>> {
    for (name, v) in [("drop_rate", params.drop_rate), ("fp_rate", params.fp_rate)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
        }
    }
    let jitter = Normal::new(0.0, params.jitter_sigma)
        .map_err(|e| Error::InvalidArgument(format!("jitter_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::new();
    for (&fid, frame_gts) in gts {
        for gt in frame_gts {
            if rng.random::<f64>() < params.drop_rate {
                continue;
            }
            let b = gt.bbox;
            let bbox = Box3D::new(
                [
                    b.cx + jitter.sample(&mut rng),
                    b.cy + jitter.sample(&mut rng),
                    b.cz + jitter.sample(&mut rng),
                ],
                [b.dx, b.dy, b.dz],
                b.theta + jitter.sample(&mut rng),
            );
            out.push(Detection {
                frame_id: fid,
                class_name: gt.class_name.clone(),
                score: rng.random_range(0.5..=1.0),
                bbox,
            });
        }
        if rng.random::<f64>() < params.fp_rate {
            let score = rng.random_range(0.3..=0.7);
            let bbox = place_in_empty_space(&mut rng, frame_gts, params);
            out.push(Detection {
                frame_id: fid,
                class_name: "Car".into(),
                score,
                bbox,
            });
        }
    }
    Ok(out)
}

fn place_in_empty_space(rng: &mut ChaCha8Rng, gts: &[GtObject], p: &PerturbParams) -> Box3D {
    for _ in 0..FP_TRIES {
        let b = Box3D::new(
            [
                rng.random_range(p.range_x.0..p.range_x.1),
                rng.random_range(p.range_y.0..p.range_y.1),
                FP_SIZE[2] / 2.0,
            ],
            FP_SIZE,
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if gts.iter().all(|g| bev_iou(&g.bbox, &b) == 0.0) {
            return b;
        }
    }
    // region is crowded; put it past the far edge
    Box3D::new([p.range_x.1 + 10.0, 0.0, FP_SIZE[2] / 2.0], FP_SIZE, 0.0)
}
