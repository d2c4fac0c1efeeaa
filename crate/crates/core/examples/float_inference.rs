//! Float reference detector on one synthetic frame.

use pillar_edge::frames::{gen_synthetic_scene, SynthParams};
use pillar_edge::model::{init_random_weights, ModelConfig};
use pillar_edge::pipeline::DetectorStages;
use pillar_edge::post::PostConfig;

fn main() -> pillar_edge::Result<()> {
    let cfg = ModelConfig::tiny();
    let store = init_random_weights(&cfg, 7)?;
    let detector = DetectorStages::float(&cfg, &store, PostConfig::default())?;
    let (out_h, out_w) = cfg.output_dims();
    println!("{} anchors on a {out_h}x{out_w} head map", detector.anchors().len());

    let params = SynthParams { n_cars: 3, range_x: (2.0, 18.0), range_y: (-8.0, 8.0), seed: 11, ..Default::default() };
    let (cloud, labels) = gen_synthetic_scene(&params)?;
    let dets = detector.detect(cloud)?;
    // random weights: the boxes are not meaningful, only the plumbing is
    println!("{} ground-truth cars, {} detections after NMS", labels.len(), dets.len());
    for d in dets.iter().take(5) {
        println!("{}", d.to_json_line());
    }
    Ok(())
}
