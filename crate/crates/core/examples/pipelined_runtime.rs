//! Sequential versus pipelined execution of the int8 detector with emulated
//! stage latencies.

use pillar_edge::frames::{gen_synthetic_scene, PointCloud, SynthParams};
use pillar_edge::model::{init_random_weights, ModelConfig};
use pillar_edge::pillars::{encode, PseudoImage};
use pillar_edge::pipeline::{bench_report, run_pipelined, run_sequential, DetectorStages, StageDelays, StagePlan};
use pillar_edge::post::PostConfig;
use pillar_edge::quant::{calibrate, compile};

fn main() -> pillar_edge::Result<()> {
    let cfg = ModelConfig::tiny();
    let store = init_random_weights(&cfg, 5)?;
    let scene = |seed: u64| -> pillar_edge::Result<PointCloud> {
        let params = SynthParams { n_cars: 3, range_x: (2.0, 18.0), range_y: (-8.0, 8.0), seed, ..Default::default() };
        let (mut c, _) = gen_synthetic_scene(&params)?;
        c.frame_id = seed;
        Ok(c)
    };
    let calib: Vec<PseudoImage> = (500..508)
        .map(|s| scene(s).and_then(|c| encode(&c, &cfg.grid, &store)))
        .collect::<pillar_edge::Result<_>>()?;
    let model = compile(&store, &cfg, &calibrate(&store, &cfg, &calib)?)?;
    let stages = DetectorStages::compiled(&cfg, &store, model, PostConfig::default())?;
    let frames: Vec<PointCloud> = (0..60).map(scene).collect::<pillar_edge::Result<_>>()?;

    let delays = StageDelays::from_millis(10, 30, 10);
    let (seq_out, seq) = run_sequential(&stages, frames.clone(), delays)?;
    println!("{}", bench_report("sequential", &seq, 5.0).to_text());
    for (queue_depth, in_flight_max) in [(1, 1), (2, 4)] {
        let plan = StagePlan { queue_depth, in_flight_max, delays };
        let (out, st) = run_pipelined(&stages, frames.clone(), &plan)?;
        let label = format!("pipelined q={queue_depth} window={in_flight_max}");
        println!("{}", bench_report(&label, &st, 5.0).to_text());
        println!("same detections as sequential: {}", out == seq_out);
    }
    Ok(())
}
