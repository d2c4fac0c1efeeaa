//! Score a synthetic detector against ground truth and sweep its miss rate.

use pillar_edge::eval::{evaluate, perturb_gt_to_dets, EvalConfig, GtByFrame, PerturbParams};
use pillar_edge::frames::{gen_synthetic_scene, SynthParams};

fn main() -> pillar_edge::Result<()> {
    let mut gts = GtByFrame::new();
    for seed in 0..100u64 {
        let (_, labels) = gen_synthetic_scene(&SynthParams { seed, ..Default::default() })?;
        gts.insert(seed, labels);
    }
    let n_gt: usize = gts.values().map(Vec::len).sum();
    println!("{} frames, {n_gt} cars", gts.len());

    let cfg = EvalConfig::default();
    for drop_rate in [0.0, 0.05, 0.13, 0.3] {
        let params = PerturbParams { drop_rate, fp_rate: 0.2, jitter_sigma: 0.05, seed: 1, ..Default::default() };
        let dets = perturb_gt_to_dets(&gts, &params)?;
        let r = evaluate(&dets, &gts, &cfg)?;
        println!("drop {drop_rate:.2}: {}", r.to_text().replace('\n', " "));
    }
    Ok(())
}
