//! Calibrate, compile to int8, save/load the artifact and compare against float.

use pillar_edge::frames::{gen_synthetic_scene, SynthParams};
use pillar_edge::model::{backbone_head_forward, fold_store, init_random_weights, ModelConfig};
use pillar_edge::pillars::{encode, PseudoImage};
use pillar_edge::quant::{accel_execute, calibrate_with, compile, load_compiled, save_compiled, CalibMode};

fn main() -> pillar_edge::Result<()> {
    let cfg = ModelConfig::tiny();
    let store = init_random_weights(&cfg, 5)?;
    let scene = |seed| {
        let params = SynthParams { n_cars: 3, range_x: (2.0, 18.0), range_y: (-8.0, 8.0), seed, ..Default::default() };
        gen_synthetic_scene(&params).and_then(|(c, _)| encode(&c, &cfg.grid, &store))
    };
    let calib: Vec<PseudoImage> = (100..116).map(scene).collect::<pillar_edge::Result<_>>()?;

    for mode in [CalibMode::MaxAbs, CalibMode::Percentile(99.99)] {
        let stats = calibrate_with(&store, &cfg, &calib, mode)?;
        let model = compile(&store, &cfg, &stats)?;

        let dir = tempfile::tempdir().expect("temp dir");
        let path = dir.path().join("model.ppq");
        save_compiled(&model, &path)?;
        let loaded = load_compiled(&path)?;
        loaded.verify_config(&cfg)?;

        let folded = fold_store(&store, &cfg)?;
        let (mut err, mut n, mut peak) = (0.0f64, 0usize, 0.0f32);
        for seed in 0..5 {
            let pseudo = scene(seed)?;
            let f = backbone_head_forward(&pseudo, &folded, &cfg)?;
            let q = accel_execute(&loaded, &pseudo)?;
            for (a, b) in f.cls_map.data().iter().zip(q.cls_map.data()) {
                err += (a - b).abs() as f64;
                n += 1;
                peak = peak.max(a.abs());
            }
        }
        println!(
            "{mode:?}: {} layers, {} bytes, cls logit MAE {:.5} (max |logit| {peak:.3})",
            loaded.layers.len(),
            std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
            err / n as f64
        );
    }
    Ok(())
}
