//! Step through the pre-stage: pillarize, decorate, pillar feature net, scatter.

use pillar_edge::frames::{gen_synthetic_scene, SynthParams};
use pillar_edge::model::{init_random_weights, ModelConfig};
use pillar_edge::pillars::{augment_features, encode, pfn_forward, pillarize, scatter};

fn main() -> pillar_edge::Result<()> {
    let cfg = ModelConfig::desk();
    let grid = &cfg.grid;
    let store = init_random_weights(&cfg, 1)?;
    let (cloud, _) = gen_synthetic_scene(&SynthParams { seed: 3, ..Default::default() })?;

    let batch = pillarize(&cloud, grid)?;
    let kept: usize = batch.n_points.iter().sum();
    println!(
        "grid {}x{}, {} points -> {} occupied pillars, {kept} points kept (Npp {})",
        grid.width(),
        grid.height(),
        cloud.len(),
        batch.n_occupied(),
        batch.max_points_per_pillar
    );

    let batch = augment_features(batch, grid);
    let busiest = (0..batch.n_occupied()).max_by_key(|&p| batch.n_points[p]).unwrap_or(0);
    println!("busiest pillar {:?} holds {} points; first decorated point:", batch.indices[busiest], batch.n_points[busiest]);
    println!("  [x y z r xc yc zc xp yp] = {:?}", batch.point(busiest, 0));

    let (features, indices) = pfn_forward(&batch, &store)?;
    println!("pfn output {:?}", features.dims());
    let pseudo = scatter(&features, &indices, grid)?;
    let (c, h, w) = pseudo.dims();
    let nonzero = pseudo.data.data().iter().filter(|v| **v != 0.0).count();
    println!("pseudo-image {c}x{h}x{w}, {nonzero} non-zero values");

    let again = encode(&cloud, grid, &store)?;
    println!("encode() matches the step-by-step path: {}", again == pseudo);
    Ok(())
}
