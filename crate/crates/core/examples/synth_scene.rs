//! Generate a labeled synthetic scene, write it in the on-disk formats, read it
//! back and apply the two augmentations.

use std::f64::consts::FRAC_PI_6;

use pillar_edge::frames::{
    flip_y, format_labels, gen_synthetic_scene, read_frame, read_labels, rotate_z, write_frame,
    write_labels, SynthParams,
};

fn main() -> pillar_edge::Result<()> {
    let params = SynthParams { n_cars: 4, seed: 42, ..Default::default() };
    let (cloud, labels) = gen_synthetic_scene(&params)?;
    println!("{} points, {} cars", cloud.len(), labels.len());
    print!("{}", format_labels(&labels));

    let dir = tempfile::tempdir().expect("temp dir");
    let bin = dir.path().join("000042.bin");
    let txt = dir.path().join("000042.txt");
    write_frame(&bin, &cloud)?;
    write_labels(&txt, &labels)?;
    let back = read_frame(&bin)?;
    let back_labels = read_labels(&txt)?;
    println!(
        "round trip: frame_id {} ({} points, {} bytes), {} labels",
        back.frame_id,
        back.len(),
        std::fs::metadata(&bin).map(|m| m.len()).unwrap_or(0),
        back_labels.len()
    );

    let (flipped, flipped_labels) = flip_y(&cloud, &labels);
    let (rotated, rotated_labels) = rotate_z(&cloud, &labels, FRAC_PI_6);
    for (name, c, l) in [("flip_y", &flipped, &flipped_labels), ("rotate_z(pi/6)", &rotated, &rotated_labels)] {
        let inside = c
            .points
            .iter()
            .filter(|p| l.iter().any(|g| g.bbox.contains_bev(p.x as f64, p.y as f64)))
            .count();
        println!("{name}: first car at ({:.2}, {:.2}) yaw {:.3}, {inside} points on cars", l[0].bbox.cx, l[0].bbox.cy, l[0].bbox.theta);
    }
    Ok(())
}
