//! Rotated bird's-eye-view IoU and greedy NMS on hand-made boxes.

use std::f64::consts::FRAC_PI_2;

use pillar_edge::frames::Box3D;
use pillar_edge::post::{bev_iou, nms, Detection};

fn car(x: f64, y: f64, yaw: f64) -> Box3D {
    Box3D::new([x, y, 0.78], [3.9, 1.6, 1.56], yaw)
}

fn main() {
    let a = car(10.0, 0.0, 0.0);
    for (name, b) in [
        ("same box", car(10.0, 0.0, 0.0)),
        ("shifted 1 m", car(11.0, 0.0, 0.0)),
        ("rotated 90 deg", car(10.0, 0.0, FRAC_PI_2)),
        ("rotated 180 deg", car(10.0, 0.0, std::f64::consts::PI)),
        ("far away", car(30.0, 5.0, 0.3)),
    ] {
        println!("{name:>16}: IoU {:.4}", bev_iou(&a, &b));
    }

    let dets: Vec<Detection> = [(0.9, car(10.0, 0.0, 0.0)), (0.8, car(10.4, 0.1, 0.05)), (0.7, car(20.0, 3.0, 1.0)), (0.6, car(11.5, 0.0, 0.0))]
        .into_iter()
        .map(|(score, bbox)| Detection { frame_id: 0, class_name: "Car".into(), score, bbox })
        .collect();
    let keep = nms(&dets, 0.5);
    println!("NMS @0.5 keeps {keep:?}");
    for &i in &keep {
        println!("{}", dets[i].to_json_line());
    }
}
