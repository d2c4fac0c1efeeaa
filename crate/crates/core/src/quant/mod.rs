//! Post-training int8 quantization of the offloaded subgraph: activation-range
//! calibration on pseudo-images, compilation to a self-contained `.ppq`
//! artifact, and an integer executor standing in for the accelerator.

mod calibrate;
mod compiled;

pub use calibrate::{calibrate, calibrate_with, CalibMode, CalibStats, MAX_ABS_FLOOR};
pub use compiled::{
    accel_execute, compile, load_compiled, save_compiled, CompiledLayer, CompiledModel,
    CONCAT_SITE_ID, WEIGHT_SCALE_FLOOR,
};
