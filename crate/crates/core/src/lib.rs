//! Pillar-based LiDAR car detection split the way an edge deployment splits it:
//! point-cloud encoding on the host CPU, a quantized int8 backbone and head on
//! an accelerator (simulated here in integer arithmetic), and box decoding plus
//! rotated NMS back on the host.
//!
//! Modules, in data-flow order:
//!
//! - [`frames`]: point clouds, labels, binary/text I/O, synthetic scenes, augmentation
//! - [`pillars`]: pillarization, point decoration, the pillar feature net, scatter
//! - [`tensor`]: float and int8 conv / transposed conv, batch norm, quantization
//! - [`model`]: network config, weights, float forward pass
//! - [`quant`]: calibration and the `.ppq` compiled model with its int8 executor
//! - [`post`]: anchors, box codec, rotated BEV IoU, NMS, detection records
//! - [`eval`]: matching, precision/recall/F1, average precision
//! - [`pipeline`]: sequential and three-stage pipelined runtimes
//! - [`cli`]: the `pillar-edge` command line
//!
//! ```no_run
//! use pillar_edge::frames::{gen_synthetic_scene, SynthParams};
//! use pillar_edge::model::{init_random_weights, ModelConfig};
//! use pillar_edge::pipeline::DetectorStages;
//! use pillar_edge::post::PostConfig;
//!
//! let cfg = ModelConfig::tiny();
//! let store = init_random_weights(&cfg, 0)?;
//! let detector = DetectorStages::float(&cfg, &store, PostConfig::default())?;
//! let (cloud, _) = gen_synthetic_scene(&SynthParams::default())?;
//! for d in detector.detect(cloud)? {
//!     println!("{}", d.to_json_line());
//! }
//! # Ok::<(), pillar_edge::Error>(())
//! ```

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod frames;
pub mod model;
pub mod pillars;
pub mod pipeline;
pub mod post;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
