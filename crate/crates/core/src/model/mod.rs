//! The offloaded subgraph: 2D backbone, upsampling necks and detection head,
//! plus weight storage and the layer plan shared with the quantizer.

mod config;
mod forward;
mod weights;

pub use config::{AnchorSpec, BlockSpec, InputRef, LayerDef, LayerKind, ModelConfig, BN_EPS};
pub use forward::{backbone_head_forward, forward_traced, HeadOutput, INPUT_SITE, CONCAT_SITE};
pub use weights::{fold_store, init_random_weights, load_weights, save_weights, WeightStore};
