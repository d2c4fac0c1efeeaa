use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pillars::GridSpec;
use crate::tensor::ConvSpec;

/// Batch-norm epsilon used by freshly initialized stores.
pub const BN_EPS: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub stride: usize,
    pub n_layers: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// (length, width, height) in meters.
    pub size: [f64; 3],
    pub z_center: f64,
    /// One yaw per anchor slot in a cell.
    pub yaws: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            size: [3.9, 1.6, 1.56],
            z_center: -1.0,
            yaws: vec![0.0, FRAC_PI_2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub blocks: Vec<BlockSpec>,
    pub up_strides: Vec<usize>,
    pub up_channels: usize,
    pub n_anchors_per_cell: usize,
    pub n_classes: usize,
    pub box_code_size: usize,
    pub anchor: AnchorSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let block = |stride, n_layers, channels| BlockSpec {
            stride,
            n_layers,
            channels,
        };
        ModelConfig {
            grid: GridSpec::default(),
            blocks: vec![block(2, 4, 64), block(2, 6, 128), block(2, 6, 256)],
            up_strides: vec![1, 2, 4],
            up_channels: 128,
            n_anchors_per_cell: 2,
            n_classes: 1,
            box_code_size: 7,
            anchor: AnchorSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution + batch norm + ReLU.
    Conv,
    /// Transposed-convolution upsampling + batch norm + ReLU.
    TConv,
    /// 1x1 head convolution, raw output.
    Head,
}

/// Where a layer reads its input. Site 0 is the pseudo-image; layer `k` writes site `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputRef {
    Site(usize),
    /// Channel concatenation of every upsampling layer's output, in plan order.
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    pub spec: ConvSpec,
    pub input: InputRef,
}

impl LayerDef {
    pub fn has_batch_norm(&self) -> bool {
        self.kind != LayerKind::Head
    }

    pub fn has_relu(&self) -> bool {
        self.kind != LayerKind::Head
    }
}

impl ModelConfig {
    /// A reduced configuration that runs in well under a second per frame on
    /// one CPU core; used by the examples and the heavier tests.
    pub fn desk() -> Self {
        let block = |stride, n_layers, channels| BlockSpec {
            stride,
            n_layers,
            channels,
        };
        ModelConfig {
            grid: GridSpec {
                x_min: 0.0,
                x_max: 46.08,
                y_min: -23.04,
                y_max: 23.04,
                z_min: -1.0,
                z_max: 3.0,
                pillar_size: 0.32,
                max_pillars: 6000,
                max_points_per_pillar: 16,
                in_features: 9,
                out_channels: 32,
            },
            blocks: vec![block(2, 2, 32), block(2, 3, 64), block(2, 3, 128)],
            up_strides: vec![1, 2, 4],
            up_channels: 64,
            n_anchors_per_cell: 2,
            n_classes: 1,
            box_code_size: 7,
            anchor: AnchorSpec {
                z_center: 0.78,
                ..AnchorSpec::default()
            },
        }
    }

    /// Smallest useful configuration: a 20 m square, 64x64 pillars and one
    /// conv per block. Meant for runtime tests where model cost must stay in
    /// the low milliseconds.
    pub fn tiny() -> Self {
        let block = |stride, channels| BlockSpec {
            stride,
            n_layers: 1,
            channels,
        };
        let desk = Self::desk();
        ModelConfig {
            grid: GridSpec {
                x_min: 0.0,
                x_max: 20.48,
                y_min: -10.24,
                y_max: 10.24,
                max_pillars: 2000,
                max_points_per_pillar: 8,
                out_channels: 16,
                ..desk.grid
            },
            blocks: vec![block(2, 16), block(2, 32), block(2, 64)],
            up_strides: vec![1, 2, 4],
            up_channels: 16,
            ..desk
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("model config: {m}")));
        self.grid.validate()?;
        if self.blocks.is_empty() || self.blocks.len() != self.up_strides.len() {
            return bad("need one up stride per block".into());
        }
        if self.blocks.iter().any(|b| b.stride == 0 || b.n_layers == 0 || b.channels == 0)
            || self.up_strides.contains(&0)
        {
            return bad("strides, layer counts and channels must be >= 1".into());
        }
        if self.up_channels == 0 || self.n_anchors_per_cell == 0 {
            return bad("up_channels and anchors must be >= 1".into());
        }
        if self.n_classes != 1 {
            return bad("only single-class heads are supported".into());
        }
        if self.box_code_size != 7 {
            return bad("box_code_size must be 7".into());
        }
        if self.anchor.yaws.len() != self.n_anchors_per_cell {
            return bad(format!(
                "{} anchor yaws for {} anchors per cell",
                self.anchor.yaws.len(),
                self.n_anchors_per_cell
            ));
        }
        if self.anchor.size.iter().any(|v| !(*v > 0.0)) {
            return bad("anchor size must be positive".into());
        }
        let total: usize = self.blocks.iter().map(|b| b.stride).product();
        let (h, w) = (self.grid.height(), self.grid.width());
        if h % total != 0 || w % total != 0 {
            return bad(format!("total stride {total} does not divide {h}x{w}"));
        }
        let out = self.output_stride();
        let mut cum = 1;
        for (b, &u) in self.blocks.iter().zip(&self.up_strides) {
            cum *= b.stride;
            if cum % u != 0 || cum / u != out {
                return bad(format!(
                    "upsampling does not bring every block to stride {out}"
                ));
            }
        }
        Ok(())
    }

    /// Stride of the head maps relative to the pseudo-image.
    pub fn output_stride(&self) -> usize {
        self.blocks[0].stride / self.up_strides[0].max(1)
    }

    /// Head map extent (rows, cols).
    pub fn output_dims(&self) -> (usize, usize) {
        let s = self.output_stride().max(1);
        (self.grid.height() / s, self.grid.width() / s)
    }

    pub fn cls_channels(&self) -> usize {
        self.n_anchors_per_cell * self.n_classes
    }

    pub fn box_channels(&self) -> usize {
        self.n_anchors_per_cell * self.box_code_size
    }

    /// The offloaded subgraph in execution order.
    pub fn layers(&self) -> Vec<LayerDef> {
        let mut layers = Vec::new();
        let mut in_ch = self.grid.out_channels;
        let mut site = 0;
        let mut block_out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for j in 0..b.n_layers {
                let stride = if j == 0 { b.stride } else { 1 };
                layers.push(LayerDef {
                    name: format!("block{i}.conv{j}"),
                    kind: LayerKind::Conv,
                    spec: ConvSpec::new(in_ch, b.channels, 3, stride, 1),
                    input: InputRef::Site(site),
                });
                in_ch = b.channels;
                site = layers.len();
            }
            block_out.push((site, b.channels));
        }
        for (i, (&(site, ch), &u)) in block_out.iter().zip(&self.up_strides).enumerate() {
            layers.push(LayerDef {
                name: format!("up{i}"),
                kind: LayerKind::TConv,
                spec: ConvSpec::new(ch, self.up_channels, u, u, 0),
                input: InputRef::Site(site),
            });
        }
        let concat = self.up_channels * self.blocks.len();
        for (name, out) in [("head.cls", self.cls_channels()), ("head.box", self.box_channels())] {
            layers.push(LayerDef {
                name: name.to_string(),
                kind: LayerKind::Head,
                spec: ConvSpec::new(concat, out, 1, 1, 0),
                input: InputRef::Concat,
            });
        }
        layers
    }

    /// Canonical byte encoding: compact JSON in declaration order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    /// SHA-256 of the canonical encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }
}
