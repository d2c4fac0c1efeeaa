use crate::error::{Error, Result};
use crate::frames::PointCloud;
use crate::model::{backbone_head_forward, fold_store, HeadOutput, ModelConfig, WeightStore};
use crate::pillars::{encode, PseudoImage};
use crate::post::{gen_anchors, postprocess, AnchorGrid, Detection, PostConfig};
use crate::quant::{accel_execute, CompiledModel};

/// What runs in the accelerator stage.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Float backbone and head from a (possibly unfolded) weight store.
    Float(WeightStore),
    Compiled(CompiledModel),
}

/// Point cloud in, detections out.
#[derive(Debug, Clone)]
pub struct DetectorStages {
    config: ModelConfig,
    /// Encoder weights for the pre stage.
    encoder: WeightStore,
    backend: Backend,
    anchors: AnchorGrid,
    post_cfg: PostConfig,
}

impl DetectorStages {
    /// Float path: one store holds the encoder and the backbone.
    pub fn float(config: &ModelConfig, store: &WeightStore, post_cfg: PostConfig) -> Result<Self> {
        store.check_against(config)?;
        let folded = fold_store(store, config)?;
        Self::build(config, store.clone(), Backend::Float(folded), post_cfg)
    }

    /// Quantized path: the encoder stays in float on the host.
    pub fn compiled(
        config: &ModelConfig,
        encoder: &WeightStore,
        model: CompiledModel,
        post_cfg: PostConfig,
    ) -> Result<Self> {
        model.verify_config(config)?;
        model.validate()?;
        if model.input_channels() != config.grid.out_channels {
            return Err(Error::Shape(format!(
                "compiled model takes {} channels, grid produces {}",
                model.input_channels(),
                config.grid.out_channels
            )));
        }
        Self::build(config, encoder.clone(), Backend::Compiled(model), post_cfg)
    }

    fn build(config: &ModelConfig, encoder: WeightStore, backend: Backend, post_cfg: PostConfig) -> Result<Self> {
        post_cfg.validate()?;
        Ok(DetectorStages {
            config: config.clone(),
            anchors: gen_anchors(config)?,
            encoder,
            backend,
            post_cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// All three stages back to back on one frame.
    pub fn detect(&self, cloud: PointCloud) -> Result<Vec<Detection>> {
        use super::Stages;
        let fid = cloud.frame_id;
        self.post(fid, self.accel(self.pre(cloud)?)?)
    }
}

impl super::Stages for DetectorStages {
    type Input = PointCloud;
    type Encoded = PseudoImage;
    type Raw = HeadOutput;
    type Output = Vec<Detection>;

    fn frame_id(&self, input: &PointCloud) -> u64 {
        input.frame_id
    }

    fn pre(&self, cloud: PointCloud) -> Result<PseudoImage> {
        encode(&cloud, &self.config.grid, &self.encoder)
    }

    fn accel(&self, pseudo: PseudoImage) -> Result<HeadOutput> {
        match &self.backend {
            Backend::Float(store) => backbone_head_forward(&pseudo, store, &self.config),
            Backend::Compiled(model) => accel_execute(model, &pseudo),
        }
    }

    fn post(&self, frame_id: u64, head: HeadOutput) -> Result<Vec<Detection>> {
        postprocess(&self.anchors, &head, &self.post_cfg, frame_id)
    }
}
