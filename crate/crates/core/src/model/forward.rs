use super::config::{InputRef, LayerKind, ModelConfig};
use super::weights::WeightStore;
use crate::error::{Error, Result};
use crate::pillars::PseudoImage;
use crate::tensor::{batchnorm_f32, concat_channels, conv2d_f32, relu_f32, tconv2d_f32, Tensor};

/// Calibration site name of the subgraph input.
pub const INPUT_SITE: &str = "input";
/// Calibration site name of the concatenated upsampling outputs.
pub const CONCAT_SITE: &str = "concat";

/// Raw head maps: `cls_map` is `[A*K, Ho, Wo]` logits, `box_map` is
/// `[A*7, Ho, Wo]` residuals. Channel `a*K + k` (resp. `a*7 + d`) belongs to
/// anchor slot `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cls_map: Tensor,
    pub box_map: Tensor,
}

pub fn backbone_head_forward(
    pseudo: &PseudoImage,
    store: &WeightStore,
    config: &ModelConfig,
) -> Result<HeadOutput> {
    forward_traced(pseudo, store, config, &mut |_, _| {})
}

/// Float forward pass that reports every activation site to `observe`
/// (the input, each layer's post-activation output, and the concat).
pub fn forward_traced(
    pseudo: &PseudoImage,
    store: &WeightStore,
    config: &ModelConfig,
    observe: &mut dyn FnMut(&str, &Tensor),
) -> Result<HeadOutput> {
    let expect = (
        config.grid.out_channels,
        config.grid.height(),
        config.grid.width(),
    );
    if pseudo.dims() != expect {
        return Err(Error::Shape(format!(
            "pseudo-image {:?} does not match grid {expect:?}",
            pseudo.dims()
        )));
    }
    observe(INPUT_SITE, &pseudo.data);

    let layers = config.layers();
    let mut sites: Vec<Tensor> = Vec::with_capacity(layers.len() + 1);
    let mut up_sites = Vec::new();
    let mut concat: Option<Tensor> = None;
    sites.push(pseudo.data.clone());

    for layer in &layers {
        let s = layer.spec;
        let w = store.get_shaped(
            &format!("{}.weight", layer.name),
            &[s.out_ch, s.in_ch, s.kernel, s.kernel],
        )?;
        let b = store.get_shaped(&format!("{}.bias", layer.name), &[s.out_ch])?;
        let x = match layer.input {
            InputRef::Site(i) => &sites[i],
            InputRef::Concat => {
                if concat.is_none() {
                    let parts: Vec<Tensor> = up_sites.iter().map(|&i: &usize| sites[i].clone()).collect();
                    let t = concat_channels(&parts)?;
                    observe(CONCAT_SITE, &t);
                    concat = Some(t);
                }
                concat.as_ref().unwrap()
            }
        };
        let mut y = match layer.kind {
            LayerKind::TConv => tconv2d_f32(x, w, b.data(), s.stride)?,
            _ => conv2d_f32(x, w, b.data(), &s)?,
        };
        let bn_name = format!("{}.bn", layer.name);
        if layer.has_batch_norm() && store.has_batch_norm(&bn_name) {
            batchnorm_f32(&mut y, &store.batch_norm(&bn_name, s.out_ch)?)?;
        }
        if layer.has_relu() {
            relu_f32(&mut y);
        }
        observe(&layer.name, &y);
        if layer.kind == LayerKind::TConv {
            up_sites.push(sites.len());
        }
        sites.push(y);
    }

    let box_map = sites.pop().expect("head.box output");
    let cls_map = sites.pop().expect("head.cls output");
    Ok(HeadOutput { cls_map, box_map })
}
