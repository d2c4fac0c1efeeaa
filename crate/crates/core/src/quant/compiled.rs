//! The compiled int8 artifact and its executor.
//!
//! `.ppq` layout (little-endian, no padding): magic `PPQ1`, u32 layer count,
//! then per layer: kind u8 (0 conv, 1 tconv, 2 head conv), five u32
//! (in_ch, out_ch, k, s, p), input-site id u32, f64 input scale, u32 channel
//! count followed by that many f64 weight scales, out_ch*in_ch*k*k int8
//! weights, out_ch int32 biases, f64 output scale. A 32-byte config
//! fingerprint closes the file.
//!
//! Site 0 is the quantized pseudo-image and layer `k` produces site `k + 1`.
//! Input-site id `0xFFFF_FFFF` denotes the channel concatenation of every
//! tconv layer's output in file order.

use std::fs;
use std::path::Path;

use super::calibrate::{hex, CalibStats};
use crate::error::{Error, Result};
use crate::model::{
    fold_store, HeadOutput, InputRef, LayerKind, ModelConfig, WeightStore, CONCAT_SITE, INPUT_SITE,
};
use crate::pillars::PseudoImage;
use crate::tensor::{
    concat_channels, conv2d_i8, dequantize, quantize, quantize_per_channel, relu_i8, tconv2d_i8,
    ConvSpec, QTensor, QuantParams, Requant, Tensor, QMAX,
};

const MAGIC: &[u8; 4] = b"PPQ1";
pub const CONCAT_SITE_ID: u32 = u32::MAX;
/// Lower bound for per-channel weight scales (all-zero channels).
pub const WEIGHT_SCALE_FLOOR: f64 = 1e-9;
/// Largest fan-in whose worst-case int8 dot product fits in an i32.
const MAX_FAN_IN: usize = (i32::MAX as usize) / (QMAX as usize * QMAX as usize);

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLayer {
    pub kind: LayerKind,
    pub spec: ConvSpec,
    pub input: InputRef,
    pub input_scale: f64,
    pub weight_scales: Vec<f64>,
    pub weights: QTensor,
    pub bias: Vec<i32>,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub layers: Vec<CompiledLayer>,
    pub fingerprint: [u8; 32],
}

fn kind_byte(k: LayerKind) -> u8 {
    match k {
        LayerKind::Conv => 0,
        LayerKind::TConv => 1,
        LayerKind::Head => 2,
    }
}

/// Quantizes the (batch-norm folded) subgraph with the calibrated ranges.
pub fn compile(store: &WeightStore, config: &ModelConfig, stats: &CalibStats) -> Result<CompiledModel> {
    config.validate()?;
    stats.check_config(config)?;
    let folded = fold_store(store, config)?;
    let act_scale = |site: &str| -> Result<f64> { Ok(stats.site(site)? / QMAX as f64) };
    let concat_scale = act_scale(CONCAT_SITE)?;

    let plan = config.layers();
    let mut out_scales = vec![act_scale(INPUT_SITE)?];
    let mut layers = Vec::with_capacity(plan.len());
    for layer in &plan {
        let s = layer.spec;
        if s.fan_in() >= MAX_FAN_IN {
            return Err(Error::Shape(format!(
                "layer {} fan-in {} could overflow int32 accumulation",
                layer.name,
                s.fan_in()
            )));
        }
        let w = folded.get_shaped(&format!("{}.weight", layer.name), &[s.out_ch, s.in_ch, s.kernel, s.kernel])?;
        let b = folded.get_shaped(&format!("{}.bias", layer.name), &[s.out_ch])?;
        let input_scale = match layer.input {
            InputRef::Site(i) => out_scales[i],
            InputRef::Concat => concat_scale,
        };
        // every upsampling output lands in the shared concat tensor
        let output_scale = match layer.kind {
            LayerKind::TConv => concat_scale,
            _ => act_scale(&layer.name)?,
        };
        let per = s.in_ch * s.kernel * s.kernel;
        let weight_scales: Vec<f64> = w
            .data()
            .chunks(per)
            .map(|c| {
                let m = c.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
                (m / QMAX as f64).max(WEIGHT_SCALE_FLOOR)
            })
            .collect();
        let weights = quantize_per_channel(w, &weight_scales)?;
        let rq = Requant {
            x_scale: input_scale,
            w_scales: weight_scales.clone(),
            out_scale: output_scale,
        };
        layers.push(CompiledLayer {
            kind: layer.kind,
            spec: s,
            input: layer.input.clone(),
            input_scale,
            bias: rq.quantize_bias(b.data()),
            weight_scales,
            weights,
            output_scale,
        });
        out_scales.push(output_scale);
    }
    let model = CompiledModel {
        layers,
        fingerprint: config.fingerprint(),
    };
    model.validate()?;
    Ok(model)
}

impl CompiledModel {
    pub fn verify_config(&self, config: &ModelConfig) -> Result<()> {
        if self.fingerprint != config.fingerprint() {
            return Err(Error::Fingerprint(format!(
                "compiled model was built for config {}, current config is {}",
                hex(&self.fingerprint),
                hex(&config.fingerprint())
            )));
        }
        Ok(())
    }

    /// Topology and scale consistency checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::Format("compiled model needs at least two head layers".into()));
        }
        let tconv_scales: Vec<f64> = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::TConv)
            .map(|l| l.output_scale)
            .collect();
        for (k, l) in self.layers.iter().enumerate() {
            let bad = |m: String| Err(Error::Format(format!("layer {k}: {m}")));
            let s = l.spec;
            if l.weights.dims() != [s.out_ch, s.in_ch, s.kernel, s.kernel]
                || l.bias.len() != s.out_ch
                || l.weight_scales.len() != s.out_ch
            {
                return bad("tensor sizes disagree with spec".into());
            }
            if !(l.input_scale > 0.0 && l.output_scale > 0.0)
                || l.weight_scales.iter().any(|w| !(*w > 0.0))
            {
                return bad("non-positive scale".into());
            }
            if l.kind == LayerKind::TConv && (s.kernel != s.stride || s.padding != 0) {
                return bad("tconv must have kernel == stride and no padding".into());
            }
            match l.input {
                InputRef::Site(i) if i > k => return bad(format!("reads future site {i}")),
                InputRef::Site(0) => {}
                InputRef::Site(i) if self.layers[i - 1].output_scale != l.input_scale => {
                    return bad(format!("input scale differs from site {i}"))
                }
                InputRef::Concat => {
                    if tconv_scales.is_empty() || tconv_scales.iter().any(|&t| t != l.input_scale) {
                        return bad("concat input scale differs from tconv outputs".into());
                    }
                }
                _ => {}
            }
        }
        if self.layers[n - 2..].iter().any(|l| l.kind != LayerKind::Head) {
            return Err(Error::Format("last two layers must be the cls and box heads".into()));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].spec.in_ch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        for l in &self.layers {
            out.push(kind_byte(l.kind));
            let s = l.spec;
            for v in [s.in_ch, s.out_ch, s.kernel, s.stride, s.padding] {
                u32le(&mut out, v);
            }
            let site = match l.input {
                InputRef::Site(i) => i as u32,
                InputRef::Concat => CONCAT_SITE_ID,
            };
            out.extend_from_slice(&site.to_le_bytes());
            out.extend_from_slice(&l.input_scale.to_le_bytes());
            u32le(&mut out, l.weight_scales.len());
            l.weight_scales.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes()));
            out.extend(l.weights.data().iter().map(|&v| v as u8));
            l.bias.iter().for_each(|b| out.extend_from_slice(&b.to_le_bytes()));
            out.extend_from_slice(&l.output_scale.to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic: not a PPQ1 compiled model".into()));
        }
        let mut pos = 4;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::Truncated {
                    tensor: what.to_string(),
                });
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());

        let count = u32_at(take(4, "<header>")?) as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for k in 0..count {
            let what = format!("layer {k}");
            let kind = match take(1, &what)?[0] {
                0 => LayerKind::Conv,
                1 => LayerKind::TConv,
                2 => LayerKind::Head,
                other => return Err(Error::Format(format!("{what}: unknown kind {other}"))),
            };
            let mut dims = [0usize; 5];
            for d in dims.iter_mut() {
                *d = u32_at(take(4, &what)?) as usize;
            }
            let spec = ConvSpec::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
            let site = u32_at(take(4, &what)?);
            let input = if site == CONCAT_SITE_ID {
                InputRef::Concat
            } else {
                InputRef::Site(site as usize)
            };
            let input_scale = f64_at(take(8, &what)?);
            let n_scales = u32_at(take(4, &what)?) as usize;
            if n_scales != spec.out_ch {
                return Err(Error::Format(format!(
                    "{what}: {n_scales} weight scales for {} channels",
                    spec.out_ch
                )));
            }
            let weight_scales = take(8 * n_scales, &what)?.chunks_exact(8).map(f64_at).collect();
            let n_w = spec
                .out_ch
                .checked_mul(spec.fan_in())
                .ok_or_else(|| Error::Format(format!("{what}: weight count overflows")))?;
            let wdata = take(n_w, &what)?.iter().map(|&b| b as i8).collect();
            let weights = Tensor::from_vec(&[spec.out_ch, spec.in_ch, spec.kernel, spec.kernel], wdata)?;
            let bias = take(4 * spec.out_ch, &what)?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let output_scale = f64_at(take(8, &what)?);
            layers.push(CompiledLayer {
                kind,
                spec,
                input,
                input_scale,
                weight_scales,
                weights,
                bias,
                output_scale,
            });
        }
        let fingerprint: [u8; 32] = take(32, "<fingerprint>")?.try_into().unwrap();
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let model = CompiledModel { layers, fingerprint };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_compiled(model: &CompiledModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_compiled(path: impl AsRef<Path>) -> Result<CompiledModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CompiledModel::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Runs the compiled graph with integer kernels and dequantizes both head maps.
pub fn accel_execute(model: &CompiledModel, pseudo: &PseudoImage) -> Result<HeadOutput> {
    let (c, _, _) = pseudo.dims();
    if c != model.input_channels() {
        return Err(Error::Shape(format!(
            "pseudo-image has {c} channels, compiled model expects {}",
            model.input_channels()
        )));
    }
    let input_q = QuantParams::new(model.layers[0].input_scale)?;
    let mut sites: Vec<QTensor> = Vec::with_capacity(model.layers.len() + 1);
    sites.push(quantize(&pseudo.data, input_q));
    let mut concat: Option<QTensor> = None;
    for layer in &model.layers {
        let x = match layer.input {
            InputRef::Site(i) => &sites[i],
            InputRef::Concat => {
                if concat.is_none() {
                    let parts: Vec<QTensor> = model
                        .layers
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| l.kind == LayerKind::TConv)
                        .map(|(k, _)| sites[k + 1].clone())
                        .collect();
                    concat = Some(concat_channels(&parts)?);
                }
                concat.as_ref().unwrap()
            }
        };
        let rq = Requant {
            x_scale: layer.input_scale,
            w_scales: layer.weight_scales.clone(),
            out_scale: layer.output_scale,
        };
        let mut y = match layer.kind {
            LayerKind::TConv => tconv2d_i8(x, &layer.weights, &layer.bias, &rq, layer.spec.stride)?,
            _ => conv2d_i8(x, &layer.weights, &layer.bias, &rq, &layer.spec)?,
        };
        if layer.kind != LayerKind::Head {
            relu_i8(&mut y);
        }
        sites.push(y);
    }
    let n = model.layers.len();
    let deq = |k: usize| -> Result<Tensor> {
        Ok(dequantize(&sites[k + 1], QuantParams::new(model.layers[k].output_scale)?))
    };
    Ok(HeadOutput {
        cls_map: deq(n - 2)?,
        box_map: deq(n - 1)?,
    })
}
