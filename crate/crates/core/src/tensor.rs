//! Dense float32 and int8 kernels for the backbone and head.
//!
//! Layouts are row-major with the last dimension innermost. Feature maps are
//! `[C, H, W]`; convolution weights are `[Cout, Cin, k, k]` for both regular
//! and transposed convolution. Every output element is reduced in a fixed
//! order (bias, then input channel, then kernel row, then kernel column), so
//! results do not depend on scheduling.

use std::ops::{AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturation bound for symmetric int8.
pub const QMAX: i32 = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

pub type QTensor = Tensor<i8>;

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::default(); dims.iter().product()],
        }
    }
}

impl<T> Tensor<T> {
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn chw(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!(
                "{what}: expected [C, H, W], got {:?}",
                self.dims
            ))),
        }
    }
}

impl Tensor<f32> {
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, alpha: f32) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// Concatenates `[C_i, H, W]` tensors along the channel axis.
pub fn concat_channels<T: Copy>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let (_, h, w) = first.chw("concat")?;
    let mut c_total = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw("concat")?;
        if (ph, pw) != (h, w) {
            return Err(Error::Shape(format!(
                "concat spatial mismatch: {:?} vs {:?}",
                first.dims, p.dims
            )));
        }
        c_total += c;
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec(&[c_total, h, w], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent along one spatial axis, or `None` if the window does not fit.
    pub fn out_extent(&self, n: usize) -> Option<usize> {
        let span = n + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || span < self.kernel {
            return None;
        }
        Some((span - self.kernel) / self.stride + 1)
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn check(&self, x: (usize, usize, usize), w: &[usize], bias_len: usize) -> Result<(usize, usize)> {
        let (c, h, wd) = x;
        let k = self.kernel;
        if c != self.in_ch {
            return Err(Error::Shape(format!(
                "input has {c} channels, spec expects {}",
                self.in_ch
            )));
        }
        if w != [self.out_ch, self.in_ch, k, k] {
            return Err(Error::Shape(format!(
                "weight dims {w:?} do not match spec {self:?}"
            )));
        }
        if bias_len != self.out_ch {
            return Err(Error::Shape(format!(
                "bias has {bias_len} entries, spec expects {}",
                self.out_ch
            )));
        }
        match (self.out_extent(h), self.out_extent(wd)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::Shape(format!(
                "spec {self:?} does not fit input {h}x{wd}"
            ))),
        }
    }
}

/// Cross-correlation accumulated into `out` (which must hold `[Cout, Ho, Wo]`
/// pre-filled with the bias). Each output element sums its terms in
/// (c, ky, kx) order.
fn conv_accumulate<T, A>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    wt: &[T],
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    out: &mut [A],
) where
    T: Copy + Default + Into<A>,
    A: Copy + AddAssign + Mul<Output = A>,
{
    let k = spec.kernel;
    let kk = k * k;
    let n = ho * wo;
    // shifted, strided copies of one input channel: row r = ky*k + kx
    let mut patch = vec![T::default(); kk * n];
    for c in 0..cin {
        let input = &x[c * h * w..(c + 1) * h * w];
        fill_patch(input, (h, w), spec, (ho, wo), &mut patch);
        for o in 0..spec.out_ch {
            let plane = &mut out[o * n..(o + 1) * n];
            let wrow = &wt[(o * cin + c) * kk..(o * cin + c + 1) * kk];
            for (r, &wv) in wrow.iter().enumerate() {
                let wv: A = wv.into();
                for (ov, &iv) in plane.iter_mut().zip(&patch[r * n..(r + 1) * n]) {
                    *ov += wv * iv.into();
                }
            }
        }
    }
}

fn fill_patch<T: Copy + Default>(
    input: &[T],
    (h, w): (usize, usize),
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    patch: &mut [T],
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    for ky in 0..k {
        for kx in 0..k {
            let dst = &mut patch[(ky * k + kx) * ho * wo..(ky * k + kx + 1) * ho * wo];
            for oy in 0..ho {
                let orow = &mut dst[oy * wo..(oy + 1) * wo];
                let iy = oy * s + ky;
                if iy < p || iy - p >= h {
                    orow.fill(T::default());
                    continue;
                }
                let row = &input[(iy - p) * w..(iy - p + 1) * w];
                for (ox, v) in orow.iter_mut().enumerate() {
                    let ix = ox * s + kx;
                    *v = if ix < p || ix - p >= w { T::default() } else { row[ix - p] };
                }
            }
        }
    }
}

/// Transposed convolution with kernel == stride == `u` and no padding,
/// accumulated into `out` pre-filled with the bias.
fn tconv_accumulate<T, A>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    wt: &[T],
    cout: usize,
    u: usize,
    out: &mut [A],
) where
    T: Copy + Into<A>,
    A: Copy + AddAssign + Mul<Output = A>,
{
    let (ho, wo) = (h * u, w * u);
    for o in 0..cout {
        let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..cin {
            let input = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..u {
                for kx in 0..u {
                    let wv: A = wt[((o * cin + c) * u + ky) * u + kx].into();
                    for iy in 0..h {
                        let orow = &mut plane[(iy * u + ky) * wo..(iy * u + ky + 1) * wo];
                        let irow = &input[iy * w..(iy + 1) * w];
                        for (ix, &iv) in irow.iter().enumerate() {
                            orow[ix * u + kx] += wv * iv.into();
                        }
                    }
                }
            }
        }
    }
}

fn tconv_check(x: (usize, usize, usize), w: &[usize], bias_len: usize, u: usize) -> Result<usize> {
    if u == 0 {
        return Err(Error::Shape("transposed conv stride must be >= 1".into()));
    }
    match *w {
        [cout, cin, ky, kx] if cin == x.0 && ky == u && kx == u && bias_len == cout => Ok(cout),
        _ => Err(Error::Shape(format!(
            "transposed conv weight {w:?} / bias {bias_len} incompatible with input {x:?} at stride {u}"
        ))),
    }
}

pub fn conv2d_f32(x: &Tensor, w: &Tensor, b: &[f32], spec: &ConvSpec) -> Result<Tensor> {
    let xd = x.chw("conv2d input")?;
    let (ho, wo) = spec.check(xd, w.dims(), b.len())?;
    let mut out = Tensor::zeros(&[spec.out_ch, ho, wo]);
    for (o, plane) in out.data.chunks_mut(ho * wo).enumerate() {
        plane.fill(b[o]);
    }
    conv_accumulate(&x.data, xd, &w.data, spec, (ho, wo), &mut out.data);
    Ok(out)
}

/// Exact `u`-times upsampling by transposed convolution (kernel `u`, stride `u`, no padding).
pub fn tconv2d_f32(x: &Tensor, w: &Tensor, b: &[f32], u: usize) -> Result<Tensor> {
    let xd = x.chw("tconv2d input")?;
    let cout = tconv_check(xd, w.dims(), b.len(), u)?;
    let (ho, wo) = (xd.1 * u, xd.2 * u);
    let mut out = Tensor::zeros(&[cout, ho, wo]);
    for (o, plane) in out.data.chunks_mut(ho * wo).enumerate() {
        plane.fill(b[o]);
    }
    tconv_accumulate(&x.data, xd, &w.data, cout, u, &mut out.data);
    Ok(out)
}

pub fn relu_f32(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Per-channel batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize, eps: f32) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.mean.len() != n || self.var.len() != n {
            return Err(Error::Shape("batch-norm parameter lengths differ".into()));
        }
        if let Some(v) = self.var.iter().find(|&&v| !(v + self.eps > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "batch-norm variance {v} + eps {} must be > 0",
                self.eps
            )));
        }
        Ok(())
    }

    /// Per-channel (multiplier, offset) in f64.
    fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|o| {
                let inv = 1.0 / (self.var[o] as f64 + self.eps as f64).sqrt();
                let m = self.gamma[o] as f64 * inv;
                (m, self.beta[o] as f64 - self.mean[o] as f64 * m)
            })
            .collect()
    }
}

/// Applies inference-mode batch norm over axis 0 of a `[C, ...]` tensor.
pub fn batchnorm_f32(x: &mut Tensor, bn: &BatchNorm) -> Result<()> {
    bn.check()?;
    let c = x.dims.first().copied().unwrap_or(0);
    if c != bn.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels applied to {:?}",
            bn.channels(),
            x.dims
        )));
    }
    let plane = x.data.len() / c.max(1);
    for (chunk, (m, off)) in x.data.chunks_mut(plane).zip(bn.affine()) {
        for v in chunk {
            *v = (*v as f64 * m + off) as f32;
        }
    }
    Ok(())
}

/// Folds batch norm into the preceding layer's weights (output channel on axis 0) and bias.
pub fn fold_batchnorm(w: &Tensor, b: &[f32], bn: &BatchNorm) -> Result<(Tensor, Vec<f32>)> {
    bn.check()?;
    let cout = w.dims.first().copied().unwrap_or(0);
    if cout != bn.channels() || b.len() != cout {
        return Err(Error::Shape(format!(
            "cannot fold {}-channel batch norm into weight {:?} with {} biases",
            bn.channels(),
            w.dims,
            b.len()
        )));
    }
    let per = w.data.len() / cout.max(1);
    let mut wf = w.clone();
    let mut bf = Vec::with_capacity(cout);
    for (o, (chunk, (m, _))) in wf.data.chunks_mut(per).zip(bn.affine()).enumerate() {
        for v in chunk {
            *v = (*v as f64 * m) as f32;
        }
        let inv = 1.0 / (bn.var[o] as f64 + bn.eps as f64).sqrt();
        bf.push(
            ((b[o] as f64 - bn.mean[o] as f64) * bn.gamma[o] as f64 * inv + bn.beta[o] as f64)
                as f32,
        );
    }
    Ok((wf, bf))
}

/// Symmetric quantization parameters (zero point is always 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
}

impl QuantParams {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quantization scale must be positive and finite, got {scale}"
            )));
        }
        Ok(QuantParams { scale })
    }
}

/// Rounds half away from zero and saturates to [-127, 127].
pub fn quantize_value(x: f64, scale: f64) -> i8 {
    (x / scale).round().clamp(-(QMAX as f64), QMAX as f64) as i8
}

pub fn quantize(x: &Tensor, q: QuantParams) -> QTensor {
    Tensor {
        dims: x.dims.clone(),
        data: x
            .data
            .iter()
            .map(|&v| quantize_value(v as f64, q.scale))
            .collect(),
    }
}

pub fn dequantize(x: &QTensor, q: QuantParams) -> Tensor {
    Tensor {
        dims: x.dims.clone(),
        data: x
            .data
            .iter()
            .map(|&v| (v as f64 * q.scale) as f32)
            .collect(),
    }
}

/// Quantizes weights with one scale per output channel (axis 0).
pub fn quantize_per_channel(w: &Tensor, scales: &[f64]) -> Result<QTensor> {
    let cout = w.dims.first().copied().unwrap_or(0);
    if scales.len() != cout {
        return Err(Error::Shape(format!(
            "{} weight scales for {cout} output channels",
            scales.len()
        )));
    }
    let per = w.data.len() / cout.max(1);
    let data = w
        .data
        .chunks(per)
        .zip(scales)
        .flat_map(|(chunk, &s)| chunk.iter().map(move |&v| quantize_value(v as f64, s)))
        .collect();
    Ok(Tensor {
        dims: w.dims.clone(),
        data,
    })
}

/// Scales that map int32 accumulators back to the int8 output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Requant {
    pub x_scale: f64,
    pub w_scales: Vec<f64>,
    pub out_scale: f64,
}

impl Requant {
    fn multipliers(&self, cout: usize) -> Result<Vec<f64>> {
        if self.w_scales.len() != cout {
            return Err(Error::Shape(format!(
                "{} weight scales for {cout} output channels",
                self.w_scales.len()
            )));
        }
        Ok(self
            .w_scales
            .iter()
            .map(|ws| self.x_scale * ws / self.out_scale)
            .collect())
    }

    /// Bias quantized onto the accumulator grid of channel `o`.
    pub fn quantize_bias(&self, b: &[f32]) -> Vec<i32> {
        b.iter()
            .zip(&self.w_scales)
            .map(|(&v, ws)| (v as f64 / (self.x_scale * ws)).round() as i32)
            .collect()
    }
}

fn requantize(acc: &[i32], planes: usize, mult: &[f64]) -> Vec<i8> {
    let plane = acc.len() / planes.max(1);
    acc.chunks(plane)
        .zip(mult)
        .flat_map(|(chunk, &m)| {
            chunk.iter().map(move |&a| {
                (a as f64 * m)
                    .round()
                    .clamp(-(QMAX as f64), QMAX as f64) as i8
            })
        })
        .collect()
}

/// Integer convolution: int32 accumulation, then per-channel requantization.
pub fn conv2d_i8(
    xq: &QTensor,
    wq: &QTensor,
    bias: &[i32],
    rq: &Requant,
    spec: &ConvSpec,
) -> Result<QTensor> {
    let xd = xq.chw("conv2d_i8 input")?;
    let (ho, wo) = spec.check(xd, wq.dims(), bias.len())?;
    let mult = rq.multipliers(spec.out_ch)?;
    let mut acc = vec![0i32; spec.out_ch * ho * wo];
    for (o, plane) in acc.chunks_mut(ho * wo).enumerate() {
        plane.fill(bias[o]);
    }
    conv_accumulate::<i8, i32>(&xq.data, xd, &wq.data, spec, (ho, wo), &mut acc);
    Tensor::from_vec(&[spec.out_ch, ho, wo], requantize(&acc, spec.out_ch, &mult))
}

/// Integer counterpart of [`tconv2d_f32`].
pub fn tconv2d_i8(xq: &QTensor, wq: &QTensor, bias: &[i32], rq: &Requant, u: usize) -> Result<QTensor> {
    let xd = xq.chw("tconv2d_i8 input")?;
    let cout = tconv_check(xd, wq.dims(), bias.len(), u)?;
    let mult = rq.multipliers(cout)?;
    let (ho, wo) = (xd.1 * u, xd.2 * u);
    let mut acc = vec![0i32; cout * ho * wo];
    for (o, plane) in acc.chunks_mut(ho * wo).enumerate() {
        plane.fill(bias[o]);
    }
    tconv_accumulate::<i8, i32>(&xq.data, xd, &wq.data, cout, u, &mut acc);
    Tensor::from_vec(&[cout, ho, wo], requantize(&acc, cout, &mult))
}

/// ReLU on the int8 grid; valid because the zero point is 0.
pub fn relu_i8(x: &mut QTensor) {
    x.data.iter_mut().for_each(|v| *v = (*v).max(0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_identity_scalar() {
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_f32(&x, &w, &[0.0], &ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn conv_ones_3x3_padded() {
        let x = Tensor::from_vec(&[1, 4, 4], vec![1.0; 16]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_f32(&x, &w, &[0.0], &ConvSpec::new(1, 1, 3, 1, 1)).unwrap();
        #[rustfmt::skip]
        let expect = [
            4.0, 6.0, 6.0, 4.0,
            6.0, 9.0, 9.0, 6.0,
            6.0, 9.0, 9.0, 6.0,
            4.0, 6.0, 6.0, 4.0,
        ];
        assert_eq!(y.dims(), &[1, 4, 4]);
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn conv_stride_subsamples() {
        let x = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_f32(&x, &w, &[0.0], &ConvSpec::new(1, 1, 1, 2, 0)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(conv2d_f32(&x, &w, &[0.0], &ConvSpec::new(2, 1, 3, 1, 1)).is_err());
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_f32(&x, &w, &[0.0, 0.0], &ConvSpec::new(2, 1, 3, 1, 1)).is_err());
        let w = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        assert!(conv2d_f32(&x, &w, &[0.0], &ConvSpec::new(2, 1, 5, 1, 0)).is_err());
    }

    #[test]
    fn tconv_identity_and_block() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(tconv2d_f32(&x, &w, &[0.0], 1).unwrap(), x);

        let x = Tensor::from_vec(&[1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = tconv2d_f32(&x, &w, &[0.0], 2).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[3.0; 4]);
        assert!(tconv2d_f32(&x, &w, &[0.0], 3).is_err());
    }

    #[test]
    fn fold_identity_and_scalar() {
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let bn = BatchNorm {
            gamma: vec![1.0],
            beta: vec![0.0],
            mean: vec![0.0],
            var: vec![1.0],
            eps: 0.0,
        };
        let (wf, bf) = fold_batchnorm(&w, &[0.5], &bn).unwrap();
        assert_eq!(wf, w);
        assert_eq!(bf, vec![0.5]);

        let bn = BatchNorm {
            gamma: vec![2.0],
            beta: vec![1.0],
            ..bn
        };
        let (wf, bf) = fold_batchnorm(&w, &[0.0], &bn).unwrap();
        assert_eq!(wf.data(), &[6.0]);
        assert_eq!(bf, vec![1.0]);

        let bad = BatchNorm {
            var: vec![-1.0],
            ..bn
        };
        assert!(fold_batchnorm(&w, &[0.0], &bad).is_err());
    }

    #[test]
    fn fold_matches_unfused_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let cin = rng.random_range(1..5);
            let cout = rng.random_range(1..5);
            let x = rand_tensor(&mut rng, &[cin, 6, 5]);
            let w = rand_tensor(&mut rng, &[cout, cin, 3, 3]);
            let b: Vec<f32> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bn = BatchNorm {
                gamma: (0..cout).map(|_| rng.random_range(0.5..2.0)).collect(),
                beta: (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect(),
                mean: (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect(),
                var: (0..cout).map(|_| rng.random_range(0.01..2.0)).collect(),
                eps: 1e-3,
            };
            let spec = ConvSpec::new(cin, cout, 3, 1, 1);
            let mut unfused = conv2d_f32(&x, &w, &b, &spec).unwrap();
            batchnorm_f32(&mut unfused, &bn).unwrap();
            let (wf, bf) = fold_batchnorm(&w, &b, &bn).unwrap();
            let fused = conv2d_f32(&x, &wf, &bf, &spec).unwrap();
            let scale = unfused.max_abs().max(1.0);
            for (a, b) in fused.data().iter().zip(unfused.data()) {
                assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn quantize_examples() {
        let q = QuantParams::new(0.1).unwrap();
        assert_eq!(quantize_value(0.0, 0.37), 0);
        assert_eq!(quantize_value(1.0, 0.1), 10);
        assert_eq!(quantize_value(100.0, 0.1), 127);
        assert_eq!(quantize_value(-100.0, 0.1), -127);
        assert_eq!(quantize_value(0.25, 0.1), 3);
        assert_eq!(quantize_value(-0.25, 0.1), -3);
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let back = dequantize(&quantize(&x, q), q);
        assert!((back.data()[0] - 1.0).abs() < 1e-6);
        assert!(QuantParams::new(0.0).is_err());
        assert!(QuantParams::new(f64::NAN).is_err());
    }

    #[test]
    fn conv_i8_examples() {
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        let xq = Tensor::from_vec(&[1, 1, 1], vec![10i8]).unwrap();
        let wq = Tensor::from_vec(&[1, 1, 1, 1], vec![127i8]).unwrap();
        let rq = Requant {
            x_scale: 0.1,
            w_scales: vec![1.0 / 127.0],
            out_scale: 0.1,
        };
        assert_eq!(conv2d_i8(&xq, &wq, &[0], &rq, &spec).unwrap().data(), &[10]);

        // zero input: bias alone survives requantization
        let zero = Tensor::<i8>::zeros(&[1, 2, 2]);
        let bias = rq.quantize_bias(&[0.5]);
        assert_eq!(bias, vec![635]);
        let y = conv2d_i8(&zero, &wq, &bias, &rq, &spec).unwrap();
        assert_eq!(y.data(), &[5, 5, 5, 5]);
    }

    #[test]
    fn conv_i8_tracks_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let cin = rng.random_range(1..6);
            let cout = rng.random_range(1..6);
            let x = rand_tensor(&mut rng, &[cin, 7, 6]);
            let w = rand_tensor(&mut rng, &[cout, cin, 3, 3]);
            let spec = ConvSpec::new(cin, cout, 3, 1, 1);
            let yf = conv2d_f32(&x, &w, &vec![0.0; cout], &spec).unwrap();
            let x_scale = x.max_abs() as f64 / 127.0;
            let out_scale = yf.max_abs() as f64 / 127.0;
            let per = cin * 9;
            let w_scales: Vec<f64> = w
                .data()
                .chunks(per)
                .map(|c| c.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64 / 127.0)
                .collect();
            let xq = quantize(&x, QuantParams::new(x_scale).unwrap());
            let wq = quantize_per_channel(&w, &w_scales).unwrap();
            let rq = Requant {
                x_scale,
                w_scales,
                out_scale,
            };
            let yq = conv2d_i8(&xq, &wq, &vec![0; cout], &rq, &spec).unwrap();
            let yd = dequantize(&yq, QuantParams::new(out_scale).unwrap());
            for (a, b) in yd.data().iter().zip(yf.data()) {
                assert!(((a - b).abs() as f64) <= 3.0 * out_scale);
            }
        }
    }

    #[test]
    fn tconv_i8_matches_dequantized_float() {
        let xq = Tensor::from_vec(&[1, 1, 2], vec![4i8, -2]).unwrap();
        let wq = Tensor::from_vec(&[1, 1, 2, 2], vec![1i8, 2, 3, 4]).unwrap();
        let rq = Requant {
            x_scale: 1.0,
            w_scales: vec![1.0],
            out_scale: 1.0,
        };
        let mut y = tconv2d_i8(&xq, &wq, &[0], &rq, 2).unwrap();
        assert_eq!(y.dims(), &[1, 2, 4]);
        assert_eq!(y.data(), &[4, 8, -2, -4, 12, 16, -6, -8]);
        relu_i8(&mut y);
        assert_eq!(y.data(), &[4, 8, 0, 0, 12, 16, 0, 0]);
    }

    proptest! {
        #[test]
        fn quantize_round_trip_error(x in -12.0f64..12.0, scale in 0.1f64..1.0) {
            let q = quantize_value(x, scale);
            let err = (q as f64 * scale - x).abs();
            prop_assert!(err <= scale / 2.0 + 1e-12);
        }

        #[test]
        fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f32..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 5, 6]);
            let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
            let spec = ConvSpec::new(3, 2, 3, 2, 1);
            let y = conv2d_f32(&x, &w, &[0.0, 0.0], &spec).unwrap();
            let mut xs = x.clone();
            xs.scale(alpha);
            let ys = conv2d_f32(&xs, &w, &[0.0, 0.0], &spec).unwrap();
            for (a, b) in ys.data().iter().zip(y.data()) {
                prop_assert!((a - alpha * b).abs() <= 1e-5 * (1.0 + alpha.abs() * 10.0));
            }
        }
    }
}
