//! Named tensor storage and the `.ppw` weight file.
//!
//! File layout (all integers little-endian, no padding):
//! magic `PPW1`, u32 tensor count, then per tensor: u16 name length, UTF-8
//! name, u8 dtype (0 = f32, 1 = i8), u8 ndim, ndim x u32 dims, raw data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayerKind, ModelConfig, BN_EPS};
use crate::error::{Error, Result};
use crate::pillars::POINT_FEATURES;
use crate::tensor::{fold_batchnorm, BatchNorm, QTensor, Tensor};

const MAGIC: &[u8; 4] = b"PPW1";

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor),
    I8(QTensor),
}

impl StoredTensor {
    fn dims(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.dims(),
            StoredTensor::I8(t) => t.dims(),
        }
    }
}

/// Name-ordered tensor map. Iteration (and therefore file) order is by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    tensors: BTreeMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), StoredTensor::F32(t));
    }

    pub fn insert_i8(&mut self, name: impl Into<String>, t: QTensor) {
        self.tensors.insert(name.into(), StoredTensor::I8(t));
    }

    pub fn remove(&mut self, name: &str) -> Option<StoredTensor> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Copy of the tensors whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> WeightStore {
        WeightStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        match self.tensors.get(name) {
            Some(StoredTensor::F32(t)) => Ok(t),
            Some(StoredTensor::I8(_)) => Err(Error::Shape(format!("tensor `{name}` is int8, expected f32"))),
            None => Err(Error::Shape(format!("missing tensor `{name}`"))),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.tensors.get_mut(name) {
            Some(StoredTensor::F32(t)) => Ok(t),
            Some(StoredTensor::I8(_)) => Err(Error::Shape(format!("tensor `{name}` is int8, expected f32"))),
            None => Err(Error::Shape(format!("missing tensor `{name}`"))),
        }
    }

    pub fn get_shaped(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.dims() != dims {
            return Err(Error::Shape(format!(
                "tensor `{name}` has dims {:?}, expected {dims:?}",
                t.dims()
            )));
        }
        Ok(t)
    }

    pub fn insert_batch_norm(&mut self, prefix: &str, bn: &BatchNorm) {
        let c = bn.channels();
        let vec = |v: &[f32]| Tensor::from_vec(&[c], v.to_vec()).expect("length matches");
        self.insert(format!("{prefix}.gamma"), vec(&bn.gamma));
        self.insert(format!("{prefix}.beta"), vec(&bn.beta));
        self.insert(format!("{prefix}.mean"), vec(&bn.mean));
        self.insert(format!("{prefix}.var"), vec(&bn.var));
        self.insert(
            format!("{prefix}.eps"),
            Tensor::from_vec(&[1], vec![bn.eps]).expect("scalar"),
        );
    }

    pub fn has_batch_norm(&self, prefix: &str) -> bool {
        self.contains(&format!("{prefix}.gamma"))
    }

    pub fn batch_norm(&self, prefix: &str, channels: usize) -> Result<BatchNorm> {
        let v = |s: &str| -> Result<Vec<f32>> {
            Ok(self
                .get_shaped(&format!("{prefix}.{s}"), &[channels])?
                .data()
                .to_vec())
        };
        Ok(BatchNorm {
            gamma: v("gamma")?,
            beta: v("beta")?,
            mean: v("mean")?,
            var: v("var")?,
            eps: self.get_shaped(&format!("{prefix}.eps"), &[1])?.data()[0],
        })
    }

    fn remove_batch_norm(&mut self, prefix: &str) {
        for s in ["gamma", "beta", "mean", "var", "eps"] {
            self.tensors.remove(&format!("{prefix}.{s}"));
        }
    }

    /// Checks that every tensor the config names is present with the right shape.
    /// Batch-norm groups may be absent (folded stores).
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let c = config.grid.out_channels;
        self.get_shaped("pfn.linear", &[c, POINT_FEATURES])?;
        self.batch_norm("pfn.bn", c)?;
        for layer in config.layers() {
            let s = layer.spec;
            self.get_shaped(
                &format!("{}.weight", layer.name),
                &[s.out_ch, s.in_ch, s.kernel, s.kernel],
            )?;
            self.get_shaped(&format!("{}.bias", layer.name), &[s.out_ch])?;
            let bn = format!("{}.bn", layer.name);
            if self.has_batch_norm(&bn) {
                self.batch_norm(&bn, s.out_ch)?;
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases and identity batch norm; deterministic in `seed`.
pub fn init_random_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::default();
    let mut uniform = |dims: &[usize], fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::from_vec(dims, data).expect("dims match")
    };

    let c = config.grid.out_channels;
    store.insert("pfn.linear", uniform(&[c, POINT_FEATURES], POINT_FEATURES, c));
    store.insert_batch_norm("pfn.bn", &BatchNorm::identity(c, BN_EPS));

    for layer in config.layers() {
        let s = layer.spec;
        let kk = s.kernel * s.kernel;
        store.insert(
            format!("{}.weight", layer.name),
            uniform(&[s.out_ch, s.in_ch, s.kernel, s.kernel], s.in_ch * kk, s.out_ch * kk),
        );
        store.insert(format!("{}.bias", layer.name), Tensor::zeros(&[s.out_ch]));
        if layer.has_batch_norm() {
            store.insert_batch_norm(&format!("{}.bn", layer.name), &BatchNorm::identity(s.out_ch, BN_EPS));
        }
    }
    Ok(store)
}

/// Returns a copy with each backbone layer's batch norm folded into its weights.
pub fn fold_store(store: &WeightStore, config: &ModelConfig) -> Result<WeightStore> {
    let mut out = store.clone();
    for layer in config.layers() {
        let bn_name = format!("{}.bn", layer.name);
        if layer.kind == LayerKind::Head || !store.has_batch_norm(&bn_name) {
            continue;
        }
        let wname = format!("{}.weight", layer.name);
        let bname = format!("{}.bias", layer.name);
        let bn = store.batch_norm(&bn_name, layer.spec.out_ch)?;
        let (w, b) = fold_batchnorm(store.get(&wname)?, store.get(&bname)?.data(), &bn)?;
        out.insert(wname, w);
        out.insert(bname.clone(), Tensor::from_vec(&[b.len()], b)?);
        out.remove_batch_norm(&bn_name);
    }
    Ok(out)
}

pub(crate) fn encode_weights(store: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.tensors.len() as u32).to_le_bytes());
    for (name, t) in &store.tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name `{name}` too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.dims();
        out.push(match t {
            StoredTensor::F32(_) => 0,
            StoredTensor::I8(_) => 1,
        });
        out.push(
            u8::try_from(dims.len())
                .map_err(|_| Error::Format(format!("tensor `{name}` has too many dims")))?,
        );
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match t {
            StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            StoredTensor::I8(t) => out.extend(t.data().iter().map(|&v| v as u8)),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, tensor: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                tensor: tensor.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, t: &str) -> Result<u8> {
        Ok(self.take(1, t)?[0])
    }

    fn u16(&mut self, t: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, t)?.try_into().unwrap()))
    }

    fn u32(&mut self, t: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, t)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic: not a PPW1 weight file".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let count = r.u32("<header>")?;
    let mut store = WeightStore::default();
    for i in 0..count {
        let placeholder = format!("<tensor #{i}>");
        let name_len = r.u16(&placeholder)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &placeholder)?)
            .map_err(|_| Error::Format(format!("{placeholder}: name is not UTF-8")))?
            .to_string();
        let dtype = r.u8(&name)?;
        let ndim = r.u8(&name)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32(&name)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` dims overflow")))?;
        let t = match dtype {
            0 => {
                let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Truncated { tensor: name.clone() })?, &name)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                StoredTensor::F32(Tensor::from_vec(&dims, data)?)
            }
            1 => {
                let raw = r.take(n, &name)?;
                StoredTensor::I8(Tensor::from_vec(&dims, raw.iter().map(|&b| b as i8).collect())?)
            }
            other => {
                return Err(Error::Format(format!(
                    "tensor `{name}` has unknown dtype {other}"
                )))
            }
        };
        if store.tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk();
        c.grid.out_channels = 4;
        c.blocks.iter_mut().for_each(|b| b.channels = 4);
        c.up_channels = 4;
        c
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = tiny();
        let a = init_random_weights(&c, 7).unwrap();
        assert_eq!(a, init_random_weights(&c, 7).unwrap());
        assert_ne!(a, init_random_weights(&c, 8).unwrap());
        a.check_against(&c).unwrap();
    }

    #[test]
    fn init_respects_glorot_bound() {
        let c = tiny();
        let s = init_random_weights(&c, 1).unwrap();
        for layer in c.layers() {
            let sp = layer.spec;
            let kk = (sp.kernel * sp.kernel) as f64;
            let bound = (6.0 / ((sp.in_ch as f64 + sp.out_ch as f64) * kk)).sqrt() as f32;
            let w = s.get(&format!("{}.weight", layer.name)).unwrap();
            assert!(w.data().iter().all(|v| v.abs() <= bound));
            assert!(s.get(&format!("{}.bias", layer.name)).unwrap().data().iter().all(|&v| v == 0.0));
        }
        let bound = (6.0f64 / (9.0 + 4.0)).sqrt() as f32;
        assert!(s.get("pfn.linear").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn byte_round_trip_with_int8() {
        let mut s = init_random_weights(&tiny(), 3).unwrap();
        s.insert_i8("extra.q", Tensor::from_vec(&[3], vec![-127i8, 0, 5]).unwrap());
        let bytes = encode_weights(&s).unwrap();
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_and_trailing() {
        let s = init_random_weights(&tiny(), 3).unwrap();
        let mut bytes = encode_weights(&s).unwrap();
        bytes.push(0);
        assert!(matches!(decode_weights(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let mut s = WeightStore::default();
        s.insert("a", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        s.insert("b", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let bytes = encode_weights(&s).unwrap();
        // header 8, "a": 2 + 1 + 2 + 4 + 8 = 17, then "b" header 2 + 1 + 2 + 4
        let b_data = 8 + 17 + 9;
        let err = decode_weights(&bytes[..b_data + 5]).unwrap_err();
        match err {
            Error::Truncated { tensor } => assert_eq!(tensor, "b"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn folding_drops_batch_norm() {
        let c = tiny();
        let s = init_random_weights(&c, 2).unwrap();
        let f = fold_store(&s, &c).unwrap();
        f.check_against(&c).unwrap();
        assert!(!f.has_batch_norm("block0.conv0.bn"));
        assert!(f.has_batch_norm("pfn.bn"));
    }

    #[test]
    fn shape_check_catches_mismatch() {
        let c = tiny();
        let mut s = init_random_weights(&c, 2).unwrap();
        s.insert("block0.conv0.weight", Tensor::zeros(&[4, 4, 1, 1]));
        assert!(s.check_against(&c).is_err());
    }
}
