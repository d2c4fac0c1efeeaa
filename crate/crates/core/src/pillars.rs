//! Pillar encoding: bin points into vertical columns, decorate each point,
//! run the per-point feature network, max-pool per pillar and scatter the
//! result onto a dense pseudo-image.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::PointCloud;
use crate::model::WeightStore;
use crate::tensor::{BatchNorm, Tensor};

/// Per-point feature width: (x, y, z, r, xc, yc, zc, xp, yp).
pub const POINT_FEATURES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub pillar_size: f64,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
    pub in_features: usize,
    pub out_channels: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_min: 0.0,
            x_max: 69.12,
            y_min: -39.68,
            y_max: 39.68,
            z_min: -3.0,
            z_max: 1.0,
            pillar_size: 0.16,
            max_pillars: 12000,
            max_points_per_pillar: 32,
            in_features: POINT_FEATURES,
            out_channels: 64,
        }
    }
}

fn integral_cells(span: f64, size: f64) -> Option<usize> {
    let n = span / size;
    let r = n.round();
    ((n - r).abs() < 1e-6 && r >= 1.0).then_some(r as usize)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("grid: {m}")));
        if !(self.x_max > self.x_min && self.y_max > self.y_min && self.z_max > self.z_min) {
            return bad("empty extent");
        }
        if !(self.pillar_size > 0.0) {
            return bad("pillar_size must be > 0");
        }
        if integral_cells(self.x_max - self.x_min, self.pillar_size).is_none()
            || integral_cells(self.y_max - self.y_min, self.pillar_size).is_none()
        {
            return bad("extent is not a whole number of pillars");
        }
        if self.max_pillars == 0 || self.max_points_per_pillar == 0 || self.out_channels == 0 {
            return bad("max_pillars, max_points_per_pillar and out_channels must be > 0");
        }
        if self.in_features != POINT_FEATURES {
            return bad("in_features must be 9");
        }
        Ok(())
    }

    /// Number of pillar columns along x.
    pub fn width(&self) -> usize {
        integral_cells(self.x_max - self.x_min, self.pillar_size).unwrap_or(0)
    }

    /// Number of pillar rows along y.
    pub fn height(&self) -> usize {
        integral_cells(self.y_max - self.y_min, self.pillar_size).unwrap_or(0)
    }

    /// Pillar (ix, iy) holding a point, or `None` outside the half-open extent.
    pub fn pillar_of(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max)
            || !(y >= self.y_min && y < self.y_max)
            || !(z >= self.z_min && z < self.z_max)
        {
            return None;
        }
        let ix = ((x - self.x_min) / self.pillar_size).floor() as usize;
        let iy = ((y - self.y_min) / self.pillar_size).floor() as usize;
        (ix < self.width() && iy < self.height()).then_some((ix, iy))
    }

    pub fn pillar_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.pillar_size,
            self.y_min + (iy as f64 + 0.5) * self.pillar_size,
        )
    }
}

/// Points grouped by pillar. Only occupied pillars are materialized:
/// `features` is `[n_occupied, Npp, 9]`, rows past `n_points[i]` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarBatch {
    pub features: Vec<f32>,
    /// (ix, iy) per occupied pillar, ascending by (iy, ix).
    pub indices: Vec<(usize, usize)>,
    pub n_points: Vec<usize>,
    pub max_points_per_pillar: usize,
}

impl PillarBatch {
    pub fn n_occupied(&self) -> usize {
        self.indices.len()
    }

    fn stride(&self) -> usize {
        self.max_points_per_pillar * POINT_FEATURES
    }

    /// Feature row of point `k` in pillar `p`.
    pub fn point(&self, p: usize, k: usize) -> &[f32] {
        let off = p * self.stride() + k * POINT_FEATURES;
        &self.features[off..off + POINT_FEATURES]
    }

    fn point_mut(&mut self, p: usize, k: usize) -> &mut [f32] {
        let off = p * self.stride() + k * POINT_FEATURES;
        &mut self.features[off..off + POINT_FEATURES]
    }
}

pub fn pillarize(cloud: &PointCloud, grid: &GridSpec) -> Result<PillarBatch> {
    grid.validate()?;
    let npp = grid.max_points_per_pillar;
    // (iy, ix) -> (arrival count, kept point indices)
    let mut cells: BTreeMap<(usize, usize), (usize, Vec<usize>)> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let Some((ix, iy)) = grid.pillar_of(p.x as f64, p.y as f64, p.z as f64) else {
            continue;
        };
        let entry = cells.entry((iy, ix)).or_default();
        entry.0 += 1;
        if entry.1.len() < npp {
            entry.1.push(i);
        }
    }

    let mut kept: Vec<((usize, usize), (usize, Vec<usize>))> = cells.into_iter().collect();
    if kept.len() > grid.max_pillars {
        // densest first; the stable sort keeps (iy, ix) order among equals
        kept.sort_by_key(|(_, (n, _))| std::cmp::Reverse(*n));
        kept.truncate(grid.max_pillars);
        kept.sort_by_key(|(key, _)| *key);
    }

    let mut batch = PillarBatch {
        features: vec![0.0; kept.len() * npp * POINT_FEATURES],
        indices: Vec::with_capacity(kept.len()),
        n_points: Vec::with_capacity(kept.len()),
        max_points_per_pillar: npp,
    };
    for (slot, ((iy, ix), (_, pts))) in kept.into_iter().enumerate() {
        batch.indices.push((ix, iy));
        batch.n_points.push(pts.len());
        for (k, &pi) in pts.iter().enumerate() {
            let p = cloud.points[pi];
            batch.point_mut(slot, k)[..4].copy_from_slice(&[p.x, p.y, p.z, p.r]);
        }
    }
    Ok(batch)
}

/// Fills the cluster-offset (xc, yc, zc) and pillar-center-offset (xp, yp) slots.
pub fn augment_features(mut batch: PillarBatch, grid: &GridSpec) -> PillarBatch {
    for p in 0..batch.n_occupied() {
        let n = batch.n_points[p];
        if n == 0 {
            continue;
        }
        let mut mean = [0.0f64; 3];
        for k in 0..n {
            let row = batch.point(p, k);
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let (ix, iy) = batch.indices[p];
        let (px, py) = grid.pillar_center(ix, iy);
        for k in 0..n {
            let row = batch.point_mut(p, k);
            let (x, y, z) = (row[0] as f64, row[1] as f64, row[2] as f64);
            row[4] = (x - mean[0]) as f32;
            row[5] = (y - mean[1]) as f32;
            row[6] = (z - mean[2]) as f32;
            row[7] = (x - px) as f32;
            row[8] = (y - py) as f32;
        }
    }
    batch
}

/// Linear + batch norm + ReLU per point, then max over each pillar's valid points.
/// Returns a `[C, n_occupied]` matrix and the pillar indices it belongs to.
pub fn pfn_forward(
    batch: &PillarBatch,
    weights: &WeightStore,
) -> Result<(Tensor, Vec<(usize, usize)>)> {
    let linear = weights.get("pfn.linear")?;
    let (c, d) = match *linear.dims() {
        [c, d] => (c, d),
        _ => {
            return Err(Error::Shape(format!(
                "pfn.linear must be [C, D], got {:?}",
                linear.dims()
            )))
        }
    };
    if d != POINT_FEATURES {
        return Err(Error::Shape(format!(
            "pfn.linear expects {d} input features, pillars carry {POINT_FEATURES}"
        )));
    }
    let bn = weights.batch_norm("pfn.bn", c)?;
    let affine: Vec<(f32, f32)> = (0..c)
        .map(|o| {
            let inv = 1.0 / (bn.var[o] as f64 + bn.eps as f64).sqrt();
            let m = bn.gamma[o] as f64 * inv;
            (m as f32, (bn.beta[o] as f64 - bn.mean[o] as f64 * m) as f32)
        })
        .collect();
    check_bn(&bn)?;

    let n = batch.n_occupied();
    let w = linear.data();
    let mut out = vec![0.0f32; c * n];
    let mut pooled = vec![0.0f32; c];
    for p in 0..n {
        pooled.fill(0.0);
        for k in 0..batch.n_points[p] {
            let f = batch.point(p, k);
            for (o, (slot, (m, off))) in pooled.iter_mut().zip(&affine).enumerate() {
                let row = &w[o * d..(o + 1) * d];
                let z: f32 = row.iter().zip(f).map(|(a, b)| a * b).sum();
                // ReLU output is >= 0, so a zero start is the max identity
                *slot = slot.max(z * m + off);
            }
        }
        for (o, v) in pooled.iter().enumerate() {
            out[o * n + p] = *v;
        }
    }
    Ok((Tensor::from_vec(&[c, n], out)?, batch.indices.clone()))
}

fn check_bn(bn: &BatchNorm) -> Result<()> {
    if bn.var.iter().any(|v| !(v + bn.eps > 0.0)) {
        return Err(Error::InvalidArgument(
            "pfn.bn variance + eps must be > 0".into(),
        ));
    }
    Ok(())
}

/// Dense `[C, H, W]` feature canvas; the hand-off tensor between CPU encoding
/// and the offloaded backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub data: Tensor,
}

impl PseudoImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        PseudoImage {
            data: Tensor::zeros(&[channels, height, width]),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        match *self.data.dims() {
            [c, h, w] => (c, h, w),
            _ => unreachable!("pseudo-image is always 3-d"),
        }
    }
}

pub fn scatter(
    features: &Tensor,
    indices: &[(usize, usize)],
    grid: &GridSpec,
) -> Result<PseudoImage> {
    let (c, n) = match *features.dims() {
        [c, n] => (c, n),
        _ => return Err(Error::Shape("scatter expects a [C, P] matrix".into())),
    };
    if n != indices.len() {
        return Err(Error::Shape(format!(
            "{n} feature columns for {} pillar indices",
            indices.len()
        )));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut img = PseudoImage::zeros(c, h, w);
    let mut taken = vec![false; h * w];
    let src = features.data();
    let dst = img.data.data_mut();
    for (p, &(ix, iy)) in indices.iter().enumerate() {
        if ix >= w || iy >= h {
            return Err(Error::Shape(format!(
                "pillar index ({ix}, {iy}) outside {w}x{h} grid"
            )));
        }
        let cell = iy * w + ix;
        if std::mem::replace(&mut taken[cell], true) {
            return Err(Error::Shape(format!("duplicate pillar index ({ix}, {iy})")));
        }
        for ch in 0..c {
            dst[ch * h * w + cell] = src[ch * n + p];
        }
    }
    Ok(img)
}

/// Whole CPU pre-stage: pillarize, decorate, encode and scatter one frame.
pub fn encode(cloud: &PointCloud, grid: &GridSpec, weights: &WeightStore) -> Result<PseudoImage> {
    let batch = augment_features(pillarize(cloud, grid)?, grid);
    let (features, indices) = pfn_forward(&batch, weights)?;
    if features.dims()[0] != grid.out_channels {
        return Err(Error::Shape(format!(
            "encoder produces {} channels, grid expects {}",
            features.dims()[0],
            grid.out_channels
        )));
    }
    scatter(&features, &indices, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{flip_y, gen_synthetic_scene, Point, SynthParams};
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid() -> GridSpec {
        GridSpec {
            x_min: 0.0,
            x_max: 8.0,
            y_min: 0.0,
            y_max: 8.0,
            z_min: -3.0,
            z_max: 3.0,
            pillar_size: 1.0,
            max_pillars: 100,
            max_points_per_pillar: 4,
            in_features: 9,
            out_channels: 9,
        }
    }

    fn store_with(linear: Tensor, bn: BatchNorm) -> WeightStore {
        let mut s = WeightStore::default();
        s.insert("pfn.linear", linear);
        s.insert_batch_norm("pfn.bn", &bn);
        s
    }

    fn identity_store() -> WeightStore {
        let mut eye = vec![0.0; 81];
        for i in 0..9 {
            eye[i * 9 + i] = 1.0;
        }
        store_with(
            Tensor::from_vec(&[9, 9], eye).unwrap(),
            BatchNorm::identity(9, 0.0),
        )
    }

    #[test]
    fn default_grid_dims() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!((g.width(), g.height()), (432, 496));
    }

    #[test]
    fn pillar_index_arithmetic() {
        let g = GridSpec::default();
        let cloud = PointCloud::new(0, vec![Point::new(0.08, 0.08, 0.0, 0.5)]);
        let b = pillarize(&cloud, &g).unwrap();
        assert_eq!(b.indices, vec![(0, 248)]);
        assert_eq!(b.point(0, 0)[..4], [0.08, 0.08, 0.0, 0.5]);
    }

    #[test]
    fn half_open_extent() {
        let g = unit_grid();
        let cloud = PointCloud::new(
            0,
            vec![
                Point::new(8.0, 1.0, 0.0, 0.0),
                Point::new(1.0, 8.0, 0.0, 0.0),
                Point::new(1.0, 1.0, 3.0, 0.0),
                Point::new(-0.01, 1.0, 0.0, 0.0),
                Point::new(7.999, 7.999, -3.0, 0.0),
            ],
        );
        let b = pillarize(&cloud, &g).unwrap();
        assert_eq!(b.indices, vec![(7, 7)]);
    }

    #[test]
    fn empty_cloud() {
        let b = pillarize(&PointCloud::default(), &GridSpec::default()).unwrap();
        assert_eq!(b.n_occupied(), 0);
        assert!(b.features.is_empty());
    }

    #[test]
    fn capacity_truncation_keeps_arrival_order() {
        let g = GridSpec {
            max_points_per_pillar: 2,
            ..unit_grid()
        };
        let pts = (0..3).map(|i| Point::new(1.1 + 0.1 * i as f32, 1.5, 0.0, 0.0)).collect();
        let b = pillarize(&PointCloud::new(0, pts), &g).unwrap();
        assert_eq!(b.n_points, vec![2]);
        assert_eq!(b.point(0, 0)[0], 1.1);
        assert_eq!(b.point(0, 1)[0], 1.2);
    }

    #[test]
    fn overflow_keeps_densest_pillars() {
        let g = GridSpec {
            max_pillars: 2,
            ..unit_grid()
        };
        let mut pts = vec![Point::new(0.5, 0.5, 0.0, 0.0)];
        pts.extend((0..3).map(|_| Point::new(5.5, 5.5, 0.0, 0.0)));
        pts.extend((0..2).map(|_| Point::new(2.5, 6.5, 0.0, 0.0)));
        pts.push(Point::new(3.5, 0.5, 0.0, 0.0));
        let b = pillarize(&PointCloud::new(0, pts), &g).unwrap();
        assert_eq!(b.indices, vec![(5, 5), (2, 6)]);

        // ties resolve to the lower (iy, ix)
        let g1 = GridSpec {
            max_pillars: 1,
            ..unit_grid()
        };
        let pts = vec![Point::new(3.5, 0.5, 0.0, 0.0), Point::new(0.5, 0.5, 0.0, 0.0)];
        let b = pillarize(&PointCloud::new(0, pts), &g1).unwrap();
        assert_eq!(b.indices, vec![(0, 0)]);
    }

    #[test]
    fn decoration_values() {
        let g = unit_grid();
        let pts = vec![Point::new(1.0, 2.0, 0.0, 0.5), Point::new(1.2, 2.2, 0.2, 0.7)];
        let b = augment_features(pillarize(&PointCloud::new(0, pts), &g).unwrap(), &g);
        assert_eq!(b.indices, vec![(1, 2)]);
        let row = b.point(0, 0);
        let expect = [1.0, 2.0, 0.0, 0.5, -0.1, -0.1, -0.1, -0.5, -0.5];
        for (a, e) in row.iter().zip(expect) {
            assert!((a - e).abs() < 1e-6, "{row:?}");
        }

        let single = PointCloud::new(0, vec![Point::new(3.3, 4.4, 1.0, 0.1)]);
        let b = augment_features(pillarize(&single, &g).unwrap(), &g);
        assert_eq!(b.point(0, 0)[4..7], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn cluster_offsets_sum_to_zero() {
        let (cloud, _) = gen_synthetic_scene(&SynthParams::default()).unwrap();
        let g = GridSpec::default();
        let b = augment_features(pillarize(&cloud, &g).unwrap(), &g);
        for p in 0..b.n_occupied() {
            let mut s = [0.0f64; 3];
            for k in 0..b.n_points[p] {
                for j in 0..3 {
                    s[j] += b.point(p, k)[4 + j] as f64;
                }
            }
            assert!(s.iter().all(|v| v.abs() < 1e-5), "{s:?}");
            for k in b.n_points[p]..b.max_points_per_pillar {
                assert!(b.point(p, k).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn pfn_identity_path() {
        let g = unit_grid();
        let cloud = PointCloud::new(0, vec![Point::new(1.7, 2.9, 0.3, 0.5)]);
        let b = augment_features(pillarize(&cloud, &g).unwrap(), &g);
        let (f, idx) = pfn_forward(&b, &identity_store()).unwrap();
        assert_eq!(idx, vec![(1, 2)]);
        assert_eq!(f.dims(), &[9, 1]);
        let expect = b.point(0, 0);
        for (a, e) in f.data().iter().zip(expect) {
            assert_eq!(*a, e.max(0.0));
        }
        // xp, yp are positive here so the identity survives ReLU unchanged
        assert!(expect[7] > 0.0 && expect[8] > 0.0);
    }

    #[test]
    fn pfn_max_over_points_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridSpec {
            out_channels: 5,
            ..unit_grid()
        };
        let lin = Tensor::from_vec(&[5, 9], (0..45).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let bn = BatchNorm {
            gamma: vec![1.5, 0.5, 1.0, 2.0, 1.0],
            beta: vec![0.1, -0.2, 0.0, 0.3, -1.0],
            mean: vec![0.0, 0.1, -0.1, 0.2, 0.0],
            var: vec![1.0, 0.5, 2.0, 1.0, 0.25],
            eps: 1e-3,
        };
        let store = store_with(lin.clone(), bn.clone());
        let pts = vec![Point::new(1.1, 1.2, 0.5, 0.2), Point::new(1.8, 1.4, -0.4, 0.9)];
        let b = augment_features(pillarize(&PointCloud::new(0, pts), &g).unwrap(), &g);
        let (f, _) = pfn_forward(&b, &store).unwrap();
        for o in 0..5 {
            let mut best = f64::NEG_INFINITY;
            for k in 0..2 {
                let z: f64 = (0..9)
                    .map(|j| lin.data()[o * 9 + j] as f64 * b.point(0, k)[j] as f64)
                    .sum();
                let y = (z - bn.mean[o] as f64) / (bn.var[o] as f64 + 1e-3).sqrt()
                    * bn.gamma[o] as f64
                    + bn.beta[o] as f64;
                best = best.max(y.max(0.0));
            }
            assert!((f.data()[o] as f64 - best).abs() < 1e-5);
        }
    }

    #[test]
    fn pfn_relu_floor_and_pad_poisoning() {
        let g = unit_grid();
        let neg = store_with(
            Tensor::from_vec(&[9, 9], vec![0.0; 81]).unwrap(),
            BatchNorm {
                beta: vec![-1.0; 9],
                ..BatchNorm::identity(9, 0.0)
            },
        );
        let cloud = PointCloud::new(0, vec![Point::new(1.5, 1.5, 0.0, 0.5)]);
        let b = augment_features(pillarize(&cloud, &g).unwrap(), &g);
        let (f, _) = pfn_forward(&b, &neg).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));

        let (scene, _) = gen_synthetic_scene(&SynthParams::default()).unwrap();
        let g = GridSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = store_with(
            Tensor::from_vec(&[64, 9], (0..576).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
            BatchNorm::identity(64, 1e-3),
        );
        let b = augment_features(pillarize(&scene, &g).unwrap(), &g);
        let (clean, _) = pfn_forward(&b, &store).unwrap();
        let mut poisoned = b.clone();
        for p in 0..poisoned.n_occupied() {
            for k in poisoned.n_points[p]..poisoned.max_points_per_pillar {
                poisoned.point_mut(p, k).fill(-1e6);
            }
        }
        let (shadow, _) = pfn_forward(&poisoned, &store).unwrap();
        assert_eq!(clean, shadow);
    }

    #[test]
    fn pfn_shape_mismatch() {
        let store = store_with(
            Tensor::from_vec(&[4, 8], vec![0.0; 32]).unwrap(),
            BatchNorm::identity(4, 0.0),
        );
        let g = unit_grid();
        let b = pillarize(&PointCloud::default(), &g).unwrap();
        assert!(pfn_forward(&b, &store).is_err());
    }

    #[test]
    fn scatter_single_and_empty() {
        let g = unit_grid();
        let f = Tensor::from_vec(&[2, 1], vec![7.0, -1.0]).unwrap();
        let img = scatter(&f, &[(3, 5)], &g).unwrap();
        let d = img.data.data();
        let (h, w) = (8, 8);
        assert_eq!(d[5 * w + 3], 7.0);
        assert_eq!(d[h * w + 5 * w + 3], -1.0);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 2);

        let empty = Tensor::from_vec(&[2, 0], vec![]).unwrap();
        let img = scatter(&empty, &[], &g).unwrap();
        assert!(img.data.data().iter().all(|&v| v == 0.0));

        let dup = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(scatter(&dup, &[(1, 1), (1, 1)], &g).is_err());
    }

    #[test]
    fn scatter_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GridSpec::default();
        let mut cells: Vec<(usize, usize)> = (0..500)
            .map(|_| (rng.random_range(0..432), rng.random_range(0..496)))
            .collect();
        cells.sort();
        cells.dedup();
        let n = cells.len();
        let f = Tensor::from_vec(&[3, n], (0..3 * n).map(|_| rng.random_range(0.1f32..2.0)).collect())
            .unwrap();
        let img = scatter(&f, &cells, &g).unwrap();
        let plane = 432 * 496;
        for ch in 0..3 {
            let a: f64 = img.data.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).sum();
            let b: f64 = f.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).sum();
            assert!((a - b).abs() < 1e-6);
            let nz = img.data.data()[ch * plane..(ch + 1) * plane].iter().filter(|&&v| v != 0.0).count();
            assert_eq!(nz, n);
        }
    }

    /// Encoder whose output ignores the sign-carrying y features.
    fn y_blind_store(c: usize, seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f32> = (0..c * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        for o in 0..c {
            for j in [1, 5, 8] {
                w[o * 9 + j] = 0.0;
            }
        }
        store_with(Tensor::from_vec(&[c, 9], w).unwrap(), BatchNorm::identity(c, 1e-3))
    }

    #[test]
    fn flip_equivariance_on_mirror_grid() {
        let g = GridSpec {
            out_channels: 8,
            ..GridSpec::default()
        };
        let store = y_blind_store(8, 21);
        for seed in 0..3 {
            let (mut cloud, labels) = gen_synthetic_scene(&SynthParams {
                seed,
                ..Default::default()
            })
            .unwrap();
            // keep points away from pillar edges so the mirror maps cells exactly
            for p in cloud.points.iter_mut() {
                let frac = ((p.y as f64 - g.y_min) / g.pillar_size).fract();
                if !(0.05..0.95).contains(&frac) {
                    p.y += (0.5 - frac as f32) * g.pillar_size as f32;
                }
            }
            let (flipped, _) = flip_y(&cloud, &labels);
            let a = encode(&cloud, &g, &store).unwrap();
            let b = encode(&flipped, &g, &store).unwrap();
            let (c, h, w) = a.dims();
            for ch in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let va = a.data.data()[(ch * h + iy) * w + ix];
                        let vb = b.data.data()[(ch * h + (h - 1 - iy)) * w + ix];
                        assert!((va - vb).abs() < 1e-5, "ch {ch} ({ix},{iy}): {va} vs {vb}");
                    }
                }
            }
        }
    }

    #[test]
    fn point_order_is_irrelevant_below_capacity() {
        let g = GridSpec {
            out_channels: 8,
            max_points_per_pillar: 256,
            ..GridSpec::default()
        };
        let store = y_blind_store(8, 5);
        let (cloud, _) = gen_synthetic_scene(&SynthParams::default()).unwrap();
        let mut shuffled = cloud.clone();
        shuffled.points.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
        let a = encode(&cloud, &g, &store).unwrap();
        let b = encode(&shuffled, &g, &store).unwrap();
        assert!(a.data.is_finite());
        for (x, y) in a.data.data().iter().zip(b.data.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
