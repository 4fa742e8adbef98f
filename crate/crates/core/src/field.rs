//! Dense voxel radiance field with trilinear interpolation of raw parameters.
//!
//! Raw parameters live at grid nodes spanning the bounding box corner to
//! corner. A query interpolates the raw values first and only then applies the
//! activations (softplus for density, logistic for color).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

/// Raw density every node starts from; softplus(-2) is about 0.127.
pub const INIT_RAW_SIGMA: f64 = -2.0;
/// Color returned for points outside the bounding box.
pub const OUTSIDE_RGB: [f64; 3] = [0.5, 0.5, 0.5];

const CHECKPOINT_MAGIC: &[u8; 4] = b"DSVF";
const CHECKPOINT_VERSION: u32 = 1;

/// Values stored per node: raw density followed by raw RGB.
pub(crate) const CHANNELS: usize = 4;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid resolution must be at least 2 along every axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("bounding box min {min:?} must be below max {max:?} on every axis")]
    BoundingBox { min: [f64; 3], max: [f64; 3] },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a field checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint has {found} parameter bytes, expected {expected}")]
    Truncated { expected: usize, found: usize },
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lower grid corner of a query plus its fractional offset inside the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHandle {
    base: [usize; 3],
    frac: [f64; 3],
}

impl GridHandle {
    /// The 8 contributing `(node index, trilinear weight)` pairs.
    pub fn corners(&self, dims: [usize; 3]) -> [(usize, f64); 8] {
        let [fx, fy, fz] = self.frac;
        let [bx, by, bz] = self.base;
        let mut out = [(0usize, 0.0f64); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            let w = (if dx == 1 { fx } else { 1.0 - fx })
                * (if dy == 1 { fy } else { 1.0 - fy })
                * (if dz == 1 { fz } else { 1.0 - fz });
            *slot = (node_index(dims, bx + dx, by + dy, bz + dz), w);
        }
        out
    }
}

#[inline]
fn node_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Activated field values at a point plus what backprop needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
    /// `None` outside the bounding box.
    pub handle: Option<GridHandle>,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        sigma: 0.0,
        rgb: OUTSIDE_RGB,
        handle: None,
    };

    /// d sigma / d raw, written in terms of the activated density:
    /// softplus'(r) = logistic(r) = 1 - exp(-softplus(r)).
    #[inline]
    pub fn sigma_slope(&self) -> f64 {
        -(-self.sigma).exp_m1()
    }

    #[inline]
    pub fn rgb_slope(&self) -> [f64; 3] {
        self.rgb.map(|c| c * (1.0 - c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    dims: [usize; 3],
    bbox_min: Vector3<f64>,
    bbox_max: Vector3<f64>,
    // per node: [raw_sigma, raw_r, raw_g, raw_b], x fastest
    params: Vec<f64>,
}

impl VoxelField {
    /// Field initialised to near-transparent mid-gray.
    pub fn new(
        dims: [usize; 3],
        bbox_min: Vector3<f64>,
        bbox_max: Vector3<f64>,
    ) -> Result<Self, FieldError> {
        Self::filled(dims, bbox_min, bbox_max, INIT_RAW_SIGMA, [0.0; 3])
    }

    pub fn filled(
        dims: [usize; 3],
        bbox_min: Vector3<f64>,
        bbox_max: Vector3<f64>,
        raw_sigma: f64,
        raw_rgb: [f64; 3],
    ) -> Result<Self, FieldError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(FieldError::Resolution(dims));
        }
        if (0..3).any(|i| {
            !(bbox_min[i] < bbox_max[i]) || !bbox_max[i].is_finite() || !bbox_min[i].is_finite()
        }) {
            return Err(FieldError::BoundingBox {
                min: bbox_min.into(),
                max: bbox_max.into(),
            });
        }
        let n = dims.iter().product::<usize>();
        let mut params = Vec::with_capacity(n * CHANNELS);
        for _ in 0..n {
            params.push(raw_sigma);
            params.extend_from_slice(&raw_rgb);
        }
        Ok(Self {
            dims,
            bbox_min,
            bbox_max,
            params,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn bbox_min(&self) -> &Vector3<f64> {
        &self.bbox_min
    }
    pub fn bbox_max(&self) -> &Vector3<f64> {
        &self.bbox_max
    }
    pub fn node_count(&self) -> usize {
        self.params.len() / CHANNELS
    }
    pub fn node_index(&self, x: usize, y: usize, z: usize) -> usize {
        node_index(self.dims, x, y, z)
    }

    /// World position of a grid node.
    pub fn node_position(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let ext = self.bbox_max - self.bbox_min;
        let idx = [x, y, z];
        Vector3::from_fn(|i, _| {
            self.bbox_min[i] + ext[i] * idx[i] as f64 / (self.dims[i] - 1) as f64
        })
    }

    pub fn raw_sigma(&self, node: usize) -> f64 {
        self.params[node * CHANNELS]
    }
    pub fn set_raw_sigma(&mut self, node: usize, value: f64) {
        self.params[node * CHANNELS] = value;
    }
    pub fn raw_rgb(&self, node: usize) -> [f64; 3] {
        let p = &self.params[node * CHANNELS + 1..node * CHANNELS + 4];
        [p[0], p[1], p[2]]
    }
    pub fn set_raw_rgb(&mut self, node: usize, value: [f64; 3]) {
        self.params[node * CHANNELS + 1..node * CHANNELS + 4].copy_from_slice(&value);
    }

    /// Flat parameter vector, 4 values per node.
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| x[i] >= self.bbox_min[i] && x[i] <= self.bbox_max[i])
    }

    pub fn locate(&self, x: &Vector3<f64>) -> Option<GridHandle> {
        if !self.contains(x) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for i in 0..3 {
            let cells = (self.dims[i] - 1) as f64;
            let g = (x[i] - self.bbox_min[i]) / (self.bbox_max[i] - self.bbox_min[i]) * cells;
            let b = (g.floor().max(0.0) as usize).min(self.dims[i] - 2);
            base[i] = b;
            frac[i] = (g - b as f64).clamp(0.0, 1.0);
        }
        Some(GridHandle { base, frac })
    }

    pub fn sample(&self, x: &Vector3<f64>) -> FieldSample {
        let Some(handle) = self.locate(x) else {
            return FieldSample::EMPTY;
        };
        let mut raw = [0.0f64; CHANNELS];
        for (node, w) in handle.corners(self.dims) {
            let p = &self.params[node * CHANNELS..node * CHANNELS + CHANNELS];
            for c in 0..CHANNELS {
                raw[c] += w * p[c];
            }
        }
        FieldSample {
            sigma: softplus(raw[0]),
            rgb: [logistic(raw[1]), logistic(raw[2]), logistic(raw[3])],
            handle: Some(handle),
        }
    }

    /// Raw (pre-activation) interpolated values `[sigma, r, g, b]`.
    pub fn sample_raw(&self, x: &Vector3<f64>) -> Option<[f64; CHANNELS]> {
        let handle = self.locate(x)?;
        let mut raw = [0.0f64; CHANNELS];
        for (node, w) in handle.corners(self.dims) {
            for c in 0..CHANNELS {
                raw[c] += w * self.params[node * CHANNELS + c];
            }
        }
        Some(raw)
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(&mut file)
    }

    /// `DSVF` checkpoint: magic, version, resolution, bbox, then raw sigma and
    /// raw rgb as little-endian f32 in x-fastest node order.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), FieldError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.bbox_min.iter().chain(self.bbox_max.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        let n = self.node_count();
        let mut buf = Vec::with_capacity(n * CHANNELS * 4);
        for node in 0..n {
            buf.extend_from_slice(&(self.raw_sigma(node) as f32).to_le_bytes());
        }
        for node in 0..n {
            for c in self.raw_rgb(node) {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self, FieldError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(FieldError::BadMagic(magic));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let version = u32::from_le_bytes(u);
        if version != CHECKPOINT_VERSION {
            return Err(FieldError::Version(version));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut u)?;
            *d = u32::from_le_bytes(u) as usize;
        }
        let mut bbox = [0.0f64; 6];
        let mut f = [0u8; 8];
        for b in &mut bbox {
            r.read_exact(&mut f)?;
            *b = f64::from_le_bytes(f);
        }
        let mut field = Self::filled(
            dims,
            Vector3::new(bbox[0], bbox[1], bbox[2]),
            Vector3::new(bbox[3], bbox[4], bbox[5]),
            0.0,
            [0.0; 3],
        )?;
        let n = field.node_count();
        let expected = n * CHANNELS * 4;
        let mut buf = Vec::with_capacity(expected);
        r.take(expected as u64).read_to_end(&mut buf)?;
        if buf.len() != expected {
            return Err(FieldError::Truncated {
                expected,
                found: buf.len(),
            });
        }
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        for node in 0..n {
            field.set_raw_sigma(node, vals[node]);
            let o = n + node * 3;
            field.set_raw_rgb(node, [vals[o], vals[o + 1], vals[o + 2]]);
        }
        Ok(field)
    }
}

/// Gradient buffer with the same layout as [`VoxelField::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros_like(field: &VoxelField) -> Self {
        Self {
            dims: field.dims,
            data: vec![0.0; field.params.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn raw_sigma(&self, node: usize) -> f64 {
        self.data[node * CHANNELS]
    }

    pub fn raw_rgb(&self, node: usize) -> [f64; 3] {
        let p = &self.data[node * CHANNELS + 1..node * CHANNELS + 4];
        [p[0], p[1], p[2]]
    }

    /// Chains `d_sigma` and `d_rgb` through the activations and trilinear
    /// weights of `sample` into the raw-parameter gradient.
    pub fn accumulate(&mut self, sample: &FieldSample, d_sigma: f64, d_rgb: [f64; 3]) {
        let Some(handle) = sample.handle else {
            return;
        };
        let ds = d_sigma * sample.sigma_slope();
        let slope = sample.rgb_slope();
        let dc = [
            d_rgb[0] * slope[0],
            d_rgb[1] * slope[1],
            d_rgb[2] * slope[2],
        ];
        self.scatter(&handle, [ds, dc[0], dc[1], dc[2]]);
    }

    /// Adds `w_i * d_raw` to each of the 8 corner nodes of `handle`.
    pub(crate) fn scatter(&mut self, handle: &GridHandle, d_raw: [f64; CHANNELS]) {
        assert!(
            (0..3).all(|i| handle.base[i] + 1 < self.dims[i]),
            "grid handle {handle:?} does not belong to a field of dims {:?}",
            self.dims
        );
        for (node, w) in handle.corners(self.dims) {
            let slot = &mut self.data[node * CHANNELS..node * CHANNELS + CHANNELS];
            for c in 0..CHANNELS {
                slot[c] += w * d_raw[c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_field(dims: [usize; 3]) -> VoxelField {
        VoxelField::new(dims, Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> VoxelField {
        let mut f = VoxelField::new(
            dims,
            Vector3::new(-1.0, -2.0, 0.5),
            Vector3::new(1.0, 0.0, 3.0),
        )
        .unwrap();
        for p in f.params_mut() {
            *p = rng.gen_range(-3.0..3.0);
        }
        f
    }

    #[test]
    fn activations() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(0.5) - 0.974_076_984_180_107_4).abs() < 1e-12);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
    }

    #[test]
    fn constant_field_density() {
        let f = VoxelField::filled(
            [4, 5, 6],
            Vector3::zeros(),
            Vector3::new(1.0, 2.0, 3.0),
            0.0,
            [0.0; 3],
        )
        .unwrap();
        let s = f.sample(&Vector3::new(0.3, 1.7, 2.2));
        assert!((s.sigma - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.rgb, [0.5; 3]);
    }

    #[test]
    fn initialization_is_near_transparent() {
        let s = unit_field([3, 3, 3]).sample(&Vector3::new(0.5, 0.5, 0.5));
        assert!((s.sigma - 0.126_928_011_042_972_1).abs() < 1e-12);
        assert_eq!(s.rgb, [0.5; 3]);
    }

    #[test]
    fn node_query_is_one_hot() {
        let f = unit_field([5, 5, 5]);
        let h = f.locate(&Vector3::new(0.25, 0.5, 0.75)).unwrap();
        let corners = h.corners(f.dims());
        let target = f.node_index(1, 2, 3);
        for (node, w) in corners {
            if node == target {
                assert_eq!(w, 1.0);
            } else {
                assert_eq!(w, 0.0);
            }
        }
        // upper boundary is inside and maps to the last node
        let h = f.locate(&Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let last = f.node_index(4, 4, 4);
        assert!(h
            .corners(f.dims())
            .iter()
            .any(|&(n, w)| n == last && w == 1.0));
    }

    #[test]
    fn edge_midpoint() {
        let mut f = VoxelField::filled(
            [2, 2, 2],
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.0,
            [0.0; 3],
        )
        .unwrap();
        let a = f.node_index(1, 0, 0);
        f.set_raw_sigma(a, 1.0);
        let s = f.sample(&Vector3::new(0.5, 0.0, 0.0));
        assert!((s.sigma - softplus(0.5)).abs() < 1e-15);
        assert!((s.sigma - 0.9741).abs() < 1e-4);
    }

    #[test]
    fn outside_bbox() {
        let f = unit_field([3, 3, 3]);
        let s = f.sample(&Vector3::new(1.0 + 1e-12, 0.5, 0.5));
        assert_eq!(s, FieldSample::EMPTY);
        assert!(s.handle.is_none());
    }

    #[test]
    fn weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = VoxelField::filled(
            [7, 3, 9],
            Vector3::new(-1.0, -1.0, -1.0),
            Vector3::new(2.0, 0.5, 4.0),
            1.25,
            [0.3, -0.2, 0.0],
        )
        .unwrap();
        for _ in 0..1000 {
            let x = Vector3::new(
                rng.gen_range(-1.0..2.0),
                rng.gen_range(-1.0..0.5),
                rng.gen_range(-1.0..4.0),
            );
            let h = f.locate(&x).unwrap();
            let corners = h.corners(f.dims());
            assert!(corners.iter().all(|&(_, w)| w >= 0.0));
            assert!((corners.iter().map(|c| c.1).sum::<f64>() - 1.0).abs() < 1e-12);
            let raw = f.sample_raw(&x).unwrap();
            assert!((raw[0] - 1.25).abs() < 1e-12);
            assert!((raw[1] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cotangent_leaves_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&mut rng, [4, 4, 4]);
        let mut g = FieldGrad::zeros_like(&f);
        g.accumulate(&f.sample(&Vector3::new(0.1, -1.0, 1.0)), 0.0, [0.0; 3]);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_grad() {
        let f = VoxelField::filled(
            [5, 5, 5],
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.0,
            [0.0; 3],
        )
        .unwrap();
        let mut g = FieldGrad::zeros_like(&f);
        g.accumulate(&f.sample(&Vector3::new(0.25, 0.5, 0.75)), 1.0, [0.0; 3]);
        let j = f.node_index(1, 2, 3);
        assert!((g.raw_sigma(j) - 0.5).abs() < 1e-15);
        assert_eq!(g.as_slice().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    #[should_panic(expected = "does not belong")]
    fn mismatched_handle_panics() {
        let big = unit_field([8, 8, 8]);
        let small = unit_field([2, 2, 2]);
        let mut g = FieldGrad::zeros_like(&small);
        g.accumulate(&big.sample(&Vector3::new(0.9, 0.9, 0.9)), 1.0, [0.0; 3]);
    }

    /// Central finite differences of sigma and rgb against the analytic chain rule.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let mut f = random_field(&mut rng, [3, 4, 3]);
            let x = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-2.0..0.0),
                rng.gen_range(0.5..3.0),
            );
            let d_sigma: f64 = rng.gen_range(-1.0..1.0);
            let d_rgb: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let mut g = FieldGrad::zeros_like(&f);
            g.accumulate(&f.sample(&x), d_sigma, d_rgb);
            let objective = |f: &VoxelField| {
                let s = f.sample(&x);
                d_sigma * s.sigma + d_rgb.iter().zip(s.rgb).map(|(a, b)| a * b).sum::<f64>()
            };
            for i in 0..f.params().len() {
                let orig = f.params()[i];
                f.params_mut()[i] = orig + h;
                let up = objective(&f);
                f.params_mut()[i] = orig - h;
                let down = objective(&f);
                f.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.as_slice()[i];
                let scale = an.abs().max(fd.abs());
                if scale > 1e-7 {
                    worst = worst.max((an - fd).abs() / scale);
                } else {
                    assert!((an - fd).abs() < 1e-9);
                }
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn density_monotone_in_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut f = random_field(&mut rng, [3, 3, 3]);
            let x = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-2.0..0.0),
                rng.gen_range(0.5..3.0),
            );
            let before = f.sample(&x).sigma;
            let node = rng.gen_range(0..f.node_count());
            let bump = rng.gen_range(0.0..2.0);
            f.set_raw_sigma(node, f.raw_sigma(node) + bump);
            assert!(f.sample(&x).sigma >= before);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_field(&mut rng, [3, 2, 4]);
        let mut bytes = Vec::new();
        f.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"DSVF");
        assert_eq!(bytes.len(), 4 + 4 + 12 + 48 + 24 * 4 * 4);
        let back = VoxelField::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.dims(), f.dims());
        for (a, b) in back.params().iter().zip(f.params()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        let mut again = Vec::new();
        back.write_checkpoint(&mut again).unwrap();
        assert_eq!(again, bytes);
        assert!(matches!(
            VoxelField::read_checkpoint(&mut &bytes[..bytes.len() - 3]),
            Err(FieldError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            VoxelField::read_checkpoint(&mut bad.as_slice()),
            Err(FieldError::BadMagic(_))
        ));
    }
}
