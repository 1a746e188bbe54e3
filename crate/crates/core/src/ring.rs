//! Fixed-point arithmetic over `Z_{2^l}` and shaped ring tensors.
//!
//! Elements are stored as `u64` words. Every result is reduced modulo `2^l`
//! by masking, so rings narrower than 64 bits (e.g. `l = 8` for exhaustive
//! tests) share the same code path as the default 64-bit ring.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ring `Z_{2^bits}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ring {
    bits: u32,
}

impl Ring {
    pub const R64: Ring = Ring { bits: 64 };

    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(Error::Config(format!("ring width {bits} not in 1..=64")));
        }
        Ok(Ring { bits })
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    #[inline]
    pub fn reduce(self, x: u64) -> u64 {
        x & self.mask()
    }

    /// `2^k mod 2^l`.
    #[inline]
    pub fn pow2(self, k: u32) -> u64 {
        if k >= 64 {
            0
        } else {
            self.reduce(1u64 << k)
        }
    }

    /// Two's-complement reading of an l-bit word.
    #[inline]
    pub fn to_signed(self, x: u64) -> i64 {
        let x = self.reduce(x);
        if self.bits == 64 {
            x as i64
        } else if x >> (self.bits - 1) & 1 == 1 {
            (x | !self.mask()) as i64
        } else {
            x as i64
        }
    }

    #[inline]
    pub fn from_signed(self, x: i64) -> u64 {
        self.reduce(x as u64)
    }

    /// Bytes needed to carry one element on the wire when packed at `l` bits.
    pub fn element_bytes(self) -> u64 {
        u64::from(self.bits.div_ceil(8))
    }
}

/// Ring width `l` and fraction bits `f`.
///
/// `3f + 2 <= l` is required so that a product carrying `3f` fraction bits
/// (two chained multiplications with the intermediate truncation skipped)
/// can still sit inside the sign-safe range `2^{l-2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    l: u32,
    f: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { l: 64, f: 5 }
    }
}

impl FixedPointConfig {
    pub fn new(l: u32, f: u32) -> Result<Self> {
        if l == 0 || l > 64 {
            return Err(Error::Config(format!("l = {l} must be in 1..=64")));
        }
        if f < 1 {
            return Err(Error::Config(format!("f = {f} must be at least 1")));
        }
        if 3 * f + 2 > l {
            return Err(Error::Config(format!("3f + 2 = {} exceeds l = {l}", 3 * f + 2)));
        }
        Ok(FixedPointConfig { l, f })
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    pub fn ring(&self) -> Ring {
        Ring { bits: self.l }
    }

    /// One unit in the last place, `2^{-f}`.
    pub fn ulp(&self) -> f64 {
        libm::ldexp(1.0, -(self.f as i32))
    }

    /// Encoding range: values must satisfy `|x| < 2^{l-2-f}`.
    pub fn sign_safe_bound(&self) -> f64 {
        libm::ldexp(1.0, self.l as i32 - 2 - self.f as i32)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense row-major tensor over `Z_{2^l}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RingTensor {
    ring: Ring,
    shape: Vec<usize>,
    data: Vec<u64>,
}

impl RingTensor {
    pub fn new(ring: Ring, shape: Vec<usize>, data: Vec<u64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        let data = data.into_iter().map(|x| ring.reduce(x)).collect();
        Ok(RingTensor { ring, shape, data })
    }

    pub fn zeros(ring: Ring, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        RingTensor { ring, shape, data: vec![0; n] }
    }

    pub fn identity(ring: Ring, n: usize) -> Self {
        let mut t = Self::zeros(ring, vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1;
        }
        t
    }

    /// Fills a tensor with `f(flat_index)`.
    pub fn from_fn(ring: Ring, shape: Vec<usize>, mut f: impl FnMut(usize) -> u64) -> Self {
        let n = numel(&shape);
        let data = (0..n).map(|i| ring.reduce(f(i))).collect();
        RingTensor { ring, shape, data }
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    fn check_same(&self, other: &RingTensor) -> Result<()> {
        if self.ring != other.ring {
            return Err(Error::RingMismatch(self.ring.bits, other.ring.bits));
        }
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &RingTensor, f: impl Fn(u64, u64) -> u64) -> Result<RingTensor> {
        self.check_same(other)?;
        let ring = self.ring;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| ring.reduce(f(a, b))).collect();
        Ok(RingTensor { ring, shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip_with(other, u64::wrapping_add)
    }

    pub fn sub(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip_with(other, u64::wrapping_sub)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip_with(other, u64::wrapping_mul)
    }

    pub fn neg(&self) -> RingTensor {
        self.map(|x| x.wrapping_neg())
    }

    pub fn scale(&self, c: u64) -> RingTensor {
        self.map(|x| x.wrapping_mul(c))
    }

    pub fn add_scalar(&self, c: u64) -> RingTensor {
        self.map(|x| x.wrapping_add(c))
    }

    pub fn map(&self, f: impl Fn(u64) -> u64) -> RingTensor {
        let ring = self.ring;
        RingTensor {
            ring,
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| ring.reduce(f(x))).collect(),
        }
    }

    pub fn transpose(&self) -> Result<RingTensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0u64; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(RingTensor { ring: self.ring, shape: vec![c, r], data: out })
    }

    /// `self (m x n) ⊙ other (n x o)` with wrapping arithmetic.
    pub fn matmul(&self, other: &RingTensor) -> Result<RingTensor> {
        if self.ring != other.ring {
            return Err(Error::RingMismatch(self.ring.bits, other.ring.bits));
        }
        let (m, n) = self.dims2()?;
        let (n2, o) = other.dims2()?;
        if n != n2 {
            return Err(Error::Shape(format!("matmul inner dims {m}x{n} vs {n2}x{o}")));
        }
        let mut out = vec![0u64; m * o];
        for i in 0..m {
            let row = &mut out[i * o..(i + 1) * o];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0 {
                    continue;
                }
                let brow = &other.data[k * o..(k + 1) * o];
                for (acc, &b) in row.iter_mut().zip(brow) {
                    *acc = acc.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        // reduction mod 2^l commutes with the wrapping 64-bit arithmetic above
        let ring = self.ring;
        out.iter_mut().for_each(|x| *x = ring.reduce(*x));
        Ok(RingTensor { ring, shape: vec![m, o], data: out })
    }
}

/// Dense row-major tensor of finite `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(RealTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        RealTensor { shape, data: vec![0.0; n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn matmul(&self, other: &RealTensor) -> Result<RealTensor> {
        let (m, n) = self.dims2()?;
        let (n2, o) = other.dims2()?;
        if n != n2 {
            return Err(Error::Shape(format!("matmul inner dims {m}x{n} vs {n2}x{o}")));
        }
        let mut out = vec![0.0; m * o];
        for i in 0..m {
            for k in 0..n {
                let a = self.data[i * n + k];
                for j in 0..o {
                    out[i * o + j] += a * other.data[k * o + j];
                }
            }
        }
        Ok(RealTensor { shape: vec![m, o], data: out })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealTensor {
        RealTensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(libm::fabs(*x)))
    }

    /// Largest absolute row sum of the transpose, i.e. `max_j Σ_i |w_ij|`.
    /// Bounds `max |x ⊙ W|` by `max |x| · col_abs_sum_max(W)`.
    pub fn col_abs_sum_max(&self) -> Result<f64> {
        let (r, c) = self.dims2()?;
        Ok((0..c)
            .map(|j| (0..r).map(|i| libm::fabs(self.data[i * c + j])).sum::<f64>())
            .fold(0.0, f64::max))
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }
}

/// Encodes reals as `round(x · 2^f) mod 2^l`, rounding half away from zero.
pub fn encode_fixed(x: &RealTensor, cfg: &FixedPointConfig) -> Result<RingTensor> {
    let bound = cfg.sign_safe_bound();
    let ring = cfg.ring();
    let scale = libm::ldexp(1.0, cfg.f as i32);
    let mut data = Vec::with_capacity(x.len());
    for (index, &v) in x.data.iter().enumerate() {
        if !(libm::fabs(v) < bound) {
            return Err(Error::EncodingOverflow { index, bound });
        }
        let q = libm::round(v * scale) as i64;
        data.push(ring.from_signed(q));
    }
    Ok(RingTensor { ring, shape: x.shape.clone(), data })
}

/// Reads each word as signed two's complement and divides by `2^f`.
pub fn decode_fixed(t: &RingTensor, cfg: &FixedPointConfig) -> RealTensor {
    decode_with_frac(t, cfg.f)
}

/// Decodes a tensor carrying `frac_bits` fraction bits.
pub fn decode_with_frac(t: &RingTensor, frac_bits: u32) -> RealTensor {
    let ring = t.ring;
    let data = t
        .data
        .iter()
        .map(|&w| libm::ldexp(ring.to_signed(w) as f64, -(frac_bits as i32)))
        .collect();
    RealTensor { shape: t.shape.clone(), data }
}

pub fn encode_scalar(x: f64, cfg: &FixedPointConfig) -> Result<u64> {
    let t = RealTensor::new(vec![1], vec![x])?;
    Ok(encode_fixed(&t, cfg)?.data[0])
}

pub fn decode_scalar(w: u64, cfg: &FixedPointConfig) -> f64 {
    libm::ldexp(cfg.ring().to_signed(w) as f64, -(cfg.f as i32))
}

/// Geometry of a 2-D convolution on NHWC data with an `(k, k, i, o)` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn validate(&self) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::UnsupportedKernel(self.kernel));
        }
        if self.batch == 0 || self.height == 0 || self.width == 0 || self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::Shape(format!("zero dimension in {self:?}")));
        }
        if self.stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        if self.height + 2 * self.pad < self.kernel || self.width + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!("kernel larger than padded input in {self:?}")));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the lowered patch matrix, `b · oh · ow`.
    pub fn patch_rows(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    /// Columns of the lowered patch matrix, `k · k · i`.
    pub fn patch_cols(&self) -> usize {
        self.kernel * self.kernel * self.in_ch
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.height * self.width * self.in_ch
    }
}

/// Lowers an NHWC input into a patch matrix.
///
/// Row `(n, oy, ox)` maps to `n·oh·ow + oy·ow + ox`; column `(ky, kx, c)` maps
/// to `(ky·k + kx)·i + c` and holds `x[n, oy·s + ky − p, ox·s + kx − p, c]`, or
/// zero when that position falls in the padding. A kernel stored as
/// `(k, k, i, o)` row-major is already the `(k·k·i) × o` right operand, so
/// `conv(x, W) = im2col(x) ⊙ W`.
pub(crate) fn im2col_slice<T: Copy + Default>(x: &[T], s: &ConvShape) -> Vec<T> {
    let (oh, ow) = (s.out_height(), s.out_width());
    let cols = s.patch_cols();
    let mut out = vec![T::default(); s.patch_rows() * cols];
    for n in 0..s.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (n * oh + oy) * ow + ox;
                for ky in 0..s.kernel {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.height as isize {
                        continue;
                    }
                    for kx in 0..s.kernel {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix < 0 || ix >= s.width as isize {
                            continue;
                        }
                        let src = ((n * s.height + iy as usize) * s.width + ix as usize) * s.in_ch;
                        let dst = row * cols + (ky * s.kernel + kx) * s.in_ch;
                        out[dst..dst + s.in_ch].copy_from_slice(&x[src..src + s.in_ch]);
                    }
                }
            }
        }
    }
    out
}

/// Ring im2col; accepts `x` as `[b, h, w, i]` or any shape with the same element count.
pub fn im2col(x: &RingTensor, shape: &ConvShape) -> Result<RingTensor> {
    shape.validate()?;
    if x.len() != shape.input_len() {
        return Err(Error::Shape(format!(
            "conv input has {} elements, shape {:?} expects {}",
            x.len(),
            shape,
            shape.input_len()
        )));
    }
    let data = im2col_slice(&x.data, shape);
    Ok(RingTensor { ring: x.ring, shape: vec![shape.patch_rows(), shape.patch_cols()], data })
}

/// Real-valued im2col with the same layout as [`im2col`].
pub fn im2col_real(x: &RealTensor, shape: &ConvShape) -> Result<RealTensor> {
    shape.validate()?;
    if x.len() != shape.input_len() {
        return Err(Error::Shape(format!("conv input has {} elements, expected {}", x.len(), shape.input_len())));
    }
    let data = im2col_slice(&x.data, shape);
    Ok(RealTensor { shape: vec![shape.patch_rows(), shape.patch_cols()], data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_scalar(1.5, &cfg()).unwrap(), 48);
        assert_eq!(encode_scalar(-0.25, &cfg()).unwrap(), 0u64.wrapping_sub(8));
        assert_eq!(encode_scalar(0.0, &cfg()).unwrap(), 0);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_scalar(48, &cfg()), 1.5);
        assert_eq!(decode_scalar(0u64.wrapping_sub(8), &cfg()), -0.25);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let c = cfg();
        // 1/64 is half an ulp at f = 5
        assert_eq!(encode_scalar(1.0 / 64.0, &c).unwrap(), 1);
        assert_eq!(encode_scalar(-1.0 / 64.0, &c).unwrap(), c.ring().from_signed(-1));
    }

    #[test]
    fn overflow_names_index() {
        let x = RealTensor::new(vec![3], vec![0.0, 1.0, libm::ldexp(1.0, 57)]).unwrap();
        assert!(matches!(encode_fixed(&x, &cfg()), Err(Error::EncodingOverflow { index: 2, .. })));
        let ok = RealTensor::new(vec![1], vec![libm::ldexp(1.0, 57) - 32.0]).unwrap();
        assert!(encode_fixed(&ok, &cfg()).is_ok());
    }

    #[test]
    fn config_bounds() {
        assert!(FixedPointConfig::new(64, 5).is_ok());
        assert!(FixedPointConfig::new(8, 2).is_ok());
        assert!(FixedPointConfig::new(8, 3).is_err());
        assert!(FixedPointConfig::new(64, 0).is_err());
        assert!(FixedPointConfig::new(65, 5).is_err());
    }

    #[test]
    fn round_trip_grid() {
        // 1000 in-range grid points drawn from a fixed LCG
        let c = cfg();
        let mut s: u64 = 0x9e3779b97f4a7c15;
        for _ in 0..1000 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let q = (s >> 20) as i64 - (1i64 << 43);
            let x = q as f64 / 32.0;
            let w = encode_scalar(x, &c).unwrap();
            assert_eq!(decode_scalar(w, &c), x);
        }
    }

    #[test]
    fn small_ring_signed() {
        let r = Ring::new(8).unwrap();
        assert_eq!(r.to_signed(0xff), -1);
        assert_eq!(r.to_signed(0x80), -128);
        assert_eq!(r.to_signed(0x7f), 127);
        assert_eq!(r.from_signed(-1), 0xff);
    }

    #[test]
    fn matmul_examples() {
        let r = Ring::R64;
        let a = RingTensor::new(r, vec![1, 1], vec![64]).unwrap();
        let b = RingTensor::new(r, vec![1, 1], vec![96]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[6144]);
        let m = RingTensor::from_fn(r, vec![3, 3], |i| (i as u64).wrapping_mul(0x1234_5678_9abc_def1));
        assert_eq!(RingTensor::identity(r, 3).matmul(&m).unwrap(), m);
        assert!(m.matmul(&RingTensor::zeros(r, vec![2, 2])).is_err());
    }

    #[test]
    fn im2col_1x1_is_reshape() {
        let r = Ring::R64;
        let s = ConvShape { batch: 2, height: 3, width: 2, in_ch: 4, out_ch: 5, kernel: 1, stride: 1, pad: 0 };
        let x = RingTensor::from_fn(r, vec![2, 3, 2, 4], |i| i as u64 + 1);
        let p = im2col(&x, &s).unwrap();
        assert_eq!(p.shape(), &[12, 4]);
        assert_eq!(p.data(), x.data());
    }

    #[test]
    fn im2col_zero_input() {
        let s = ConvShape { batch: 1, height: 4, width: 4, in_ch: 1, out_ch: 1, kernel: 3, stride: 1, pad: 1 };
        let p = im2col(&RingTensor::zeros(Ring::R64, vec![1, 4, 4, 1]), &s).unwrap();
        assert_eq!(p.shape(), &[16, 9]);
        assert!(p.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn unsupported_kernel() {
        let s = ConvShape { batch: 1, height: 4, width: 4, in_ch: 1, out_ch: 1, kernel: 5, stride: 1, pad: 2 };
        assert_eq!(im2col(&RingTensor::zeros(Ring::R64, vec![16]), &s), Err(Error::UnsupportedKernel(5)));
    }

    fn tensor(ring: Ring, shape: Vec<usize>) -> impl Strategy<Value = RingTensor> {
        let n = shape.iter().product::<usize>();
        proptest::collection::vec(any::<u64>(), n).prop_map(move |d| RingTensor::new(ring, shape.clone(), d).unwrap())
    }

    proptest! {
        #[test]
        fn distributivity(a in tensor(Ring::R64, vec![3, 4]), b in tensor(Ring::R64, vec![4, 2]), c in tensor(Ring::R64, vec![4, 2])) {
            let lhs = a.matmul(&b).unwrap().add(&a.matmul(&c).unwrap()).unwrap();
            let rhs = a.matmul(&b.add(&c).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn distributivity_small_ring(a in tensor(Ring::new(16).unwrap(), vec![2, 3]), b in tensor(Ring::new(16).unwrap(), vec![3, 2]), c in tensor(Ring::new(16).unwrap(), vec![3, 2])) {
            let lhs = a.matmul(&b).unwrap().add(&a.matmul(&c).unwrap()).unwrap();
            let rhs = a.matmul(&b.add(&c).unwrap()).unwrap();
            prop_assert!(rhs.data().iter().all(|&x| x < 1 << 16));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn decode_encode_error_bound(x in -1.0e9f64..1.0e9) {
            let c = FixedPointConfig::default();
            let back = decode_scalar(encode_scalar(x, &c).unwrap(), &c);
            prop_assert!((back - x).abs() <= c.ulp() / 2.0);
        }
    }
}
