//! Double-precision reference forward pass. No quantization anywhere; every
//! correctness check compares the MPC output against this.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::ring::{ConvShape, RealTensor};

#[derive(Clone, Debug, PartialEq)]
pub enum PlainLayer {
    /// `x ⊙ W`.
    Matmul(RealTensor),
    /// Direct convolution of NHWC input with a `(k, k, i, o)` kernel; output is
    /// `(b·oh·ow) × o`.
    Conv { shape: ConvShape, kernel: RealTensor },
    /// Elementwise `x²`.
    Square,
    Relu,
    /// `A ⊙ x` with a public left operand.
    PublicLeft(RealTensor),
}

pub fn plaintext_linear_oracle(x: &RealTensor, layers: &[PlainLayer]) -> Result<RealTensor> {
    let mut cur = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        cur = apply(&cur, layer).map_err(|e| match e {
            Error::Shape(s) => Error::Shape(format!("layer {i}: {s}")),
            e => e,
        })?;
    }
    Ok(cur)
}

fn apply(x: &RealTensor, layer: &PlainLayer) -> Result<RealTensor> {
    match layer {
        PlainLayer::Matmul(w) => x.matmul(w),
        PlainLayer::Conv { shape, kernel } => direct_conv(x, shape, kernel),
        PlainLayer::Square => Ok(x.map(|v| v * v)),
        PlainLayer::Relu => Ok(x.map(|v| v.max(0.0))),
        PlainLayer::PublicLeft(a) => a.matmul(x),
    }
}

/// Nested-loop convolution, independent of the im2col lowering.
pub fn direct_conv(x: &RealTensor, s: &ConvShape, kernel: &RealTensor) -> Result<RealTensor> {
    s.validate()?;
    if x.len() != s.input_len() {
        return Err(Error::Shape(format!("conv input has {} elements, expected {}", x.len(), s.input_len())));
    }
    let k = s.kernel;
    if kernel.shape() != [k, k, s.in_ch, s.out_ch] {
        return Err(Error::Shape(format!("kernel shape {:?}, expected {:?}", kernel.shape(), [k, k, s.in_ch, s.out_ch])));
    }
    let (oh, ow) = (s.out_height(), s.out_width());
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; s.batch * oh * ow * s.out_ch];
    for n in 0..s.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..s.out_ch {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                continue;
                            }
                            for c in 0..s.in_ch {
                                let xv = xd[((n * s.height + iy as usize) * s.width + ix as usize) * s.in_ch + c];
                                acc += xv * kd[((ky * k + kx) * s.in_ch + c) * s.out_ch + oc];
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * s.out_ch + oc] = acc;
                }
            }
        }
    }
    RealTensor::new(vec![s.batch * oh * ow, s.out_ch], out)
}
