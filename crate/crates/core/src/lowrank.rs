//! Plaintext low-rank factorization of weights, done by the model owner before
//! sharing. `W (n×o) ≈ U (n×r) ⊙ V (r×o)` with the singular values folded into
//! `U`, so `V` has orthonormal rows.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::RealTensor;

pub const MAX_SWEEPS: usize = 100;
pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerClass {
    Fc,
    Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    pub u: RealTensor,
    pub v: RealTensor,
    pub rank: usize,
    pub ratio: f64,
    /// `‖W − U·V‖_F` in the matrix (lowered) view.
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultCount {
    pub full: u64,
    pub low: u64,
    pub beneficial: bool,
}

/// Thin SVD of an `n×o` matrix: returns `(W·V, σ, V)` with columns sorted by
/// decreasing singular value, where `W·V = U·Σ` and `V` is `o×o` orthogonal.
pub struct Svd {
    /// `n×o`, column `j` is `σ_j · u_j`.
    pub scaled_u: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `o×o`, column `j` is `v_j`.
    pub v: Vec<f64>,
    pub n: usize,
    pub o: usize,
    pub sweeps: usize,
}

/// One-sided (Hestenes) Jacobi: rotates column pairs of `W` until all are
/// mutually orthogonal, which diagonalizes `WᵀW` without forming it.
pub fn jacobi_svd(w: &RealTensor) -> Result<Svd> {
    let (n, o) = w.dims2()?;
    let mut a = w.data().to_vec();
    let mut v = vec![0.0; o * o];
    for j in 0..o {
        v[j * o + j] = 1.0;
    }
    // columns this small are numerically zero; rotating them never settles
    let negligible = f64::EPSILON * f64::EPSILON * w.data().iter().map(|x| x * x).sum::<f64>();
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..o {
            for q in p + 1..o {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let (x, y) = (a[i * o + p], a[i * o + q]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha <= negligible || beta <= negligible || libm::fabs(gamma) <= TOLERANCE * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, n, o, p, q, c, s);
                rotate(&mut v, o, o, p, q, c, s);
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
    }
    let norms: Vec<f64> = (0..o).map(|j| libm::sqrt((0..n).map(|i| a[i * o + j] * a[i * o + j]).sum())).collect();
    let mut order: Vec<usize> = (0..o).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let permute = |m: &[f64], rows: usize| {
        let mut out = vec![0.0; rows * o];
        for i in 0..rows {
            for (dst, &src) in order.iter().enumerate() {
                out[i * o + dst] = m[i * o + src];
            }
        }
        out
    };
    Ok(Svd {
        scaled_u: permute(&a, n),
        sigma: order.iter().map(|&j| norms[j]).collect(),
        v: permute(&v, o),
        n,
        o,
        sweeps,
    })
}

fn rotate(m: &mut [f64], rows: usize, cols: usize, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..rows {
        let (x, y) = (m[i * cols + p], m[i * cols + q]);
        m[i * cols + p] = c * x - s * y;
        m[i * cols + q] = s * x + c * y;
    }
}

fn check_rank(r: usize, max: usize) -> Result<()> {
    if r == 0 || r > max {
        return Err(Error::Rank { rank: r, max });
    }
    Ok(())
}

/// Best rank-`r` approximation `U ⊙ V` of an `n×o` matrix.
pub fn svd_factorize(w: &RealTensor, r: usize) -> Result<LowRankFactors> {
    let (n, o) = w.dims2()?;
    check_rank(r, n.min(o))?;
    let svd = jacobi_svd(w)?;
    let mut u = vec![0.0; n * r];
    for i in 0..n {
        u[i * r..(i + 1) * r].copy_from_slice(&svd.scaled_u[i * o..i * o + r]);
    }
    let mut vt = vec![0.0; r * o];
    for k in 0..r {
        for j in 0..o {
            vt[k * o + j] = svd.v[j * o + k];
        }
    }
    let u = RealTensor::new(vec![n, r], u)?;
    let v = RealTensor::new(vec![r, o], vt)?;
    let error = frobenius_distance(w, &u.matmul(&v)?);
    Ok(LowRankFactors { u, v, rank: r, ratio: r as f64 / n.min(o) as f64, error })
}

/// Factorizes a `(k, k, i, o)` kernel into a `(k, k, i, r)` kernel followed by
/// a `(1, 1, r, o)` kernel. Rank ratio is `r / o`.
pub fn conv_factorize(w: &RealTensor, r: usize) -> Result<LowRankFactors> {
    let &[k, k2, i, o] = w.shape() else {
        return Err(Error::Shape(alloc::format!("conv kernel must be 4-d, got {:?}", w.shape())));
    };
    if k != k2 {
        return Err(Error::Shape(alloc::format!("non-square kernel {k}x{k2}")));
    }
    check_rank(r, o.min(k * k * i))?;
    let mut f = svd_factorize(&w.clone().reshape(vec![k * k * i, o])?, r)?;
    f.u = f.u.reshape(vec![k, k, i, r])?;
    f.v = f.v.reshape(vec![1, 1, r, o])?;
    f.ratio = r as f64 / o as f64;
    Ok(f)
}

/// `max(1, round(ratio · base))`, base `min(n, o)` for FC and `o` for conv,
/// clamped to the largest valid rank.
pub fn choose_rank(class: LayerClass, n: usize, o: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(alloc::format!("rank ratio {ratio} must be in (0, 1]")));
    }
    let base = match class {
        LayerClass::Fc => n.min(o),
        LayerClass::Conv => o,
    };
    Ok((libm::round(ratio * base as f64) as usize).clamp(1, n.min(o).max(1)))
}

/// Multiplications for `(m×n) ⊙ (n×o)` against `(m×n) ⊙ (n×r) ⊙ (r×o)`.
pub fn mult_count(m: u64, n: u64, o: u64, r: u64) -> MultCount {
    let full = m * n * o;
    let low = m * n * r + m * r * o;
    MultCount { full, low, beneficial: r * (n + o) < n * o }
}

pub fn frobenius_distance(a: &RealTensor, b: &RealTensor) -> f64 {
    libm::sqrt(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, o: usize, data: Vec<f64>) -> RealTensor {
        RealTensor::new(vec![n, o], data).unwrap()
    }

    #[test]
    fn diagonal_example() {
        let w = mat(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let f = svd_factorize(&w, 2).unwrap();
        assert!((f.error - 1.0).abs() < 1e-12);
        assert_eq!(f.u.shape(), &[3, 2]);
        assert_eq!(f.v.shape(), &[2, 3]);
    }

    #[test]
    fn rank_one_exact() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [2.0, 1.0, -1.0];
        let w = mat(4, 3, (0..12).map(|k| a[k / 3] * b[k % 3]).collect());
        assert!(svd_factorize(&w, 1).unwrap().error <= 1e-10);
    }

    #[test]
    fn v_rows_orthonormal() {
        let w = mat(4, 5, (0..20).map(|k| ((k * 37 % 17) as f64) - 8.0).collect());
        let f = svd_factorize(&w, 3).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let dot: f64 = (0..5).map(|j| f.v.data()[p * 5 + j] * f.v.data()[q * 5 + j]).sum();
                assert!((dot - if p == q { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_errors() {
        let w = RealTensor::identity(3);
        assert_eq!(svd_factorize(&w, 0).unwrap_err(), Error::Rank { rank: 0, max: 3 });
        assert_eq!(svd_factorize(&w, 4).unwrap_err(), Error::Rank { rank: 4, max: 3 });
    }

    #[test]
    fn conv_shapes_and_separable() {
        let sp = [1.0, 2.0, -1.0, 0.5, 1.0, 1.0, 2.0, 0.0, 1.0, -1.0, 3.0, 1.0, 1.0, 1.0, 2.0, 1.0, 0.0, 1.0];
        let out = [1.0, -2.0, 0.5];
        let w = RealTensor::new(vec![3, 3, 2, 3], (0..54).map(|k| sp[k / 3] * out[k % 3]).collect()).unwrap();
        let f = conv_factorize(&w, 1).unwrap();
        assert_eq!(f.u.shape(), &[3, 3, 2, 1]);
        assert_eq!(f.v.shape(), &[1, 1, 1, 3]);
        assert!(f.error < 1e-10);
        assert!((f.ratio - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn choose_rank_examples() {
        assert_eq!(choose_rank(LayerClass::Conv, 576, 64, 0.5).unwrap(), 32);
        assert_eq!(choose_rank(LayerClass::Fc, 512, 512, 0.25).unwrap(), 128);
        assert_eq!(choose_rank(LayerClass::Fc, 7, 9, 1.0).unwrap(), 7);
        assert_eq!(choose_rank(LayerClass::Fc, 100, 100, 0.001).unwrap(), 1);
        assert!(choose_rank(LayerClass::Fc, 4, 4, 0.0).is_err());
    }

    #[test]
    fn mult_count_examples() {
        assert_eq!(mult_count(4, 4, 4, 1), MultCount { full: 64, low: 32, beneficial: true });
        assert_eq!(mult_count(4, 4, 4, 2), MultCount { full: 64, low: 64, beneficial: false });
        let c = mult_count(1, 512, 512, 128);
        assert_eq!((c.full, c.low), (262144, 131072));
    }

    #[test]
    fn beneficial_sweep() {
        for n in 1..20u64 {
            for o in 1..20u64 {
                for r in 1..=n.min(o) {
                    let c = mult_count(3, n, o, r);
                    assert_eq!(c.beneficial, c.low < c.full, "n={n} o={o} r={r}");
                }
            }
        }
    }
}
