//! Core kernels against independent oracles written here.

use lrmpc_core::lowrank::svd_factorize;
use lrmpc_core::oracle::{plaintext_linear_oracle, PlainLayer};
use lrmpc_core::prf::seed_from_u64;
use lrmpc_core::ring::{im2col, ConvShape};
use lrmpc_core::sharing::{share_additive, share_trio, TrioShare};
use lrmpc_core::{RealTensor, Ring, RingTensor, SeedSet};
use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn ring_tensor(rng: &mut ChaCha8Rng, ring: Ring, shape: Vec<usize>) -> RingTensor {
    RingTensor::from_fn(ring, shape, |_| rng.next_u64() & ring.mask())
}

#[test]
fn ring_matmul_matches_schoolbook() {
    let mut r = rng(1);
    for bits in [8, 16, 32, 63, 64] {
        let ring = Ring::new(bits).unwrap();
        for _ in 0..20 {
            let (m, k, n) = (1 + r.next_u64() as usize % 6, 1 + r.next_u64() as usize % 6, 1 + r.next_u64() as usize % 6);
            let a = ring_tensor(&mut r, ring, vec![m, k]);
            let b = ring_tensor(&mut r, ring, vec![k, n]);
            let got = a.matmul(&b).unwrap();
            let modulus: u128 = 1 << bits;
            for i in 0..m {
                for j in 0..n {
                    let mut acc: u128 = 0;
                    for t in 0..k {
                        acc = (acc + a.data()[i * k + t] as u128 * b.data()[t * n + j] as u128) % modulus;
                    }
                    assert_eq!(got.data()[i * n + j] as u128, acc, "l={bits} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn im2col_equals_direct_ring_convolution() {
    let ring = Ring::new(64).unwrap();
    let mut r = rng(2);
    for kernel in [1, 3] {
        for stride in [1, 2] {
            for pad in [0, 1] {
                let s = ConvShape { batch: 2, height: 5, width: 4, in_ch: 3, out_ch: 2, kernel, stride, pad };
                let x = ring_tensor(&mut r, ring, vec![2, 5, 4, 3]);
                let w = ring_tensor(&mut r, ring, vec![kernel * kernel * 3, 2]);
                let got = im2col(&x, &s).unwrap().matmul(&w).unwrap();
                let (oh, ow) = (s.out_height(), s.out_width());
                let mut want = vec![0u64; 2 * oh * ow * 2];
                for n in 0..2 {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for oc in 0..2 {
                                let mut acc = 0u64;
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if !(0..5).contains(&iy) || !(0..4).contains(&ix) {
                                            continue;
                                        }
                                        for c in 0..3 {
                                            let xv = x.data()[((n * 5 + iy as usize) * 4 + ix as usize) * 3 + c];
                                            let wv = w.data()[((ky * kernel + kx) * 3 + c) * 2 + oc];
                                            acc = acc.wrapping_add(xv.wrapping_mul(wv));
                                        }
                                    }
                                }
                                want[((n * oh + oy) * ow + ox) * 2 + oc] = acc;
                            }
                        }
                    }
                }
                assert_eq!(got.data(), &want[..], "k={kernel} s={stride} p={pad}");
            }
        }
    }
}

/// Eckart–Young optimum from the eigenvalues of `WᵀW`.
fn eigen_optimum(w: &DMatrix<f64>, r: usize) -> f64 {
    let mut ev: Vec<f64> = SymmetricEigen::new(w.transpose() * w).eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev[r..].iter().sum::<f64>().sqrt()
}

#[test]
fn svd_error_is_eckart_young_optimal() {
    let mut g = rng(3);
    for case in 0..50 {
        let n = 1 + g.next_u64() as usize % 12;
        let o = 1 + g.next_u64() as usize % 12;
        let rank = 1 + g.next_u64() as usize % n.min(o);
        let data: Vec<f64> = (0..n * o).map(|_| uniform(&mut g)).collect();
        let w = RealTensor::new(vec![n, o], data.clone()).unwrap();
        let f = svd_factorize(&w, rank).unwrap();
        let wm = DMatrix::from_row_slice(n, o, &data);
        let approx = DMatrix::from_row_slice(n, rank, f.u.data()) * DMatrix::from_row_slice(rank, o, f.v.data());
        let err = (&wm - approx).norm();
        let opt = eigen_optimum(&wm, rank);
        if rank < n.min(o) {
            assert!((err - opt).abs() <= 1e-8 * opt, "case {case}: {n}x{o} r={rank} err={err} opt={opt}");
        } else {
            assert!(err <= 1e-8 * wm.norm(), "case {case}: full rank err={err}");
        }
        assert!((f.error - err).abs() <= 1e-10 * wm.norm().max(1.0));
    }
}

fn chi_square_l8(values: &[u64]) -> f64 {
    let mut counts = [0u64; 256];
    for &v in values {
        counts[v as usize] += 1;
    }
    let expected = values.len() as f64 / 256.0;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

fn critical_value() -> f64 {
    ChiSquared::new(255.0).unwrap().inverse_cdf(0.999)
}

#[test]
fn shares_of_a_constant_are_uniform() {
    let ring = Ring::new(8).unwrap();
    let secret = RingTensor::from_fn(ring, vec![100_000], |_| 77);
    let crit = critical_value();
    assert!((crit - 330.52).abs() < 0.01);
    for n in [2, 3] {
        let shares = share_additive(&secret, n, &seed_from_u64(40 + n as u64), 0).unwrap();
        for s in &shares {
            let chi = chi_square_l8(s.value.data());
            assert!(chi < crit, "n={n} {}: chi2={chi}", s.owner);
        }
    }
    let views = share_trio(&secret, &SeedSet::derive(&seed_from_u64(50)), 0).unwrap();
    for v in &views {
        let parts = match v {
            TrioShare::P1 { lambda2, lambda3 } => [lambda2, lambda3],
            TrioShare::P2 { m3, lambda2 } => [m3, lambda2],
            TrioShare::P3 { m2, lambda3 } => [m2, lambda3],
        };
        for p in parts {
            let chi = chi_square_l8(p.data());
            assert!(chi < crit, "{}: chi2={chi}", v.owner());
        }
    }
}

#[derive(serde::Deserialize)]
struct GcnVector {
    adjacency: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    output: Vec<Vec<f64>>,
}

fn tensor(rows: &[Vec<f64>]) -> RealTensor {
    RealTensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

#[test]
fn gcn_oracle_matches_hand_vector() {
    let v: GcnVector = serde_json::from_str(include_str!("data/gcn_3node.json")).unwrap();
    let a = tensor(&v.adjacency);
    let first = [PlainLayer::PublicLeft(a.clone()), PlainLayer::Matmul(tensor(&v.w1)), PlainLayer::Relu];
    let hidden = plaintext_linear_oracle(&tensor(&v.features), &first).unwrap();
    assert_eq!(hidden, tensor(&v.hidden));
    let out = plaintext_linear_oracle(&hidden, &[PlainLayer::PublicLeft(a), PlainLayer::Matmul(tensor(&v.w2))]).unwrap();
    assert_eq!(out, tensor(&v.output));
}
