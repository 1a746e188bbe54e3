//! Secret sharing: n-party additive sharing and three-party masked sharing.
//!
//! Masked (three-party) sharing of `X` uses two random masks, `λ2` shared by
//! P1 and P2 and `λ3` shared by P1 and P3, and the masked values
//! `m2 = X + λ2`, `m3 = X + λ3`:
//!
//! | party | holds        |
//! |-------|--------------|
//! | P1    | `(λ2, λ3)`   |
//! | P2    | `(m3, λ2)`   |
//! | P3    | `(m2, λ3)`   |
//!
//! Any two parties can reconstruct; any single party sees uniform values.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::{domain, Purpose, Seed, SeedStream};
use crate::ring::{Ring, RingTensor};

/// 1-based party index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId(u8);

impl PartyId {
    pub const P1: PartyId = PartyId(1);
    pub const P2: PartyId = PartyId(2);
    pub const P3: PartyId = PartyId(3);

    pub fn new(number: u8) -> Result<Self> {
        if number == 0 {
            return Err(Error::Parties("party numbers start at 1".into()));
        }
        Ok(PartyId(number))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// 0-based index for array lookups.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(i: usize) -> Self {
        PartyId(i as u8 + 1)
    }

    pub fn all(n: usize) -> impl Iterator<Item = PartyId> {
        (0..n).map(PartyId::from_index)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Which sharing scheme a session runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Additive { parties: u8 },
    Trio,
}

impl Scheme {
    pub fn parties(self) -> usize {
        match self {
            Scheme::Additive { parties } => usize::from(parties),
            Scheme::Trio => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveShare {
    pub owner: PartyId,
    pub value: RingTensor,
}

/// One party's view of a masked three-party sharing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrioShare {
    P1 { lambda2: RingTensor, lambda3: RingTensor },
    P2 { m3: RingTensor, lambda2: RingTensor },
    P3 { m2: RingTensor, lambda3: RingTensor },
}

impl TrioShare {
    pub fn owner(&self) -> PartyId {
        match self {
            TrioShare::P1 { .. } => PartyId::P1,
            TrioShare::P2 { .. } => PartyId::P2,
            TrioShare::P3 { .. } => PartyId::P3,
        }
    }

    fn parts(&self) -> (&RingTensor, &RingTensor) {
        match self {
            TrioShare::P1 { lambda2, lambda3 } => (lambda2, lambda3),
            TrioShare::P2 { m3, lambda2 } => (m3, lambda2),
            TrioShare::P3 { m2, lambda3 } => (m2, lambda3),
        }
    }

    fn with_parts(&self, a: RingTensor, b: RingTensor) -> TrioShare {
        match self {
            TrioShare::P1 { .. } => TrioShare::P1 { lambda2: a, lambda3: b },
            TrioShare::P2 { .. } => TrioShare::P2 { m3: a, lambda2: b },
            TrioShare::P3 { .. } => TrioShare::P3 { m2: a, lambda3: b },
        }
    }
}

/// A share under either scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Share {
    Additive(AdditiveShare),
    Trio(TrioShare),
}

impl Share {
    pub fn owner(&self) -> PartyId {
        match self {
            Share::Additive(s) => s.owner,
            Share::Trio(t) => t.owner(),
        }
    }

    fn first(&self) -> &RingTensor {
        match self {
            Share::Additive(s) => &s.value,
            Share::Trio(t) => t.parts().0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.first().shape()
    }

    pub fn ring(&self) -> Ring {
        self.first().ring()
    }

    pub fn len(&self) -> usize {
        self.first().len()
    }

    pub fn is_empty(&self) -> bool {
        self.first().is_empty()
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        self.first().dims2()
    }

    pub fn as_additive(&self) -> Result<&AdditiveShare> {
        match self {
            Share::Additive(s) => Ok(s),
            Share::Trio(_) => Err(Error::SchemeMismatch("expected an additive share".into())),
        }
    }

    pub fn as_trio(&self) -> Result<&TrioShare> {
        match self {
            Share::Trio(t) => Ok(t),
            Share::Additive(_) => Err(Error::SchemeMismatch("expected a masked three-party share".into())),
        }
    }

    /// Applies a linear map to every component. Valid for both schemes since
    /// `L(x + λ) = L(x) + L(λ)`.
    pub fn map_linear(&self, f: impl Fn(&RingTensor) -> Result<RingTensor>) -> Result<Share> {
        Ok(match self {
            Share::Additive(s) => Share::Additive(AdditiveShare { owner: s.owner, value: f(&s.value)? }),
            Share::Trio(t) => {
                let (a, b) = t.parts();
                Share::Trio(t.with_parts(f(a)?, f(b)?))
            }
        })
    }

    /// Componentwise combination of two shares held by the same party.
    pub fn zip_linear(&self, other: &Share, f: impl Fn(&RingTensor, &RingTensor) -> Result<RingTensor>) -> Result<Share> {
        if self.owner() != other.owner() {
            return Err(Error::Parties(format!("combining shares of {} and {}", self.owner(), other.owner())));
        }
        Ok(match (self, other) {
            (Share::Additive(a), Share::Additive(b)) => {
                Share::Additive(AdditiveShare { owner: a.owner, value: f(&a.value, &b.value)? })
            }
            (Share::Trio(a), Share::Trio(b)) => {
                let (a0, a1) = a.parts();
                let (b0, b1) = b.parts();
                Share::Trio(a.with_parts(f(a0, b0)?, f(a1, b1)?))
            }
            _ => return Err(Error::SchemeMismatch("cannot combine additive and masked shares".into())),
        })
    }

    pub fn add(&self, other: &Share) -> Result<Share> {
        self.zip_linear(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Share) -> Result<Share> {
        self.zip_linear(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, c: u64) -> Share {
        self.map_linear(|t| Ok(t.scale(c))).expect("scaling cannot fail")
    }

    /// Adds a public tensor. Additive: only P1 adds it. Masked: added to the
    /// `m` components, masks unchanged.
    pub fn add_public(&self, c: &RingTensor) -> Result<Share> {
        Ok(match self {
            Share::Additive(s) if s.owner == PartyId::P1 => {
                Share::Additive(AdditiveShare { owner: s.owner, value: s.value.add(c)? })
            }
            Share::Additive(s) => {
                check_shape(&s.value, c)?;
                self.clone()
            }
            Share::Trio(TrioShare::P1 { lambda2, .. }) => {
                check_shape(lambda2, c)?;
                self.clone()
            }
            Share::Trio(TrioShare::P2 { m3, lambda2 }) => {
                Share::Trio(TrioShare::P2 { m3: m3.add(c)?, lambda2: lambda2.clone() })
            }
            Share::Trio(TrioShare::P3 { m2, lambda3 }) => {
                Share::Trio(TrioShare::P3 { m2: m2.add(c)?, lambda3: lambda3.clone() })
            }
        })
    }

    pub fn add_public_scalar(&self, c: u64) -> Share {
        let t = RingTensor::from_fn(self.ring(), self.shape().to_vec(), |_| c);
        self.add_public(&t).expect("same shape by construction")
    }

    /// Canonical sharing of a public value: P1 (additive) or the `m`
    /// components (masked, with zero masks) carry it.
    pub fn public(scheme: Scheme, owner: PartyId, value: &RingTensor) -> Share {
        let zero = RingTensor::zeros(value.ring(), value.shape().to_vec());
        match scheme {
            Scheme::Additive { .. } => Share::Additive(AdditiveShare {
                owner,
                value: if owner == PartyId::P1 { value.clone() } else { zero },
            }),
            Scheme::Trio => Share::Trio(match owner.number() {
                1 => TrioShare::P1 { lambda2: zero.clone(), lambda3: zero },
                2 => TrioShare::P2 { m3: value.clone(), lambda2: zero },
                _ => TrioShare::P3 { m2: value.clone(), lambda3: zero },
            }),
        }
    }
}

fn check_shape(a: &RingTensor, b: &RingTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.ring() != b.ring() {
        return Err(Error::RingMismatch(a.ring().bits(), b.ring().bits()));
    }
    Ok(())
}

/// Pairwise seeds for zero-communication masks, plus the dealer's own seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub p12: Seed,
    pub p13: Seed,
    pub p23: Seed,
    pub dealer: Seed,
}

impl SeedSet {
    pub fn derive(master: &Seed) -> Self {
        use crate::prf::derive_seed;
        SeedSet {
            p12: derive_seed(master, 12),
            p13: derive_seed(master, 13),
            p23: derive_seed(master, 23),
            dealer: derive_seed(master, 99),
        }
    }
}

/// Splits `x` into `n` additive shares: `n − 1` drawn from the seeded stream,
/// the last one `x − Σ others`.
pub fn share_additive(x: &RingTensor, n: usize, seed: &Seed, label: u32) -> Result<Vec<AdditiveShare>> {
    if n < 2 {
        return Err(Error::Parties(format!("additive sharing needs at least 2 parties, got {n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut last = x.clone();
    for i in 0..n - 1 {
        let r = SeedStream::new(seed, domain(Purpose::Share, label, i as u16)).ring_tensor(x.ring(), x.shape().to_vec());
        last = last.sub(&r)?;
        out.push(AdditiveShare { owner: PartyId::from_index(i), value: r });
    }
    out.push(AdditiveShare { owner: PartyId::from_index(n - 1), value: last });
    Ok(out)
}

/// Elementwise wrapping sum of all `n` shares.
pub fn reconstruct_additive(shares: &[AdditiveShare]) -> Result<RingTensor> {
    let n = shares.iter().map(|s| usize::from(s.owner.number())).max().unwrap_or(0).max(shares.len());
    if n < 2 {
        return Err(Error::Parties("need at least two shares".into()));
    }
    let mut seen = alloc::vec![false; n];
    for s in shares {
        if core::mem::replace(&mut seen[s.owner.index()], true) {
            return Err(Error::Parties(format!("duplicate share from {}", s.owner)));
        }
    }
    if let Some(i) = seen.iter().position(|&b| !b) {
        return Err(Error::MissingShare(PartyId::from_index(i)));
    }
    let mut acc = shares[0].value.clone();
    for s in &shares[1..] {
        acc = acc.add(&s.value)?;
    }
    Ok(acc)
}

/// The two masks of a masked sharing, drawn from the P1–P2 and P1–P3 seeds.
pub fn trio_masks(seeds: &SeedSet, ring: Ring, shape: &[usize], label: u32) -> (RingTensor, RingTensor) {
    let l2 = SeedStream::new(&seeds.p12, domain(Purpose::Lambda, label, 2)).ring_tensor(ring, shape.to_vec());
    let l3 = SeedStream::new(&seeds.p13, domain(Purpose::Lambda, label, 3)).ring_tensor(ring, shape.to_vec());
    (l2, l3)
}

/// Builds all three views of a masked sharing from explicit masks.
pub fn trio_from_masks(x: &RingTensor, lambda2: RingTensor, lambda3: RingTensor) -> Result<[TrioShare; 3]> {
    let m2 = x.add(&lambda2)?;
    let m3 = x.add(&lambda3)?;
    Ok([
        TrioShare::P1 { lambda2: lambda2.clone(), lambda3: lambda3.clone() },
        TrioShare::P2 { m3, lambda2 },
        TrioShare::P3 { m2, lambda3 },
    ])
}

pub fn share_trio(x: &RingTensor, seeds: &SeedSet, label: u32) -> Result<[TrioShare; 3]> {
    let (l2, l3) = trio_masks(seeds, x.ring(), x.shape(), label);
    trio_from_masks(x, l2, l3)
}

/// Recovers `x` from any two distinct views.
pub fn reconstruct_trio(a: &TrioShare, b: &TrioShare) -> Result<RingTensor> {
    use TrioShare::*;
    match (a, b) {
        (P1 { lambda3, .. }, P2 { m3, .. }) | (P2 { m3, .. }, P1 { lambda3, .. }) => m3.sub(lambda3),
        (P1 { lambda2, .. }, P3 { m2, .. }) | (P3 { m2, .. }, P1 { lambda2, .. }) => m2.sub(lambda2),
        (P2 { m3, .. }, P3 { lambda3, .. }) | (P3 { lambda3, .. }, P2 { m3, .. }) => m3.sub(lambda3),
        _ => Err(Error::Parties(format!("both views belong to {}", a.owner()))),
    }
}

/// Share of `Σ c_k · x_k + constant` from one party's shares.
pub fn linear_combine(terms: &[(u64, &Share)], constant: Option<&RingTensor>) -> Result<Share> {
    let (&(c0, first), rest) = terms
        .split_first()
        .ok_or_else(|| Error::Shape("linear combination of zero terms".into()))?;
    let mut acc = first.scale(c0);
    for &(c, s) in rest {
        acc = acc.add(&s.scale(c))?;
    }
    match constant {
        Some(k) => acc.add_public(k),
        None => Ok(acc),
    }
}

/// Reconstructs from a full set of shares of either scheme.
pub fn reconstruct(shares: &[Share]) -> Result<RingTensor> {
    match shares.first() {
        Some(Share::Additive(_)) => {
            let v: Result<Vec<AdditiveShare>> = shares.iter().map(|s| s.as_additive().cloned()).collect();
            reconstruct_additive(&v?)
        }
        Some(Share::Trio(_)) => {
            if shares.len() < 2 {
                return Err(Error::Parties("need two masked views".into()));
            }
            reconstruct_trio(shares[0].as_trio()?, shares[1].as_trio()?)
        }
        None => Err(Error::Parties("no shares".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::seed_from_u64;
    use alloc::vec;

    fn rand_tensor(seed: u64, shape: Vec<usize>, ring: Ring) -> RingTensor {
        SeedStream::new(&seed_from_u64(seed), 0).ring_tensor(ring, shape)
    }

    #[test]
    fn additive_zero_and_two_party() {
        let seed = seed_from_u64(1);
        let z = RingTensor::zeros(Ring::R64, vec![2, 2]);
        let s = share_additive(&z, 3, &seed, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(reconstruct_additive(&s).unwrap(), z);
        let x = rand_tensor(5, vec![3, 2], Ring::R64);
        let s = share_additive(&x, 2, &seed, 0).unwrap();
        assert_eq!(s[0].value.add(&s[1].value).unwrap(), x);
    }

    #[test]
    fn additive_deterministic() {
        let x = rand_tensor(5, vec![4], Ring::R64);
        let a = share_additive(&x, 4, &seed_from_u64(9), 3).unwrap();
        let b = share_additive(&x, 4, &seed_from_u64(9), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn additive_errors() {
        let x = rand_tensor(5, vec![4], Ring::R64);
        assert!(share_additive(&x, 1, &seed_from_u64(1), 0).is_err());
        let mut s = share_additive(&x, 3, &seed_from_u64(1), 0).unwrap();
        s.remove(1);
        assert_eq!(reconstruct_additive(&s), Err(Error::MissingShare(PartyId::P2)));
        let mut s = share_additive(&x, 2, &seed_from_u64(1), 0).unwrap();
        s[1].value = RingTensor::zeros(Ring::R64, vec![2, 2]);
        assert!(matches!(reconstruct_additive(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn exhaustive_small_ring() {
        let ring = Ring::new(8).unwrap();
        let seeds = SeedSet::derive(&seed_from_u64(3));
        for v in 0..256u64 {
            let x = RingTensor::new(ring, vec![1], vec![v]).unwrap();
            for n in [2, 3, 5] {
                let s = share_additive(&x, n, &seeds.dealer, v as u32).unwrap();
                assert_eq!(reconstruct_additive(&s).unwrap(), x);
            }
            let t = share_trio(&x, &seeds, v as u32).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2), (2, 1)] {
                assert_eq!(reconstruct_trio(&t[i], &t[j]).unwrap(), x);
            }
        }
    }

    #[test]
    fn trio_examples() {
        let seeds = SeedSet::derive(&seed_from_u64(11));
        let z = RingTensor::zeros(Ring::R64, vec![3]);
        let [p1, p2, p3] = share_trio(&z, &seeds, 0).unwrap();
        let TrioShare::P1 { lambda2, lambda3 } = &p1 else { panic!() };
        let TrioShare::P3 { m2, .. } = &p3 else { panic!() };
        let TrioShare::P2 { m3, .. } = &p2 else { panic!() };
        assert_eq!(m2, lambda2);
        assert_eq!(m3, lambda3);
        assert_eq!(reconstruct_trio(&p1, &p1), Err(Error::Parties("both views belong to P1".into())));
        assert_eq!(share_trio(&z, &seeds, 0).unwrap(), [p1, p2, p3]);
    }

    #[test]
    fn linear_combine_both_schemes() {
        let ring = Ring::R64;
        let seeds = SeedSet::derive(&seed_from_u64(2));
        let x = rand_tensor(1, vec![2, 3], ring);
        let y = rand_tensor(2, vec![2, 3], ring);
        let c = rand_tensor(3, vec![2, 3], ring);
        let want = x.scale(3).add(&y.scale(2)).unwrap().add(&c).unwrap();

        let xs = share_additive(&x, 3, &seeds.dealer, 1).unwrap();
        let ys = share_additive(&y, 3, &seeds.dealer, 2).unwrap();
        let out: Vec<Share> = (0..3)
            .map(|i| {
                let a = Share::Additive(xs[i].clone());
                let b = Share::Additive(ys[i].clone());
                linear_combine(&[(3, &a), (2, &b)], Some(&c)).unwrap()
            })
            .collect();
        assert_eq!(reconstruct(&out).unwrap(), want);

        let xt = share_trio(&x, &seeds, 1).unwrap();
        let yt = share_trio(&y, &seeds, 2).unwrap();
        let out: Vec<TrioShare> = (0..3)
            .map(|i| {
                let a = Share::Trio(xt[i].clone());
                let b = Share::Trio(yt[i].clone());
                match linear_combine(&[(3, &a), (2, &b)], Some(&c)).unwrap() {
                    Share::Trio(t) => t,
                    _ => unreachable!(),
                }
            })
            .collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(reconstruct_trio(&out[i], &out[j]).unwrap(), want);
        }

        // x + (−x) is a sharing of zero; 1·x + 0 is x
        let a = Share::Additive(xs[0].clone());
        let neg = linear_combine(&[(1, &a), (u64::MAX, &a)], None).unwrap();
        assert!(neg.as_additive().unwrap().value.data().iter().all(|&v| v == 0));
        assert_eq!(linear_combine(&[(1, &a)], None).unwrap(), a);
        let t = Share::Trio(xt[1].clone());
        assert!(linear_combine(&[(1, &a), (1, &t)], None).is_err());
    }
}
