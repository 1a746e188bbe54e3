//! Trusted-dealer offline phase.
//!
//! For the n-party protocol the dealer hands every party additive shares of
//! Beaver triples and truncation masks. For the three-party protocol the
//! dealer plays P1: it knows every mask `λ` (they come from the P1–P2 and
//! P1–P3 seeds), walks the plan once to follow the masks through each step,
//! and produces the corrections `N` (for P2) and `M` (for P3) plus the masked
//! halves of the truncation masks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::{ExecutionPlan, Op, Protocol, INPUT_LABEL};
use crate::prf::{domain, Purpose, Seed, SeedStream};
use crate::ring::{im2col, FixedPointConfig, Ring, RingTensor};
use crate::sharing::{share_additive, trio_from_masks, trio_masks, AdditiveShare, PartyId, SeedSet, Share};

/// One party's additive share of `(A, B, C)`, with `C = A ⊙ B` or, when
/// `elementwise`, `C = A ∘ B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleShare {
    pub a: RingTensor,
    pub b: RingTensor,
    pub c: RingTensor,
    pub elementwise: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub shares: Vec<TripleShare>,
}

/// One party's share of a truncation mask `r = B·2^{l−1} + R·2^d + R′`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncMaskShare {
    pub d: u32,
    /// Uniform in `[0, 2^{l−1−d})`.
    pub r: Share,
    /// Uniform in `[0, 2^d)`.
    pub r_low: Share,
    /// Uniform bit.
    pub bit: Share,
    /// Fresh output masks for three-party re-masking (`λ′2` for P1/P2, `λ′3`
    /// for P1/P3); `None` under additive sharing.
    pub fresh2: Option<RingTensor>,
    pub fresh3: Option<RingTensor>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncMask {
    pub d: u32,
    pub shares: Vec<TruncMaskShare>,
}

/// One party's view of the three-party multiplication preprocessing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrioMulShare {
    /// `N` for P2, `M` for P3, nothing for P1.
    pub correction: Option<RingTensor>,
    pub lambda2: Option<RingTensor>,
    pub lambda3: Option<RingTensor>,
    pub elementwise: bool,
}

/// Output of [`gen_trio_prep`]: both corrections and the output masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrioPrep {
    /// Sent P1 → P3.
    pub m: RingTensor,
    /// Sent P1 → P2.
    pub n: RingTensor,
    pub lambda_z2: RingTensor,
    pub lambda_z3: RingTensor,
    pub elementwise: bool,
}

impl TrioPrep {
    pub fn split(self) -> [TrioMulShare; 3] {
        let e = self.elementwise;
        [
            TrioMulShare { correction: None, lambda2: Some(self.lambda_z2.clone()), lambda3: Some(self.lambda_z3.clone()), elementwise: e },
            TrioMulShare { correction: Some(self.n), lambda2: Some(self.lambda_z2), lambda3: None, elementwise: e },
            TrioMulShare { correction: Some(self.m), lambda2: None, lambda3: Some(self.lambda_z3), elementwise: e },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Material {
    Triple(TripleShare),
    Trunc(TruncMaskShare),
    TrioMul(TrioMulShare),
}

impl Material {
    pub fn kind(&self) -> &'static str {
        match self {
            Material::Triple(_) => "triple",
            Material::Trunc(_) => "trunc",
            Material::TrioMul(_) => "trio-mul",
        }
    }
}

/// A party's offline material, indexed by plan slot. Every slot can be taken
/// exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyMaterial {
    pub owner: PartyId,
    slots: BTreeMap<u32, Option<Material>>,
}

impl PartyMaterial {
    pub fn new(owner: PartyId) -> Self {
        PartyMaterial { owner, slots: BTreeMap::new() }
    }

    pub fn insert(&mut self, slot: u32, m: Material) {
        self.slots.insert(slot, Some(m));
    }

    pub fn take(&mut self, slot: u32) -> Result<Material> {
        match self.slots.get_mut(&slot) {
            None => Err(Error::Material(format!("{} has no material for slot {slot}", self.owner))),
            Some(m) => m.take().ok_or(Error::StaleMaterial(slot)),
        }
    }

    pub fn take_triple(&mut self, slot: u32) -> Result<TripleShare> {
        match self.take(slot)? {
            Material::Triple(t) => Ok(t),
            m => Err(Error::Material(format!("slot {slot} holds {}, expected triple", m.kind()))),
        }
    }

    pub fn take_trunc(&mut self, slot: u32) -> Result<TruncMaskShare> {
        match self.take(slot)? {
            Material::Trunc(t) => Ok(t),
            m => Err(Error::Material(format!("slot {slot} holds {}, expected trunc mask", m.kind()))),
        }
    }

    pub fn take_trio_mul(&mut self, slot: u32) -> Result<TrioMulShare> {
        match self.take(slot)? {
            Material::TrioMul(t) => Ok(t),
            m => Err(Error::Material(format!("slot {slot} holds {}, expected trio preprocessing", m.kind()))),
        }
    }

    pub fn peek(&self, slot: u32) -> Option<&Material> {
        self.slots.get(&slot).and_then(Option::as_ref)
    }

    /// Slots not yet consumed, in order.
    pub fn remaining(&self) -> Vec<u32> {
        self.slots.iter().filter(|(_, m)| m.is_some()).map(|(&s, _)| s).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Material)> {
        self.slots.iter().filter_map(|(&s, m)| m.as_ref().map(|m| (s, m)))
    }
}

fn stream(seed: &Seed, purpose: Purpose, slot: u32, sub: u16) -> SeedStream {
    SeedStream::new(seed, domain(purpose, slot, sub))
}

fn additive_shares(x: &RingTensor, parties: usize, seed: &Seed, slot: u32, sub: u16) -> Result<Vec<AdditiveShare>> {
    // distinct label per (slot, sub) so that share streams never repeat
    share_additive(x, parties, seed, slot.wrapping_mul(16).wrapping_add(u32::from(sub)) | 0x8000_0000)
}

/// Beaver triple for an `m×n` by `n×o` product, drawn from the dealer seed.
pub fn gen_beaver(ring: Ring, m: usize, n: usize, o: usize, parties: usize, seed: &Seed, slot: u32) -> Result<BeaverTriple> {
    let a = stream(seed, Purpose::Triple, slot, 0).ring_tensor(ring, vec![m, n]);
    let b = stream(seed, Purpose::Triple, slot, 1).ring_tensor(ring, vec![n, o]);
    triple_from(a, b, false, parties, seed, slot)
}

/// Elementwise triple for a `rows×cols` Hadamard product.
pub fn gen_beaver_elementwise(ring: Ring, rows: usize, cols: usize, parties: usize, seed: &Seed, slot: u32) -> Result<BeaverTriple> {
    let a = stream(seed, Purpose::Triple, slot, 0).ring_tensor(ring, vec![rows, cols]);
    let b = stream(seed, Purpose::Triple, slot, 1).ring_tensor(ring, vec![rows, cols]);
    triple_from(a, b, true, parties, seed, slot)
}

/// Shares an explicit `(A, B)` pair; exposed so tests can force degenerate
/// triples.
pub fn triple_from(a: RingTensor, b: RingTensor, elementwise: bool, parties: usize, seed: &Seed, slot: u32) -> Result<BeaverTriple> {
    let c = if elementwise { a.hadamard(&b)? } else { a.matmul(&b)? };
    let sa = additive_shares(&a, parties, seed, slot, 2)?;
    let sb = additive_shares(&b, parties, seed, slot, 3)?;
    let sc = additive_shares(&c, parties, seed, slot, 4)?;
    let shares = sa
        .into_iter()
        .zip(sb)
        .zip(sc)
        .map(|((a, b), c)| TripleShare { a: a.value, b: b.value, c: c.value, elementwise })
        .collect();
    Ok(BeaverTriple { shares })
}

/// The plaintext mask components `(R, R′, B)`, before sharing.
pub fn trunc_mask_values(shape: &[usize], d: u32, cfg: &FixedPointConfig, seed: &Seed, slot: u32) -> Result<[RingTensor; 3]> {
    let l = cfg.l();
    if d == 0 || d + 2 > l {
        return Err(Error::TruncWidth { d, l });
    }
    let ring = cfg.ring();
    let r = stream(seed, Purpose::Mask, slot, 0).bounded_tensor(ring, shape.to_vec(), l - 1 - d);
    let r_low = stream(seed, Purpose::Mask, slot, 1).bounded_tensor(ring, shape.to_vec(), d);
    let bit = stream(seed, Purpose::Mask, slot, 2).bounded_tensor(ring, shape.to_vec(), 1);
    Ok([r, r_low, bit])
}

/// Truncation mask for `d` bits. Under masked sharing the masks' `λ` come from
/// the pairwise seeds and a fresh output mask pair is included.
pub fn gen_trunc_mask(shape: &[usize], d: u32, cfg: &FixedPointConfig, protocol: Protocol, seeds: &SeedSet, slot: u32) -> Result<TruncMask> {
    if d != cfg.f() && d != 2 * cfg.f() {
        return Err(Error::TruncWidth { d, l: cfg.l() });
    }
    let [r, r_low, bit] = trunc_mask_values(shape, d, cfg, &seeds.dealer, slot)?;
    let shares = match protocol {
        Protocol::Npc(n) => {
            let n = usize::from(n);
            let sr = additive_shares(&r, n, &seeds.dealer, slot, 5)?;
            let sl = additive_shares(&r_low, n, &seeds.dealer, slot, 6)?;
            let sb = additive_shares(&bit, n, &seeds.dealer, slot, 7)?;
            sr.into_iter()
                .zip(sl)
                .zip(sb)
                .map(|((r, l), b)| TruncMaskShare {
                    d,
                    r: Share::Additive(r),
                    r_low: Share::Additive(l),
                    bit: Share::Additive(b),
                    fresh2: None,
                    fresh3: None,
                })
                .collect()
        }
        Protocol::Trio => {
            let ring = cfg.ring();
            let trio = |x: &RingTensor, sub: u16| {
                let (l2, l3) = fresh_lambda(seeds, ring, shape, slot, sub);
                trio_from_masks(x, l2, l3)
            };
            let sr = trio(&r, 1)?;
            let sl = trio(&r_low, 2)?;
            let sb = trio(&bit, 3)?;
            let (f2, f3) = fresh_lambda(seeds, ring, shape, slot, 4);
            (0..3)
                .map(|i| TruncMaskShare {
                    d,
                    r: Share::Trio(sr[i].clone()),
                    r_low: Share::Trio(sl[i].clone()),
                    bit: Share::Trio(sb[i].clone()),
                    fresh2: (i != 2).then(|| f2.clone()),
                    fresh3: (i != 1).then(|| f3.clone()),
                })
                .collect()
        }
    };
    Ok(TruncMask { d, shares })
}

/// Fresh mask pair for a slot: `λ2` from the P1–P2 seed, `λ3` from P1–P3.
pub fn fresh_lambda(seeds: &SeedSet, ring: Ring, shape: &[usize], slot: u32, sub: u16) -> (RingTensor, RingTensor) {
    let l2 = stream(&seeds.p12, Purpose::Prep, slot, sub).ring_tensor(ring, shape.to_vec());
    let l3 = stream(&seeds.p13, Purpose::Prep, slot, sub).ring_tensor(ring, shape.to_vec());
    (l2, l3)
}

/// Corrections for `Z = X ⊙ Y` (or `X ∘ Y`) under masked sharing. With
/// `δX = λX3 − λX2`, `δY = λY3 − λY2`:
///
/// ```text
/// M = −δX⊙λY3 − λX3⊙δY + λX3⊙λY3 + λZ3
/// N =  δX⊙λY2 + λX2⊙δY + λX2⊙λY2 + λZ2
/// ```
pub fn gen_trio_prep(
    lx: (&RingTensor, &RingTensor),
    ly: (&RingTensor, &RingTensor),
    lz: (RingTensor, RingTensor),
    elementwise: bool,
) -> Result<TrioPrep> {
    let mul = |a: &RingTensor, b: &RingTensor| if elementwise { a.hadamard(b) } else { a.matmul(b) };
    let (x2, x3) = lx;
    let (y2, y3) = ly;
    let dx = x3.sub(x2)?;
    let dy = y3.sub(y2)?;
    let m = mul(x3, y3)?.sub(&mul(&dx, y3)?)?.sub(&mul(x3, &dy)?)?.add(&lz.1)?;
    let n = mul(&dx, y2)?.add(&mul(x2, &dy)?)?.add(&mul(x2, y2)?)?.add(&lz.0)?;
    Ok(TrioPrep { m, n, lambda_z2: lz.0, lambda_z3: lz.1, elementwise })
}

/// Produces every party's material for `plan`.
///
/// `publics` holds the encoded public operands (needed under masked sharing,
/// where the dealer follows masks through public products).
pub fn deal(plan: &ExecutionPlan, seeds: &SeedSet, publics: &BTreeMap<String, RingTensor>) -> Result<Vec<PartyMaterial>> {
    let cfg = &plan.cfg;
    let ring = cfg.ring();
    let parties = plan.protocol.parties();
    let mut out: Vec<PartyMaterial> = PartyId::all(parties).map(PartyMaterial::new).collect();
    match plan.protocol {
        Protocol::Npc(_) => {
            for step in &plan.steps {
                match &step.op {
                    Op::Matmul { slot, m, n, o, .. } => {
                        let t = gen_beaver(ring, *m, *n, *o, parties, &seeds.dealer, *slot)?;
                        for (p, s) in out.iter_mut().zip(t.shares) {
                            p.insert(*slot, Material::Triple(s));
                        }
                    }
                    Op::Square { slot, rows, cols } => {
                        let t = gen_beaver_elementwise(ring, *rows, *cols, parties, &seeds.dealer, *slot)?;
                        for (p, s) in out.iter_mut().zip(t.shares) {
                            p.insert(*slot, Material::Triple(s));
                        }
                    }
                    Op::Trunc { slot, d, rows, cols } => {
                        let t = gen_trunc_mask(&[*rows, *cols], *d, cfg, plan.protocol, seeds, *slot)?;
                        for (p, s) in out.iter_mut().zip(t.shares) {
                            p.insert(*slot, Material::Trunc(s));
                        }
                    }
                    _ => {}
                }
            }
        }
        Protocol::Trio => {
            let (mut l2, mut l3) = trio_masks(seeds, ring, &plan.input, INPUT_LABEL);
            for step in &plan.steps {
                match &step.op {
                    Op::Im2col { shape } => {
                        l2 = im2col(&l2, shape)?;
                        l3 = im2col(&l3, shape)?;
                    }
                    Op::Matmul { slot, weight, m, o, .. } => {
                        let t = plan.tensor(weight)?;
                        let (w2, w3) = trio_masks(seeds, ring, &t.shape, plan.label(weight)?);
                        let lz = fresh_lambda(seeds, ring, &[*m, *o], *slot, 0);
                        let prep = gen_trio_prep((&l2, &l3), (&w2, &w3), lz, false)?;
                        (l2, l3) = (prep.lambda_z2.clone(), prep.lambda_z3.clone());
                        for (p, s) in out.iter_mut().zip(prep.split()) {
                            p.insert(*slot, Material::TrioMul(s));
                        }
                    }
                    Op::Square { slot, rows, cols } => {
                        let lz = fresh_lambda(seeds, ring, &[*rows, *cols], *slot, 0);
                        let prep = gen_trio_prep((&l2, &l3), (&l2, &l3), lz, true)?;
                        (l2, l3) = (prep.lambda_z2.clone(), prep.lambda_z3.clone());
                        for (p, s) in out.iter_mut().zip(prep.split()) {
                            p.insert(*slot, Material::TrioMul(s));
                        }
                    }
                    Op::Trunc { slot, d, rows, cols } => {
                        let t = gen_trunc_mask(&[*rows, *cols], *d, cfg, plan.protocol, seeds, *slot)?;
                        l2 = t.shares[0].fresh2.clone().expect("P1 holds both fresh masks");
                        l3 = t.shares[0].fresh3.clone().expect("P1 holds both fresh masks");
                        for (p, s) in out.iter_mut().zip(t.shares) {
                            p.insert(*slot, Material::Trunc(s));
                        }
                    }
                    Op::PublicLeft { a, .. } => {
                        let a = publics.get(a).ok_or_else(|| Error::Material(format!("public operand {a:?} missing")))?;
                        l2 = a.matmul(&l2)?;
                        l3 = a.matmul(&l3)?;
                    }
                    Op::DebugRelu { rows, cols } => {
                        l2 = RingTensor::zeros(ring, vec![*rows, *cols]);
                        l3 = l2.clone();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Offline cost of one layer (or a whole plan).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineCost {
    /// Elements of `(A, B, C)` (or the masked-protocol equivalent) generated.
    pub triple_elements: u64,
    /// Tensor elements covered by truncation masks.
    pub trunc_mask_elements: u64,
    /// Secret-shared bits inside those masks: `l` per element for any `d`.
    pub trunc_shared_bits: u64,
    /// Bytes the dealer (P1 under masked sharing) sends, per directed channel.
    pub dealer_bytes: BTreeMap<String, u64>,
}

impl OfflineCost {
    fn absorb(&mut self, other: &OfflineCost) {
        self.triple_elements += other.triple_elements;
        self.trunc_mask_elements += other.trunc_mask_elements;
        self.trunc_shared_bits += other.trunc_shared_bits;
        for (k, v) in &other.dealer_bytes {
            *self.dealer_bytes.entry(k.clone()).or_default() += v;
        }
    }

    fn send(&mut self, channel: String, elements: u64, ring: Ring) {
        *self.dealer_bytes.entry(channel).or_default() += elements * ring.element_bytes();
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineCostReport {
    pub layers: Vec<(u32, OfflineCost)>,
    pub total: OfflineCost,
}

/// Closed-form offline cost of a plan; nothing is generated.
pub fn account(plan: &ExecutionPlan) -> OfflineCostReport {
    let ring = plan.cfg.ring();
    let l = u64::from(plan.cfg.l());
    let mut per: BTreeMap<u32, OfflineCost> = plan.layers.iter().map(|l| (l.index, OfflineCost::default())).collect();
    for step in &plan.steps {
        let cost = per.entry(step.layer).or_default();
        // (triple elements, per-party correlated elements to P_i, correction elements)
        let (triple, mask_len) = match &step.op {
            Op::Matmul { m, n, o, .. } => ((m * n + n * o + m * o) as u64, 0),
            Op::Square { rows, cols, .. } => ((3 * rows * cols) as u64, 0),
            Op::Trunc { rows, cols, .. } => (0, (rows * cols) as u64),
            _ => continue,
        };
        cost.triple_elements += triple;
        cost.trunc_mask_elements += mask_len;
        cost.trunc_shared_bits += mask_len * l;
        match plan.protocol {
            Protocol::Npc(n) => {
                for p in PartyId::all(usize::from(n)) {
                    cost.send(format!("dealer->{p}"), triple + 3 * mask_len, ring);
                }
            }
            Protocol::Trio => {
                let correction = match &step.op {
                    Op::Matmul { m, o, .. } => (m * o) as u64,
                    Op::Square { rows, cols, .. } => (rows * cols) as u64,
                    _ => 0,
                };
                for p in [PartyId::P2, PartyId::P3] {
                    cost.send(format!("{}->{p}", PartyId::P1), correction + 3 * mask_len, ring);
                }
            }
        }
    }
    let mut total = OfflineCost::default();
    per.values().for_each(|c| total.absorb(c));
    OfflineCostReport { layers: per.into_iter().collect(), total }
}
