//! Secure multiplication: Beaver triples (additive) and masked three-party
//! multiplication.

use alloc::vec::Vec;

use crate::dealer::{Material, TripleShare, TrioMulShare};
use crate::error::{Error, Result};
use crate::net::Transport;
use crate::ring::RingTensor;
use crate::sharing::{AdditiveShare, PartyId, Share, TrioShare};
use crate::wire::MessageKind;

use super::{PartyContext, Secret};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MulKind {
    Matmul,
    Hadamard,
}

impl MulKind {
    fn apply(self, a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
        match self {
            MulKind::Matmul => a.matmul(b),
            MulKind::Hadamard => a.hadamard(b),
        }
    }

    fn from_elementwise(e: bool) -> Self {
        if e {
            MulKind::Hadamard
        } else {
            MulKind::Matmul
        }
    }
}

fn out_shape(kind: MulKind, x: &Share, y: &Share) -> Result<Vec<usize>> {
    match kind {
        MulKind::Hadamard => {
            if x.shape() != y.shape() {
                return Err(Error::Shape(alloc::format!("hadamard {:?} vs {:?}", x.shape(), y.shape())));
            }
            Ok(x.shape().to_vec())
        }
        MulKind::Matmul => {
            let (m, n) = x.dims2()?;
            let (n2, o) = y.dims2()?;
            if n != n2 {
                return Err(Error::Shape(alloc::format!("matmul {m}x{n} by {n2}x{o}")));
            }
            Ok(alloc::vec![m, o])
        }
    }
}

/// This party's share of `Urev = Y − B`, which depends only on the weight share
/// and the triple and can therefore be sent before the input exists.
pub fn npc_urev_share(y: &Share, triple: &TripleShare) -> Result<RingTensor> {
    y.as_additive()?.value.sub(&triple.b)
}

/// Beaver multiplication. Opens `E = X − A` and `Urev = Y − B` back to back in
/// one round, then `[Z]_i = E⊙[B]_i + [A]_i⊙Urev + [C]_i`, with P1 also adding
/// `E⊙Urev` (folded in as `E⊙([B]_1 + Urev)`).
///
/// With `urev_sent` the party already sent its `Urev` share ahead of time and
/// only waits for the peers' shares here.
pub fn npc_matmul<T: Transport>(
    ctx: &mut PartyContext<T>,
    x: &Secret,
    y: &Secret,
    triple: TripleShare,
    urev_sent: bool,
) -> Result<Secret> {
    let kind = MulKind::from_elementwise(triple.elementwise);
    let frac = x.frac.after_mul()?;
    let shape = out_shape(kind, &x.share, &y.share)?;
    let xs = &x.share.as_additive()?.value;
    let ys = &y.share.as_additive()?.value;
    if xs.shape() != triple.a.shape() || ys.shape() != triple.b.shape() {
        return Err(Error::Material(alloc::format!(
            "triple is {:?}x{:?}, operands {:?}x{:?}",
            triple.a.shape(),
            triple.b.shape(),
            xs.shape(),
            ys.shape()
        )));
    }
    ctx.note_triple();
    let e_mine = xs.sub(&triple.a)?;
    let u_mine = ys.sub(&triple.b)?;
    let peers: Vec<PartyId> = ctx.peers().collect();
    let mut out = Vec::new();
    for &p in &peers {
        out.push((p, MessageKind::E, &e_mine));
        if !urev_sent {
            out.push((p, MessageKind::Urev, &u_mine));
        }
    }
    let mut inc = Vec::new();
    for &p in &peers {
        inc.push((p, MessageKind::E, xs.shape()));
        inc.push((p, MessageKind::Urev, ys.shape()));
    }
    let got = ctx.exchange(&out, &inc)?;
    let (mut e, mut u) = (e_mine, u_mine);
    for pair in got.chunks(2) {
        e = e.add(&pair[0])?;
        u = u.add(&pair[1])?;
    }
    let b_term = if ctx.me() == PartyId::P1 { triple.b.add(&u)? } else { triple.b.clone() };
    let z = kind.apply(&e, &b_term)?.add(&kind.apply(&triple.a, &u)?)?.add(&triple.c)?;
    debug_assert_eq!(z.shape(), shape.as_slice());
    Ok(Secret { share: Share::Additive(AdditiveShare { owner: ctx.me(), value: z }), frac })
}

/// Masked three-party multiplication. P1 is silent online and takes the fresh
/// output masks. P2 sends `Vmsg = −mX3⊙λY2 − λX2⊙mY3 + N` to P3 while P3 sends
/// `Wmsg = −mX2⊙λY3 − λX3⊙mY2 + M` to P2; then P2 sets
/// `mZ3 = mX3⊙mY3 + Wmsg` and P3 sets `mZ2 = mX2⊙mY2 + Vmsg`.
pub fn trio_matmul<T: Transport>(ctx: &mut PartyContext<T>, x: &Secret, y: &Secret, prep: TrioMulShare) -> Result<Secret> {
    let kind = MulKind::from_elementwise(prep.elementwise);
    let frac = x.frac.after_mul()?;
    let shape = out_shape(kind, &x.share, &y.share)?;
    let missing = || Error::Material("three-party preprocessing is missing a component".into());
    ctx.note_triple();
    let share = match (x.share.as_trio()?, y.share.as_trio()?) {
        (TrioShare::P1 { .. }, TrioShare::P1 { .. }) => TrioShare::P1 {
            lambda2: prep.lambda2.ok_or_else(missing)?,
            lambda3: prep.lambda3.ok_or_else(missing)?,
        },
        (TrioShare::P2 { m3: mx3, lambda2: lx2 }, TrioShare::P2 { m3: my3, lambda2: ly2 }) => {
            let n = prep.correction.ok_or_else(missing)?;
            let v = n.sub(&kind.apply(mx3, ly2)?)?.sub(&kind.apply(lx2, my3)?)?;
            let got = ctx.exchange(&[(PartyId::P3, MessageKind::Vmsg, &v)], &[(PartyId::P3, MessageKind::Wmsg, &shape)])?;
            let m3 = kind.apply(mx3, my3)?.add(&got[0])?;
            TrioShare::P2 { m3, lambda2: prep.lambda2.ok_or_else(missing)? }
        }
        (TrioShare::P3 { m2: mx2, lambda3: lx3 }, TrioShare::P3 { m2: my2, lambda3: ly3 }) => {
            let m = prep.correction.ok_or_else(missing)?;
            let w = m.sub(&kind.apply(mx2, ly3)?)?.sub(&kind.apply(lx3, my2)?)?;
            let got = ctx.exchange(&[(PartyId::P2, MessageKind::Wmsg, &w)], &[(PartyId::P2, MessageKind::Vmsg, &shape)])?;
            let m2 = kind.apply(mx2, my2)?.add(&got[0])?;
            TrioShare::P3 { m2, lambda3: prep.lambda3.ok_or_else(missing)? }
        }
        _ => return Err(Error::Parties("operands belong to different parties".into())),
    };
    Ok(Secret { share: Share::Trio(share), frac })
}

/// Multiplication under whichever scheme `material` belongs to.
pub fn mul<T: Transport>(ctx: &mut PartyContext<T>, x: &Secret, y: &Secret, material: Material, urev_sent: bool) -> Result<Secret> {
    match material {
        Material::Triple(t) => npc_matmul(ctx, x, y, t, urev_sent),
        Material::TrioMul(p) => trio_matmul(ctx, x, y, p),
        Material::Trunc(_) => Err(Error::Material("truncation mask given to a multiplication".into())),
    }
}
