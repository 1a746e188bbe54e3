//! Probabilistic truncation `Trunc^d`.
//!
//! With the bias `x̂ = x + 2^{l−2}` (non-negative and below `2^{l−1}` inside the
//! sign-safe range) and the mask `r = B·2^{l−1} + R·2^d + R′`, the parties open
//! `S = x̂ + r`. Writing `s` for the top bit of `S` and `S′ = S mod 2^{l−1}`,
//! the carry out of the low `l−1` bits is `w = s ⊕ B = s + B − 2sB`, and
//!
//! ```text
//! y = ⌊S′/2^d⌋ − R + w·2^{l−1−d} − 2^{l−2−d} = ⌊x/2^d⌋ + e,  e ∈ {0, 1}
//! ```
//!
//! where `e` is the borrow between `S′ mod 2^d` and `R′`.
//!
//! Under masked sharing the coefficient `1 − 2s` depends on the opened value,
//! so P1 cannot know the output masks; one extra round re-masks the result
//! under fresh seed-derived masks.

use crate::dealer::TruncMaskShare;
use crate::error::{Error, Result};
use crate::net::Transport;
use crate::ring::RingTensor;
use crate::sharing::{linear_combine, PartyId, Share, TrioShare};
use crate::wire::MessageKind;

use super::{open, PartyContext, Secret};

pub fn trunc<T: Transport>(ctx: &mut PartyContext<T>, z: &Secret, mask: TruncMaskShare) -> Result<Secret> {
    let cfg = *ctx.cfg();
    let (l, d) = (cfg.l(), mask.d);
    let frac = z.frac.after_trunc(d, &cfg)?;
    if mask.r.shape() != z.share.shape() {
        return Err(Error::Material(alloc::format!("mask {:?} for tensor {:?}", mask.r.shape(), z.share.shape())));
    }
    ctx.note_mask();
    let ring = cfg.ring();
    let shifted = z.share.add_public_scalar(ring.pow2(l - 2));
    let r = linear_combine(&[(ring.pow2(l - 1), &mask.bit), (ring.pow2(d), &mask.r), (1, &mask.r_low)], None)?;
    let s_share = shifted.add(&r)?;
    let opened = open(ctx, &s_share, MessageKind::SOpen)?;

    let Some(s_pub) = opened else {
        // P1 under masked sharing: the result is re-masked under fresh masks it knows.
        let missing = || Error::Material("P1 truncation mask lacks fresh output masks".into());
        let share = TrioShare::P1 {
            lambda2: mask.fresh2.ok_or_else(missing)?,
            lambda3: mask.fresh3.ok_or_else(missing)?,
        };
        return Ok(Secret { share: Share::Trio(share), frac });
    };

    let low_mask = ring.pow2(l - 1).wrapping_sub(1);
    let top = |w: u64| (w >> (l - 1)) & 1;
    let public = s_pub.map(|w| {
        ((w & low_mask) >> d)
            .wrapping_sub(ring.pow2(l - 2 - d))
            .wrapping_add(top(w) << (l - 1 - d))
    });
    let coeff: RingTensor = s_pub.map(|w| if top(w) == 1 { ring.pow2(l - 1 - d).wrapping_neg() } else { ring.pow2(l - 1 - d) });
    let y = mask
        .bit
        .map_linear(|b| b.hadamard(&coeff))?
        .sub(&mask.r)?
        .add_public(&public)?;

    let share = match y {
        Share::Additive(_) => y,
        Share::Trio(TrioShare::P2 { m3, lambda2 }) => {
            let fresh2 = mask.fresh2.ok_or_else(|| Error::Material("P2 mask lacks λ′2".into()))?;
            let delta = fresh2.sub(&lambda2)?;
            let got = ctx.exchange(&[(PartyId::P3, MessageKind::Remask, &delta)], &[(PartyId::P3, MessageKind::Remask, m3.shape())])?;
            Share::Trio(TrioShare::P2 { m3: m3.add(&got[0])?, lambda2: fresh2 })
        }
        Share::Trio(TrioShare::P3 { m2, lambda3 }) => {
            let fresh3 = mask.fresh3.ok_or_else(|| Error::Material("P3 mask lacks λ′3".into()))?;
            let delta = fresh3.sub(&lambda3)?;
            let got = ctx.exchange(&[(PartyId::P2, MessageKind::Remask, &delta)], &[(PartyId::P2, MessageKind::Remask, m2.shape())])?;
            Share::Trio(TrioShare::P3 { m2: m2.add(&got[0])?, lambda3: fresh3 })
        }
        Share::Trio(TrioShare::P1 { .. }) => unreachable!("P1 never opens"),
    };
    Ok(Secret { share, frac })
}
