//! Online protocols, each executed by one party against its transport.
//!
//! Every function here takes the party's [`PartyContext`] and its own shares
//! and returns its own share of the result. Round and byte counters live in
//! the context; a round is one batch of sends followed by the receives that
//! wait on them.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Transport;
use crate::plan::FractionState;
use crate::ring::{FixedPointConfig, RingTensor};
use crate::sharing::{PartyId, Scheme, Share};
use crate::wire::{Frame, MessageKind};

mod mul;
mod trunc;

pub use mul::{mul, npc_matmul, npc_urev_share, trio_matmul, MulKind};
pub use trunc::trunc;

/// A share together with the fraction bits it carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Secret {
    pub share: Share,
    pub frac: FractionState,
}

impl Secret {
    pub fn new(share: Share) -> Self {
        Secret { share, frac: FractionState::F }
    }
}

/// What one party has sent and how many rounds it has waited through.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyStats {
    pub rounds: u32,
    /// Payload bytes (`⌈l/8⌉` per element) sent to each peer, keyed by party number.
    pub sent: BTreeMap<u8, u64>,
    pub messages: u64,
    pub triples: u64,
    pub masks: u64,
    pub insecure: Vec<String>,
}

pub struct PartyContext<T> {
    transport: T,
    me: PartyId,
    scheme: Scheme,
    cfg: FixedPointConfig,
    session: u32,
    layer: u32,
    allow_insecure: bool,
    stats: PartyStats,
    pending: BTreeMap<PartyId, VecDeque<Frame>>,
}

impl<T: Transport> PartyContext<T> {
    pub fn new(transport: T, scheme: Scheme, cfg: FixedPointConfig, session: u32) -> Self {
        PartyContext {
            me: transport.me(),
            transport,
            scheme,
            cfg,
            session,
            layer: 0,
            allow_insecure: false,
            stats: PartyStats::default(),
            pending: BTreeMap::new(),
        }
    }

    pub fn with_insecure(mut self, allow: bool) -> Self {
        self.allow_insecure = allow;
        self
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn cfg(&self) -> &FixedPointConfig {
        &self.cfg
    }

    pub fn allow_insecure(&self) -> bool {
        self.allow_insecure
    }

    pub fn set_layer(&mut self, layer: u32) {
        self.layer = layer;
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn rounds(&self) -> u32 {
        self.stats.rounds
    }

    pub fn stats(&self) -> &PartyStats {
        &self.stats
    }

    pub fn into_parts(self) -> (T, PartyStats) {
        (self.transport, self.stats)
    }

    pub(crate) fn note_triple(&mut self) {
        self.stats.triples += 1;
    }

    pub(crate) fn note_mask(&mut self) {
        self.stats.masks += 1;
    }

    pub(crate) fn note_insecure(&mut self, what: String) {
        self.stats.insecure.push(what);
    }

    fn peers(&self) -> impl Iterator<Item = PartyId> + '_ {
        PartyId::all(self.scheme.parties()).filter(move |&p| p != self.me)
    }

    fn wrap(&self, e: Error) -> Error {
        match e {
            Error::Transport { party, reason, .. } => Error::Transport { party, layer: self.layer, reason },
            e => e,
        }
    }

    fn send(&mut self, to: PartyId, kind: MessageKind, data: &RingTensor) -> Result<()> {
        let frame = Frame { session: self.session, layer: self.layer, kind, payload: data.data().to_vec() };
        self.transport.send(to, frame).map_err(|e| self.wrap(e))?;
        *self.stats.sent.entry(to.number()).or_default() += data.len() as u64 * self.cfg.ring().element_bytes();
        self.stats.messages += 1;
        Ok(())
    }

    /// Sends without waiting: used for values that depend only on offline
    /// material and can go out ahead of time.
    pub fn send_ahead(&mut self, to: PartyId, kind: MessageKind, data: &RingTensor) -> Result<()> {
        self.send(to, kind, data)
    }

    /// Next frame of `kind` for the current layer from `from`, stashing any
    /// frames sent ahead for later steps.
    fn recv(&mut self, from: PartyId, kind: MessageKind, shape: &[usize]) -> Result<RingTensor> {
        let layer = self.layer;
        let queue = self.pending.entry(from).or_default();
        let frame = match queue.iter().position(|f| f.kind == kind && f.layer == layer) {
            Some(i) => queue.remove(i).expect("index from position"),
            None => loop {
                let f = self.transport.recv(from).map_err(|e| self.wrap(e))?;
                if f.session != self.session {
                    return Err(Error::Session { expected: self.session, got: f.session });
                }
                if f.kind == kind && f.layer == layer {
                    break f;
                }
                self.pending.entry(from).or_default().push_back(f);
            },
        };
        RingTensor::new(self.cfg.ring(), shape.to_vec(), frame.payload).map_err(|_| {
            Error::Shape(format!("{from} sent a {kind:?} payload that does not fit shape {shape:?} (layer {layer})"))
        })
    }

    /// One round: send everything in `out`, then wait for every entry of
    /// `incoming` (in order).
    pub fn exchange(
        &mut self,
        out: &[(PartyId, MessageKind, &RingTensor)],
        incoming: &[(PartyId, MessageKind, &[usize])],
    ) -> Result<Vec<RingTensor>> {
        for &(to, kind, data) in out {
            self.send(to, kind, data)?;
        }
        let got = incoming.iter().map(|&(from, kind, shape)| self.recv(from, kind, shape)).collect::<Result<Vec<_>>>()?;
        if !incoming.is_empty() {
            self.stats.rounds += 1;
        }
        Ok(got)
    }
}

/// Opens a share in one round.
///
/// Additive: every party broadcasts its share. Masked: P2 sends `m3` to P3 and
/// P3 sends `m2` to P2 in parallel; each subtracts its own mask. P1 takes no
/// part and gets `None`.
///
/// Only masked quantities may be opened: `kind` must be the truncation opening
/// or (with insecure operations enabled) the debug reveal.
pub fn open<T: Transport>(ctx: &mut PartyContext<T>, share: &Share, kind: MessageKind) -> Result<Option<RingTensor>> {
    match kind {
        MessageKind::SOpen => {}
        MessageKind::Debug if ctx.allow_insecure => {}
        MessageKind::Debug => return Err(Error::InsecureRefused("opening a value in the clear".into())),
        k => return Err(Error::Plan(format!("{k:?} is not an opening kind"))),
    }
    let shape = share.shape().to_vec();
    match share {
        Share::Additive(s) => {
            let peers: Vec<PartyId> = ctx.peers().collect();
            let out: Vec<_> = peers.iter().map(|&p| (p, kind, &s.value)).collect();
            let inc: Vec<_> = peers.iter().map(|&p| (p, kind, shape.as_slice())).collect();
            let got = ctx.exchange(&out, &inc)?;
            got.iter().try_fold(s.value.clone(), |acc, t| acc.add(t)).map(Some)
        }
        Share::Trio(t) => {
            use crate::sharing::TrioShare::*;
            match t {
                P1 { .. } => Ok(None),
                P2 { m3, lambda2 } => {
                    let got = ctx.exchange(&[(PartyId::P3, kind, m3)], &[(PartyId::P3, kind, &shape)])?;
                    got[0].sub(lambda2).map(Some)
                }
                P3 { m2, lambda3 } => {
                    let got = ctx.exchange(&[(PartyId::P2, kind, m2)], &[(PartyId::P2, kind, &shape)])?;
                    got[0].sub(lambda3).map(Some)
                }
            }
        }
    }
}

/// Insecure ReLU: opens `x`, applies `max(0, ·)` in the clear and reshares the
/// result as a public value. Refused unless the context allows insecure
/// operations; every use is recorded in the party's stats.
pub fn debug_relu<T: Transport>(ctx: &mut PartyContext<T>, x: &Secret) -> Result<Secret> {
    if !ctx.allow_insecure {
        return Err(Error::InsecureRefused(format!("debug ReLU at layer {}", ctx.layer)));
    }
    if x.frac != FractionState::F {
        return Err(Error::Fraction("debug ReLU on a share carrying extra fraction bits".into()));
    }
    let layer = ctx.layer;
    ctx.note_insecure(format!("layer {layer}: debug ReLU revealed the activation"));
    let ring = ctx.cfg.ring();
    let value = match open(ctx, &x.share, MessageKind::Debug)? {
        Some(v) => v.map(|w| if ring.to_signed(w) < 0 { 0 } else { w }),
        None => RingTensor::zeros(ring, x.share.shape().to_vec()),
    };
    Ok(Secret::new(Share::public(ctx.scheme, ctx.me, &value)))
}

/// `A ⊙ x` for a public `A`; local, adds `f` fraction bits.
pub fn public_matmul_left(a: &RingTensor, x: &Secret) -> Result<Secret> {
    Ok(Secret { share: x.share.map_linear(|t| a.matmul(t))?, frac: x.frac.after_mul()? })
}
