//! Per-party event programs derived from a plan, shape only.
//!
//! Events of all parties live in one list; dependencies always point to
//! earlier entries, so the list is a topological order. Each party's program
//! is its events in list order.
//!
//! Sequential modes chain every event of a party to its previous one. The
//! concatenated mode keeps only data dependencies; compute still runs one
//! event at a time per party (the simulator serializes it), so overlap comes
//! from messages in flight while the party computes:
//!
//! * additive sharing: every `Urev` share goes out at program start, and the
//!   `[A]⊙Urev` product of a layer is computed while that layer's `E` is in
//!   flight;
//! * masked sharing: `λX2⊙mY3` (offline masks times a static weight) is
//!   computed at program start and `mX⊙mY` while the correction is in flight.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::plan::{ExecutionPlan, Mode, Op, Protocol};
use crate::sharing::PartyId;
use crate::wire::MessageKind;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// Local ring products.
    MatmulLocal { macs: u64 },
    /// Elementwise local work: masking, combining, re-encoding.
    Combine { elems: u64 },
    Send { to: PartyId, kind: MessageKind, elems: u64 },
    /// `send` is the index of the matching `Send`.
    Recv { from: PartyId, kind: MessageKind, elems: u64, send: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub party: PartyId,
    pub layer: u32,
    pub label: &'static str,
    pub kind: EventKind,
    pub deps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventProgram {
    pub protocol: Protocol,
    pub mode: Mode,
    pub parties: usize,
    /// Bytes per ring element on the wire.
    pub element_bytes: u64,
    pub events: Vec<Event>,
}

impl EventProgram {
    /// Indices of `party`'s events in program order.
    pub fn program(&self, party: PartyId) -> impl Iterator<Item = usize> + '_ {
        (0..self.events.len()).filter(move |&i| self.events[i].party == party)
    }

    /// Checks acyclicity (dependencies point backwards), that each receive
    /// names a send on the same channel, kind, layer and size, and that every
    /// send is received exactly once.
    pub fn validate(&self) -> Result<()> {
        let mut received = vec![false; self.events.len()];
        for (i, e) in self.events.iter().enumerate() {
            if let Some(&d) = e.deps.iter().find(|&&d| d >= i) {
                return Err(Error::Plan(format!("event {i} depends on later event {d}")));
            }
            if let EventKind::Recv { from, kind, elems, send } = e.kind {
                let ok = send < i
                    && matches!(self.events[send].kind, EventKind::Send { to, kind: k, elems: n }
                        if to == e.party && k == kind && n == elems)
                    && self.events[send].party == from
                    && self.events[send].layer == e.layer
                    && e.deps.contains(&send);
                if !ok || received[send] {
                    return Err(Error::Plan(format!("receive {i} has no unique matching send")));
                }
                received[send] = true;
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if matches!(e.kind, EventKind::Send { .. }) && !received[i] {
                return Err(Error::Plan(format!("send {i} is never received")));
            }
        }
        Ok(())
    }

    /// Blocking rounds per party: the longest chain of send→receive edges
    /// ending at any of its events.
    pub fn party_rounds(&self) -> Vec<u32> {
        let mut depth = vec![0u32; self.events.len()];
        let mut out = vec![0u32; self.parties];
        for (i, e) in self.events.iter().enumerate() {
            let hop = match e.kind {
                EventKind::Recv { send, .. } => Some(send),
                _ => None,
            };
            depth[i] = e.deps.iter().map(|&d| depth[d] + u32::from(Some(d) == hop)).max().unwrap_or(0);
            let p = e.party.index();
            out[p] = out[p].max(depth[i]);
        }
        out
    }

    pub fn rounds(&self) -> u32 {
        self.party_rounds().into_iter().max().unwrap_or(0)
    }

    /// Payload bytes per directed channel implied by the sends.
    pub fn bytes(&self) -> BTreeMap<(PartyId, PartyId), u64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let EventKind::Send { to, elems, .. } = e.kind {
                *out.entry((e.party, to)).or_default() += elems * self.element_bytes;
            }
        }
        out
    }
}

struct Builder {
    events: Vec<Event>,
    last: Vec<Option<usize>>,
    /// Event producing each party's current activation share.
    value: Vec<Option<usize>>,
    sequential: bool,
    layer: u32,
}

impl Builder {
    fn push(&mut self, party: PartyId, label: &'static str, kind: EventKind, deps: &[Option<usize>]) -> usize {
        let mut deps: Vec<usize> = deps.iter().flatten().copied().collect();
        if self.sequential {
            deps.extend(self.last[party.index()]);
        }
        deps.sort_unstable();
        deps.dedup();
        let id = self.events.len();
        self.events.push(Event { party, layer: self.layer, label, kind, deps });
        self.last[party.index()] = Some(id);
        id
    }

    fn matmul(&mut self, p: PartyId, label: &'static str, macs: u64, deps: &[Option<usize>]) -> usize {
        self.push(p, label, EventKind::MatmulLocal { macs }, deps)
    }

    fn combine(&mut self, p: PartyId, label: &'static str, elems: u64, deps: &[Option<usize>]) -> usize {
        self.push(p, label, EventKind::Combine { elems }, deps)
    }

    fn send(&mut self, from: PartyId, to: PartyId, kind: MessageKind, elems: u64, dep: Option<usize>) -> usize {
        self.push(from, "send", EventKind::Send { to, kind, elems }, &[dep])
    }

    fn recv(&mut self, me: PartyId, send: usize) -> usize {
        let EventKind::Send { kind, elems, .. } = self.events[send].kind else {
            unreachable!("receives are built from sends")
        };
        let from = self.events[send].party;
        self.push(me, "recv", EventKind::Recv { from, kind, elems, send }, &[Some(send)])
    }

    /// One round in which each party in `senders` sends `elems` of `kind` to
    /// each of its `peers` after `ready[party]`; returns each party's receives.
    fn round(
        &mut self,
        parties: &[PartyId],
        peers: impl Fn(PartyId) -> Vec<PartyId>,
        kind: MessageKind,
        elems: u64,
        ready: &BTreeMap<PartyId, usize>,
    ) -> BTreeMap<PartyId, Vec<usize>> {
        let mut sends: BTreeMap<(PartyId, PartyId), usize> = BTreeMap::new();
        for &p in parties {
            for q in peers(p) {
                sends.insert((p, q), self.send(p, q, kind, elems, ready.get(&p).copied()));
            }
        }
        let mut got = BTreeMap::new();
        for &p in parties {
            let ids = peers(p).into_iter().map(|q| self.recv(p, sends[&(q, p)])).collect();
            got.insert(p, ids);
        }
        got
    }
}

fn opt(ids: &[usize]) -> Vec<Option<usize>> {
    ids.iter().map(|&i| Some(i)).collect()
}

/// Builds the event program of every party for `plan`.
pub fn schedule(plan: &ExecutionPlan) -> EventProgram {
    let n = plan.protocol.parties();
    let all: Vec<PartyId> = PartyId::all(n).collect();
    let concat = plan.mode.concat();
    let mut b = Builder { events: Vec::new(), last: vec![None; n], value: vec![None; n], sequential: !concat, layer: 0 };
    let peers_of = |p: PartyId| all.iter().copied().filter(|&q| q != p).collect::<Vec<_>>();
    let (p2, p3) = (PartyId::P2, PartyId::P3);
    let online = [p2, p3];
    let other = |p: PartyId| vec![if p == p2 { p3 } else { p2 }];

    // Prelude of the concatenated mode.
    let mut urev_in: BTreeMap<u32, BTreeMap<PartyId, Vec<usize>>> = BTreeMap::new();
    let mut urev_mask: BTreeMap<(u32, PartyId), usize> = BTreeMap::new();
    let mut pre: BTreeMap<(u32, PartyId), usize> = BTreeMap::new();
    if concat {
        for step in &plan.steps {
            let Op::Matmul { slot, m, n: k, o, .. } = step.op else { continue };
            b.layer = step.layer;
            match plan.protocol {
                Protocol::Npc(_) => {
                    let mut ready = BTreeMap::new();
                    for &p in &all {
                        let id = b.combine(p, "urev share", (k * o) as u64, &[]);
                        ready.insert(p, id);
                        urev_mask.insert((slot, p), id);
                    }
                    let got = b.round(&all, peers_of, MessageKind::Urev, (k * o) as u64, &ready);
                    urev_in.insert(slot, got);
                }
                Protocol::Trio => {
                    for p in online {
                        pre.insert((slot, p), b.matmul(p, "mask x weight", (m * k * o) as u64, &[]));
                    }
                }
            }
        }
    }

    for step in &plan.steps {
        b.layer = step.layer;
        let val = b.value.clone();
        let v = |p: PartyId| val[p.index()];
        match (&step.op, plan.protocol) {
            (Op::Im2col { shape }, proto) => {
                let elems = (shape.patch_rows() * shape.patch_cols()) as u64 * components(proto);
                for &p in &all {
                    let id = b.combine(p, "im2col", elems, &[v(p)]);
                    b.value[p.index()] = Some(id);
                }
            }
            (Op::PublicLeft { rows, inner, cols, .. }, proto) => {
                let macs = (rows * inner * cols) as u64 * components(proto);
                for &p in &all {
                    let id = b.matmul(p, "public left", macs, &[v(p)]);
                    b.value[p.index()] = Some(id);
                }
            }
            (&Op::Matmul { slot, m, n: k, o, .. }, Protocol::Npc(_)) => {
                let (e_len, u_len, z_len, macs) = ((m * k) as u64, (k * o) as u64, (m * o) as u64, (m * k * o) as u64);
                let mut ready = BTreeMap::new();
                let mut early = BTreeMap::new();
                for &p in &all {
                    let id = b.combine(p, "mask", if concat { e_len } else { e_len + u_len }, &[v(p)]);
                    ready.insert(p, id);
                }
                let e_in = b.round_split(&all, &peers_of, e_len, u_len, &ready, concat);
                let u_in = if concat { urev_in.remove(&slot).expect("prelude covers every matmul") } else { e_in.1 };
                for &p in &all {
                    if concat {
                        let mut deps = opt(&u_in[&p]);
                        deps.push(urev_mask.get(&(slot, p)).copied());
                        early.insert(p, b.matmul(p, "A x Urev", macs, &deps));
                    }
                }
                for &p in &all {
                    let (e_recv, u_recv) = (&e_in.0[&p], &u_in[&p]);
                    let late = b.matmul(p, "E x B", macs, &opt(e_recv));
                    let au = match early.get(&p) {
                        Some(&id) => id,
                        None => b.matmul(p, "A x Urev", macs, &opt(u_recv)),
                    };
                    let id = b.combine(p, "combine", z_len, &[Some(late), Some(au), v(p)]);
                    b.value[p.index()] = Some(id);
                }
            }
            (&Op::Square { rows, cols, .. }, Protocol::Npc(_)) => {
                let len = (rows * cols) as u64;
                let ready: BTreeMap<_, _> = all.iter().map(|&p| (p, b.combine(p, "mask", 2 * len, &[v(p)]))).collect();
                let (e_in, u_in) = b.round_split(&all, &peers_of, len, len, &ready, false);
                for &p in &all {
                    let mut deps = opt(&e_in[&p]);
                    deps.extend(opt(&u_in[&p]));
                    let id = b.combine(p, "combine", 3 * len, &deps);
                    b.value[p.index()] = Some(id);
                }
            }
            (&Op::Matmul { slot, m, n: k, o, .. }, Protocol::Trio) => {
                let macs = (m * k * o) as u64;
                trio_mul(&mut b, &online, &other, (m * o) as u64, v, |b, p| {
                    let corr = match pre.get(&(slot, p)) {
                        Some(&early) => b.matmul(p, "correction", macs, &[v(p), Some(early)]),
                        None => b.matmul(p, "correction", 2 * macs, &[v(p)]),
                    };
                    (corr, macs)
                });
            }
            (&Op::Square { rows, cols, .. }, Protocol::Trio) => {
                let len = (rows * cols) as u64;
                trio_mul(&mut b, &online, &other, len, v, |b, p| (b.matmul(p, "correction", 2 * len, &[v(p)]), len));
            }
            (&Op::Trunc { rows, cols, .. }, Protocol::Npc(_)) => {
                let len = (rows * cols) as u64;
                let ready: BTreeMap<_, _> = all.iter().map(|&p| (p, b.combine(p, "mask", len, &[v(p)]))).collect();
                let got = b.round(&all, peers_of, MessageKind::SOpen, len, &ready);
                for &p in &all {
                    let id = b.combine(p, "unmask", 2 * len, &opt(&got[&p]));
                    b.value[p.index()] = Some(id);
                }
            }
            (&Op::Trunc { rows, cols, .. }, Protocol::Trio) => {
                let len = (rows * cols) as u64;
                let ready: BTreeMap<_, _> = online.iter().map(|&p| (p, b.combine(p, "mask", len, &[v(p)]))).collect();
                let got = b.round(&online, other, MessageKind::SOpen, len, &ready);
                let ready: BTreeMap<_, _> =
                    online.iter().map(|&p| (p, b.combine(p, "unmask", 2 * len, &opt(&got[&p])))).collect();
                let got = b.round(&online, other, MessageKind::Remask, len, &ready);
                for p in online {
                    let mut deps = opt(&got[&p]);
                    deps.push(Some(ready[&p]));
                    let id = b.combine(p, "remask", len, &deps);
                    b.value[p.index()] = Some(id);
                }
            }
            (&Op::DebugRelu { rows, cols }, proto) => {
                let len = (rows * cols) as u64;
                let senders: Vec<PartyId> = match proto {
                    Protocol::Npc(_) => all.clone(),
                    Protocol::Trio => online.to_vec(),
                };
                let ready: BTreeMap<_, _> = senders.iter().filter_map(|&p| v(p).map(|id| (p, id))).collect();
                let got = match proto {
                    Protocol::Npc(_) => b.round(&senders, peers_of, MessageKind::Debug, len, &ready),
                    Protocol::Trio => b.round(&senders, other, MessageKind::Debug, len, &ready),
                };
                for &p in &senders {
                    let id = b.combine(p, "relu", len, &opt(&got[&p]));
                    b.value[p.index()] = Some(id);
                }
            }
        }
    }
    EventProgram {
        protocol: plan.protocol,
        mode: plan.mode,
        parties: n,
        element_bytes: plan.cfg.ring().element_bytes(),
        events: b.events,
    }
}

/// Ring components held per party: one additive share, or two masked values.
fn components(p: Protocol) -> u64 {
    match p {
        Protocol::Npc(_) => 1,
        Protocol::Trio => 2,
    }
}

/// P2 and P3 exchange their corrections; `correction` emits the pre-send
/// product and returns it with the size of the remaining `mX⊙mY` product.
/// In the concatenated mode `mX⊙mY` is computed before waiting.
fn trio_mul(
    b: &mut Builder,
    online: &[PartyId; 2],
    other: &dyn Fn(PartyId) -> Vec<PartyId>,
    out_len: u64,
    v: impl Fn(PartyId) -> Option<usize>,
    mut correction: impl FnMut(&mut Builder, PartyId) -> (usize, u64),
) {
    let mut ready = BTreeMap::new();
    let mut rest = BTreeMap::new();
    for &p in online {
        ready.insert(p, correction(b, p));
    }
    let mut sends = BTreeMap::new();
    for &p in online {
        let (id, macs) = ready[&p];
        let kind = if p == PartyId::P2 { MessageKind::Vmsg } else { MessageKind::Wmsg };
        let q = other(p)[0];
        sends.insert(p, b.send(p, q, kind, out_len, Some(id)));
        rest.insert(p, macs);
    }
    let concat = !b.sequential;
    let mut early = BTreeMap::new();
    if concat {
        for &p in online {
            early.insert(p, b.matmul(p, "mX x mY", rest[&p], &[v(p)]));
        }
    }
    for &p in online {
        let r = b.recv(p, sends[&other(p)[0]]);
        let mm = match early.get(&p) {
            Some(&id) => id,
            None => b.matmul(p, "mX x mY", rest[&p], &[v(p)]),
        };
        let id = b.combine(p, "combine", out_len, &[Some(r), Some(mm)]);
        b.value[p.index()] = Some(id);
    }
}

impl Builder {
    /// The Beaver opening round: `E` (and `Urev` unless already sent) to every
    /// peer. Returns the `E` and `Urev` receives per party.
    #[allow(clippy::type_complexity)]
    fn round_split(
        &mut self,
        all: &[PartyId],
        peers: &dyn Fn(PartyId) -> Vec<PartyId>,
        e_len: u64,
        u_len: u64,
        ready: &BTreeMap<PartyId, usize>,
        urev_sent: bool,
    ) -> (BTreeMap<PartyId, Vec<usize>>, BTreeMap<PartyId, Vec<usize>>) {
        let mut sends = BTreeMap::new();
        for &p in all {
            for q in peers(p) {
                let e = self.send(p, q, MessageKind::E, e_len, ready.get(&p).copied());
                let u = (!urev_sent).then(|| self.send(p, q, MessageKind::Urev, u_len, ready.get(&p).copied()));
                sends.insert((p, q), (e, u));
            }
        }
        let (mut e_in, mut u_in) = (BTreeMap::new(), BTreeMap::new());
        for &p in all {
            let (mut es, mut us) = (Vec::new(), Vec::new());
            for q in peers(p) {
                let (e, u) = sends[&(q, p)];
                es.push(self.recv(p, e));
                if let Some(u) = u {
                    us.push(self.recv(p, u));
                }
            }
            e_in.insert(p, es);
            u_in.insert(p, us);
        }
        (e_in, u_in)
    }
}
