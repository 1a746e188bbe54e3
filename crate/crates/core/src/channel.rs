//! In-process transport over `std::sync::mpsc`, one channel per directed pair.
//!
//! Frames are encoded to bytes on send and decoded (CRC-checked) on receive, so
//! the byte counters see exactly what a socket would carry.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::net::{Phase, Topology, Transport};
use crate::sharing::PartyId;
use crate::wire::Frame;

/// Bytes carried per directed channel, shared by every endpoint of a mesh.
#[derive(Clone, Debug, Default)]
pub struct ChannelCounters {
    inner: Arc<BTreeMap<(PartyId, PartyId), AtomicU64>>,
}

impl ChannelCounters {
    fn new(pairs: &[(PartyId, PartyId)]) -> Self {
        ChannelCounters { inner: Arc::new(pairs.iter().map(|&p| (p, AtomicU64::new(0))).collect()) }
    }

    fn add(&self, from: PartyId, to: PartyId, bytes: u64) {
        if let Some(c) = self.inner.get(&(from, to)) {
            c.fetch_add(bytes, Ordering::Relaxed);
        }
    }

    pub fn get(&self, from: PartyId, to: PartyId) -> u64 {
        self.inner.get(&(from, to)).map_or(0, |c| c.load(Ordering::Relaxed))
    }

    pub fn snapshot(&self) -> BTreeMap<(PartyId, PartyId), u64> {
        self.inner.iter().map(|(&k, v)| (k, v.load(Ordering::Relaxed))).collect()
    }

    pub fn total(&self) -> u64 {
        self.inner.values().map(|v| v.load(Ordering::Relaxed)).sum()
    }
}

pub struct ChannelTransport {
    me: PartyId,
    topology: Topology,
    phase: Phase,
    senders: BTreeMap<PartyId, Sender<Vec<u8>>>,
    receivers: BTreeMap<PartyId, Receiver<Vec<u8>>>,
    counters: ChannelCounters,
    timeout: Option<Duration>,
}

impl ChannelTransport {
    /// One endpoint per party, wired for every channel the topology allows in
    /// either phase. Sends are checked against the current phase.
    pub fn mesh(topology: Topology) -> (Vec<ChannelTransport>, ChannelCounters) {
        let n = topology.parties();
        let mut pairs = topology.channels(Phase::Offline);
        for p in topology.channels(Phase::Online) {
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
        let counters = ChannelCounters::new(&pairs);
        let mut ends: Vec<ChannelTransport> = PartyId::all(n)
            .map(|me| ChannelTransport {
                me,
                topology,
                phase: Phase::Online,
                senders: BTreeMap::new(),
                receivers: BTreeMap::new(),
                counters: counters.clone(),
                timeout: None,
            })
            .collect();
        for (from, to) in pairs {
            let (tx, rx) = channel();
            ends[from.index()].senders.insert(to, tx);
            ends[to.index()].receivers.insert(from, rx);
        }
        (ends, counters)
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Receives fail with a transport error after `t` instead of blocking forever.
    pub fn set_timeout(&mut self, t: Option<Duration>) {
        self.timeout = t;
    }

    /// Injects raw bytes on a channel, bypassing framing. Test hook for fault
    /// injection.
    pub fn send_raw(&mut self, to: PartyId, bytes: Vec<u8>) -> Result<()> {
        let tx = self.senders.get(&to).ok_or(Error::NoChannel { from: self.me, to })?;
        tx.send(bytes).map_err(|_| self.disconnected(0, "peer hung up"))
    }

    fn disconnected(&self, layer: u32, reason: &str) -> Error {
        Error::Transport { party: self.me, layer, reason: reason.into() }
    }
}

impl Transport for ChannelTransport {
    fn me(&self) -> PartyId {
        self.me
    }

    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        self.topology.check(self.me, to, self.phase)?;
        let bytes = frame.encode();
        let tx = self.senders.get(&to).ok_or(Error::NoChannel { from: self.me, to })?;
        let len = bytes.len() as u64;
        tx.send(bytes).map_err(|_| self.disconnected(frame.layer, "peer hung up"))?;
        self.counters.add(self.me, to, len);
        Ok(())
    }

    fn recv(&mut self, from: PartyId) -> Result<Frame> {
        self.topology.check(from, self.me, self.phase)?;
        let rx = self.receivers.get(&from).ok_or(Error::NoChannel { from, to: self.me })?;
        let bytes = match self.timeout {
            None => rx.recv().map_err(|_| self.disconnected(0, &format!("{from} disconnected")))?,
            Some(t) => rx.recv_timeout(t).map_err(|_| self.disconnected(0, &format!("timed out waiting for {from}")))?,
        };
        let (frame, used) = Frame::decode(&bytes)?;
        if used != bytes.len() {
            return Err(Error::Frame(format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(frame)
    }
}

/// Runs one closure per party on its own thread over a fresh mesh and
/// collects the results in party order. A failing party drops its endpoint, so
/// peers blocked on it fail with a transport error instead of hanging.
pub fn run_mesh<R, F>(topology: Topology, f: F) -> (Vec<Result<R>>, ChannelCounters)
where
    R: Send,
    F: Fn(ChannelTransport) -> Result<R> + Sync,
{
    let (ends, counters) = ChannelTransport::mesh(topology);
    let f = &f;
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = ends.into_iter().map(|t| s.spawn(move || f(t))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Parties("party thread panicked".into()))))
            .collect()
    });
    (results, counters)
}
