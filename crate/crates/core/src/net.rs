//! Transport abstraction, channel topologies and network profiles.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharing::PartyId;
use crate::wire::Frame;

/// Point-to-point frame delivery for one party.
///
/// `send` enqueues and returns; `recv` blocks until the next frame on the
/// `from → me` channel arrives. Channels are FIFO; nothing is assumed about
/// ordering across channels.
pub trait Transport {
    fn me(&self) -> PartyId;
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()>;
    fn recv(&mut self, from: PartyId) -> Result<Frame>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn me(&self) -> PartyId {
        (**self).me()
    }
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        (**self).send(to, frame)
    }
    fn recv(&mut self, from: PartyId) -> Result<Frame> {
        (**self).recv(from)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// All ordered pairs among `n` parties.
    FullBroadcast(u8),
    /// P1→P2 and P1→P3 offline, P2↔P3 online.
    TrioChain,
}

impl Topology {
    pub fn parties(&self) -> usize {
        match self {
            Topology::FullBroadcast(n) => usize::from(*n),
            Topology::TrioChain => 3,
        }
    }

    pub fn has_channel(&self, from: PartyId, to: PartyId, phase: Phase) -> bool {
        if from == to || from.index() >= self.parties() || to.index() >= self.parties() {
            return false;
        }
        match self {
            Topology::FullBroadcast(_) => true,
            Topology::TrioChain => match (from.number(), to.number()) {
                (2, 3) | (3, 2) => true,
                (1, 2) | (1, 3) => phase == Phase::Offline,
                _ => false,
            },
        }
    }

    pub fn check(&self, from: PartyId, to: PartyId, phase: Phase) -> Result<()> {
        if self.has_channel(from, to, phase) {
            Ok(())
        } else {
            Err(Error::NoChannel { from, to })
        }
    }

    /// Every directed channel available in `phase`.
    pub fn channels(&self, phase: Phase) -> Vec<(PartyId, PartyId)> {
        let n = self.parties();
        let mut out = Vec::new();
        for a in PartyId::all(n) {
            for b in PartyId::all(n) {
                if self.has_channel(a, b, phase) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Latency and bandwidth of a link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    /// One-way latency in milliseconds.
    pub latency_ms: f64,
    pub bandwidth_gbps: f64,
}

impl LinkProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_ms >= 0.0) || !(self.bandwidth_gbps > 0.0) {
            return Err(Error::Config(alloc::format!("invalid link profile {self:?}")));
        }
        Ok(())
    }

    /// Milliseconds from send-ready to arrival: `latency + bytes·8 / bandwidth`.
    pub fn deliver_time(&self, bytes: u64) -> f64 {
        self.latency_ms + bytes as f64 * 8.0 / (self.bandwidth_gbps * 1e9) * 1e3
    }
}

/// A uniform link profile with optional per-channel overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: alloc::string::String,
    #[serde(flatten)]
    pub link: LinkProfile,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<alloc::string::String, LinkProfile>,
}

impl NetworkProfile {
    pub fn uniform(name: &str, latency_ms: f64, bandwidth_gbps: f64) -> Self {
        NetworkProfile {
            name: name.into(),
            link: LinkProfile { latency_ms, bandwidth_gbps },
            overrides: BTreeMap::new(),
        }
    }

    /// 10 Gbps, 0.2 ms one-way.
    pub fn lan() -> Self {
        Self::uniform("lan", 0.2, 10.0)
    }

    /// 5 Gbps, 5 ms round trip.
    pub fn man() -> Self {
        Self::uniform("man", 2.5, 5.0)
    }

    /// 5 Gbps, 35 ms round trip.
    pub fn wan() -> Self {
        Self::uniform("wan", 17.5, 5.0)
    }

    /// Zero latency and effectively unbounded bandwidth.
    pub fn ideal() -> Self {
        Self::uniform("ideal", 0.0, f64::INFINITY)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "lan" => Some(Self::lan()),
            "man" => Some(Self::man()),
            "wan" => Some(Self::wan()),
            "ideal" => Some(Self::ideal()),
            _ => None,
        }
    }

    /// Override key format: `"<from>-><to>"` with 1-based party numbers.
    pub fn link(&self, from: PartyId, to: PartyId) -> LinkProfile {
        let key = alloc::format!("{}->{}", from.number(), to.number());
        self.overrides.get(&key).copied().unwrap_or(self.link)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.overrides.values().try_for_each(LinkProfile::validate)
    }
}

/// `latency + bytes·8 / bandwidth`, in milliseconds.
pub fn deliver_time(bytes: u64, profile: &LinkProfile) -> f64 {
    profile.deliver_time(bytes)
}
