//! One party's online run over TCP, driven from its share and material files.

use std::path::Path;
use std::time::Duration;

use lrmpc_core::metrics::{channel_key, Metrics};
use lrmpc_core::net::Topology;
use lrmpc_core::plan::{ExecutionPlan, Protocol};
use lrmpc_core::protocols::{PartyContext, PartyStats, Secret};
use lrmpc_core::runtime::run_party;
use lrmpc_core::PartyId;

use crate::container::Container;
use crate::error::Result;
use crate::files::{read_material_file, read_share_file};
use crate::tcp::{EndpointConfig, TcpTransport};

pub struct PartyOutcome {
    pub plan: ExecutionPlan,
    pub output: Secret,
    pub stats: PartyStats,
    pub metrics: Metrics,
}

pub fn topology(p: Protocol) -> Topology {
    match p {
        Protocol::Npc(n) => Topology::FullBroadcast(n),
        Protocol::Trio => Topology::TrioChain,
    }
}

/// Metrics as seen by a single party.
pub fn party_metrics(me: PartyId, stats: &PartyStats) -> Metrics {
    let mut m = Metrics { rounds: stats.rounds, party_rounds: vec![stats.rounds], ..Default::default() };
    for (&to, &b) in &stats.sent {
        if let Ok(to) = PartyId::new(to) {
            m.bytes.insert(channel_key(me, to), b);
        }
        m.total_bytes += b;
    }
    m.messages = stats.messages;
    m.triples_consumed = stats.triples;
    m.masks_consumed = stats.masks;
    m.insecure = stats.insecure.clone();
    m
}

pub fn run_party_files(
    shares: &Path,
    material: &Path,
    endpoints: &EndpointConfig,
    allow_insecure: bool,
    timeout: Duration,
) -> Result<PartyOutcome> {
    let (plan, session, mut inputs) = read_share_file(&Container::load(shares)?)?;
    inputs.material = read_material_file(&Container::load(material)?, &plan)?;
    let me = inputs.input.owner();
    if me.number() != endpoints.party {
        return Err(lrmpc_core::Error::Config(format!("share file belongs to {me}, endpoint config to P{}", endpoints.party)).into());
    }
    let mut transport = TcpTransport::connect(endpoints, topology(plan.protocol), session, timeout)?;
    transport.set_timeout(Some(timeout));
    let mut ctx = PartyContext::new(&mut transport, plan.protocol.scheme(), plan.cfg, session).with_insecure(allow_insecure);
    let output = run_party(&plan, &mut ctx, inputs)?;
    let stats = ctx.stats().clone();
    drop(ctx);
    transport.close();
    let metrics = party_metrics(me, &stats);
    Ok(PartyOutcome { plan, output, stats, metrics })
}
