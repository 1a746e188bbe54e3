//! Session-level metrics assembled from per-party statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plan::{ExecutionPlan, Op};
use crate::protocols::PartyStats;
use crate::schedule::{EventKind, EventProgram};
use crate::sim::Timeline;
use crate::sharing::PartyId;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Online rounds: the largest blocking-round count of any party.
    pub rounds: u32,
    pub party_rounds: Vec<u32>,
    /// Payload bytes per directed channel, keyed `"P<a>->P<b>"`.
    pub bytes: BTreeMap<String, u64>,
    pub total_bytes: u64,
    pub messages: u64,
    /// Simulated finish time of each party in milliseconds, when simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_ms: Option<Vec<f64>>,
    /// Multiplication and truncation material consumed by each party.
    pub triples_consumed: u64,
    pub masks_consumed: u64,
    /// Insecure operations performed; non-empty means the run leaked data.
    pub insecure: Vec<String>,
}

pub fn channel_key(from: PartyId, to: PartyId) -> String {
    format!("{from}->{to}")
}

impl Metrics {
    pub fn from_stats(stats: &[PartyStats]) -> Metrics {
        let mut m = Metrics::default();
        for (i, s) in stats.iter().enumerate() {
            let me = PartyId::from_index(i);
            m.party_rounds.push(s.rounds);
            m.rounds = m.rounds.max(s.rounds);
            for (&to, &b) in &s.sent {
                let to = PartyId::new(to).expect("party numbers start at 1");
                *m.bytes.entry(channel_key(me, to)).or_default() += b;
                m.total_bytes += b;
            }
            m.messages += s.messages;
            m.triples_consumed = m.triples_consumed.max(s.triples);
            m.masks_consumed = m.masks_consumed.max(s.masks);
            for w in &s.insecure {
                if !m.insecure.contains(w) {
                    m.insecure.push(w.clone());
                }
            }
        }
        m
    }

    /// Metrics predicted by the schedule, with simulated finish times when a
    /// timeline is given.
    pub fn from_program(plan: &ExecutionPlan, program: &EventProgram, timeline: Option<&Timeline>) -> Metrics {
        let mut m = Metrics::default();
        m.party_rounds = program.party_rounds();
        m.rounds = m.party_rounds.iter().copied().max().unwrap_or(0);
        for ((a, b), v) in program.bytes() {
            m.bytes.insert(channel_key(a, b), v);
            m.total_bytes += v;
        }
        m.messages = program.events.iter().filter(|e| matches!(e.kind, EventKind::Send { .. })).count() as u64;
        m.finish_ms = timeline.map(|t| t.finish_ms.clone());
        for step in &plan.steps {
            match step.op {
                Op::Matmul { .. } | Op::Square { .. } => m.triples_consumed += 1,
                Op::Trunc { .. } => m.masks_consumed += 1,
                Op::DebugRelu { .. } => m.insecure.push(format!("layer {}: debug ReLU revealed the activation", step.layer)),
                _ => {}
            }
        }
        m
    }

    pub fn is_insecure(&self) -> bool {
        !self.insecure.is_empty()
    }
}
