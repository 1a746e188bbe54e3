//! Deterministic discrete-event simulation of an [`EventProgram`].
//!
//! Events are processed in list order, which is topological. An event starts
//! once its dependencies finish; compute events additionally wait for the
//! party's previous compute (one core per party). Sends are non-blocking. A
//! message arrives `latency + bytes·8/bandwidth` after its send is ready, and
//! never before an earlier message on the same channel.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetworkProfile;
use crate::schedule::{EventKind, EventProgram};
use crate::sharing::PartyId;

/// Compute time charged per event: `ns_per_mac·macs + ns_per_elem·elems`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub ns_per_mac: f64,
    pub ns_per_elem: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { ns_per_mac: 1.0, ns_per_elem: 0.5 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.ns_per_mac >= 0.0 && self.ns_per_mac.is_finite() && self.ns_per_elem >= 0.0 && self.ns_per_elem.is_finite()) {
            return Err(Error::Config(alloc::format!("invalid cost model {self:?}")));
        }
        Ok(())
    }

    fn millis(&self, kind: &EventKind) -> f64 {
        match *kind {
            EventKind::MatmulLocal { macs } => macs as f64 * self.ns_per_mac * 1e-6,
            EventKind::Combine { elems } => elems as f64 * self.ns_per_elem * 1e-6,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub cost: CostModel,
    /// Extra delivery delay drawn uniformly from `[0, jitter_ms)` per message.
    pub jitter_ms: f64,
    pub seed: u64,
}

/// One bar of the Gantt chart. Sends span from ready to arrival; receives
/// from the moment the party starts waiting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub event: usize,
    pub party: PartyId,
    pub layer: u32,
    pub label: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub profile: String,
    pub finish_ms: Vec<f64>,
    /// Latest finish over all parties.
    pub critical_path_ms: f64,
    pub rounds: u32,
    pub bytes: BTreeMap<String, u64>,
    pub spans: Vec<Span>,
}

pub fn simulate(program: &EventProgram, profile: &NetworkProfile, opts: &SimOptions) -> Result<Timeline> {
    program.validate()?;
    profile.validate()?;
    opts.cost.validate()?;
    if !(opts.jitter_ms >= 0.0 && opts.jitter_ms.is_finite()) {
        return Err(Error::Config(alloc::format!("invalid jitter {}", opts.jitter_ms)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = program.parties;
    let mut finish = vec![0.0f64; program.events.len()];
    let mut arrival = vec![0.0f64; program.events.len()];
    let mut cpu_free = vec![0.0f64; n];
    let mut channel_free: BTreeMap<(PartyId, PartyId), f64> = BTreeMap::new();
    let mut party_finish = vec![0.0f64; n];
    let mut spans = Vec::with_capacity(program.events.len());

    for (i, e) in program.events.iter().enumerate() {
        let p = e.party.index();
        let (start, end) = match e.kind {
            EventKind::MatmulLocal { .. } | EventKind::Combine { .. } => {
                let ready = e.deps.iter().map(|&d| finish[d]).fold(cpu_free[p], f64::max);
                let end = ready + opts.cost.millis(&e.kind);
                cpu_free[p] = end;
                (ready, end)
            }
            EventKind::Send { to, elems, .. } => {
                let ready = e.deps.iter().map(|&d| finish[d]).fold(0.0, f64::max);
                let jitter = if opts.jitter_ms > 0.0 { unit(&mut rng) * opts.jitter_ms } else { 0.0 };
                let t = ready + profile.link(e.party, to).deliver_time(elems * program.element_bytes) + jitter;
                let fifo = channel_free.entry((e.party, to)).or_insert(0.0);
                *fifo = fifo.max(t);
                arrival[i] = *fifo;
                finish[i] = ready;
                spans.push(Span { event: i, party: e.party, layer: e.layer, label: "send".into(), start_ms: ready, end_ms: arrival[i] });
                party_finish[p] = party_finish[p].max(ready);
                continue;
            }
            EventKind::Recv { send, .. } => {
                let waiting = e.deps.iter().filter(|&&d| d != send).map(|&d| finish[d]).fold(0.0, f64::max);
                (waiting, waiting.max(arrival[send]))
            }
        };
        finish[i] = end;
        party_finish[p] = party_finish[p].max(end);
        spans.push(Span { event: i, party: e.party, layer: e.layer, label: e.label.into(), start_ms: start, end_ms: end });
    }

    let bytes = program
        .bytes()
        .into_iter()
        .map(|((a, b), v)| (crate::metrics::channel_key(a, b), v))
        .collect();
    Ok(Timeline {
        profile: profile.name.clone(),
        critical_path_ms: party_finish.iter().copied().fold(0.0, f64::max),
        finish_ms: party_finish,
        rounds: program.rounds(),
        bytes,
        spans,
    })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Longest path through the event graph, weighting compute events by the
/// cost model, message edges by their delivery time and ignoring CPU
/// contention and FIFO ordering. A lower bound on the simulated finish time.
pub fn longest_path_ms(program: &EventProgram, profile: &NetworkProfile, cost: &CostModel) -> f64 {
    let mut t = vec![0.0f64; program.events.len()];
    for (i, e) in program.events.iter().enumerate() {
        let base = e.deps.iter().map(|&d| {
            let edge = match (&program.events[d].kind, &e.kind) {
                (EventKind::Send { to, elems, .. }, EventKind::Recv { send, .. }) if *send == d => {
                    profile.link(program.events[d].party, *to).deliver_time(elems * program.element_bytes)
                }
                _ => 0.0,
            };
            t[d] + edge
        });
        t[i] = base.fold(0.0, f64::max) + cost.millis(&e.kind);
    }
    t.into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{build_plan, fc_stack, Mode, Protocol, Policy};
    use crate::ring::FixedPointConfig;
    use crate::schedule::schedule;

    fn program(protocol: Protocol, mode: Mode, depth: usize, width: usize) -> EventProgram {
        let plan = build_plan(&fc_stack(1, width, depth), protocol, mode, &Policy::default(), FixedPointConfig::default()).unwrap();
        schedule(&plan)
    }

    #[test]
    fn ideal_network_is_pure_compute() {
        let cost = CostModel::default();
        for mode in [Mode::FullRank, Mode::Lr, Mode::LrTs] {
            let p = program(Protocol::Npc(2), mode, 2, 32);
            let t = simulate(&p, &NetworkProfile::ideal(), &SimOptions::default()).unwrap();
            // a sequential program is a chain per party; both parties do the same work
            let work: f64 = p.program(PartyId::P1).map(|i| cost.millis(&p.events[i].kind)).sum();
            assert!((t.finish_ms[0] - work).abs() < 1e-9, "{mode:?}");
            assert!((t.critical_path_ms - work).abs() < 1e-9);
        }
    }

    #[test]
    fn wan_full_rank_layer_pays_two_latencies() {
        let p = program(Protocol::Npc(2), Mode::FullRank, 1, 8);
        let t = simulate(&p, &NetworkProfile::wan(), &SimOptions::default()).unwrap();
        assert!(t.critical_path_ms >= 2.0 * 17.5);
        assert!(t.critical_path_ms < 2.0 * 17.5 + 0.1);
    }

    #[test]
    fn rounds_do_not_depend_on_profile() {
        let p = program(Protocol::Trio, Mode::LrTs, 2, 16);
        let r: Vec<u32> = [NetworkProfile::lan(), NetworkProfile::wan(), NetworkProfile::ideal()]
            .iter()
            .map(|n| simulate(&p, n, &SimOptions::default()).unwrap().rounds)
            .collect();
        assert_eq!(r, [8, 8, 8]);
    }

    #[test]
    fn latency_bound_programs_match_round_count() {
        // negligible compute and bytes: finish = rounds × one-way latency
        let lat = NetworkProfile::uniform("flat", 10.0, f64::INFINITY);
        let opts = SimOptions { cost: CostModel { ns_per_mac: 0.0, ns_per_elem: 0.0 }, ..Default::default() };
        for proto in [Protocol::Npc(3), Protocol::Trio] {
            for mode in Mode::ALL {
                let p = program(proto, mode, 3, 8);
                let t = simulate(&p, &lat, &opts).unwrap();
                assert!((t.critical_path_ms - 10.0 * p.rounds() as f64).abs() < 1e-9, "{proto:?} {mode:?}");
            }
        }
    }

    #[test]
    fn simulation_is_bounded_below_by_longest_path() {
        for mode in Mode::ALL {
            let p = program(Protocol::Npc(2), mode, 3, 64);
            let net = NetworkProfile::man();
            let t = simulate(&p, &net, &SimOptions::default()).unwrap();
            let lp = longest_path_ms(&p, &net, &CostModel::default());
            assert!(t.critical_path_ms + 1e-9 >= lp, "{mode:?}");
        }
    }

    #[test]
    fn jitter_is_seeded_and_keeps_fifo() {
        let p = program(Protocol::Npc(3), Mode::LrTsConcat, 3, 32);
        let opts = SimOptions { jitter_ms: 5.0, seed: 9, ..Default::default() };
        let a = simulate(&p, &NetworkProfile::lan(), &opts).unwrap();
        let b = simulate(&p, &NetworkProfile::lan(), &opts).unwrap();
        assert_eq!(a, b);
        let mut last: BTreeMap<(PartyId, PartyId), f64> = BTreeMap::new();
        for s in a.spans.iter().filter(|s| s.label == "send") {
            let EventKind::Send { to, .. } = p.events[s.event].kind else { unreachable!() };
            let prev = last.entry((s.party, to)).or_insert(0.0);
            assert!(s.end_ms >= *prev);
            *prev = s.end_ms;
        }
        // every receive completes no earlier than its message arrives
        let arrival: BTreeMap<usize, f64> = a.spans.iter().filter(|s| s.label == "send").map(|s| (s.event, s.end_ms)).collect();
        for s in a.spans.iter().filter(|s| s.label == "recv") {
            let EventKind::Recv { send, .. } = p.events[s.event].kind else { unreachable!() };
            assert!(s.end_ms >= arrival[&send]);
        }
    }
}
