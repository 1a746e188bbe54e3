//! Ablation table: modes × protocols × networks on a synthetic FC stack, from
//! the schedule and simulator, plus offline element counts.

use std::time::Instant;

use lrmpc_core::dealer::{account, OfflineCostReport};
use lrmpc_core::net::NetworkProfile;
use lrmpc_core::plan::{build_plan, fc_stack, Mode, Policy, Protocol};
use lrmpc_core::ring::{Ring, RingTensor};
use lrmpc_core::schedule::schedule;
use lrmpc_core::sim::{simulate, CostModel, SimOptions};
use lrmpc_core::FixedPointConfig;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Activation rows.
    pub rows: usize,
    pub width: usize,
    pub depth: usize,
    pub protocols: Vec<Protocol>,
    pub networks: Vec<NetworkProfile>,
    pub policy: Policy,
    pub cfg: FixedPointConfig,
    pub cost: CostModel,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rows: 1,
            width: 2048,
            depth: 4,
            protocols: vec![Protocol::Npc(2), Protocol::Trio],
            networks: vec![NetworkProfile::lan(), NetworkProfile::man(), NetworkProfile::wan()],
            policy: Policy::default(),
            cfg: FixedPointConfig::default(),
            cost: CostModel::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub protocol: String,
    pub mode: String,
    pub network: String,
    pub finish_ms: f64,
    pub rounds: u32,
    pub online_bytes: u64,
    pub offline_triple_elements: u64,
    pub offline_dealer_bytes: u64,
    /// `(T_full_rank / T_mode − 1) × 100`, same protocol and network.
    pub speedup_pct: f64,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let model = fc_stack(cfg.rows, cfg.width, cfg.depth);
    let opts = SimOptions { cost: cfg.cost, ..Default::default() };
    let mut rows = Vec::new();
    for &protocol in &cfg.protocols {
        let mut plans = Vec::new();
        for mode in Mode::ALL {
            let plan = build_plan(&model, protocol, mode, &cfg.policy, cfg.cfg)?;
            let program = schedule(&plan);
            let offline = account(&plan).total;
            plans.push((mode, program, offline));
        }
        for net in &cfg.networks {
            let mut base = None;
            for (mode, program, offline) in &plans {
                let t = simulate(program, net, &opts)?;
                let base_ms = *base.get_or_insert(t.critical_path_ms);
                rows.push(BenchRow {
                    protocol: protocol.name(),
                    mode: mode.name().into(),
                    network: net.name.clone(),
                    finish_ms: t.critical_path_ms,
                    rounds: t.rounds,
                    online_bytes: t.bytes.values().sum(),
                    offline_triple_elements: offline.triple_elements,
                    offline_dealer_bytes: offline.dealer_bytes.values().sum(),
                    speedup_pct: (base_ms / t.critical_path_ms - 1.0) * 100.0,
                });
            }
        }
    }
    Ok(rows)
}

/// Offline cost per protocol and mode.
pub fn offline_reports(cfg: &BenchConfig) -> Result<Vec<(String, String, OfflineCostReport)>> {
    let model = fc_stack(cfg.rows, cfg.width, cfg.depth);
    let mut out = Vec::new();
    for &protocol in &cfg.protocols {
        for mode in Mode::ALL {
            let plan = build_plan(&model, protocol, mode, &cfg.policy, cfg.cfg)?;
            out.push((protocol.name(), mode.name().to_string(), account(&plan)));
        }
    }
    Ok(out)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("protocol,mode,network,finish_ms,rounds,online_bytes,offline_triple_elements,offline_dealer_bytes,speedup_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.6},{},{},{},{},{:.4}\n",
            r.protocol, r.mode, r.network, r.finish_ms, r.rounds, r.online_bytes, r.offline_triple_elements, r.offline_dealer_bytes, r.speedup_pct
        ));
    }
    s
}

/// Measures ring matmul and elementwise throughput on this machine.
pub fn calibrate() -> CostModel {
    let ring = Ring::new(64).expect("64-bit ring");
    let n = 192;
    let a = RingTensor::from_fn(ring, vec![n, n], |i| (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let b = RingTensor::from_fn(ring, vec![n, n], |i| (i as u64) ^ 0x5555);
    let reps = 3;
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(a.matmul(&b).expect("square operands"));
    }
    let ns_per_mac = t.elapsed().as_nanos() as f64 / (reps * n * n * n) as f64;
    let big = RingTensor::from_fn(ring, vec![1 << 20], |i| i as u64);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(big.add(&big).expect("same shape"));
    }
    let ns_per_elem = t.elapsed().as_nanos() as f64 / (reps << 20) as f64;
    CostModel { ns_per_mac, ns_per_elem }
}
