//! Party runtime: walks the plan's steps and runs each protocol.
//!
//! Every party (and the dealer) walks the same step list, so material slots,
//! message layers and fraction states line up without negotiation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dealer::{deal, Material, PartyMaterial};
use crate::error::{Error, Result};
use crate::net::Transport;
use crate::plan::{ExecutionPlan, Op, Protocol, INPUT_LABEL};
use crate::protocols::{debug_relu, mul, npc_urev_share, public_matmul_left, trunc, PartyContext, Secret};
use crate::ring::{encode_fixed, im2col, RealTensor, RingTensor};
use crate::sharing::{share_additive, share_trio, PartyId, SeedSet, Share};
use crate::wire::MessageKind;

/// Everything one party brings to the online phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyInputs {
    pub input: Share,
    pub weights: BTreeMap<String, Share>,
    pub publics: BTreeMap<String, RingTensor>,
    pub material: PartyMaterial,
}

fn missing(what: &str, name: &str) -> Error {
    Error::Material(format!("no {what} named {name:?}"))
}

/// Runs the online phase for the party behind `ctx` and returns its share of
/// the output.
///
/// In concatenated mode under additive sharing, every party first sends its
/// `Urev` shares for all static-weight multiplications: they depend only on
/// weight shares and triples, so they are on the wire before the first input
/// dependent message.
pub fn run_party<T: Transport>(plan: &ExecutionPlan, ctx: &mut PartyContext<T>, inputs: PartyInputs) -> Result<Secret> {
    let PartyInputs { input, weights, publics, mut material } = inputs;
    if input.shape() != plan.input {
        return Err(Error::Shape(format!("input share {:?}, plan expects {:?}", input.shape(), plan.input)));
    }
    let urev_ahead = plan.mode.concat() && matches!(plan.protocol, Protocol::Npc(_));
    if urev_ahead {
        let peers: Vec<PartyId> = PartyId::all(plan.protocol.parties()).filter(|&p| p != ctx.me()).collect();
        for step in &plan.steps {
            if let Op::Matmul { slot, weight, .. } = &step.op {
                let Some(Material::Triple(t)) = material.peek(*slot) else {
                    return Err(Error::Material(format!("slot {slot} has no triple")));
                };
                let w = weights.get(weight).ok_or_else(|| missing("weight share", weight))?;
                let u = npc_urev_share(w, t)?;
                ctx.set_layer(step.layer);
                for &p in &peers {
                    ctx.send_ahead(p, MessageKind::Urev, &u)?;
                }
            }
        }
    }

    let mut x = Secret::new(input);
    for step in &plan.steps {
        ctx.set_layer(step.layer);
        x = match &step.op {
            Op::Im2col { shape } => Secret { share: x.share.map_linear(|t| im2col(t, shape))?, frac: x.frac },
            Op::Matmul { slot, weight, .. } => {
                let w = Secret::new(weights.get(weight).ok_or_else(|| missing("weight share", weight))?.clone());
                mul(ctx, &x, &w, material.take(*slot)?, urev_ahead)?
            }
            Op::Square { slot, .. } => mul(ctx, &x, &x, material.take(*slot)?, false)?,
            Op::Trunc { slot, .. } => trunc(ctx, &x, material.take_trunc(*slot)?)?,
            Op::PublicLeft { a, .. } => public_matmul_left(publics.get(a).ok_or_else(|| missing("public operand", a))?, &x)?,
            Op::DebugRelu { .. } => debug_relu(ctx, &x)?,
        };
    }
    Ok(x)
}

/// Encodes and shares the input and every tensor the plan references, and
/// deals the offline material. Index `i` of the result belongs to party `i+1`.
pub fn prepare(plan: &ExecutionPlan, seeds: &SeedSet, input: &RealTensor, values: &BTreeMap<String, RealTensor>) -> Result<Vec<PartyInputs>> {
    let cfg = &plan.cfg;
    let n = plan.protocol.parties();
    let share = |t: &RingTensor, label: u32| -> Result<Vec<Share>> {
        Ok(match plan.protocol {
            Protocol::Npc(_) => share_additive(t, n, &seeds.dealer, label)?.into_iter().map(Share::Additive).collect(),
            Protocol::Trio => share_trio(t, seeds, label)?.into_iter().map(Share::Trio).collect(),
        })
    };
    let input = encode_fixed(input, cfg)?;
    let mut out: Vec<PartyInputs> = share(&input, INPUT_LABEL)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| PartyInputs {
            input: s,
            weights: BTreeMap::new(),
            publics: BTreeMap::new(),
            material: PartyMaterial::new(PartyId::from_index(i)),
        })
        .collect();
    let mut publics = BTreeMap::new();
    for t in &plan.tensors {
        let v = values.get(&t.name).ok_or_else(|| missing("tensor", &t.name))?;
        if v.shape() != t.shape.as_slice() {
            return Err(Error::Shape(format!("{} is {:?}, plan expects {:?}", t.name, v.shape(), t.shape)));
        }
        let enc = encode_fixed(v, cfg)?;
        if t.public {
            publics.insert(t.name.clone(), enc);
        } else {
            for (p, s) in out.iter_mut().zip(share(&enc, plan.label(&t.name)?)?) {
                p.weights.insert(t.name.clone(), s);
            }
        }
    }
    for (p, m) in out.iter_mut().zip(deal(plan, seeds, &publics)?) {
        p.publics = publics.clone();
        p.material = m;
    }
    Ok(out)
}

#[cfg(any(test, feature = "std"))]
pub use local::{run_local, LocalRun};

#[cfg(any(test, feature = "std"))]
mod local {
    use super::*;
    use crate::channel::{run_mesh, ChannelCounters};
    use crate::metrics::Metrics;
    use crate::net::Topology;
    use crate::protocols::PartyStats;
    use crate::ring::decode_fixed;
    use crate::sharing::reconstruct;

    pub struct LocalRun {
        pub shares: Vec<Secret>,
        pub stats: Vec<PartyStats>,
        pub counters: ChannelCounters,
        pub metrics: Metrics,
    }

    impl LocalRun {
        pub fn output(&self, plan: &ExecutionPlan) -> Result<RealTensor> {
            let shares: Vec<Share> = self.shares.iter().map(|s| s.share.clone()).collect();
            Ok(decode_fixed(&reconstruct(&shares)?, &plan.cfg))
        }
    }

    /// Runs every party on its own thread over in-process channels.
    pub fn run_local(plan: &ExecutionPlan, inputs: Vec<PartyInputs>, allow_insecure: bool, session: u32) -> Result<LocalRun> {
        let topology = match plan.protocol {
            Protocol::Npc(n) => Topology::FullBroadcast(n),
            Protocol::Trio => Topology::TrioChain,
        };
        let inputs: Vec<_> = inputs.into_iter().map(std::sync::Mutex::new).map(Some).collect();
        let inputs = std::sync::Mutex::new(inputs);
        let (res, counters) = run_mesh(topology, |t| {
            let i = t.me().index();
            let mine = inputs.lock().expect("not poisoned")[i].take().expect("one run per party");
            let mine = mine.into_inner().expect("not poisoned");
            let mut ctx = PartyContext::new(t, plan.protocol.scheme(), plan.cfg, session).with_insecure(allow_insecure);
            let out = run_party(plan, &mut ctx, mine)?;
            Ok((out, ctx.stats().clone()))
        });
        let mut shares = Vec::new();
        let mut stats = Vec::new();
        let mut first_err = None;
        for r in res {
            match r {
                Ok((s, st)) => {
                    shares.push(s);
                    stats.push(st);
                }
                // a failing party makes its peers fail with disconnects; report the root cause
                Err(e) => {
                    if first_err.as_ref().is_none_or(|f: &Error| f.exit_code() == 3 && e.exit_code() != 3) {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let metrics = Metrics::from_stats(&stats);
        Ok(LocalRun { shares, stats, counters, metrics })
    }
}
