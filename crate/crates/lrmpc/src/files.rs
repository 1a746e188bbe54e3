//! On-disk layouts built on the LRMT container: models, inputs, share files,
//! offline material and output shares.
//!
//! A share is stored under its tensor name. Additive shares are a single
//! `u64` tensor; masked shares store both components as `<name>.m3` /
//! `<name>.lambda2` (P2), `<name>.m2` / `<name>.lambda3` (P3) or
//! `<name>.lambda2` / `<name>.lambda3` (P1).

use std::collections::BTreeMap;
use std::path::Path;

use lrmpc_core::dealer::{Material, PartyMaterial, TrioMulShare, TripleShare, TruncMaskShare};
use lrmpc_core::plan::{slot_of, ExecutionPlan, ModelSpec};
use lrmpc_core::runtime::PartyInputs;
use lrmpc_core::sharing::{AdditiveShare, PartyId, Scheme, Share, TrioShare};
use lrmpc_core::{FixedPointConfig, RealTensor, Ring, RingTensor};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};

pub const INPUT_NAME: &str = "input";
pub const OUTPUT_NAME: &str = "output";
const PUBLIC_PREFIX: &str = "public/";

/// Header fields common to every per-party file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyHeader {
    pub scheme: String,
    pub party: u8,
    pub l: u32,
    pub f: u32,
    /// `P1`/`P2`/`P3` under masked sharing; absent for additive sharing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl PartyHeader {
    pub fn new(scheme: Scheme, party: PartyId, cfg: &FixedPointConfig) -> Self {
        let (name, role) = match scheme {
            Scheme::Additive { .. } => ("additive", None),
            Scheme::Trio => ("trio", Some(party.to_string())),
        };
        PartyHeader { scheme: name.into(), party: party.number(), l: cfg.l(), f: cfg.f(), role }
    }

    fn write(&self, c: &mut Container) -> Result<()> {
        for (k, v) in serde_json::to_value(self)?.as_object().expect("struct serializes to an object") {
            c.meta.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    fn read(c: &Container) -> Result<Self> {
        Ok(serde_json::from_value(serde_json::Value::Object(c.meta.clone()))?)
    }

    pub fn party_id(&self) -> Result<PartyId> {
        Ok(PartyId::new(self.party)?)
    }

    pub fn cfg(&self) -> Result<FixedPointConfig> {
        Ok(FixedPointConfig::new(self.l, self.f)?)
    }

    fn check(&self, plan: &ExecutionPlan) -> Result<()> {
        let want = PartyHeader::new(plan.protocol.scheme(), self.party_id()?, &plan.cfg);
        if *self != want {
            return Err(Error::Container(format!("file header {self:?} does not match the plan ({want:?})")));
        }
        Ok(())
    }
}

pub fn put_ring(c: &mut Container, name: &str, t: &RingTensor) {
    c.insert_u64(name, t.shape().to_vec(), t.data().to_vec());
}

pub fn put_share(c: &mut Container, name: &str, s: &Share) {
    match s {
        Share::Additive(a) => put_ring(c, name, &a.value),
        Share::Trio(TrioShare::P1 { lambda2, lambda3 }) => {
            put_ring(c, &format!("{name}.lambda2"), lambda2);
            put_ring(c, &format!("{name}.lambda3"), lambda3);
        }
        Share::Trio(TrioShare::P2 { m3, lambda2 }) => {
            put_ring(c, &format!("{name}.m3"), m3);
            put_ring(c, &format!("{name}.lambda2"), lambda2);
        }
        Share::Trio(TrioShare::P3 { m2, lambda3 }) => {
            put_ring(c, &format!("{name}.m2"), m2);
            put_ring(c, &format!("{name}.lambda3"), lambda3);
        }
    }
}

pub fn get_share(c: &Container, name: &str, scheme: Scheme, owner: PartyId, ring: Ring) -> Result<Share> {
    let get = |suffix: &str| c.u64(&format!("{name}.{suffix}"), ring);
    Ok(match (scheme, owner.number()) {
        (Scheme::Additive { .. }, _) => Share::Additive(AdditiveShare { owner, value: c.u64(name, ring)? }),
        (Scheme::Trio, 1) => Share::Trio(TrioShare::P1 { lambda2: get("lambda2")?, lambda3: get("lambda3")? }),
        (Scheme::Trio, 2) => Share::Trio(TrioShare::P2 { m3: get("m3")?, lambda2: get("lambda2")? }),
        (Scheme::Trio, 3) => Share::Trio(TrioShare::P3 { m2: get("m2")?, lambda3: get("lambda3")? }),
        (Scheme::Trio, p) => return Err(Error::Container(format!("masked sharing has no party {p}"))),
    })
}

fn put_opt(c: &mut Container, name: &str, t: &Option<RingTensor>) {
    if let Some(t) = t {
        put_ring(c, name, t);
    }
}

fn get_opt(c: &Container, name: &str, ring: Ring) -> Result<Option<RingTensor>> {
    if c.entries.contains_key(name) {
        c.u64(name, ring).map(Some)
    } else {
        Ok(None)
    }
}

/// Per-party share file: input share, weight shares, public operands, and the
/// plan and session id in the header.
pub fn share_file(plan: &ExecutionPlan, inputs: &PartyInputs, session: u32) -> Result<Container> {
    let mut c = Container::new();
    let me = inputs.input.owner();
    PartyHeader::new(plan.protocol.scheme(), me, &plan.cfg).write(&mut c)?;
    c.set_meta("session", session)?;
    c.set_meta("plan", plan)?;
    put_share(&mut c, INPUT_NAME, &inputs.input);
    for (name, s) in &inputs.weights {
        put_share(&mut c, name, s);
    }
    for (name, t) in &inputs.publics {
        put_ring(&mut c, &format!("{PUBLIC_PREFIX}{name}"), t);
    }
    Ok(c)
}

/// Reads a share file back. Material is left empty.
pub fn read_share_file(c: &Container) -> Result<(ExecutionPlan, u32, PartyInputs)> {
    let plan: ExecutionPlan = c.meta_field("plan")?;
    plan.validate()?;
    let session: u32 = c.meta_field("session")?;
    let header = PartyHeader::read(c)?;
    header.check(&plan)?;
    let me = header.party_id()?;
    let (scheme, ring) = (plan.protocol.scheme(), plan.cfg.ring());
    let mut inputs = PartyInputs {
        input: get_share(c, INPUT_NAME, scheme, me, ring)?,
        weights: BTreeMap::new(),
        publics: BTreeMap::new(),
        material: PartyMaterial::new(me),
    };
    for t in &plan.tensors {
        if t.public {
            inputs.publics.insert(t.name.clone(), c.u64(&format!("{PUBLIC_PREFIX}{}", t.name), ring)?);
        } else {
            inputs.weights.insert(t.name.clone(), get_share(c, &t.name, scheme, me, ring)?);
        }
    }
    Ok((plan, session, inputs))
}

/// Describes one material slot in the material file header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub slot: u32,
    pub layer: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub elementwise: bool,
}

pub fn material_file(plan: &ExecutionPlan, m: &PartyMaterial) -> Result<Container> {
    let mut c = Container::new();
    PartyHeader::new(plan.protocol.scheme(), m.owner, &plan.cfg).write(&mut c)?;
    let layer_of: BTreeMap<u32, u32> = plan.steps.iter().filter_map(|s| slot_of(&s.op).map(|slot| (slot, s.layer))).collect();
    let mut slots = Vec::new();
    for (slot, mat) in m.iter() {
        let p = format!("slot{slot}");
        let layer = *layer_of.get(&slot).ok_or_else(|| Error::Container(format!("slot {slot} is not in the plan")))?;
        let info = match mat {
            Material::Triple(t) => {
                put_ring(&mut c, &format!("{p}.a"), &t.a);
                put_ring(&mut c, &format!("{p}.b"), &t.b);
                put_ring(&mut c, &format!("{p}.c"), &t.c);
                let dims = [t.a.shape(), t.b.shape()].concat();
                SlotInfo { slot, layer, kind: mat.kind().into(), d: None, dims, elementwise: t.elementwise }
            }
            Material::Trunc(t) => {
                put_share(&mut c, &format!("{p}.r"), &t.r);
                put_share(&mut c, &format!("{p}.r_low"), &t.r_low);
                put_share(&mut c, &format!("{p}.bit"), &t.bit);
                put_opt(&mut c, &format!("{p}.fresh2"), &t.fresh2);
                put_opt(&mut c, &format!("{p}.fresh3"), &t.fresh3);
                SlotInfo { slot, layer, kind: mat.kind().into(), d: Some(t.d), dims: t.r.shape().to_vec(), elementwise: false }
            }
            Material::TrioMul(t) => {
                put_opt(&mut c, &format!("{p}.correction"), &t.correction);
                put_opt(&mut c, &format!("{p}.lambda2"), &t.lambda2);
                put_opt(&mut c, &format!("{p}.lambda3"), &t.lambda3);
                let any = t.correction.as_ref().or(t.lambda2.as_ref()).or(t.lambda3.as_ref());
                let dims = any.map(|t| t.shape().to_vec()).unwrap_or_default();
                SlotInfo { slot, layer, kind: mat.kind().into(), d: None, dims, elementwise: t.elementwise }
            }
        };
        slots.push(info);
    }
    c.set_meta("slots", slots)?;
    Ok(c)
}

pub fn read_material_file(c: &Container, plan: &ExecutionPlan) -> Result<PartyMaterial> {
    let header = PartyHeader::read(c)?;
    header.check(plan)?;
    let me = header.party_id()?;
    let (scheme, ring) = (plan.protocol.scheme(), plan.cfg.ring());
    let slots: Vec<SlotInfo> = c.meta_field("slots")?;
    let mut m = PartyMaterial::new(me);
    for info in slots {
        let p = format!("slot{}", info.slot);
        let mat = match info.kind.as_str() {
            "triple" => Material::Triple(TripleShare {
                a: c.u64(&format!("{p}.a"), ring)?,
                b: c.u64(&format!("{p}.b"), ring)?,
                c: c.u64(&format!("{p}.c"), ring)?,
                elementwise: info.elementwise,
            }),
            "trunc" => Material::Trunc(TruncMaskShare {
                d: info.d.ok_or_else(|| Error::Container(format!("{p} lacks d")))?,
                r: get_share(c, &format!("{p}.r"), scheme, me, ring)?,
                r_low: get_share(c, &format!("{p}.r_low"), scheme, me, ring)?,
                bit: get_share(c, &format!("{p}.bit"), scheme, me, ring)?,
                fresh2: get_opt(c, &format!("{p}.fresh2"), ring)?,
                fresh3: get_opt(c, &format!("{p}.fresh3"), ring)?,
            }),
            "trio-mul" => Material::TrioMul(TrioMulShare {
                correction: get_opt(c, &format!("{p}.correction"), ring)?,
                lambda2: get_opt(c, &format!("{p}.lambda2"), ring)?,
                lambda3: get_opt(c, &format!("{p}.lambda3"), ring)?,
                elementwise: info.elementwise,
            }),
            k => return Err(Error::Container(format!("{p}: unknown material kind {k:?}"))),
        };
        m.insert(info.slot, mat);
    }
    Ok(m)
}

/// Output share file written by `run-party`.
pub fn output_file(plan: &ExecutionPlan, share: &Share, frac_bits: u32) -> Result<Container> {
    let mut c = Container::new();
    PartyHeader::new(plan.protocol.scheme(), share.owner(), &plan.cfg).write(&mut c)?;
    c.set_meta("frac_bits", frac_bits)?;
    put_share(&mut c, OUTPUT_NAME, share);
    Ok(c)
}

pub fn read_output_file(c: &Container) -> Result<(Share, PartyHeader)> {
    let h = PartyHeader::read(c)?;
    let scheme = match h.scheme.as_str() {
        "trio" => Scheme::Trio,
        "additive" => Scheme::Additive { parties: 0 },
        s => return Err(Error::Container(format!("unknown scheme {s:?}"))),
    };
    let ring = h.cfg()?.ring();
    Ok((get_share(c, OUTPUT_NAME, scheme, h.party_id()?, ring)?, h))
}

/// Model file: plaintext `f64` weights plus the architecture under `model`.
pub fn save_model(path: &Path, model: &ModelSpec, weights: &BTreeMap<String, RealTensor>) -> Result<()> {
    let mut c = Container::new();
    c.set_meta("model", model)?;
    for (name, w) in weights {
        c.insert_f64(name.clone(), w.shape().to_vec(), w.data().to_vec());
    }
    c.save(path)
}

pub fn load_model(path: &Path) -> Result<(ModelSpec, BTreeMap<String, RealTensor>)> {
    let c = Container::load(path)?;
    let model: ModelSpec = c.meta_field("model")?;
    let mut weights = BTreeMap::new();
    for name in c.entries.keys() {
        weights.insert(name.clone(), c.f64(name)?);
    }
    Ok((model, weights))
}

/// A plaintext tensor file holding one tensor named `name`.
pub fn save_tensor(path: &Path, name: &str, t: &RealTensor) -> Result<()> {
    let mut c = Container::new();
    c.insert_f64(name, t.shape().to_vec(), t.data().to_vec());
    c.save(path)
}

pub fn load_tensor(path: &Path, name: &str) -> Result<RealTensor> {
    Container::load(path)?.f64(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrmpc_core::plan::{build_plan, fc_stack, plan_values, Mode, Policy, Protocol};
    use lrmpc_core::prf::seed_from_u64;
    use lrmpc_core::runtime::prepare;
    use lrmpc_core::SeedSet;

    fn setup(p: Protocol) -> (ExecutionPlan, Vec<PartyInputs>) {
        let plan = build_plan(&fc_stack(2, 4, 2), p, Mode::LrTs, &Policy::default(), FixedPointConfig::default()).unwrap();
        let w: BTreeMap<String, RealTensor> =
            (0..2).map(|i| (format!("fc{i}"), RealTensor::identity(4))).collect();
        let values = plan_values(&plan, &w).unwrap();
        let x = RealTensor::new(vec![2, 4], vec![0.5; 8]).unwrap();
        let inputs = prepare(&plan, &SeedSet::derive(&seed_from_u64(1)), &x, &values).unwrap();
        (plan, inputs)
    }

    #[test]
    fn share_and_material_files_round_trip() {
        for p in [Protocol::Npc(2), Protocol::Trio] {
            let (plan, inputs) = setup(p);
            for mine in inputs {
                let c = Container::from_bytes(&share_file(&plan, &mine, 9).unwrap().to_bytes().unwrap()).unwrap();
                let (plan2, session, back) = read_share_file(&c).unwrap();
                assert_eq!(plan2, plan);
                assert_eq!(session, 9);
                assert_eq!(back.input, mine.input);
                assert_eq!(back.weights, mine.weights);
                assert_eq!(back.publics, mine.publics);
                let c = Container::from_bytes(&material_file(&plan, &mine.material).unwrap().to_bytes().unwrap()).unwrap();
                assert_eq!(read_material_file(&c, &plan).unwrap(), mine.material);
            }
        }
    }

    #[test]
    fn trio_files_carry_role_tags() {
        let (plan, inputs) = setup(Protocol::Trio);
        for (i, mine) in inputs.iter().enumerate() {
            let c = share_file(&plan, mine, 1).unwrap();
            assert_eq!(c.meta["role"], format!("P{}", i + 1));
            assert_eq!(c.meta["scheme"], "trio");
        }
        let (plan, inputs) = setup(Protocol::Npc(2));
        let c = share_file(&plan, &inputs[0], 1).unwrap();
        assert!(!c.meta.contains_key("role"));
        assert_eq!(c.meta["scheme"], "additive");
    }

    #[test]
    fn material_for_another_plan_is_rejected() {
        let (plan, inputs) = setup(Protocol::Npc(2));
        let (other, _) = setup(Protocol::Trio);
        let c = material_file(&plan, &inputs[0].material).unwrap();
        assert!(read_material_file(&c, &other).is_err());
    }
}
