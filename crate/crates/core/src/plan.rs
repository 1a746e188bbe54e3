//! Execution plans: which layers run low-rank, where truncations go, and the
//! flat list of protocol steps every party (and the dealer) walks in lockstep.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{choose_rank, svd_factorize, LayerClass};
use crate::oracle::PlainLayer;
use crate::ring::{ConvShape, FixedPointConfig, RealTensor};
use crate::sharing::Scheme;

/// Label used when sharing the inference input; tensor labels start at 1.
pub const INPUT_LABEL: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Additive sharing among `n` parties with Beaver triples.
    Npc(u8),
    /// Masked three-party sharing.
    Trio,
}

impl Protocol {
    pub fn scheme(self) -> Scheme {
        match self {
            Protocol::Npc(n) => Scheme::Additive { parties: n },
            Protocol::Trio => Scheme::Trio,
        }
    }

    pub fn parties(self) -> usize {
        self.scheme().parties()
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Protocol::Npc(n) if n < 2 => Err(Error::Parties(format!("n-party protocol needs n >= 2, got {n}"))),
            _ => Ok(()),
        }
    }

    pub fn name(self) -> String {
        match self {
            Protocol::Npc(n) => format!("npc{n}"),
            Protocol::Trio => "trio".into(),
        }
    }
}

impl core::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "trio" {
            return Ok(Protocol::Trio);
        }
        let n = s
            .strip_prefix("npc")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?} (expected npcN or trio)")))?;
        let p = Protocol::Npc(n);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FullRank,
    Lr,
    LrTs,
    LrTsConcat,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::FullRank, Mode::Lr, Mode::LrTs, Mode::LrTsConcat];

    pub fn low_rank(self) -> bool {
        self != Mode::FullRank
    }

    pub fn skip_trunc(self) -> bool {
        matches!(self, Mode::LrTs | Mode::LrTsConcat)
    }

    pub fn concat(self) -> bool {
        self == Mode::LrTsConcat
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::FullRank => "full-rank",
            Mode::Lr => "lr",
            Mode::LrTs => "lr-ts",
            Mode::LrTsConcat => "lr-ts-concat",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Model architecture as stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input matrix dimensions `[rows, cols]`.
    pub input: [usize; 2],
    pub layers: Vec<ModelLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelLayer {
    Fc { weight: String, n: usize, o: usize },
    Conv { weight: String, shape: ConvShape },
    Square,
    DebugRelu,
    /// `A ⊙ x` with a public `rows × cols` matrix `A`.
    PublicLeft { a: String, rows: usize, cols: usize },
}

/// Which layers go low-rank and at what rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    pub fc_ratio: f64,
    pub conv_ratio: f64,
    /// Model layer indices allowed to go low-rank; `None` means every FC and
    /// conv layer.
    pub low_rank_layers: Option<Vec<usize>>,
    pub overrides: BTreeMap<usize, LayerOverride>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy { fc_ratio: 0.25, conv_ratio: 0.5, low_rank_layers: None, overrides: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerOverride {
    pub rank: Option<usize>,
    pub skip_trunc: Option<bool>,
}

/// Name of the low-rank factors derived from `weight`.
pub fn factor_names(weight: &str) -> (String, String) {
    (format!("{weight}.u"), format!("{weight}.v"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    FullRankFc { weight: String, n: usize, o: usize },
    LowRankFc { u: String, v: String, n: usize, r: usize, o: usize, skip_trunc: bool },
    FullRankConv { weight: String, shape: ConvShape },
    LowRankConv { u: String, v: String, shape: ConvShape, r: usize, skip_trunc: bool },
    Square,
    DebugRelu,
    PublicMatmulLeft { a: String, rows: usize, cols: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub index: u32,
    pub spec: LayerSpec,
    pub input: [usize; 2],
    pub output: [usize; 2],
}

/// One protocol step. `slot` indexes offline material and is unique per plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Local lowering of the activation into a patch matrix.
    Im2col { shape: ConvShape },
    /// Activation `m×n` times shared weight `n×o`.
    Matmul { slot: u32, weight: String, m: usize, n: usize, o: usize },
    /// Elementwise square of the activation.
    Square { slot: u32, rows: usize, cols: usize },
    /// Removes `d` fraction bits.
    Trunc { slot: u32, d: u32, rows: usize, cols: usize },
    /// Local product with a public left operand `rows×inner`.
    PublicLeft { a: String, rows: usize, inner: usize, cols: usize },
    /// Insecure: opens, applies ReLU in the clear, reshares.
    DebugRelu { rows: usize, cols: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub layer: u32,
    pub op: Op,
}

/// Fraction bits carried by a share, as a multiple of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FractionState(u8);

impl FractionState {
    pub const F: FractionState = FractionState(1);
    pub const F2: FractionState = FractionState(2);
    pub const F3: FractionState = FractionState(3);

    pub fn multiple(self) -> u32 {
        u32::from(self.0)
    }

    pub fn bits(self, cfg: &FixedPointConfig) -> u32 {
        self.multiple() * cfg.f()
    }

    /// After multiplying by an operand carrying `f` bits.
    pub fn after_mul(self) -> Result<FractionState> {
        if self.0 >= 3 {
            return Err(Error::Fraction(format!("a product would carry {}f fraction bits", self.0 + 1)));
        }
        Ok(FractionState(self.0 + 1))
    }

    /// After removing `d = k·f` bits, which must leave exactly `f`.
    pub fn after_trunc(self, d: u32, cfg: &FixedPointConfig) -> Result<FractionState> {
        if self.0 < 2 || d != (self.multiple() - 1) * cfg.f() {
            return Err(Error::Fraction(format!("cannot truncate {d} bits from a share carrying {}f", self.0)));
        }
        Ok(FractionState::F)
    }
}

/// A tensor the plan needs, in label order (label = position + 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    pub name: String,
    pub shape: Vec<usize>,
    /// Public operands are known to every party and never shared.
    pub public: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub protocol: Protocol,
    pub mode: Mode,
    pub cfg: FixedPointConfig,
    pub input: [usize; 2],
    pub layers: Vec<PlanLayer>,
    pub steps: Vec<Step>,
    pub tensors: Vec<TensorRef>,
}

impl ExecutionPlan {
    pub fn output(&self) -> [usize; 2] {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn label(&self, name: &str) -> Result<u32> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| i as u32 + 1)
            .ok_or_else(|| Error::Plan(format!("plan does not reference tensor {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorRef> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Plan(format!("unknown tensor {name:?}")))
    }

    pub fn slots(&self) -> usize {
        self.steps.iter().filter(|s| slot_of(&s.op).is_some()).count()
    }

    /// Checks dimension chaining, fraction discipline and slot uniqueness.
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        let mut dims = self.input;
        let mut frac = FractionState::F;
        let mut seen = alloc::collections::BTreeSet::new();
        let mut layer = None;
        for (i, step) in self.steps.iter().enumerate() {
            if layer != Some(step.layer) {
                if frac != FractionState::F {
                    return Err(Error::Fraction(format!("layer {} ends with {}f fraction bits", step.layer, frac.0)));
                }
                layer = Some(step.layer);
            }
            if let Some(slot) = slot_of(&step.op) {
                if !seen.insert(slot) {
                    return Err(Error::Plan(format!("step {i} reuses material slot {slot}")));
                }
            }
            let bad = |what: String| Error::Plan(format!("step {i} (layer {}): {what}", step.layer));
            match &step.op {
                Op::Im2col { shape } => {
                    shape.validate()?;
                    if dims[0] * dims[1] != shape.input_len() {
                        return Err(bad(format!("activation {dims:?} does not hold conv input {shape:?}")));
                    }
                    dims = [shape.patch_rows(), shape.patch_cols()];
                }
                Op::Matmul { weight, m, n, o, .. } => {
                    if dims != [*m, *n] {
                        return Err(bad(format!("activation {dims:?} vs matmul {m}x{n}")));
                    }
                    if self.tensor(weight)?.shape != [*n, *o] {
                        return Err(bad(format!("weight {weight} is not {n}x{o}")));
                    }
                    frac = frac.after_mul()?;
                    dims = [*m, *o];
                }
                Op::Square { rows, cols, .. } => {
                    if dims != [*rows, *cols] {
                        return Err(bad(format!("activation {dims:?} vs square {rows}x{cols}")));
                    }
                    if frac != FractionState::F {
                        return Err(Error::Fraction(format!("square of a share carrying {}f", frac.0)));
                    }
                    frac = frac.after_mul()?;
                }
                Op::Trunc { d, rows, cols, .. } => {
                    if dims != [*rows, *cols] {
                        return Err(bad(format!("activation {dims:?} vs trunc {rows}x{cols}")));
                    }
                    if *d + 2 > self.cfg.l() {
                        return Err(Error::TruncWidth { d: *d, l: self.cfg.l() });
                    }
                    frac = frac.after_trunc(*d, &self.cfg)?;
                }
                Op::PublicLeft { a, rows, inner, cols } => {
                    if dims != [*inner, *cols] {
                        return Err(bad(format!("activation {dims:?} vs public left {inner}x{cols}")));
                    }
                    let t = self.tensor(a)?;
                    if !t.public || t.shape != [*rows, *inner] {
                        return Err(bad(format!("{a} is not a public {rows}x{inner} matrix")));
                    }
                    frac = frac.after_mul()?;
                    dims = [*rows, *cols];
                }
                Op::DebugRelu { rows, cols } => {
                    if dims != [*rows, *cols] || frac != FractionState::F {
                        return Err(bad("debug ReLU needs an f-bit activation of matching shape".into()));
                    }
                }
            }
        }
        if frac != FractionState::F {
            return Err(Error::Fraction(format!("plan output carries {}f fraction bits", frac.0)));
        }
        if dims != self.output() {
            return Err(Error::Plan(format!("steps produce {dims:?}, layers declare {:?}", self.output())));
        }
        Ok(())
    }

    /// Propagates a bound on decoded magnitudes through the plan and checks
    /// that every intermediate, scaled by its pending fraction bits, stays
    /// below `2^{l−2}`. This is the range condition truncation needs, and the
    /// one truncation skipping stresses because a `3f` product is formed.
    pub fn check_ranges(&self, values: &BTreeMap<String, RealTensor>, input_bound: f64) -> Result<Vec<f64>> {
        let limit = libm::ldexp(1.0, self.cfg.l() as i32 - 2);
        let ulp = self.cfg.ulp();
        let mut bound = input_bound;
        let mut frac = FractionState::F;
        let mut per_layer = vec![0.0; self.layers.len()];
        let get = |name: &str| values.get(name).ok_or_else(|| Error::Plan(format!("no values for {name:?}")));
        for step in &self.steps {
            match &step.op {
                Op::Im2col { .. } | Op::DebugRelu { .. } => {}
                Op::Matmul { weight, .. } => {
                    bound *= get(weight)?.col_abs_sum_max()?;
                    frac = frac.after_mul()?;
                }
                Op::Square { .. } => {
                    bound *= bound;
                    frac = frac.after_mul()?;
                }
                Op::PublicLeft { a, .. } => {
                    let a = get(a)?;
                    let (r, c) = a.dims2()?;
                    let row_sum = (0..r)
                        .map(|i| a.data()[i * c..(i + 1) * c].iter().map(|x| libm::fabs(*x)).sum::<f64>())
                        .fold(0.0, f64::max);
                    bound *= row_sum;
                    frac = frac.after_mul()?;
                }
                Op::Trunc { d, .. } => {
                    frac = frac.after_trunc(*d, &self.cfg)?;
                    bound += ulp;
                }
            }
            let scaled = libm::ldexp(bound, frac.bits(&self.cfg) as i32);
            if !(scaled < limit) {
                let skipping = matches!(
                    self.layers.get(step.layer as usize).map(|l| &l.spec),
                    Some(LayerSpec::LowRankFc { skip_trunc: true, .. } | LayerSpec::LowRankConv { skip_trunc: true, .. })
                );
                return Err(Error::Range(format!(
                    "layer {}: |value| <= {bound:.3e} with {} pending fraction bits overflows 2^{}{}",
                    step.layer,
                    frac.bits(&self.cfg),
                    self.cfg.l() - 2,
                    if skipping { " (truncation skipping)" } else { "" }
                )));
            }
            if let Some(b) = per_layer.get_mut(step.layer as usize) {
                *b = bound;
            }
        }
        Ok(per_layer)
    }
}

pub fn slot_of(op: &Op) -> Option<u32> {
    match op {
        Op::Matmul { slot, .. } | Op::Square { slot, .. } | Op::Trunc { slot, .. } => Some(*slot),
        _ => None,
    }
}

/// Substitutes low-rank layers per `mode` and `policy`, expands into steps and
/// validates.
pub fn build_plan(model: &ModelSpec, protocol: Protocol, mode: Mode, policy: &Policy, cfg: FixedPointConfig) -> Result<ExecutionPlan> {
    protocol.validate()?;
    let n_layers = model.layers.len();
    if let Some(bad) = policy
        .low_rank_layers
        .iter()
        .flatten()
        .chain(policy.overrides.keys())
        .find(|&&i| i >= n_layers)
    {
        return Err(Error::Plan(format!("policy references layer {bad}, model has {n_layers}")));
    }
    let eligible = |i: usize| policy.low_rank_layers.as_ref().is_none_or(|v| v.contains(&i));
    let mut tensors: Vec<TensorRef> = Vec::new();
    let mut add_tensor = |name: &str, shape: Vec<usize>, public: bool| -> Result<()> {
        match tensors.iter().find(|t| t.name == name) {
            Some(t) if t.shape != shape || t.public != public => {
                Err(Error::Plan(format!("tensor {name} used with shapes {:?} and {:?}", t.shape, shape)))
            }
            Some(_) => Ok(()),
            None => {
                tensors.push(TensorRef { name: name.into(), shape, public });
                Ok(())
            }
        }
    };

    let mut layers = Vec::new();
    let mut dims = model.input;
    for (i, layer) in model.layers.iter().enumerate() {
        let ov = policy.overrides.get(&i).cloned().unwrap_or_default();
        let low = mode.low_rank() && eligible(i);
        let skip = mode.skip_trunc() && ov.skip_trunc.unwrap_or(true);
        let (spec, output) = match layer {
            ModelLayer::Fc { weight, n, o } => {
                let out = [dims[0], *o];
                if low {
                    let r = match ov.rank {
                        Some(r) => r,
                        None => choose_rank(LayerClass::Fc, *n, *o, policy.fc_ratio)?,
                    };
                    if r == 0 || r > (*n).min(*o) {
                        return Err(Error::Rank { rank: r, max: (*n).min(*o) });
                    }
                    let (u, v) = factor_names(weight);
                    add_tensor(&u, vec![*n, r], false)?;
                    add_tensor(&v, vec![r, *o], false)?;
                    (LayerSpec::LowRankFc { u, v, n: *n, r, o: *o, skip_trunc: skip }, out)
                } else {
                    add_tensor(weight, vec![*n, *o], false)?;
                    (LayerSpec::FullRankFc { weight: weight.clone(), n: *n, o: *o }, out)
                }
            }
            ModelLayer::Conv { weight, shape } => {
                shape.validate()?;
                let out = [shape.patch_rows(), shape.out_ch];
                let k = shape.patch_cols();
                if low {
                    let r = match ov.rank {
                        Some(r) => r,
                        None => choose_rank(LayerClass::Conv, k, shape.out_ch, policy.conv_ratio)?,
                    };
                    if r == 0 || r > k.min(shape.out_ch) {
                        return Err(Error::Rank { rank: r, max: k.min(shape.out_ch) });
                    }
                    let (u, v) = factor_names(weight);
                    add_tensor(&u, vec![k, r], false)?;
                    add_tensor(&v, vec![r, shape.out_ch], false)?;
                    (LayerSpec::LowRankConv { u, v, shape: *shape, r, skip_trunc: skip }, out)
                } else {
                    add_tensor(weight, vec![k, shape.out_ch], false)?;
                    (LayerSpec::FullRankConv { weight: weight.clone(), shape: *shape }, out)
                }
            }
            ModelLayer::Square => (LayerSpec::Square, dims),
            ModelLayer::DebugRelu => (LayerSpec::DebugRelu, dims),
            ModelLayer::PublicLeft { a, rows, cols } => {
                add_tensor(a, vec![*rows, *cols], true)?;
                (LayerSpec::PublicMatmulLeft { a: a.clone(), rows: *rows, cols: *cols }, [*rows, dims[1]])
            }
        };
        layers.push(PlanLayer { index: i as u32, spec, input: dims, output });
        dims = output;
    }

    let steps = expand(&layers, &cfg)?;
    let plan = ExecutionPlan { protocol, mode, cfg, input: model.input, layers, steps, tensors };
    plan.validate()?;
    Ok(plan)
}

fn expand(layers: &[PlanLayer], cfg: &FixedPointConfig) -> Result<Vec<Step>> {
    let f = cfg.f();
    let mut steps = Vec::new();
    let mut slot = 0u32;
    let mut next = || {
        slot += 1;
        slot - 1
    };
    for layer in layers {
        let li = layer.index;
        let [m, n] = layer.input;
        let mut push = |op: Op| steps.push(Step { layer: li, op });
        let mut low_rank = |push: &mut dyn FnMut(Op), rows: usize, n: usize, u: &str, v: &str, r: usize, o: usize, skip: bool| {
            push(Op::Matmul { slot: next(), weight: u.into(), m: rows, n, o: r });
            if !skip {
                push(Op::Trunc { slot: next(), d: f, rows, cols: r });
            }
            push(Op::Matmul { slot: next(), weight: v.into(), m: rows, n: r, o });
            push(Op::Trunc { slot: next(), d: if skip { 2 * f } else { f }, rows, cols: o });
        };
        match &layer.spec {
            LayerSpec::FullRankFc { weight, n, o } => {
                push(Op::Matmul { slot: next(), weight: weight.clone(), m, n: *n, o: *o });
                push(Op::Trunc { slot: next(), d: f, rows: m, cols: *o });
            }
            LayerSpec::LowRankFc { u, v, n, r, o, skip_trunc } => low_rank(&mut push, m, *n, u, v, *r, *o, *skip_trunc),
            LayerSpec::FullRankConv { weight, shape } => {
                let rows = shape.patch_rows();
                push(Op::Im2col { shape: *shape });
                push(Op::Matmul { slot: next(), weight: weight.clone(), m: rows, n: shape.patch_cols(), o: shape.out_ch });
                push(Op::Trunc { slot: next(), d: f, rows, cols: shape.out_ch });
            }
            LayerSpec::LowRankConv { u, v, shape, r, skip_trunc } => {
                push(Op::Im2col { shape: *shape });
                low_rank(&mut push, shape.patch_rows(), shape.patch_cols(), u, v, *r, shape.out_ch, *skip_trunc);
            }
            LayerSpec::Square => {
                push(Op::Square { slot: next(), rows: m, cols: n });
                push(Op::Trunc { slot: next(), d: f, rows: m, cols: n });
            }
            LayerSpec::DebugRelu => push(Op::DebugRelu { rows: m, cols: n }),
            LayerSpec::PublicMatmulLeft { a, rows, cols } => {
                push(Op::PublicLeft { a: a.clone(), rows: *rows, inner: *cols, cols: n });
                push(Op::Trunc { slot: next(), d: f, rows: *rows, cols: n });
            }
        }
    }
    Ok(steps)
}

/// Resolves every tensor the plan references from the model's weights,
/// factorizing the weights of low-rank layers unless `weights` already holds
/// factors of the planned rank.
pub fn plan_values(plan: &ExecutionPlan, weights: &BTreeMap<String, RealTensor>) -> Result<BTreeMap<String, RealTensor>> {
    let get = |name: &str| weights.get(name).ok_or_else(|| Error::Plan(format!("missing weight {name:?}")));
    // weights may come in kernel layout; the plan uses the lowered matrix view
    let shaped = |name: &str, t: &RealTensor| -> Result<RealTensor> { t.clone().reshape(plan.tensor(name)?.shape.clone()) };
    let mut out = BTreeMap::new();
    for layer in &plan.layers {
        let (u, v, rows, r, cols) = match &layer.spec {
            LayerSpec::LowRankFc { u, v, n, r, o, .. } => (u, v, *n, *r, *o),
            LayerSpec::LowRankConv { u, v, shape, r, .. } => (u, v, shape.patch_cols(), *r, shape.out_ch),
            _ => continue,
        };
        if out.contains_key(u) {
            continue;
        }
        // factors precomputed by the model owner take precedence
        if let (Some(fu), Some(fv)) = (weights.get(u), weights.get(v)) {
            if fu.len() == rows * r && fv.len() == r * cols {
                out.insert(u.clone(), shaped(u, fu)?);
                out.insert(v.clone(), shaped(v, fv)?);
                continue;
            }
        }
        let weight = u.strip_suffix(".u").unwrap_or(u);
        let f = svd_factorize(&get(weight)?.clone().reshape(vec![rows, cols])?, r)?;
        out.insert(u.clone(), f.u);
        out.insert(v.clone(), f.v);
    }
    for t in &plan.tensors {
        if !out.contains_key(&t.name) {
            out.insert(t.name.clone(), shaped(&t.name, get(&t.name)?)?);
        }
    }
    Ok(out)
}

/// The plaintext layers computing what the plan computes, for the oracle.
pub fn plain_layers(plan: &ExecutionPlan, values: &BTreeMap<String, RealTensor>) -> Result<Vec<PlainLayer>> {
    let get = |name: &str| values.get(name).cloned().ok_or_else(|| Error::Plan(format!("missing tensor {name:?}")));
    let conv = |shape: &ConvShape, w: RealTensor, o: usize| -> Result<PlainLayer> {
        Ok(PlainLayer::Conv { shape: *shape, kernel: w.reshape(vec![shape.kernel, shape.kernel, shape.in_ch, o])? })
    };
    let mut out = Vec::new();
    for layer in &plan.layers {
        match &layer.spec {
            LayerSpec::FullRankFc { weight, .. } => out.push(PlainLayer::Matmul(get(weight)?)),
            LayerSpec::LowRankFc { u, v, .. } => {
                out.push(PlainLayer::Matmul(get(u)?));
                out.push(PlainLayer::Matmul(get(v)?));
            }
            LayerSpec::FullRankConv { weight, shape } => out.push(conv(shape, get(weight)?, shape.out_ch)?),
            LayerSpec::LowRankConv { u, v, shape, r, .. } => {
                out.push(conv(shape, get(u)?, *r)?);
                out.push(PlainLayer::Matmul(get(v)?));
            }
            LayerSpec::Square => out.push(PlainLayer::Square),
            LayerSpec::DebugRelu => out.push(PlainLayer::Relu),
            LayerSpec::PublicMatmulLeft { a, .. } => out.push(PlainLayer::PublicLeft(get(a)?)),
        }
    }
    Ok(out)
}

/// The graph convolution `A ⊙ ReLU(A ⊙ X ⊙ W) ⊙ W′` over a public normalized
/// adjacency `A` (`nodes × nodes`).
pub fn gcn_model(nodes: usize, features: usize, hidden: usize, classes: usize) -> ModelSpec {
    ModelSpec {
        input: [nodes, features],
        layers: vec![
            ModelLayer::PublicLeft { a: "adj".into(), rows: nodes, cols: nodes },
            ModelLayer::Fc { weight: "w1".into(), n: features, o: hidden },
            ModelLayer::DebugRelu,
            ModelLayer::PublicLeft { a: "adj".into(), rows: nodes, cols: nodes },
            ModelLayer::Fc { weight: "w2".into(), n: hidden, o: classes },
        ],
    }
}

/// A stack of `depth` square FC layers of width `width` on an `m`-row input.
pub fn fc_stack(m: usize, width: usize, depth: usize) -> ModelSpec {
    ModelSpec {
        input: [m, width],
        layers: (0..depth).map(|i| ModelLayer::Fc { weight: format!("fc{i}"), n: width, o: width }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops(plan: &ExecutionPlan) -> Vec<&'static str> {
        plan.steps
            .iter()
            .map(|s| match &s.op {
                Op::Im2col { .. } => "im2col",
                Op::Matmul { .. } => "matmul",
                Op::Square { .. } => "square",
                Op::Trunc { d: 5, .. } => "trunc_f",
                Op::Trunc { d: 10, .. } => "trunc_2f",
                Op::Trunc { .. } => "trunc",
                Op::PublicLeft { .. } => "public_left",
                Op::DebugRelu { .. } => "relu",
            })
            .collect()
    }

    fn build(model: &ModelSpec, mode: Mode) -> ExecutionPlan {
        build_plan(model, Protocol::Npc(3), mode, &Policy::default(), FixedPointConfig::default()).unwrap()
    }

    #[test]
    fn two_fc_modes() {
        let model = fc_stack(1, 8, 2);
        assert_eq!(ops(&build(&model, Mode::FullRank)), ["matmul", "trunc_f", "matmul", "trunc_f"]);
        let lr = build(&model, Mode::Lr);
        assert_eq!(ops(&lr).iter().filter(|&&o| o == "trunc_f").count(), 4);
        let ts = build(&model, Mode::LrTs);
        assert_eq!(ops(&ts), ["matmul", "matmul", "trunc_2f", "matmul", "matmul", "trunc_2f"]);
        assert_eq!(ts.tensors.len(), 4);
        assert!(matches!(ts.layers[0].spec, LayerSpec::LowRankFc { r: 2, skip_trunc: true, .. }));
    }

    #[test]
    fn gcn_plan_structure() {
        let plan = build(&gcn_model(3, 2, 2, 2), Mode::FullRank);
        let kinds: Vec<_> = plan.layers.iter().map(|l| core::mem::discriminant(&l.spec)).collect();
        let expect = [
            LayerSpec::PublicMatmulLeft { a: String::new(), rows: 0, cols: 0 },
            LayerSpec::FullRankFc { weight: String::new(), n: 0, o: 0 },
            LayerSpec::DebugRelu,
            LayerSpec::PublicMatmulLeft { a: String::new(), rows: 0, cols: 0 },
            LayerSpec::FullRankFc { weight: String::new(), n: 0, o: 0 },
        ];
        assert_eq!(kinds, expect.iter().map(core::mem::discriminant).collect::<Vec<_>>());
        assert_eq!(plan.label("adj").unwrap(), 1);
        assert_eq!(plan.output(), [3, 2]);
    }

    #[test]
    fn policy_validation() {
        let model = fc_stack(1, 8, 2);
        let p = Policy { low_rank_layers: Some(vec![5]), ..Default::default() };
        assert!(matches!(build_plan(&model, Protocol::Trio, Mode::Lr, &p, FixedPointConfig::default()), Err(Error::Plan(_))));
        let p = Policy { low_rank_layers: Some(vec![1]), ..Default::default() };
        let plan = build_plan(&model, Protocol::Trio, Mode::LrTs, &p, FixedPointConfig::default()).unwrap();
        assert!(matches!(plan.layers[0].spec, LayerSpec::FullRankFc { .. }));
        assert!(matches!(plan.layers[1].spec, LayerSpec::LowRankFc { .. }));
        let mut p = Policy::default();
        p.overrides.insert(0, LayerOverride { rank: Some(3), skip_trunc: Some(false) });
        let plan = build_plan(&model, Protocol::Trio, Mode::LrTs, &p, FixedPointConfig::default()).unwrap();
        assert!(matches!(plan.layers[0].spec, LayerSpec::LowRankFc { r: 3, skip_trunc: false, .. }));
    }

    #[test]
    fn dimension_break_rejected() {
        let model = ModelSpec {
            input: [1, 4],
            layers: vec![ModelLayer::Fc { weight: "a".into(), n: 4, o: 3 }, ModelLayer::Fc { weight: "b".into(), n: 4, o: 2 }],
        };
        assert!(matches!(
            build_plan(&model, Protocol::Npc(2), Mode::FullRank, &Policy::default(), FixedPointConfig::default()),
            Err(Error::Plan(_))
        ));
    }

    #[test]
    fn fraction_discipline() {
        let mut plan = build(&fc_stack(1, 4, 1), Mode::FullRank);
        plan.steps.pop();
        assert!(matches!(plan.validate(), Err(Error::Fraction(_))));
        let mut plan = build(&fc_stack(1, 4, 1), Mode::LrTs);
        if let Op::Trunc { d, .. } = &mut plan.steps[2].op {
            *d = 5;
        }
        assert!(matches!(plan.validate(), Err(Error::Fraction(_))));
    }

    #[test]
    fn conv_plan() {
        let shape = ConvShape { batch: 1, height: 4, width: 4, in_ch: 2, out_ch: 4, kernel: 3, stride: 1, pad: 1 };
        let model = ModelSpec { input: [16, 2], layers: vec![ModelLayer::Conv { weight: "k".into(), shape }] };
        let plan = build(&model, Mode::LrTs);
        assert_eq!(ops(&plan), ["im2col", "matmul", "matmul", "trunc_2f"]);
        assert_eq!(plan.tensors[0].shape, [18, 2]);
        assert_eq!(plan.output(), [16, 4]);
    }

    #[test]
    fn range_guard_for_skipping() {
        let model = fc_stack(1, 4, 1);
        let cfg = FixedPointConfig::new(20, 5).unwrap();
        let plan = build_plan(&model, Protocol::Npc(2), Mode::LrTs, &Policy::default(), cfg).unwrap();
        let mut values = BTreeMap::new();
        values.insert("fc0.u".into(), RealTensor::new(vec![4, 1], vec![1.0; 4]).unwrap());
        values.insert("fc0.v".into(), RealTensor::new(vec![1, 4], vec![1.0; 4]).unwrap());
        // 3f = 15 pending bits leave 2 bits of magnitude below 2^18
        assert!(plan.check_ranges(&values, 0.125).is_ok());
        let err = plan.check_ranges(&values, 4.0).unwrap_err();
        assert!(matches!(err, Error::Range(s) if s.contains("skipping")));
    }

    #[test]
    fn parse_names() {
        assert_eq!("npc5".parse::<Protocol>().unwrap(), Protocol::Npc(5));
        assert_eq!("trio".parse::<Protocol>().unwrap(), Protocol::Trio);
        assert!("npc1".parse::<Protocol>().is_err());
        assert_eq!("lr-ts-concat".parse::<Mode>().unwrap(), Mode::LrTsConcat);
    }
}
