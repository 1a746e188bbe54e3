//! Command-line surface. Every command writes JSON (or CSV for `bench
//! --format csv`) to stdout or to the given paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrmpc_core::lowrank::{choose_rank, conv_factorize, svd_factorize, LayerClass};
use lrmpc_core::metrics::Metrics;
use lrmpc_core::net::NetworkProfile;
use lrmpc_core::oracle::plaintext_linear_oracle;
use lrmpc_core::plan::{build_plan, factor_names, fc_stack, plain_layers, plan_values, ExecutionPlan, Mode, ModelLayer, ModelSpec, Policy, Protocol};
use lrmpc_core::prf::seed_from_u64;
use lrmpc_core::ring::decode_with_frac;
use lrmpc_core::runtime::prepare;
use lrmpc_core::schedule::schedule;
use lrmpc_core::sharing::reconstruct;
use lrmpc_core::sim::{simulate, CostModel, SimOptions};
use lrmpc_core::{FixedPointConfig, RealTensor, SeedSet};
use serde::Serialize;
use serde_json::json;

use crate::bench::{calibrate, offline_reports, run_bench, to_csv, BenchConfig};
use crate::error::{Error, Result};
use crate::files::{
    load_model, load_tensor, material_file, output_file, read_output_file, save_model, share_file, INPUT_NAME,
};
use crate::session::run_party_files;
use crate::tcp::EndpointConfig;

pub const SEED_ENV: &str = "LRMPC_SEED";

#[derive(Parser, Debug)]
#[command(name = "lrmpc", version, about = "Secret-shared inference with low-rank linear layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Factorize FC/conv weights into low-rank pairs.
    Decompose(DecomposeArgs),
    /// Secret-share a model and an input and deal offline material.
    Share(ShareArgs),
    /// Run one party's online phase over TCP.
    RunParty(RunPartyArgs),
    /// Simulate a plan's event program on a network profile.
    Simulate(SimulateArgs),
    /// Ablation table over modes, protocols and networks.
    Bench(BenchArgs),
    /// Reconstruct output shares, optionally against the plaintext oracle.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fc_ratio: Option<f64>,
    #[arg(long)]
    pub conv_ratio: Option<f64>,
    /// Policy JSON selecting layers and per-layer ranks.
    #[arg(long)]
    pub layers: Option<PathBuf>,
    /// Sidecar report path; defaults to `<out>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PlanArgs {
    /// `npc<N>` or `trio`.
    #[arg(long, default_value = "npc2")]
    pub protocol: Protocol,
    #[arg(long, default_value = "full-rank")]
    pub mode: Mode,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub l: u32,
    #[arg(long, default_value_t = 5)]
    pub f: u32,
}

impl PlanArgs {
    fn policy(&self) -> Result<Policy> {
        match &self.policy {
            Some(p) => Ok(serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?),
            None => Ok(Policy::default()),
        }
    }

    fn cfg(&self) -> Result<FixedPointConfig> {
        Ok(FixedPointConfig::new(self.l, self.f)?)
    }

    fn plan(&self, model: &ModelSpec) -> Result<ExecutionPlan> {
        Ok(build_plan(model, self.protocol, self.mode, &self.policy()?, self.cfg()?)?)
    }
}

#[derive(Args, Debug)]
pub struct ShareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// LRMT file with an `input` tensor.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Seed; falls back to $LRMPC_SEED, then to fresh randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub session: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunPartyArgs {
    #[arg(long)]
    pub shares: PathBuf,
    #[arg(long)]
    pub material: PathBuf,
    /// Endpoint config JSON `{party, listen, peers}`.
    #[arg(long)]
    pub endpoints: PathBuf,
    #[arg(long)]
    pub allow_insecure: bool,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Model file; without it a synthetic FC stack is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub rows: usize,
    #[arg(long, default_value_t = 2048)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Preset name: lan, man, wan or ideal.
    #[arg(long, default_value = "wan")]
    pub network: String,
    /// Profile JSON overriding the preset.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub ns_per_mac: f64,
    #[arg(long, default_value_t = 0.5)]
    pub ns_per_elem: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter_ms: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes the Gantt spans here.
    #[arg(long)]
    pub gantt: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    pub rows: usize,
    #[arg(long, default_value_t = 2048)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Party count of the additive protocol.
    #[arg(long, default_value_t = 2)]
    pub parties: u8,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Emit offline cost reports only.
    #[arg(long)]
    pub offline_only: bool,
    /// Measure the compute cost model on this machine first.
    #[arg(long)]
    pub calibrate: bool,
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output share files, one per party.
    #[arg(long, num_args = 1.., required = true)]
    pub outputs: Vec<PathBuf>,
    /// With `--model` and `--input`, compares against the plaintext oracle.
    #[arg(long, requires = "input")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Metrics files to merge into the report.
    #[arg(long, num_args = 0..)]
    pub metrics: Vec<PathBuf>,
}

/// Seed from the flag, then `$LRMPC_SEED`, then the OS.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(rand::random()),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).map_err(Error::io(path))
}

fn print_json(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Runs a command and returns what it prints.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Decompose(a) => decompose(&a),
        Command::Share(a) => share(&a),
        Command::RunParty(a) => run_party(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Bench(a) => bench(&a),
        Command::Report(a) => report(&a),
    }
}

#[derive(Serialize)]
struct FactorReport {
    layer: usize,
    weight: String,
    n: usize,
    o: usize,
    rank: usize,
    ratio: f64,
    frobenius_error: f64,
}

fn decompose(a: &DecomposeArgs) -> Result<String> {
    let (model, mut weights) = load_model(&a.input)?;
    let mut policy = match &a.layers {
        Some(p) => serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?,
        None => Policy::default(),
    };
    policy.fc_ratio = a.fc_ratio.unwrap_or(policy.fc_ratio);
    policy.conv_ratio = a.conv_ratio.unwrap_or(policy.conv_ratio);
    let mut reports = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        if policy.low_rank_layers.as_ref().is_some_and(|l| !l.contains(&i)) {
            continue;
        }
        let fixed = policy.overrides.get(&i).and_then(|o| o.rank);
        let (weight, n, o, factors) = match layer {
            ModelLayer::Fc { weight, n, o } => {
                let r = match fixed {
                    Some(r) => r,
                    None => choose_rank(LayerClass::Fc, *n, *o, policy.fc_ratio)?,
                };
                let w = weights.get(weight).ok_or_else(|| Error::Usage(format!("model lacks {weight}")))?;
                (weight, *n, *o, svd_factorize(&w.clone().reshape(vec![*n, *o])?, r)?)
            }
            ModelLayer::Conv { weight, shape } => {
                let (n, o) = (shape.patch_cols(), shape.out_ch);
                let r = match fixed {
                    Some(r) => r,
                    None => choose_rank(LayerClass::Conv, n, o, policy.conv_ratio)?,
                };
                let w = weights.get(weight).ok_or_else(|| Error::Usage(format!("model lacks {weight}")))?;
                let kernel = w.clone().reshape(vec![shape.kernel, shape.kernel, shape.in_ch, o])?;
                (weight, n, o, conv_factorize(&kernel, r)?)
            }
            _ => continue,
        };
        let (u, v) = factor_names(weight);
        reports.push(FactorReport {
            layer: i,
            weight: weight.clone(),
            n,
            o,
            rank: factors.rank,
            ratio: factors.ratio,
            frobenius_error: factors.error,
        });
        weights.insert(u, factors.u);
        weights.insert(v, factors.v);
    }
    save_model(&a.out, &model, &weights)?;
    let sidecar = a.report.clone().unwrap_or_else(|| a.out.with_extension("lrmt.json"));
    let body = json!({ "policy": policy, "layers": reports });
    write_json(&sidecar, &body)?;
    print_json(&body)
}

fn share(a: &ShareArgs) -> Result<String> {
    let (model, weights) = load_model(&a.model)?;
    let x = load_tensor(&a.input, INPUT_NAME)?;
    let plan = a.plan.plan(&model)?;
    let values = plan_values(&plan, &weights)?;
    let bounds = plan.check_ranges(&values, x.max_abs())?;
    let seed = resolve_seed(a.seed)?;
    let seeds = SeedSet::derive(&seed_from_u64(seed));
    let inputs = prepare(&plan, &seeds, &x, &values)?;
    std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
    let mut files = Vec::new();
    for mine in &inputs {
        let k = mine.input.owner().number();
        let s = a.out.join(format!("p{k}.shares.lrmt"));
        let m = a.out.join(format!("p{k}.material.lrmt"));
        share_file(&plan, mine, a.session)?.save(&s)?;
        material_file(&plan, &mine.material)?.save(&m)?;
        files.push(json!({ "party": k, "shares": s, "material": m }));
    }
    let offline = lrmpc_core::dealer::account(&plan);
    write_json(&a.out.join("plan.json"), &plan)?;
    write_json(&a.out.join("offline.json"), &offline)?;
    print_json(&json!({
        "protocol": plan.protocol.name(),
        "mode": plan.mode.name(),
        "session": a.session,
        "files": files,
        "layer_bounds": bounds,
        "offline": offline.total,
    }))
}

fn run_party(a: &RunPartyArgs) -> Result<String> {
    let endpoints: EndpointConfig = serde_json::from_slice(&std::fs::read(&a.endpoints).map_err(Error::io(&a.endpoints))?)?;
    if !(a.timeout_secs > 0.0 && a.timeout_secs.is_finite()) {
        return Err(Error::Usage("timeout must be positive".into()));
    }
    let out = run_party_files(&a.shares, &a.material, &endpoints, a.allow_insecure, Duration::from_secs_f64(a.timeout_secs))?;
    let frac = out.output.frac.bits(&out.plan.cfg);
    output_file(&out.plan, &out.output.share, frac)?.save(&a.out)?;
    if let Some(m) = &a.metrics {
        write_json(m, &out.metrics)?;
    }
    if out.metrics.is_insecure() {
        eprintln!("WARNING: insecure operations ran: {}", out.metrics.insecure.join("; "));
    }
    print_json(&out.metrics)
}

fn simulate_cmd(a: &SimulateArgs) -> Result<String> {
    let model = match &a.model {
        Some(p) => load_model(p)?.0,
        None => fc_stack(a.rows, a.width, a.depth),
    };
    let plan = a.plan.plan(&model)?;
    let profile = match &a.profile {
        Some(p) => serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?,
        None => NetworkProfile::preset(&a.network).ok_or_else(|| Error::Usage(format!("unknown network preset {:?}", a.network)))?,
    };
    let seed = if a.jitter_ms > 0.0 { resolve_seed(a.seed)? } else { a.seed.unwrap_or(0) };
    let opts = SimOptions { cost: CostModel { ns_per_mac: a.ns_per_mac, ns_per_elem: a.ns_per_elem }, jitter_ms: a.jitter_ms, seed };
    let program = schedule(&plan);
    let timeline = simulate(&program, &profile, &opts)?;
    let metrics = Metrics::from_program(&plan, &program, Some(&timeline));
    if let Some(g) = &a.gantt {
        write_json(g, &timeline.spans)?;
    }
    print_json(&json!({
        "protocol": plan.protocol.name(),
        "mode": plan.mode.name(),
        "network": profile,
        "critical_path_ms": timeline.critical_path_ms,
        "finish_ms": timeline.finish_ms,
        "metrics": metrics,
    }))
}

fn bench(a: &BenchArgs) -> Result<String> {
    let mut cfg = BenchConfig {
        rows: a.rows,
        width: a.width,
        depth: a.depth,
        protocols: vec![Protocol::Npc(a.parties), Protocol::Trio],
        ..Default::default()
    };
    cfg.protocols[0].validate()?;
    if let Some(p) = &a.policy {
        cfg.policy = serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?;
    }
    if a.offline_only {
        let reports: Vec<_> = offline_reports(&cfg)?
            .into_iter()
            .map(|(p, m, r)| json!({ "protocol": p, "mode": m, "report": r }))
            .collect();
        return print_json(&reports);
    }
    if a.calibrate {
        cfg.cost = calibrate();
        eprintln!("calibrated: {:.4} ns/MAC, {:.4} ns/element", cfg.cost.ns_per_mac, cfg.cost.ns_per_elem);
    }
    let rows = run_bench(&cfg)?;
    match a.format {
        Format::Csv => Ok(to_csv(&rows)),
        Format::Json => print_json(&json!({ "config": cfg, "rows": rows })),
    }
}

fn report(a: &ReportArgs) -> Result<String> {
    let mut shares = Vec::new();
    let mut frac = None;
    for p in &a.outputs {
        let c = crate::container::Container::load(p)?;
        let (s, _) = read_output_file(&c)?;
        let bits: u32 = c.meta_field("frac_bits")?;
        if frac.is_some_and(|f| f != bits) {
            return Err(Error::Usage("output shares disagree on fraction bits".into()));
        }
        frac = Some(bits);
        shares.push(s);
    }
    let value = decode_with_frac(&reconstruct(&shares)?, frac.unwrap_or(0));
    let mut body = json!({ "shape": value.shape(), "output": rows_of(&value) });
    if let (Some(m), Some(i)) = (&a.model, &a.input) {
        let (model, weights) = load_model(m)?;
        let x = load_tensor(i, INPUT_NAME)?;
        let plan = a.plan.plan(&model)?;
        let values = plan_values(&plan, &weights)?;
        let want = plaintext_linear_oracle(&x, &plain_layers(&plan, &values)?)?;
        if want.shape() != value.shape() {
            return Err(Error::Usage(format!("oracle shape {:?}, output {:?}", want.shape(), value.shape())));
        }
        let err = want.data().iter().zip(value.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        body["oracle"] = json!(rows_of(&want));
        body["max_abs_error"] = json!(err);
        body["ulp"] = json!(plan.cfg.ulp());
    }
    let mut merged: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for p in &a.metrics {
        let m: Metrics = serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?;
        if m.is_insecure() {
            body["insecure"] = json!(m.insecure);
        }
        merged.insert(p.display().to_string(), serde_json::to_value(m)?);
    }
    if !merged.is_empty() {
        body["metrics"] = json!(merged);
    }
    print_json(&body)
}

fn rows_of(t: &RealTensor) -> Vec<Vec<f64>> {
    let cols = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}
