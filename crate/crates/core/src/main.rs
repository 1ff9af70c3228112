//! `fedhe` command line: train, predict, plan-params and bench over a single
//! TOML run config.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fedhe::approx::eval_encrypted;
use fedhe::config::{BackendKind, RunConfig};
use fedhe::cost::{check_plan, comm_estimate, evaluate_point, select_params, simulate_iteration, CryptoPlan};
use fedhe::federation::{Federation, Normalization};
use fedhe::mhe::backend::{Backend, Counts, Phase};
use fedhe::mhe::params::RingParams;
use fedhe::mhe::real::RealBackend;
use fedhe::mhe::reference::ReferenceBackend;
use fedhe::mhe::transform::LinearTransform;
use fedhe::netsim::{Dataset, Traffic, WirePhase, WireStats};
use fedhe::nn::plain::argmax;
use fedhe::nn::{Network, Sample};
use fedhe::packing::Matrix;

#[derive(Parser)]
#[command(name = "fedhe", version, about = "Federated training under multiparty homomorphic encryption (simulated network)")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `federation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `crypto.backend`.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Forces insecure toy rings.
    #[arg(long)]
    toy: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Federated training; writes model.json, metrics.jsonl and stats.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `network.global_iters`.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Oblivious predictions on the held-out rows for a fresh querier key.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Weights from `train`; trains from scratch when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Queries to run (default: every held-out row).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Chooses ring dimension and chain for the configured network.
    PlanParams {
        #[command(flatten)]
        common: Common,
        /// Evaluates this ring dimension instead of searching (needs --primes).
        #[arg(long, requires = "primes")]
        ring_dim: Option<usize>,
        /// Total primes in the chain for --ring-dim.
        #[arg(long, requires = "ring_dim")]
        primes: Option<usize>,
        /// Plan file (default: <output_dir>/plan.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operation-count tables: primitives, and one iteration against the cost model.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

/// Persisted training result: decrypted weights and the collective normalization.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    dims: Vec<usize>,
    iteration: usize,
    normalization: Option<Normalization>,
    weights: Vec<Matrix>,
}

#[derive(Serialize)]
struct EdgeTraffic {
    from: usize,
    to: usize,
    #[serde(flatten)]
    traffic: Traffic,
}

/// `stats.json`: the wire accounting with edges flattened to a list.
#[derive(Serialize)]
struct StatsFile {
    total: Traffic,
    per_phase: BTreeMap<WirePhase, Traffic>,
    per_edge: Vec<EdgeTraffic>,
}

impl From<&WireStats> for StatsFile {
    fn from(s: &WireStats) -> Self {
        StatsFile {
            total: s.total,
            per_phase: s.per_phase.clone(),
            per_edge: s.per_edge.iter().map(|(&(from, to), &traffic)| EdgeTraffic { from, to, traffic }).collect(),
        }
    }
}

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

struct Setup {
    cfg: RunConfig,
    net: Network,
    params: RingParams,
    plan: Option<CryptoPlan>,
}

fn setup(c: &Common) -> Res<Setup> {
    let mut cfg = RunConfig::load(&c.config).map_err(err)?;
    if let Some(s) = c.seed {
        cfg.federation.seed = s;
    }
    if let Some(b) = c.backend {
        cfg.crypto.backend = b;
    }
    cfg.crypto.toy |= c.toy;
    let net = Network::compile(&cfg.network).map_err(err)?;
    let (chain, plan) = cfg.chain(&net).map_err(|e| format!("parameter selection: {e}"))?;
    let params = chain.build().map_err(err)?;
    Ok(Setup { cfg, net, params, plan })
}

fn data(s: &Setup) -> Res<(Dataset, Dataset)> {
    let (train, test) = s.cfg.dataset().map_err(err)?.ok_or("this command needs a [data] section")?;
    if train.features != s.net.logical_input() {
        return Err(format!("data has {} features, network.input_dim is {}", train.features, s.net.logical_input()));
    }
    if train.classes != s.net.output_width() {
        return Err(format!("data has {} classes, the output layer has {}", train.classes, s.net.output_width()));
    }
    Ok((train, test))
}

fn write_json(path: &Path, v: &impl Serialize) -> Res<()> {
    let text = serde_json::to_string_pretty(v).map_err(err)?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs `f` with the configured backend.
macro_rules! with_backend {
    ($s:expr, |$be:ident| $body:expr) => {{
        let n = $s.cfg.federation.parties;
        match $s.cfg.crypto.backend {
            BackendKind::Reference => {
                let $be = ReferenceBackend::new($s.params.clone(), n).map_err(err)?;
                $body
            }
            BackendKind::Real => {
                let $be = RealBackend::new($s.params.clone(), n, $s.cfg.federation.seed).map_err(err)?;
                $body
            }
        }
    }};
}

fn train<B: Backend>(be: &B, s: &Setup, iters: usize) -> Res<()> {
    let (train, test) = data(s)?;
    let dir = s.cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let shards = train.split(s.cfg.federation.parties, s.cfg.federation.seed);
    let mut fed = Federation::prepare(be, &s.net, &s.cfg.fed_config(), shards).map_err(err)?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut sink = BufWriter::new(File::create(&metrics_path).map_err(|e| format!("{}: {e}", metrics_path.display()))?);
    let eval = (!test.samples.is_empty()).then_some(test.samples.as_slice());
    fed.train(iters, eval, Some(&mut sink)).map_err(err)?;
    sink.flush().map_err(err)?;
    let model = ModelFile {
        dims: s.net.dims.clone(),
        iteration: fed.model.iteration,
        normalization: fed.norm.clone(),
        weights: fed.plain_view().map_err(err)?.weights(),
    };
    write_json(&dir.join("model.json"), &model)?;
    write_json(&dir.join("stats.json"), &StatsFile::from(fed.stats()))?;
    if let Some(m) = fed.metrics.last() {
        println!("iteration {}: loss {:?} accuracy {:?}", m.iteration, m.loss, m.accuracy);
    }
    let t = fed.stats().total;
    println!("wire: {} messages, {} bytes, {:.3} simulated ms", t.messages, t.bytes, fed.wire.now_ms());
    println!("wrote {}", dir.display());
    Ok(())
}

fn predict<B: Backend>(be: &B, s: &Setup, model: Option<&Path>, limit: Option<usize>) -> Res<()> {
    let (train, test) = data(s)?;
    let shards = train.split(s.cfg.federation.parties, s.cfg.federation.seed);
    let mut fc = s.cfg.fed_config();
    if model.is_some() {
        fc.normalize = false;
    }
    let mut fed = Federation::prepare(be, &s.net, &fc, shards).map_err(err)?;
    match model {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let m: ModelFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            if m.dims != s.net.dims {
                return Err(format!("model dims {:?} do not match the network {:?}", m.dims, s.net.dims));
            }
            // Saved weights go back under the current collective key.
            fed.model = fed.engine.encrypt_model(&m.weights).map_err(err)?;
            fed.model.iteration = m.iteration;
            fed.norm = m.normalization;
        }
        None => fed.train(s.cfg.network.global_iters, None, None).map_err(err)?,
    }
    let querier = be.new_querier(s.cfg.federation.seed ^ 0x5eed);
    let before = fed.stats().total;
    let rows: Vec<&Sample> = test.samples.iter().take(limit.unwrap_or(usize::MAX)).collect();
    let dir = s.cfg.output_dir();
    fs::create_dir_all(&dir).map_err(err)?;
    let mut out = BufWriter::new(File::create(dir.join("predictions.jsonl")).map_err(err)?);
    let mut correct = 0;
    for (i, r) in rows.iter().enumerate() {
        let ct = fed.oblivious_query(&r.x, &querier).map_err(err)?;
        let slots = be.querier_decrypt(&querier, &ct).map_err(err)?;
        let output = fed.engine.read_output(&slots);
        let (pred, label) = (argmax(&output), argmax(&r.y));
        correct += usize::from(pred == label);
        let line = serde_json::json!({ "index": i, "output": output, "predicted": pred, "label": label });
        writeln!(out, "{line}").map_err(err)?;
    }
    out.flush().map_err(err)?;
    let t = fed.stats().total;
    println!("{} oblivious queries, accuracy {:.4}", rows.len(), correct as f64 / rows.len().max(1) as f64);
    println!("query traffic: {} messages, {} bytes", t.messages - before.messages, t.bytes - before.bytes);
    println!("wrote {}", dir.join("predictions.jsonl").display());
    Ok(())
}

fn print_plan(p: &CryptoPlan) {
    println!("ring_dim                 {}", p.ring_dim);
    println!("primes (L)               {}", p.levels);
    println!("prime_bits               {:?}", p.prime_bits);
    println!("log_q                    {:.1}", p.log_q);
    println!("scale_bits               {}", p.scale_bits);
    println!("refresh floor (tau)      {} primes", p.tau);
    println!("usable levels            {}", p.levels - p.tau);
    println!("log2(Q/S)                {:.1}", p.log_k);
    println!("bootstraps (formula)     {:.2}", p.bootstrap_formula);
    println!("bootstraps / iteration   {}", p.bootstraps_per_iteration);
    println!("ciphertexts per weight   {:?}", p.multi_cipher);
    println!("cost / iteration         {:.4e}", p.cost);
    println!("bytes / iteration        {}", p.bytes_per_iteration);
    println!("lambda / delta / N       {} / {} / {}", p.lambda, p.delta, p.parties);
}

fn plan_params(c: &Common, ring_dim: Option<usize>, primes: Option<usize>, out: Option<PathBuf>) -> Res<bool> {
    let mut cfg = RunConfig::load(&c.config).map_err(err)?;
    cfg.crypto.toy |= c.toy;
    let net = Network::compile(&cfg.network).map_err(err)?;
    let req = cfg.plan_request();
    let plan = match (ring_dim, primes) {
        (Some(n), Some(l)) => evaluate_point(&net, &req, n, l),
        _ => select_params(&net, &req),
    };
    let plan = match plan {
        Ok(p) => p,
        Err(e) => {
            println!("infeasible: {e}");
            return Ok(false);
        }
    };
    print_plan(&plan);
    let issues = check_plan(&plan, &net);
    for i in &issues {
        println!("checker: {i}");
    }
    println!("checker                  {}", if issues.is_empty() { "pass" } else { "FAIL" });
    let path = out.unwrap_or_else(|| cfg.output_dir().join("plan.json"));
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(err)?;
    }
    write_json(&path, &plan)?;
    println!("wrote {}", path.display());
    Ok(issues.is_empty())
}

fn counts_row(name: &str, c: &Counts, bytes: usize) {
    println!(
        "{name:<28} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>12}",
        c.rotations, c.mul_ct, c.mul_pt, c.mul_const, c.rescales, c.bootstraps, bytes
    );
}

fn bench<B: Backend>(be: &B, s: &Setup) -> Res<bool> {
    let slots = be.slots();
    let v: Vec<f64> = (0..slots).map(|i| ((i % 7) as f64 - 3.0) / 8.0).collect();
    let x = be.encrypt(&v).map_err(err)?;
    println!("primitives (N = {}, ring 2^{}, top level {})", be.n_parties(), be.params().ring_dim.trailing_zeros(), be.max_level());
    println!("{:<28} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>12}", "operation", "rot", "mul_ct", "mul_pt", "const", "resc", "boot", "share_bytes");
    let measure = |name: &str, f: &dyn Fn() -> Res<B::Ct>| -> Res<()> {
        be.instr().reset();
        f()?;
        let bytes = be.instr().take_events().iter().map(|e| e.share_bytes).sum();
        counts_row(name, &be.instr().total(), bytes);
        Ok(())
    };
    measure("mul_ct + rescale", &|| be.mul_rs(&x, &x).map_err(err))?;
    measure("mul_pt", &|| be.mul_plain(&x, &v, be.default_scale()).map_err(err))?;
    measure("rotate by 1", &|| be.rot_left(&x, 1).map_err(err))?;
    measure(&format!("rotate by {}", slots / 2 - 1), &|| be.rot_left(&x, slots / 2 - 1).map_err(err))?;
    let mut seen = Vec::new();
    for act in &s.net.acts {
        let p = &act.value;
        if seen.contains(&(act.name.clone(), p.degree())) {
            continue;
        }
        seen.push((act.name.clone(), p.degree()));
        let name = format!("{} d_a={}", act.name, p.degree());
        measure(&name, &|| eval_encrypted(be, &x, p).map_err(err))?;
    }
    measure("refresh (identity)", &|| be.refresh(&x, &LinearTransform::Identity).map_err(err))?;
    measure("refresh (rotation 1)", &|| be.refresh(&x, &LinearTransform::Rotation(1)).map_err(err))?;
    let q = be.new_querier(7);
    measure("key switch to querier", &|| be.key_switch_to(&x, &q).map_err(err))?;

    // One global iteration on synthetic rows, against the schedule.
    let n = be.n_parties();
    let d = s.net.logical_input();
    let out = s.net.output_width();
    let shards: Vec<Vec<Sample>> = (0..n)
        .map(|p| {
            (0..s.net.local_batch)
                .map(|i| Sample {
                    x: (0..d).map(|j| (((p * 31 + i * 7 + j) % 11) as f64 - 5.0) / 10.0).collect(),
                    y: (0..out).map(|k| f64::from(u8::from(k == (p + i) % out))).collect(),
                })
                .collect()
        })
        .collect();
    let mut fc = s.cfg.fed_config();
    fc.normalize = false;
    be.instr().reset();
    let mut fed = Federation::prepare(be, &s.net, &fc, shards).map_err(err)?;
    let before = fed.stats().clone();
    be.instr().reset();
    fed.train(1, None, None).map_err(err)?;
    println!();
    println!("one global iteration, per layer and pass");
    println!("{:<28} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "layer/pass", "rot", "mul_ct", "mul_pt", "const", "resc", "boot");
    for (tag, c) in be.instr().by_tag() {
        let pass = match tag.phase {
            Phase::Forward => "forward",
            Phase::Backward => "backward",
            Phase::Update => "update",
            Phase::Other => "other",
        };
        println!(
            "{:<28} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            format!("{} {pass}", tag.layer),
            c.rotations,
            c.mul_ct,
            c.mul_pt,
            c.mul_const,
            c.rescales,
            c.bootstraps
        );
    }
    let measured = fed.metrics[0].counts;
    let it = simulate_iteration(&s.net, be.max_level(), be.refresh_level(), n, s.net.local_batch);
    let est = comm_estimate(be.params().ring_dim, be.max_level(), be.refresh_level(), &s.net, n);
    let phase = |p: WirePhase| {
        let b = |st: &WireStats| st.per_phase.get(&p).map_or(0, |t| t.bytes);
        b(fed.stats()) - b(&before)
    };
    let rows = [
        ("rotations", measured.rotations, it.total.rotations),
        ("mul_ct", measured.mul_ct, it.total.mul_ct),
        ("mul_pt", measured.mul_pt, it.total.mul_pt),
        ("bootstraps", measured.bootstraps, it.total.bootstraps),
        ("map bytes", phase(WirePhase::Map), est.map),
        ("combine bytes", phase(WirePhase::Combine), est.combine),
        ("bootstrap bytes", phase(WirePhase::Bootstrap), est.bootstrap),
        ("reduce bytes", phase(WirePhase::Reduce), est.reduce),
    ];
    println!();
    println!("{:<28} {:>12} {:>12}  check", "quantity", "measured", "predicted");
    let mut ok = true;
    for (name, m, p) in rows {
        ok &= m == p;
        println!("{name:<28} {m:>12} {p:>12}  {}", if m == p { "match" } else { "MISMATCH" });
    }
    Ok(ok)
}

fn run(cli: Cli) -> Res<bool> {
    match cli.cmd {
        Cmd::Train { common, iters } => {
            let s = setup(&common)?;
            report_plan(&s);
            let m = iters.unwrap_or(s.cfg.network.global_iters);
            with_backend!(s, |be| train(&be, &s, m))?;
            Ok(true)
        }
        Cmd::Predict { common, model, limit } => {
            let s = setup(&common)?;
            with_backend!(s, |be| predict(&be, &s, model.as_deref(), limit))?;
            Ok(true)
        }
        Cmd::PlanParams { common, ring_dim, primes, out } => plan_params(&common, ring_dim, primes, out),
        Cmd::Bench { common } => {
            let s = setup(&common)?;
            with_backend!(s, |be| bench(&be, &s))
        }
    }
}

fn report_plan(s: &Setup) {
    if let Some(p) = &s.plan {
        println!("planner: ring 2^{}, {} primes, floor {}", p.ring_dim.trailing_zeros(), p.levels, p.floor());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
