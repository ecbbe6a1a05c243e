use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nodeprint::attacks::{run_attacks, AttackKind, AttackTarget, PoisonConfig, DEFAULT_VALIDITY_THRESHOLD};
use nodeprint::fingerprint::{
    baseline_manc, baseline_random, construct_inductive_f, construct_inductive_l,
    construct_inductive_randomized, generate, generate_randomized, load_fingerprint_file,
    save_fingerprint_file, FingerprintFile, FingerprintMethod, InductiveConfig, InductiveFile,
    ModelAccess, ModelOracle, TransductiveFile,
};
use nodeprint::gcn::checkpoint;
use nodeprint::gcn::{train, TrainConfig};
use nodeprint::graph::synthetic::{citation_like, sbm, CitationConfig, SbmConfig};
use nodeprint::graph::{load_graph, save_graph, Graph, LoadOptions};
use nodeprint::harness::{
    bypass_prob_approx, bypass_prob_exact, bypass_prob_exact_inductive, bypass_rate_monte_carlo,
    parse_experiment_spec, run_experiment, verify, BypassSetting, Verdict, VerifyOptions,
};
use nodeprint::serving::{
    serve, AdaptiveConfig, AdaptiveStrategy, Attacker, HttpEndpoint, InProcessEndpoint,
    PredictionEndpoint, Service, ServingConfig, ServingMode,
};
use nodeprint::Model;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nodeprint", version, about = "Fingerprint-based integrity checks for served GCN models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph.
    GenGraph(GenGraphArgs),
    /// Sample a shadow graph for inductive fingerprinting.
    Shadow(ShadowArgs),
    /// Train a GCN and write a checkpoint.
    Train(TrainArgs),
    /// Build a fingerprint file.
    Fingerprint(FingerprintArgs),
    /// Tamper with a checkpoint.
    Attack(AttackArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
    /// Check an endpoint against a fingerprint file. Exits 0 iff every label matches.
    Verify(VerifyArgs),
    /// Closed-form and simulated analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run an experiment spec.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Sbm,
    Cora,
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long, value_enum, default_value = "sbm")]
    kind: GraphKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShadowArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FpMode {
    TransF,
    TransL,
    IndF,
    IndL,
    Random,
    Manc,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Hosted graph (transductive modes).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Shadow graph (inductive modes).
    #[arg(long)]
    shadow: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: FpMode,
    #[arg(long)]
    randomized: bool,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Candidates scored by randomized transductive selection.
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    #[arg(long, default_value_t = 256)]
    move_pool_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// bfa, bfa-f, bfa-l, poison-rand or poison-grad.
    #[arg(long)]
    kind: AttackKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n_edges: usize,
    #[arg(long, default_value_t = DEFAULT_VALIDITY_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackerKind {
    None,
    Tampered,
    Adaptive,
}

#[derive(Args)]
struct ServiceArgs {
    #[arg(long, value_parser = parse_mode, default_value = "transductive")]
    mode: ServingMode,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Hosted graph, transductive mode only.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    attacker: AttackerKind,
    /// Checkpoint served by a tampered or adaptive attacker.
    #[arg(long)]
    attack_checkpoint: Option<PathBuf>,
    /// Queries the adaptive attacker answers honestly.
    #[arg(long, default_value_t = 0)]
    m_a: usize,
    /// Shadow graph of the adaptive inductive attacker.
    #[arg(long)]
    attacker_shadow: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    expose_model_hash: bool,
}

fn parse_mode(s: &str) -> Result<ServingMode, String> {
    s.parse().map_err(|e: nodeprint::Error| e.to_string())
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    service: ServiceArgs,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Base URL of a running server, or `inproc` to build the service locally.
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    fingerprints: PathBuf,
    /// Shadow graph an inductive fingerprint file was built from.
    #[arg(long)]
    shadow: Option<PathBuf>,
    #[arg(long)]
    fail_fast: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    service: ServiceArgs,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Bypass probability of an adaptive attacker.
    Bypass(BypassArgs),
}

#[derive(Args)]
struct BypassArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m_a: usize,
    #[arg(long)]
    m_v: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Monte Carlo trials; 0 skips the simulation.
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_graph(p: &Path) -> anyhow::Result<Graph> {
    load_graph(p, LoadOptions::default()).with_context(|| format!("loading graph {}", p.display()))
}

fn read_model(p: &Path) -> anyhow::Result<Model> {
    checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))
}

fn print_json(v: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn build_service(a: &ServiceArgs) -> anyhow::Result<Service> {
    let model = read_model(a.checkpoint.as_deref().context("--checkpoint is required")?)?;
    let graph = match a.mode {
        ServingMode::Transductive => Some(read_graph(a.graph.as_deref().context("--graph is required in transductive mode")?)?),
        ServingMode::Inductive => None,
    };
    let attack_model = || -> anyhow::Result<Model> {
        read_model(a.attack_checkpoint.as_deref().context("--attack-checkpoint is required for this attacker")?)
    };
    let attacker = match a.attacker {
        AttackerKind::None => Attacker::None,
        AttackerKind::Tampered => Attacker::Tampered(attack_model()?),
        AttackerKind::Adaptive => {
            let strategy = match a.mode {
                ServingMode::Transductive => AdaptiveStrategy::Transductive,
                ServingMode::Inductive => AdaptiveStrategy::Inductive {
                    shadow: read_graph(a.attacker_shadow.as_deref().context("--attacker-shadow is required")?)?,
                    cfg: InductiveConfig::default(),
                },
            };
            Attacker::Adaptive(AdaptiveConfig { m_a: a.m_a, attack_model: attack_model()?, seed: a.seed, strategy })
        }
    };
    Ok(Service::new(ServingConfig { mode: a.mode, model, graph, attacker, expose_model_hash: a.expose_model_hash })?)
}

fn gen_graph(a: GenGraphArgs) -> anyhow::Result<()> {
    let g = match a.kind {
        GraphKind::Sbm => sbm(&SbmConfig::default().with_seed(a.seed))?,
        GraphKind::Cora => citation_like(&CitationConfig::cora_scale(a.seed))?,
    };
    save_graph(&g, &a.out)?;
    eprintln!("{} nodes, {} edges -> {}", g.num_nodes(), g.num_edges(), a.out.display());
    Ok(())
}

fn shadow(a: ShadowArgs) -> anyhow::Result<()> {
    let g = read_graph(&a.graph)?.sample_shadow_graph(a.fraction, a.seed)?;
    save_graph(&g, &a.out)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let g = read_graph(&a.graph)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        dropout: a.dropout,
        hidden_dim: a.hidden,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (m, report) = train(&g, &cfg)?;
    checkpoint::save(&m, &a.out)?;
    print_json(&report)
}

fn fingerprint_cmd(a: FingerprintArgs) -> anyhow::Result<()> {
    let m = read_model(&a.checkpoint)?;
    let file = match a.mode {
        FpMode::TransF | FpMode::TransL | FpMode::Random | FpMode::Manc => {
            let g = read_graph(a.graph.as_deref().context("--graph is required for transductive fingerprints")?)?;
            let pool = g.candidate_pool();
            let method = if a.mode == FpMode::TransL { FingerprintMethod::L } else { FingerprintMethod::F };
            let fps = match a.mode {
                FpMode::Random => baseline_random(&m, &g, &pool, a.k, a.seed)?,
                FpMode::Manc => baseline_manc(&m, &g, &pool, a.k)?,
                _ if a.randomized => {
                    let s = a.sample_size.context("--randomized needs --sample-size")?;
                    generate_randomized(&m, &g, &pool, s, a.k, a.seed, method)?
                }
                _ => generate(&m, &g, &pool, a.k, method)?,
            };
            FingerprintFile::Transductive(TransductiveFile::from_fingerprints(&fps)?)
        }
        FpMode::IndF | FpMode::IndL => {
            let shadow = read_graph(a.shadow.as_deref().context("--shadow is required for inductive fingerprints")?)?;
            let cfg = InductiveConfig {
                k: a.k,
                budget: a.budget,
                move_pool_size: a.move_pool_size,
                seed: a.seed,
                ..InductiveConfig::default()
            };
            let oracle = ModelOracle::new(&m);
            let set = match (a.mode, a.randomized) {
                (FpMode::IndF, false) => construct_inductive_f(&m, &shadow, &cfg)?,
                (FpMode::IndF, true) => construct_inductive_randomized(ModelAccess::Gradient(&m), &shadow, &cfg)?,
                (_, false) => construct_inductive_l(&oracle, &shadow, &cfg)?,
                (_, true) => construct_inductive_randomized(ModelAccess::Posterior(&oracle), &shadow, &cfg)?,
            };
            FingerprintFile::Inductive(InductiveFile::from_set(&set))
        }
    };
    save_fingerprint_file(&file, &a.out)?;
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> anyhow::Result<()> {
    let m = read_model(&a.checkpoint)?;
    let g = read_graph(&a.graph)?;
    let t = AttackTarget::new(&m, &g, a.threshold)?;
    let poison = PoisonConfig { n_edges: a.n_edges, retrain: TrainConfig::default() };
    let out = run_attacks(&t, a.kind, 1, a.seed, Some(&poison))?.remove(0);
    checkpoint::save(&out.tampered, &a.out)?;
    print_json(&out.manifest(&a.out.display().to_string()))
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<()> {
    let service = Arc::new(build_service(&a.service)?);
    let running = serve(service, &format!("{}:{}", a.host, a.port), a.threads)?;
    eprintln!("listening on {}", running.url());
    running.wait();
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> anyhow::Result<ExitCode> {
    let fps = match load_fingerprint_file(&a.fingerprints)? {
        FingerprintFile::Transductive(t) => t.fingerprints(),
        FingerprintFile::Inductive(i) => {
            let shadow = read_graph(a.shadow.as_deref().context("--shadow is required for inductive fingerprints")?)?;
            i.fingerprints(&shadow)?
        }
    };
    let ep: Box<dyn PredictionEndpoint> = if a.endpoint == "inproc" {
        Box::new(InProcessEndpoint::new(Arc::new(build_service(&a.service)?)))
    } else {
        Box::new(HttpEndpoint::new(&a.endpoint))
    };
    let report = verify(ep.as_ref(), &fps, VerifyOptions { fail_fast: a.fail_fast })?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(match report.verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
        Verdict::Inconclusive => ExitCode::from(3),
    })
}

fn bypass_cmd(a: BypassArgs) -> anyhow::Result<()> {
    let mut out = serde_json::json!({
        "n": a.n,
        "m_a": a.m_a,
        "m_v": a.m_v,
        "classes": a.classes,
        "exact_transductive": bypass_prob_exact(a.n, a.m_a, a.m_v)?,
        "exact_inductive": bypass_prob_exact_inductive(a.n, a.m_a, a.m_v, a.classes)?,
        "approx_transductive": bypass_prob_approx(a.n, a.m_a, a.m_v, 1)?,
        "approx_inductive": bypass_prob_approx(a.n, a.m_a, a.m_v, a.classes)?,
    });
    if a.trials > 0 {
        let t = bypass_rate_monte_carlo(a.n, a.m_a, a.m_v, a.trials, a.seed, BypassSetting::Transductive)?;
        let i = bypass_rate_monte_carlo(
            a.n,
            a.m_a,
            a.m_v,
            a.trials,
            a.seed,
            BypassSetting::Inductive { classes: a.classes },
        )?;
        out["mc_transductive"] = serde_json::to_value(t)?;
        out["mc_inductive"] = serde_json::to_value(i)?;
    }
    print_json(&out)
}

fn experiment_cmd(a: ExperimentArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec = parse_experiment_spec(&bytes)?;
    if a.out.is_some() {
        spec.output_dir = a.out;
    }
    let summary = run_experiment(&spec)?;
    if spec.output_dir.is_none() {
        print_json(&summary)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenGraph(a) => gen_graph(a)?,
        Command::Shadow(a) => shadow(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Fingerprint(a) => fingerprint_cmd(a)?,
        Command::Attack(a) => attack_cmd(a)?,
        Command::Serve(a) => serve_cmd(a)?,
        Command::Verify(a) => return verify_cmd(a),
        Command::Analyze(AnalyzeCommand::Bypass(a)) => bypass_cmd(a)?,
        Command::Experiment(a) => experiment_cmd(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
