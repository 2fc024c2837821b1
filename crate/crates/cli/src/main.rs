use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpl_core::meta::{few_shot_loss, train, write_training_log, FewShotConfig, MetaConfig};
use mpl_core::net::ModelParams;
use mpl_core::oracle::{generate_population, load_population, save_population, PreferenceType, TypeBands};
use mpl_core::runtime::{evaluate_suite, pooled_phase_duration, run_episode, summarize, write_metrics, MetricsRow, RuntimeConfig};
use mpl_core::{seed, Algo, Checkpoint, Scenario, UserProfile};
use mpl_server::{Server, ServerConfig};

/// Meta preference learning for human-steered robot flocks.
#[derive(Parser)]
#[command(name = "mpl", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a simulated user population (JSON Lines).
    GenUsers(GenUsers),
    /// Train a preference-model checkpoint with maml, reptile or the pooled baseline.
    MetaTrain(MetaTrain),
    /// Run deployment episodes for each checkpoint and write a metrics CSV.
    Evaluate(Evaluate),
    /// Run one headless episode and print its report.
    Simulate(Simulate),
    /// Host live steering sessions over a websocket.
    Serve(Serve),
}

#[derive(Args)]
struct GenUsers {
    /// Number of users; 2000 is the desk-scale training population, 30 a held-out set.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-type target bands (JSON); built-in bands when omitted.
    #[arg(long)]
    bands: Option<PathBuf>,
}

#[derive(Args)]
struct MetaTrain {
    #[arg(long, value_parser = parse_algo)]
    algo: Algo,
    /// Training population (JSON Lines).
    #[arg(long)]
    users: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training-log CSV; defaults to the checkpoint path with a .log.csv suffix.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Inner learning rate α.
    #[arg(long, default_value_t = mpl_core::meta::DEFAULT_INNER_LR)]
    inner_lr: f64,
    /// Meta learning rate β; 0.1 for maml, 0.5 for reptile when omitted.
    #[arg(long)]
    meta_lr: Option<f64>,
    /// Inner steps k.
    #[arg(long, default_value_t = 3)]
    inner_steps: usize,
    /// Users per meta-batch n.
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    support_size: usize,
    #[arg(long, default_value_t = 10)]
    query_size: usize,
    /// Keep β (baseline: its SGD rate) constant instead of decaying it to zero.
    #[arg(long)]
    no_anneal: bool,
    /// Held-out users for the final few-shot report; training users otherwise.
    #[arg(long)]
    val_users: Option<PathBuf>,
    /// Free-form timestamp stored in the checkpoint.
    #[arg(long)]
    created_at: Option<String>,
}

#[derive(Args)]
struct Evaluate {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    /// Held-out users (JSON Lines); 30 at desk scale.
    #[arg(long)]
    users: PathBuf,
    /// Episodes per user, each with its own derived world seed.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Scenario JSON; the built-in disaster site when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    #[arg(long)]
    model: PathBuf,
    /// Population file to pick the user from.
    #[arg(long)]
    users: PathBuf,
    /// Index into the population file.
    #[arg(long, default_value_t = 0)]
    user: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Step cap.
    #[arg(long, default_value_t = 600)]
    steps: usize,
    /// Write the per-step trace as JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct Serve {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory holding the UI bundle.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Simulated seconds per wall second.
    #[arg(long, default_value_t = 1.0)]
    speedup: f64,
    #[arg(long)]
    seed: u64,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse().map_err(|e: mpl_core::Error| e.to_string())
}

/// Exit 2 for bad input, 1 for failures while running.
enum Failure {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_users(path: &Path) -> Result<Vec<UserProfile>, Failure> {
    let users = load_population(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if users.is_empty() {
        return Err(usage(format!("{}: no users", path.display())));
    }
    Ok(users)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => Scenario::load(p).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(Scenario::disaster_site()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn gen_users(a: GenUsers) -> CmdResult {
    let bands = match &a.bands {
        Some(p) => TypeBands::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => TypeBands::default(),
    };
    let users: Vec<UserProfile> = generate_population(a.n as usize, &bands, a.seed);
    save_population(&users, &a.out).map_err(runtime)?;
    for t in PreferenceType::ALL {
        println!("{t}: {}", users.iter().filter(|u| u.ptype == t).count());
    }
    Ok(())
}

fn meta_train(a: MetaTrain) -> CmdResult {
    let users = load_users(&a.users)?;
    let val = match &a.val_users {
        Some(p) => load_users(p)?,
        None => users.clone(),
    };
    let defaults = MetaConfig::for_algo(a.algo);
    let cfg = MetaConfig {
        inner_lr: a.inner_lr,
        meta_lr: a.meta_lr.unwrap_or(defaults.meta_lr),
        inner_steps: a.inner_steps,
        epochs: a.epochs,
        batch_size: a.batch_size,
        support_size: a.support_size,
        query_size: a.query_size,
        anneal: !a.no_anneal,
        seed: a.seed,
        ..defaults
    };
    cfg.validate().map_err(usage)?;
    let init = ModelParams::init(&cfg.layer_dims, a.seed);
    let outcome = train(&init, &users, &cfg).map_err(runtime)?;
    let ckpt = Checkpoint::new(&outcome.params, a.algo, a.seed, a.created_at);
    ckpt.save(&a.out).map_err(runtime)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    let mut w = create(&log_path)?;
    write_training_log(&outcome.log, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let fs = FewShotConfig { lr: cfg.inner_lr, support_size: cfg.support_size, query_size: cfg.query_size, ..FewShotConfig::default() };
    let loss = few_shot_loss(&outcome.params, &val, &fs).map_err(runtime)?;
    println!("{} epochs of {}; validation few-shot loss after {} steps: {loss:.6}", cfg.epochs, a.algo, fs.steps);
    Ok(())
}

fn evaluate(a: Evaluate) -> CmdResult {
    let users = load_users(&a.users)?;
    let scenario = load_scenario(a.scenario.as_deref())?;
    let models: Vec<Checkpoint> = a.models.iter().map(|p| load_checkpoint(p)).collect::<Result<_, _>>()?;
    let seeds: Vec<u64> = (0..a.seeds).map(|i| seed::derive(a.seed, &[i])).collect();
    let cfg = RuntimeConfig::default();
    let mut rows: Vec<MetricsRow> = Vec::new();
    for m in &models {
        rows.extend(evaluate_suite(&m.params(), m.trained_with, &users, &scenario, &cfg, &seeds).map_err(runtime)?);
    }
    let mut w = create(&a.out)?;
    write_metrics(&rows, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    println!("{:<9} {:<10} {:>8} {:>20} {:>16} {:>10}", "algo", "type", "episodes", "phase duration", "phases", "converged");
    for s in summarize(&rows) {
        let t = s.ptype.map_or("all".to_string(), |t| t.to_string());
        println!(
            "{:<9} {:<10} {:>8} {:>11.2} ± {:<6.2} {:>7.2} ± {:<5.2} {:>10.2}",
            s.algo.name(), t, s.episodes, s.mean_phase_duration, s.std_phase_duration, s.mean_phases, s.std_phases, s.converged_fraction
        );
    }
    let of = |algo: Algo| -> Vec<&MetricsRow> { rows.iter().filter(|r| r.algo == algo).collect() };
    let baseline = of(Algo::Baseline);
    if !baseline.is_empty() {
        let base = pooled_phase_duration(&baseline);
        for algo in [Algo::Maml, Algo::Reptile] {
            let meta = of(algo);
            if !meta.is_empty() {
                println!("duration ratio {algo}/baseline: {:.4}", pooled_phase_duration(&meta) / base);
            }
        }
    }
    Ok(())
}

fn simulate(a: Simulate) -> CmdResult {
    let users = load_users(&a.users)?;
    let user = users.get(a.user).ok_or_else(|| usage(format!("--user {} out of range ({} users)", a.user, users.len())))?;
    let ckpt = load_checkpoint(&a.model)?;
    let scenario = load_scenario(a.scenario.as_deref())?;
    let cfg = RuntimeConfig { step_cap: a.steps, ..RuntimeConfig::default() };
    let (_, report) = run_episode(&ckpt.params(), user, &scenario, &cfg, a.seed).map_err(runtime)?;
    if let Some(p) = &a.trace {
        let mut w = create(p)?;
        report.write_trace(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    println!(
        "user {} ({}) with {} model: {} steps, converged={}, phases={}, mean phase duration {:.2}, final loss {:.5}",
        user.id, user.ptype, ckpt.trained_with, report.total_steps, report.converged, report.phases.len(), report.mean_phase_duration(), report.final_loss
    );
    for p in &report.phases {
        println!("  phase steps {}..={} ({} instructions)", p.start_step, p.end_step, p.instruction_count);
    }
    Ok(())
}

fn serve(a: Serve) -> CmdResult {
    let checkpoint = load_checkpoint(&a.model)?;
    let scenario = load_scenario(a.scenario.as_deref())?;
    if !(a.speedup > 0.0 && a.speedup.is_finite()) {
        return Err(usage("--speedup must be positive"));
    }
    if let Some(d) = &a.static_dir {
        if !d.is_dir() {
            return Err(usage(format!("{}: not a directory", d.display())));
        }
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(usage)?;
    let cfg = ServerConfig { checkpoint, scenario, runtime: RuntimeConfig::default(), seed: a.seed, speedup: a.speedup, static_dir: a.static_dir };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let server = Server::bind(addr, cfg).await.map_err(|e| runtime(format!("bind {addr}: {e}")))?;
        eprintln!("listening on http://{} (websocket at /ws)", server.local_addr().map_err(runtime)?);
        server.run(async { tokio::signal::ctrl_c().await.ok(); }).await.map_err(runtime)
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::GenUsers(a) => gen_users(a),
        Command::MetaTrain(a) => meta_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
