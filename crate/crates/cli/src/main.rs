//! `masa`: train, evaluate and benchmark the SCARA reaching pipelines.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scara_masa::benchmark::{
    check_model_digest, export_reports, rmse, run_sweep, BenchmarkRow, BenchmarkTable, Cell, DigestStatus,
};
use scara_masa::config::ConfigError;
use scara_masa::env::{write_trace_csv, EnvConfig};
use scara_masa::format::fmt6;
use scara_masa::kinematics::is_reachable;
use scara_masa::noise::derive_stream;
use scara_masa::ppo::{evaluate, train, PpoError, TrainedPolicy};
use scara_masa::{run_traditional, NoiseModel, RunConfig};

// Stream indices under the run seed, one per command.
const TRAIN_STREAM: u64 = 10;
const EVAL_STREAM: u64 = 11;
const TRADITIONAL_STREAM: u64 = 12;

#[derive(Debug, Parser)]
#[command(name = "masa", version, about = "Planar SCARA reaching: classical pipeline vs. PPO policy")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 1 is the reproducibility reference.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Noise σ in radians (observation noise for the policy, command noise
    /// for the classical pipeline).
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Comma-separated σ values for `sweep`, e.g. "0,0.1,0.5".
    #[arg(long, global = true, value_delimiter = ',')]
    sigma_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    total_steps: Option<usize>,
    /// Fail instead of retraining when the policy's robot digest is stale.
    #[arg(long, global = true)]
    no_retrain: bool,
    #[arg(long, global = true, conflicts_with = "masa_only")]
    traditional_only: bool,
    #[arg(long, global = true)]
    masa_only: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy and write policy.json and curves.csv.
    Train,
    /// Evaluate a trained policy, retraining first if the robot changed.
    Eval {
        /// Policy artifact; defaults to <out-dir>/policy.json.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run the plan-then-execute pipeline for --episodes episodes.
    Traditional,
    /// Noise sweep over both pipelines; writes the full report bundle.
    Sweep,
    /// Print the table of a finished sweep from <out-dir>.
    Report,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Task(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Task(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Task(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = merged_config(&cli.global)?;
    if let Command::Report = cli.command {
        return cmd_report(&cfg);
    }
    // Nothing is written until the merged config is known to be valid.
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let echo = cfg.out_dir.join("config.toml");
    fs::write(&echo, cfg.to_toml_string()).map_err(io_err(&echo))?;
    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Eval { policy } => cmd_eval(&cfg, policy, cli.global.no_retrain),
        Command::Traditional => cmd_traditional(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Report => unreachable!(),
    }
}

/// Config file, then flag overrides, then validation.
fn merged_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &g.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(jobs) = g.jobs {
        cfg.jobs = jobs;
    }
    if let Some(sigma) = g.sigma {
        cfg.task.sigma = sigma;
    }
    if let Some(grid) = &g.sigma_grid {
        cfg.sweep.sigma_grid = grid.clone();
    }
    if let Some(n) = g.episodes {
        cfg.episodes = n;
        cfg.sweep.episodes_per_cell = n;
    }
    if let Some(n) = g.total_steps {
        cfg.ppo.total_steps = n;
    }
    if g.traditional_only {
        cfg.sweep.masa = false;
    }
    if g.masa_only {
        cfg.sweep.traditional = false;
    }
    if cfg.episodes == 0 {
        return Err(Failure::Config("episodes must be positive".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn save_policy(policy: &TrainedPolicy, path: &Path) -> Result<(), Failure> {
    write_file(path, |w| policy.to_writer(w).map_err(std::io::Error::other))
}

/// Trains on `env`, saving the artifact even when it misses the threshold.
fn train_and_save(cfg: &RunConfig, env: &EnvConfig) -> Result<(TrainedPolicy, bool), Failure> {
    eprintln!(
        "training {} steps on robot {} (sigma {})",
        cfg.ppo.total_steps,
        &env.model.digest()[..12],
        fmt6(cfg.task.sigma)
    );
    let mut rng = derive_stream(cfg.seed, TRAIN_STREAM);
    let (policy, ok) = match train(env, &cfg.ppo, &mut rng) {
        Ok(p) => (p, true),
        Err(PpoError::TrainingFailed { policy, .. }) => (*policy, false),
        Err(e) => return Err(Failure::Task(format!("training failed: {e}"))),
    };
    save_policy(&policy, &cfg.out_dir.join("policy.json"))?;
    write_file(&cfg.out_dir.join("curves.csv"), |w| {
        writeln!(w, "step,mean_reward")?;
        for c in &policy.curve {
            writeln!(w, "{},{}", c.step, fmt6(c.mean_reward))?;
        }
        Ok(())
    })?;
    eprintln!("mean final distance {} m", fmt6(policy.final_mean_distance));
    Ok((policy, ok))
}

fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let (policy, ok) = train_and_save(cfg, &cfg.env_config())?;
    println!("success {}", policy.success);
    println!("mean_final_distance {}", fmt6(policy.final_mean_distance));
    if ok {
        Ok(())
    } else {
        Err(Failure::Task(format!(
            "training missed the success threshold: mean final distance {} m > {} m",
            fmt6(policy.final_mean_distance),
            fmt6(cfg.ppo.success_threshold)
        )))
    }
}

fn load_policy(path: &Path) -> Result<TrainedPolicy, Failure> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    TrainedPolicy::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn cmd_eval(cfg: &RunConfig, policy_path: Option<PathBuf>, no_retrain: bool) -> Result<(), Failure> {
    let env = cfg.env_config();
    let path = policy_path.unwrap_or_else(|| cfg.out_dir.join("policy.json"));
    let mut policy = load_policy(&path)?;
    if check_model_digest(&policy, &env.model) == DigestStatus::Stale {
        if no_retrain {
            return Err(Failure::Task(format!(
                "stale model: policy was trained for robot {} but the robot is now {}",
                policy.model_digest,
                env.model.digest()
            )));
        }
        eprintln!("stale model: robot changed since training, retraining");
        let (fresh, ok) = train_and_save(cfg, &env)?;
        if !ok {
            return Err(Failure::Task(format!(
                "retraining missed the success threshold: mean final distance {} m",
                fmt6(fresh.final_mean_distance)
            )));
        }
        policy = fresh;
    }
    let mut rng = derive_stream(cfg.seed, EVAL_STREAM);
    let stats = evaluate(&policy, &env, cfg.episodes, cfg.sweep.tail_window, &mut rng)
        .map_err(|e| Failure::Task(e.to_string()))?;
    write_file(&cfg.out_dir.join("eval_episodes.csv"), |w| {
        writeln!(w, "episode,final_distance,tail_distance")?;
        for (i, (f, t)) in stats.final_distances.iter().zip(&stats.tail_distances).enumerate() {
            writeln!(w, "{i},{},{}", fmt6(*f), fmt6(*t))?;
        }
        Ok(())
    })?;
    write_file(&cfg.out_dir.join("eval_trace.csv"), |w| write_trace_csv(w, &stats.traces[0].rows))?;
    let summary = format!(
        "episodes {}\nmean_final_distance {}\nstd_final_distance {}\nrmse {}\n",
        cfg.episodes,
        fmt6(stats.mean_final_distance),
        fmt6(stats.std_final_distance),
        fmt6(stats.rmse)
    );
    let stats_path = cfg.out_dir.join("eval.txt");
    fs::write(&stats_path, &summary).map_err(io_err(&stats_path))?;
    print!("{summary}");
    Ok(())
}

fn cmd_traditional(cfg: &RunConfig) -> Result<(), Failure> {
    // The classical pipeline senses exactly and suffers noise on its commands.
    let env = EnvConfig {
        obs_noise: NoiseModel::none(),
        ..cfg.env_config()
    };
    if !is_reachable(&env.model, &env.goal) {
        return Err(Failure::Config("goal is outside the workspace".into()));
    }
    let ctrl = NoiseModel::uniform(cfg.task.sigma, cfg.seed).map_err(|e| Failure::Config(e.to_string()))?;
    let mut rng = derive_stream(cfg.seed, TRADITIONAL_STREAM);
    let mut finals = Vec::with_capacity(cfg.episodes);
    let mut first = None;
    for ep in 0..cfg.episodes {
        let log = run_traditional(&env, &ctrl, &cfg.classical, &mut rng).map_err(|e| Failure::Task(e.to_string()))?;
        finals.push(log.final_distance);
        if ep == 0 {
            first = Some(log);
        }
        if (ep + 1) % 1000 == 0 {
            eprintln!("{} / {} episodes", ep + 1, cfg.episodes);
        }
    }
    let first = first.expect("episodes > 0");
    write_file(&cfg.out_dir.join("traditional_trace.csv"), |w| {
        write_trace_csv(w, &first.trace_rows())
    })?;
    write_file(&cfg.out_dir.join("traditional_episodes.csv"), |w| {
        writeln!(w, "episode,final_distance")?;
        for (i, d) in finals.iter().enumerate() {
            writeln!(w, "{i},{}", fmt6(*d))?;
        }
        Ok(())
    })?;
    let rmse = rmse(&finals).expect("episodes > 0");
    println!("episodes {}", cfg.episodes);
    println!("final_distance {}", fmt6(first.final_distance));
    println!("rmse {}", fmt6(rmse));
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), Failure> {
    eprintln!(
        "sweeping {} sigma values x {} seeds, {} episodes per cell",
        cfg.sweep.sigma_grid.len(),
        cfg.sweep.seeds.len(),
        cfg.sweep.episodes_per_cell
    );
    let report = run_sweep(&cfg.sweep, &cfg.env_config(), &cfg.ppo, &cfg.classical, cfg.jobs)
        .map_err(|e| Failure::Config(e.to_string()))?;
    export_reports(&report, &cfg.out_dir).map_err(|e| Failure::Io(e.to_string()))?;
    print!("{}", report.table.render_aligned());
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    let any_value = report
        .table
        .rows
        .iter()
        .any(|r| r.masa.rmse().is_some() || r.traditional.rmse().is_some());
    if any_value {
        Ok(())
    } else {
        Err(Failure::Task("every cell of the sweep failed".into()))
    }
}

fn parse_cell(text: &str) -> Cell {
    match text {
        "skipped" => Cell::Skipped,
        other => match other.parse() {
            Ok(rmse) => Cell::Value {
                rmse,
                below_threshold: 0,
            },
            Err(_) => Cell::Failed(other.to_string()),
        },
    }
}

fn cmd_report(cfg: &RunConfig) -> Result<(), Failure> {
    let path = cfg.out_dir.join("table.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut lines = text.lines();
    if lines.next() != Some(BenchmarkTable::CSV_HEADER) {
        return Err(Failure::Io(format!("{}: not a sweep table", path.display())));
    }
    let mut table = BenchmarkTable::default();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Failure::Io(format!("{}: line {}: bad number {s:?}", path.display(), i + 2)))
        };
        if cols.len() != 4 {
            return Err(Failure::Io(format!("{}: line {}: expected 4 columns", path.display(), i + 2)));
        }
        table.rows.push(BenchmarkRow {
            sigma_rad: num(cols[0])?,
            sigma_deg: num(cols[1])?,
            masa: parse_cell(cols[2]),
            traditional: parse_cell(cols[3]),
            masa_per_seed: Vec::new(),
            traditional_per_seed: Vec::new(),
        });
    }
    print!("{}", table.render_aligned());
    Ok(())
}
