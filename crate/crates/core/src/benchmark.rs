//! Noise sweep comparing the classical and learned pipelines, report export
//! and the stale-model check that triggers retraining.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classical::{run_traditional, ClassicalConfig, ClassicalError};
use crate::env::EnvConfig;
use crate::format::{fmt6, round_sig};
use crate::kinematics::{forward_kinematics, JointState, RobotModel, NUM_JOINTS};
use crate::noise::{derive_stream, NoiseModel};
use crate::ppo::{evaluate, train, CurvePoint, PpoConfig, PpoError, TrainedPolicy};

/// The noise levels (rad) of the reference comparison table.
pub const TABLE_SIGMAS: [f64; 8] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5];

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("rmse of an empty distance list")]
    EmptyInput,
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Root mean square of `distances`.
pub fn rmse(distances: &[f64]) -> Result<f64, BenchmarkError> {
    if distances.is_empty() {
        return Err(BenchmarkError::EmptyInput);
    }
    Ok((distances.iter().map(|d| d * d).sum::<f64>() / distances.len() as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma_grid: Vec<f64>,
    pub episodes_per_cell: usize,
    pub seeds: Vec<u64>,
    /// Train once without noise and reuse that policy at every σ.
    pub reuse_policy: bool,
    /// Steps at the end of each learned-policy episode averaged into its distance.
    pub tail_window: usize,
    pub traditional: bool,
    pub masa: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma_grid: TABLE_SIGMAS.to_vec(),
            episodes_per_cell: 100,
            seeds: vec![0, 1, 2],
            reuse_policy: false,
            tail_window: 10,
            traditional: true,
            masa: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let bad = |m: &str| Err(BenchmarkError::InvalidConfig(m.into()));
        if self.sigma_grid.is_empty() {
            return bad("sigma_grid is empty");
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma_grid values must be finite and non-negative");
        }
        if self.sigma_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sigma_grid must be strictly increasing");
        }
        if self.episodes_per_cell == 0 {
            return bad("episodes_per_cell must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if !(self.traditional || self.masa) {
            return bad("both pipelines are disabled");
        }
        Ok(())
    }
}

/// Outcome of one pipeline at one σ, aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Median RMSE over seeds. `below_threshold` counts seeds whose training
    /// missed the success threshold but still produced a policy.
    Value { rmse: f64, below_threshold: usize },
    Failed(String),
    Skipped,
}

impl Cell {
    pub fn rmse(&self) -> Option<f64> {
        match self {
            Cell::Value { rmse, .. } => Some(*rmse),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Value { rmse, .. } => fmt6(*rmse),
            Cell::Failed(_) => "failed".into(),
            Cell::Skipped => "skipped".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub sigma_rad: f64,
    /// Degrees, rounded to three significant figures.
    pub sigma_deg: f64,
    pub masa: Cell,
    pub traditional: Cell,
    pub masa_per_seed: Vec<Option<f64>>,
    pub traditional_per_seed: Vec<Option<f64>>,
}

impl BenchmarkRow {
    /// `Some(true)` when the learned policy has the lower RMSE.
    pub fn masa_wins(&self) -> Option<bool> {
        Some(self.masa.rmse()? < self.traditional.rmse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

pub fn sigma_to_degrees(sigma_rad: f64) -> f64 {
    round_sig(sigma_rad.to_degrees(), 3)
}

impl BenchmarkTable {
    pub const CSV_HEADER: &'static str = "sigma_rad,sigma_deg,rmse_masa,rmse_traditional";

    pub fn csv_line(row: &BenchmarkRow) -> String {
        format!(
            "{},{},{},{}",
            fmt6(row.sigma_rad),
            fmt6(row.sigma_deg),
            row.masa.render(),
            row.traditional.render()
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            writeln!(w, "{}", Self::csv_line(row))?;
        }
        Ok(())
    }

    /// Fixed-width text rendering for terminals.
    pub fn render_aligned(&self) -> String {
        let header = ["sigma [rad]", "sigma [deg]", "RMSE MASA", "RMSE traditional", "best"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                let best = match r.masa_wins() {
                    Some(true) => "masa",
                    Some(false) => "traditional",
                    None => "-",
                };
                [
                    fmt6(r.sigma_rad),
                    fmt6(r.sigma_deg),
                    r.masa.render(),
                    r.traditional.render(),
                    best.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for cols in &body {
            for (w, c) in widths.iter_mut().zip(cols) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cols: &[&str]| -> String {
            cols.iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        out.push_str(&line(&header));
        out.push('\n');
        for cols in &body {
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            out.push_str(&line(&refs));
            out.push('\n');
        }
        out
    }
}

/// One end-effector sample of an example trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub pipeline: &'static str,
    pub sigma: f64,
    pub episode: usize,
    pub step: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub sigma: f64,
    pub step: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalPose {
    pub pipeline: &'static str,
    pub sigma: f64,
    pub q: [f64; NUM_JOINTS],
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub table: BenchmarkTable,
    pub traces: Vec<TracePoint>,
    pub curves: Vec<CurveRecord>,
    pub final_poses: Vec<FinalPose>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigestStatus {
    Ok,
    Stale,
}

pub fn check_model_digest(policy: &TrainedPolicy, model: &RobotModel) -> DigestStatus {
    if policy.model_digest == model.digest() {
        DigestStatus::Ok
    } else {
        DigestStatus::Stale
    }
}

/// Result of the classical pipeline at one (σ, seed).
#[derive(Debug, Clone)]
struct TraditionalRun {
    rmse: f64,
    example_trace: Vec<(f64, f64)>,
    final_q: JointState,
}

fn traditional_cell(
    env: &EnvConfig,
    classical: &ClassicalConfig,
    sigma: f64,
    episodes: usize,
    seed: u64,
    sigma_index: usize,
) -> Result<TraditionalRun, ClassicalError> {
    let cfg = EnvConfig {
        obs_noise: NoiseModel::none(),
        ..env.clone()
    };
    let ctrl = NoiseModel::uniform(sigma, seed).expect("sweep sigma validated");
    let mut rng = derive_stream(seed, cell_stream(sigma_index, 0));
    let mut finals = Vec::with_capacity(episodes);
    let mut example_trace = Vec::new();
    let mut final_q = JointState::HOME;
    for ep in 0..episodes {
        let log = run_traditional(&cfg, &ctrl, classical, &mut rng)?;
        if ep == 0 {
            example_trace = log.ee_trace.iter().map(|p| (p.x, p.y)).collect();
            final_q = *log.realized.last().expect("non-empty trajectory");
        }
        finals.push(log.final_distance);
    }
    Ok(TraditionalRun {
        rmse: rmse(&finals).expect("episodes > 0"),
        example_trace,
        final_q,
    })
}

#[derive(Debug, Clone)]
struct MasaRun {
    rmse: f64,
    below_threshold: bool,
    example_trace: Vec<(f64, f64)>,
    final_q: JointState,
    curve: Vec<CurvePoint>,
}

fn cell_stream(sigma_index: usize, role: u64) -> u64 {
    (sigma_index as u64) << 8 | role
}

fn train_policy(env: &EnvConfig, ppo: &PpoConfig, seed: u64, stream: u64) -> Result<(TrainedPolicy, bool), PpoError> {
    let mut rng = derive_stream(seed, stream);
    match train(env, ppo, &mut rng) {
        Ok(p) => Ok((p, false)),
        Err(PpoError::TrainingFailed { policy, .. }) => Ok((*policy, true)),
        Err(e) => Err(e),
    }
}

fn masa_cell(
    env: &EnvConfig,
    policy: &TrainedPolicy,
    below_threshold: bool,
    sigma: f64,
    sweep: &SweepConfig,
    seed: u64,
    sigma_index: usize,
) -> Result<MasaRun, PpoError> {
    let cfg = env.with_noise_sigma(sigma);
    let mut rng = derive_stream(seed, cell_stream(sigma_index, 2));
    let stats = evaluate(policy, &cfg, sweep.episodes_per_cell, sweep.tail_window, &mut rng)?;
    let first = &stats.traces[0].rows;
    let last = first.last().expect("episode has rows");
    Ok(MasaRun {
        rmse: stats.rmse,
        below_threshold,
        example_trace: first.iter().map(|r| (r.ee.x, r.ee.y)).collect(),
        final_q: JointState(last.q_true),
        curve: policy.curve.clone(),
    })
}

/// Runs `jobs` closures over `0..n` on up to `workers` threads; results land
/// in index order, so the output does not depend on scheduling.
fn run_indexed<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, f: F) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

/// Sweeps σ over both pipelines with identical goal, σ and episode counts.
/// Cells are independent jobs seeded from (seed, σ index), so the report is
/// the same for any `jobs`.
pub fn run_sweep(
    sweep: &SweepConfig,
    env: &EnvConfig,
    ppo: &PpoConfig,
    classical: &ClassicalConfig,
    jobs: usize,
) -> Result<SweepReport, BenchmarkError> {
    sweep.validate()?;
    env.validate().map_err(|e| BenchmarkError::InvalidConfig(e.to_string()))?;
    ppo.validate().map_err(|e| BenchmarkError::InvalidConfig(e.to_string()))?;
    let n_sigma = sweep.sigma_grid.len();
    let n_seed = sweep.seeds.len();

    // Policies shared across σ when reuse_policy is set, one per seed.
    let shared: Vec<Option<Result<(TrainedPolicy, bool), PpoError>>> = if sweep.masa && sweep.reuse_policy {
        let noiseless = env.with_noise_sigma(0.0);
        run_indexed(n_seed, jobs, |k| Some(train_policy(&noiseless, ppo, sweep.seeds[k], u64::MAX >> 8)))
    } else {
        vec![None; n_seed]
    };

    type CellOut = (
        Option<Result<TraditionalRun, ClassicalError>>,
        Option<Result<MasaRun, PpoError>>,
    );
    let cells: Vec<CellOut> = run_indexed(n_sigma * n_seed, jobs, |job| {
        let (si, ki) = (job / n_seed, job % n_seed);
        let sigma = sweep.sigma_grid[si];
        let seed = sweep.seeds[ki];
        let trad = sweep
            .traditional
            .then(|| traditional_cell(env, classical, sigma, sweep.episodes_per_cell, seed, si));
        let masa = sweep.masa.then(|| {
            let trained = match &shared[ki] {
                Some(r) => r.clone(),
                None => train_policy(&env.with_noise_sigma(sigma), ppo, seed, cell_stream(si, 1)),
            };
            let (policy, below) = trained?;
            masa_cell(env, &policy, below, sigma, sweep, seed, si)
        });
        (trad, masa)
    });

    let mut report = SweepReport::default();
    for (si, &sigma) in sweep.sigma_grid.iter().enumerate() {
        let row_cells = &cells[si * n_seed..(si + 1) * n_seed];
        let mut trad_vals = Vec::new();
        let mut masa_vals = Vec::new();
        let mut trad_err = None;
        let mut masa_err = None;
        let mut below = 0;
        for (ki, (trad, masa)) in row_cells.iter().enumerate() {
            let seed = sweep.seeds[ki];
            trad_vals.push(match trad {
                Some(Ok(run)) => {
                    if ki == 0 {
                        push_trace(&mut report.traces, "traditional", sigma, &run.example_trace);
                        report.final_poses.push(final_pose(env, "traditional", sigma, run.final_q));
                    }
                    Some(run.rmse)
                }
                Some(Err(e)) => {
                    report.notes.push(format!("traditional sigma={} seed={seed}: {e}", fmt6(sigma)));
                    trad_err = Some(e.to_string());
                    None
                }
                None => None,
            });
            masa_vals.push(match masa {
                Some(Ok(run)) => {
                    if run.below_threshold {
                        below += 1;
                        report.notes.push(format!(
                            "masa sigma={} seed={seed}: training finished above the success threshold",
                            fmt6(sigma)
                        ));
                    }
                    if ki == 0 {
                        push_trace(&mut report.traces, "masa", sigma, &run.example_trace);
                        report.final_poses.push(final_pose(env, "masa", sigma, run.final_q));
                        report.curves.extend(run.curve.iter().map(|c| CurveRecord {
                            sigma,
                            step: c.step,
                            mean_reward: c.mean_reward,
                        }));
                    }
                    Some(run.rmse)
                }
                Some(Err(e)) => {
                    report.notes.push(format!("masa sigma={} seed={seed}: {e}", fmt6(sigma)));
                    masa_err = Some(e.to_string());
                    None
                }
                None => None,
            });
        }
        let aggregate = |enabled: bool, vals: &[Option<f64>], err: Option<String>, below: usize| {
            if !enabled {
                return Cell::Skipped;
            }
            let ok: Vec<f64> = vals.iter().flatten().copied().collect();
            match median(&ok) {
                Some(rmse) => Cell::Value {
                    rmse,
                    below_threshold: below,
                },
                None => Cell::Failed(err.unwrap_or_else(|| "no result".into())),
            }
        };
        report.table.rows.push(BenchmarkRow {
            sigma_rad: sigma,
            sigma_deg: sigma_to_degrees(sigma),
            masa: aggregate(sweep.masa, &masa_vals, masa_err, below),
            traditional: aggregate(sweep.traditional, &trad_vals, trad_err, 0),
            masa_per_seed: masa_vals,
            traditional_per_seed: trad_vals,
        });
    }
    Ok(report)
}

fn push_trace(out: &mut Vec<TracePoint>, pipeline: &'static str, sigma: f64, trace: &[(f64, f64)]) {
    out.extend(trace.iter().enumerate().map(|(step, &(x, y))| TracePoint {
        pipeline,
        sigma,
        episode: 0,
        step,
        x,
        y,
    }));
}

fn final_pose(env: &EnvConfig, pipeline: &'static str, sigma: f64, q: JointState) -> FinalPose {
    let p = forward_kinematics(&env.model, &q);
    FinalPose {
        pipeline,
        sigma,
        q: q.0,
        x: p.x,
        y: p.y,
    }
}

pub fn write_traces_csv<W: Write>(mut w: W, traces: &[TracePoint]) -> io::Result<()> {
    writeln!(w, "pipeline,sigma,episode,step,x,y")?;
    for t in traces {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.pipeline,
            fmt6(t.sigma),
            t.episode,
            t.step,
            fmt6(t.x),
            fmt6(t.y)
        )?;
    }
    Ok(())
}

pub fn write_curves_csv<W: Write>(mut w: W, curves: &[CurveRecord]) -> io::Result<()> {
    writeln!(w, "sigma,step,mean_reward")?;
    for c in curves {
        writeln!(w, "{},{},{}", fmt6(c.sigma), c.step, fmt6(c.mean_reward))?;
    }
    Ok(())
}

pub fn write_final_poses_csv<W: Write>(mut w: W, poses: &[FinalPose]) -> io::Result<()> {
    writeln!(w, "pipeline,sigma,q0,q1,q2,x,y")?;
    for p in poses {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.pipeline,
            fmt6(p.sigma),
            fmt6(p.q[0]),
            fmt6(p.q[1]),
            fmt6(p.q[2]),
            fmt6(p.x),
            fmt6(p.y)
        )?;
    }
    Ok(())
}

pub fn summary_text(report: &SweepReport) -> String {
    let mut s = String::from("Noise sweep: RMSE of end-effector distance to goal [m]\n\n");
    s.push_str(&report.table.render_aligned());
    let decided: Vec<bool> = report.table.rows.iter().filter_map(BenchmarkRow::masa_wins).collect();
    if !decided.is_empty() {
        let wins = decided.iter().filter(|w| **w).count();
        s.push_str(&format!("\nlearned policy best in {wins} of {} rows\n", decided.len()));
    }
    if !report.notes.is_empty() {
        s.push_str("\nnotes:\n");
        for n in &report.notes {
            s.push_str(&format!("  {n}\n"));
        }
    }
    s
}

/// Writes table.csv, traces.csv, curves.csv, final_poses.csv and summary.txt.
pub fn export_reports(report: &SweepReport, out_dir: &Path) -> Result<Vec<PathBuf>, BenchmarkError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&mut dyn Write) -> io::Result<()>| -> io::Result<()> {
        let path = out_dir.join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        written.push(path);
        Ok(())
    };
    emit("table.csv", &|w| report.table.write_csv(w))?;
    emit("traces.csv", &|w| write_traces_csv(w, &report.traces))?;
    emit("curves.csv", &|w| write_curves_csv(w, &report.curves))?;
    emit("final_poses.csv", &|w| write_final_poses_csv(w, &report.final_poses))?;
    emit("summary.txt", &|w| w.write_all(summary_text(report).as_bytes()))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_closed_forms() {
        assert_eq!(rmse(&[0.25; 7]).unwrap(), 0.25);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[]), Err(BenchmarkError::EmptyInput)));
    }

    #[test]
    fn degree_column_matches_reference() {
        let expected = [0.0, 0.573, 1.15, 2.86, 5.73, 11.5, 17.2, 28.6];
        for (s, d) in TABLE_SIGMAS.iter().zip(expected) {
            assert_eq!(fmt6(sigma_to_degrees(*s)), fmt6(d));
        }
    }

    #[test]
    fn sweep_config_validation() {
        assert!(SweepConfig::default().validate().is_ok());
        let bad = SweepConfig {
            sigma_grid: vec![0.1, 0.1],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            sigma_grid: vec![],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            sigma_grid: vec![-0.1, 0.2],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn one_row_csv() {
        let table = BenchmarkTable {
            rows: vec![BenchmarkRow {
                sigma_rad: 0.1,
                sigma_deg: sigma_to_degrees(0.1),
                masa: Cell::Value {
                    rmse: 0.0078,
                    below_threshold: 0,
                },
                traditional: Cell::Value {
                    rmse: 0.0757341,
                    below_threshold: 0,
                },
                masa_per_seed: vec![],
                traditional_per_seed: vec![],
            }],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sigma_rad,sigma_deg,rmse_masa,rmse_traditional\n0.1,5.73,0.0078,0.0757341\n"
        );
    }

    #[test]
    fn failed_cells_render_as_sentinel() {
        let row = BenchmarkRow {
            sigma_rad: 0.5,
            sigma_deg: 28.6,
            masa: Cell::Failed("diverged".into()),
            traditional: Cell::Skipped,
            masa_per_seed: vec![None],
            traditional_per_seed: vec![None],
        };
        assert_eq!(BenchmarkTable::csv_line(&row), "0.5,28.6,failed,skipped");
        assert_eq!(row.masa_wins(), None);
    }

    #[test]
    fn empty_traces_write_header_only() {
        let mut buf = Vec::new();
        write_traces_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "pipeline,sigma,episode,step,x,y\n");
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn indexed_runner_keeps_order() {
        let out = run_indexed(10, 3, |i| i * i);
        assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }
}
