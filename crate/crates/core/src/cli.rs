//! The `robin-stokes` binary: subcommand dispatch and run artifacts.
//!
//! Every invocation resolves a configuration (file plus overrides), hashes
//! it into a run directory under `--out`, and writes its reports there.
//! Exit codes: 0 on success, 1 on solver failures, 2 on configuration
//! errors (clap reports usage errors with the same code).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::artifacts;
use crate::config::ExperimentConfig;
use crate::convergence::{spatial_study, temporal_study};
use crate::error::Result;
use crate::forward::{extract_trace, solve_forward, verify_energy_estimate};
use crate::inversion::{gauss_newton_solve, InverseProblem, IterationRecord, StopReason};
use crate::params::CoefficientExport;
use crate::probe::{
    data_bound, estimate_constant, hypothesis_check, identifiability_scan, PROBE_SCALES,
};
use crate::sensitivity::{dt_continuity_test, taylor_remainder_test, ContinuityReport, TaylorReport};

#[derive(Debug, Parser)]
#[command(
    name = "robin-stokes",
    version,
    about = "Transient Stokes flow in a channel with a Robin outlet: \
             forward solves, trace sensitivities, coefficient recovery, \
             and stability probes"
)]
pub struct Cli {
    /// TOML experiment configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Base directory for run artifacts; each run lands in a subdirectory
    /// named by a hash of its resolved configuration.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,

    /// Rayon thread count (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Overrides every section seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward problem, record the boundary trace, and sample
    /// the energy estimate over the admissible set.
    Forward,
    /// Check the derivative of the coefficient-to-trace map on random
    /// base points and directions.
    Sensitivity,
    /// Recover the Robin coefficient from a boundary measurement.
    Invert {
        /// Measured trace CSV to invert; defaults to a synthetic
        /// measurement of the configured target coefficient.
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Sweep coefficient pairs for the empirical stability constant and
    /// scan fresh pairs against the identifiability floor.
    ProbeStability,
    /// Verify the hypotheses behind the stability estimate on sampled
    /// coefficients.
    CheckHypotheses,
    /// Run the spatial and temporal convergence studies.
    Convergence,
}

/// Parses the process arguments and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("info"),
    )
    .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            log::error!("{err}");
            if err.is_config_error() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        if pool.is_err() {
            log::debug!("rayon pool already initialized; --threads ignored");
        }
    }

    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::parse(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.forward.energy_seed = seed;
        config.sensitivity.seed = seed;
        config.inversion.noise_seed = seed;
        config.probe.seed = seed;
    }

    let dir = artifacts::prepare_out_dir(&cli.out, &config)?;
    log::info!("artifacts land in {}", dir.display());
    let outcome = dispatch(cli, &config, &dir);
    if let Err(err) = &outcome {
        artifacts::write_error(&dir, err);
    }
    outcome
}

fn dispatch(cli: &Cli, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    match &cli.command {
        Command::Forward => run_forward(config, dir),
        Command::Sensitivity => run_sensitivity(config, dir),
        Command::Invert { data } => run_invert(config, dir, data.as_deref()),
        Command::ProbeStability => run_probe_stability(config, dir),
        Command::CheckHypotheses => run_check_hypotheses(config, dir),
        Command::Convergence => run_convergence(config, dir),
    }
}

#[derive(Debug, Serialize)]
struct ForwardReport {
    n_steps: usize,
    dt: f64,
    velocity_dim: usize,
    pressure_dim: usize,
    trace_dim: usize,
    l2h1_norm: f64,
    divergence_residual: f64,
    trace_norm: f64,
    data_bound: f64,
    coefficient: CoefficientExport,
}

#[derive(Debug, Serialize)]
struct Snapshot {
    step: usize,
    time: f64,
    /// Full velocity dof vector, `(ux, uy)` interleaved per node.
    velocity: Vec<f64>,
    /// Vertex pressures; empty at step zero (implicit Euler has no
    /// initial pressure).
    pressure: Vec<f64>,
}

fn run_forward(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let e = config.build()?;
    let q = e.realize_admissible(&config.forward.coefficient, "forward.coefficient")?;
    let traj = solve_forward(&e.ops, &e.data, &q, &e.grid)?;
    let trace = extract_trace(&traj, &e.trace_op, &e.grid)?;
    artifacts::write_trace_csv(&dir.join("trace.csv"), &e.grid, &trace)?;

    let report = ForwardReport {
        n_steps: e.grid.n_steps,
        dt: e.grid.dt(),
        velocity_dim: e.ops.spaces.velocity_dim(),
        pressure_dim: e.ops.spaces.pressure_dim(),
        trace_dim: e.trace_op.dim(),
        l2h1_norm: traj.l2h1_norm(&e.ops, &e.grid),
        divergence_residual: traj.divergence_residual(&e.ops),
        trace_norm: trace.norm(&e.trace_op),
        data_bound: data_bound(&e.ops, &e.data, &e.grid),
        coefficient: q.export(),
    };
    artifacts::write_json(&dir.join("forward_report.json"), &report)?;
    artifacts::write_json(&dir.join("mesh.json"), &artifacts::mesh_report(&e.ops.spaces))?;

    let samples = e.set.sample(
        &e.basis,
        config.forward.energy_samples,
        config.forward.energy_seed,
    );
    let energy = verify_energy_estimate(&e.ops, &e.data, &e.grid, &samples)?;
    artifacts::write_json(&dir.join("energy_report.json"), &energy)?;

    if config.forward.snapshot_every > 0 {
        for step in (0..=e.grid.n_steps).step_by(config.forward.snapshot_every) {
            let snapshot = Snapshot {
                step,
                time: e.grid.time(step),
                velocity: traj.velocity[step].iter().copied().collect(),
                pressure: if step == 0 {
                    vec![]
                } else {
                    traj.pressure[step - 1].iter().copied().collect()
                },
            };
            let name = format!("snapshot_{step:05}.json");
            artifacts::write_json(&dir.join(name), &snapshot)?;
        }
    }
    log::info!(
        "forward solve done: {} steps, trace norm {:.6e}",
        e.grid.n_steps,
        report.trace_norm
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SensitivityPair {
    index: usize,
    taylor: TaylorReport,
    continuity: ContinuityReport,
}

#[derive(Debug, Serialize)]
struct SensitivityReport {
    seed: u64,
    scales: Vec<f64>,
    pairs: Vec<SensitivityPair>,
}

fn run_sensitivity(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let e = config.build()?;
    let n = config.sensitivity.n_pairs;
    // Base points and far points drawn from the box; their difference is
    // an admissible direction, so every probed scale stays in the box.
    let pool = e.set.sample(&e.basis, 2 * n, config.sensitivity.seed);
    let mut pairs = Vec::with_capacity(n);
    for (index, pair) in pool.chunks_exact(2).enumerate() {
        let q = &pair[0];
        let h = pair[1].add_scaled(q, -1.0)?;
        let taylor = taylor_remainder_test(&e.ops, &e.data, &e.grid, &e.trace_op, q, &h, &PROBE_SCALES)?;
        let continuity = dt_continuity_test(&e.ops, &e.data, &e.grid, &e.trace_op, q, &h, &PROBE_SCALES)?;
        log::info!(
            "pair {index}: taylor slope {:.3}, first order {:.3}, continuity {:.3}",
            taylor.remainder_slope,
            taylor.first_order_slope,
            continuity.slope
        );
        pairs.push(SensitivityPair { index, taylor, continuity });
    }
    let report = SensitivityReport {
        seed: config.sensitivity.seed,
        scales: PROBE_SCALES.to_vec(),
        pairs,
    };
    artifacts::write_json(&dir.join("sensitivity_report.json"), &report)
}

#[derive(Debug, Serialize)]
struct InversionReport {
    converged: bool,
    reason: StopReason,
    iterations: usize,
    final_misfit: f64,
    initial_gradient: f64,
    noise_level: f64,
    /// Sup-norm error relative to the configured target; absent when the
    /// measurement came from an external file.
    relative_error: Option<f64>,
    recovered: CoefficientExport,
    target: Option<CoefficientExport>,
    history: Vec<IterationRecord>,
}

fn run_invert(config: &ExperimentConfig, dir: &Path, data: Option<&Path>) -> Result<()> {
    let e = config.build()?;
    let target = match data {
        Some(_) => None,
        None => Some(e.realize_admissible(&config.inversion.target, "inversion.target")?),
    };
    let measured = match (data, &target) {
        (Some(path), _) => artifacts::read_trace_csv(path, &e.trace_op, &e.grid)?,
        (None, Some(q_true)) => e.synthesize_measurement(q_true)?,
        (None, None) => unreachable!(),
    };
    artifacts::write_trace_csv(&dir.join("measured_trace.csv"), &e.grid, &measured)?;

    let q0 = e.realize_admissible(&config.inversion.init, "inversion.init")?;
    let problem = InverseProblem {
        ops: &e.ops,
        data: &e.data,
        grid: &e.grid,
        trace_op: &e.trace_op,
        measured,
        admissible: e.set,
        regularization: config.inversion.regularization.clone(),
        max_iterations: config.inversion.max_iterations,
    };
    let result = gauss_newton_solve(&problem, &q0)?;
    artifacts::write_iterations_csv(&dir.join("iterations.csv"), &result.history)?;

    let relative_error = match &target {
        Some(q_true) => {
            let gap = result.recovered.linf_distance(q_true)?;
            Some(gap / q_true.coeffs.amax().max(1e-300))
        }
        None => None,
    };
    if let Some(rel) = relative_error {
        log::info!(
            "recovered in {} turns, relative error {rel:.3e}",
            result.iterations()
        );
    } else {
        log::info!(
            "recovered in {} turns, final misfit {:.3e}",
            result.iterations(),
            result.final_misfit
        );
    }
    let report = InversionReport {
        converged: result.converged,
        reason: result.reason,
        iterations: result.iterations(),
        final_misfit: result.final_misfit,
        initial_gradient: result.initial_gradient,
        noise_level: config.inversion.noise_level,
        relative_error,
        recovered: result.recovered.export(),
        target: target.as_ref().map(|q| q.export()),
        history: result.history,
    };
    artifacts::write_json(&dir.join("inversion_report.json"), &report)
}

fn run_probe_stability(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let e = config.build()?;
    let stability = estimate_constant(
        &e.ops,
        &e.data,
        &e.grid,
        &e.trace_op,
        e.set,
        &e.basis,
        config.probe.n_pairs,
        config.probe.seed,
    )?;
    artifacts::write_pairs_csv(&dir.join("pairs.csv"), &stability.pairs)?;
    artifacts::write_json(&dir.join("stability_report.json"), &stability)?;
    log::info!(
        "stability constant {:.4} over {} pairs (saturation {:.2}%)",
        stability.c_emp,
        stability.pairs.len(),
        100.0 * stability.saturation
    );

    // The floor scan draws a fresh pool so the constant is not tested
    // against the very pairs that produced it.
    let scan = identifiability_scan(
        &e.ops,
        &e.data,
        &e.grid,
        &e.trace_op,
        e.set,
        &e.basis,
        config.probe.scan_pairs,
        config.probe.seed.wrapping_add(1),
        stability.c_emp,
    )?;
    if !scan.violations.is_empty() {
        log::warn!(
            "{} of {} scanned pairs fell below the identifiability floor",
            scan.violations.len(),
            scan.evaluated
        );
    }
    artifacts::write_json(&dir.join("scan_report.json"), &scan)
}

fn run_check_hypotheses(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let e = config.build()?;
    let report = hypothesis_check(
        &e.ops,
        &e.data,
        &e.grid,
        &e.trace_op,
        e.set,
        &e.basis,
        config.probe.n_samples,
        config.probe.seed,
    )?;
    log::info!(
        "hypotheses on {} samples: injective {}, C1 {}, derivative injective {}",
        report.samples.len(),
        report.injective,
        report.continuously_differentiable,
        report.derivative_injective
    );
    artifacts::write_json(&dir.join("hypothesis_report.json"), &report)
}

fn run_convergence(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let spatial = spatial_study(config)?;
    artifacts::write_spatial_csv(&dir.join("spatial.csv"), &spatial)?;
    artifacts::write_json(&dir.join("spatial_report.json"), &spatial)?;
    log::info!(
        "spatial rates: l2 {:.3}, h1 {:.3}, pressure {:.3}, trace {:.3}",
        spatial.velocity_l2_rate,
        spatial.velocity_h1_rate,
        spatial.pressure_l2_rate,
        spatial.trace_rate
    );

    let temporal = temporal_study(config)?;
    artifacts::write_temporal_csv(&dir.join("temporal.csv"), &temporal)?;
    artifacts::write_json(&dir.join("temporal_report.json"), &temporal)?;
    log::info!("temporal rate: {:.3}", temporal.rate);
    Ok(())
}
