//! The forward problem: implicit Euler solves, boundary traces, and the
//! energy diagnostics behind the stability estimate.

use nalgebra::DVector;

use crate::assemble::{
    assemble_body_load, assemble_boundary_load, AssembledOperators, TraceOperator,
};
use crate::data::ProblemData;
use crate::error::{Error, Result};
use crate::params::RobinCoefficient;
use crate::quadrature::edge_rule_deg9;
use crate::saddle::SaddleSweep;
use crate::spaces::EdgeTrace;

/// Uniform time grid on `[0, t_final]` with `n_steps` implicit Euler steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<TimeGrid> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Config {
                key: "time.t_final".into(),
                message: format!("final time must be positive, got {t_final}"),
            });
        }
        if n_steps == 0 {
            return Err(Error::Config {
                key: "time.n_steps".into(),
                message: "need at least one time step".into(),
            });
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Time of node `n` in `0..=n_steps`.
    pub fn time(&self, n: usize) -> f64 {
        self.t_final * n as f64 / self.n_steps as f64
    }

    /// Trapezoid weights over the time nodes; they sum to `t_final`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps)
            .map(|n| {
                if n == 0 || n == self.n_steps {
                    0.5 * dt
                } else {
                    dt
                }
            })
            .collect()
    }
}

/// A discrete velocity/pressure trajectory.
///
/// `velocity[n]` is the full-dof velocity at time node `n`; `pressure[n-1]`
/// the pressure of step `n` (there is no initial pressure). `outlet_values`
/// caches the outlet-node velocities of every node, the only part of the
/// state that sensitivity loads revisit.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub velocity: Vec<DVector<f64>>,
    pub pressure: Vec<DVector<f64>>,
    pub outlet_values: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn n_steps(&self) -> usize {
        self.velocity.len() - 1
    }

    /// Verifies that the trajectory matches the operators and grid it is
    /// about to be combined with.
    pub fn check_compatible(&self, ops: &AssembledOperators, grid: &TimeGrid) -> Result<()> {
        if self.velocity.len() != grid.n_steps + 1 {
            return Err(Error::GridMismatch(format!(
                "trajectory has {} nodes, grid expects {}",
                self.velocity.len(),
                grid.n_steps + 1
            )));
        }
        if self.velocity[0].len() != ops.spaces.velocity_dim() {
            return Err(Error::GridMismatch(format!(
                "trajectory velocity dimension {} does not match the space ({})",
                self.velocity[0].len(),
                ops.spaces.velocity_dim()
            )));
        }
        Ok(())
    }

    /// Discrete `L^2(0,T; H^1)` norm: trapezoid in time of
    /// `u^T (Mv + A) u`.
    pub fn l2h1_norm(&self, ops: &AssembledOperators, grid: &TimeGrid) -> f64 {
        let weights = grid.trapezoid_weights();
        let mut acc = 0.0;
        for (u, w) in self.velocity.iter().zip(&weights) {
            acc += w * (ops.mass_v.quadratic_form(u, u) + ops.stiffness.quadratic_form(u, u));
        }
        acc.max(0.0).sqrt()
    }

    /// Largest relative divergence residual `||B u^n|| / (1 + ||u^n||)`
    /// over the computed steps.
    pub fn divergence_residual(&self, ops: &AssembledOperators) -> f64 {
        self.velocity
            .iter()
            .skip(1)
            .map(|u| ops.divergence.matvec(u).norm() / (1.0 + u.norm()))
            .fold(0.0, f64::max)
    }
}

/// Solves the forward problem for the coefficient `q`.
pub fn solve_forward(
    ops: &AssembledOperators,
    data: &ProblemData,
    q: &RobinCoefficient,
    grid: &TimeGrid,
) -> Result<StateTrajectory> {
    let sweep = SaddleSweep::new(ops, q, grid)?;
    solve_forward_with(&sweep, ops, data)
}

/// Forward solve reusing an existing factorization sweep.
pub fn solve_forward_with(
    sweep: &SaddleSweep,
    ops: &AssembledOperators,
    data: &ProblemData,
) -> Result<StateTrajectory> {
    let spaces = &ops.spaces;
    let u0 = spaces.interpolate_velocity(&*data.initial_velocity);
    sweep.march(ops, &u0, |_, t| {
        let mut load = assemble_boundary_load(
            spaces,
            t,
            Some(&*data.inlet_flux),
            Some(&*data.robin_load),
        );
        if let Some(f) = &data.body_force {
            load += assemble_body_load(spaces, t, &**f);
        }
        load
    })
}

/// A boundary velocity measurement: trace values at every time node with
/// their trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTrace {
    pub values: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl MeasurementTrace {
    pub fn check_compatible(&self, other: &MeasurementTrace) -> Result<()> {
        let ok = self.values.len() == other.values.len()
            && self.weights == other.weights
            && self
                .values
                .first()
                .zip(other.values.first())
                .map_or(true, |(a, b)| a.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::GridMismatch(
                "measurement traces live on different grids".into(),
            ))
        }
    }

    /// `L^2(0,T; L^2(Gamma))` norm.
    pub fn norm(&self, op: &TraceOperator) -> f64 {
        let mut acc = 0.0;
        for (v, w) in self.values.iter().zip(&self.weights) {
            acc += w * op.norm_sq(v);
        }
        acc.max(0.0).sqrt()
    }

    pub fn distance(&self, op: &TraceOperator, other: &MeasurementTrace) -> Result<f64> {
        Ok(self.sub(other)?.norm(op))
    }

    /// Weighted inner product against another trace.
    pub fn inner(&self, op: &TraceOperator, other: &MeasurementTrace) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for ((a, b), w) in self.values.iter().zip(&other.values).zip(&self.weights) {
            acc += w * (a.transpose() * &op.mass * b)[(0, 0)];
        }
        Ok(acc)
    }

    pub fn sub(&self, other: &MeasurementTrace) -> Result<MeasurementTrace> {
        self.check_compatible(other)?;
        Ok(MeasurementTrace {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            weights: self.weights.clone(),
        })
    }

    pub fn add_scaled(&self, other: &MeasurementTrace, s: f64) -> Result<MeasurementTrace> {
        self.check_compatible(other)?;
        Ok(MeasurementTrace {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
            weights: self.weights.clone(),
        })
    }

    pub fn scale(&self, s: f64) -> MeasurementTrace {
        MeasurementTrace {
            values: self.values.iter().map(|v| s * v).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Flattens the trace into one Euclidean vector whose plain 2-norm is
    /// the space-time norm: block `n` is `sqrt(w_n) L^T v_n` with `L` the
    /// boundary-mass Cholesky factor.
    pub fn weighted_stack(&self, op: &TraceOperator) -> DVector<f64> {
        let block = op.dim();
        let mut out = DVector::zeros(block * self.values.len());
        for (n, (v, &w)) in self.values.iter().zip(&self.weights).enumerate() {
            let mut b = op.chol_l.tr_mul(v);
            b *= w.max(0.0).sqrt();
            out.rows_mut(n * block, block).copy_from(&b);
        }
        out
    }
}

/// Extracts the measured boundary trace of a trajectory.
pub fn extract_trace(
    traj: &StateTrajectory,
    op: &TraceOperator,
    grid: &TimeGrid,
) -> Result<MeasurementTrace> {
    if traj.velocity.len() != grid.n_steps + 1 {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} nodes, grid expects {}",
            traj.velocity.len(),
            grid.n_steps + 1
        )));
    }
    Ok(MeasurementTrace {
        values: traj.velocity.iter().map(|u| op.extract(u)).collect(),
        weights: grid.trapezoid_weights(),
    })
}

/// Squared `L^2` norm of a data field over a list of wall edges at time `t`.
pub fn boundary_data_norm_sq(
    edges: &[EdgeTrace],
    f: &(dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync),
    t: f64,
) -> f64 {
    let rule = edge_rule_deg9();
    let mut acc = 0.0;
    for trace in edges {
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let v = f(t, trace.point(s));
            acc += w * trace.len * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    acc
}

/// Energy-estimate diagnostics: the ratio of the solution's
/// `L^2(0,T; H^1)` norm to the data norm, per coefficient.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyReport {
    pub ratios: Vec<f64>,
    pub solution_norms: Vec<f64>,
    pub data_norm: f64,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// `max_ratio / min_ratio`; near one when the constant is uniform in q.
    pub spread: f64,
}

/// Solves the forward problem for every coefficient and reports the energy
/// ratios. The data norm combines the initial velocity, the inlet flux, and
/// the Robin load in their natural norms.
pub fn verify_energy_estimate(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    qs: &[RobinCoefficient],
) -> Result<EnergyReport> {
    let spaces = &ops.spaces;
    let u0 = spaces.interpolate_velocity(&*data.initial_velocity);
    let mut data_norm_sq = ops.mass_v.quadratic_form(&u0, &u0);
    for (n, w) in grid.trapezoid_weights().iter().enumerate() {
        let t = grid.time(n);
        data_norm_sq += w * boundary_data_norm_sq(&spaces.inlet_edges, &*data.inlet_flux, t);
        data_norm_sq += w * boundary_data_norm_sq(&spaces.outlet_edges, &*data.robin_load, t);
    }
    let data_norm = data_norm_sq.max(0.0).sqrt();
    if data_norm < 1e-14 {
        return Err(Error::DegenerateRatio(
            "all data vanish; the energy ratio is undefined".into(),
        ));
    }

    let mut solution_norms = Vec::with_capacity(qs.len());
    for q in qs {
        let traj = solve_forward(ops, data, q, grid)?;
        solution_norms.push(traj.l2h1_norm(ops, grid));
    }
    let ratios: Vec<f64> = solution_norms.iter().map(|s| s / data_norm).collect();
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EnergyReport {
        ratios,
        solution_norms,
        data_norm,
        max_ratio,
        min_ratio,
        spread: max_ratio / min_ratio,
    })
}
