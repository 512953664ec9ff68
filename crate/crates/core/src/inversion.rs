//! Recovery of the Robin coefficient from boundary velocity measurements.
//!
//! The driver is a projected Gauss-Newton iteration with Levenberg-Marquardt
//! damping. Each turn linearizes the measurement map at the current iterate,
//! solves the damped normal equations, clamps the candidate into the
//! admissible box, and accepts or rejects it by the gain ratio between the
//! realized and the model-predicted misfit decrease.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::assemble::{AssembledOperators, TraceOperator};
use crate::data::ProblemData;
use crate::error::{Error, Result};
use crate::forward::{extract_trace, solve_forward_with, MeasurementTrace, TimeGrid};
use crate::params::{AdmissibleSet, RobinCoefficient};
use crate::saddle::SaddleSweep;
use crate::sensitivity::{basis_directions, jacobian_columns_with};

/// Step acceptance threshold on the iterate displacement.
const STEP_TOL: f64 = 1e-8;
/// Gradient stop, relative to the starting gradient.
const GRAD_REL_TOL: f64 = 1e-10;
/// Initial damping as a fraction of the largest Gram diagonal.
const LAMBDA_INIT_FRACTION: f64 = 1e-3;
/// Damping escalations attempted before declaring the system singular.
const MAX_ESCALATIONS: usize = 10;
/// Gain ratio above which the damping is cut tenfold. The aggressive cut
/// matters: the weakest measurable modes sit some seventeen orders of
/// magnitude below the strongest, and the damping has to pass below them
/// within the iteration budget once the model proves trustworthy.
const GAIN_VERY_GOOD: f64 = 0.75;
/// Gain ratio below which an accepted step still raises the damping.
const GAIN_POOR: f64 = 0.25;

/// Tikhonov-style weight added to the damping diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    /// Pure Gauss-Newton.
    None,
    /// A fixed absolute weight.
    Fixed { weight: f64 },
    /// A weight proportional to the mean Gram diagonal, so that it scales
    /// with the data like the normal equations themselves do.
    ScaledTrace { factor: f64 },
}

impl Regularization {
    pub fn weight(&self, gram: &DMatrix<f64>) -> f64 {
        match *self {
            Regularization::None => 0.0,
            Regularization::Fixed { weight } => weight,
            Regularization::ScaledTrace { factor } => factor * gram.trace() / gram.nrows() as f64,
        }
    }
}

/// All the fixed ingredients of one inverse problem.
pub struct InverseProblem<'a> {
    pub ops: &'a AssembledOperators,
    pub data: &'a ProblemData,
    pub grid: &'a TimeGrid,
    pub trace_op: &'a TraceOperator,
    pub measured: MeasurementTrace,
    pub admissible: AdmissibleSet,
    pub regularization: Regularization,
    pub max_iterations: usize,
}

/// Half the squared weighted misfit at `q`.
pub fn misfit(problem: &InverseProblem, q: &RobinCoefficient) -> Result<f64> {
    let sweep = SaddleSweep::new(problem.ops, q, problem.grid)?;
    let traj = solve_forward_with(&sweep, problem.ops, problem.data)?;
    let trace = extract_trace(&traj, problem.trace_op, problem.grid)?;
    let d = problem.measured.distance(problem.trace_op, &trace)?;
    Ok(0.5 * d * d)
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Misfit after this turn (unchanged when the step was rejected).
    pub misfit: f64,
    pub gradient_norm: f64,
    /// Norm of the projected step that was attempted.
    pub step_norm: f64,
    /// Damping in effect when the step was computed.
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SmallStep,
    SmallGradient,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub recovered: RobinCoefficient,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub reason: StopReason,
    pub final_misfit: f64,
    pub initial_gradient: f64,
}

impl InversionResult {
    /// Turns consumed, rejected trials included.
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Computes the damped Gauss-Newton step, escalating the damping tenfold
/// while the solve fails to produce a finite vector.
fn solve_damped(
    jac: &crate::sensitivity::TraceJacobian,
    op: &TraceOperator,
    residual: &MeasurementTrace,
    damping: f64,
) -> Result<DVector<f64>> {
    let mut d = damping.max(f64::MIN_POSITIVE);
    for _ in 0..=MAX_ESCALATIONS {
        match jac.damped_step(op, residual, d) {
            Ok(x) => return Ok(x),
            Err(Error::NonFinite { .. }) => d *= 10.0,
            Err(other) => return Err(other),
        }
    }
    Err(Error::SingularNormalEquations {
        escalations: MAX_ESCALATIONS,
    })
}

/// Projected Gauss-Newton iteration from `q0`.
///
/// Damping follows the gain ratio between realized and predicted misfit
/// decrease: a near-exact model cuts it tenfold, a poor or rejected step
/// raises it. The iteration stops when the projected step or the relative
/// gradient falls under its tolerance, or after `max_iterations` turns.
pub fn gauss_newton_solve(
    problem: &InverseProblem,
    q0: &RobinCoefficient,
) -> Result<InversionResult> {
    let ops = problem.ops;
    let op = problem.trace_op;
    let mut q = problem.admissible.project(q0);
    let dirs = basis_directions(&q);

    let sweep = SaddleSweep::new(ops, &q, problem.grid)?;
    let fwd = solve_forward_with(&sweep, ops, problem.data)?;
    let trace = extract_trace(&fwd, op, problem.grid)?;
    let mut jac = jacobian_columns_with(&sweep, ops, &fwd, op, &dirs)?;
    let mut residual = problem.measured.sub(&trace)?;
    let mut f_curr = {
        let n = residual.norm(op);
        0.5 * n * n
    };
    let mut g = jac.weighted_rhs(op, &residual)?;
    let initial_gradient = g.norm();

    let mut history = Vec::new();
    if initial_gradient == 0.0 {
        return Ok(InversionResult {
            recovered: q,
            history,
            converged: true,
            reason: StopReason::SmallGradient,
            final_misfit: f_curr,
            initial_gradient,
        });
    }

    let max_diag = (0..jac.gram.nrows())
        .map(|i| jac.gram[(i, i)])
        .fold(0.0, f64::max);
    let mut lambda = LAMBDA_INIT_FRACTION * max_diag.max(f64::MIN_POSITIVE);
    let mut converged = false;
    let mut reason = StopReason::MaxIterations;

    for iter in 1..=problem.max_iterations {
        let reg = problem.regularization.weight(&jac.gram);
        let delta = solve_damped(&jac, op, &residual, lambda + reg)?;
        let candidate = RobinCoefficient {
            basis: q.basis.clone(),
            coeffs: &q.coeffs + &delta,
        };
        let q_trial = problem.admissible.project(&candidate);
        let p = &q_trial.coeffs - &q.coeffs;
        let step_norm = p.norm();
        // Model decrease of the actual (projected) step.
        let predicted = g.dot(&p) - 0.5 * (&jac.gram * &p).dot(&p);

        let sweep_t = SaddleSweep::new(ops, &q_trial, problem.grid)?;
        let fwd_t = solve_forward_with(&sweep_t, ops, problem.data)?;
        let trace_t = extract_trace(&fwd_t, op, problem.grid)?;
        let r_t = problem.measured.sub(&trace_t)?;
        let f_t = {
            let n = r_t.norm(op);
            0.5 * n * n
        };
        let rho = if predicted > 0.0 {
            (f_curr - f_t) / predicted
        } else {
            -1.0
        };
        let accepted = rho > 0.0 && f_t.is_finite();

        if accepted {
            q = q_trial;
            jac = jacobian_columns_with(&sweep_t, ops, &fwd_t, op, &dirs)?;
            residual = r_t;
            f_curr = f_t;
            g = jac.weighted_rhs(op, &residual)?;
            if rho > GAIN_VERY_GOOD {
                lambda = (lambda / 10.0).max(f64::MIN_POSITIVE);
            } else if rho < GAIN_POOR {
                lambda *= 3.0;
            }
        } else {
            lambda *= 10.0;
        }

        history.push(IterationRecord {
            iter,
            misfit: f_curr,
            gradient_norm: g.norm(),
            step_norm,
            lambda,
            accepted,
        });

        // A vanishing projected step means the box or the model pins the
        // iterate down, whether or not the trial was taken.
        if step_norm <= STEP_TOL {
            converged = true;
            reason = StopReason::SmallStep;
            break;
        }
        if accepted && g.norm() <= GRAD_REL_TOL * initial_gradient {
            converged = true;
            reason = StopReason::SmallGradient;
            break;
        }
    }

    Ok(InversionResult {
        recovered: q,
        history,
        converged,
        reason,
        final_misfit: f_curr,
        initial_gradient,
    })
}

/// Perturbs a measurement with centered Gaussian noise rescaled so the
/// measurement-norm ratio `||noise|| / ||trace||` equals `level` exactly.
/// Deterministic in `seed`; zero level (or an all-zero trace) returns the
/// input unchanged.
pub fn add_noise(
    trace: &MeasurementTrace,
    op: &TraceOperator,
    level: f64,
    seed: u64,
) -> MeasurementTrace {
    let base = trace.norm(op);
    if level == 0.0 || base == 0.0 {
        return trace.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit deviation");
    let noise = MeasurementTrace {
        values: trace
            .values
            .iter()
            .map(|v| v.map(|_| normal.sample(&mut rng)))
            .collect(),
        weights: trace.weights.clone(),
    };
    let raw = noise.norm(op);
    if raw == 0.0 {
        return trace.clone();
    }
    let alpha = level * base / raw;
    MeasurementTrace {
        values: trace
            .values
            .iter()
            .zip(&noise.values)
            .map(|(v, n)| v + n * alpha)
            .collect(),
        weights: trace.weights.clone(),
    }
}

/// Restricts a measurement taken on a refined mesh and a finer time grid
/// onto a coarse trace operator. Coarse trace nodes are matched to fine
/// ones by position; the fine node count per step must be a multiple of
/// the coarse one in time.
pub fn transfer_trace(
    fine_trace: &MeasurementTrace,
    fine_op: &TraceOperator,
    coarse_op: &TraceOperator,
    coarse_grid: &TimeGrid,
) -> Result<MeasurementTrace> {
    let fine_steps = fine_trace.values.len().saturating_sub(1);
    if fine_steps == 0 || fine_steps % coarse_grid.n_steps != 0 {
        return Err(Error::GridMismatch(format!(
            "cannot restrict {fine_steps} fine steps onto {} coarse steps",
            coarse_grid.n_steps
        )));
    }
    let stride = fine_steps / coarse_grid.n_steps;

    let quantize = |p: [f64; 2]| -> (i64, i64) {
        ((p[0] / 1e-12).round() as i64, (p[1] / 1e-12).round() as i64)
    };
    let fine_index: HashMap<(i64, i64), usize> = fine_op
        .positions
        .iter()
        .enumerate()
        .map(|(i, &p)| (quantize(p), i))
        .collect();
    let mapping: Vec<usize> = coarse_op
        .positions
        .iter()
        .map(|&p| {
            fine_index.get(&quantize(p)).copied().ok_or_else(|| {
                Error::GridMismatch(format!(
                    "coarse trace node ({}, {}) has no fine counterpart",
                    p[0], p[1]
                ))
            })
        })
        .collect::<Result<_>>()?;

    let values = fine_trace
        .values
        .iter()
        .step_by(stride)
        .map(|fine| {
            DVector::from_fn(2 * mapping.len(), |i, _| fine[2 * mapping[i / 2] + i % 2])
        })
        .collect();
    Ok(MeasurementTrace {
        values,
        weights: coarse_grid.trapezoid_weights(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{assemble_static, trace_matrix};
    use crate::forward::solve_forward;
    use crate::mesh::build_channel_mesh;
    use crate::params::RobinBasis;
    use crate::spaces::{DirichletPolicy, FunctionSpaces};
    use std::sync::Arc;

    struct Setup {
        ops: AssembledOperators,
        data: ProblemData,
        grid: TimeGrid,
        op: TraceOperator,
        basis: Arc<RobinBasis>,
        set: AdmissibleSet,
    }

    fn setup(nx: usize, ny: usize, n_steps: usize, amplitude: f64) -> Setup {
        let mesh = build_channel_mesh(2.0, 1.0, nx, ny, 2).unwrap();
        let spaces = Arc::new(
            FunctionSpaces::new(Arc::new(mesh), DirichletPolicy::NoSlipLateral).unwrap(),
        );
        let ops = assemble_static(&spaces);
        let grid = TimeGrid::new(1.0, n_steps).unwrap();
        let basis = Arc::new(RobinBasis::from_mesh(&spaces.mesh, 2, grid.t_final).unwrap());
        let op = trace_matrix(&spaces, (0.0, 1.0)).unwrap();
        let data = ProblemData::standard(2.0, 1.0, grid.t_final, amplitude, 0.5 * amplitude);
        Setup {
            ops,
            data,
            grid,
            op,
            basis,
            set: AdmissibleSet::new(0.5, 5.0).unwrap(),
        }
    }

    /// Knots on the coarse mesh, solve on its refinement. Keeping the
    /// parameter grid coarser than the solve mesh is what makes recovery
    /// well posed enough for the iteration to close the loop.
    fn refined_setup(nx: usize, ny: usize, n_steps: usize, amplitude: f64) -> Setup {
        let coarse = build_channel_mesh(2.0, 1.0, nx, ny, 2).unwrap();
        let grid = TimeGrid::new(1.0, n_steps).unwrap();
        let basis = Arc::new(RobinBasis::from_mesh(&coarse, 2, grid.t_final).unwrap());
        let spaces = Arc::new(
            FunctionSpaces::new(Arc::new(coarse.refine()), DirichletPolicy::NoSlipLateral)
                .unwrap(),
        );
        let ops = assemble_static(&spaces);
        let op = trace_matrix(&spaces, (0.0, 1.0)).unwrap();
        let data = ProblemData::standard(2.0, 1.0, grid.t_final, amplitude, 0.5 * amplitude);
        Setup {
            ops,
            data,
            grid,
            op,
            basis,
            set: AdmissibleSet::new(0.5, 5.0).unwrap(),
        }
    }

    /// In-box target that vanishes at the outlet corners, where no-slip
    /// kills the velocity and with it all sensitivity.
    fn smooth_target(s: &Setup) -> RobinCoefficient {
        RobinCoefficient::interpolate(s.basis.clone(), |t, seg, arc| {
            let g = (seg as f64 - 1.0) * 0.5 + arc;
            2.75 + (0.9 + 0.4 * t) * (std::f64::consts::PI * g).sin()
        })
    }

    fn synthetic(s: &Setup, q: &RobinCoefficient) -> MeasurementTrace {
        let traj = solve_forward(&s.ops, &s.data, q, &s.grid).unwrap();
        extract_trace(&traj, &s.op, &s.grid).unwrap()
    }

    fn problem<'a>(s: &'a Setup, measured: MeasurementTrace) -> InverseProblem<'a> {
        InverseProblem {
            ops: &s.ops,
            data: &s.data,
            grid: &s.grid,
            trace_op: &s.op,
            measured,
            admissible: s.set,
            regularization: Regularization::None,
            max_iterations: 50,
        }
    }

    #[test]
    fn misfit_vanishes_at_the_truth() {
        let s = setup(4, 2, 3, 1.0);
        let q_true = s.set.sample(&s.basis, 1, 13).remove(0);
        let p = problem(&s, synthetic(&s, &q_true));
        assert!(misfit(&p, &q_true).unwrap() < 1e-28);
        let elsewhere = s.set.midpoint(s.basis.clone());
        assert!(misfit(&p, &elsewhere).unwrap() > 1e-12);
    }

    #[test]
    fn starting_at_the_truth_stops_immediately() {
        let s = setup(4, 2, 3, 1.0);
        let q_true = s.set.sample(&s.basis, 1, 17).remove(0);
        let p = problem(&s, synthetic(&s, &q_true));
        let res = gauss_newton_solve(&p, &q_true).unwrap();
        assert!(res.converged);
        assert!(res.iterations() <= 1, "took {} turns", res.iterations());
        assert!(res.recovered.linf_distance(&q_true).unwrap() < 1e-12);
    }

    #[test]
    fn recovers_a_smooth_coefficient_from_clean_data() {
        let s = refined_setup(4, 2, 6, 1.0);
        let q_true = smooth_target(&s);
        assert!(s.set.contains(&q_true));
        let mut p = problem(&s, synthetic(&s, &q_true));
        p.max_iterations = 25;
        let q0 = s.set.midpoint(s.basis.clone());
        let res = gauss_newton_solve(&p, &q0).unwrap();

        let rel = res.recovered.linf_distance(&q_true).unwrap()
            / q_true.coeffs.amax().max(1e-300);
        assert!(res.converged, "stopped with {:?}", res.reason);
        assert!(res.iterations() <= 20, "took {} turns", res.iterations());
        assert!(rel <= 1e-3, "relative error {rel:.3e} after {:?}", res.reason);
        assert!(res.final_misfit < 1e-20);
    }

    #[test]
    fn accepted_misfits_never_increase() {
        let s = setup(8, 4, 6, 1.0);
        let q_true = s.set.sample(&s.basis, 1, 29).remove(0);
        let p = problem(&s, synthetic(&s, &q_true));
        let res = gauss_newton_solve(&p, &s.set.midpoint(s.basis.clone())).unwrap();

        let mut last = f64::INFINITY;
        for rec in &res.history {
            assert!(rec.misfit <= last + 1e-30, "misfit rose at turn {}", rec.iter);
            if rec.accepted {
                last = rec.misfit;
            }
            assert!(rec.lambda.is_finite() && rec.lambda > 0.0);
        }
    }

    /// Scaling all the data leaves the iteration path and the recovered
    /// coefficient unchanged: the damping seed is relative to the Gram
    /// diagonal and every accept/reject ratio is dimensionless. Misfits pick
    /// up the factor alpha^2 exactly, modulo rounding of the scaled inputs.
    #[test]
    fn recovery_is_invariant_under_data_scaling() {
        let alpha = 1e3;
        let s1 = refined_setup(4, 2, 6, 1.0);
        let s2 = refined_setup(4, 2, 6, alpha);
        let q_true = smooth_target(&s1);
        let q0 = s1.set.midpoint(s1.basis.clone());

        let m1 = synthetic(&s1, &q_true);
        let m2 = synthetic(&s2, &q_true);
        let r1 = gauss_newton_solve(&problem(&s1, m1), &q0).unwrap();
        let r2 = gauss_newton_solve(&problem(&s2, m2), &q0).unwrap();

        assert_eq!(r1.iterations(), r2.iterations());
        assert_eq!(r1.reason, r2.reason);
        for (h1, h2) in r1.history.iter().zip(&r2.history) {
            assert_eq!(h1.accepted, h2.accepted, "turn {} diverged", h1.iter);
            // Skip turns at the roundoff floor, where alpha^2 scaling of a
            // misfit near eps^2 cannot survive.
            if h1.misfit > 1e-22 {
                let ratio = h2.misfit / (alpha * alpha * h1.misfit);
                assert!(
                    (ratio - 1.0).abs() < 1e-3,
                    "turn {}: misfit ratio off by {:.3e}",
                    h1.iter,
                    ratio - 1.0
                );
            }
        }
        assert!(r1.recovered.linf_distance(&r2.recovered).unwrap() < 1e-8);
    }

    #[test]
    fn scaled_regularization_tracks_the_gram_trace() {
        let gram = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(Regularization::None.weight(&gram), 0.0);
        assert_eq!(Regularization::Fixed { weight: 0.25 }.weight(&gram), 0.25);
        assert_eq!(
            Regularization::ScaledTrace { factor: 0.5 }.weight(&gram),
            1.0
        );
    }

    #[test]
    fn damped_solve_escalates_then_reports_singularity() {
        let s = setup(4, 2, 3, 1.0);
        let q = s.set.midpoint(s.basis.clone());
        let sweep = SaddleSweep::new(&s.ops, &q, &s.grid).unwrap();
        let fwd = solve_forward_with(&sweep, &s.ops, &s.data).unwrap();
        let jac =
            jacobian_columns_with(&sweep, &s.ops, &fwd, &s.op, &basis_directions(&q)).unwrap();
        let clean = extract_trace(&fwd, &s.op, &s.grid).unwrap();

        let x = solve_damped(&jac, &s.op, &clean, 1e-10).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));

        // No amount of damping repairs a non-finite residual.
        let mut poisoned = clean.clone();
        poisoned.values[1][0] = f64::NAN;
        match solve_damped(&jac, &s.op, &poisoned, 1e-10) {
            Err(Error::SingularNormalEquations { escalations }) => {
                assert_eq!(escalations, MAX_ESCALATIONS)
            }
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn noise_is_deterministic_with_exact_relative_norm() {
        let s = setup(4, 2, 3, 1.0);
        let q = s.set.midpoint(s.basis.clone());
        let clean = synthetic(&s, &q);

        let a = add_noise(&clean, &s.op, 1e-2, 7);
        let b = add_noise(&clean, &s.op, 1e-2, 7);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x, y);
        }
        let c = add_noise(&clean, &s.op, 1e-2, 8);
        assert!(a.values[1] != c.values[1]);
        assert_eq!(add_noise(&clean, &s.op, 0.0, 7).values, clean.values);

        let ratio = a.sub(&clean).unwrap().norm(&s.op) / clean.norm(&s.op);
        assert!(
            (ratio - 1e-2).abs() <= 1e-12 * 1e-2,
            "noise ratio {ratio:.15e}"
        );
    }

    /// The injected perturbation is the exact residual at the truth, so the
    /// misfit there is half the squared scaled noise norm.
    #[test]
    fn noise_misfit_at_the_truth_is_half_the_squared_level() {
        let s = setup(4, 2, 3, 1.0);
        let q_true = s.set.sample(&s.basis, 1, 41).remove(0);
        let clean = synthetic(&s, &q_true);
        let level = 3e-3;
        let p = problem(&s, add_noise(&clean, &s.op, level, 11));
        let expected = 0.5 * (level * clean.norm(&s.op)).powi(2);
        let got = misfit(&p, &q_true).unwrap();
        assert!(
            (got - expected).abs() <= 1e-10 * expected,
            "misfit {got:.6e} vs {expected:.6e}"
        );
    }

    /// Mild noise perturbs the recovery but cannot push it far: the iterate
    /// fits the data down to the injected noise floor and the coefficient
    /// error stays bounded by the (large) amplification of the weak modes.
    #[test]
    fn noisy_recovery_stays_near_the_truth() {
        let s = refined_setup(4, 2, 6, 1.0);
        let q_true = smooth_target(&s);
        let clean = synthetic(&s, &q_true);
        let level = 1e-7;
        let floor = 0.5 * (level * clean.norm(&s.op)).powi(2);
        let mut p = problem(&s, add_noise(&clean, &s.op, level, 5));
        p.regularization = Regularization::ScaledTrace { factor: 1e-6 };
        p.max_iterations = 25;
        let res = gauss_newton_solve(&p, &s.set.midpoint(s.basis.clone())).unwrap();
        let rel = res.recovered.linf_distance(&q_true).unwrap()
            / q_true.coeffs.amax().max(1e-300);
        assert!(rel < 0.05, "relative error {rel:.3e} under mild noise");
        assert!(
            res.final_misfit < 2.0 * floor,
            "misfit {:.3e} never reached the noise floor {floor:.3e}",
            res.final_misfit
        );
    }

    #[test]
    fn trace_transfer_restricts_a_refined_measurement() {
        let coarse_mesh = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap();
        let fine_mesh = coarse_mesh.refine();
        let coarse = Arc::new(
            FunctionSpaces::new(Arc::new(coarse_mesh), DirichletPolicy::NoSlipLateral).unwrap(),
        );
        let fine = Arc::new(
            FunctionSpaces::new(Arc::new(fine_mesh), DirichletPolicy::NoSlipLateral).unwrap(),
        );
        let coarse_op = trace_matrix(&coarse, (0.0, 1.0)).unwrap();
        let fine_op = trace_matrix(&fine, (0.0, 1.0)).unwrap();
        let coarse_grid = TimeGrid::new(1.0, 2).unwrap();
        let fine_grid = TimeGrid::new(1.0, 4).unwrap();

        // A field linear in y and t restricts exactly.
        let field = |t: f64, p: [f64; 2]| [t + 2.0 * p[1], 1.0 - p[1]];
        let fine_values = (0..=fine_grid.n_steps)
            .map(|n| {
                let t = fine_grid.time(n);
                DVector::from_fn(fine_op.dim(), |i, _| field(t, fine_op.positions[i / 2])[i % 2])
            })
            .collect();
        let fine_trace = MeasurementTrace {
            values: fine_values,
            weights: fine_grid.trapezoid_weights(),
        };

        let restricted = transfer_trace(&fine_trace, &fine_op, &coarse_op, &coarse_grid).unwrap();
        assert_eq!(restricted.values.len(), coarse_grid.n_steps + 1);
        for (n, vals) in restricted.values.iter().enumerate() {
            let t = coarse_grid.time(n);
            for i in 0..coarse_op.dim() {
                let expect = field(t, coarse_op.positions[i / 2])[i % 2];
                assert!((vals[i] - expect).abs() < 1e-14);
            }
        }

        let bad_grid = TimeGrid::new(1.0, 3).unwrap();
        assert!(transfer_trace(&fine_trace, &fine_op, &coarse_op, &bad_grid).is_err());
    }
}
