//! Empirical stability probes for the coefficient-to-trace map.
//!
//! Recovery of the outlet coefficient rests on a chain of structural facts:
//! distinct coefficients produce distinct boundary traces, the map is
//! continuously differentiable, and its derivative is injective on the
//! parameter space. This module measures the one quantity that makes the
//! chain quantitative: the worst observed ratio of sup-norm coefficient
//! distance to space-time trace distance over the admissible box.
//!
//! Any finite sample only bounds that constant from below. The sweep
//! therefore mixes uniform pairs (global geometry) with small-perturbation
//! pairs (local linearized regime) and adds deterministic pairs aligned with
//! the weakest singular direction of the midpoint linearization, the
//! expected near-maximizer. Every random draw is seeded and the seed is
//! recorded in the report.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::{AssembledOperators, TraceOperator};
use crate::data::ProblemData;
use crate::error::{Error, Result};
use crate::forward::{boundary_data_norm_sq, extract_trace, solve_forward, TimeGrid};
use crate::params::{AdmissibleSet, RobinBasis, RobinCoefficient};
use crate::sensitivity::{
    assemble_jacobian, dt_continuity_test, taylor_remainder_test, TraceJacobian,
};

/// Slack on the identifiability floor: sampled trace distances may sit a
/// little under `gap / C_emp` because the constant is itself sampled.
pub const FLOOR_TOLERANCE: f64 = 0.05;
/// Sup-norm size of the deterministic single-direction pairs.
pub const BUMP_SCALE: f64 = 1e-3;
/// Singular value ratio below which a linearization counts as degenerate.
/// Healthy setups sit orders of magnitude above this even though they are
/// badly conditioned.
pub const SINGULAR_REL_TOL: f64 = 1e-12;
/// Scale ladder shared by the differentiability and continuity studies.
pub const PROBE_SCALES: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
/// Acceptance window for the Taylor remainder slope (exponent 2).
pub const TAYLOR_SLOPE_RANGE: (f64, f64) = (1.8, 2.2);
/// Acceptance window for the first-order difference slope (exponent 1).
pub const FIRST_ORDER_SLOPE_RANGE: (f64, f64) = (0.9, 1.1);
/// Acceptance window for the derivative continuity slope (exponent 1).
pub const CONTINUITY_SLOPE_RANGE: (f64, f64) = (0.8, 1.2);

/// How a probed pair was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Both ends drawn uniformly from the box.
    Random,
    /// Uniform base point plus a random shift of moderate size.
    Perturbation,
    /// Box midpoint plus one scaled basis direction.
    Bump,
    /// Box midpoint shifted along the weakest singular direction.
    WeakestDirection,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Random => "random",
            PairKind::Perturbation => "perturbation",
            PairKind::Bump => "bump",
            PairKind::WeakestDirection => "weakest_direction",
        }
    }
}

/// One evaluated pair of the stability sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PairRow {
    pub index: usize,
    pub kind: PairKind,
    /// Sup-norm distance of the coefficients.
    pub coefficient_distance: f64,
    /// Space-time trace distance of the two forward solutions.
    pub trace_distance: f64,
    /// `coefficient_distance / trace_distance`.
    pub ratio: f64,
}

/// Prefix maximum of the random sweep after `n_pairs` pairs.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthPoint {
    pub n_pairs: usize,
    pub c_emp: f64,
}

/// First-order consistency of one bump pair against the midpoint Jacobian.
#[derive(Debug, Clone, Serialize)]
pub struct BumpCheck {
    pub direction: usize,
    pub predicted_ratio: f64,
    pub measured_ratio: f64,
    pub relative_error: f64,
}

/// Outcome of [`estimate_constant`]: the sampled stability constant and the
/// evidence behind it. `c_emp` is a lower bound of the true constant; finite
/// sampling on a fixed discretization cannot certify more.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub n_random_pairs: usize,
    pub pairs: Vec<PairRow>,
    /// Largest ratio over every pair, deterministic ones included.
    pub c_emp: f64,
    /// Largest ratio over the seeded random sweep alone.
    pub c_emp_random: f64,
    /// Ratio of the weakest-singular-direction pair.
    pub weakest_ratio: f64,
    /// Prefix maxima of the random sweep at doubling checkpoints.
    pub growth: Vec<GrowthPoint>,
    /// `|C(n) - C(n/2)| / C(n/2)` over the random sweep; small once the
    /// sampling has saturated.
    pub saturation: f64,
    /// Smallest trace distance over the random sweep.
    pub min_trace_distance: f64,
    /// Per-direction first-order consistency at the midpoint.
    pub bump_checks: Vec<BumpCheck>,
    pub max_bump_error: f64,
    /// Smallest Jacobian singular value at the midpoint, then at the first
    /// sampled base points.
    pub smallest_singular_values: Vec<f64>,
    /// `||u0|| + ||g||`: the data bound the stability constant depends on.
    pub data_bound_m1: f64,
}

/// The stability quotient of one pair: sup-norm coefficient distance over
/// space-time trace distance of the corresponding forward solutions.
///
/// A pair closer than 1e-14 has no meaningful quotient and is rejected. A
/// zero trace distance at a positive coefficient gap is returned as an
/// identifiability violation so that sweeps can record it as a finding.
pub fn lipschitz_ratio(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    q1: &RobinCoefficient,
    q2: &RobinCoefficient,
) -> Result<f64> {
    let row = pair_row(ops, data, grid, op, 0, PairKind::Random, q1, q2)?;
    if row.trace_distance == 0.0 {
        return Err(Error::IdentifiabilityViolation {
            gap: row.coefficient_distance,
            distance: 0.0,
        });
    }
    Ok(row.ratio)
}

fn pair_row(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    index: usize,
    kind: PairKind,
    q1: &RobinCoefficient,
    q2: &RobinCoefficient,
) -> Result<PairRow> {
    let gap = q1.linf_distance(q2)?;
    if gap <= 1e-14 {
        return Err(Error::DegenerateRatio(format!(
            "pair {index} is only {gap:.3e} apart; the stability quotient needs a distinct pair"
        )));
    }
    let t1 = extract_trace(&solve_forward(ops, data, q1, grid)?, op, grid)?;
    let t2 = extract_trace(&solve_forward(ops, data, q2, grid)?, op, grid)?;
    let dist = t1.distance(op, &t2)?;
    Ok(PairRow {
        index,
        kind,
        coefficient_distance: gap,
        trace_distance: dist,
        ratio: gap / dist,
    })
}

/// A direction with unit sup-norm and iid signed entries.
fn random_direction(basis: &Arc<RobinBasis>, rng: &mut ChaCha8Rng) -> RobinCoefficient {
    let mut coeffs = DVector::from_fn(basis.dim(), |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let peak = coeffs.amax();
    if peak > 0.0 {
        coeffs /= peak;
    } else {
        coeffs[0] = 1.0;
    }
    RobinCoefficient {
        basis: basis.clone(),
        coeffs,
    }
}

/// Samples the admissible box and reports the largest stability quotient
/// found, together with deterministic near-worst pairs derived from the
/// midpoint linearization. See [`StabilityReport`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_constant(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    set: AdmissibleSet,
    basis: &Arc<RobinBasis>,
    n_pairs: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if n_pairs == 0 {
        return Err(Error::Config {
            key: "probe.n_pairs".into(),
            message: "the sweep needs at least one pair".into(),
        });
    }

    // The random sweep: even pairs probe the global geometry of the box,
    // odd ones the local regime around a random base point. The shift sizes
    // stay above the bump scale so that the first-order consistency budget
    // applies exactly to the deterministic pairs below.
    let pool = set.sample(basis, 2 * n_pairs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut specs: Vec<(PairKind, RobinCoefficient, RobinCoefficient)> =
        Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let q1 = pool[2 * i].clone();
        if i % 2 == 0 {
            specs.push((PairKind::Random, q1, pool[2 * i + 1].clone()));
        } else {
            let dir = random_direction(basis, &mut rng);
            let span = (0.1f64 / (3.0 * BUMP_SCALE)).ln();
            let delta = 3.0 * BUMP_SCALE * (span * rng.random::<f64>()).exp();
            let q2 = set.project(&q1.add_scaled(&dir, delta)?);
            specs.push((PairKind::Perturbation, q1, q2));
        }
    }
    let n_random = specs.len();

    // Deterministic pairs at the midpoint: one bump per basis direction and
    // one along the weakest singular direction of the linearization there.
    let q_mid = set.midpoint(basis.clone());
    let (_, jac_mid) = assemble_jacobian(ops, data, &q_mid, grid, op)?;
    let m = basis.dim();
    for j in 0..m {
        let mut coeffs = DVector::zeros(m);
        coeffs[j] = 1.0;
        let dir = RobinCoefficient {
            basis: basis.clone(),
            coeffs,
        };
        specs.push((PairKind::Bump, q_mid.clone(), q_mid.add_scaled(&dir, BUMP_SCALE)?));
    }
    let weakest = {
        let mut coeffs = jac_mid.weakest_direction();
        coeffs /= coeffs.amax();
        RobinCoefficient {
            basis: basis.clone(),
            coeffs,
        }
    };
    specs.push((
        PairKind::WeakestDirection,
        q_mid.clone(),
        set.project(&q_mid.add_scaled(&weakest, BUMP_SCALE)?),
    ));

    let pairs: Vec<PairRow> = specs
        .par_iter()
        .enumerate()
        .map(|(i, (kind, q1, q2))| pair_row(ops, data, grid, op, i, *kind, q1, q2))
        .collect::<Result<_>>()?;
    for row in &pairs {
        if !(row.ratio.is_finite() && row.ratio > 0.0) {
            return Err(Error::IdentifiabilityViolation {
                gap: row.coefficient_distance,
                distance: row.trace_distance,
            });
        }
    }

    let max_ratio = |rows: &[PairRow]| rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let random_rows = &pairs[..n_random];
    let c_emp = max_ratio(&pairs);
    let c_emp_random = max_ratio(random_rows);
    let weakest_ratio = pairs[pairs.len() - 1].ratio;
    let min_trace_distance = random_rows
        .iter()
        .map(|r| r.trace_distance)
        .fold(f64::INFINITY, f64::min);

    // Prefix maxima at doubling checkpoints, coarsest to full.
    let mut growth = Vec::new();
    let mut n = n_random;
    let mut checkpoints = Vec::new();
    while n >= 1 {
        checkpoints.push(n);
        if n == 1 {
            break;
        }
        n /= 2;
    }
    checkpoints.reverse();
    for &k in &checkpoints {
        growth.push(GrowthPoint {
            n_pairs: k,
            c_emp: max_ratio(&random_rows[..k]),
        });
    }
    let saturation = if growth.len() >= 2 {
        let half = growth[growth.len() - 2].c_emp;
        (c_emp_random - half).abs() / half
    } else {
        0.0
    };

    // First-order consistency: a bump pair's quotient should match the
    // midpoint Jacobian's prediction 1 / ||column_j|| up to the curvature
    // left at the bump scale.
    let bump_checks: Vec<BumpCheck> = pairs[n_random..n_random + m]
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let predicted = 1.0 / jac_mid.columns[j].norm(op);
            let relative_error = (row.ratio - predicted).abs() / predicted;
            BumpCheck {
                direction: j,
                predicted_ratio: predicted,
                measured_ratio: row.ratio,
                relative_error,
            }
        })
        .collect();
    let max_bump_error = bump_checks
        .iter()
        .map(|b| b.relative_error)
        .fold(0.0, f64::max);

    // Spectral floor at the midpoint and a few sampled base points.
    let mut smallest_singular_values = vec![*jac_mid.singular_values().first().unwrap()];
    for q in pool.iter().take(3) {
        let (_, jac) = assemble_jacobian(ops, data, q, grid, op)?;
        smallest_singular_values.push(*jac.singular_values().first().unwrap());
    }

    Ok(StabilityReport {
        seed,
        n_random_pairs: n_random,
        pairs,
        c_emp,
        c_emp_random,
        weakest_ratio,
        growth,
        saturation,
        min_trace_distance,
        bump_checks,
        max_bump_error,
        smallest_singular_values,
        data_bound_m1: data_bound(ops, data, grid),
    })
}

/// `||u0||_{L^2} + ||g||_{L^2(0,T; L^2)}` over the inlet, the norms the
/// stability constant is allowed to depend on.
pub fn data_bound(ops: &AssembledOperators, data: &ProblemData, grid: &TimeGrid) -> f64 {
    let spaces = &ops.spaces;
    let u0 = spaces.interpolate_velocity(&*data.initial_velocity);
    let u0_norm = ops.mass_v.quadratic_form(&u0, &u0).max(0.0).sqrt();
    let mut flux_sq = 0.0;
    for (n, w) in grid.trapezoid_weights().iter().enumerate() {
        flux_sq += w * boundary_data_norm_sq(&spaces.inlet_edges, &*data.inlet_flux, grid.time(n));
    }
    u0_norm + flux_sq.max(0.0).sqrt()
}

/// A pair whose trace distance undercuts the floor implied by `c_emp`.
#[derive(Debug, Clone, Serialize)]
pub struct FloorViolation {
    pub index: usize,
    pub coefficient_distance: f64,
    pub trace_distance: f64,
    pub floor: f64,
}

/// Outcome of [`identifiability_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub seed: u64,
    /// Pairs sampled; identical draws are excluded from evaluation.
    pub n_pairs: usize,
    pub evaluated: usize,
    pub c_emp: f64,
    pub floor_tolerance: f64,
    pub min_trace_distance: f64,
    pub min_coefficient_distance: f64,
    /// Floor findings. Nonempty means some coefficient gap nearly vanished
    /// from the measurements, a discretization-level identifiability alarm.
    pub violations: Vec<FloorViolation>,
}

fn scan_pairs(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    pairs: &[(RobinCoefficient, RobinCoefficient)],
    c_emp: f64,
    seed: u64,
) -> Result<ScanReport> {
    let kept: Vec<(usize, &(RobinCoefficient, RobinCoefficient))> = pairs
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| a.linf_distance(b).map(|d| d > 1e-14).unwrap_or(true))
        .collect();
    let rows: Vec<PairRow> = kept
        .par_iter()
        .map(|(i, (q1, q2))| pair_row(ops, data, grid, op, *i, PairKind::Random, q1, q2))
        .collect::<Result<_>>()?;

    let mut violations = Vec::new();
    for row in &rows {
        let floor = row.coefficient_distance / c_emp * (1.0 - FLOOR_TOLERANCE);
        if row.trace_distance < floor {
            violations.push(FloorViolation {
                index: row.index,
                coefficient_distance: row.coefficient_distance,
                trace_distance: row.trace_distance,
                floor,
            });
        }
    }
    Ok(ScanReport {
        seed,
        n_pairs: pairs.len(),
        evaluated: rows.len(),
        c_emp,
        floor_tolerance: FLOOR_TOLERANCE,
        min_trace_distance: rows
            .iter()
            .map(|r| r.trace_distance)
            .fold(f64::INFINITY, f64::min),
        min_coefficient_distance: rows
            .iter()
            .map(|r| r.coefficient_distance)
            .fold(f64::INFINITY, f64::min),
        violations,
    })
}

/// Checks that sampled coefficient gaps stay visible in the measurements:
/// every pair's trace distance must respect the floor `gap / c_emp` up to
/// [`FLOOR_TOLERANCE`]. Violations are findings in the report, not errors;
/// `c_emp` should come from a separate [`estimate_constant`] run so the
/// check is not circular.
#[allow(clippy::too_many_arguments)]
pub fn identifiability_scan(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    set: AdmissibleSet,
    basis: &Arc<RobinBasis>,
    n_pairs: usize,
    seed: u64,
    c_emp: f64,
) -> Result<ScanReport> {
    if n_pairs == 0 {
        return Err(Error::Config {
            key: "probe.n_pairs".into(),
            message: "the scan needs at least one pair".into(),
        });
    }
    if !(c_emp.is_finite() && c_emp > 0.0) {
        return Err(Error::DegenerateRatio(format!(
            "identifiability floor needs a positive stability constant, got {c_emp:.3e}"
        )));
    }
    let pool = set.sample(basis, 2 * n_pairs, seed);
    let pairs: Vec<(RobinCoefficient, RobinCoefficient)> = pool
        .chunks_exact(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect();
    scan_pairs(ops, data, grid, op, &pairs, c_emp, seed)
}

/// Spectral health of one linearization.
#[derive(Debug, Clone, Serialize)]
pub struct GramCheck {
    pub lambda_min: f64,
    pub condition: f64,
    pub singular: bool,
}

/// Classifies a Jacobian Gram matrix: positive smallest eigenvalue and a
/// singular-value ratio above [`SINGULAR_REL_TOL`] count as injective.
pub fn gram_check(jac: &TraceJacobian) -> GramCheck {
    let lambda_min = jac.smallest_eigenvalue();
    GramCheck {
        lambda_min,
        condition: jac.gram_condition(),
        singular: jac.is_singular(SINGULAR_REL_TOL) || !(lambda_min > 0.0),
    }
}

/// Hypothesis diagnostics at one sampled coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct SampleHypotheses {
    pub index: usize,
    /// Log-log slope of the Taylor remainder; 2 for a correct derivative.
    pub taylor_slope: f64,
    /// Log-log slope of the first-order difference; 1 by Lipschitz bound.
    pub first_order_slope: f64,
    /// Log-log slope of the derivative's modulus of continuity; 1 when the
    /// derivative is Lipschitz in the coefficient.
    pub continuity_slope: f64,
    pub gram: GramCheck,
    pub differentiable: bool,
    pub derivative_continuous: bool,
    pub derivative_injective: bool,
}

/// Composite verdict over the three structural hypotheses behind the
/// stability estimate, evaluated at sampled coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub seed: u64,
    pub samples: Vec<SampleHypotheses>,
    /// Identifiability scan over the sample pairs, floored by the measured
    /// weakest-direction quotient.
    pub injectivity: ScanReport,
    pub data_bound_m1: f64,
    /// Hypothesis 1: no trace distance undercuts the identifiability floor.
    pub injective: bool,
    /// Hypothesis 2: Taylor, first-order, and continuity slopes in range at
    /// every sample.
    pub continuously_differentiable: bool,
    /// Hypothesis 3: every sampled Gram matrix is nondegenerate.
    pub derivative_injective: bool,
    pub all_hold: bool,
}

fn in_range(x: f64, range: (f64, f64)) -> bool {
    x.is_finite() && x >= range.0 && x <= range.1
}

/// Evaluates the three hypotheses at `n_samples` coefficients drawn from the
/// box. Differentiability and continuity are slope checks over
/// [`PROBE_SCALES`]; derivative injectivity is a Gram eigenvalue check; the
/// injectivity floor reuses the weakest-direction quotient at the midpoint
/// as its reference constant.
#[allow(clippy::too_many_arguments)]
pub fn hypothesis_check(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    set: AdmissibleSet,
    basis: &Arc<RobinBasis>,
    n_samples: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if n_samples == 0 {
        return Err(Error::Config {
            key: "probe.n_samples".into(),
            message: "the hypothesis check needs at least one sample".into(),
        });
    }
    let qs = set.sample(basis, n_samples, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517c_c1b7_2722_0a95);

    let mut samples = Vec::with_capacity(qs.len());
    for (index, q) in qs.iter().enumerate() {
        let h = random_direction(basis, &mut rng);
        let l = random_direction(basis, &mut rng);
        let taylor = taylor_remainder_test(ops, data, grid, op, q, &h, &PROBE_SCALES)?;
        let continuity = dt_continuity_test(ops, data, grid, op, q, &l, &PROBE_SCALES)?;
        let (_, jac) = assemble_jacobian(ops, data, q, grid, op)?;
        let gram = gram_check(&jac);
        let differentiable = in_range(taylor.remainder_slope, TAYLOR_SLOPE_RANGE)
            && in_range(taylor.first_order_slope, FIRST_ORDER_SLOPE_RANGE);
        let derivative_continuous = in_range(continuity.slope, CONTINUITY_SLOPE_RANGE);
        let derivative_injective = !gram.singular;
        samples.push(SampleHypotheses {
            index,
            taylor_slope: taylor.remainder_slope,
            first_order_slope: taylor.first_order_slope,
            continuity_slope: continuity.slope,
            gram,
            differentiable,
            derivative_continuous,
            derivative_injective,
        });
    }

    // Reference constant for the floor: the weakest-direction quotient at
    // the midpoint, the near-maximizer of the stability ratio. Floor-checking
    // the sample pairs against it is meaningful because the reference does
    // not come from those pairs.
    let q_mid = set.midpoint(basis.clone());
    let (_, jac_mid) = assemble_jacobian(ops, data, &q_mid, grid, op)?;
    let weakest = {
        let mut coeffs = jac_mid.weakest_direction();
        coeffs /= coeffs.amax();
        RobinCoefficient {
            basis: basis.clone(),
            coeffs,
        }
    };
    let partner = set.project(&q_mid.add_scaled(&weakest, BUMP_SCALE)?);
    let reference = lipschitz_ratio(ops, data, grid, op, &q_mid, &partner)?;

    let pairs: Vec<(RobinCoefficient, RobinCoefficient)> = qs
        .iter()
        .enumerate()
        .flat_map(|(i, a)| qs[i + 1..].iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    let injectivity = scan_pairs(ops, data, grid, op, &pairs, reference, seed)?;

    let injective = injectivity.violations.is_empty();
    let continuously_differentiable = samples
        .iter()
        .all(|s| s.differentiable && s.derivative_continuous);
    let derivative_injective = samples.iter().all(|s| s.derivative_injective);
    Ok(HypothesisReport {
        seed,
        samples,
        injectivity,
        data_bound_m1: data_bound(ops, data, grid),
        injective,
        continuously_differentiable,
        derivative_injective,
        all_hold: injective && continuously_differentiable && derivative_injective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{assemble_static, trace_matrix};
    use crate::mesh::build_channel_mesh;
    use crate::sensitivity::jacobian_columns_with;
    use crate::spaces::{DirichletPolicy, FunctionSpaces};

    struct Setup {
        ops: AssembledOperators,
        data: ProblemData,
        grid: TimeGrid,
        op: TraceOperator,
        basis: Arc<RobinBasis>,
        set: AdmissibleSet,
    }

    fn setup(nx: usize, ny: usize, n_steps: usize) -> Setup {
        let mesh = build_channel_mesh(2.0, 1.0, nx, ny, 2).unwrap();
        let spaces = Arc::new(
            FunctionSpaces::new(Arc::new(mesh), DirichletPolicy::NoSlipLateral).unwrap(),
        );
        let ops = assemble_static(&spaces);
        let grid = TimeGrid::new(1.0, n_steps).unwrap();
        let basis = Arc::new(RobinBasis::from_mesh(&spaces.mesh, 2, grid.t_final).unwrap());
        let op = trace_matrix(&spaces, (0.0, 1.0)).unwrap();
        let data = ProblemData::standard(2.0, 1.0, grid.t_final, 1.0, 0.5);
        Setup {
            ops,
            data,
            grid,
            op,
            basis,
            set: AdmissibleSet::new(0.5, 5.0).unwrap(),
        }
    }

    #[test]
    fn identical_coefficients_have_no_quotient() {
        let s = setup(4, 2, 3);
        let q = s.set.midpoint(s.basis.clone());
        match lipschitz_ratio(&s.ops, &s.data, &s.grid, &s.op, &q, &q) {
            Err(Error::DegenerateRatio(_)) => {}
            other => panic!("expected degenerate ratio, got {other:?}"),
        }
    }

    /// First-order oracle: a single-direction pair's quotient is predicted
    /// by the Jacobian column norm.
    #[test]
    fn bump_quotients_match_the_jacobian_prediction() {
        let s = setup(4, 2, 4);
        let q_mid = s.set.midpoint(s.basis.clone());
        let (_, jac) = assemble_jacobian(&s.ops, &s.data, &q_mid, &s.grid, &s.op).unwrap();
        for j in [0, s.basis.dim() / 2, s.basis.dim() - 1] {
            let mut coeffs = DVector::zeros(s.basis.dim());
            coeffs[j] = 1.0;
            let dir = RobinCoefficient {
                basis: s.basis.clone(),
                coeffs,
            };
            let q2 = q_mid.add_scaled(&dir, BUMP_SCALE).unwrap();
            let ratio = lipschitz_ratio(&s.ops, &s.data, &s.grid, &s.op, &q_mid, &q2).unwrap();
            let predicted = 1.0 / jac.columns[j].norm(&s.op);
            let err = (ratio - predicted).abs() / predicted;
            assert!(err < 0.05, "direction {j}: measured {ratio:.6e} predicted {predicted:.6e}");
        }
    }

    #[test]
    fn sweep_reports_finite_positive_ratios_and_monotone_growth() {
        let s = setup(4, 2, 3);
        let rep = estimate_constant(
            &s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 8, 11,
        )
        .unwrap();

        assert_eq!(rep.n_random_pairs, 8);
        assert_eq!(rep.pairs.len(), 8 + s.basis.dim() + 1);
        for row in &rep.pairs {
            assert!(row.ratio.is_finite() && row.ratio > 0.0, "pair {}", row.index);
        }
        assert!(rep.c_emp >= rep.c_emp_random);
        assert!(rep.c_emp >= rep.weakest_ratio);
        for w in rep.growth.windows(2) {
            assert!(w[0].n_pairs < w[1].n_pairs);
            assert!(w[0].c_emp <= w[1].c_emp, "prefix maximum decreased");
        }
        assert_eq!(rep.growth.last().unwrap().c_emp, rep.c_emp_random);
        assert!(rep.min_trace_distance > 0.0);
        assert!(rep.data_bound_m1 > 0.0);
        assert_eq!(rep.smallest_singular_values.len(), 4);
        for sv in &rep.smallest_singular_values {
            assert!(*sv > 0.0);
        }
    }

    #[test]
    fn sweep_is_deterministic_in_the_seed() {
        let s = setup(4, 2, 3);
        let a = estimate_constant(&s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 4, 7).unwrap();
        let b = estimate_constant(&s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 4, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = estimate_constant(&s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 4, 8).unwrap();
        assert_ne!(a.c_emp_random, c.c_emp_random);
    }

    /// The weakest singular direction concentrates the parameter change
    /// where measurements barely see it, so its quotient should dominate
    /// the sweep.
    #[test]
    fn weakest_direction_pair_dominates_the_random_sweep() {
        let s = setup(4, 2, 4);
        let rep =
            estimate_constant(&s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 10, 3).unwrap();
        assert!(
            rep.weakest_ratio >= 0.9 * rep.c_emp_random,
            "weakest {:.3e} vs random {:.3e}",
            rep.weakest_ratio,
            rep.c_emp_random
        );
        assert!(rep.max_bump_error < 0.05, "bump error {:.3e}", rep.max_bump_error);
    }

    #[test]
    fn scan_floor_arithmetic_and_identical_pair_exclusion() {
        let s = setup(4, 2, 3);
        let q1 = s.set.sample(&s.basis, 1, 21).remove(0);
        let q2 = s.set.sample(&s.basis, 1, 22).remove(0);
        let pairs = vec![(q1.clone(), q1.clone()), (q1.clone(), q2.clone())];
        // A generous constant keeps the floor low; the identical pair must
        // be skipped rather than divide by zero.
        let rep = scan_pairs(&s.ops, &s.data, &s.grid, &s.op, &pairs, 1e6, 0).unwrap();
        assert_eq!(rep.n_pairs, 2);
        assert_eq!(rep.evaluated, 1);
        assert!(rep.violations.is_empty());

        // A tiny constant turns the floor impossible and the same pair into
        // a finding with the exact floor arithmetic.
        let tight = scan_pairs(&s.ops, &s.data, &s.grid, &s.op, &pairs, 1e-9, 0).unwrap();
        assert_eq!(tight.violations.len(), 1);
        let v = &tight.violations[0];
        assert!((v.floor - v.coefficient_distance / 1e-9 * 0.95).abs() < 1e-12 * v.floor);
        let gap: f64 = 0.5;
        assert!((gap / 50.0 * (1.0 - FLOOR_TOLERANCE) - 0.0095).abs() < 1e-15);
    }

    /// Enlarging the measured window adds nonnegative contributions to every
    /// trace distance, so the scan's minimum cannot drop.
    #[test]
    fn widening_the_window_never_shrinks_the_scan_floor() {
        let s = setup(4, 2, 3);
        let half_op = trace_matrix(&s.ops.spaces, (0.0, 0.5)).unwrap();
        let narrow = identifiability_scan(
            &s.ops, &s.data, &s.grid, &half_op, s.set, &s.basis, 5, 13, 1e6,
        )
        .unwrap();
        let wide = identifiability_scan(
            &s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 5, 13, 1e6,
        )
        .unwrap();
        assert!(wide.min_trace_distance >= narrow.min_trace_distance);
    }

    #[test]
    fn hypotheses_hold_on_the_standard_setup() {
        let s = setup(4, 2, 4);
        let rep = hypothesis_check(
            &s.ops, &s.data, &s.grid, &s.op, s.set, &s.basis, 2, 5,
        )
        .unwrap();
        for sample in &rep.samples {
            assert!(
                sample.differentiable,
                "sample {}: taylor {:.3} first order {:.3}",
                sample.index, sample.taylor_slope, sample.first_order_slope
            );
            assert!(
                sample.derivative_continuous,
                "sample {}: continuity {:.3}",
                sample.index, sample.continuity_slope
            );
            assert!(sample.derivative_injective);
            assert!(sample.gram.lambda_min > 0.0);
        }
        assert!(rep.injective);
        assert!(rep.all_hold);
        assert!(rep.data_bound_m1 > 0.0);
    }

    /// A duplicated direction makes two Jacobian columns identical; the
    /// check must flag the Gram matrix instead of erroring.
    #[test]
    fn duplicated_directions_are_flagged_singular() {
        let s = setup(4, 2, 3);
        let q = s.set.midpoint(s.basis.clone());
        let sweep = crate::saddle::SaddleSweep::new(&s.ops, &q, &s.grid).unwrap();
        let fwd = crate::forward::solve_forward_with(&sweep, &s.ops, &s.data).unwrap();
        let mut coeffs = DVector::zeros(s.basis.dim());
        coeffs[0] = 1.0;
        let dir = RobinCoefficient {
            basis: s.basis.clone(),
            coeffs,
        };
        let jac =
            jacobian_columns_with(&sweep, &s.ops, &fwd, &s.op, &[dir.clone(), dir]).unwrap();
        let check = gram_check(&jac);
        assert!(check.singular);

        let healthy = jacobian_columns_with(
            &sweep,
            &s.ops,
            &fwd,
            &s.op,
            &crate::sensitivity::basis_directions(&q),
        )
        .unwrap();
        assert!(!gram_check(&healthy).singular);
    }

    /// Bookkeeping identity: the recorded data bound is the sum of the two
    /// norms computed directly.
    #[test]
    fn data_bound_matches_the_direct_norms() {
        let s = setup(4, 2, 4);
        let spaces = &s.ops.spaces;
        let u0 = spaces.interpolate_velocity(&*s.data.initial_velocity);
        let u0_norm = s.ops.mass_v.quadratic_form(&u0, &u0).sqrt();
        let mut flux_sq = 0.0;
        for (n, w) in s.grid.trapezoid_weights().iter().enumerate() {
            flux_sq += w * boundary_data_norm_sq(
                &spaces.inlet_edges,
                &*s.data.inlet_flux,
                s.grid.time(n),
            );
        }
        let expected = u0_norm + flux_sq.sqrt();
        let got = data_bound(&s.ops, &s.data, &s.grid);
        assert!((got - expected).abs() <= 1e-12 * expected);
    }
}
