//! Directional derivatives of the coefficient-to-measurement map.
//!
//! Differentiating the implicit Euler recursion in the Robin coefficient
//! along a direction `h` yields the same saddle systems driven by the load
//! `-R(h; t_n) u^n`, where `u` is the already computed forward state. The
//! derivative of the discrete map is therefore itself a discrete evolution,
//! and it shares every factorization with the forward sweep. Up to solver
//! roundoff it is the exact derivative of the discrete map, which the
//! finite-difference oracle below pins down.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assemble::{apply_outlet_mass, check_basis_covers_outlet, AssembledOperators};
use crate::assemble::TraceOperator;
use crate::data::ProblemData;
use crate::error::{Error, Result};
use crate::forward::{extract_trace, solve_forward_with, MeasurementTrace, StateTrajectory, TimeGrid};
use crate::params::RobinCoefficient;
use crate::saddle::SaddleSweep;

/// Solves the sensitivity problem at `q` in direction `h`, given the
/// forward trajectory at `q`. Builds its own factorization sweep; prefer
/// [`solve_sensitivity_with`] when one is already at hand.
pub fn solve_sensitivity(
    ops: &AssembledOperators,
    q: &RobinCoefficient,
    forward: &StateTrajectory,
    h: &RobinCoefficient,
    grid: &TimeGrid,
) -> Result<StateTrajectory> {
    let sweep = SaddleSweep::new(ops, q, grid)?;
    solve_sensitivity_with(&sweep, ops, forward, h)
}

/// Sensitivity solve reusing the forward factorizations. The state starts
/// from zero; the only load is the `h`-weighted outlet mass applied to the
/// forward velocity of the same step.
pub fn solve_sensitivity_with(
    sweep: &SaddleSweep,
    ops: &AssembledOperators,
    forward: &StateTrajectory,
    h: &RobinCoefficient,
) -> Result<StateTrajectory> {
    let spaces = &ops.spaces;
    check_basis_covers_outlet(spaces, h)?;
    forward.check_compatible(ops, &sweep.grid)?;
    let zero = DVector::zeros(spaces.velocity_dim());
    sweep.march(ops, &zero, |step, t| {
        -apply_outlet_mass(spaces, h, t, &forward.velocity[step])
            .expect("outlet coverage was checked before marching")
    })
}

/// The derivative of the measurement map at a fixed coefficient, stored
/// column by column over a set of directions (usually the parameter basis).
///
/// Besides the columns themselves it keeps the weighted column stack and
/// its singular value decomposition. The linearization is severely
/// ill-conditioned (high spatial modes of the coefficient barely reach the
/// measured wall), so every spectral quantity is derived from singular
/// values of the stack: they stay accurate and nonnegative far below the
/// roundoff floor of the assembled Gram matrix.
#[derive(Debug, Clone)]
pub struct TraceJacobian {
    /// `columns[j]` is the measured trace of the sensitivity in direction j.
    pub columns: Vec<MeasurementTrace>,
    /// Weighted Gram matrix of the columns (the normal-equations matrix).
    pub gram: DMatrix<f64>,
    /// Weighted column stack; `stack^T stack = gram`.
    stack: DMatrix<f64>,
    /// Thin SVD of `stack`, singular values descending.
    svd_u: DMatrix<f64>,
    svd_sigma: DVector<f64>,
    svd_vt: DMatrix<f64>,
}

impl TraceJacobian {
    fn from_columns(columns: Vec<MeasurementTrace>, op: &TraceOperator) -> Result<TraceJacobian> {
        let m = columns.len();
        let n = op.dim() * columns[0].values.len();
        let mut stack = DMatrix::zeros(n, m);
        for (j, col) in columns.iter().enumerate() {
            stack.set_column(j, &col.weighted_stack(op));
        }
        let gram = stack.tr_mul(&stack);

        let svd = stack.clone().try_svd(true, true, f64::EPSILON, 0).ok_or_else(|| {
            Error::Factorization {
                step: 0,
                message: "jacobian singular value decomposition did not converge".into(),
            }
        })?;
        let u = svd.u.expect("requested");
        let vt = svd.v_t.expect("requested");
        let sigma = svd.singular_values;
        // Sort descending; nalgebra does not guarantee an order.
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        let svd_sigma = DVector::from_fn(sigma.len(), |i, _| sigma[order[i]]);
        let svd_u = u.select_columns(&order);
        let svd_vt = vt.select_rows(&order);

        Ok(TraceJacobian {
            columns,
            gram,
            stack,
            svd_u,
            svd_sigma,
            svd_vt,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Applies the Jacobian to a coefficient-space vector.
    pub fn apply(&self, coeffs: &DVector<f64>) -> Result<MeasurementTrace> {
        if coeffs.len() != self.columns.len() {
            return Err(Error::BasisMismatch(format!(
                "jacobian has {} columns, vector has {}",
                self.columns.len(),
                coeffs.len()
            )));
        }
        let mut acc = self.columns[0].scale(coeffs[0]);
        for (col, &c) in self.columns.iter().zip(coeffs.iter()).skip(1) {
            acc = acc.add_scaled(col, c)?;
        }
        Ok(acc)
    }

    /// `J^T W r` for a residual trace `r`, the misfit gradient direction.
    pub fn weighted_rhs(
        &self,
        op: &TraceOperator,
        residual: &MeasurementTrace,
    ) -> Result<DVector<f64>> {
        residual.check_compatible(&self.columns[0])?;
        Ok(self.stack.tr_mul(&residual.weighted_stack(op)))
    }

    /// Solves the damped normal equations `(J^T W J + d I) x = J^T W r`
    /// through the singular value decomposition of the weighted stack,
    /// which stays stable for damping far below the Gram roundoff floor.
    pub fn damped_step(
        &self,
        op: &TraceOperator,
        residual: &MeasurementTrace,
        damping: f64,
    ) -> Result<DVector<f64>> {
        residual.check_compatible(&self.columns[0])?;
        let y = self.svd_u.tr_mul(&residual.weighted_stack(op));
        let filtered = DVector::from_fn(y.len(), |j, _| {
            let s = self.svd_sigma[j];
            y[j] * s / (s * s + damping)
        });
        let x = self.svd_vt.tr_mul(&filtered);
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFinite { step: 0 })
        }
    }

    /// Singular values of the weighted Jacobian, ascending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.svd_sigma.iter().copied().collect();
        s.reverse();
        s
    }

    /// Gram eigenvalues (squared singular values), ascending. Nonnegative
    /// by construction.
    pub fn gram_eigenvalues(&self) -> Vec<f64> {
        self.singular_values().into_iter().map(|s| s * s).collect()
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        let s = self.svd_sigma[self.svd_sigma.len() - 1];
        s * s
    }

    /// Condition number of the Gram matrix.
    pub fn gram_condition(&self) -> f64 {
        let first = self.svd_sigma[0];
        let last = self.svd_sigma[self.svd_sigma.len() - 1];
        (first / last).powi(2)
    }

    /// Coefficient direction the measurements resolve worst: the right
    /// singular vector of the smallest singular value.
    pub fn weakest_direction(&self) -> DVector<f64> {
        self.svd_vt.row(self.svd_vt.nrows() - 1).transpose()
    }

    /// Flags a numerically rank-deficient linearization by the singular
    /// value ratio. The healthy ratio on the default setup is around 1e-9;
    /// a genuinely dependent column set lands at machine epsilon.
    pub fn is_singular(&self, rel_tol: f64) -> bool {
        let first = self.svd_sigma[0];
        let last = self.svd_sigma[self.svd_sigma.len() - 1];
        last <= rel_tol * first.max(f64::MIN_POSITIVE)
    }

    /// Components of a trace in the left singular basis, strongest mode
    /// first. Mode `j` of the image of a coefficient step `x` equals
    /// `sigma_j` times mode `j` of `x` under [`coefficient_modes`].
    ///
    /// [`coefficient_modes`]: Self::coefficient_modes
    pub fn trace_modes(&self, op: &TraceOperator, trace: &MeasurementTrace) -> Result<DVector<f64>> {
        trace.check_compatible(&self.columns[0])?;
        Ok(self.svd_u.tr_mul(&trace.weighted_stack(op)))
    }

    /// Components of a coefficient vector in the right singular basis,
    /// strongest mode first.
    pub fn coefficient_modes(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.columns.len() {
            return Err(Error::BasisMismatch(format!(
                "jacobian has {} columns, vector has {}",
                self.columns.len(),
                coeffs.len()
            )));
        }
        Ok(&self.svd_vt * coeffs)
    }
}

/// Measured sensitivity columns for explicit directions, reusing one sweep.
/// Column order follows `directions`.
pub fn jacobian_columns_with(
    sweep: &SaddleSweep,
    ops: &AssembledOperators,
    forward: &StateTrajectory,
    op: &TraceOperator,
    directions: &[RobinCoefficient],
) -> Result<TraceJacobian> {
    if directions.is_empty() {
        return Err(Error::BasisMismatch("no jacobian directions given".into()));
    }
    let columns: Vec<MeasurementTrace> = directions
        .par_iter()
        .map(|h| {
            let sens = solve_sensitivity_with(sweep, ops, forward, h)?;
            extract_trace(&sens, op, &sweep.grid)
        })
        .collect::<Result<_>>()?;
    TraceJacobian::from_columns(columns, op)
}

/// Unit directions of the coefficient's own basis.
pub fn basis_directions(q: &RobinCoefficient) -> Vec<RobinCoefficient> {
    let m = q.basis.dim();
    (0..m)
        .map(|j| {
            let mut coeffs = DVector::zeros(m);
            coeffs[j] = 1.0;
            RobinCoefficient {
                basis: q.basis.clone(),
                coeffs,
            }
        })
        .collect()
}

/// Forward solve plus the full Jacobian in the coefficient's basis
/// directions, sharing one factorization sweep.
pub fn assemble_jacobian(
    ops: &AssembledOperators,
    data: &ProblemData,
    q: &RobinCoefficient,
    grid: &TimeGrid,
    op: &TraceOperator,
) -> Result<(StateTrajectory, TraceJacobian)> {
    let sweep = SaddleSweep::new(ops, q, grid)?;
    let forward = solve_forward_with(&sweep, ops, data)?;
    let jac = jacobian_columns_with(&sweep, ops, &forward, op, &basis_directions(q))?;
    Ok((forward, jac))
}

/// Least-squares slope of `log y` against `log x`. Pairs with a
/// nonpositive entry are skipped.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Taylor remainder study of the measurement map at `(q, h)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TaylorReport {
    pub scales: Vec<f64>,
    /// `||T(q + eps h) - T(q)||` per scale.
    pub first_order: Vec<f64>,
    /// `||T(q + eps h) - T(q) - eps dT h||` per scale.
    pub remainder: Vec<f64>,
    pub first_order_slope: f64,
    pub remainder_slope: f64,
    pub derivative_norm: f64,
    /// Remainders that fell below the roundoff floor and were excluded
    /// from the slope fit.
    pub floor_hits: usize,
}

/// Compares the map against its linearization over a ladder of scales.
/// A correct derivative shows remainder slope near 2 and difference slope
/// near 1 in `eps`.
pub fn taylor_remainder_test(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    q: &RobinCoefficient,
    h: &RobinCoefficient,
    scales: &[f64],
) -> Result<TaylorReport> {
    let sweep = SaddleSweep::new(ops, q, grid)?;
    let forward = solve_forward_with(&sweep, ops, data)?;
    let base = extract_trace(&forward, op, grid)?;
    let sens = solve_sensitivity_with(&sweep, ops, &forward, h)?;
    let dcol = extract_trace(&sens, op, grid)?;
    let derivative_norm = dcol.norm(op);

    let floor = 1e-13 * base.norm(op).max(1.0);
    let mut first_order = Vec::with_capacity(scales.len());
    let mut remainder = Vec::with_capacity(scales.len());
    for &eps in scales {
        let q_eps = q.add_scaled(h, eps)?;
        let traj = crate::forward::solve_forward(ops, data, &q_eps, grid)?;
        let trace = extract_trace(&traj, op, grid)?;
        let diff = trace.sub(&base)?;
        first_order.push(diff.norm(op));
        remainder.push(diff.add_scaled(&dcol, -eps)?.norm(op));
    }

    let kept: Vec<(f64, f64)> = scales
        .iter()
        .zip(&remainder)
        .filter(|(_, &r)| r > floor)
        .map(|(&s, &r)| (s, r))
        .collect();
    let floor_hits = scales.len() - kept.len();
    let (kx, ky): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    Ok(TaylorReport {
        scales: scales.to_vec(),
        first_order_slope: fit_log_slope(scales, &first_order),
        remainder_slope: fit_log_slope(&kx, &ky),
        first_order,
        remainder,
        derivative_norm,
        floor_hits,
    })
}

/// Modulus-of-continuity study of `q -> dT_q`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ContinuityReport {
    /// Sup-norm gaps between the base and shifted coefficients.
    pub gaps: Vec<f64>,
    /// Worst column deviation `max_j ||(dT_{q+l} - dT_q) phi_j||` per gap.
    pub deviations: Vec<f64>,
    pub slope: f64,
}

/// Measures how fast the derivative moves when the base point moves along
/// `l` (sup-norm 1). A Lipschitz-continuous derivative shows slope near 1.
pub fn dt_continuity_test(
    ops: &AssembledOperators,
    data: &ProblemData,
    grid: &TimeGrid,
    op: &TraceOperator,
    q: &RobinCoefficient,
    l: &RobinCoefficient,
    scales: &[f64],
) -> Result<ContinuityReport> {
    let sweep = SaddleSweep::new(ops, q, grid)?;
    let forward = solve_forward_with(&sweep, ops, data)?;
    let directions = basis_directions(q);
    let base = jacobian_columns_with(&sweep, ops, &forward, op, &directions)?;

    let mut gaps = Vec::with_capacity(scales.len());
    let mut deviations = Vec::with_capacity(scales.len());
    for &delta in scales {
        let q_shift = q.add_scaled(l, delta)?;
        gaps.push(q.linf_distance(&q_shift)?);
        let sweep_s = SaddleSweep::new(ops, &q_shift, grid)?;
        let fwd_s = solve_forward_with(&sweep_s, ops, data)?;
        let shifted = jacobian_columns_with(&sweep_s, ops, &fwd_s, op, &directions)?;
        let dev = base
            .columns
            .iter()
            .zip(&shifted.columns)
            .map(|(a, b)| a.distance(op, b))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        deviations.push(dev);
    }
    Ok(ContinuityReport {
        slope: fit_log_slope(&gaps, &deviations),
        gaps,
        deviations,
    })
}
