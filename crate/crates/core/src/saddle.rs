//! Factorization and stepping of the implicit Euler saddle-point systems.
//!
//! Every time step solves, on the free velocity dofs and the full pressure
//! space,
//!
//! ```text
//! [ Mv/dt + A + R(q; t_n)   B^T ] [ u^n ]   [ Mv u^{n-1}/dt + F(t_n) ]
//! [ B                        0  ] [ p^n ] = [ 0                      ]
//! ```
//!
//! where `R` is the q-weighted outlet mass and `B` the (negated) divergence
//! coupling. The matrix depends on the step only through the time slice of
//! `q`, so factorizations are cached and shared between steps whose slices
//! coincide; a time-constant coefficient costs a single factorization per
//! sweep.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DVector;

use crate::assemble::{assemble_robin_matrix, AssembledOperators};
use crate::error::{Error, Result};
use crate::forward::{StateTrajectory, TimeGrid};
use crate::params::RobinCoefficient;

/// One factorized saddle matrix.
pub struct SaddleFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    dim: usize,
}

impl SaddleFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut b = faer::Mat::zeros(self.dim, 1);
        for i in 0..self.dim {
            b[(i, 0)] = rhs[i];
        }
        let x = self.lu.solve(&b);
        DVector::from_fn(self.dim, |i, _| x[(i, 0)])
    }
}

/// The factorizations for one coefficient and time grid.
pub struct SaddleSweep {
    pub grid: TimeGrid,
    pub n_free: usize,
    pub np: usize,
    factors: Vec<Arc<SaddleFactor>>,
}

impl SaddleSweep {
    /// Factorizes the saddle matrix of every time step.
    pub fn new(
        ops: &AssembledOperators,
        q: &RobinCoefficient,
        grid: &TimeGrid,
    ) -> Result<SaddleSweep> {
        let spaces = &ops.spaces;
        let n_free = spaces.n_free();
        let np = spaces.pressure_dim();
        let dim = n_free + np;
        let inv_dt = 1.0 / grid.dt();

        // The q-independent part of the triplet list is shared by all steps.
        let mut base: Vec<Triplet<usize, usize, f64>> = Vec::new();
        for (r, c, v) in ops.mass_v.triplets() {
            if let (Some(fr), Some(fc)) = (spaces.free_of_full[r], spaces.free_of_full[c]) {
                base.push(Triplet::new(fr, fc, v * inv_dt));
            }
        }
        for (r, c, v) in ops.stiffness.triplets() {
            if let (Some(fr), Some(fc)) = (spaces.free_of_full[r], spaces.free_of_full[c]) {
                base.push(Triplet::new(fr, fc, v));
            }
        }
        for (k, c, v) in ops.divergence.triplets() {
            if let Some(fc) = spaces.free_of_full[c] {
                base.push(Triplet::new(n_free + k, fc, v));
                base.push(Triplet::new(fc, n_free + k, v));
            }
        }

        let mut factors: Vec<Arc<SaddleFactor>> = Vec::with_capacity(grid.n_steps);
        let mut cached: Option<(Vec<f64>, Arc<SaddleFactor>)> = None;
        for step in 1..=grid.n_steps {
            let t = grid.time(step);
            let slice = q.basis.spatial_slice(&q.coeffs, t);
            if let Some((prev_slice, factor)) = &cached {
                if *prev_slice == slice {
                    factors.push(factor.clone());
                    continue;
                }
            }
            let robin = assemble_robin_matrix(spaces, q, t)?;
            let mut triplets = base.clone();
            for (r, c, v) in robin.triplets() {
                if let (Some(fr), Some(fc)) = (spaces.free_of_full[r], spaces.free_of_full[c]) {
                    triplets.push(Triplet::new(fr, fc, v));
                }
            }
            let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &triplets)
                .map_err(|e| Error::Factorization {
                    step,
                    message: format!("building sparse matrix: {e:?}"),
                })?;
            let lu = matrix.sp_lu().map_err(|e| Error::Factorization {
                step,
                message: format!("sparse LU: {e:?}"),
            })?;
            let factor = Arc::new(SaddleFactor { lu, dim });
            cached = Some((slice, factor.clone()));
            factors.push(factor);
        }

        Ok(SaddleSweep {
            grid: *grid,
            n_free,
            np,
            factors,
        })
    }

    /// Marches the implicit Euler recursion from `u0` (a full velocity
    /// vector respecting the constraints). `load` supplies the full-dof
    /// velocity load of each step; the pressure block of the right side is
    /// zero.
    pub fn march(
        &self,
        ops: &AssembledOperators,
        u0_full: &DVector<f64>,
        mut load: impl FnMut(usize, f64) -> DVector<f64>,
    ) -> Result<StateTrajectory> {
        let spaces = &ops.spaces;
        assert_eq!(u0_full.len(), spaces.velocity_dim());
        let inv_dt = 1.0 / self.grid.dt();
        let dim = self.n_free + self.np;

        let mut velocity = Vec::with_capacity(self.grid.n_steps + 1);
        let mut pressure = Vec::with_capacity(self.grid.n_steps);
        let mut outlet_values = Vec::with_capacity(self.grid.n_steps + 1);
        velocity.push(u0_full.clone());
        outlet_values.push(spaces_outlet_restrict(spaces, u0_full));

        for step in 1..=self.grid.n_steps {
            let t = self.grid.time(step);
            let mut rhs_full = ops.mass_v.matvec(velocity.last().expect("nonempty"));
            rhs_full *= inv_dt;
            rhs_full += load(step, t);

            let mut rhs = DVector::zeros(dim);
            for (i, &dof) in spaces.free_dofs.iter().enumerate() {
                rhs[i] = rhs_full[dof];
            }
            let sol = self.factors[step - 1].solve(&rhs);
            if !sol.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
            let u_free = sol.rows(0, self.n_free).into_owned();
            let u_full = spaces.scatter(&u_free);
            outlet_values.push(spaces_outlet_restrict(spaces, &u_full));
            velocity.push(u_full);
            pressure.push(sol.rows(self.n_free, self.np).into_owned());
        }

        Ok(StateTrajectory {
            velocity,
            pressure,
            outlet_values,
        })
    }
}

/// Gathers the outlet-node velocity values (interleaved components, in
/// `spaces.outlet_nodes` order).
pub fn spaces_outlet_restrict(
    spaces: &crate::spaces::FunctionSpaces,
    full: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(2 * spaces.outlet_nodes.len(), |i, _| {
        full[2 * spaces.outlet_nodes[i / 2] + i % 2]
    })
}
