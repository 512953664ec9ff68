//! Convergence studies against the closed-form solution.
//!
//! The spatial study solves the manufactured problem on a ladder of meshes
//! with the time step scaled as the square of the mesh size, so the spatial
//! discretization governs the error. Errors are integrated with quadrature
//! two orders beyond the assembly rules; measured rates then reflect the
//! method, not the error integration.
//!
//! The temporal study fixes the mesh and compares solutions across a ladder
//! of step counts at shared time nodes. Consecutive differences cancel the
//! spatial error exactly, which a comparison against the closed form cannot
//! do once the time error drops below the spatial floor.

use std::sync::Arc;

use serde::Serialize;

use crate::config::{DataSpec, ExperimentConfig};
use crate::data::ManufacturedSolution;
use crate::error::{Error, Result};
use crate::forward::{solve_forward, StateTrajectory, TimeGrid};
use crate::mesh::build_channel_mesh;
use crate::params::{RobinBasis, RobinCoefficient};
use crate::quadrature::{edge_rule_deg9, triangle_rule_deg6};
use crate::sensitivity::fit_log_slope;
use crate::spaces::{p1_values, p2_ref_grads, p2_values, DirichletPolicy, EdgeTrace, FunctionSpaces};

/// Space-time error norms of one trajectory against a reference field.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorNorms {
    /// Velocity in `L^2(0,T; L^2)`.
    pub velocity_l2: f64,
    /// Velocity in `L^2(0,T; H^1)`.
    pub velocity_h1: f64,
    /// Pressure in `L^2(0,T; L^2)`, first step onward (implicit Euler has
    /// no initial pressure).
    pub pressure_l2: f64,
    /// Velocity trace on the measured window in `L^2(0,T; L^2)`.
    pub trace_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpatialLevel {
    pub level: usize,
    /// Cell diagonal of the structured grid.
    pub h: f64,
    pub n_steps: usize,
    pub errors: ErrorNorms,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpatialReport {
    pub levels: Vec<SpatialLevel>,
    pub velocity_l2_rate: f64,
    pub velocity_h1_rate: f64,
    pub pressure_l2_rate: f64,
    pub trace_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemporalReport {
    pub steps: Vec<usize>,
    /// Distance between consecutive ladder solutions in the discrete
    /// space-time energy norm, one entry per consecutive pair.
    pub gaps: Vec<f64>,
    /// Coarser step size of each pair.
    pub dts: Vec<f64>,
    pub rate: f64,
}

/// Per-triangle affine geometry: P2 nodes, inverse-transposed Jacobian for
/// gradient pushforward, absolute Jacobian determinant.
struct TriGeom {
    nodes: [usize; 6],
    inv_jt: [[f64; 2]; 2],
    det: f64,
}

fn tri_geoms(spaces: &FunctionSpaces) -> Vec<TriGeom> {
    let mesh = &spaces.mesh;
    mesh.triangles
        .iter()
        .zip(&spaces.tri_nodes)
        .map(|(&[v0, v1, v2], &nodes)| {
            let (p0, p1, p2) = (mesh.vertices[v0], mesh.vertices[v1], mesh.vertices[v2]);
            let j = [
                [p1[0] - p0[0], p2[0] - p0[0]],
                [p1[1] - p0[1], p2[1] - p0[1]],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv_jt = [
                [j[1][1] / det, -j[1][0] / det],
                [-j[0][1] / det, j[0][0] / det],
            ];
            TriGeom {
                nodes,
                inv_jt,
                det: det.abs(),
            }
        })
        .collect()
}

/// Reference fields for error measurement.
pub struct ReferenceFields<'a> {
    pub velocity: &'a dyn Fn(f64, [f64; 2]) -> [f64; 2],
    pub gradient: &'a dyn Fn(f64, [f64; 2]) -> [[f64; 2]; 2],
    pub pressure: &'a dyn Fn(f64, [f64; 2]) -> f64,
}

/// Integrates the trajectory's error against arbitrary reference fields.
/// Trapezoid in time over the grid nodes; degree-6 triangle and degree-9
/// edge rules in space.
pub fn measure_against(
    spaces: &FunctionSpaces,
    grid: &TimeGrid,
    traj: &StateTrajectory,
    window: (f64, f64),
    fields: &ReferenceFields,
) -> ErrorNorms {
    let geoms = tri_geoms(spaces);
    let tri_rule = triangle_rule_deg6();
    let mesh = &spaces.mesh;

    // Shape tables are identical on every triangle; evaluate them once.
    let p2_table: Vec<[f64; 6]> = tri_rule.points.iter().map(|&[x, e]| p2_values(x, e)).collect();
    let grad_table: Vec<[[f64; 2]; 6]> =
        tri_rule.points.iter().map(|&[x, e]| p2_ref_grads(x, e)).collect();
    let p1_table: Vec<[f64; 3]> = tri_rule.points.iter().map(|&[x, e]| p1_values(x, e)).collect();

    let weights = grid.trapezoid_weights();
    let mut vel_l2_sq = 0.0;
    let mut vel_h1_sq = 0.0;
    let mut pre_l2_sq = 0.0;

    for (n, &w_t) in weights.iter().enumerate() {
        let t = grid.time(n);
        let u = &traj.velocity[n];
        let p = (n > 0).then(|| &traj.pressure[n - 1]);
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        let mut pl2 = 0.0;
        for (geom, &[v0, v1, v2]) in geoms.iter().zip(&mesh.triangles) {
            let (q0, q1, q2) = (mesh.vertices[v0], mesh.vertices[v1], mesh.vertices[v2]);
            for (k, &w_q) in tri_rule.weights.iter().enumerate() {
                let sh = &p2_table[k];
                let gr = &grad_table[k];
                let bary = &p1_table[k];
                let pos = [
                    bary[0] * q0[0] + bary[1] * q1[0] + bary[2] * q2[0],
                    bary[0] * q0[1] + bary[1] * q1[1] + bary[2] * q2[1],
                ];

                let mut uh = [0.0f64; 2];
                let mut guh = [[0.0f64; 2]; 2];
                for (i, &node) in geom.nodes.iter().enumerate() {
                    let gx = geom.inv_jt[0][0] * gr[i][0] + geom.inv_jt[0][1] * gr[i][1];
                    let gy = geom.inv_jt[1][0] * gr[i][0] + geom.inv_jt[1][1] * gr[i][1];
                    for c in 0..2 {
                        let coef = u[2 * node + c];
                        uh[c] += coef * sh[i];
                        guh[c][0] += coef * gx;
                        guh[c][1] += coef * gy;
                    }
                }

                let ue = (fields.velocity)(t, pos);
                let ge = (fields.gradient)(t, pos);
                let scale = w_q * geom.det;
                let dv = (uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2);
                let mut dg = 0.0;
                for c in 0..2 {
                    dg += (guh[c][0] - ge[c][0]).powi(2) + (guh[c][1] - ge[c][1]).powi(2);
                }
                l2 += scale * dv;
                h1 += scale * (dv + dg);
                if let Some(p) = p {
                    let ph = bary[0] * p[v0] + bary[1] * p[v1] + bary[2] * p[v2];
                    pl2 += scale * (ph - (fields.pressure)(t, pos)).powi(2);
                }
            }
        }
        vel_l2_sq += w_t * l2;
        vel_h1_sq += w_t * h1;
        pre_l2_sq += w_t * pl2;
    }

    // Trace error over the measured window, selecting edges exactly like
    // the trace operator does.
    let edge_rule = edge_rule_deg9();
    let tol = 1e-12 * mesh.height;
    let included: Vec<&EdgeTrace> = spaces
        .inlet_edges
        .iter()
        .filter(|e| e.arc_start < window.1 - tol && e.arc_start + e.len > window.0 + tol)
        .collect();
    let mut trace_sq = 0.0;
    for (n, &w_t) in weights.iter().enumerate() {
        let t = grid.time(n);
        let u = &traj.velocity[n];
        let mut acc = 0.0;
        for edge in &included {
            for (&s, &w_q) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let sh = EdgeTrace::shape_values(s);
                let pos = edge.point(s);
                let mut uh = [0.0f64; 2];
                for (i, &node) in edge.nodes.iter().enumerate() {
                    uh[0] += sh[i] * u[2 * node];
                    uh[1] += sh[i] * u[2 * node + 1];
                }
                let ue = (fields.velocity)(t, pos);
                acc += w_q * edge.len * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            }
        }
        trace_sq += w_t * acc;
    }

    ErrorNorms {
        velocity_l2: vel_l2_sq.max(0.0).sqrt(),
        velocity_h1: vel_h1_sq.max(0.0).sqrt(),
        pressure_l2: pre_l2_sq.max(0.0).sqrt(),
        trace_l2: trace_sq.max(0.0).sqrt(),
    }
}

/// Error norms against the manufactured solution.
pub fn measure_errors(
    spaces: &FunctionSpaces,
    grid: &TimeGrid,
    traj: &StateTrajectory,
    window: (f64, f64),
    ms: &ManufacturedSolution,
) -> ErrorNorms {
    measure_against(
        spaces,
        grid,
        traj,
        window,
        &ReferenceFields {
            velocity: &|t, p| ms.velocity(t, p),
            gradient: &|t, p| ms.velocity_gradient(t, p),
            pressure: &|t, p| ms.pressure(t, p),
        },
    )
}

fn manufactured_of(config: &ExperimentConfig) -> Result<ManufacturedSolution> {
    match config.data {
        DataSpec::Manufactured { q_value } => Ok(ManufacturedSolution {
            length: config.geometry.length,
            height: config.geometry.height,
            t_final: config.time.t_final,
            q_value,
        }),
        _ => Err(Error::Config {
            key: "data".into(),
            message: "the convergence study needs manufactured data".into(),
        }),
    }
}

/// A segment-constant coefficient basis valid on every refinement level.
fn constant_coefficient(
    segments: u32,
    t_final: f64,
    value: f64,
) -> Result<RobinCoefficient> {
    let basis = RobinBasis::new(
        vec![0.0, t_final],
        vec![vec![0.0]; segments as usize],
    )?;
    Ok(RobinCoefficient::constant(Arc::new(basis), value))
}

/// Solves the manufactured problem on a ladder of meshes with the step
/// count growing fourfold per level, and fits error rates against the mesh
/// size.
pub fn spatial_study(config: &ExperimentConfig) -> Result<SpatialReport> {
    config.validate()?;
    let ms = manufactured_of(config)?;
    let g = &config.geometry;
    let q = constant_coefficient(g.outlet_segments, config.time.t_final, ms.q_value)?;
    let window = (config.measurement.window[0], config.measurement.window[1]);

    let mut levels = Vec::with_capacity(config.convergence.spatial_levels);
    for level in 0..config.convergence.spatial_levels {
        let nx = g.nx << level;
        let ny = g.ny << level;
        let n_steps = config.time.n_steps << (2 * level);
        let mesh = build_channel_mesh(g.length, g.height, nx, ny, g.outlet_segments)?;
        let spaces = FunctionSpaces::new(Arc::new(mesh), DirichletPolicy::NoSlipLateral)?;
        let ops = crate::assemble::assemble_static(&Arc::new(spaces));
        let grid = TimeGrid::new(config.time.t_final, n_steps)?;
        let data = config.data.build(g, &config.time);
        let traj = solve_forward(&ops, &data, &q, &grid)?;
        let h = ((g.length / nx as f64).powi(2) + (g.height / ny as f64).powi(2)).sqrt();
        levels.push(SpatialLevel {
            level,
            h,
            n_steps,
            errors: measure_errors(&ops.spaces, &grid, &traj, window, &ms),
        });
    }

    let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let pick = |f: &dyn Fn(&ErrorNorms) -> f64| -> Vec<f64> {
        levels.iter().map(|l| f(&l.errors)).collect()
    };
    Ok(SpatialReport {
        velocity_l2_rate: fit_log_slope(&hs, &pick(&|e| e.velocity_l2)),
        velocity_h1_rate: fit_log_slope(&hs, &pick(&|e| e.velocity_h1)),
        pressure_l2_rate: fit_log_slope(&hs, &pick(&|e| e.pressure_l2)),
        trace_rate: fit_log_slope(&hs, &pick(&|e| e.trace_l2)),
        levels,
    })
}

/// Solves the manufactured problem on one mesh across the configured step
/// ladder and fits the consecutive-difference rate against the step size.
pub fn temporal_study(config: &ExperimentConfig) -> Result<TemporalReport> {
    config.validate()?;
    let ms = manufactured_of(config)?;
    let g = &config.geometry;
    let q = constant_coefficient(g.outlet_segments, config.time.t_final, ms.q_value)?;

    let nx = g.nx << g.refinements;
    let ny = g.ny << g.refinements;
    let mesh = build_channel_mesh(g.length, g.height, nx, ny, g.outlet_segments)?;
    let spaces = FunctionSpaces::new(Arc::new(mesh), DirichletPolicy::NoSlipLateral)?;
    let ops = crate::assemble::assemble_static(&Arc::new(spaces));
    let data = config.data.build(g, &config.time);

    let steps = config.convergence.temporal_steps.clone();
    let mut solutions = Vec::with_capacity(steps.len());
    for &n in &steps {
        let grid = TimeGrid::new(config.time.t_final, n)?;
        solutions.push((grid, solve_forward(&ops, &data, &q, &grid)?));
    }

    let mut gaps = Vec::with_capacity(steps.len() - 1);
    let mut dts = Vec::with_capacity(steps.len() - 1);
    for pair in solutions.windows(2) {
        let (coarse_grid, coarse) = &pair[0];
        let (fine_grid, fine) = &pair[1];
        let stride = fine_grid.n_steps / coarse_grid.n_steps;
        let mut acc = 0.0;
        for (n, &w) in coarse_grid.trapezoid_weights().iter().enumerate() {
            let d = &fine.velocity[n * stride] - &coarse.velocity[n];
            acc += w * (ops.mass_v.quadratic_form(&d, &d) + ops.stiffness.quadratic_form(&d, &d));
        }
        gaps.push(acc.max(0.0).sqrt());
        dts.push(coarse_grid.dt());
    }

    Ok(TemporalReport {
        rate: fit_log_slope(&dts, &gaps),
        steps,
        gaps,
        dts,
    })
}
