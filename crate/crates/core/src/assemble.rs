//! Assembly of the Taylor-Hood bilinear forms and boundary functionals.
//!
//! All matrices are built on the full (unconstrained) dof numbering;
//! constraint elimination happens when the saddle system is formed. The
//! divergence block stores `-int psi div phi`, the sign that makes the
//! symmetric saddle system deliver the physical pressure.
//!
//! Interior rules are exact for every Taylor-Hood integrand; boundary data
//! is integrated with a degree-9 rule so that smooth flux profiles never
//! limit a measured convergence rate.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::params::RobinCoefficient;
use crate::quadrature::{edge_rule_deg5, edge_rule_deg9, triangle_rule_deg4};
use crate::sparse::{Coo, Csr};
use crate::spaces::{p1_values, p2_ref_grads, p2_values, EdgeTrace, FunctionSpaces};

/// Time-dependent boundary or body data: `(t, position) -> vector`.
pub type Field<'a> = &'a (dyn Fn(f64, [f64; 2]) -> [f64; 2] + Sync);

/// The time-independent operators of the discretization.
#[derive(Debug)]
pub struct AssembledOperators {
    pub spaces: Arc<FunctionSpaces>,
    /// Velocity mass, `2n x 2n`.
    pub mass_v: Csr,
    /// Full-gradient stiffness, `2n x 2n`.
    pub stiffness: Csr,
    /// Pressure-velocity coupling, `np x 2n`, entries `-int psi div phi`.
    pub divergence: Csr,
    /// Outlet boundary mass with unit Robin weight.
    pub outlet_mass: Csr,
}

/// Geometry of one triangle's affine map.
struct ElementMap {
    /// Physical gradient rows: `grad_phys = inv(J)^T grad_ref`.
    inv_jt: [[f64; 2]; 2],
    /// Jacobian determinant (twice the area, positive).
    det: f64,
}

fn element_map(spaces: &FunctionSpaces, tri: usize) -> ElementMap {
    let [v0, v1, v2] = spaces.mesh.triangles[tri];
    let (p0, p1, p2) = (
        spaces.mesh.vertices[v0],
        spaces.mesh.vertices[v1],
        spaces.mesh.vertices[v2],
    );
    let j = [
        [p1[0] - p0[0], p2[0] - p0[0]],
        [p1[1] - p0[1], p2[1] - p0[1]],
    ];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv_jt = [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ];
    ElementMap { inv_jt, det }
}

fn physical_grad(map: &ElementMap, g: [f64; 2]) -> [f64; 2] {
    [
        map.inv_jt[0][0] * g[0] + map.inv_jt[0][1] * g[1],
        map.inv_jt[1][0] * g[0] + map.inv_jt[1][1] * g[1],
    ]
}

/// Assembles the mass, stiffness, divergence, and unit-weight outlet mass.
pub fn assemble_static(spaces: &Arc<FunctionSpaces>) -> AssembledOperators {
    let nvel = spaces.velocity_dim();
    let np = spaces.pressure_dim();
    let rule = triangle_rule_deg4();

    let mut mass = Coo::new(nvel, nvel);
    let mut stiffness = Coo::new(nvel, nvel);
    let mut divergence = Coo::new(np, nvel);

    for tri in 0..spaces.mesh.triangles.len() {
        let map = element_map(spaces, tri);
        let nodes = spaces.tri_nodes[tri];
        let pressure_nodes = spaces.mesh.triangles[tri];

        let mut me = [[0.0f64; 6]; 6];
        let mut ke = [[0.0f64; 6]; 6];
        let mut de = [[[0.0f64; 2]; 6]; 3];

        for (pt, &w) in rule.points.iter().zip(&rule.weights) {
            let weight = w * map.det;
            let vals = p2_values(pt[0], pt[1]);
            let grads = p2_ref_grads(pt[0], pt[1]);
            let pvals = p1_values(pt[0], pt[1]);
            let mut phys = [[0.0f64; 2]; 6];
            for j in 0..6 {
                phys[j] = physical_grad(&map, grads[j]);
            }
            for a in 0..6 {
                for b in 0..6 {
                    me[a][b] += weight * vals[a] * vals[b];
                    ke[a][b] += weight * (phys[a][0] * phys[b][0] + phys[a][1] * phys[b][1]);
                }
            }
            for k in 0..3 {
                for j in 0..6 {
                    de[k][j][0] -= weight * pvals[k] * phys[j][0];
                    de[k][j][1] -= weight * pvals[k] * phys[j][1];
                }
            }
        }

        for a in 0..6 {
            for b in 0..6 {
                for c in 0..2 {
                    mass.push(2 * nodes[a] + c, 2 * nodes[b] + c, me[a][b]);
                    stiffness.push(2 * nodes[a] + c, 2 * nodes[b] + c, ke[a][b]);
                }
            }
        }
        for k in 0..3 {
            for j in 0..6 {
                for c in 0..2 {
                    divergence.push(pressure_nodes[k], 2 * nodes[j] + c, de[k][j][c]);
                }
            }
        }
    }

    let outlet_mass = outlet_mass_with(spaces, |_, _| 1.0);

    AssembledOperators {
        spaces: spaces.clone(),
        mass_v: mass.to_csr(),
        stiffness: stiffness.to_csr(),
        divergence: divergence.to_csr(),
        outlet_mass: outlet_mass.to_csr(),
    }
}

/// Assembles the outlet mass with an arbitrary scalar weight `(edge, s)`.
fn outlet_mass_with<F: Fn(&EdgeTrace, f64) -> f64>(spaces: &FunctionSpaces, weight: F) -> Coo {
    let rule = edge_rule_deg5();
    let mut coo = Coo::new(spaces.velocity_dim(), spaces.velocity_dim());
    for trace in &spaces.outlet_edges {
        let mut block = [[0.0f64; 3]; 3];
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let scale = w * trace.len * weight(trace, s);
            let sh = EdgeTrace::shape_values(s);
            for a in 0..3 {
                for b in 0..3 {
                    block[a][b] += scale * sh[a] * sh[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..2 {
                    coo.push(
                        2 * trace.nodes[a] + c,
                        2 * trace.nodes[b] + c,
                        block[a][b],
                    );
                }
            }
        }
    }
    coo
}

/// Checks that a coefficient's basis tiles the same outlet partition as the
/// mesh; every weighted outlet form below requires this.
pub fn check_basis_covers_outlet(spaces: &FunctionSpaces, q: &RobinCoefficient) -> Result<()> {
    if q.basis.segment_knots().len() != spaces.mesh.outlet_segments as usize {
        return Err(Error::BasisMismatch(format!(
            "coefficient basis covers {} outlet segments, mesh has {}",
            q.basis.segment_knots().len(),
            spaces.mesh.outlet_segments
        )));
    }
    Ok(())
}

/// Assembles the Robin boundary form `int_outlet q(t) u . v`.
pub fn assemble_robin_matrix(
    spaces: &FunctionSpaces,
    q: &RobinCoefficient,
    t: f64,
) -> Result<Csr> {
    check_basis_covers_outlet(spaces, q)?;
    let slice = q.basis.spatial_slice(&q.coeffs, t);
    let coo = outlet_mass_with(spaces, |trace, s| {
        q.basis
            .evaluate_slice(&slice, trace.segment, trace.arc_start + s * trace.len)
    });
    Ok(coo.to_csr())
}

/// Applies the `h`-weighted outlet mass to a full velocity vector without
/// materializing the matrix; the workhorse of the sensitivity loads.
pub fn apply_outlet_mass(
    spaces: &FunctionSpaces,
    h: &RobinCoefficient,
    t: f64,
    u_full: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_basis_covers_outlet(spaces, h)?;
    assert_eq!(u_full.len(), spaces.velocity_dim());
    let slice = h.basis.spatial_slice(&h.coeffs, t);
    let rule = edge_rule_deg5();
    let mut out = DVector::zeros(spaces.velocity_dim());
    for trace in &spaces.outlet_edges {
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let hv = h
                .basis
                .evaluate_slice(&slice, trace.segment, trace.arc_start + s * trace.len);
            let scale = w * trace.len * hv;
            let sh = EdgeTrace::shape_values(s);
            for c in 0..2 {
                let u_val: f64 = (0..3)
                    .map(|b| sh[b] * u_full[2 * trace.nodes[b] + c])
                    .sum();
                for a in 0..3 {
                    out[2 * trace.nodes[a] + c] += scale * sh[a] * u_val;
                }
            }
        }
    }
    Ok(out)
}

/// Assembles the boundary load `int_inlet g . v + int_outlet kappa . v`
/// at time `t`.
pub fn assemble_boundary_load(
    spaces: &FunctionSpaces,
    t: f64,
    g: Option<Field>,
    kappa: Option<Field>,
) -> DVector<f64> {
    let rule = edge_rule_deg9();
    let mut load = DVector::zeros(spaces.velocity_dim());
    let mut add_wall = |edges: &[EdgeTrace], field: Field| {
        for trace in edges {
            for (&s, &w) in rule.points.iter().zip(&rule.weights) {
                let value = field(t, trace.point(s));
                let scale = w * trace.len;
                let sh = EdgeTrace::shape_values(s);
                for a in 0..3 {
                    for c in 0..2 {
                        load[2 * trace.nodes[a] + c] += scale * sh[a] * value[c];
                    }
                }
            }
        }
    };
    if let Some(g) = g {
        add_wall(&spaces.inlet_edges, g);
    }
    if let Some(kappa) = kappa {
        add_wall(&spaces.outlet_edges, kappa);
    }
    load
}

/// Assembles the body load `int f . v` at time `t`.
pub fn assemble_body_load(spaces: &FunctionSpaces, t: f64, f: Field) -> DVector<f64> {
    let rule = triangle_rule_deg4();
    let mut load = DVector::zeros(spaces.velocity_dim());
    for tri in 0..spaces.mesh.triangles.len() {
        let map = element_map(spaces, tri);
        let nodes = spaces.tri_nodes[tri];
        let [v0, v1, v2] = spaces.mesh.triangles[tri];
        let (p0, p1, p2) = (
            spaces.mesh.vertices[v0],
            spaces.mesh.vertices[v1],
            spaces.mesh.vertices[v2],
        );
        for (pt, &w) in rule.points.iter().zip(&rule.weights) {
            let x = p0[0] + pt[0] * (p1[0] - p0[0]) + pt[1] * (p2[0] - p0[0]);
            let y = p0[1] + pt[0] * (p1[1] - p0[1]) + pt[1] * (p2[1] - p0[1]);
            let value = f(t, [x, y]);
            let weight = w * map.det;
            let vals = p2_values(pt[0], pt[1]);
            for a in 0..6 {
                for c in 0..2 {
                    load[2 * nodes[a] + c] += weight * vals[a] * value[c];
                }
            }
        }
    }
    load
}

/// Restriction of the velocity to the measured part of the inlet wall,
/// together with the boundary mass that defines the `L^2(Gamma)` norm.
#[derive(Debug, Clone)]
pub struct TraceOperator {
    /// Full velocity dof ids on the measured arc, two per node, ordered by
    /// ascending wall arc.
    pub dofs: Vec<usize>,
    /// The velocity nodes behind `dofs`, same order.
    pub nodes: Vec<usize>,
    /// Node positions, same order.
    pub positions: Vec<[f64; 2]>,
    /// Boundary mass over the local dofs.
    pub mass: DMatrix<f64>,
    /// Lower Cholesky factor of `mass`; `L^T v` turns trace values into
    /// plain Euclidean coordinates of the boundary norm.
    pub chol_l: DMatrix<f64>,
    /// The arc interval actually covered (snapped outward to whole edges).
    pub interval: (f64, f64),
}

/// Builds the trace operator for the arc interval `(lo, hi)` of the inlet
/// wall. The interval is snapped outward to whole mesh edges; edges that
/// merely touch it are excluded. Constrained (no-slip) nodes carry no
/// information and are dropped.
pub fn trace_matrix(spaces: &FunctionSpaces, interval: (f64, f64)) -> Result<TraceOperator> {
    let (lo, hi) = interval;
    let wall_len = spaces.mesh.height;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config {
            key: "measurement.gamma".into(),
            message: format!("invalid arc interval ({lo}, {hi})"),
        });
    }
    let tol = 1e-12 * wall_len;
    let included: Vec<&EdgeTrace> = spaces
        .inlet_edges
        .iter()
        .filter(|e| e.arc_start < hi - tol && e.arc_start + e.len > lo + tol)
        .collect();
    if included.is_empty() {
        return Err(Error::EmptyTrace(format!(
            "no inlet edges overlap the arc interval ({lo}, {hi})"
        )));
    }
    let snapped = (
        included
            .iter()
            .map(|e| e.arc_start)
            .fold(f64::INFINITY, f64::min),
        included
            .iter()
            .map(|e| e.arc_start + e.len)
            .fold(f64::NEG_INFINITY, f64::max),
    );

    // Nodes ordered by wall arc (ascending y on the inlet).
    let mut node_set: Vec<usize> = included
        .iter()
        .flat_map(|e| e.nodes)
        .filter(|&n| !spaces.dirichlet[n])
        .collect();
    node_set.sort_unstable();
    node_set.dedup();
    let mut nodes = node_set;
    nodes.sort_by(|&a, &b| {
        spaces.node_positions[a][1]
            .partial_cmp(&spaces.node_positions[b][1])
            .expect("finite positions")
    });

    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut mass = DMatrix::zeros(2 * nodes.len(), 2 * nodes.len());
    let rule = edge_rule_deg5();
    for trace in &included {
        let mut block = [[0.0f64; 3]; 3];
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let sh = EdgeTrace::shape_values(s);
            for a in 0..3 {
                for b in 0..3 {
                    block[a][b] += w * trace.len * sh[a] * sh[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                if let (Some(&ia), Some(&ib)) =
                    (local.get(&trace.nodes[a]), local.get(&trace.nodes[b]))
                {
                    for c in 0..2 {
                        mass[(2 * ia + c, 2 * ib + c)] += block[a][b];
                    }
                }
            }
        }
    }

    let dofs = nodes
        .iter()
        .flat_map(|&n| [2 * n, 2 * n + 1])
        .collect();
    let positions = nodes.iter().map(|&n| spaces.node_positions[n]).collect();
    let chol_l = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Assembly("boundary mass is not positive definite".into()))?
        .l();
    Ok(TraceOperator {
        dofs,
        nodes,
        positions,
        mass,
        chol_l,
        interval: snapped,
    })
}

impl TraceOperator {
    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    /// Gathers the trace values from a full velocity vector.
    pub fn extract(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dofs.len(), |i, _| full[self.dofs[i]])
    }

    /// Squared `L^2(Gamma)` norm of local trace values.
    pub fn norm_sq(&self, local: &DVector<f64>) -> f64 {
        (local.transpose() * &self.mass * local)[(0, 0)].max(0.0)
    }
}
