//! Taylor-Hood function spaces on a channel mesh.
//!
//! Velocity lives in vector P2 (values at vertices and edge midpoints, two
//! interleaved components per node), pressure in P1 (values at vertices).
//! The no-slip policy clamps every velocity node on the lateral wall;
//! natural conditions on the inlet and outlet leave the pressure space
//! unconstrained and free of a nullspace.
//!
//! Local P2 node order on a triangle `(v0, v1, v2)` is the three vertices
//! followed by the midpoints of the edges opposite each vertex.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

/// P1 shape values at a reference point.
pub fn p1_values(xi: f64, eta: f64) -> [f64; 3] {
    [1.0 - xi - eta, xi, eta]
}

/// P2 shape values at a reference point.
pub fn p2_values(xi: f64, eta: f64) -> [f64; 6] {
    let l = [1.0 - xi - eta, xi, eta];
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// P2 shape gradients at a reference point, in reference coordinates.
pub fn p2_ref_grads(xi: f64, eta: f64) -> [[f64; 2]; 6] {
    let l = [1.0 - xi - eta, xi, eta];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let vertex = |i: usize| {
        [
            (4.0 * l[i] - 1.0) * dl[i][0],
            (4.0 * l[i] - 1.0) * dl[i][1],
        ]
    };
    let edge = |i: usize, j: usize| {
        [
            4.0 * (l[i] * dl[j][0] + l[j] * dl[i][0]),
            4.0 * (l[i] * dl[j][1] + l[j] * dl[i][1]),
        ]
    };
    [
        vertex(0),
        vertex(1),
        vertex(2),
        edge(1, 2),
        edge(2, 0),
        edge(0, 1),
    ]
}

/// Velocity constraint policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletPolicy {
    /// Clamp every velocity node on the lateral wall (the physical setup).
    NoSlipLateral,
    /// No constraints; used by oracle tests that integrate over everything.
    Unconstrained,
}

/// A boundary edge with its P2 trace nodes ordered along the wall arc.
#[derive(Debug, Clone)]
pub struct EdgeTrace {
    /// `[start vertex, end vertex, midpoint node]`, start before end in arc.
    pub nodes: [usize; 3],
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub len: f64,
    /// Wall arc of `start`; segment-local on the outlet.
    pub arc_start: f64,
    /// Outlet segment, `0` elsewhere.
    pub segment: u32,
    /// Index into `mesh.boundary_edges`.
    pub edge_index: usize,
}

impl EdgeTrace {
    /// Physical point at edge parameter `s` in `[0, 1]`.
    pub fn point(&self, s: f64) -> [f64; 2] {
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }

    /// Quadratic trace shape values at edge parameter `s`, ordered like
    /// `nodes`.
    pub fn shape_values(s: f64) -> [f64; 3] {
        [
            (1.0 - s) * (1.0 - 2.0 * s),
            s * (2.0 * s - 1.0),
            4.0 * s * (1.0 - s),
        ]
    }
}

/// Taylor-Hood space pair with constraint bookkeeping.
#[derive(Debug)]
pub struct FunctionSpaces {
    pub mesh: Arc<Mesh>,
    pub policy: DirichletPolicy,
    /// Velocity nodes: vertices first, then edge midpoints.
    pub n_nodes: usize,
    /// Per-triangle global velocity nodes in local P2 order.
    pub tri_nodes: Vec<[usize; 6]>,
    /// Physical position of every velocity node.
    pub node_positions: Vec<[f64; 2]>,
    /// Per-node no-slip flag.
    pub dirichlet: Vec<bool>,
    /// Free velocity dofs (interleaved components), ascending.
    pub free_dofs: Vec<usize>,
    /// Full velocity dof to free slot.
    pub free_of_full: Vec<Option<usize>>,
    pub inlet_edges: Vec<EdgeTrace>,
    pub outlet_edges: Vec<EdgeTrace>,
    /// Sorted unique velocity nodes appearing on outlet edges.
    pub outlet_nodes: Vec<usize>,
}

impl FunctionSpaces {
    pub fn new(mesh: Arc<Mesh>, policy: DirichletPolicy) -> Result<FunctionSpaces> {
        let nv = mesh.vertices.len();

        // Enumerate undirected edges in first-encounter order.
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_pairs: Vec<(usize, usize)> = Vec::new();
        let mut edge_of = |a: usize, b: usize, pairs: &mut Vec<(usize, usize)>| -> usize {
            let key = (a.min(b), a.max(b));
            *edge_ids.entry(key).or_insert_with(|| {
                pairs.push(key);
                pairs.len() - 1
            })
        };

        let mut tri_nodes = Vec::with_capacity(mesh.triangles.len());
        for &[v0, v1, v2] in &mesh.triangles {
            let e0 = edge_of(v1, v2, &mut edge_pairs);
            let e1 = edge_of(v2, v0, &mut edge_pairs);
            let e2 = edge_of(v0, v1, &mut edge_pairs);
            tri_nodes.push([v0, v1, v2, nv + e0, nv + e1, nv + e2]);
        }
        let n_nodes = nv + edge_pairs.len();

        let mut node_positions = Vec::with_capacity(n_nodes);
        node_positions.extend(mesh.vertices.iter().copied());
        for &(a, b) in &edge_pairs {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            node_positions.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }

        let midpoint_node = |a: usize, b: usize| -> Result<usize> {
            let key = (a.min(b), a.max(b));
            edge_ids
                .get(&key)
                .map(|&e| nv + e)
                .ok_or_else(|| Error::Mesh(format!("boundary edge ({a}, {b}) not in any triangle")))
        };

        let mut dirichlet = vec![false; n_nodes];
        if policy == DirichletPolicy::NoSlipLateral {
            for edge in &mesh.boundary_edges {
                if edge.tag == BoundaryTag::Lateral {
                    let [a, b] = edge.vertices;
                    dirichlet[a] = true;
                    dirichlet[b] = true;
                    dirichlet[midpoint_node(a, b)?] = true;
                }
            }
        }

        let mut free_dofs = Vec::new();
        let mut free_of_full = vec![None; 2 * n_nodes];
        for node in 0..n_nodes {
            if !dirichlet[node] {
                for c in 0..2 {
                    free_of_full[2 * node + c] = Some(free_dofs.len());
                    free_dofs.push(2 * node + c);
                }
            }
        }

        // Wall traces, ordered by arc. Edge endpoints are reordered so that
        // `start` has the smaller wall arc (ascending y on the vertical
        // walls).
        let build_traces = |ids: &[usize], arcs: &dyn Fn(usize) -> (u32, f64)| -> Result<Vec<EdgeTrace>> {
            let mut traces = Vec::with_capacity(ids.len());
            for &edge_index in ids {
                let edge = &mesh.boundary_edges[edge_index];
                let [a, b] = edge.vertices;
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                let (lo, hi) = if pa[1] <= pb[1] { (a, b) } else { (b, a) };
                let (plo, phi) = (mesh.vertices[lo], mesh.vertices[hi]);
                let len = mesh.edge_length(edge);
                let (segment, arc_start) = arcs(edge_index);
                traces.push(EdgeTrace {
                    nodes: [lo, hi, midpoint_node(a, b)?],
                    start: plo,
                    end: phi,
                    len,
                    arc_start,
                    segment,
                    edge_index,
                });
            }
            Ok(traces)
        };

        let inlet_ids = mesh.boundary_edges_by_tag(BoundaryTag::Inlet)?;
        let inlet_edges = build_traces(&inlet_ids, &|e| {
            let [a, b] = mesh.boundary_edges[e].vertices;
            let lo = mesh.vertices[a][1].min(mesh.vertices[b][1]);
            (0, lo)
        })?;

        let outlet_arcs = mesh.outlet_arcs()?;
        let arc_of: HashMap<usize, (u32, f64)> = outlet_arcs
            .iter()
            .map(|a| (a.edge, (a.segment, a.arc_start)))
            .collect();
        let outlet_ids: Vec<usize> = outlet_arcs.iter().map(|a| a.edge).collect();
        let outlet_edges = build_traces(&outlet_ids, &|e| arc_of[&e])?;

        let mut outlet_nodes: Vec<usize> =
            outlet_edges.iter().flat_map(|t| t.nodes).collect();
        outlet_nodes.sort_unstable();
        outlet_nodes.dedup();

        Ok(FunctionSpaces {
            mesh,
            policy,
            n_nodes,
            tri_nodes,
            node_positions,
            dirichlet,
            free_dofs,
            free_of_full,
            inlet_edges,
            outlet_edges,
            outlet_nodes,
        })
    }

    /// Full velocity dimension (both components, constrained included).
    pub fn velocity_dim(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn pressure_dim(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Gathers the free entries of a full velocity vector.
    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        assert_eq!(full.len(), self.velocity_dim());
        DVector::from_fn(self.n_free(), |i, _| full[self.free_dofs[i]])
    }

    /// Scatters free values into a full vector, zeros on constrained dofs.
    pub fn scatter(&self, free: &DVector<f64>) -> DVector<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut full = DVector::zeros(self.velocity_dim());
        for (i, &dof) in self.free_dofs.iter().enumerate() {
            full[dof] = free[i];
        }
        full
    }

    /// Nodal interpolation of a velocity field, honoring the constraints.
    pub fn interpolate_velocity(&self, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> DVector<f64> {
        let mut full = DVector::zeros(self.velocity_dim());
        for node in 0..self.n_nodes {
            if !self.dirichlet[node] {
                let v = f(self.node_positions[node]);
                full[2 * node] = v[0];
                full[2 * node + 1] = v[1];
            }
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;

    fn spaces(nx: usize, ny: usize) -> FunctionSpaces {
        let mesh = Arc::new(build_channel_mesh(2.0, 1.0, nx, ny, 2).unwrap());
        FunctionSpaces::new(mesh, DirichletPolicy::NoSlipLateral).unwrap()
    }

    #[test]
    fn node_and_constraint_counts() {
        // 4 x 2 grid: 15 vertices, 30 edges (Euler: E = V + F - 1), so 45
        // velocity nodes. The lateral wall holds 9 nodes top and bottom.
        let sp = spaces(4, 2);
        assert_eq!(sp.n_nodes, 45);
        assert_eq!(sp.velocity_dim(), 90);
        assert_eq!(sp.pressure_dim(), 15);
        let clamped = sp.dirichlet.iter().filter(|&&d| d).count();
        assert_eq!(clamped, 18);
        assert_eq!(sp.n_free(), 2 * (45 - 18));
    }

    #[test]
    fn dirichlet_marks_exactly_the_lateral_wall() {
        let sp = spaces(4, 2);
        for node in 0..sp.n_nodes {
            let [_, y] = sp.node_positions[node];
            let on_wall = y == 0.0 || y == 1.0;
            assert_eq!(sp.dirichlet[node], on_wall, "node {node} at y={y}");
        }
    }

    #[test]
    fn p2_shapes_are_interpolatory_and_sum_to_one() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (0.0, 0.5), (0.5, 0.0)];
        for (i, &(xi, eta)) in pts.iter().enumerate() {
            let vals = p2_values(xi, eta);
            for (j, &v) in vals.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-14, "N{j} at node {i}");
            }
        }
        for &(xi, eta) in &[(0.2, 0.3), (0.1, 0.05), (0.4, 0.55)] {
            let vals = p2_values(xi, eta);
            assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let grads = p2_ref_grads(xi, eta);
            let (mut gx, mut gy) = (0.0, 0.0);
            for g in grads {
                gx += g[0];
                gy += g[1];
            }
            assert!(gx.abs() < 1e-13 && gy.abs() < 1e-13);
        }
    }

    #[test]
    fn p2_gradients_match_finite_differences() {
        let (xi, eta) = (0.23, 0.41);
        let h = 1e-6;
        let grads = p2_ref_grads(xi, eta);
        let vx0 = p2_values(xi - h, eta);
        let vx1 = p2_values(xi + h, eta);
        let vy0 = p2_values(xi, eta - h);
        let vy1 = p2_values(xi, eta + h);
        for j in 0..6 {
            let fdx = (vx1[j] - vx0[j]) / (2.0 * h);
            let fdy = (vy1[j] - vy0[j]) / (2.0 * h);
            assert!((grads[j][0] - fdx).abs() < 1e-8);
            assert!((grads[j][1] - fdy).abs() < 1e-8);
        }
    }

    #[test]
    fn p2_reproduces_quadratics_exactly() {
        let mesh = Arc::new(build_channel_mesh(2.0, 1.0, 3, 2, 1).unwrap());
        let sp = FunctionSpaces::new(mesh.clone(), DirichletPolicy::Unconstrained).unwrap();
        let f = |p: [f64; 2]| p[0] * p[0] + 3.0 * p[0] * p[1] - p[1] * p[1] + p[0] - 2.0 * p[1] + 1.0;
        // Nodal values.
        let nodal: Vec<f64> = (0..sp.n_nodes).map(|n| f(sp.node_positions[n])).collect();
        // Evaluate inside each triangle via the shape functions.
        for (t, tri) in sp.tri_nodes.iter().enumerate() {
            let [v0, v1, v2] = mesh.triangles[t];
            let (p0, p1, p2) = (mesh.vertices[v0], mesh.vertices[v1], mesh.vertices[v2]);
            for &(xi, eta) in &[(0.25, 0.25), (0.6, 0.2), (0.1, 0.7)] {
                let x = p0[0] + xi * (p1[0] - p0[0]) + eta * (p2[0] - p0[0]);
                let y = p0[1] + xi * (p1[1] - p0[1]) + eta * (p2[1] - p0[1]);
                let vals = p2_values(xi, eta);
                let interp: f64 = (0..6).map(|k| vals[k] * nodal[tri[k]]).sum();
                assert!((interp - f([x, y])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wall_traces_are_ordered_and_complete() {
        let sp = spaces(4, 4);
        assert_eq!(sp.inlet_edges.len(), 4);
        assert_eq!(sp.outlet_edges.len(), 4);
        for w in sp.inlet_edges.windows(2) {
            assert!(w[0].arc_start < w[1].arc_start);
        }
        for trace in &sp.inlet_edges {
            assert_eq!(trace.start[0], 0.0);
            assert_eq!(trace.end[0], 0.0);
            assert!(trace.start[1] < trace.end[1]);
            let mid = sp.node_positions[trace.nodes[2]];
            assert!((mid[1] - 0.5 * (trace.start[1] + trace.end[1])).abs() < 1e-12);
        }
        // Outlet arcs restart at each segment.
        assert_eq!(sp.outlet_edges[0].segment, 1);
        assert_eq!(sp.outlet_edges[2].segment, 2);
        assert!(sp.outlet_edges[2].arc_start.abs() < 1e-12);
        // 4 edges share 3 interior vertices: 5 vertices + 4 midpoints.
        assert_eq!(sp.outlet_nodes.len(), 9);
    }

    #[test]
    fn restrict_and_scatter_are_inverse_on_free_dofs() {
        let sp = spaces(4, 2);
        let full = DVector::from_fn(sp.velocity_dim(), |i, _| i as f64);
        let free = sp.restrict(&full);
        let back = sp.scatter(&free);
        for (i, &dof) in sp.free_dofs.iter().enumerate() {
            assert_eq!(free[i], full[dof]);
            assert_eq!(back[dof], full[dof]);
        }
        for node in 0..sp.n_nodes {
            if sp.dirichlet[node] {
                assert_eq!(back[2 * node], 0.0);
                assert_eq!(back[2 * node + 1], 0.0);
            }
        }
    }
}
