//! Structured triangulations of a rectangular channel.
//!
//! The channel occupies `[0, L] x [0, H]`. Its boundary is split into three
//! walls: the no-slip lateral wall (bottom and top), the inlet (left, where
//! the flux acts and measurements are taken), and the outlet (right), which
//! is divided into `N` contiguous segments of equal height. Each rectangular
//! cell is cut along its bottom-left to top-right diagonal, so a `nx x ny`
//! grid yields `(nx+1)(ny+1)` vertices and `2 nx ny` positively oriented
//! triangles.
//!
//! Boundary arcs are parameterized per wall: the inlet and each outlet
//! segment by ascending `y` (outlet arcs are local to their segment), the
//! lateral wall bottom-then-top by ascending `x`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Classification of a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryTag {
    /// Bottom and top walls; velocity is clamped to zero here.
    Lateral,
    /// Left wall.
    Inlet,
    /// Right wall, segment index in `1..=segments`.
    Outlet(u32),
}

/// A boundary edge together with its outward unit normal.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryEdge {
    /// Endpoint vertex indices.
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
    pub normal: [f64; 2],
}

/// An outlet edge located along its segment's arc, ordered by ascending arc.
#[derive(Debug, Clone, Copy)]
pub struct OutletArc {
    /// Index into `boundary_edges`.
    pub edge: usize,
    pub segment: u32,
    /// Arc coordinate of the lower end, local to the segment.
    pub arc_start: f64,
    pub len: f64,
}

/// Triangulation of the channel with tagged boundary edges.
#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, positively oriented.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub length: f64,
    pub height: f64,
    pub outlet_segments: u32,
}

/// Builds the structured channel mesh.
///
/// `ny` must be a positive multiple of `segments` so that every outlet
/// segment receives the same number of edges.
pub fn build_channel_mesh(
    length: f64,
    height: f64,
    nx: usize,
    ny: usize,
    segments: u32,
) -> Result<Mesh> {
    if !(length.is_finite() && length > 0.0 && height.is_finite() && height > 0.0) {
        return Err(Error::Mesh(format!(
            "channel dimensions must be positive and finite, got {length} x {height}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::Mesh(format!(
            "grid resolution must be at least 1 x 1, got {nx} x {ny}"
        )));
    }
    if segments == 0 || ny % segments as usize != 0 {
        return Err(Error::Mesh(format!(
            "ny ({ny}) must be a positive multiple of the outlet segment count ({segments})"
        )));
    }

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([length * i as f64 / nx as f64, height * j as f64 / ny as f64]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let rows_per_segment = ny / segments as usize;
    let mut boundary_edges = Vec::with_capacity(2 * nx + 2 * ny);
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(i, 0), vid(i + 1, 0)],
            tag: BoundaryTag::Lateral,
            normal: [0.0, -1.0],
        });
    }
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(i, ny), vid(i + 1, ny)],
            tag: BoundaryTag::Lateral,
            normal: [0.0, 1.0],
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(0, j), vid(0, j + 1)],
            tag: BoundaryTag::Inlet,
            normal: [-1.0, 0.0],
        });
    }
    for j in 0..ny {
        let segment = (j / rows_per_segment) as u32 + 1;
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(nx, j), vid(nx, j + 1)],
            tag: BoundaryTag::Outlet(segment),
            normal: [1.0, 0.0],
        });
    }

    Ok(Mesh {
        vertices,
        triangles,
        boundary_edges,
        length,
        height,
        outlet_segments: segments,
    })
}

impl Mesh {
    /// Uniform refinement: every triangle splits into four at its edge
    /// midpoints. Boundary tags, normals, and the equal-split layout of the
    /// outlet wall are preserved. Original vertices keep their indices.
    pub fn refine(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint = std::collections::HashMap::new();
        let mut mid_of = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertices.len() - 1
            })
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[v0, v1, v2] in &self.triangles {
            let m01 = mid_of(v0, v1, &mut vertices);
            let m12 = mid_of(v1, v2, &mut vertices);
            let m20 = mid_of(v2, v0, &mut vertices);
            triangles.push([v0, m01, m20]);
            triangles.push([m01, v1, m12]);
            triangles.push([m20, m12, v2]);
            triangles.push([m01, m12, m20]);
        }

        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for edge in &self.boundary_edges {
            let [a, b] = edge.vertices;
            let m = mid_of(a, b, &mut vertices);
            boundary_edges.push(BoundaryEdge {
                vertices: [a, m],
                ..edge.clone()
            });
            boundary_edges.push(BoundaryEdge {
                vertices: [m, b],
                ..edge.clone()
            });
        }

        Mesh {
            vertices,
            triangles,
            boundary_edges,
            length: self.length,
            height: self.height,
            outlet_segments: self.outlet_segments,
        }
    }

    /// Signed double area of a triangle; positive for the stored orientation.
    pub fn double_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangles[tri];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    }

    /// Length of a boundary edge.
    pub fn edge_length(&self, edge: &BoundaryEdge) -> f64 {
        let [a, b] = edge.vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
    }

    /// Indices into `boundary_edges` carrying `tag`, ordered by ascending
    /// arc coordinate (bottom before top for the lateral wall).
    pub fn boundary_edges_by_tag(&self, tag: BoundaryTag) -> Result<Vec<usize>> {
        if let BoundaryTag::Outlet(i) = tag {
            if i == 0 || i > self.outlet_segments {
                return Err(Error::SegmentOutOfRange {
                    index: i,
                    count: self.outlet_segments,
                });
            }
        }
        let mut ids: Vec<usize> = (0..self.boundary_edges.len())
            .filter(|&e| self.boundary_edges[e].tag == tag)
            .collect();
        ids.sort_by(|&a, &b| {
            let (ka, kb) = (self.arc_sort_key(a), self.arc_sort_key(b));
            ka.partial_cmp(&kb).expect("finite arc keys")
        });
        Ok(ids)
    }

    /// Sort key `(wall, arc)` for a boundary edge: lateral edges sort by
    /// bottom-then-top and ascending `x`; inlet and outlet edges by
    /// ascending `y`.
    fn arc_sort_key(&self, edge: usize) -> (u8, f64) {
        let e = &self.boundary_edges[edge];
        let [a, b] = e.vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        match e.tag {
            BoundaryTag::Lateral => {
                let wall = if e.normal[1] < 0.0 { 0 } else { 1 };
                (wall, mid[0])
            }
            BoundaryTag::Inlet | BoundaryTag::Outlet(_) => (0, mid[1]),
        }
    }

    /// Height of one outlet segment.
    pub fn segment_length(&self, segment: u32) -> Result<f64> {
        if segment == 0 || segment > self.outlet_segments {
            return Err(Error::SegmentOutOfRange {
                index: segment,
                count: self.outlet_segments,
            });
        }
        Ok(self.height / f64::from(self.outlet_segments))
    }

    /// All outlet edges with their segment-local arc spans, ordered by
    /// `(segment, arc_start)`.
    pub fn outlet_arcs(&self) -> Result<Vec<OutletArc>> {
        let mut arcs = Vec::new();
        for segment in 1..=self.outlet_segments {
            let base = f64::from(segment - 1) * self.height / f64::from(self.outlet_segments);
            for edge in self.boundary_edges_by_tag(BoundaryTag::Outlet(segment))? {
                let [a, b] = self.boundary_edges[edge].vertices;
                let lo = self.vertices[a][1].min(self.vertices[b][1]);
                arcs.push(OutletArc {
                    edge,
                    segment,
                    arc_start: lo - base,
                    len: self.edge_length(&self.boundary_edges[edge]),
                });
            }
        }
        Ok(arcs)
    }

    /// Locates a point on the outlet wall, returning its segment and the
    /// segment-local arc coordinate. Points on an interior segment boundary
    /// belong to the upper segment.
    pub fn locate_on_outlet(&self, point: [f64; 2]) -> Result<(u32, f64)> {
        let tol = 1e-12 * self.length.max(self.height);
        let (x, y) = (point[0], point[1]);
        if (x - self.length).abs() > tol || !(-tol..=self.height + tol).contains(&y) {
            return Err(Error::NotOnOutlet(x, y));
        }
        let seg_len = self.height / f64::from(self.outlet_segments);
        let clamped = y.clamp(0.0, self.height);
        let raw = (clamped / seg_len).floor() as u32;
        let segment = raw.min(self.outlet_segments - 1) + 1;
        Ok((segment, clamped - f64::from(segment - 1) * seg_len))
    }

    /// Sum of all triangle areas.
    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| 0.5 * self.double_area(t)).sum()
    }

    /// Total length of the tagged boundary.
    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges.iter().map(|e| self.edge_length(e)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_normal_checks(mesh: &Mesh) {
        let centroid = |tri: &[usize; 3]| {
            let mut c = [0.0, 0.0];
            for &v in tri {
                c[0] += mesh.vertices[v][0] / 3.0;
                c[1] += mesh.vertices[v][1] / 3.0;
            }
            c
        };
        for edge in &mesh.boundary_edges {
            let [a, b] = edge.vertices;
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let t = [pb[0] - pa[0], pb[1] - pa[1]];
            let n = edge.normal;
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-12, "unit normal");
            assert!((t[0] * n[0] + t[1] * n[1]).abs() < 1e-12, "normal orthogonal to edge");
            let owner = mesh
                .triangles
                .iter()
                .find(|tri| tri.contains(&a) && tri.contains(&b))
                .expect("boundary edge belongs to a triangle");
            let c = centroid(owner);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let outward = (mid[0] - c[0]) * n[0] + (mid[1] - c[1]) * n[1];
            assert!(outward > 0.0, "normal points outward");
        }
    }

    fn conformity_checks(mesh: &Mesh) {
        use std::collections::HashMap;
        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *incidence.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary: std::collections::HashSet<(usize, usize)> = mesh
            .boundary_edges
            .iter()
            .map(|e| {
                let [a, b] = e.vertices;
                (a.min(b), a.max(b))
            })
            .collect();
        assert_eq!(boundary.len(), mesh.boundary_edges.len(), "no duplicate boundary edges");
        for (pair, count) in incidence {
            if boundary.contains(&pair) {
                assert_eq!(count, 1, "boundary edge in exactly one triangle");
            } else {
                assert_eq!(count, 2, "interior edge shared by exactly two triangles");
            }
        }
    }

    #[test]
    fn counts_match_for_the_documented_examples() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 1).unwrap();
        assert_eq!(mesh.vertices.len(), 15);
        assert_eq!(mesh.triangles.len(), 16);

        let tiny = build_channel_mesh(1.0, 1.0, 1, 1, 1).unwrap();
        assert_eq!(tiny.vertices.len(), 4);
        assert_eq!(tiny.triangles.len(), 2);
    }

    #[test]
    fn refinement_quadruples_triangles() {
        let tiny = build_channel_mesh(1.0, 1.0, 1, 1, 1).unwrap();
        assert_eq!(tiny.refine().triangles.len(), 8);

        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 1).unwrap();
        let twice = mesh.refine().refine();
        assert_eq!(twice.triangles.len(), 256);
    }

    #[test]
    fn refinement_matches_direct_construction_counts() {
        let refined = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap().refine();
        let direct = build_channel_mesh(2.0, 1.0, 8, 4, 2).unwrap();
        assert_eq!(refined.vertices.len(), direct.vertices.len());
        assert_eq!(refined.triangles.len(), direct.triangles.len());
        assert_eq!(refined.boundary_edges.len(), direct.boundary_edges.len());
    }

    #[test]
    fn area_and_perimeter_are_exact() {
        for mesh in [
            build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap(),
            build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap().refine(),
            build_channel_mesh(3.5, 0.7, 5, 6, 3).unwrap(),
        ] {
            let (l, h) = (mesh.length, mesh.height);
            assert!((mesh.total_area() - l * h).abs() < 1e-12);
            assert!((mesh.boundary_length() - 2.0 * (l + h)).abs() < 1e-12);
        }
    }

    #[test]
    fn triangles_are_positively_oriented() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap().refine();
        for t in 0..mesh.triangles.len() {
            assert!(mesh.double_area(t) > 0.0);
        }
    }

    #[test]
    fn normals_and_conformity_hold_after_refinement() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap();
        unit_normal_checks(&mesh);
        conformity_checks(&mesh);
        let fine = mesh.refine();
        unit_normal_checks(&fine);
        conformity_checks(&fine);
    }

    #[test]
    fn segment_count_must_divide_ny() {
        let err = build_channel_mesh(2.0, 1.0, 4, 2, 4).unwrap_err();
        assert!(err.to_string().contains("multiple of the outlet segment count"));
    }

    #[test]
    fn boundary_tags_partition_the_walls() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap();
        let lateral = mesh.boundary_edges_by_tag(BoundaryTag::Lateral).unwrap();
        let inlet = mesh.boundary_edges_by_tag(BoundaryTag::Inlet).unwrap();
        let out1 = mesh.boundary_edges_by_tag(BoundaryTag::Outlet(1)).unwrap();
        let out2 = mesh.boundary_edges_by_tag(BoundaryTag::Outlet(2)).unwrap();
        assert_eq!(lateral.len(), 8);
        assert_eq!(inlet.len(), 2);
        assert_eq!(out1.len(), 1);
        assert_eq!(out2.len(), 1);
        assert_eq!(
            lateral.len() + inlet.len() + out1.len() + out2.len(),
            mesh.boundary_edges.len()
        );

        // Inlet edges come back ordered by ascending y.
        let ys: Vec<f64> = inlet
            .iter()
            .map(|&e| {
                let [a, b] = mesh.boundary_edges[e].vertices;
                mesh.vertices[a][1].min(mesh.vertices[b][1])
            })
            .collect();
        assert!(ys.windows(2).all(|w| w[0] < w[1]));

        assert!(matches!(
            mesh.boundary_edges_by_tag(BoundaryTag::Outlet(3)),
            Err(Error::SegmentOutOfRange { index: 3, count: 2 })
        ));
    }

    #[test]
    fn outlet_arcs_tile_each_segment() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 4, 2).unwrap().refine();
        let arcs = mesh.outlet_arcs().unwrap();
        let seg_len = mesh.segment_length(1).unwrap();
        for segment in 1..=2 {
            let seg: Vec<&OutletArc> =
                arcs.iter().filter(|a| a.segment == segment).collect();
            assert_eq!(seg.len(), 4);
            assert!((seg[0].arc_start).abs() < 1e-12);
            for w in seg.windows(2) {
                assert!((w[0].arc_start + w[0].len - w[1].arc_start).abs() < 1e-12);
            }
            let last = seg.last().unwrap();
            assert!((last.arc_start + last.len - seg_len).abs() < 1e-12);
        }
    }

    #[test]
    fn outlet_point_location() {
        let mesh = build_channel_mesh(2.0, 1.0, 4, 2, 2).unwrap();
        let (seg, arc) = mesh.locate_on_outlet([2.0, 0.3]).unwrap();
        assert_eq!(seg, 1);
        assert!((arc - 0.3).abs() < 1e-12);
        let (seg, arc) = mesh.locate_on_outlet([2.0, 0.75]).unwrap();
        assert_eq!(seg, 2);
        assert!((arc - 0.25).abs() < 1e-12);
        // Interior segment boundaries belong to the upper segment.
        let (seg, arc) = mesh.locate_on_outlet([2.0, 0.5]).unwrap();
        assert_eq!(seg, 2);
        assert!(arc.abs() < 1e-12);
        // The top corner stays in the last segment.
        let (seg, arc) = mesh.locate_on_outlet([2.0, 1.0]).unwrap();
        assert_eq!(seg, 2);
        assert!((arc - 0.5).abs() < 1e-12);
        assert!(matches!(
            mesh.locate_on_outlet([1.5, 0.3]),
            Err(Error::NotOnOutlet(_, _))
        ));
    }
}
