//! The finite-dimensional Robin coefficient space and its admissible box.
//!
//! Coefficients live on the outlet wall and may vary in time. The basis is a
//! tensor product of hat functions: hats on a time knot grid `0 = s_0 < ...
//! < s_P = T` times piecewise-linear hats on each outlet segment's arc,
//! with spatial knots at the segment's mesh vertices. Both factors form a
//! partition of unity and are interpolatory at their knots, so a coefficient
//! vector is exactly the grid of nodal values and the sup-norm distance
//! between two coefficients is the largest coefficient gap.
//!
//! Basis index `j = r * S + offset(segment) + k` runs time-major, where `S`
//! is the total spatial node count, `r` the time knot, and `k` the local
//! spatial knot within the segment.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Tensor hat basis for Robin coefficients on the outlet wall.
#[derive(Debug, Clone, PartialEq)]
pub struct RobinBasis {
    time_knots: Vec<f64>,
    /// Per-segment local arc knots; a single knot means the basis is
    /// constant along that segment.
    segment_knots: Vec<Vec<f64>>,
    spatial_offsets: Vec<usize>,
    spatial_count: usize,
}

impl RobinBasis {
    /// Builds a basis from explicit knot grids.
    ///
    /// Time knots must be strictly increasing and start at zero; each
    /// segment needs strictly increasing knots spanning `[0, len]` (or a
    /// single knot for a segment-constant factor).
    pub fn new(time_knots: Vec<f64>, segment_knots: Vec<Vec<f64>>) -> Result<Self> {
        if time_knots.len() < 2 {
            return Err(Error::Config {
                key: "parameter_space.time_knots".into(),
                message: "need at least two time knots".into(),
            });
        }
        if time_knots[0] != 0.0 || !time_knots.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config {
                key: "parameter_space.time_knots".into(),
                message: "time knots must be strictly increasing from 0".into(),
            });
        }
        if segment_knots.is_empty() {
            return Err(Error::Config {
                key: "parameter_space".into(),
                message: "no outlet segments".into(),
            });
        }
        for (s, knots) in segment_knots.iter().enumerate() {
            let ok = match knots.len() {
                0 => false,
                1 => true,
                _ => knots[0] == 0.0 && knots.windows(2).all(|w| w[0] < w[1]),
            };
            if !ok {
                return Err(Error::Config {
                    key: "parameter_space".into(),
                    message: format!("segment {} has an invalid spatial knot grid", s + 1),
                });
            }
        }
        let mut spatial_offsets = Vec::with_capacity(segment_knots.len());
        let mut spatial_count = 0;
        for knots in &segment_knots {
            spatial_offsets.push(spatial_count);
            spatial_count += knots.len();
        }
        Ok(RobinBasis { time_knots, segment_knots, spatial_offsets, spatial_count })
    }

    /// Basis induced by a mesh: spatial knots at the outlet vertices of each
    /// segment, `time_knot_count` equispaced time knots on `[0, t_final]`.
    pub fn from_mesh(mesh: &Mesh, time_knot_count: usize, t_final: f64) -> Result<Self> {
        if t_final <= 0.0 || !t_final.is_finite() {
            return Err(Error::Config {
                key: "time.t_final".into(),
                message: format!("final time must be positive, got {t_final}"),
            });
        }
        let arcs = mesh.outlet_arcs()?;
        let mut segment_knots = vec![Vec::new(); mesh.outlet_segments as usize];
        for arc in &arcs {
            let knots = &mut segment_knots[(arc.segment - 1) as usize];
            if knots.is_empty() {
                knots.push(arc.arc_start);
            }
            knots.push(arc.arc_start + arc.len);
        }
        if segment_knots.iter().any(Vec::is_empty) {
            return Err(Error::Mesh("an outlet segment has no edges".into()));
        }
        let time_knots = (0..time_knot_count)
            .map(|r| t_final * r as f64 / (time_knot_count.max(2) - 1) as f64)
            .collect();
        RobinBasis::new(time_knots, segment_knots)
    }

    /// Total basis dimension `M`.
    pub fn dim(&self) -> usize {
        self.time_knots.len() * self.spatial_count
    }

    /// Number of spatial nodes across all segments.
    pub fn spatial_dim(&self) -> usize {
        self.spatial_count
    }

    pub fn time_knots(&self) -> &[f64] {
        &self.time_knots
    }

    pub fn segment_knots(&self) -> &[Vec<f64>] {
        &self.segment_knots
    }

    pub fn t_final(&self) -> f64 {
        *self.time_knots.last().expect("nonempty")
    }

    /// Decomposes a basis index into `(time knot, segment, local knot)`.
    pub fn split_index(&self, j: usize) -> (usize, u32, usize) {
        assert!(j < self.dim());
        let r = j / self.spatial_count;
        let mut k = j % self.spatial_count;
        let mut segment = 0u32;
        for (s, knots) in self.segment_knots.iter().enumerate() {
            if k < knots.len() {
                segment = s as u32 + 1;
                break;
            }
            k -= knots.len();
        }
        (r, segment, k)
    }

    /// Value of the hat on `knots[k]` at `x` (clamped to the knot span).
    fn hat(knots: &[f64], k: usize, x: f64) -> f64 {
        if knots.len() == 1 {
            return 1.0;
        }
        let x = x.clamp(knots[0], *knots.last().expect("nonempty"));
        if k > 0 && x >= knots[k - 1] && x <= knots[k] {
            if knots[k] == x {
                1.0
            } else {
                (x - knots[k - 1]) / (knots[k] - knots[k - 1])
            }
        } else if k + 1 < knots.len() && x >= knots[k] && x <= knots[k + 1] {
            (knots[k + 1] - x) / (knots[k + 1] - knots[k])
        } else {
            0.0
        }
    }

    /// Evaluates basis function `j` at time `t`, outlet segment `segment`,
    /// local arc `arc`.
    pub fn evaluate_basis(&self, j: usize, t: f64, segment: u32, arc: f64) -> f64 {
        let (r, seg_j, k) = self.split_index(j);
        if seg_j != segment {
            return 0.0;
        }
        let knots = &self.segment_knots[(segment - 1) as usize];
        Self::hat(&self.time_knots, r, t) * Self::hat(knots, k, arc)
    }

    /// Spatial coefficient slice at time `t`: the time-interpolated nodal
    /// values, indexed like the spatial part of the basis. Equal time rows
    /// produce bitwise-equal slices, which downstream factorization caches
    /// rely on.
    pub fn spatial_slice(&self, coeffs: &DVector<f64>, t: f64) -> Vec<f64> {
        let s = self.spatial_count;
        let t = t.clamp(0.0, self.t_final());
        let r = match self.time_knots.binary_search_by(|k| k.partial_cmp(&t).expect("finite")) {
            Ok(i) => i.min(self.time_knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.time_knots.len() - 2),
        };
        let (t0, t1) = (self.time_knots[r], self.time_knots[r + 1]);
        let theta = (t - t0) / (t1 - t0);
        let lo = coeffs.as_slice();
        let (row0, row1) = (&lo[r * s..(r + 1) * s], &lo[(r + 1) * s..(r + 2) * s]);
        if row0 == row1 || theta == 0.0 {
            return row0.to_vec();
        }
        if theta == 1.0 {
            return row1.to_vec();
        }
        row0.iter()
            .zip(row1)
            .map(|(&a, &b)| (1.0 - theta) * a + theta * b)
            .collect()
    }

    /// Evaluates a spatial slice at `(segment, arc)`.
    pub fn evaluate_slice(&self, slice: &[f64], segment: u32, arc: f64) -> f64 {
        let knots = &self.segment_knots[(segment - 1) as usize];
        let off = self.spatial_offsets[(segment - 1) as usize];
        (0..knots.len())
            .map(|k| slice[off + k] * Self::hat(knots, k, arc))
            .sum()
    }
}

/// A Robin coefficient: a coefficient vector over a shared basis.
#[derive(Debug, Clone)]
pub struct RobinCoefficient {
    pub basis: Arc<RobinBasis>,
    pub coeffs: DVector<f64>,
}

impl RobinCoefficient {
    pub fn new(basis: Arc<RobinBasis>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "coefficient vector has length {}, basis dimension is {}",
                coeffs.len(),
                basis.dim()
            )));
        }
        Ok(RobinCoefficient { basis, coeffs })
    }

    pub fn constant(basis: Arc<RobinBasis>, value: f64) -> Self {
        let coeffs = DVector::from_element(basis.dim(), value);
        RobinCoefficient { basis, coeffs }
    }

    /// Nodal interpolant of `f(t, segment, arc)`: the basis is interpolatory
    /// at its knots, so sampling there reproduces `f` exactly on the knot
    /// grid and piecewise-linearly in between.
    pub fn interpolate(basis: Arc<RobinBasis>, f: impl Fn(f64, u32, f64) -> f64) -> Self {
        let coeffs = DVector::from_fn(basis.dim(), |j, _| {
            let (r, segment, k) = basis.split_index(j);
            let t = basis.time_knots()[r];
            let arc = basis.segment_knots()[(segment - 1) as usize][k];
            f(t, segment, arc)
        });
        RobinCoefficient { basis, coeffs }
    }

    /// Nodal evaluation at `(t, segment, arc)` with `arc` local to the
    /// segment; `t` is clamped to `[0, T]`.
    pub fn evaluate(&self, t: f64, segment: u32, arc: f64) -> f64 {
        let slice = self.basis.spatial_slice(&self.coeffs, t);
        self.basis.evaluate_slice(&slice, segment, arc)
    }

    /// Evaluation at a physical point, which must lie on the outlet wall.
    pub fn evaluate_at(&self, mesh: &Mesh, t: f64, point: [f64; 2]) -> Result<f64> {
        let (segment, arc) = mesh.locate_on_outlet(point)?;
        Ok(self.evaluate(t, segment, arc))
    }

    /// Sup-norm distance over `(0,T) x outlet`. Exact for this interpolatory
    /// partition-of-unity basis: it equals the largest coefficient gap.
    pub fn linf_distance(&self, other: &RobinCoefficient) -> Result<f64> {
        self.check_same_basis(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `self + s * dir` on the shared basis.
    pub fn add_scaled(&self, dir: &RobinCoefficient, s: f64) -> Result<RobinCoefficient> {
        self.check_same_basis(dir)?;
        Ok(RobinCoefficient {
            basis: Arc::clone(&self.basis),
            coeffs: &self.coeffs + s * &dir.coeffs,
        })
    }

    /// Whether all time rows coincide, i.e. the coefficient is static.
    pub fn is_time_constant(&self) -> bool {
        let s = self.basis.spatial_dim();
        let c = self.coeffs.as_slice();
        c.chunks(s).all(|row| row == &c[..s])
    }

    pub fn check_same_basis(&self, other: &RobinCoefficient) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis) || self.basis == other.basis {
            Ok(())
        } else {
            Err(Error::BasisMismatch(
                "coefficients live on different bases".into(),
            ))
        }
    }

    /// Exports the coefficient together with its knot grids.
    pub fn export(&self) -> CoefficientExport {
        CoefficientExport {
            time_knots: self.basis.time_knots().to_vec(),
            segment_knots: self.basis.segment_knots().to_vec(),
            coeffs: self.coeffs.as_slice().to_vec(),
        }
    }
}

/// Serialized form of a coefficient, sufficient to rebuild it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientExport {
    pub time_knots: Vec<f64>,
    pub segment_knots: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
}

impl CoefficientExport {
    pub fn into_coefficient(self) -> Result<RobinCoefficient> {
        let basis = Arc::new(RobinBasis::new(self.time_knots, self.segment_knots)?);
        RobinCoefficient::new(basis, DVector::from_vec(self.coeffs))
    }
}

/// The admissible box `[m, q_max]^M` with `m > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub lower: f64,
    pub upper: f64,
}

impl AdmissibleSet {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && lower > 0.0) {
            return Err(Error::Config {
                key: "parameter_space.lower".into(),
                message: format!("lower bound m must be strictly positive, got {lower}"),
            });
        }
        if !(upper.is_finite() && upper >= lower) {
            return Err(Error::Config {
                key: "parameter_space.upper".into(),
                message: format!("upper bound must be at least the lower bound, got {upper}"),
            });
        }
        Ok(AdmissibleSet { lower, upper })
    }

    /// Coefficientwise clamp onto the box; the sup-norm projection.
    pub fn project(&self, q: &RobinCoefficient) -> RobinCoefficient {
        let coeffs = q.coeffs.map(|c| c.clamp(self.lower, self.upper));
        RobinCoefficient { basis: q.basis.clone(), coeffs }
    }

    pub fn contains(&self, q: &RobinCoefficient) -> bool {
        q.coeffs.iter().all(|&c| c >= self.lower && c <= self.upper)
    }

    /// The box center, a natural bias-free initial guess.
    pub fn midpoint(&self, basis: Arc<RobinBasis>) -> RobinCoefficient {
        RobinCoefficient::constant(basis, 0.5 * (self.lower + self.upper))
    }

    /// Draws `count` coefficients with iid uniform entries; deterministic in
    /// the seed.
    pub fn sample(&self, basis: &Arc<RobinBasis>, count: usize, seed: u64) -> Vec<RobinCoefficient> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let coeffs = DVector::from_fn(basis.dim(), |_, _| {
                    self.lower + (self.upper - self.lower) * rng.random::<f64>()
                });
                RobinCoefficient { basis: basis.clone(), coeffs }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;

    fn default_basis() -> Arc<RobinBasis> {
        let mesh = build_channel_mesh(2.0, 1.0, 16, 8, 2).unwrap();
        Arc::new(RobinBasis::from_mesh(&mesh, 2, 1.0).unwrap())
    }

    #[test]
    fn mesh_basis_has_the_expected_dimension() {
        // ny = 8 over two segments: 4 edges, hence 5 vertex knots per
        // segment; two time knots double that.
        let basis = default_basis();
        assert_eq!(basis.spatial_dim(), 10);
        assert_eq!(basis.dim(), 20);
        assert_eq!(basis.time_knots(), &[0.0, 1.0]);
        for knots in basis.segment_knots() {
            assert_eq!(knots.len(), 5);
            assert!((knots.last().unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_a_partition_of_unity() {
        let basis = default_basis();
        for &t in &[0.0, 0.1, 0.5, 0.73, 1.0] {
            for segment in 1..=2u32 {
                for i in 0..=20 {
                    let arc = 0.5 * i as f64 / 20.0;
                    let total: f64 = (0..basis.dim())
                        .map(|j| basis.evaluate_basis(j, t, segment, arc))
                        .sum();
                    assert!(
                        (total - 1.0).abs() < 1e-12,
                        "sum {total} at t={t}, segment={segment}, arc={arc}"
                    );
                }
            }
        }
    }

    #[test]
    fn basis_is_interpolatory_at_its_nodes() {
        let basis = default_basis();
        for j in 0..basis.dim() {
            let (r, seg, k) = basis.split_index(j);
            let t = basis.time_knots()[r];
            let arc = basis.segment_knots()[(seg - 1) as usize][k];
            for i in 0..basis.dim() {
                let v = basis.evaluate_basis(i, t, seg, arc);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "phi_{i} at node {j}: {v}");
            }
        }
    }

    #[test]
    fn evaluation_is_linear_in_the_coefficients() {
        let basis = default_basis();
        let set = AdmissibleSet::new(0.5, 5.0).unwrap();
        let qs = set.sample(&basis, 2, 11);
        let alpha = 0.37;
        let combo = RobinCoefficient {
            basis: basis.clone(),
            coeffs: &qs[0].coeffs + alpha * &qs[1].coeffs,
        };
        for &(t, seg, arc) in &[(0.2, 1u32, 0.11), (0.9, 2, 0.49), (0.0, 1, 0.0)] {
            let lhs = combo.evaluate(t, seg, arc);
            let rhs = qs[0].evaluate(t, seg, arc) + alpha * qs[1].evaluate(t, seg, arc);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn sup_distance_matches_dense_sampling() {
        // Oracle: dense sampling on a grid that contains every knot pair.
        let basis = default_basis();
        let set = AdmissibleSet::new(0.5, 5.0).unwrap();
        let qs = set.sample(&basis, 2, 42);
        let fast = qs[0].linf_distance(&qs[1]).unwrap();

        let mut dense: f64 = 0.0;
        let mut times: Vec<f64> = basis.time_knots().to_vec();
        for i in 0..=40 {
            times.push(i as f64 / 40.0);
        }
        for &t in &times {
            for segment in 1..=2u32 {
                let knots = &basis.segment_knots()[(segment - 1) as usize];
                let mut arcs: Vec<f64> = knots.clone();
                let len = *knots.last().unwrap();
                for i in 0..=50 {
                    arcs.push(len * i as f64 / 50.0);
                }
                for &arc in &arcs {
                    let gap = (qs[0].evaluate(t, segment, arc)
                        - qs[1].evaluate(t, segment, arc))
                    .abs();
                    dense = dense.max(gap);
                }
            }
        }
        assert!(
            (fast - dense).abs() < 1e-12,
            "coefficient gap {fast} vs dense max {dense}"
        );
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let basis = default_basis();
        let set = AdmissibleSet::new(0.5, 5.0).unwrap();
        let mut coeffs = DVector::from_element(basis.dim(), 1.0);
        coeffs[0] = -3.0;
        coeffs[5] = 7.5;
        let q = RobinCoefficient::new(basis.clone(), coeffs).unwrap();
        let p = set.project(&q);
        assert!(set.contains(&p));
        assert_eq!(p.coeffs[0], 0.5);
        assert_eq!(p.coeffs[5], 5.0);
        assert_eq!(p.coeffs[1], 1.0);
        let pp = set.project(&p);
        assert_eq!(p.coeffs, pp.coeffs);
    }

    #[test]
    fn sampling_is_deterministic_and_stays_in_the_box() {
        let basis = default_basis();
        let set = AdmissibleSet::new(0.5, 5.0).unwrap();
        let a = set.sample(&basis, 5, 123);
        let b = set.sample(&basis, 5, 123);
        for (qa, qb) in a.iter().zip(&b) {
            assert_eq!(qa.coeffs, qb.coeffs);
            assert!(set.contains(qa));
        }
        let c = set.sample(&basis, 5, 124);
        assert_ne!(a[0].coeffs, c[0].coeffs);

        // Law of large numbers: the empirical mean of many draws sits near
        // the box center (4 sigma of the mean of 10^4 uniform draws).
        let many = set.sample(&basis, 500, 7);
        let n = (500 * basis.dim()) as f64;
        let mean: f64 = many.iter().map(|q| q.coeffs.sum()).sum::<f64>() / n;
        let sigma = (5.0 - 0.5) / (12.0f64).sqrt() / n.sqrt();
        assert!((mean - 2.75).abs() < 4.0 * sigma, "mean {mean}");
    }

    #[test]
    fn lower_bound_must_be_positive() {
        let err = AdmissibleSet::new(0.0, 5.0).unwrap_err();
        assert!(err.to_string().contains("strictly positive"));
        assert!(err.is_config_error());
    }

    #[test]
    fn mismatched_bases_are_rejected() {
        let basis_a = default_basis();
        let mesh = build_channel_mesh(2.0, 1.0, 16, 8, 1).unwrap();
        let basis_b = Arc::new(RobinBasis::from_mesh(&mesh, 2, 1.0).unwrap());
        let qa = RobinCoefficient::constant(basis_a, 1.0);
        let qb = RobinCoefficient::constant(basis_b, 1.0);
        assert!(matches!(qa.linf_distance(&qb), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn time_constant_detection_and_slices() {
        let basis = default_basis();
        let q = RobinCoefficient::constant(basis.clone(), 2.0);
        assert!(q.is_time_constant());
        let s0 = basis.spatial_slice(&q.coeffs, 0.25);
        let s1 = basis.spatial_slice(&q.coeffs, 0.75);
        assert_eq!(s0, s1);

        let mut coeffs = q.coeffs.clone();
        coeffs[basis.spatial_dim()] = 3.0;
        let qt = RobinCoefficient::new(basis.clone(), coeffs).unwrap();
        assert!(!qt.is_time_constant());
        // Linear interpolation between the rows.
        let v0 = qt.evaluate(0.0, 1, 0.0);
        let v1 = qt.evaluate(1.0, 1, 0.0);
        let vm = qt.evaluate(0.5, 1, 0.0);
        assert!((vm - 0.5 * (v0 + v1)).abs() < 1e-12);
    }

    #[test]
    fn physical_point_evaluation_checks_the_wall() {
        let mesh = build_channel_mesh(2.0, 1.0, 16, 8, 2).unwrap();
        let basis = Arc::new(RobinBasis::from_mesh(&mesh, 2, 1.0).unwrap());
        let q = RobinCoefficient::constant(basis, 2.5);
        let v = q.evaluate_at(&mesh, 0.3, [2.0, 0.8]).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        assert!(q.evaluate_at(&mesh, 0.3, [0.5, 0.8]).is_err());
    }

    #[test]
    fn export_round_trips() {
        let basis = default_basis();
        let set = AdmissibleSet::new(0.5, 5.0).unwrap();
        let q = &set.sample(&basis, 1, 9)[0];
        let json = serde_json::to_string(&q.export()).unwrap();
        let back: CoefficientExport = serde_json::from_str(&json).unwrap();
        let qb = back.into_coefficient().unwrap();
        assert_eq!(q.coeffs, qb.coeffs);
        assert_eq!(*q.basis, *qb.basis);
    }
}
