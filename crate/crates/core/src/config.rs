//! Experiment configuration: the TOML schema, its validation, and the
//! builder that turns a parsed file into assembled operators and data.
//!
//! Every section has defaults, so a minimal file (or an empty one) describes
//! the standard desk-scale channel. Validation happens eagerly at parse time
//! and every violation names the offending key.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_static, trace_matrix, AssembledOperators, TraceOperator};
use crate::data::{ManufacturedSolution, ProblemData};
use crate::error::{Error, Result};
use crate::forward::{extract_trace, solve_forward, MeasurementTrace, TimeGrid};
use crate::inversion::{add_noise, transfer_trace, Regularization};
use crate::mesh::{build_channel_mesh, Mesh};
use crate::params::{AdmissibleSet, RobinBasis, RobinCoefficient};
use crate::spaces::{DirichletPolicy, FunctionSpaces};

/// Channel geometry and mesh resolution.
///
/// The coefficient basis always lives on the `nx` by `ny` grid; the solve
/// mesh is that grid refined `refinements` times. Keeping the parameter grid
/// at or below the solve resolution is what `refinements > 0` buys: the
/// inverse problem sees a mesh-independent parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Outlet segment count; `ny` must be a multiple of it.
    pub outlet_segments: u32,
    /// Uniform refinements applied to the solve mesh only.
    pub refinements: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            length: 2.0,
            height: 1.0,
            nx: 16,
            ny: 8,
            outlet_segments: 2,
            refinements: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub n_steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_final: 1.0,
            n_steps: 32,
        }
    }
}

/// The admissible box and the time resolution of the coefficient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterSpaceConfig {
    /// Number of time knots (at least two, endpoints included).
    pub time_knots: usize,
    /// Pointwise lower bound; must be strictly positive.
    pub lower: f64,
    pub upper: f64,
}

impl Default for ParameterSpaceConfig {
    fn default() -> Self {
        ParameterSpaceConfig {
            time_knots: 2,
            lower: 0.5,
            upper: 5.0,
        }
    }
}

/// Measured window on the inlet wall, as a `[lo, hi]` arc interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub window: [f64; 2],
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig { window: [0.0, 1.0] }
    }
}

/// Problem data: initial velocity, inlet traction, and outlet load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// All data zero; the solution is identically zero.
    Zero,
    /// Pulsed parabolic inlet traction with a Poiseuille initial state.
    Standard {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_u0_amplitude")]
        u0_amplitude: f64,
    },
    /// Closed-form solution with known velocity and pressure, for
    /// convergence studies. Its outlet load assumes the constant
    /// coefficient `q_value`.
    Manufactured {
        #[serde(default = "default_q_value")]
        q_value: f64,
    },
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_u0_amplitude() -> f64 {
    0.5
}

fn default_q_value() -> f64 {
    2.75
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Standard {
            amplitude: 1.0,
            u0_amplitude: 0.5,
        }
    }
}

impl DataSpec {
    pub fn build(&self, geometry: &GeometryConfig, time: &TimeConfig) -> ProblemData {
        match *self {
            DataSpec::Zero => ProblemData::zero(),
            DataSpec::Standard {
                amplitude,
                u0_amplitude,
            } => ProblemData::standard(
                geometry.length,
                geometry.height,
                time.t_final,
                amplitude,
                u0_amplitude,
            ),
            DataSpec::Manufactured { q_value } => {
                ProblemData::manufactured(ManufacturedSolution {
                    length: geometry.length,
                    height: geometry.height,
                    t_final: time.t_final,
                    q_value,
                })
            }
        }
    }
}

/// A Robin coefficient given symbolically, realized on the experiment's
/// basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant { value: f64 },
    /// `base + (amplitude + drift t) sin(pi s)` with `s` the arc fraction
    /// along the outlet: a profile that vanishes at the outlet corners,
    /// where no-slip suppresses all sensitivity.
    Smooth { base: f64, amplitude: f64, drift: f64 },
    /// One uniform draw from the admissible box.
    Sampled { seed: u64 },
    /// Center of the admissible box.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub coefficient: CoefficientSpec,
    /// Every how many steps to dump a full velocity field snapshot
    /// alongside the trace series; zero disables snapshots.
    pub snapshot_every: usize,
    /// How many admissible coefficients the energy diagnostic samples.
    pub energy_samples: usize,
    pub energy_seed: u64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            coefficient: CoefficientSpec::Constant { value: 2.75 },
            snapshot_every: 0,
            energy_samples: 20,
            energy_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Number of random base-point and direction pairs to test.
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { n_pairs: 3, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Synthetic truth used when no measured trace is supplied.
    pub target: CoefficientSpec,
    pub init: CoefficientSpec,
    pub regularization: Regularization,
    /// Relative measurement-norm noise added to the synthetic trace.
    pub noise_level: f64,
    pub noise_seed: u64,
    pub max_iterations: usize,
    /// Generate the synthetic data on a once-refined mesh with doubled
    /// time resolution instead of the inversion's own discretization.
    pub crime_free: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            target: CoefficientSpec::Smooth {
                base: 2.75,
                amplitude: 0.9,
                drift: 0.4,
            },
            init: CoefficientSpec::Midpoint,
            regularization: Regularization::None,
            noise_level: 0.0,
            noise_seed: 0,
            max_iterations: 50,
            crime_free: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Random pairs in the stability sweep.
    pub n_pairs: usize,
    /// Pairs in the identifiability scan.
    pub scan_pairs: usize,
    /// Sampled coefficients in the hypothesis check.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_pairs: 100,
            scan_pairs: 50,
            n_samples: 5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Mesh levels in the spatial study; the time step scales with the
    /// square of the mesh size across levels.
    pub spatial_levels: usize,
    /// Step-count ladder for the temporal study on the finest mesh; each
    /// entry must divide the next so solutions share time nodes.
    pub temporal_steps: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            spatial_levels: 3,
            temporal_steps: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub time: TimeConfig,
    pub parameter_space: ParameterSpaceConfig,
    pub measurement: MeasurementConfig,
    pub data: DataSpec,
    pub forward: ForwardConfig,
    pub sensitivity: SensitivityConfig,
    pub inversion: InversionConfig,
    pub probe: ProbeConfig,
    pub convergence: ConvergenceConfig,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn require(cond: bool, key: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(config_err(key, message))
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML file. An unreadable path is a
    /// configuration error: the file is user input.
    pub fn parse(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical serialized form: defaults filled in, keys in schema order.
    /// Hashing this string names output directories injectively in the
    /// config content.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        require(
            g.length.is_finite() && g.length > 0.0,
            "geometry.length",
            "channel length must be positive and finite",
        )?;
        require(
            g.height.is_finite() && g.height > 0.0,
            "geometry.height",
            "channel height must be positive and finite",
        )?;
        require(g.nx >= 1, "geometry.nx", "need at least one cell across")?;
        require(g.ny >= 1, "geometry.ny", "need at least one cell up")?;
        require(
            g.outlet_segments >= 1,
            "geometry.outlet_segments",
            "need at least one outlet segment",
        )?;
        require(
            g.ny % g.outlet_segments as usize == 0,
            "geometry.ny",
            "ny must be a multiple of the outlet segment count",
        )?;

        require(
            self.time.t_final.is_finite() && self.time.t_final > 0.0,
            "time.t_final",
            "final time must be positive and finite",
        )?;
        require(self.time.n_steps >= 1, "time.n_steps", "need at least one step")?;

        let p = &self.parameter_space;
        require(
            p.time_knots >= 2,
            "parameter_space.time_knots",
            "the coefficient needs at least two time knots",
        )?;
        require(
            p.lower.is_finite() && p.lower > 0.0,
            "parameter_space.lower",
            "the coefficient lower bound must be strictly positive",
        )?;
        require(
            p.upper.is_finite() && p.upper > p.lower,
            "parameter_space.upper",
            "the upper bound must exceed the lower bound",
        )?;

        let [lo, hi] = self.measurement.window;
        require(
            lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= g.height,
            "measurement.window",
            "the measured window must be a nonempty interval inside the inlet wall",
        )?;

        if let DataSpec::Manufactured { q_value } = self.data {
            require(
                q_value.is_finite() && q_value > 0.0,
                "data.q_value",
                "the manufactured coefficient must be positive",
            )?;
        }

        require(
            self.forward.energy_samples >= 1,
            "forward.energy_samples",
            "need at least one sample",
        )?;

        require(
            self.sensitivity.n_pairs >= 1,
            "sensitivity.n_pairs",
            "need at least one pair",
        )?;

        let inv = &self.inversion;
        require(
            inv.noise_level.is_finite() && inv.noise_level >= 0.0,
            "inversion.noise_level",
            "the noise level is a nonnegative fraction",
        )?;
        require(
            inv.max_iterations >= 1,
            "inversion.max_iterations",
            "need at least one iteration",
        )?;

        require(self.probe.n_pairs >= 1, "probe.n_pairs", "need at least one pair")?;
        require(
            self.probe.scan_pairs >= 1,
            "probe.scan_pairs",
            "need at least one pair",
        )?;
        require(
            self.probe.n_samples >= 1,
            "probe.n_samples",
            "need at least one sample",
        )?;

        let c = &self.convergence;
        require(
            c.spatial_levels >= 2,
            "convergence.spatial_levels",
            "rates need at least two levels",
        )?;
        require(
            c.temporal_steps.len() >= 2,
            "convergence.temporal_steps",
            "rates need at least two step counts",
        )?;
        for w in c.temporal_steps.windows(2) {
            require(
                w[0] >= 1 && w[1] > w[0] && w[1] % w[0] == 0,
                "convergence.temporal_steps",
                "step counts must increase and each must divide the next",
            )?;
        }
        Ok(())
    }

    /// Assembles the experiment: mesh, spaces, operators, basis, data.
    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let g = &self.geometry;
        let coarse = build_channel_mesh(g.length, g.height, g.nx, g.ny, g.outlet_segments)?;
        let grid = TimeGrid::new(self.time.t_final, self.time.n_steps)?;
        let basis = Arc::new(RobinBasis::from_mesh(&coarse, self.parameter_space.time_knots, grid.t_final)?);

        let mut solve_mesh = coarse;
        for _ in 0..g.refinements {
            solve_mesh = solve_mesh.refine();
        }
        let spaces = Arc::new(FunctionSpaces::new(
            Arc::new(solve_mesh),
            DirichletPolicy::NoSlipLateral,
        )?);
        let ops = assemble_static(&spaces);
        let trace_op = trace_matrix(&spaces, (self.measurement.window[0], self.measurement.window[1]))?;

        let data = self.data.build(g, &self.time);
        data.validate(g.length, g.height)?;
        let set = AdmissibleSet::new(self.parameter_space.lower, self.parameter_space.upper)?;

        Ok(Experiment {
            config: self.clone(),
            grid,
            basis,
            set,
            ops,
            trace_op,
            data,
        })
    }
}

/// A fully assembled experiment, ready to drive any of the studies.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: TimeGrid,
    pub basis: Arc<RobinBasis>,
    pub set: AdmissibleSet,
    pub ops: AssembledOperators,
    pub trace_op: TraceOperator,
    pub data: ProblemData,
}

impl Experiment {
    /// Realizes a symbolic coefficient on the experiment's basis.
    pub fn realize(&self, spec: &CoefficientSpec) -> RobinCoefficient {
        match *spec {
            CoefficientSpec::Constant { value } => {
                RobinCoefficient::constant(self.basis.clone(), value)
            }
            CoefficientSpec::Smooth {
                base,
                amplitude,
                drift,
            } => {
                let height = self.config.geometry.height;
                let seg_len = height / self.config.geometry.outlet_segments as f64;
                RobinCoefficient::interpolate(self.basis.clone(), move |t, segment, arc| {
                    let s = ((segment as f64 - 1.0) * seg_len + arc) / height;
                    base + (amplitude + drift * t) * (std::f64::consts::PI * s).sin()
                })
            }
            CoefficientSpec::Sampled { seed } => self.set.sample(&self.basis, 1, seed).remove(0),
            CoefficientSpec::Midpoint => self.set.midpoint(self.basis.clone()),
        }
    }

    /// Realizes a coefficient that must lie in the admissible box, naming
    /// the config key on violation.
    pub fn realize_admissible(&self, spec: &CoefficientSpec, key: &str) -> Result<RobinCoefficient> {
        let q = self.realize(spec);
        if self.set.contains(&q) {
            Ok(q)
        } else {
            Err(config_err(
                key,
                format!(
                    "the realized coefficient leaves the admissible box [{}, {}]",
                    self.set.lower, self.set.upper
                ),
            ))
        }
    }

    /// Synthesizes the measured trace for the configured inversion target:
    /// a forward solve on this discretization, or on a once-refined mesh
    /// with doubled time resolution in crime-free mode, plus optional
    /// seeded noise.
    pub fn synthesize_measurement(&self, q_true: &RobinCoefficient) -> Result<MeasurementTrace> {
        let inv = &self.config.inversion;
        let clean = if inv.crime_free {
            let fine_mesh: Mesh = self.ops.spaces.mesh.refine();
            let fine_spaces = Arc::new(FunctionSpaces::new(
                Arc::new(fine_mesh),
                DirichletPolicy::NoSlipLateral,
            )?);
            let fine_ops = assemble_static(&fine_spaces);
            let fine_grid = TimeGrid::new(self.grid.t_final, 2 * self.grid.n_steps)?;
            let fine_op = trace_matrix(
                &fine_spaces,
                (self.config.measurement.window[0], self.config.measurement.window[1]),
            )?;
            let data = self.config.data.build(&self.config.geometry, &self.config.time);
            let traj = solve_forward(&fine_ops, &data, q_true, &fine_grid)?;
            let fine_trace = extract_trace(&traj, &fine_op, &fine_grid)?;
            transfer_trace(&fine_trace, &fine_op, &self.trace_op, &self.grid)?
        } else {
            let traj = solve_forward(&self.ops, &self.data, q_true, &self.grid)?;
            extract_trace(&traj, &self.trace_op, &self.grid)?
        };
        Ok(add_noise(&clean, &self.trace_op, inv.noise_level, inv.noise_seed))
    }
}
