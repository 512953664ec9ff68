//! Problem data: initial velocity, boundary fluxes, and body force.
//!
//! Data fields are plain closures over physical coordinates so that both
//! config-driven presets and analytic reference solutions fit one shape.
//! The initial velocity must be divergence-free; `validate` enforces that
//! by dense sampling of the analytic divergence supplied with it.

use crate::error::{Error, Result};

/// Spatial vector field.
pub type SpaceField = Box<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
/// Space-time vector field `(t, position) -> vector`.
pub type SpaceTimeField = Box<dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync>;

/// The data of one forward problem.
pub struct ProblemData {
    pub initial_velocity: SpaceField,
    /// Analytic divergence of `initial_velocity`, used for validation.
    pub initial_divergence: Box<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
    /// Inlet flux `g` on the left wall.
    pub inlet_flux: SpaceTimeField,
    /// Robin load `kappa` on the outlet wall.
    pub robin_load: SpaceTimeField,
    /// Optional body force.
    pub body_force: Option<SpaceTimeField>,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("body_force", &self.body_force.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    /// Entirely homogeneous data.
    pub fn zero() -> ProblemData {
        ProblemData {
            initial_velocity: Box::new(|_| [0.0, 0.0]),
            initial_divergence: Box::new(|_| 0.0),
            inlet_flux: Box::new(|_, _| [0.0, 0.0]),
            robin_load: Box::new(|_, _| [0.0, 0.0]),
            body_force: None,
        }
    }

    /// The standard experiment: a pulsed parabolic inlet traction
    /// `amplitude (1 + sin(2 pi t / T) / 2) (4 y (H - y) / H^2, 0)`, an
    /// initial Poiseuille stream of size `u0_amplitude`, homogeneous Robin
    /// load, no body force.
    ///
    /// The initial profile is chosen to be nonzero on the outlet wall: the
    /// outlet coefficient acts on the solution through `q u` there, so a
    /// flow that reaches the outlet from the first instant keeps every time
    /// knot of the coefficient observable.
    pub fn standard(
        _length: f64,
        height: f64,
        t_final: f64,
        amplitude: f64,
        u0_amplitude: f64,
    ) -> ProblemData {
        let h = height;
        let profile = move |t: f64, p: [f64; 2]| {
            let pulse = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * t / t_final).sin();
            [amplitude * pulse * 4.0 * p[1] * (h - p[1]) / (h * h), 0.0]
        };
        let poiseuille =
            move |p: [f64; 2]| [u0_amplitude * 4.0 * p[1] * (h - p[1]) / (h * h), 0.0];
        ProblemData {
            initial_velocity: Box::new(poiseuille),
            initial_divergence: Box::new(|_| 0.0),
            inlet_flux: Box::new(profile),
            robin_load: Box::new(|_, _| [0.0, 0.0]),
            body_force: None,
        }
    }

    /// Data whose exact solution is `ManufacturedSolution`.
    pub fn manufactured(ms: ManufacturedSolution) -> ProblemData {
        ProblemData {
            initial_velocity: Box::new(move |p| ms.velocity(0.0, p)),
            initial_divergence: Box::new(|_| 0.0),
            inlet_flux: Box::new(move |t, p| ms.inlet_traction(t, p)),
            robin_load: Box::new(move |t, p| ms.robin_load(t, p)),
            body_force: Some(Box::new(move |t, p| ms.body_force(t, p))),
        }
    }

    /// Checks that the initial velocity is divergence-free, by dense
    /// sampling of the supplied analytic divergence over the channel.
    pub fn validate(&self, length: f64, height: f64) -> Result<()> {
        let mut worst: f64 = 0.0;
        for i in 0..=40 {
            for j in 0..=40 {
                let p = [length * i as f64 / 40.0, height * j as f64 / 40.0];
                worst = worst.max((self.initial_divergence)(p).abs());
            }
        }
        if worst > 1e-10 {
            return Err(Error::Config {
                key: "data.u0".into(),
                message: format!("initial velocity is not divergence-free (max |div| = {worst:.3e})"),
            });
        }
        Ok(())
    }
}

/// A smooth exact solution of the time-dependent Stokes system on the
/// channel, vanishing on the lateral wall, with the Robin condition on the
/// outlet held with the constant coefficient `q_value`.
///
/// With `a = pi / H`, `b = pi / L` and `theta(t) = 1 + sin(2 pi t / T) / 2`:
///
/// ```text
/// u = theta(t) (a sin(2 a y) sin(b x), -b sin^2(a y) cos(b x))
/// p = theta(t) cos(b x) cos(a y)
/// ```
///
/// The velocity is divergence-free (it is the curl of a stream function),
/// and the body force, inlet traction, and Robin load are derived from it
/// in closed form.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedSolution {
    pub length: f64,
    pub height: f64,
    pub t_final: f64,
    pub q_value: f64,
}

impl ManufacturedSolution {
    fn ab(&self) -> (f64, f64) {
        (
            std::f64::consts::PI / self.height,
            std::f64::consts::PI / self.length,
        )
    }

    pub fn time_factor(&self) -> impl Fn(f64) -> (f64, f64) {
        let omega = 2.0 * std::f64::consts::PI / self.t_final;
        move |t: f64| {
            (
                1.0 + 0.5 * (omega * t).sin(),
                0.5 * omega * (omega * t).cos(),
            )
        }
    }

    pub fn velocity(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.ab();
        let (theta, _) = self.time_factor()(t);
        let (x, y) = (p[0], p[1]);
        [
            theta * a * (2.0 * a * y).sin() * (b * x).sin(),
            -theta * b * (a * y).sin().powi(2) * (b * x).cos(),
        ]
    }

    /// Gradient rows `grad[c] = (du_c/dx, du_c/dy)`.
    pub fn velocity_gradient(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let (a, b) = self.ab();
        let (theta, _) = self.time_factor()(t);
        let (x, y) = (p[0], p[1]);
        [
            [
                theta * a * b * (2.0 * a * y).sin() * (b * x).cos(),
                theta * 2.0 * a * a * (2.0 * a * y).cos() * (b * x).sin(),
            ],
            [
                theta * b * b * (a * y).sin().powi(2) * (b * x).sin(),
                -theta * a * b * (2.0 * a * y).sin() * (b * x).cos(),
            ],
        ]
    }

    pub fn pressure(&self, t: f64, p: [f64; 2]) -> f64 {
        let (a, b) = self.ab();
        let (theta, _) = self.time_factor()(t);
        theta * (b * p[0]).cos() * (a * p[1]).cos()
    }

    /// `f = du/dt - Laplace(u) + grad p`.
    pub fn body_force(&self, t: f64, pt: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.ab();
        let (theta, dtheta) = self.time_factor()(t);
        let (x, y) = (pt[0], pt[1]);
        let u_hat = [
            a * (2.0 * a * y).sin() * (b * x).sin(),
            -b * (a * y).sin().powi(2) * (b * x).cos(),
        ];
        let lap_hat = [
            -a * (4.0 * a * a + b * b) * (2.0 * a * y).sin() * (b * x).sin(),
            b * (b * x).cos()
                * (b * b * (a * y).sin().powi(2) - 2.0 * a * a * (2.0 * a * y).cos()),
        ];
        let grad_p_hat = [
            -b * (b * x).sin() * (a * y).cos(),
            -a * (b * x).cos() * (a * y).sin(),
        ];
        [
            dtheta * u_hat[0] - theta * lap_hat[0] + theta * grad_p_hat[0],
            dtheta * u_hat[1] - theta * lap_hat[1] + theta * grad_p_hat[1],
        ]
    }

    /// `g = d_nu u - p nu` on the inlet wall `x = 0`, `nu = (-1, 0)`.
    pub fn inlet_traction(&self, t: f64, pt: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.ab();
        let (theta, _) = self.time_factor()(t);
        let y = pt[1];
        [
            theta * (-a * b * (2.0 * a * y).sin() + (a * y).cos()),
            0.0,
        ]
    }

    /// `kappa = d_nu u - p nu + q u` on the outlet wall `x = L`,
    /// `nu = (1, 0)`.
    pub fn robin_load(&self, t: f64, pt: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.ab();
        let (theta, _) = self.time_factor()(t);
        let y = pt[1];
        [
            theta * (-a * b * (2.0 * a * y).sin() + (a * y).cos()),
            self.q_value * theta * b * (a * y).sin().powi(2),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms() -> ManufacturedSolution {
        ManufacturedSolution {
            length: 2.0,
            height: 1.0,
            t_final: 1.0,
            q_value: 2.0,
        }
    }

    /// Central difference helper for one component.
    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn velocity_is_divergence_free_and_vanishes_on_the_lateral_wall() {
        let ms = ms();
        for &(x, y) in &[(0.3, 0.4), (1.7, 0.9), (0.05, 0.5)] {
            let dux_dx = fd(|s| ms.velocity(0.4, [s, y])[0], x);
            let duy_dy = fd(|s| ms.velocity(0.4, [x, s])[1], y);
            assert!((dux_dx + duy_dy).abs() < 1e-7, "div at ({x}, {y})");
        }
        for &x in &[0.0, 0.5, 1.9] {
            for &y in &[0.0, 1.0] {
                let u = ms.velocity(0.7, [x, y]);
                assert!(u[0].abs() < 1e-14 && u[1].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ms = ms();
        let (t, x, y) = (0.35, 1.2, 0.7);
        let grad = ms.velocity_gradient(t, [x, y]);
        for c in 0..2 {
            let gx = fd(|s| ms.velocity(t, [s, y])[c], x);
            let gy = fd(|s| ms.velocity(t, [x, s])[c], y);
            assert!((grad[c][0] - gx).abs() < 1e-7);
            assert!((grad[c][1] - gy).abs() < 1e-7);
        }
    }

    #[test]
    fn body_force_matches_the_pde_residual() {
        // f = du/dt - Laplace(u) + grad p, all by finite differences.
        let ms = ms();
        let (t, x, y) = (0.3, 0.9, 0.6);
        let h = 1e-4;
        for c in 0..2 {
            let dudt = fd(|s| ms.velocity(s, [x, y])[c], t);
            let lap = (ms.velocity(t, [x + h, y])[c] + ms.velocity(t, [x - h, y])[c]
                + ms.velocity(t, [x, y + h])[c]
                + ms.velocity(t, [x, y - h])[c]
                - 4.0 * ms.velocity(t, [x, y])[c])
                / (h * h);
            let grad_p = if c == 0 {
                fd(|s| ms.pressure(t, [s, y]), x)
            } else {
                fd(|s| ms.pressure(t, [x, s]), y)
            };
            let want = dudt - lap + grad_p;
            let got = ms.body_force(t, [x, y])[c];
            assert!((got - want).abs() < 1e-5, "component {c}: {got} vs {want}");
        }
    }

    #[test]
    fn boundary_data_match_their_defining_tractions() {
        let ms = ms();
        let (t, y) = (0.55, 0.35);
        let h = 1e-6;

        // Inlet: g = (-du1/dx + p, -du2/dx) at x = 0.
        let du1 = (ms.velocity(t, [h, y])[0] - ms.velocity(t, [0.0, y])[0]) / h;
        let du2 = (ms.velocity(t, [h, y])[1] - ms.velocity(t, [0.0, y])[1]) / h;
        let g = ms.inlet_traction(t, [0.0, y]);
        assert!((g[0] - (-du1 + ms.pressure(t, [0.0, y]))).abs() < 1e-5);
        assert!((g[1] - (-du2)).abs() < 1e-5);

        // Outlet: kappa = (du1/dx - p + q u1, du2/dx + q u2) at x = L.
        let l = ms.length;
        let du1 = (ms.velocity(t, [l, y])[0] - ms.velocity(t, [l - h, y])[0]) / h;
        let du2 = (ms.velocity(t, [l, y])[1] - ms.velocity(t, [l - h, y])[1]) / h;
        let u = ms.velocity(t, [l, y]);
        let kappa = ms.robin_load(t, [l, y]);
        assert!(
            (kappa[0] - (du1 - ms.pressure(t, [l, y]) + ms.q_value * u[0])).abs() < 1e-5
        );
        assert!((kappa[1] - (du2 + ms.q_value * u[1])).abs() < 1e-5);
    }

    #[test]
    fn standard_data_validates_and_pulses() {
        let data = ProblemData::standard(2.0, 1.0, 1.0, 1.0, 0.5);
        data.validate(2.0, 1.0).unwrap();
        let g0 = (data.inlet_flux)(0.0, [0.0, 0.5]);
        let g_quarter = (data.inlet_flux)(0.25, [0.0, 0.5]);
        assert!((g0[0] - 1.0).abs() < 1e-12);
        assert!((g_quarter[0] - 1.5).abs() < 1e-12);
        assert_eq!(g0[1], 0.0);
    }

    #[test]
    fn bad_initial_data_is_rejected() {
        let mut data = ProblemData::zero();
        data.initial_velocity = Box::new(|p| [p[0], 0.0]);
        data.initial_divergence = Box::new(|_| 1.0);
        let err = data.validate(2.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("divergence-free"));
    }
}
