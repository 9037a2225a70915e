//! Nonlinear rigid-body model of the three-wheel robot inside a water pipe.
//!
//! The robot translates along the pipe axis `x` and rotates by `phi` about
//! the body y-axis and by `psi` about the body z-axis. Three wheel torques
//! drive all three motions: their sum propels the robot against quadratic
//! hydrodynamic drag, their differences produce the attitude moments.
//!
//! The moment equations are implemented term for term as derived for this
//! robot, including two quirks that are kept on purpose:
//! the `tau_2` term of the z-moment uses `cos(theta_3 + phi)` rather than
//! `cos(theta_2 + phi)`, and both wheel-2/wheel-3 z-moment terms carry a
//! `(1 + sin psi)` factor.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix4, Matrix4x3, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// How the drag term enters the translational dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DragMode {
    /// `0.5 rho Cd A (V_f - v)|V_f - v|`: drag always pulls the robot
    /// toward the flow velocity.
    #[default]
    Signed,
    /// `0.5 rho Cd A (v - V_f)^2`: always non-negative, as the force
    /// balance is usually printed.
    PaperLiteral,
}

/// Physical constants of the robot and its environment. SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    /// Arm length `L_a` [m].
    pub arm_length: f64,
    /// Total mass [kg].
    pub mass: f64,
    /// Moment of inertia about the y-axis [kg m^2].
    pub inertia_y: f64,
    /// Moment of inertia about the z-axis [kg m^2].
    pub inertia_z: f64,
    /// Wheel radius [m].
    pub wheel_radius: f64,
    /// Pipe inner diameter [m]. Only enters the design model, not the plant.
    pub pipe_diameter: f64,
    /// Drag coefficient [-].
    pub drag_coeff: f64,
    /// Frontal area facing the flow [m^2]. The default is a placeholder.
    pub frontal_area: f64,
    /// Water density [kg/m^3].
    pub water_density: f64,
    /// Axial flow velocity [m/s].
    pub flow_velocity: f64,
    /// Arm angles `theta_1..3` [rad], constant over a run.
    pub arm_angles: [f64; 3],
    pub drag_mode: DragMode,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            arm_length: 0.17,
            mass: 2.23,
            inertia_y: 0.0126,
            inertia_z: 0.0093,
            wheel_radius: 0.05,
            pipe_diameter: 0.4,
            drag_coeff: 0.47,
            frontal_area: 0.05,
            water_density: 1000.0,
            flow_velocity: 0.0,
            arm_angles: [std::f64::consts::FRAC_PI_4; 3],
            drag_mode: DragMode::Signed,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arm_length", self.arm_length),
            ("mass", self.mass),
            ("inertia_y", self.inertia_y),
            ("inertia_z", self.inertia_z),
            ("wheel_radius", self.wheel_radius),
            ("pipe_diameter", self.pipe_diameter),
            ("drag_coeff", self.drag_coeff),
            ("frontal_area", self.frontal_area),
            ("water_density", self.water_density),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if !self.flow_velocity.is_finite() {
            return Err(Error::InvalidParams {
                name: "flow_velocity",
                reason: "must be finite".into(),
            });
        }
        if self.wheel_radius >= self.pipe_diameter / 2.0 {
            return Err(Error::InvalidParams {
                name: "wheel_radius",
                reason: format!(
                    "must be smaller than half the pipe diameter ({} >= {})",
                    self.wheel_radius,
                    self.pipe_diameter / 2.0
                ),
            });
        }
        for theta in self.arm_angles {
            if !(theta > 0.0 && theta < FRAC_PI_2) {
                return Err(Error::InvalidParams {
                    name: "arm_angles",
                    reason: format!("each angle must lie in (0, pi/2) rad, got {theta}"),
                });
            }
        }
        Ok(())
    }

    fn drag_gain(&self) -> f64 {
        0.5 * self.water_density * self.drag_coeff * self.frontal_area
    }
}

/// Full plant state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Axial position [m].
    pub x: f64,
    /// Axial velocity [m/s]; equals the robot velocity `V_r`.
    pub velocity: f64,
    /// Rotation about the y-axis [rad].
    pub phi: f64,
    pub phi_rate: f64,
    /// Rotation about the z-axis [rad].
    pub psi: f64,
    pub psi_rate: f64,
}

impl PlantState {
    /// Resting attitude, cruising at `velocity`.
    pub fn equilibrium(velocity: f64) -> Self {
        Self {
            velocity,
            ..Self::default()
        }
    }

    /// Stabilizing sub-vector `[phi, phi_rate, psi, psi_rate]`.
    pub fn stabilizing(&self) -> Vector4<f64> {
        Vector4::new(self.phi, self.phi_rate, self.psi, self.psi_rate)
    }

    pub fn with_stabilizing(mut self, xs: &Vector4<f64>) -> Self {
        self.phi = xs[0];
        self.phi_rate = xs[1];
        self.psi = xs[2];
        self.psi_rate = xs[3];
        self
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.x,
            self.velocity,
            self.phi,
            self.phi_rate,
            self.psi,
            self.psi_rate,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            x: v[0],
            velocity: v[1],
            phi: v[2],
            phi_rate: v[3],
            psi: v[4],
            psi_rate: v[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Wheel torques `[tau_1, tau_2, tau_3]` [N m].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TractionTorques(pub [f64; 3]);

impl TractionTorques {
    pub const ZERO: Self = Self([0.0; 3]);

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self([v[0], v[1], v[2]])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::from(self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.is_finite())
    }

    /// Clamp each torque to `[-limit, limit]`.
    pub fn saturate(self, limit: f64) -> Self {
        Self(self.0.map(|t| t.clamp(-limit, limit)))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, t| m.max(t.abs()))
    }
}

/// Hydrodynamic drag on the robot body at velocity `v_r` [N].
pub fn drag_force(params: &RobotParams, v_r: f64) -> f64 {
    let k = params.drag_gain();
    match params.drag_mode {
        DragMode::Signed => {
            let rel = params.flow_velocity - v_r;
            k * rel * rel.abs()
        }
        DragMode::PaperLiteral => {
            let rel = v_r - params.flow_velocity;
            k * rel * rel
        }
    }
}

/// Angular accelerations `(phi_ddot, psi_ddot)` of the attitude subsystem.
fn attitude_accel(params: &RobotParams, phi: f64, psi: f64, tau: &[f64; 3]) -> (f64, f64) {
    let [t1, t2, t3] = *tau;
    let [th1, th2, th3] = params.arm_angles;
    let r = params.wheel_radius;
    let la = params.arm_length;

    let phi_ddot =
        (0.5 * (t3 / r) * la * (th3 - phi).cos() - 0.5 * (t2 / r) * la * (th2 + phi).cos())
            / params.inertia_y;

    let lift = 1.0 + psi.sin();
    let psi_ddot = (0.5 * SQRT_3 * (t3 / r) * la * (th3 - phi).cos() * lift
        + 0.5 * SQRT_3 * (t2 / r) * la * (th3 + phi).cos() * lift
        - (t1 / r) * la * (th1 + psi).cos())
        / params.inertia_z;

    (phi_ddot, psi_ddot)
}

/// Time derivative of the full state under constant torques `u`.
///
/// Returns `[x_dot, x_ddot, phi_dot, phi_ddot, psi_dot, psi_ddot]`.
pub fn plant_deriv(
    params: &RobotParams,
    s: &PlantState,
    u: &TractionTorques,
) -> Result<Vector6<f64>> {
    if !s.is_finite() {
        return Err(Error::NonFinite {
            context: "plant state",
        });
    }
    if !u.is_finite() {
        return Err(Error::NonFinite {
            context: "traction torques",
        });
    }
    let traction: f64 = u.0.iter().sum::<f64>() / params.wheel_radius;
    let x_ddot = (traction + drag_force(params, s.velocity)) / params.mass;
    let (phi_ddot, psi_ddot) = attitude_accel(params, s.phi, s.psi, &u.0);
    let d = Vector6::new(s.velocity, x_ddot, s.phi_rate, phi_ddot, s.psi_rate, psi_ddot);
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::NonFinite {
            context: "plant derivative",
        })
    }
}

/// Derivative of the stabilizing sub-vector only.
pub fn stabilizing_deriv(params: &RobotParams, xs: &Vector4<f64>, tau: &Vector3<f64>) -> Vector4<f64> {
    let (phi_ddot, psi_ddot) = attitude_accel(params, xs[0], xs[2], &[tau[0], tau[1], tau[2]]);
    Vector4::new(xs[1], phi_ddot, xs[3], psi_ddot)
}

/// Central-difference Jacobians of the stabilizing subsystem with respect
/// to `[phi, phi_rate, psi, psi_rate]` and the three torques.
pub fn numeric_jacobian(
    params: &RobotParams,
    s0: &PlantState,
    u0: &TractionTorques,
    h: f64,
) -> Result<(Matrix4<f64>, Matrix4x3<f64>)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::StepTooSmall(h));
    }
    if !s0.is_finite() || !u0.is_finite() {
        return Err(Error::NonFinite {
            context: "linearization point",
        });
    }
    let xs0 = s0.stabilizing();
    let tau0 = u0.to_vector();
    let representable = |v: f64| v + h != v && v - h != v;
    if !xs0.iter().chain(tau0.iter()).all(|&v| representable(v)) {
        return Err(Error::StepTooSmall(h));
    }

    let mut a = Matrix4::zeros();
    for j in 0..4 {
        let mut plus = xs0;
        let mut minus = xs0;
        plus[j] += h;
        minus[j] -= h;
        let col = (stabilizing_deriv(params, &plus, &tau0)
            - stabilizing_deriv(params, &minus, &tau0))
            / (plus[j] - minus[j]);
        a.set_column(j, &col);
    }
    let mut b = Matrix4x3::zeros();
    for j in 0..3 {
        let mut plus = tau0;
        let mut minus = tau0;
        plus[j] += h;
        minus[j] -= h;
        let col = (stabilizing_deriv(params, &xs0, &plus)
            - stabilizing_deriv(params, &xs0, &minus))
            / (plus[j] - minus[j]);
        b.set_column(j, &col);
    }
    if a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        Ok((a, b))
    } else {
        Err(Error::NonFinite {
            context: "numeric jacobian",
        })
    }
}

/// Closed-form Jacobians of the stabilizing subsystem, differentiated by
/// hand from [`plant_deriv`]'s attitude equations.
pub fn analytic_jacobian(
    params: &RobotParams,
    s0: &PlantState,
    u0: &TractionTorques,
) -> (Matrix4<f64>, Matrix4x3<f64>) {
    let [t1, t2, t3] = u0.0;
    let [th1, th2, th3] = params.arm_angles;
    let (phi, psi) = (s0.phi, s0.psi);
    let ky = params.arm_length / (2.0 * params.inertia_y * params.wheel_radius);
    let kz = params.arm_length / (params.inertia_z * params.wheel_radius);
    let lift = 1.0 + psi.sin();

    let mut a = Matrix4::zeros();
    a[(0, 1)] = 1.0;
    a[(2, 3)] = 1.0;
    a[(1, 0)] = ky * (t3 * (th3 - phi).sin() + t2 * (th2 + phi).sin());
    a[(3, 0)] = kz * 0.5 * SQRT_3 * lift * (t3 * (th3 - phi).sin() - t2 * (th3 + phi).sin());
    a[(3, 2)] = kz
        * (0.5 * SQRT_3 * psi.cos() * (t3 * (th3 - phi).cos() + t2 * (th3 + phi).cos())
            + t1 * (th1 + psi).sin());

    let mut b = Matrix4x3::zeros();
    b[(1, 1)] = -ky * (th2 + phi).cos();
    b[(1, 2)] = ky * (th3 - phi).cos();
    b[(3, 0)] = -kz * (th1 + psi).cos();
    b[(3, 1)] = kz * 0.5 * SQRT_3 * (th3 + phi).cos() * lift;
    b[(3, 2)] = kz * 0.5 * SQRT_3 * (th3 - phi).cos() * lift;
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn drag_vanishes_at_flow_velocity() {
        for mode in [DragMode::Signed, DragMode::PaperLiteral] {
            let p = RobotParams {
                flow_velocity: 0.7,
                drag_mode: mode,
                ..params()
            };
            assert_eq!(drag_force(&p, 0.7), 0.0);
        }
    }

    #[test]
    fn drag_matches_hand_evaluation() {
        let p = RobotParams {
            flow_velocity: 1.0,
            ..params()
        };
        // 0.5 * 1000 * 0.47 * 0.05 * 1^2
        assert_relative_eq!(drag_force(&p, 0.0), 11.75, max_relative = 1e-12);

        let p = RobotParams {
            flow_velocity: 0.0,
            ..params()
        };
        assert_relative_eq!(
            drag_force(&p, 2.0),
            -0.5 * 1000.0 * 0.47 * 0.05 * 4.0,
            max_relative = 1e-12
        );
        let lit = RobotParams {
            drag_mode: DragMode::PaperLiteral,
            ..p
        };
        assert_relative_eq!(drag_force(&lit, 2.0), 47.0, max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_attitude() {
        let p = RobotParams {
            flow_velocity: 0.3,
            ..params()
        };
        let d = plant_deriv(&p, &PlantState::equilibrium(0.3), &TractionTorques::ZERO).unwrap();
        assert_eq!(d, Vector6::new(0.3, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_torques_cancel_phi_moment() {
        let d = plant_deriv(
            &params(),
            &PlantState::default(),
            &TractionTorques([0.0, 0.4, 0.4]),
        )
        .unwrap();
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn common_mode_acceleration() {
        let tau = 0.0745;
        let d = plant_deriv(
            &params(),
            &PlantState::default(),
            &TractionTorques([tau; 3]),
        )
        .unwrap();
        assert_relative_eq!(d[1], 3.0 * tau / (0.05 * 2.23), max_relative = 1e-12);
        assert_relative_eq!(d[1], 2.004, epsilon = 5e-4);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let s = PlantState {
            phi: f64::NAN,
            ..PlantState::default()
        };
        assert!(matches!(
            plant_deriv(&params(), &s, &TractionTorques::ZERO),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn stabilizing_subvector_order() {
        let s = PlantState {
            x: 9.0,
            velocity: 8.0,
            phi: 1.0,
            phi_rate: 2.0,
            psi: 3.0,
            psi_rate: 4.0,
        };
        assert_eq!(s.stabilizing(), Vector4::new(1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn param_validation() {
        assert!(params().validate().is_ok());
        let bad = RobotParams {
            wheel_radius: 0.3,
            ..params()
        };
        assert!(bad.validate().is_err());
        let bad = RobotParams {
            arm_angles: [0.0, 0.5, 0.5],
            ..params()
        };
        assert!(bad.validate().is_err());
        let bad = RobotParams {
            mass: -1.0,
            ..params()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jacobian_at_equilibrium_has_double_integrator_a() {
        let (a, b) = numeric_jacobian(
            &params(),
            &PlantState::default(),
            &TractionTorques::ZERO,
            1e-6,
        )
        .unwrap();
        let mut expected = Matrix4::zeros();
        expected[(0, 1)] = 1.0;
        expected[(2, 3)] = 1.0;
        assert_eq!(a, expected);
        // tau_1 has no lever arm about y
        assert_eq!(b[(1, 0)], 0.0);
    }

    #[test]
    fn jacobian_equilibrium_entries_match_hand_formulas() {
        // Entries written out independently of `analytic_jacobian`.
        let p = params();
        let h = 1e-6;
        let (_, b) =
            numeric_jacobian(&p, &PlantState::default(), &TractionTorques::ZERO, h).unwrap();
        let c = std::f64::consts::FRAC_PI_4.cos();
        let by = 0.17 * c / (2.0 * 0.0126 * 0.05);
        let bz = 0.17 / (0.0093 * 0.05);
        let tol = 10.0 * h * h;
        let close = |x: f64, y: f64| (x - y).abs() <= tol * y.abs().max(1.0);
        assert!(close(b[(1, 1)], -by));
        assert!(close(b[(1, 2)], by));
        assert!(close(b[(3, 0)], -bz * c));
        assert!(close(b[(3, 1)], bz * 0.5 * 3f64.sqrt() * c));
        assert!(close(b[(3, 2)], bz * 0.5 * 3f64.sqrt() * c));
    }

    #[test]
    fn jacobian_rejects_bad_steps() {
        let s = PlantState {
            phi: 1.0,
            ..PlantState::default()
        };
        assert!(matches!(
            numeric_jacobian(&params(), &s, &TractionTorques::ZERO, 1e-18),
            Err(Error::StepTooSmall(_))
        ));
        assert!(numeric_jacobian(&params(), &s, &TractionTorques::ZERO, 0.0).is_err());
    }

    #[test]
    fn numeric_and_analytic_jacobians_agree_off_equilibrium() {
        let p = params();
        let s = PlantState {
            phi: 0.3,
            psi: -0.2,
            phi_rate: 0.5,
            psi_rate: -0.1,
            ..PlantState::default()
        };
        let u = TractionTorques([0.5, -1.2, 0.8]);
        let (an, bn) = numeric_jacobian(&p, &s, &u, 1e-5).unwrap();
        let (aa, ba) = analytic_jacobian(&p, &s, &u);
        for (x, y) in an.iter().zip(aa.iter()).chain(bn.iter().zip(ba.iter())) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn signed_drag_opposes_relative_motion(vf in -2.0..2.0f64, v in -2.0..2.0f64) {
            prop_assume!((vf - v).abs() > 1e-9);
            let p = RobotParams { flow_velocity: vf, ..RobotParams::default() };
            prop_assert_eq!(drag_force(&p, v).signum(), (vf - v).signum());
        }

        #[test]
        fn swapping_side_torques_negates_phi_accel(
            t1 in -5.0..5.0f64, t2 in -5.0..5.0f64, t3 in -5.0..5.0f64,
            v in -1.0..1.0f64,
        ) {
            let p = RobotParams::default();
            let s = PlantState { velocity: v, ..PlantState::default() };
            let d = plant_deriv(&p, &s, &TractionTorques([t1, t2, t3])).unwrap();
            let e = plant_deriv(&p, &s, &TractionTorques([t1, t3, t2])).unwrap();
            prop_assert!((d[3] + e[3]).abs() <= 1e-9 * d[3].abs().max(1.0));
            prop_assert!((d[1] - e[1]).abs() <= 1e-9 * d[1].abs().max(1.0));
        }
    }
}
