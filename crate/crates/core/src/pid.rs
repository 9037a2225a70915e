//! Discrete PID for wheel speed tracking, plus the rolling-contact relation
//! between wheel speed and robot velocity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Derivative low-pass time constant as a multiple of the step `dt`.
    pub derivative_filter_coeff: f64,
    /// Bound on the magnitude of the integral contribution [N m].
    pub integral_limit: f64,
}

impl PidGains {
    /// Tuned gains with the integral/derivative roles read from the gain
    /// subscripts: `K_I = 322.4160`, `K_D = 0.0072`.
    pub const PAPER: Self = Self {
        k_p: 8.7313,
        k_i: 322.4160,
        k_d: 0.0072,
        derivative_filter_coeff: 0.1,
        integral_limit: 100.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("k_p", self.k_p), ("k_i", self.k_i), ("k_d", self.k_d)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.integral_limit.is_finite() && self.integral_limit > 0.0) {
            return Err(format!(
                "integral_limit must be finite and > 0, got {}",
                self.integral_limit
            ));
        }
        if !(self.derivative_filter_coeff.is_finite() && self.derivative_filter_coeff >= 0.0) {
            return Err("derivative_filter_coeff must be finite and >= 0".into());
        }
        Ok(())
    }
}

impl Default for PidGains {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Controller memory, threaded explicitly through [`pid_step`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Integral contribution `k_i * int e dt`, already clamped [N m].
    pub integral_accumulator: f64,
    /// `None` until the first step; the first step has no derivative kick.
    pub previous_error: Option<f64>,
    pub filtered_derivative: f64,
}

/// One controller update. Returns the torque and the next state.
///
/// The integral uses the trapezoid rule and is clamped to
/// `±integral_limit`. The derivative is a backward difference passed
/// through a first-order low-pass with time constant
/// `derivative_filter_coeff * dt`.
pub fn pid_step(gains: &PidGains, state: &PidState, error: f64, dt: f64) -> (f64, PidState) {
    debug_assert!(dt > 0.0, "pid_step requires dt > 0");
    let prev = state.previous_error.unwrap_or(error);

    let integral = (state.integral_accumulator + gains.k_i * 0.5 * (error + prev) * dt)
        .clamp(-gains.integral_limit, gains.integral_limit);

    let raw_derivative = (error - prev) / dt;
    let tf = gains.derivative_filter_coeff * dt;
    let alpha = tf / (tf + dt);
    let filtered_derivative = if state.previous_error.is_some() {
        alpha * state.filtered_derivative + (1.0 - alpha) * raw_derivative
    } else {
        0.0
    };

    let torque = gains.k_p * error + integral + gains.k_d * filtered_derivative;
    (
        torque,
        PidState {
            integral_accumulator: integral,
            previous_error: Some(error),
            filtered_derivative,
        },
    )
}

/// `omega = v / R`
pub fn wheel_speed_from_velocity(v_r: f64, wheel_radius: f64) -> f64 {
    v_r / wheel_radius
}

/// `v = R omega`
pub fn velocity_from_wheel_speed(omega: f64, wheel_radius: f64) -> f64 {
    wheel_radius * omega
}
