//! Combined attitude stabilizer and velocity tracker.
//!
//! Measurements come from three wheel encoders and an IMU. Each wheel runs
//! its own PID on the speed error; the LQR gain acts on the IMU attitude.
//! The two torque vectors are superposed and optionally saturated.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pid::{pid_step, velocity_from_wheel_speed, wheel_speed_from_velocity, PidGains, PidState};
use crate::plant::{PlantState, RobotParams, TractionTorques};
use crate::riccati::{control_law, GainMatrix};

/// Sensor noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseStd {
    /// Encoder noise [rad/s].
    pub encoder: f64,
    /// IMU angle noise [rad].
    pub imu_angle: f64,
    /// Gyro noise [rad/s].
    pub imu_rate: f64,
}

impl NoiseStd {
    pub fn is_zero(&self) -> bool {
        self.encoder == 0.0 && self.imu_angle == 0.0 && self.imu_rate == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingRule {
    /// `tau = tau_pid + tau_lqr`
    #[default]
    Additive,
}

/// Signal the wheel PIDs regulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedErrorSignal {
    /// Rim speed error `V_d - R omega_i` [m/s].
    #[default]
    RimSpeed,
    /// Wheel rate error `V_d / R - omega_i` [rad/s].
    WheelRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub gain: GainMatrix,
    pub pid_gains: PidGains,
    /// Desired robot velocity `V_d` [m/s].
    pub desired_velocity: f64,
    /// Per-wheel saturation [N m]; `None` means unlimited.
    pub torque_limit: Option<f64>,
    pub noise_std: NoiseStd,
    pub rng_seed: u64,
    pub mixing: MixingRule,
    pub speed_error: SpeedErrorSignal,
}

/// Saturation preset for a 12 N m gear motor.
pub const TORQUE_LIMIT_PRESET: f64 = 12.0;

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gain: GainMatrix::paper(),
            pid_gains: PidGains::PAPER,
            desired_velocity: 0.0,
            torque_limit: None,
            noise_std: NoiseStd::default(),
            rng_seed: 0,
            mixing: MixingRule::Additive,
            speed_error: SpeedErrorSignal::RimSpeed,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.desired_velocity.is_finite() {
            return Err("desired_velocity must be finite".into());
        }
        if let Some(limit) = self.torque_limit {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(format!("torque_limit must be > 0, got {limit}"));
            }
        }
        let n = self.noise_std;
        if [n.encoder, n.imu_angle, n.imu_rate]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err("noise standard deviations must be finite and >= 0".into());
        }
        if self.gain.0.iter().any(|k| !k.is_finite()) {
            return Err("gain matrix has non-finite entries".into());
        }
        self.pid_gains.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    /// Encoder wheel speeds [rad/s].
    pub wheel_speeds: [f64; 3],
    pub phi: f64,
    pub phi_rate: f64,
    pub psi: f64,
    pub psi_rate: f64,
    pub timestamp: f64,
}

impl Measurement {
    pub fn stabilizing(&self) -> Vector4<f64> {
        Vector4::new(self.phi, self.phi_rate, self.psi, self.psi_rate)
    }
}

/// Encoders plus IMU, with seeded Gaussian noise.
#[derive(Debug, Clone)]
pub struct Observer {
    rng: ChaCha8Rng,
    noise: NoiseStd,
}

impl Observer {
    pub fn new(noise: NoiseStd, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        }
    }

    fn noisy(&mut self, value: f64, std: f64) -> f64 {
        if std == 0.0 {
            return value;
        }
        let n: f64 = self.rng.sample(StandardNormal);
        value + std * n
    }

    /// Straight-line motion: every wheel turns at `velocity / R`.
    pub fn observe(&mut self, s: &PlantState, params: &RobotParams, t: f64) -> Measurement {
        let omega = wheel_speed_from_velocity(s.velocity, params.wheel_radius);
        let n = self.noise;
        let wheel_speeds = [
            self.noisy(omega, n.encoder),
            self.noisy(omega, n.encoder),
            self.noisy(omega, n.encoder),
        ];
        Measurement {
            wheel_speeds,
            phi: self.noisy(s.phi, n.imu_angle),
            phi_rate: self.noisy(s.phi_rate, n.imu_rate),
            psi: self.noisy(s.psi, n.imu_angle),
            psi_rate: self.noisy(s.psi_rate, n.imu_rate),
            timestamp: t,
        }
    }
}

/// Torques from one controller update, with both components kept for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    /// Applied (mixed, saturated) torques.
    pub torques: TractionTorques,
    pub pid: [f64; 3],
    pub lqr: [f64; 3],
}

pub fn control_step(
    cfg: &ControllerConfig,
    wheel_radius: f64,
    m: &Measurement,
    pid_states: &[PidState; 3],
    dt: f64,
) -> (ControlOutput, [PidState; 3]) {
    let omega_desired = wheel_speed_from_velocity(cfg.desired_velocity, wheel_radius);
    let mut pid = [0.0; 3];
    let mut next = *pid_states;
    for i in 0..3 {
        let rate_error = omega_desired - m.wheel_speeds[i];
        let error = match cfg.speed_error {
            SpeedErrorSignal::RimSpeed => velocity_from_wheel_speed(rate_error, wheel_radius),
            SpeedErrorSignal::WheelRate => rate_error,
        };
        (pid[i], next[i]) = pid_step(&cfg.pid_gains, &pid_states[i], error, dt);
    }
    let lqr = control_law(&cfg.gain, &m.stabilizing()).0;

    let mixed = match cfg.mixing {
        MixingRule::Additive => TractionTorques([pid[0] + lqr[0], pid[1] + lqr[1], pid[2] + lqr[2]]),
    };
    let torques = match cfg.torque_limit {
        Some(limit) => mixed.saturate(limit),
        None => mixed,
    };
    (ControlOutput { torques, pid, lqr }, next)
}

/// Stateful wrapper around [`control_step`] for a single run.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    wheel_radius: f64,
    pid_states: [PidState; 3],
    last_timestamp: Option<f64>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, wheel_radius: f64) -> Self {
        Self {
            cfg,
            wheel_radius,
            pid_states: [PidState::default(); 3],
            last_timestamp: None,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn step(&mut self, m: &Measurement, dt: f64) -> ControlOutput {
        if let Some(prev) = self.last_timestamp {
            debug_assert!(m.timestamp > prev, "measurement timestamps must increase");
        }
        self.last_timestamp = Some(m.timestamp);
        let (out, next) = control_step(&self.cfg, self.wheel_radius, m, &self.pid_states, dt);
        self.pid_states = next;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R: f64 = 0.05;
    const DT: f64 = 1e-4;

    fn cruise(vd: f64) -> Measurement {
        Measurement {
            wheel_speeds: [vd / R; 3],
            ..Measurement::default()
        }
    }

    #[test]
    fn ideal_observer_is_exact() {
        let mut obs = Observer::new(NoiseStd::default(), 7);
        let s = PlantState {
            x: 1.0,
            velocity: 0.5,
            phi: 0.1,
            phi_rate: -0.2,
            psi: 0.3,
            psi_rate: 0.4,
        };
        let m = obs.observe(&s, &RobotParams::default(), 0.25);
        assert_eq!(m.wheel_speeds, [10.0; 3]);
        assert_eq!(m.stabilizing(), s.stabilizing());
        assert_eq!(m.timestamp, 0.25);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let noise = NoiseStd {
            encoder: 0.1,
            imu_angle: 0.01,
            imu_rate: 0.02,
        };
        let s = PlantState::equilibrium(0.3);
        let p = RobotParams::default();
        let mut a = Observer::new(noise, 42);
        let mut b = Observer::new(noise, 42);
        let mut c = Observer::new(noise, 43);
        let ma = a.observe(&s, &p, 0.0);
        assert_eq!(ma, b.observe(&s, &p, 0.0));
        assert_ne!(ma, c.observe(&s, &p, 0.0));
        assert_ne!(ma.wheel_speeds[0], ma.wheel_speeds[1]);
    }

    #[test]
    fn steady_cruise_outputs_zero() {
        let cfg = ControllerConfig {
            desired_velocity: 0.3,
            ..ControllerConfig::default()
        };
        let (out, _) = control_step(&cfg, R, &cruise(0.3), &[PidState::default(); 3], DT);
        assert_eq!(out.torques, TractionTorques::ZERO);
    }

    #[test]
    fn common_mode_speed_error() {
        for speed_error in [SpeedErrorSignal::RimSpeed, SpeedErrorSignal::WheelRate] {
            let cfg = ControllerConfig {
                desired_velocity: 0.3,
                speed_error,
                ..ControllerConfig::default()
            };
            let (out, _) = control_step(&cfg, R, &cruise(0.1), &[PidState::default(); 3], DT);
            let t = out.torques.0;
            assert!(t[0] > 0.0);
            assert_eq!(t[0], t[1]);
            assert_eq!(t[1], t[2]);
            assert_eq!(out.lqr, [0.0; 3]);
        }
    }

    #[test]
    fn attitude_only_matches_gain_column() {
        let cfg = ControllerConfig {
            desired_velocity: 0.3,
            ..ControllerConfig::default()
        };
        let m = Measurement {
            psi: 1.0,
            ..cruise(0.3)
        };
        let (out, _) = control_step(&cfg, R, &m, &[PidState::default(); 3], DT);
        assert_eq!(out.torques.0, [11.5470, -5.7735, -5.7735]);
    }

    #[test]
    fn saturation_applies_per_wheel() {
        let cfg = ControllerConfig {
            desired_velocity: 0.0,
            torque_limit: Some(TORQUE_LIMIT_PRESET),
            ..ControllerConfig::default()
        };
        let m = Measurement {
            psi: 3.0,
            ..cruise(0.0)
        };
        let (out, _) = control_step(&cfg, R, &m, &[PidState::default(); 3], DT);
        assert_eq!(out.torques.0[0], 12.0);
        assert_eq!(out.lqr[0], 3.0 * 11.5470);
    }

    proptest! {
        #[test]
        fn decomposition_and_saturation(
            phi in -1.0..1.0f64, phi_rate in -3.0..3.0f64,
            psi in -1.0..1.0f64, psi_rate in -3.0..3.0f64,
            w in -20.0..20.0f64, vd in -0.5..0.5f64,
            limit in proptest::option::of(0.5..20.0f64),
        ) {
            let cfg = ControllerConfig { desired_velocity: vd, torque_limit: limit, ..ControllerConfig::default() };
            let m = Measurement { wheel_speeds: [w; 3], phi, phi_rate, psi, psi_rate, timestamp: 0.0 };
            let (out, _) = control_step(&cfg, R, &m, &[PidState::default(); 3], DT);
            for i in 0..3 {
                let mixed = out.pid[i] + out.lqr[i];
                match limit {
                    None => prop_assert_eq!(out.torques.0[i], mixed),
                    Some(l) => {
                        prop_assert!(out.torques.0[i].abs() <= l);
                        prop_assert_eq!(out.torques.0[i], mixed.clamp(-l, l));
                    }
                }
            }
        }
    }
}
