//! Fixed-step closed-loop simulation and run metrics.

use nalgebra::{SVector, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, Measurement, Observer};
use crate::error::{Error, Result};
use crate::linmodel::LinearModel;
use crate::plant::{plant_deriv, PlantState, RobotParams, TractionTorques};
use crate::riccati::{control_law, GainMatrix};

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_DURATION: f64 = 2.0;

/// Desired velocity and initial attitude (degrees) for the three published runs.
pub const PAPER_ITERATIONS: [(f64, f64, f64); 3] =
    [(0.1, -10.0, 10.0), (0.3, 20.0, 20.0), (0.5, -23.0, -25.0)];

/// One classical RK4 step with the input held over the step.
pub fn integrate_step<const N: usize, F>(
    deriv: F,
    s: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let k1 = deriv(s)?;
    let k2 = deriv(&(s + k1 * (0.5 * dt)))?;
    let k3 = deriv(&(s + k2 * (0.5 * dt)))?;
    let k4 = deriv(&(s + k3 * dt))?;
    let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite {
            context: "integration step",
        })
    }
}

/// Advance the nonlinear plant one step under zero-order-hold torques.
pub fn plant_step(
    params: &RobotParams,
    s: &PlantState,
    u: &TractionTorques,
    dt: f64,
) -> Result<PlantState> {
    let next = integrate_step(
        |v: &Vector6<f64>| plant_deriv(params, &PlantState::from_vector(v), u),
        &s.to_vector(),
        dt,
    )?;
    Ok(PlantState::from_vector(&next))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettlingBands {
    /// Velocity band as a fraction of `|V_d|`.
    pub velocity_rel: f64,
    /// Lower bound on the velocity band half-width [m/s], used when `V_d` is ~0.
    pub velocity_abs_floor: f64,
    /// Attitude band half-width [deg].
    pub angle_deg: f64,
}

impl Default for SettlingBands {
    fn default() -> Self {
        Self {
            velocity_rel: 0.02,
            velocity_abs_floor: 1e-4,
            angle_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: RobotParams,
    pub controller: ControllerConfig,
    /// Initial phi [deg].
    pub phi0_deg: f64,
    /// Initial psi [deg].
    pub psi0_deg: f64,
    pub phi_rate0: f64,
    pub psi_rate0: f64,
    /// Initial axial velocity [m/s].
    pub initial_velocity: f64,
    pub duration: f64,
    pub dt: f64,
    pub bands: SettlingBands,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            params: RobotParams::default(),
            controller: ControllerConfig::default(),
            phi0_deg: 0.0,
            psi0_deg: 0.0,
            phi_rate0: 0.0,
            psi_rate0: 0.0,
            initial_velocity: 0.0,
            duration: DEFAULT_DURATION,
            dt: DEFAULT_DT,
            bands: SettlingBands::default(),
        }
    }
}

impl Scenario {
    /// Published run `iteration` (1-based) with the published gain matrix.
    pub fn paper_iteration(iteration: usize) -> Result<Self> {
        let &(vd, phi0, psi0) = PAPER_ITERATIONS
            .get(iteration.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidScenario(format!("no iteration {iteration}")))?;
        Ok(Self {
            controller: ControllerConfig {
                desired_velocity: vd,
                ..ControllerConfig::default()
            },
            phi0_deg: phi0,
            psi0_deg: psi0,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.controller.validate().map_err(Error::InvalidScenario)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidScenario(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::InvalidScenario(format!(
                "duration {} must be >= dt {}",
                self.duration, self.dt
            )));
        }
        for (name, v) in [("phi0_deg", self.phi0_deg), ("psi0_deg", self.psi0_deg)] {
            if !(v.is_finite() && v.abs() <= 90.0) {
                return Err(Error::InvalidScenario(format!(
                    "{name} must lie within [-90, 90] deg, got {v}"
                )));
            }
        }
        if ![self.phi_rate0, self.psi_rate0, self.initial_velocity]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidScenario("initial rates must be finite".into()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> PlantState {
        PlantState {
            x: 0.0,
            velocity: self.initial_velocity,
            phi: self.phi0_deg.to_radians(),
            phi_rate: self.phi_rate0,
            psi: self.psi0_deg.to_radians(),
            psi_rate: self.psi_rate0,
        }
    }

    /// `floor(duration / dt) + 1`, tolerant of the rounding in `duration / dt`.
    pub fn sample_count(&self) -> usize {
        sample_count(self.duration, self.dt)
    }
}

fn sample_count(duration: f64, dt: f64) -> usize {
    let ratio = duration / dt;
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.floor()
    };
    steps as usize + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: PlantState,
    /// Torques applied from `t` to `t + dt`.
    pub torques: TractionTorques,
    pub pid: [f64; 3],
    pub lqr: [f64; 3],
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
    /// Index of the first sample the integrator could not produce.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    /// `None` if the velocity never settles into its band.
    pub velocity_settling_time: Option<f64>,
    pub phi_settling_time: Option<f64>,
    pub psi_settling_time: Option<f64>,
    /// Largest applied wheel torque magnitude [N m].
    pub peak_torque: f64,
    /// Largest applied wheel torque magnitude over the final quarter [N m].
    pub steady_state_torque_band: f64,
    pub lqr_peak_torque: f64,
    pub lqr_steady_state_band: f64,
    pub diverged: bool,
}

impl RunMetrics {
    pub fn settled(&self) -> bool {
        !self.diverged
            && self.velocity_settling_time.is_some()
            && self.phi_settling_time.is_some()
            && self.psi_settling_time.is_some()
    }

    /// Attitude settled within `limit` seconds.
    pub fn attitude_settled_by(&self, limit: f64) -> bool {
        !self.diverged
            && matches!(self.phi_settling_time, Some(t) if t < limit)
            && matches!(self.psi_settling_time, Some(t) if t < limit)
    }
}

/// Time of the first sample after which `inside` holds for every sample.
fn settling_time(samples: &[Sample], inside: impl Fn(&Sample) -> bool) -> Option<f64> {
    match samples.iter().rposition(|s| !inside(s)) {
        None => samples.first().map(|s| s.t),
        Some(last_out) => samples.get(last_out + 1).map(|s| s.t),
    }
}

pub fn compute_metrics(traj: &Trajectory, sc: &Scenario) -> RunMetrics {
    let samples = &traj.samples;
    let vd = sc.controller.desired_velocity;
    let v_band = (sc.bands.velocity_rel * vd.abs()).max(sc.bands.velocity_abs_floor);
    let a_band = sc.bands.angle_deg.to_radians();

    let peak = |f: &dyn Fn(&Sample) -> f64, from: usize| {
        samples[from..].iter().map(f).fold(0.0_f64, f64::max)
    };
    let applied = |s: &Sample| s.torques.max_abs();
    let lqr = |s: &Sample| s.lqr.iter().fold(0.0_f64, |m, t| m.max(t.abs()));

    let t_end = traj.duration();
    let tail_start = samples
        .iter()
        .position(|s| s.t >= 0.75 * t_end)
        .unwrap_or(samples.len());

    let diverged = traj.is_diverged();
    let settle = |f: &dyn Fn(&Sample) -> bool| {
        if diverged {
            None
        } else {
            settling_time(samples, f)
        }
    };

    RunMetrics {
        velocity_settling_time: settle(&|s| (s.state.velocity - vd).abs() <= v_band),
        phi_settling_time: settle(&|s| s.state.phi.abs() <= a_band),
        psi_settling_time: settle(&|s| s.state.psi.abs() <= a_band),
        peak_torque: peak(&applied, 0),
        steady_state_torque_band: peak(&applied, tail_start),
        lqr_peak_torque: peak(&lqr, 0),
        lqr_steady_state_band: peak(&lqr, tail_start),
        diverged,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
}

/// Observer, controller and plant advanced in lockstep at `sc.dt`.
///
/// Divergence does not fail the call: the trajectory keeps every sample up
/// to the blow-up and records where it stopped.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    let n = sc.sample_count();
    let mut observer = Observer::new(sc.controller.noise_std, sc.controller.rng_seed);
    let mut controller = Controller::new(sc.controller.clone(), sc.params.wheel_radius);

    let mut samples = Vec::with_capacity(n);
    let mut state = sc.initial_state();
    let mut diverged_at = None;
    for k in 0..n {
        let t = k as f64 * sc.dt;
        let measurement = observer.observe(&state, &sc.params, t);
        let out = controller.step(&measurement, sc.dt);
        samples.push(Sample {
            t,
            state,
            torques: out.torques,
            pid: out.pid,
            lqr: out.lqr,
            measurement,
        });
        if k + 1 == n {
            break;
        }
        match plant_step(&sc.params, &state, &out.torques, sc.dt) {
            Ok(next) => state = next,
            Err(Error::NonFinite { .. }) => {
                diverged_at = Some(k + 1);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let trajectory = Trajectory {
        dt: sc.dt,
        samples,
        diverged_at,
    };
    let metrics = compute_metrics(&trajectory, sc);
    Ok(RunOutput {
        trajectory,
        metrics,
    })
}

/// Plant with all torques forced to zero.
pub fn run_open_loop(params: &RobotParams, initial: PlantState, duration: f64, dt: f64) -> Result<Trajectory> {
    let n = sample_count(duration, dt);
    let mut samples = Vec::with_capacity(n);
    let mut state = initial;
    for k in 0..n {
        let t = k as f64 * dt;
        samples.push(Sample {
            t,
            state,
            torques: TractionTorques::ZERO,
            pid: [0.0; 3],
            lqr: [0.0; 3],
            measurement: Measurement::default(),
        });
        if k + 1 < n {
            state = plant_step(params, &state, &TractionTorques::ZERO, dt)?;
        }
    }
    Ok(Trajectory {
        dt,
        samples,
        diverged_at: None,
    })
}

/// Linearized attitude loop `x' = (A - B K) x`, integrated with RK4.
/// Torques are recorded as `u = -K x` at each sample.
pub fn simulate_linear_closed_loop(
    model: &LinearModel,
    gain: &GainMatrix,
    x0: &Vector4<f64>,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && horizon >= dt) {
        return Err(Error::InvalidScenario("need dt > 0 and horizon >= dt".into()));
    }
    let ac = model.a - model.b * gain.0;
    let n = sample_count(horizon, dt);
    let mut samples = Vec::with_capacity(n);
    let mut x = *x0;
    for k in 0..n {
        let u = control_law(gain, &x);
        let state = PlantState::default().with_stabilizing(&x);
        samples.push(Sample {
            t: k as f64 * dt,
            state,
            torques: u,
            pid: [0.0; 3],
            lqr: u.0,
            measurement: Measurement::default(),
        });
        if k + 1 < n {
            x = integrate_step(|v: &Vector4<f64>| Ok(ac * v), &x, dt)?;
        }
    }
    Ok(Trajectory {
        dt,
        samples,
        diverged_at: None,
    })
}
