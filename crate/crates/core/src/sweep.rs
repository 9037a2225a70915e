//! Cartesian-product parameter sweeps.
//!
//! Points run in parallel; each run is independent and deterministic, so
//! the per-run output does not depend on scheduling. Results come back in
//! point order.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SweepAxes};
use crate::error::{Error, Result};
use crate::sim::{run_scenario, RunMetrics, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub desired_velocity: f64,
    pub pipe_diameter: f64,
    pub flow_velocity: f64,
    pub phi0_deg: f64,
    pub psi0_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub point: SweepPoint,
    pub metrics: RunMetrics,
}

fn axis(values: &Option<Vec<f64>>, base: f64, name: &str) -> Result<Vec<f64>> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(Error::Config(format!("sweep axis `{name}` is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

/// Points in row-major order over (V_d, D, V_f, phi0, psi0).
pub fn sweep_points(base: &RunConfig, axes: &SweepAxes) -> Result<Vec<SweepPoint>> {
    let given = [
        &axes.desired_velocity,
        &axes.pipe_diameter,
        &axes.flow_velocity,
        &axes.phi0_deg,
        &axes.psi0_deg,
    ];
    if given.iter().all(|a| a.is_none()) {
        return Err(Error::Config("sweep needs at least one axis".into()));
    }
    let vd = axis(&axes.desired_velocity, base.controller.desired_velocity, "desired_velocity")?;
    let d = axis(&axes.pipe_diameter, base.robot.pipe_diameter, "pipe_diameter")?;
    let vf = axis(&axes.flow_velocity, base.robot.flow_velocity, "flow_velocity")?;
    let phi = axis(&axes.phi0_deg, base.scenario.phi0_deg, "phi0_deg")?;
    let psi = axis(&axes.psi0_deg, base.scenario.psi0_deg, "psi0_deg")?;

    let mut points = Vec::with_capacity(vd.len() * d.len() * vf.len() * phi.len() * psi.len());
    for &desired_velocity in &vd {
        for &pipe_diameter in &d {
            for &flow_velocity in &vf {
                for &phi0_deg in &phi {
                    for &psi0_deg in &psi {
                        points.push(SweepPoint {
                            desired_velocity,
                            pipe_diameter,
                            flow_velocity,
                            phi0_deg,
                            psi0_deg,
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Base config with one sweep point applied. Changing the pipe diameter
/// re-synthesizes the gain unless the config pins it explicitly.
pub fn config_for_point(base: &RunConfig, p: &SweepPoint) -> RunConfig {
    let mut cfg = base.clone();
    cfg.controller.desired_velocity = p.desired_velocity;
    cfg.robot.pipe_diameter = p.pipe_diameter;
    cfg.robot.flow_velocity = p.flow_velocity;
    cfg.scenario.phi0_deg = p.phi0_deg;
    cfg.scenario.psi0_deg = p.psi0_deg;
    cfg.sweep = None;
    cfg
}

/// Run every point, handing each finished run to `sink` before dropping
/// its trajectory.
pub fn run_sweep<F>(base: &RunConfig, axes: &SweepAxes, sink: F) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, &SweepPoint, &RunOutput) -> Result<()> + Sync,
{
    let points = sweep_points(base, axes)?;
    points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let cfg = config_for_point(base, point);
            let out = run_scenario(&cfg.scenario()?)?;
            sink(index, point, &out)?;
            Ok(SweepRow {
                index,
                point: *point,
                metrics: out.metrics,
            })
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "index",
    "desired_velocity",
    "pipe_diameter",
    "flow_velocity",
    "phi0_deg",
    "psi0_deg",
    "settled",
    "velocity_settling_time",
    "phi_settling_time",
    "psi_settling_time",
    "peak_torque_nmm",
    "steady_torque_band_nmm",
    "lqr_steady_band_nmm",
    "diverged",
];

/// Aggregate table; unsettled times are written as empty fields.
pub fn write_summary<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let opt = |t: Option<f64>| t.map_or_else(String::new, |t| format!("{t:.6}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.index.to_string(),
            r.point.desired_velocity.to_string(),
            r.point.pipe_diameter.to_string(),
            r.point.flow_velocity.to_string(),
            r.point.phi0_deg.to_string(),
            r.point.psi0_deg.to_string(),
            m.settled().to_string(),
            opt(m.velocity_settling_time),
            opt(m.phi_settling_time),
            opt(m.psi_settling_time),
            format!("{:.3}", m.peak_torque * 1000.0),
            format!("{:.3}", m.steady_state_torque_band * 1000.0),
            format!("{:.3}", m.lqr_steady_state_band * 1000.0),
            m.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_count_is_product_of_axes() {
        let base = RunConfig::default();
        let axes = SweepAxes {
            desired_velocity: Some(vec![0.1, 0.3]),
            phi0_deg: Some(vec![-5.0, 0.0, 5.0]),
            psi0_deg: Some(vec![1.0, 2.0]),
            ..SweepAxes::default()
        };
        let pts = sweep_points(&base, &axes).unwrap();
        assert_eq!(pts.len(), 12);
        assert_eq!(pts[0].desired_velocity, 0.1);
        assert_eq!(pts[0].psi0_deg, 1.0);
        assert_eq!(pts[1].psi0_deg, 2.0);
        assert_eq!(pts[11].desired_velocity, 0.3);
        assert_eq!(pts[11].pipe_diameter, base.robot.pipe_diameter);
    }

    #[test]
    fn empty_or_missing_axes_rejected() {
        let base = RunConfig::default();
        assert!(sweep_points(&base, &SweepAxes::default()).is_err());
        let axes = SweepAxes {
            phi0_deg: Some(vec![]),
            ..SweepAxes::default()
        };
        assert!(sweep_points(&base, &axes).is_err());
    }

    #[test]
    fn diameter_axis_changes_gain() {
        let base = RunConfig::default();
        let p = SweepPoint {
            desired_velocity: 0.1,
            pipe_diameter: 0.8,
            flow_velocity: 0.0,
            phi0_deg: 0.0,
            psi0_deg: 0.0,
        };
        let k_base = base.resolve_gain().unwrap().gain;
        let k_big = config_for_point(&base, &p).resolve_gain().unwrap().gain;
        assert_ne!(k_base, k_big);
    }
}
