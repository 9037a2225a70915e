//! CSV telemetry.
//!
//! Layout (version 1):
//!
//! ```text
//! # inpipe-telemetry v1
//! t,x,v,phi_deg,phi_rate,psi_deg,psi_rate,tau1_nmm,tau2_nmm,tau3_nmm,tau_lqr1_nmm,tau_lqr2_nmm,tau_lqr3_nmm
//! ```
//!
//! One row per integration sample. Angles in degrees, rates in rad/s,
//! torques in N mm, everything else SI. Values are written in scientific
//! notation with 10 significant digits (`{:.9e}`), so a parsed value
//! re-formats to the identical string.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{RunMetrics, Trajectory};

pub const VERSION_LINE: &str = "# inpipe-telemetry v1";

pub const HEADER: [&str; 13] = [
    "t",
    "x",
    "v",
    "phi_deg",
    "phi_rate",
    "psi_deg",
    "psi_rate",
    "tau1_nmm",
    "tau2_nmm",
    "tau3_nmm",
    "tau_lqr1_nmm",
    "tau_lqr2_nmm",
    "tau_lqr3_nmm",
];

const NMM_PER_NM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub phi_deg: f64,
    pub phi_rate: f64,
    pub psi_deg: f64,
    pub psi_rate: f64,
    pub tau1_nmm: f64,
    pub tau2_nmm: f64,
    pub tau3_nmm: f64,
    pub tau_lqr1_nmm: f64,
    pub tau_lqr2_nmm: f64,
    pub tau_lqr3_nmm: f64,
}

impl TelemetryRow {
    pub fn values(&self) -> [f64; 13] {
        [
            self.t,
            self.x,
            self.v,
            self.phi_deg,
            self.phi_rate,
            self.psi_deg,
            self.psi_rate,
            self.tau1_nmm,
            self.tau2_nmm,
            self.tau3_nmm,
            self.tau_lqr1_nmm,
            self.tau_lqr2_nmm,
            self.tau_lqr3_nmm,
        ]
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v:.9e}")
}

pub fn rows(traj: &Trajectory) -> impl Iterator<Item = TelemetryRow> + '_ {
    traj.samples.iter().map(|s| TelemetryRow {
        t: s.t,
        x: s.state.x,
        v: s.state.velocity,
        phi_deg: s.state.phi.to_degrees(),
        phi_rate: s.state.phi_rate,
        psi_deg: s.state.psi.to_degrees(),
        psi_rate: s.state.psi_rate,
        tau1_nmm: s.torques.0[0] * NMM_PER_NM,
        tau2_nmm: s.torques.0[1] * NMM_PER_NM,
        tau3_nmm: s.torques.0[2] * NMM_PER_NM,
        tau_lqr1_nmm: s.lqr[0] * NMM_PER_NM,
        tau_lqr2_nmm: s.lqr[1] * NMM_PER_NM,
        tau_lqr3_nmm: s.lqr[2] * NMM_PER_NM,
    })
}

pub fn write_telemetry<W: Write>(mut out: W, traj: &Trajectory) -> Result<()> {
    writeln!(out, "{VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in rows(traj) {
        w.write_record(row.values().map(format_value))?;
    }
    w.flush()?;
    Ok(())
}

pub fn telemetry_bytes(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_telemetry(&mut buf, traj)?;
    Ok(buf)
}

pub fn read_telemetry<R: Read>(input: R) -> Result<Vec<TelemetryRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(crate::Error::Config(format!(
            "unexpected telemetry header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows)
}

fn fmt_opt(t: Option<f64>) -> String {
    t.map_or_else(|| "not settled".to_string(), |t| format!("{t:.4} s"))
}

/// Human-readable run summary.
pub fn metrics_summary(m: &RunMetrics) -> String {
    let mut s = String::new();
    s += &format!("velocity settling time : {}\n", fmt_opt(m.velocity_settling_time));
    s += &format!("phi settling time      : {}\n", fmt_opt(m.phi_settling_time));
    s += &format!("psi settling time      : {}\n", fmt_opt(m.psi_settling_time));
    s += &format!("peak torque            : {:.1} N.mm\n", m.peak_torque * NMM_PER_NM);
    s += &format!(
        "steady torque band     : {:.1} N.mm\n",
        m.steady_state_torque_band * NMM_PER_NM
    );
    s += &format!("peak LQR torque        : {:.1} N.mm\n", m.lqr_peak_torque * NMM_PER_NM);
    s += &format!(
        "steady LQR torque band : {:.1} N.mm\n",
        m.lqr_steady_state_band * NMM_PER_NM
    );
    if m.diverged {
        s += "run DIVERGED\n";
    }
    s
}
