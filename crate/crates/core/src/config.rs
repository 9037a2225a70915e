//! TOML run configuration.
//!
//! A config file has up to five tables: `[robot]`, `[controller]`,
//! `[scenario]`, `[output]` and `[sweep]`. Every key is optional and takes
//! the documented default; unknown keys are rejected. A config may be
//! layered on top of a built-in preset, in which case the file's keys win.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3x4;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, MixingRule, NoiseStd, SpeedErrorSignal};
use crate::error::{Error, Result};
use crate::linmodel::{paper_linear_model, BVariant, LinearModel};
use crate::pid::PidGains;
use crate::plant::RobotParams;
use crate::riccati::{synthesize, GainMatrix, LqrWeights, Synthesis};
use crate::sim::{Scenario, SettlingBands, DEFAULT_DT, DEFAULT_DURATION};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub robot: RobotParams,
    pub controller: ControllerSection,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
    pub sweep: Option<SweepAxes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// `V_d` [m/s].
    pub desired_velocity: f64,
    /// Diagonal of the state weight `Q`.
    pub q_diag: [f64; 4],
    /// Diagonal of the input weight `R`.
    pub r_diag: [f64; 3],
    /// Design model used for synthesis.
    pub b_variant: BVariant,
    /// Explicit 3x4 gain (row-major rows); bypasses synthesis when set.
    pub gain: Option<[[f64; 4]; 3]>,
    pub pid: PidGains,
    /// Per-wheel torque limit [N m]; absent means unlimited.
    pub torque_limit: Option<f64>,
    pub noise: NoiseStd,
    pub seed: u64,
    pub mixing: MixingRule,
    pub speed_error: SpeedErrorSignal,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            desired_velocity: 0.0,
            q_diag: [200.0, 10.0, 200.0, 10.0],
            r_diag: [1.0; 3],
            b_variant: BVariant::KConsistent,
            gain: None,
            pid: PidGains::PAPER,
            torque_limit: None,
            noise: NoiseStd::default(),
            seed: 0,
            mixing: MixingRule::Additive,
            speed_error: SpeedErrorSignal::RimSpeed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub phi0_deg: f64,
    pub psi0_deg: f64,
    /// [rad/s]
    pub phi_rate0: f64,
    /// [rad/s]
    pub psi_rate0: f64,
    /// [m/s]
    pub initial_velocity: f64,
    /// [s]
    pub duration: f64,
    /// [s]
    pub dt: f64,
    pub bands: SettlingBands,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
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

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Telemetry CSV path for `simulate` when `--out` is not given.
    pub telemetry: Option<PathBuf>,
    /// Output directory for `sweep` when `--out` is not given.
    pub sweep_dir: Option<PathBuf>,
}

/// Lists of values to take the Cartesian product over. Absent axes keep the
/// base config's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub desired_velocity: Option<Vec<f64>>,
    pub pipe_diameter: Option<Vec<f64>>,
    pub flow_velocity: Option<Vec<f64>>,
    pub phi0_deg: Option<Vec<f64>>,
    pub psi0_deg: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperIter1,
    PaperIter2,
    PaperIter3,
    PaperGain,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::PaperIter1,
        Preset::PaperIter2,
        Preset::PaperIter3,
        Preset::PaperGain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperIter1 => "paper-iter1",
            Preset::PaperIter2 => "paper-iter2",
            Preset::PaperIter3 => "paper-iter3",
            Preset::PaperGain => "paper-gain",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Preset::PaperIter1 => include_str!("../presets/iteration1.toml"),
            Preset::PaperIter2 => include_str!("../presets/iteration2.toml"),
            Preset::PaperIter3 => include_str!("../presets/iteration3.toml"),
            Preset::PaperGain => include_str!("../presets/gain.toml"),
        }
    }

    pub fn iteration(n: usize) -> Option<Self> {
        match n {
            1 => Some(Preset::PaperIter1),
            2 => Some(Preset::PaperIter2),
            3 => Some(Preset::PaperIter3),
            _ => None,
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                format!("unknown preset `{s}` (expected one of {})", names.join(", "))
            })
    }
}

fn parse_table(src: &str, origin: &str) -> Result<toml::Table> {
    src.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Config(e.to_string()))
    }

    /// Preset (if any) overlaid by the file at `path` (if any).
    pub fn load(preset: Option<Preset>, path: Option<&Path>) -> Result<Self> {
        let mut table = match preset {
            Some(p) => parse_table(p.source(), p.name())?,
            None => toml::Table::new(),
        };
        if let Some(path) = path {
            let src = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // Deserialize the file alone first so diagnostics point at its
            // own lines and columns.
            toml::from_str::<RunConfig>(&src)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, parse_table(&src, &path.display().to_string())?);
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn weights(&self) -> Result<LqrWeights> {
        LqrWeights::from_diagonals(&self.controller.q_diag, &self.controller.r_diag)
    }

    pub fn design_model(&self) -> Result<LinearModel> {
        paper_linear_model(&self.robot, self.controller.b_variant)
    }

    /// Gain from the explicit override, or from LQR synthesis on the design
    /// model. An all-zero `Q` yields `K = 0` with a warning, since the
    /// marginally stable plant then has no stabilizing Riccati solution.
    pub fn resolve_gain(&self) -> Result<GainOutcome> {
        if let Some(rows) = self.controller.gain {
            let k = Matrix3x4::from_fn(|i, j| rows[i][j]);
            return Ok(GainOutcome {
                gain: GainMatrix(k),
                synthesis: None,
                warning: None,
            });
        }
        let weights = self.weights()?;
        if self.controller.q_diag.iter().all(|&q| q == 0.0) {
            return Ok(GainOutcome {
                gain: GainMatrix::zeros(),
                synthesis: None,
                warning: Some(
                    "Q is zero: no state is penalized, K = 0 and the attitude loop is left open"
                        .into(),
                ),
            });
        }
        let syn = synthesize(&self.design_model()?, &weights)?;
        Ok(GainOutcome {
            gain: syn.gain,
            synthesis: Some(syn),
            warning: None,
        })
    }

    pub fn scenario_with_gain(&self, gain: GainMatrix) -> Result<Scenario> {
        let c = &self.controller;
        let s = &self.scenario;
        let sc = Scenario {
            params: self.robot.clone(),
            controller: ControllerConfig {
                gain,
                pid_gains: c.pid,
                desired_velocity: c.desired_velocity,
                torque_limit: c.torque_limit,
                noise_std: c.noise,
                rng_seed: c.seed,
                mixing: c.mixing,
                speed_error: c.speed_error,
            },
            phi0_deg: s.phi0_deg,
            psi0_deg: s.psi0_deg,
            phi_rate0: s.phi_rate0,
            psi_rate0: s.psi_rate0,
            initial_velocity: s.initial_velocity,
            duration: s.duration,
            dt: s.dt,
            bands: s.bands,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_with_gain(self.resolve_gain()?.gain)
    }
}

#[derive(Debug, Clone)]
pub struct GainOutcome {
    pub gain: GainMatrix,
    pub synthesis: Option<Synthesis>,
    pub warning: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_complete() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.dt, 1e-4);
        assert_eq!(sc.duration, 2.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[robot]\nmas = 2.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mas"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(RunConfig::from_toml_str("[robott]\n").is_err());
    }

    #[test]
    fn presets_match_iteration_table() {
        for (n, &(vd, phi0, psi0)) in crate::sim::PAPER_ITERATIONS.iter().enumerate() {
            let cfg = RunConfig::load(Preset::iteration(n + 1), None).unwrap();
            assert_eq!(cfg.controller.desired_velocity, vd);
            assert_eq!(cfg.scenario.phi0_deg, phi0);
            assert_eq!(cfg.scenario.psi0_deg, psi0);
            assert_eq!(cfg.robot.pipe_diameter, 0.4);
        }
    }

    #[test]
    fn file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[scenario]\nduration = 0.5\n").unwrap();
        let cfg = RunConfig::load(Some(Preset::PaperIter3), Some(&path)).unwrap();
        assert_eq!(cfg.scenario.duration, 0.5);
        assert_eq!(cfg.controller.desired_velocity, 0.5);
    }

    #[test]
    fn explicit_gain_bypasses_synthesis() {
        let cfg = RunConfig::from_toml_str(
            "[controller]\ngain = [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12]]\n",
        )
        .unwrap();
        let out = cfg.resolve_gain().unwrap();
        assert!(out.synthesis.is_none());
        assert_eq!(out.gain.0[(1, 2)], 7.0);
    }

    #[test]
    fn zero_q_gives_zero_gain_with_warning() {
        let cfg = RunConfig::from_toml_str("[controller]\nq_diag = [0, 0, 0, 0]\n").unwrap();
        let out = cfg.resolve_gain().unwrap();
        assert_eq!(out.gain, GainMatrix::zeros());
        assert!(out.warning.is_some());
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("paper-iter4".parse::<Preset>().is_err());
    }
}
