//! Scenario files: TOML configs that fully describe a run.
//!
//! Unknown keys are rejected and parse errors carry the line/column
//! reported by the TOML parser. A parsed file serializes back to an
//! equivalent file (defaults are materialized on the first parse).

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::CbfParams;
use crate::controllers::PdGains;
use crate::dynamics::{ControlInput, QuadParams, QuadState, STANDARD_GRAVITY};
use crate::sim::{Scenario, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {path}:\n{message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub quad: QuadSection,
    pub cbf: CbfSection,
    pub sim: SimSection,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    pub mass: f64,
    /// (J_xx, J_yy, J_zz), kg·m².
    pub inertia: [f64; 3],
    pub arm_length: f64,
    pub thrust_coeff: f64,
    pub moment_coeff: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// (f_T, τ_x, τ_y, τ_z) lower bounds.
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfSection {
    /// Pole gains (p_1..p_4) per axis.
    pub p_x: [f64; 4],
    pub p_y: [f64; 4],
    pub p_z: [f64; 4],
    pub r_min: [f64; 3],
    pub r_max: [f64; 3],
    #[serde(default = "default_thrust_floor")]
    pub thrust_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt_physics")]
    pub dt_physics: f64,
    #[serde(default = "default_control_period")]
    pub control_period: f64,
    pub duration: f64,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
    /// Least-change weights (w_f, w_τx, w_τy, w_τz). The bundled scenarios
    /// weight each input by its actuator range so the filter spends thrust
    /// and torque authority comparably.
    #[serde(default = "default_filter_weights")]
    pub filter_weights: [f64; 4],
    /// Keep filtered inputs realizable by non-negative squared rotor
    /// speeds (hard rows in the QP).
    #[serde(default)]
    pub rotor_limits: bool,
    /// Snap-row freeze re-linearization passes per filter call.
    #[serde(default = "default_freeze_iterations")]
    pub freeze_iterations: usize,
    #[serde(default)]
    pub strict_initial_set: bool,
    #[serde(default)]
    pub seed: u64,
    pub initial: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Quaternion (w, x, y, z); normalized on load.
    #[serde(default = "default_attitude")]
    pub attitude: [f64; 4],
    #[serde(default)]
    pub body_rate: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// "tracking" or "constant_input".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_gains: Option<PdGainsSection>,
    /// Held nominal input (f_T, τ_x, τ_y, τ_z) for "constant_input".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGainsSection {
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    pub k_att: [f64; 3],
    pub k_rate: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}
fn default_thrust_floor() -> f64 {
    1e-3
}
fn default_dt_physics() -> f64 {
    1e-3
}
fn default_control_period() -> f64 {
    1e-2
}
fn default_true() -> bool {
    true
}
fn default_attitude() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}
fn default_filter_weights() -> [f64; 4] {
    [1.0, 1.0, 1.0, 1.0]
}
fn default_freeze_iterations() -> usize {
    1
}

impl ScenarioFile {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario files always serialize")
    }

    /// Validate and convert into the simulator's config.
    pub fn to_sim_config(&self) -> Result<SimConfig, ConfigError> {
        let q = &self.quad;
        let quad = QuadParams {
            mass: q.mass,
            inertia_diag: Vector3::from(q.inertia),
            arm_length: q.arm_length,
            thrust_coeff: q.thrust_coeff,
            moment_coeff: q.moment_coeff,
            gravity: q.gravity,
            u_min: Vector4::from(q.u_min),
            u_max: Vector4::from(q.u_max),
            gyro_torque_enabled: false,
        };
        quad.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let c = &self.cbf;
        let gains = [0, 1, 2, 3].map(|i| Vector3::new(c.p_x[i], c.p_y[i], c.p_z[i]));
        let cbf = CbfParams::new(gains, Vector3::from(c.r_min), Vector3::from(c.r_max))
            .and_then(|p| p.with_thrust_floor(c.thrust_floor))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let scenario = match self.scenario.kind.as_str() {
            "tracking" => {
                let gains = match &self.scenario.pd_gains {
                    Some(g) => PdGains {
                        kp: Vector3::from(g.kp),
                        kd: Vector3::from(g.kd),
                        k_att: Vector3::from(g.k_att),
                        k_rate: Vector3::from(g.k_rate),
                    },
                    None => PdGains::default(),
                };
                Scenario::Tracking { gains }
            }
            "constant_input" => {
                let u0 = self.scenario.u0.ok_or_else(|| {
                    ConfigError::Invalid("scenario.u0 is required for kind = \"constant_input\"".into())
                })?;
                Scenario::ConstantInput { u0: ControlInput::from_vector(&Vector4::from(u0)) }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "scenario.kind must be \"tracking\" or \"constant_input\", got {other:?}"
                )))
            }
        };

        let i = &self.sim.initial;
        let qv = Quaternion::new(i.attitude[0], i.attitude[1], i.attitude[2], i.attitude[3]);
        if qv.norm() < 1e-6 {
            return Err(ConfigError::Invalid("initial attitude quaternion is zero".into()));
        }
        let initial_state = QuadState {
            position: Vector3::from(i.position),
            velocity: Vector3::from(i.velocity),
            attitude: UnitQuaternion::from_quaternion(qv),
            body_rate: Vector3::from(i.body_rate),
        };

        let cfg = SimConfig {
            dt_physics: self.sim.dt_physics,
            control_period: self.sim.control_period,
            duration: self.sim.duration,
            initial_state,
            scenario,
            cbf,
            quad,
            filter_enabled: self.sim.filter_enabled,
            filter_weights: Vector4::from(self.sim.filter_weights),
            rotor_limits: self.sim.rotor_limits,
            freeze_iterations: self.sim.freeze_iterations,
            strict_initial_set: self.sim.strict_initial_set,
            seed: self.sim.seed,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "test"

[quad]
mass = 1.5
inertia = [0.039, 0.051, 0.102]
arm_length = 0.375
thrust_coeff = 1.2e-5
moment_coeff = 1.9e-7
u_min = [0.0, -5.13, -5.13, -0.024]
u_max = [39.0, 5.13, 5.13, 0.024]

[cbf]
p_x = [1.0, 4.0, 5.0, 5.0]
p_y = [1.0, 4.0, 5.0, 5.0]
p_z = [1.0, 5.0, 10.0, 10.0]
r_min = [-1.0, -1.0, 2.0]
r_max = [1.0, 1.0, 6.0]

[sim]
duration = 70.0

[sim.initial]
position = [0.0, 0.0, 3.0]

[scenario]
kind = "tracking"
"#;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let f = ScenarioFile::from_str_named(MINIMAL, "inline").unwrap();
        assert_eq!(f.sim.dt_physics, 1e-3);
        assert_eq!(f.sim.control_period, 1e-2);
        assert!(f.sim.filter_enabled);
        assert_eq!(f.quad.gravity, STANDARD_GRAVITY);
        let cfg = f.to_sim_config().unwrap();
        assert!(matches!(cfg.scenario, Scenario::Tracking { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = MINIMAL.replace("duration = 70.0", "duration = 70.0\nbogus_key = 1");
        let err = ScenarioFile::from_str_named(&text, "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "{msg}");
        assert!(msg.contains("line"), "expected line info in: {msg}");
    }

    #[test]
    fn missing_required_key_is_rejected() {
        let text = MINIMAL.replace("mass = 1.5\n", "");
        let err = ScenarioFile::from_str_named(&text, "inline").unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn constant_input_requires_u0() {
        let text = MINIMAL.replace("kind = \"tracking\"", "kind = \"constant_input\"");
        let f = ScenarioFile::from_str_named(&text, "inline").unwrap();
        let err = f.to_sim_config().unwrap_err();
        assert!(err.to_string().contains("u0"), "{err}");
    }

    #[test]
    fn round_trips_through_serialization() {
        let f = ScenarioFile::from_str_named(MINIMAL, "inline").unwrap();
        let text = f.to_toml_string();
        let back = ScenarioFile::from_str_named(&text, "roundtrip").unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn bad_physics_params_are_rejected() {
        let text = MINIMAL.replace("mass = 1.5", "mass = -1.0");
        let f = ScenarioFile::from_str_named(&text, "inline").unwrap();
        assert!(matches!(f.to_sim_config(), Err(ConfigError::Invalid(_))));
    }
}
