//! One-file experiment description: frame, inertia, contact calibration,
//! grasper, controller gains, mission, perch object and run settings.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::airframe::{AirframeModel, FrameConfig, ModulusPoint};
use crate::calibration::{default_calibration, CalibrationSet, FrameKey, FrameKind};
use crate::contact::ContactModel;
use crate::control::{AllocationParams, ControllerGains, Rotorcraft};
use crate::dynamics::{InertialParams, CONTACT_DT, FREE_FLIGHT_DT, GRAVITY};
use crate::grasper::GrasperSpec;
use crate::math::Vec3;
use crate::mission::MissionParams;
use crate::perch::{ClampParams, Cylinder, PerchSetup, PerchWorld};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Pressure as Pa (bare number) or a string with a `kPa`/`Pa` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pressure {
    pub pascals: f64,
}

impl Pressure {
    pub fn kpa(&self) -> f64 {
        self.pascals / 1e3
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let (num, scale) = if let Some(n) = t.strip_suffix("kPa") {
            (n, 1e3)
        } else if let Some(n) = t.strip_suffix("Pa") {
            (n, 1.0)
        } else {
            return Err(format!("pressure {s:?} needs a 'kPa' or 'Pa' suffix"));
        };
        let v: f64 = num.trim().parse().map_err(|_| format!("bad pressure value {s:?}"))?;
        Ok(Pressure { pascals: v * scale })
    }
}

impl<'de> Deserialize<'de> for Pressure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(Pressure { pascals: p }),
            Raw::Text(s) => Pressure::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    pub kind: FrameKind,
    /// Required for soft frames.
    #[serde(default)]
    pub pressure: Option<Pressure>,
    #[serde(default = "plus")]
    pub config: FrameConfig,
    /// Overrides the built-in pressure → modulus table.
    #[serde(default)]
    pub modulus_table: Option<Vec<ModulusPoint>>,
}

fn plus() -> FrameConfig {
    FrameConfig::Plus
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InertialSection {
    /// kg; defaults to the calibrated frame mass.
    pub mass: Option<f64>,
    /// m.
    pub arm_offset: Option<f64>,
    /// m/s².
    pub gravity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ContactSection {
    /// Calibration file, relative to the scenario file; built-in when absent.
    pub calibration: Option<String>,
    /// Explicit model, bypassing calibration lookup.
    pub model: Option<ContactModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GrasperSection {
    pub fingers: u32,
    pub springs: u32,
}

impl Default for GrasperSection {
    fn default() -> Self {
        GrasperSection { fingers: 3, springs: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub trials: usize,
    /// Half-width of the uniform lateral perch-position error (m).
    pub lateral_noise: f64,
    /// Simulated time limit per trial (s).
    pub duration: f64,
    /// s.
    pub dt: f64,
    /// s.
    pub contact_dt: f64,
    /// s.
    pub log_interval: f64,
    /// Take-off point (x, y) (m).
    pub start: [f64; 2],
    /// Grasper palm below the centre of mass (m).
    pub palm_offset: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            trials: 1,
            lateral_noise: 0.0,
            duration: 60.0,
            dt: FREE_FLIGHT_DT,
            contact_dt: CONTACT_DT,
            log_interval: 0.002,
            start: [0.0, -1.5],
            palm_offset: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frame: FrameSection,
    #[serde(default)]
    pub inertial: InertialSection,
    #[serde(default)]
    pub contact: ContactSection,
    #[serde(default)]
    pub grasper: GrasperSection,
    #[serde(default)]
    pub controller: ControllerGains,
    #[serde(default)]
    pub mission: MissionParams,
    pub perch: Cylinder,
    #[serde(default)]
    pub clamp: ClampParams,
    #[serde(default)]
    pub run: RunSection,
}

/// A parsed scenario plus everything resolved from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    /// SHA-256 of the file bytes, hex.
    pub hash: String,
    pub calibration: CalibrationSet,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn frame_key(&self) -> FrameKey {
        match self.frame.kind {
            FrameKind::Rigid => FrameKey::rigid(self.frame.config),
            FrameKind::Soft => FrameKey::soft(self.frame.pressure.map(|p| p.kpa()).unwrap_or(f64::NAN), self.frame.config),
        }
    }

    /// Lists every problem rather than stopping at the first.
    pub fn validate(&self, calibration: &CalibrationSet) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.frame.kind == FrameKind::Soft && self.frame.pressure.is_none() {
            errs.push("frame.pressure is required for a soft frame".to_string());
        }
        if self.contact.model.is_none() {
            if let Err(e) = calibration.lookup(&self.frame_key()) {
                errs.push(e.to_string());
            }
        }
        if let Some(m) = &self.contact.model {
            if let Err(e) = m.validate() {
                errs.push(format!("contact.model: {e}"));
            }
        }
        match self.airframe() {
            Ok(a) => {
                if let Err(e) = a.validate() {
                    errs.push(format!("frame: {e}"));
                }
            }
            Err(e) => errs.push(e),
        }
        match GrasperSpec::new(self.grasper.fingers, self.grasper.springs) {
            Ok(_) => {}
            Err(e) => errs.push(format!("grasper: {e}")),
        }
        if let Err(e) = self.controller.validate() {
            errs.push(format!("controller: {e}"));
        }
        if let Err(e) = self.mission.validate() {
            errs.push(format!("mission: {e}"));
        }
        if !(self.perch.diameter > 0.0) || !(self.perch.top_altitude > 0.0) {
            errs.push("perch.diameter and perch.top_altitude must be positive".into());
        }
        let r = &self.run;
        if !(r.duration > 0.0 && r.dt > 0.0 && r.contact_dt > 0.0 && r.contact_dt <= r.dt) {
            errs.push("run: need duration, dt > 0 and 0 < contact_dt <= dt".into());
        }
        if !(r.log_interval >= 0.0) || !(r.lateral_noise >= 0.0) || !(r.palm_offset >= 0.0) {
            errs.push("run: log_interval, lateral_noise and palm_offset must be non-negative".into());
        }
        for (name, v) in [("mass", self.inertial.mass), ("arm_offset", self.inertial.arm_offset)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    errs.push(format!("inertial.{name} must be positive"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn airframe(&self) -> Result<AirframeModel, String> {
        let mut a = match self.frame.kind {
            FrameKind::Rigid => AirframeModel::rigid(self.frame.config),
            FrameKind::Soft => {
                let p = self.frame.pressure.ok_or("frame.pressure is required for a soft frame")?;
                AirframeModel::soft(p.kpa(), self.frame.config)
            }
        };
        if let Some(t) = &self.frame.modulus_table {
            a.modulus_table = t.clone();
        }
        Ok(a)
    }

    fn contact_and_mass(&self, calibration: &CalibrationSet) -> Result<(ContactModel, f64), ConfigError> {
        let cal = calibration.lookup(&self.frame_key());
        let model = match (&self.contact.model, &cal) {
            (Some(m), _) => *m,
            (None, Ok(c)) => c.contact,
            (None, Err(e)) => return Err(ConfigError::Invalid(vec![e.to_string()])),
        };
        let mass = self.inertial.mass.or(cal.as_ref().ok().map(|c| c.mass)).unwrap_or(crate::dynamics::DEFAULT_MASS);
        Ok((model, mass))
    }

    pub fn contact_model(&self, calibration: &CalibrationSet) -> Result<ContactModel, ConfigError> {
        Ok(self.contact_and_mass(calibration)?.0)
    }

    /// Setup for one trial with the given lateral perch error.
    pub fn perch_setup(&self, calibration: &CalibrationSet, lateral_offset: f64) -> Result<PerchSetup, ConfigError> {
        self.validate(calibration)?;
        let (frame_contact, mass) = self.contact_and_mass(calibration)?;
        let mut params =
            InertialParams::point_mass_arms(mass, self.inertial.arm_offset.unwrap_or(crate::dynamics::DEFAULT_ARM_OFFSET));
        params.gravity = self.inertial.gravity.unwrap_or(GRAVITY);
        let allocation = AllocationParams { config: self.frame.config, ..AllocationParams::default() };
        let airframe = self.airframe().map_err(|e| ConfigError::Invalid(vec![e]))?;
        let grasper = GrasperSpec::new(self.grasper.fingers, self.grasper.springs)
            .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        Ok(PerchSetup {
            params,
            hardware: Rotorcraft::new(allocation, airframe.clone()),
            gains: self.controller,
            world: PerchWorld {
                perch: self.perch,
                frame_contact,
                palm_offset: Vec3::new(0.0, 0.0, self.run.palm_offset),
                frame_span: airframe.arm_length,
                clamp: self.clamp,
            },
            grasper,
            mission: self.mission,
            start: self.run.start,
            lateral_offset,
            duration: self.run.duration,
            log_interval: self.run.log_interval,
            dt: self.run.dt,
            contact_dt: self.run.contact_dt,
        })
    }
}

impl LoadedScenario {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let config = ScenarioConfig::from_toml(text)?;
        let calibration = match &config.contact.calibration {
            None => default_calibration(),
            Some(rel) => {
                let path = base_dir.map(|b| b.join(rel)).unwrap_or_else(|| rel.into());
                let body = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
                CalibrationSet::from_toml(&body).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
        };
        config.validate(&calibration)?;
        Ok(LoadedScenario { config, hash: sha256_hex(text.as_bytes()), calibration })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text, path.parent())
    }

    pub fn perch_setup(&self, lateral_offset: f64) -> Result<PerchSetup, ConfigError> {
        self.config.perch_setup(&self.calibration, lateral_offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
[frame]
kind = "soft"
pressure = "207kPa"

[perch]
axis_y = 0.0
top_altitude = 0.8
diameter = 0.055
"#;

    #[test]
    fn pressure_units() {
        assert_eq!(Pressure::parse("207kPa").unwrap().pascals, 207e3);
        assert_eq!(Pressure::parse("207 kPa").unwrap().pascals, 207e3);
        assert_eq!(Pressure::parse("1500Pa").unwrap().pascals, 1500.0);
        assert!(Pressure::parse("207").is_err());
        let c = ScenarioConfig::from_toml(&MIN.replace("\"207kPa\"", "207000.0")).unwrap();
        assert_eq!(c.frame.pressure.unwrap().kpa(), 207.0);
    }

    #[test]
    fn minimal_scenario_resolves() {
        let s = LoadedScenario::from_toml(MIN, None).unwrap();
        let setup = s.perch_setup(0.0).unwrap();
        assert_eq!(setup.params.mass, 1.14);
        assert_eq!(setup.grasper.finger_count, 3);
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MIN.replace("[perch]", "[perch]\ncolour = \"red\"");
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn all_problems_listed() {
        let bad = MIN.replace("pressure = \"207kPa\"", "pressure = \"30kPa\"").replace("diameter = 0.055", "diameter = -1.0");
        let err = LoadedScenario::from_toml(&bad, None).unwrap_err();
        let ConfigError::Invalid(list) = err else { panic!("{err:?}") };
        assert!(list.len() >= 2, "{list:?}");
        assert!(list.iter().any(|m| m.contains("available")), "{list:?}");
    }
}
