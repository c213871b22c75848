//! Pneumatic arm model: cantilever deflection under rotor thrust, the
//! resulting thrust-loss coefficient, and the horizontal drift force left
//! over when opposite arms deflect unequally.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Deflection angles above this are outside the small-deflection regime.
pub const SMALL_ANGLE_LIMIT_DEG: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AirframeError {
    #[error("pressure {pressure_kpa} kPa outside calibrated range [{min_kpa}, {max_kpa}] kPa")]
    OutOfCalibration { pressure_kpa: f64, min_kpa: f64, max_kpa: f64 },
    #[error("thrust must be non-negative, got {0} N")]
    NegativeThrust(f64),
    #[error("invalid airframe: {0}")]
    Invalid(String),
}

/// Arm layout relative to the body x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum FrameConfig {
    /// Arms on the body axes ('+').
    Plus,
    /// Arms at 45° to the body axes ('x').
    #[serde(alias = "x", alias = "cross")]
    Cross,
}

impl FrameConfig {
    pub fn label(&self) -> &'static str {
        match self {
            FrameConfig::Plus => "plus",
            FrameConfig::Cross => "x",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plus" | "+" | "p" => Some(FrameConfig::Plus),
            "x" | "cross" | "×" => Some(FrameConfig::Cross),
            _ => None,
        }
    }
}

/// One entry of the pressure → elastic modulus table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusPoint {
    pub pressure_kpa: f64,
    pub modulus_pa: f64,
}

/// Inflatable arm geometry and stiffness calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirframeModel {
    /// Arm length (m).
    pub arm_length: f64,
    /// Beam cross-section radius (m).
    pub beam_radius: f64,
    /// Internal pressure (kPa).
    pub internal_pressure_kpa: f64,
    pub config: FrameConfig,
    /// Strictly increasing in pressure.
    pub modulus_table: Vec<ModulusPoint>,
    /// Treats the arms as infinitely stiff when set.
    #[serde(default)]
    pub rigid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflectionResult {
    /// Tip deflection (m).
    pub tip_deflection: f64,
    /// Tip rotation magnitude (rad).
    pub tip_angle: f64,
    /// `cos(tip_angle)`.
    pub thrust_loss_coeff: f64,
    /// Set when the angle exceeds the small-deflection regime.
    pub beyond_small_angle: bool,
}

pub const DEFAULT_ARM_LENGTH: f64 = 0.18;
pub const DEFAULT_BEAM_RADIUS: f64 = 0.015;
/// Load used for the bending characterization (N).
pub const CHARACTERIZATION_LOAD: f64 = 10.0;

/// Second moment of area of a solid circular section.
pub fn second_moment(radius: f64) -> f64 {
    std::f64::consts::PI * radius.powi(4) / 4.0
}

/// Modulus that produces tip deflection `y` under `load` (inverts `y = F l³ / 3EI`).
pub fn modulus_from_deflection(load: f64, arm_length: f64, radius: f64, y: f64) -> f64 {
    load * arm_length.powi(3) / (3.0 * y * second_moment(radius))
}

/// Modulus that produces tip angle `theta` under `load` (inverts `θ = F l² / 2EI`).
pub fn modulus_from_angle(load: f64, arm_length: f64, radius: f64, theta: f64) -> f64 {
    load * arm_length.powi(2) / (2.0 * theta * second_moment(radius))
}

/// The shipped modulus table: 207 kPa from the 12 mm tip deflection, 137.89
/// and 69 kPa from their reported tip angles (9.92° and 14.93°), all at 10 N.
pub fn default_modulus_table() -> Vec<ModulusPoint> {
    let (l, r, f) = (DEFAULT_ARM_LENGTH, DEFAULT_BEAM_RADIUS, CHARACTERIZATION_LOAD);
    vec![
        ModulusPoint { pressure_kpa: 69.0, modulus_pa: modulus_from_angle(f, l, r, 14.93f64.to_radians()) },
        ModulusPoint { pressure_kpa: 137.89, modulus_pa: modulus_from_angle(f, l, r, 9.92f64.to_radians()) },
        ModulusPoint { pressure_kpa: 207.0, modulus_pa: modulus_from_deflection(f, l, r, 0.012) },
    ]
}

impl AirframeModel {
    pub fn soft(pressure_kpa: f64, config: FrameConfig) -> Self {
        AirframeModel {
            arm_length: DEFAULT_ARM_LENGTH,
            beam_radius: DEFAULT_BEAM_RADIUS,
            internal_pressure_kpa: pressure_kpa,
            config,
            modulus_table: default_modulus_table(),
            rigid: false,
        }
    }

    pub fn rigid(config: FrameConfig) -> Self {
        AirframeModel { rigid: true, ..AirframeModel::soft(207.0, config) }
    }

    pub fn with_pressure(&self, pressure_kpa: f64) -> Self {
        AirframeModel { internal_pressure_kpa: pressure_kpa, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), AirframeError> {
        if !(self.arm_length > 0.0) || !(self.beam_radius > 0.0) {
            return Err(AirframeError::Invalid("arm length and beam radius must be positive".into()));
        }
        if self.rigid {
            return Ok(());
        }
        if self.modulus_table.is_empty() {
            return Err(AirframeError::Invalid("empty modulus table".into()));
        }
        for w in self.modulus_table.windows(2) {
            if !(w[1].pressure_kpa > w[0].pressure_kpa) {
                return Err(AirframeError::Invalid("modulus table pressures must be strictly increasing".into()));
            }
        }
        if self.modulus_table.iter().any(|p| !(p.modulus_pa > 0.0)) {
            return Err(AirframeError::Invalid("modulus entries must be positive".into()));
        }
        Ok(())
    }

    pub fn second_moment(&self) -> f64 {
        second_moment(self.beam_radius)
    }

    /// Elastic modulus at the current pressure, interpolated linearly.
    pub fn modulus(&self) -> Result<f64, AirframeError> {
        if self.rigid {
            return Ok(f64::INFINITY);
        }
        interpolate_modulus(&self.modulus_table, self.internal_pressure_kpa)
    }

    /// Cantilever tip response to a tip load `thrust`.
    pub fn beam_deflection(&self, thrust: f64) -> Result<DeflectionResult, AirframeError> {
        self.beam_deflection_scaled(thrust, 1.0)
    }

    /// As [`beam_deflection`](Self::beam_deflection) with the modulus multiplied
    /// by `modulus_scale` (per-arm fabrication spread).
    pub fn beam_deflection_scaled(&self, thrust: f64, modulus_scale: f64) -> Result<DeflectionResult, AirframeError> {
        if thrust < 0.0 {
            return Err(AirframeError::NegativeThrust(thrust));
        }
        let e = self.modulus()? * modulus_scale;
        if e.is_infinite() {
            return Ok(DeflectionResult { tip_deflection: 0.0, tip_angle: 0.0, thrust_loss_coeff: 1.0, beyond_small_angle: false });
        }
        let ei = e * self.second_moment();
        let l = self.arm_length;
        let y = thrust * l.powi(3) / (3.0 * ei);
        let theta = thrust * l.powi(2) / (2.0 * ei);
        Ok(DeflectionResult {
            tip_deflection: y,
            tip_angle: theta,
            thrust_loss_coeff: theta.cos(),
            beyond_small_angle: theta.to_degrees() > SMALL_ANGLE_LIMIT_DEG,
        })
    }

    /// Thrust component along the body axis, `F cos θ(F)`.
    pub fn effective_thrust(&self, thrust: f64) -> Result<f64, AirframeError> {
        Ok(thrust * self.beam_deflection(thrust)?.thrust_loss_coeff)
    }
}

fn interpolate_modulus(table: &[ModulusPoint], p: f64) -> Result<f64, AirframeError> {
    let first = table.first().ok_or_else(|| AirframeError::Invalid("empty modulus table".into()))?;
    let last = table.last().unwrap();
    let tol = 1e-9;
    if p < first.pressure_kpa - tol || p > last.pressure_kpa + tol {
        return Err(AirframeError::OutOfCalibration {
            pressure_kpa: p,
            min_kpa: first.pressure_kpa,
            max_kpa: last.pressure_kpa,
        });
    }
    if table.len() == 1 || p <= first.pressure_kpa {
        return Ok(first.modulus_pa);
    }
    for w in table.windows(2) {
        if p <= w[1].pressure_kpa {
            let s = (p - w[0].pressure_kpa) / (w[1].pressure_kpa - w[0].pressure_kpa);
            return Ok(w[0].modulus_pa + s * (w[1].modulus_pa - w[0].modulus_pa));
        }
    }
    Ok(last.modulus_pa)
}

/// Horizontal force left over by opposite arms deflecting by different
/// amounts, in the body frame. Arms are numbered 1..4 around the frame.
pub fn drift_force(thrusts: [f64; 4], angles: [f64; 4]) -> Vec3 {
    Vec3::new(
        thrusts[0] * angles[0].sin() - thrusts[2] * angles[2].sin(),
        thrusts[1] * angles[1].sin() - thrusts[3] * angles[3].sin(),
        0.0,
    )
}

/// Worst per-axis drift over thrust and angle intervals. The x component is
/// increasing in `(F₁, θ₁)` and decreasing in `(F₃, θ₃)` for angles below
/// 90°, so the extreme sits on interval end points.
pub fn drift_bound(angle_range: (f64, f64), thrust_range: (f64, f64)) -> f64 {
    let hi = thrust_range.1 * angle_range.1.sin();
    let lo = thrust_range.0 * angle_range.0.sin();
    hi - lo
}
