//! Bistable fabric grasper: snap-through activation on contact force,
//! passive holding, pneumatic recoil and holding capacity by perch diameter.

use serde::{Deserialize, Serialize};

pub const ACTIVATION_TIME: f64 = 4e-3;
pub const RECOIL_TIME: f64 = 3.0;
pub const RECOIL_PRESSURE_KPA: f64 = 83.0;
/// Rate-of-drop threshold marking slip in a pull test (N per sample unit).
pub const SLIP_SLOPE: f64 = -5.8;
/// Contact duration used to convert activation force into approach speed (s).
pub const IMPACT_DURATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrasperError {
    #[error("unsupported grasper: {0}")]
    Unsupported(String),
    #[error("invalid grasper spec: {0}")]
    Invalid(String),
    #[error("force history needs at least 2 samples, got {0}")]
    ShortHistory(usize),
    #[error("sample spacing must be positive, got {0}")]
    Spacing(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityPoint {
    pub diameter_mm: f64,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrasperSpec {
    pub finger_count: u32,
    pub springs_per_finger: u32,
    /// N.
    pub activation_force: f64,
    /// s.
    pub activation_time: f64,
    /// s.
    pub recoil_time: f64,
    pub recoil_pressure_kpa: f64,
    /// Measured only for one and three springs (N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip_force: Option<f64>,
    /// Strictly increasing diameter, strictly decreasing force.
    pub capacity_table: Vec<CapacityPoint>,
    /// Largest object the fingers wrap around (mm).
    pub max_grasp_diameter_mm: f64,
}

fn table(points: &[(f64, f64)]) -> Vec<CapacityPoint> {
    points.iter().map(|&(diameter_mm, force)| CapacityPoint { diameter_mm, force }).collect()
}

impl GrasperSpec {
    pub fn new(finger_count: u32, springs_per_finger: u32) -> Result<Self, GrasperError> {
        let (activation_force, tip_force) = match springs_per_finger {
            1 => (7.0, Some(0.16)),
            3 => (24.0, Some(0.55)),
            5 => (54.0, None),
            n => return Err(GrasperError::Unsupported(format!("{n} springs per finger (use 1, 3 or 5)"))),
        };
        let (capacity_table, max_grasp_diameter_mm) = match finger_count {
            3 => (table(&[(55.0, 176.43), (80.0, 85.4), (115.0, 12.06)]), 115.0),
            2 => (table(&[(55.0, 66.58), (80.0, 4.44), (115.0, 0.0)]), 70.0),
            n => return Err(GrasperError::Unsupported(format!("{n} fingers (use 2 or 3)"))),
        };
        Ok(GrasperSpec {
            finger_count,
            springs_per_finger,
            activation_force,
            activation_time: ACTIVATION_TIME,
            recoil_time: RECOIL_TIME,
            recoil_pressure_kpa: RECOIL_PRESSURE_KPA,
            tip_force,
            capacity_table,
            max_grasp_diameter_mm,
        })
    }

    pub fn validate(&self) -> Result<(), GrasperError> {
        if self.capacity_table.is_empty() {
            return Err(GrasperError::Invalid("empty capacity table".into()));
        }
        for w in self.capacity_table.windows(2) {
            if !(w[1].diameter_mm > w[0].diameter_mm) {
                return Err(GrasperError::Invalid("capacity diameters must be strictly increasing".into()));
            }
            if !(w[1].force < w[0].force) {
                return Err(GrasperError::Invalid("capacity must be strictly decreasing in diameter".into()));
            }
        }
        if self.capacity_table.iter().any(|p| p.force < 0.0) {
            return Err(GrasperError::Invalid("negative capacity".into()));
        }
        let positive = [self.activation_force, self.activation_time, self.recoil_time, self.max_grasp_diameter_mm];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(GrasperError::Invalid("activation force, timings and max diameter must be positive".into()));
        }
        Ok(())
    }

    /// Holding force for a cylinder of `diameter_mm`: linear between measured
    /// diameters, constant below the smallest, zero past the largest.
    pub fn grasp_capacity(&self, diameter_mm: f64) -> f64 {
        let t = &self.capacity_table;
        let (first, last) = (t[0], t[t.len() - 1]);
        if diameter_mm <= first.diameter_mm {
            return first.force;
        }
        if diameter_mm > last.diameter_mm {
            return 0.0;
        }
        for w in t.windows(2) {
            if diameter_mm == w[1].diameter_mm {
                return w[1].force;
            }
            if diameter_mm < w[1].diameter_mm {
                let s = (diameter_mm - w[0].diameter_mm) / (w[1].diameter_mm - w[0].diameter_mm);
                return w[0].force + s * (w[1].force - w[0].force);
            }
        }
        last.force
    }

    /// Whether the fingers can close around an object of this size.
    pub fn can_envelop(&self, diameter_mm: f64) -> bool {
        diameter_mm > 0.0 && diameter_mm <= self.max_grasp_diameter_mm
    }

    pub fn check_activation(&self, contact_force: f64) -> bool {
        contact_force >= self.activation_force
    }

    pub fn thresholds(&self, vehicle_mass: f64, gravity: f64) -> ActivationThresholds {
        ActivationThresholds::new(self.activation_force, vehicle_mass, gravity)
    }
}

/// Approach-speed thresholds implied by the activation force delivered over
/// [`IMPACT_DURATION`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationThresholds {
    /// `F Δt / m` with the vehicle mass.
    pub impulse_velocity: f64,
    /// `F Δt` per kilogram, the nominal threshold speed.
    pub unit_mass_velocity: f64,
    /// Free-fall height reaching `impulse_velocity`.
    pub impulse_height: f64,
    /// Free-fall height reaching `unit_mass_velocity`.
    pub unit_mass_height: f64,
}

impl ActivationThresholds {
    pub fn new(activation_force: f64, vehicle_mass: f64, gravity: f64) -> Self {
        let impulse_velocity = activation_force * IMPACT_DURATION / vehicle_mass;
        let unit_mass_velocity = activation_force * IMPACT_DURATION;
        ActivationThresholds {
            impulse_velocity,
            unit_mass_velocity,
            impulse_height: impulse_velocity.powi(2) / (2.0 * gravity),
            unit_mass_height: unit_mass_velocity.powi(2) / (2.0 * gravity),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrasperMode {
    Straight,
    Activating,
    Curled,
    Recoiling,
}

impl GrasperMode {
    pub fn label(&self) -> &'static str {
        match self {
            GrasperMode::Straight => "straight",
            GrasperMode::Activating => "activating",
            GrasperMode::Curled => "curled",
            GrasperMode::Recoiling => "recoiling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrasperState {
    pub mode: GrasperMode,
    /// Time spent in the current mode (s).
    pub mode_timer: f64,
    pub engaged_object: Option<String>,
}

impl Default for GrasperState {
    fn default() -> Self {
        GrasperState { mode: GrasperMode::Straight, mode_timer: 0.0, engaged_object: None }
    }
}

impl GrasperState {
    fn enter(&mut self, mode: GrasperMode) {
        self.mode = mode;
        self.mode_timer = 0.0;
    }

    /// Starts the snap-through if the contact force reaches the threshold.
    /// Returns whether activation began.
    pub fn apply_contact(&mut self, contact_force: f64, spec: &GrasperSpec) -> bool {
        if self.mode == GrasperMode::Straight && spec.check_activation(contact_force) {
            self.enter(GrasperMode::Activating);
            return true;
        }
        false
    }

    /// Advances timers. Activation completes on its own; the grasp then holds
    /// with no further input.
    pub fn advance(&mut self, dt: f64, spec: &GrasperSpec) {
        self.mode_timer += dt;
        if self.mode == GrasperMode::Activating && self.mode_timer >= spec.activation_time - 1e-12 {
            self.enter(GrasperMode::Curled);
        }
    }

    /// Pneumatic recoil with supply pressure `supply_kpa`. Progress only
    /// accumulates while the pressure is at or above the minimum.
    pub fn recoil(&mut self, supply_kpa: f64, dt: f64, spec: &GrasperSpec) {
        let pressurized = supply_kpa >= spec.recoil_pressure_kpa;
        match self.mode {
            GrasperMode::Curled if pressurized => {
                self.enter(GrasperMode::Recoiling);
                self.step_recoil(dt, spec);
            }
            GrasperMode::Recoiling if pressurized => self.step_recoil(dt, spec),
            _ => {}
        }
    }

    fn step_recoil(&mut self, dt: f64, spec: &GrasperSpec) {
        self.mode_timer += dt;
        if self.mode_timer >= spec.recoil_time - 1e-9 {
            self.enter(GrasperMode::Straight);
            self.engaged_object = None;
        }
    }

    pub fn is_curled(&self) -> bool {
        self.mode == GrasperMode::Curled
    }
}

/// First sample where the pull exceeds `capacity` or drops faster than
/// [`SLIP_SLOPE`] per `spacing` unit.
pub fn slip_check(history: &[f64], spacing: f64, capacity: f64) -> Result<Option<usize>, GrasperError> {
    if history.len() < 2 {
        return Err(GrasperError::ShortHistory(history.len()));
    }
    if !(spacing > 0.0) {
        return Err(GrasperError::Spacing(spacing));
    }
    for (i, f) in history.iter().enumerate() {
        if *f > capacity {
            return Ok(Some(i));
        }
        if i > 0 && (f - history[i - 1]) / spacing < SLIP_SLOPE {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three() -> GrasperSpec {
        GrasperSpec::new(3, 3).unwrap()
    }

    #[test]
    fn capacity_at_measured_diameters() {
        let s3 = three();
        assert_eq!(s3.grasp_capacity(55.0), 176.43);
        assert_eq!(s3.grasp_capacity(80.0), 85.4);
        assert_eq!(s3.grasp_capacity(115.0), 12.06);
        let s2 = GrasperSpec::new(2, 3).unwrap();
        assert_eq!(s2.grasp_capacity(55.0), 66.58);
        assert_eq!(s2.grasp_capacity(80.0), 4.44);
        assert_eq!(s2.grasp_capacity(115.0), 0.0);
    }

    #[test]
    fn capacity_interpolation_and_extrapolation() {
        let s = three();
        assert_eq!(s.grasp_capacity(30.0), 176.43);
        assert!((s.grasp_capacity(67.5) - 0.5 * (176.43 + 85.4)).abs() < 1e-12);
        assert_eq!(s.grasp_capacity(116.0), 0.0);
        assert!(!GrasperSpec::new(2, 3).unwrap().can_envelop(115.0));
        assert!(s.can_envelop(55.0));
    }

    #[test]
    fn activation_thresholds() {
        assert!(!three().check_activation(23.9));
        assert!(three().check_activation(24.0));
        assert_eq!(GrasperSpec::new(3, 1).unwrap().activation_force, 7.0);
        assert_eq!(GrasperSpec::new(3, 5).unwrap().activation_force, 54.0);
        assert!(GrasperSpec::new(3, 2).is_err());
        assert!(GrasperSpec::new(4, 3).is_err());
    }

    #[test]
    fn approach_speed_mappings() {
        // Impulse–momentum with the vehicle mass.
        let t = three().thresholds(1.14, 9.81);
        assert!((t.impulse_velocity - 24.0 * 0.1 / 1.14).abs() < 1e-12);
        assert!((t.impulse_velocity - 2.1).abs() < 0.01);
        assert!((t.impulse_height - 0.226).abs() < 0.001);
        // Per-kilogram mapping and its 30 cm drop.
        assert!((t.unit_mass_velocity - 2.4).abs() < 1e-12);
        assert!((t.unit_mass_height - 0.30).abs() < 0.01);
        let speeds: Vec<f64> = [1, 3, 5]
            .iter()
            .map(|&n| GrasperSpec::new(3, n).unwrap().thresholds(1.14, 9.81).unit_mass_velocity)
            .collect();
        for (v, e) in speeds.iter().zip([0.7, 2.4, 5.4]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_then_curl() {
        let s = three();
        let mut g = GrasperState::default();
        assert!(!g.apply_contact(10.0, &s));
        assert!(g.apply_contact(30.0, &s));
        assert_eq!(g.mode, GrasperMode::Activating);
        g.advance(0.003, &s);
        assert_eq!(g.mode, GrasperMode::Activating);
        g.advance(0.001, &s);
        assert_eq!(g.mode, GrasperMode::Curled);
        // Holding needs nothing: time alone changes nothing.
        g.advance(100.0, &s);
        assert_eq!(g.mode, GrasperMode::Curled);
    }

    fn curled() -> GrasperState {
        GrasperState { mode: GrasperMode::Curled, mode_timer: 0.0, engaged_object: Some("perch".into()) }
    }

    #[test]
    fn recoil_at_minimum_pressure() {
        let s = three();
        let mut g = curled();
        for _ in 0..3000 {
            g.recoil(83.0, 1e-3, &s);
        }
        assert_eq!(g.mode, GrasperMode::Straight);
        assert_eq!(g.engaged_object, None);
    }

    #[test]
    fn no_recoil_below_minimum() {
        let s = three();
        let mut g = curled();
        for _ in 0..10_000 {
            g.recoil(80.0, 1e-3, &s);
        }
        assert_eq!(g.mode, GrasperMode::Curled);
        let mut g = curled();
        g.recoil(100.0, 0.0, &s);
        assert_eq!(g.mode, GrasperMode::Recoiling);
        assert_eq!(g.mode_timer, 0.0);
    }

    #[test]
    fn slip_examples() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(slip_check(&ramp, 1.0, 176.43).unwrap(), None);
        let ramp: Vec<f64> = (0..400).map(|i| i as f64 * 0.5).collect();
        let idx = slip_check(&ramp, 1.0, three().grasp_capacity(55.0)).unwrap().unwrap();
        assert!(ramp[idx] > 176.43 && ramp[idx - 1] <= 176.43);
        let mut trace: Vec<f64> = (0..50).map(|i| i as f64).collect();
        trace.push(43.0);
        trace.extend((0..10).map(|i| 43.0 + i as f64));
        assert_eq!(slip_check(&trace, 1.0, 176.43).unwrap(), Some(50));
        assert_eq!(slip_check(&[1.0], 1.0, 10.0), Err(GrasperError::ShortHistory(1)));
    }

    #[test]
    fn shipped_specs_validate() {
        for f in [2, 3] {
            for n in [1, 3, 5] {
                GrasperSpec::new(f, n).unwrap().validate().unwrap();
            }
        }
        let mut s = three();
        s.capacity_table[1].force = 500.0;
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn activation_is_monotone(a in 0.0..100.0f64, b in 0.0..100.0f64) {
            let s = three();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(!s.check_activation(lo) || s.check_activation(hi));
        }

        #[test]
        fn capacity_is_non_increasing(a in 1.0..150.0f64, b in 1.0..150.0f64) {
            let s = three();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(s.grasp_capacity(hi) <= s.grasp_capacity(lo));
        }

        #[test]
        fn curled_grasp_is_passive(steps in 1usize..500, dt in 1e-4..1e-1f64) {
            let s = three();
            let mut g = curled();
            for _ in 0..steps {
                g.advance(dt, &s);
                g.recoil(0.0, dt, &s);
            }
            prop_assert_eq!(g.mode, GrasperMode::Curled);
            prop_assert!(g.engaged_object.is_some());
        }
    }
}
