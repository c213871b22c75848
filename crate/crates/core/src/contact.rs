//! Compliant normal-contact laws and the lumped one-dimensional impact
//! experiments (vertical drop, horizontal wall strike) used to characterize
//! them.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    passive, simulate, Actuation, ContactField, Disturbance, InertialParams, RigidBodyState, SimError, SimOptions, Trajectory,
};
use crate::math::{rk4_step, Vec3};

/// Stiffness multiplier of the stop that engages past `max_compression`.
pub const BOTTOM_OUT_RATIO: f64 = 50.0;
/// Step bounds inside the lumped impact models (s).
pub const IMPACT_DT_MAX: f64 = 1e-4;
pub const IMPACT_DT_MIN: f64 = 1e-6;
const FREE_FALL_DT: f64 = 1e-4;
/// Longest contact the impact models will follow (s).
const MAX_CONTACT_DURATION: f64 = 1.0;
const MAX_CONTACT_STEPS: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DampingLaw {
    /// `F = k δⁿ (1 + 3c/(2k) δ̇)`.
    HuntCrossley,
    /// `F = k δⁿ + c δ̇`.
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContactError {
    #[error("invalid contact model: {0}")]
    Invalid(String),
    #[error("impact did not end within {0} s")]
    Unterminated(f64),
    #[error("drop height must be positive, got {0} m")]
    Height(f64),
    #[error("mass must be positive, got {0} kg")]
    Mass(f64),
    #[error(transparent)]
    Integration(#[from] crate::math::IntegrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// N/mⁿ.
    pub stiffness: f64,
    /// N·s/m (linear) or s/m scale (Hunt–Crossley).
    pub damping: f64,
    pub exponent: f64,
    /// Compression at which the stop engages (m).
    pub max_compression: f64,
    #[serde(default)]
    pub law: DampingLaw,
}

impl ContactModel {
    pub fn linear(stiffness: f64, damping: f64, exponent: f64, max_compression: f64) -> Self {
        ContactModel { stiffness, damping, exponent, max_compression, law: DampingLaw::Linear }
    }

    pub fn hunt_crossley(stiffness: f64, damping: f64, exponent: f64, max_compression: f64) -> Self {
        ContactModel { stiffness, damping, exponent, max_compression, law: DampingLaw::HuntCrossley }
    }

    pub fn validate(&self) -> Result<(), ContactError> {
        let ok = self.stiffness > 0.0
            && self.stiffness.is_finite()
            && self.damping >= 0.0
            && self.damping.is_finite()
            && self.exponent >= 1.0
            && self.max_compression > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ContactError::Invalid(format!(
                "need k > 0, c >= 0, n >= 1, max_compression > 0; got {self:?}"
            )))
        }
    }

    /// Elastic part of the force, including the stop.
    pub fn spring_force(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        let mut f = self.stiffness * delta.powf(self.exponent);
        if delta > self.max_compression {
            f += BOTTOM_OUT_RATIO * self.stiffness * (delta - self.max_compression).powf(self.exponent);
        }
        f
    }

    /// Strain energy stored at compression `delta`.
    pub fn spring_energy(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        let n1 = self.exponent + 1.0;
        let mut e = self.stiffness * delta.powf(n1) / n1;
        if delta > self.max_compression {
            e += BOTTOM_OUT_RATIO * self.stiffness * (delta - self.max_compression).powf(n1) / n1;
        }
        e
    }

    fn damping_force(&self, delta: f64, rate: f64) -> f64 {
        match self.law {
            DampingLaw::Linear => self.damping * rate,
            DampingLaw::HuntCrossley => 1.5 * self.damping * delta.powf(self.exponent) * rate,
        }
    }

    /// Normal force for penetration `delta` growing at `rate`. Never pulls.
    pub fn force(&self, delta: f64, rate: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        (self.spring_force(delta) + self.damping_force(delta, rate)).max(0.0)
    }

    /// Unclamped force, continued linearly below zero penetration; only used
    /// to locate where the delivered force crosses zero.
    fn signed_force(&self, delta: f64, rate: f64) -> f64 {
        if delta <= 0.0 {
            return self.stiffness * delta + self.damping_force(0.0, rate);
        }
        self.spring_force(delta) + self.damping_force(delta, rate)
    }

    /// Static compression under load `weight` (ignores the stop).
    pub fn static_compression(&self, weight: f64) -> f64 {
        (weight / self.stiffness).powf(1.0 / self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactMetrics {
    /// Speed at first touch (m/s).
    pub impact_speed: f64,
    /// Duration of positive contact force (s).
    pub impact_time: f64,
    pub peak_force: f64,
    /// `peak_force / mass` (m/s²).
    pub peak_accel: f64,
    /// Separation speed (m/s).
    pub rebound_speed: f64,
    pub max_compression: f64,
    /// Mechanical energy removed from the body over the contact (J).
    pub energy_absorbed: f64,
    /// Energy dissipated by the damping term (J).
    pub damping_work: f64,
    /// Strain energy left in the contact at separation (J).
    pub residual_spring_energy: f64,
}

impl ImpactMetrics {
    pub fn restitution(&self) -> f64 {
        if self.impact_speed > 0.0 {
            self.rebound_speed / self.impact_speed
        } else {
            0.0
        }
    }
}

/// Follows one contact from first touch at speed `speed` until the force
/// returns to zero. `gravity` acts along the approach direction.
fn run_contact(model: &ContactModel, mass: f64, speed: f64, gravity: f64) -> Result<ImpactMetrics, ContactError> {
    model.validate()?;
    if !(mass > 0.0) {
        return Err(ContactError::Mass(mass));
    }
    if speed <= 0.0 {
        return Ok(ImpactMetrics {
            impact_speed: 0.0,
            impact_time: 0.0,
            peak_force: 0.0,
            peak_accel: 0.0,
            rebound_speed: 0.0,
            max_compression: 0.0,
            energy_absorbed: 0.0,
            damping_work: 0.0,
            residual_spring_energy: 0.0,
        });
    }
    // State: compression, compression rate, damping work.
    let rhs = |_: f64, y: &[f64; 3]| {
        let f = model.force(y[0], y[1]);
        let spring = model.spring_force(y[0]);
        // Dissipation is whatever the delivered force does beyond the spring.
        let p_damp = if y[0] > 0.0 { (f - spring) * y[1] } else { 0.0 };
        [y[1], gravity - f / mass, p_damp]
    };
    let dt = impact_step(model, mass, speed);
    let mut y = [0.0, speed, 0.0];
    let mut t = 0.0;
    let mut peak: f64 = 0.0;
    let mut deepest: f64 = 0.0;
    let mut prev_f = model.signed_force(0.0, speed);
    let max_steps = ((MAX_CONTACT_DURATION / dt) as usize).min(MAX_CONTACT_STEPS);
    for _ in 0..max_steps {
        let next = rk4_step(t, &y, dt, rhs)?;
        let f = model.signed_force(next[0], next[1]);
        t += dt;
        if (f <= 0.0 || next[0] <= 0.0) && t > dt {
            // Linear interpolation of the zero crossing.
            let s = if prev_f > f { prev_f / (prev_f - f) } else { 1.0 };
            let end = [
                y[0] + s * (next[0] - y[0]),
                y[1] + s * (next[1] - y[1]),
                y[2] + s * (next[2] - y[2]),
            ];
            let impact_time = t - dt + s * dt;
            let rebound = (-end[1]).max(0.0);
            let residual = model.spring_energy(end[0]);
            let ke0 = 0.5 * mass * speed * speed;
            let ke1 = 0.5 * mass * end[1] * end[1];
            return Ok(ImpactMetrics {
                impact_speed: speed,
                impact_time,
                peak_force: peak,
                peak_accel: peak / mass,
                rebound_speed: rebound,
                max_compression: deepest,
                energy_absorbed: ke0 - ke1 + mass * gravity * end[0],
                damping_work: end[2],
                residual_spring_energy: residual,
            });
        }
        peak = peak.max(f);
        deepest = deepest.max(next[0]);
        prev_f = f;
        y = next;
    }
    Err(ContactError::Unterminated(MAX_CONTACT_DURATION))
}

/// Step resolving the contact's own time scales: the oscillation period at
/// the compression where strain energy matches the approach energy, and the
/// damping time.
pub fn impact_step(model: &ContactModel, mass: f64, speed: f64) -> f64 {
    let n = model.exponent;
    let energy = 0.5 * mass * speed * speed;
    let delta = (energy * (n + 1.0) / model.stiffness).powf(1.0 / (n + 1.0));
    let k_eff = model.stiffness * n * delta.powf(n - 1.0);
    let mut tau = (mass / k_eff).sqrt();
    tau /= 400.0;
    if model.law == DampingLaw::Linear && model.damping > 0.0 {
        // RK4 is stable for dt·c/m below ~2.8.
        tau = tau.min(mass / model.damping / 20.0);
    }
    tau.clamp(IMPACT_DT_MIN, IMPACT_DT_MAX)
}

/// Speed after falling `height` from rest, found by stepping the free fall
/// and solving the final partial step exactly.
pub fn fall_speed(height: f64, gravity: f64) -> f64 {
    let dt = FREE_FALL_DT;
    let (mut z, mut v) = (0.0f64, 0.0f64);
    loop {
        let z_next = z + v * dt + 0.5 * gravity * dt * dt;
        if z_next >= height {
            // z + v τ + g τ²/2 = height.
            let disc = (v * v + 2.0 * gravity * (height - z)).max(0.0);
            let tau = if gravity > 0.0 { (disc.sqrt() - v) / gravity } else { (height - z) / v };
            return v + gravity * tau;
        }
        z = z_next;
        v += gravity * dt;
    }
}

/// Lumped vertical drop onto the contact from `height`.
pub fn drop_test(model: &ContactModel, height: f64, mass: f64, gravity: f64) -> Result<ImpactMetrics, ContactError> {
    if !(height > 0.0) {
        return Err(ContactError::Height(height));
    }
    run_contact(model, mass, fall_speed(height, gravity), gravity)
}

/// Horizontal strike at `speed` (no gravity along the approach).
pub fn wall_collision(model: &ContactModel, mass: f64, speed: f64) -> Result<ImpactMetrics, ContactError> {
    run_contact(model, mass, speed, 0.0)
}

/// Flat surface through `point` with outward normal `normal`, acting on the
/// body's reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneContact {
    pub model: ContactModel,
    pub point: Vec3,
    pub normal: Vec3,
    /// Gap below which the fine step is used (m).
    pub near: f64,
}

impl PlaneContact {
    /// Ground plane `z = 0` (z down).
    pub fn ground(model: ContactModel) -> Self {
        PlaneContact { model, point: Vec3::zeros(), normal: -Vec3::z(), near: 0.05 }
    }

    pub fn gap(&self, state: &RigidBodyState) -> f64 {
        (state.position - self.point).dot(&self.normal)
    }
}

impl ContactField for PlaneContact {
    fn wrench(&self, state: &RigidBodyState) -> Disturbance {
        let f = self.model.force(-self.gap(state), -state.velocity.dot(&self.normal));
        Disturbance::force(f * self.normal)
    }

    fn near_contact(&self, state: &RigidBodyState) -> bool {
        self.gap(state) < self.near
    }
}

/// Full rigid-body drop from rest at `height` onto the ground plane with the
/// motors off, followed for `tail` seconds after the fall.
pub fn drop_trajectory(model: &ContactModel, height: f64, params: &InertialParams, tail: f64) -> Result<Trajectory, SimError> {
    let field = PlaneContact::ground(*model);
    let v = fall_speed(height, params.gravity);
    let opts = SimOptions {
        duration: v / params.gravity + tail,
        dt: crate::dynamics::FREE_FLIGHT_DT,
        contact_dt: impact_step(model, params.mass, v),
    };
    simulate(RigidBodyState::at_rest(Vec3::new(0.0, 0.0, -height)), params, &mut passive, &field, opts)
}

/// Full rigid-body strike on a wall at `x = 0` at `speed`, thrust holding
/// the weight, followed for `duration` seconds.
pub fn wall_trajectory(model: &ContactModel, speed: f64, params: &InertialParams, duration: f64) -> Result<Trajectory, SimError> {
    let field = PlaneContact { model: *model, point: Vec3::zeros(), normal: -Vec3::x(), near: 0.05 };
    let mut start = RigidBodyState::at_rest(Vec3::new(-0.01, 0.0, -1.0));
    start.velocity = Vec3::new(speed, 0.0, 0.0);
    let weight = params.weight();
    let mut hold = |_: f64, _: &RigidBodyState, _: f64| Actuation { thrust: weight, motor_thrusts: [weight / 4.0; 4], ..Actuation::default() };
    let opts = SimOptions { duration, dt: crate::dynamics::FREE_FLIGHT_DT, contact_dt: impact_step(model, params.mass, speed) };
    simulate(start, params, &mut hold, &field, opts)
}
