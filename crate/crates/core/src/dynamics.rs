//! Rigid-body plant: translational and rotational dynamics on SE(3) driven by
//! collective thrust, body moments and external disturbances.

use serde::{Deserialize, Serialize};

use crate::math::{self, e3, hat, IntegrationError, Mat3, Rot3, Vec3};

pub const GRAVITY: f64 = 9.81;
/// Speed above which a run is declared divergent (m/s).
pub const DIVERGENCE_SPEED: f64 = 100.0;
pub const FREE_FLIGHT_DT: f64 = 1e-3;
pub const CONTACT_DT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    /// Inertial position, z down (m).
    pub position: Vec3,
    /// Inertial velocity (m/s).
    pub velocity: Vec3,
    /// Body → inertial.
    pub attitude: Rot3,
    /// Body angular rate (rad/s).
    pub angular_rate: Vec3,
}

impl Default for RigidBodyState {
    fn default() -> Self {
        RigidBodyState::at_rest(Vec3::zeros())
    }
}

impl RigidBodyState {
    pub fn at_rest(position: Vec3) -> Self {
        RigidBodyState {
            position,
            velocity: Vec3::zeros(),
            attitude: Rot3::identity(),
            angular_rate: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.angular_rate.iter()).all(|v| v.is_finite())
            && self.attitude.matrix().iter().all(|v| v.is_finite())
    }

    /// Altitude above the inertial origin (positive up).
    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    fn to_array(self) -> [f64; 18] {
        let mut a = [0.0; 18];
        a[0..3].copy_from_slice(self.position.as_slice());
        a[3..6].copy_from_slice(self.velocity.as_slice());
        a[6..15].copy_from_slice(self.attitude.matrix().as_slice());
        a[15..18].copy_from_slice(self.angular_rate.as_slice());
        a
    }

    fn from_array(a: &[f64; 18]) -> Self {
        RigidBodyState {
            position: Vec3::from_column_slice(&a[0..3]),
            velocity: Vec3::from_column_slice(&a[3..6]),
            attitude: Rot3::from_matrix_unchecked(Mat3::from_column_slice(&a[6..15])),
            angular_rate: Vec3::from_column_slice(&a[15..18]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Mat3,
    pub angular_rate: Vec3,
}

impl StateDerivative {
    fn to_array(self) -> [f64; 18] {
        RigidBodyState {
            position: self.position,
            velocity: self.velocity,
            attitude: Rot3::from_matrix_unchecked(self.attitude),
            angular_rate: self.angular_rate,
        }
        .to_array()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("mass must be positive, got {0}")]
    Mass(f64),
    #[error("inertia must be symmetric positive-definite")]
    Inertia,
    #[error("gravity must be finite and non-negative, got {0}")]
    Gravity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertialParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub gravity: f64,
}

pub const DEFAULT_MASS: f64 = 1.14;
pub const DEFAULT_ARM_OFFSET: f64 = 0.18;

impl Default for InertialParams {
    fn default() -> Self {
        InertialParams::point_mass_arms(DEFAULT_MASS, DEFAULT_ARM_OFFSET)
    }
}

impl InertialParams {
    /// Mass split evenly over four arm tips at distance `d`.
    pub fn point_mass_arms(mass: f64, d: f64) -> Self {
        let jxy = mass * d * d / 2.0;
        InertialParams {
            mass,
            inertia: Mat3::from_diagonal(&Vec3::new(jxy, jxy, 2.0 * jxy)),
            gravity: GRAVITY,
        }
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(ParamsError::Mass(self.mass));
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return Err(ParamsError::Gravity(self.gravity));
        }
        let j = self.inertia;
        if (j - j.transpose()).norm() > 1e-12 * j.norm() || j.cholesky().is_none() {
            return Err(ParamsError::Inertia);
        }
        Ok(())
    }
}

/// Unmodelled force (inertial frame) and torque (body frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Disturbance {
    pub const NONE: Disturbance = Disturbance {
        force: Vec3::new(0.0, 0.0, 0.0),
        torque: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn force(force: Vec3) -> Self {
        Disturbance { force, torque: Vec3::zeros() }
    }
}

impl std::ops::Add for Disturbance {
    type Output = Disturbance;
    fn add(self, o: Disturbance) -> Disturbance {
        Disturbance { force: self.force + o.force, torque: self.torque + o.torque }
    }
}

/// Time derivative of the rigid-body state for collective thrust `thrust`
/// (along body −z) and body moment `moment`.
pub fn derivative(
    state: &RigidBodyState,
    thrust: f64,
    moment: &Vec3,
    params: &InertialParams,
    dist: &Disturbance,
) -> StateDerivative {
    let r = state.attitude.matrix();
    let m = params.mass;
    let omega = state.angular_rate;
    let accel = params.gravity * e3() + (-thrust * (r * e3()) + dist.force) / m;
    let j = params.inertia;
    let jw = j * omega;
    let rhs = moment - omega.cross(&jw) + dist.torque;
    let omega_dot = j.lu().solve(&rhs).unwrap_or_else(|| Vec3::repeat(f64::NAN));
    StateDerivative {
        position: state.velocity,
        velocity: accel,
        attitude: r * hat(&omega),
        angular_rate: omega_dot,
    }
}

/// One RK4 step of `derivative_fn`, which may depend on the intermediate
/// state (contact forces do). The attitude is projected back onto SO(3).
pub fn integrate_step<F>(state: &RigidBodyState, t: f64, dt: f64, mut derivative_fn: F) -> Result<RigidBodyState, IntegrationError>
where
    F: FnMut(f64, &RigidBodyState) -> StateDerivative,
{
    let y0 = state.to_array();
    let y1 = math::rk4_step(t, &y0, dt, |tt, y| derivative_fn(tt, &RigidBodyState::from_array(y)).to_array())?;
    let mut next = RigidBodyState::from_array(&y1);
    next.attitude = Rot3::from_matrix(*next.attitude.matrix());
    Ok(next)
}

/// Total mechanical energy with potential measured from `z = 0` (z down).
pub fn mechanical_energy(state: &RigidBodyState, params: &InertialParams) -> f64 {
    let w = state.angular_rate;
    0.5 * params.mass * state.velocity.norm_squared() + 0.5 * w.dot(&(params.inertia * w))
        - params.mass * params.gravity * state.position.z
}

/// Angular momentum expressed in the inertial frame.
pub fn angular_momentum(state: &RigidBodyState, params: &InertialParams) -> Vec3 {
    state.attitude.apply(&(params.inertia * state.angular_rate))
}

/// What a controller hands the plant for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuation {
    pub thrust: f64,
    pub moment: Vec3,
    /// Commanded per-motor thrusts, for logging.
    pub motor_thrusts: [f64; 4],
    /// Extra force/torque produced by the actuators themselves (e.g. drift).
    pub disturbance: Disturbance,
}

pub trait FlightController {
    fn control(&mut self, t: f64, state: &RigidBodyState, dt: f64) -> Actuation;
}

impl<F: FnMut(f64, &RigidBodyState, f64) -> Actuation> FlightController for F {
    fn control(&mut self, t: f64, state: &RigidBodyState, dt: f64) -> Actuation {
        self(t, state, dt)
    }
}

/// Environment forces as a function of state.
pub trait ContactField {
    fn wrench(&self, state: &RigidBodyState) -> Disturbance;
    /// Magnitude of the normal contact force, for logging.
    fn normal_force(&self, state: &RigidBodyState) -> f64 {
        self.wrench(state).force.norm()
    }
    /// Whether the state is close enough to contact to warrant the fine step.
    fn near_contact(&self, _state: &RigidBodyState) -> bool {
        false
    }
}

/// No environment.
pub struct FreeSpace;

impl ContactField for FreeSpace {
    fn wrench(&self, _state: &RigidBodyState) -> Disturbance {
        Disturbance::NONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub duration: f64,
    pub dt: f64,
    /// Step used while `near_contact` holds.
    pub contact_dt: f64,
}

impl SimOptions {
    pub fn new(duration: f64) -> Self {
        SimOptions { duration, dt: FREE_FLIGHT_DT, contact_dt: CONTACT_DT }
    }

    pub fn fixed(duration: f64, dt: f64) -> Self {
        SimOptions { duration, dt, contact_dt: dt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: RigidBodyState,
    pub motor_thrusts: [f64; 4],
    pub contact_force: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("diverged at t = {t:.4} s (speed {speed:.1} m/s)")]
    Diverged { t: f64, speed: f64 },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// Fixed-step closed-loop simulation. Control is held over each step; the
/// contact field is re-evaluated at every RK4 stage.
pub fn simulate<C: FlightController + ?Sized, E: ContactField + ?Sized>(
    initial: RigidBodyState,
    params: &InertialParams,
    controller: &mut C,
    contact: &E,
    opts: SimOptions,
) -> Result<Trajectory, SimError> {
    if !(opts.duration > 0.0) {
        return Err(SimError::Duration(opts.duration));
    }
    let mut state = initial;
    let mut t = 0.0;
    let mut samples = Vec::with_capacity((opts.duration / opts.dt) as usize + 2);
    let mut last_motor = [0.0; 4];
    samples.push(Sample { t, state, motor_thrusts: last_motor, contact_force: contact.normal_force(&state) });
    while t < opts.duration - 1e-12 {
        let dt = if contact.near_contact(&state) { opts.contact_dt } else { opts.dt };
        let dt = dt.min(opts.duration - t);
        let act = controller.control(t, &state, dt);
        last_motor = act.motor_thrusts;
        state = integrate_step(&state, t, dt, |_, s| {
            derivative(s, act.thrust, &act.moment, params, &(act.disturbance + contact.wrench(s)))
        })?;
        t += dt;
        let speed = state.velocity.norm();
        if !(speed <= DIVERGENCE_SPEED) {
            return Err(SimError::Diverged { t, speed });
        }
        samples.push(Sample { t, state, motor_thrusts: last_motor, contact_force: contact.normal_force(&state) });
    }
    Ok(Trajectory { samples })
}

/// Controller that commands nothing.
pub fn passive(_t: f64, _s: &RigidBodyState, _dt: f64) -> Actuation {
    Actuation::default()
}
